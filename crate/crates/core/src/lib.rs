//! Connectedness analysis for multivariate return panels: ingestion and
//! returns, diagnostics, TVP-VAR and quantile VAR estimation, generalized
//! FEVD spillover indices, spillover networks and synthetic data.

pub mod connectedness;
pub mod dataset;
pub mod diagnostics;
pub mod network;
pub mod pipeline;
pub mod qvar;
pub mod synthdgp;
pub mod tvpvar;

mod linalg;

pub use connectedness::{gfevd, summarize, FevdMatrix, FevdOptions, SpilloverSummary, SumStart};
pub use dataset::{PricePanel, ReturnPanel};
pub use diagnostics::{adf_test, describe, jarque_bera, select_var_order, SeriesDiagnostics};
pub use pipeline::{Error, RunConfig};
pub use network::{minimum_spanning_tree, SpanningTree, SpilloverGraph};
pub use qvar::{fit_quantile_var, quantile_regression, QuantileVarFit};
pub use synthdgp::{simulate, DgpSpec, Innovation};
pub use tvpvar::{fit_static_var, fit_tvp_var, PriorSpec, TvpVarConfig, TvpVarPath};

pub use linalg::{min_eigenvalue, repair_psd, spectral_radius};
