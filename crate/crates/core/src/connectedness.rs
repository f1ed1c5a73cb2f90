//! Generalized forecast-error variance decomposition and the spillover
//! index family (TCI, TO, FROM, NET, NPDC, DOM).
//!
//! Convention: `shares[(i, j)]` is the fraction of variable i's H-step
//! forecast-error variance due to shocks in j. Rows sum to one.
//!
//! The VMA form is `Y_t = Σ_h A_h ε_{t-h}`; the impulse response of a
//! one-standard-deviation shock to j is `Σ_jj^{-1/2} A_h Σ e_j`.

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::rows;
use crate::qvar::QuantileVarFit;
use crate::tvpvar::{TvpVarPath, TvpVarState};

pub const DEFAULT_HORIZON: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConnectednessError {
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("sigma[{0}][{0}] is not positive; shock undefined")]
    ZeroShockVariance(usize),
    #[error("shape mismatch: beta {beta:?}, sigma {sigma:?}")]
    Shape { beta: (usize, usize), sigma: (usize, usize) },
    #[error("forecast-error variance of variable {0} is zero over the summed horizons")]
    ZeroRow(usize),
    #[error("non-finite coefficient or covariance")]
    NonFinite,
    #[error("{date}: {source}")]
    AtDate {
        date: NaiveDate,
        #[source]
        source: Box<ConnectednessError>,
    },
    #[error("empty path")]
    Empty,
}

pub type Result<T> = std::result::Result<T, ConnectednessError>;

/// First VMA term included in the variance sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SumStart {
    /// h = 0..H-1: the impact period plus H-1 propagation steps.
    #[default]
    Impact,
    /// h = 1..H-1, the literal index range that skips impact.
    FirstLag,
}

impl SumStart {
    pub fn from_index(i: u8) -> Option<Self> {
        match i {
            0 => Some(SumStart::Impact),
            1 => Some(SumStart::FirstLag),
            _ => None,
        }
    }

    fn first(self) -> usize {
        match self {
            SumStart::Impact => 0,
            SumStart::FirstLag => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FevdOptions {
    pub horizon: usize,
    pub sum_from: SumStart,
}

impl Default for FevdOptions {
    fn default() -> Self {
        FevdOptions {
            horizon: DEFAULT_HORIZON,
            sum_from: SumStart::Impact,
        }
    }
}

impl FevdOptions {
    pub fn with_horizon(horizon: usize) -> Self {
        FevdOptions {
            horizon,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FevdMatrix {
    #[serde(with = "rows")]
    pub shares: DMatrix<f64>,
    pub horizon: usize,
    pub labels: Vec<String>,
}

impl FevdMatrix {
    pub fn n(&self) -> usize {
        self.shares.nrows()
    }

    pub fn with_labels(mut self, labels: &[String]) -> Self {
        self.labels = labels.to_vec();
        self
    }
}

/// VMA coefficients A_0..A_{H-1} of a VAR whose lag blocks sit side by side
/// in `beta` (N x N p): A_0 = I, A_h = Σ_l B_l A_{h-l}.
pub fn vma_coefficients(beta: &DMatrix<f64>, horizon: usize) -> Vec<DMatrix<f64>> {
    let n = beta.nrows();
    let lags = beta.ncols().checked_div(n).unwrap_or(0);
    let mut out: Vec<DMatrix<f64>> = Vec::with_capacity(horizon);
    for h in 0..horizon {
        if h == 0 {
            out.push(DMatrix::identity(n, n));
            continue;
        }
        let mut a = DMatrix::zeros(n, n);
        for l in 1..=lags.min(h) {
            a += beta.columns((l - 1) * n, n) * &out[h - l];
        }
        out.push(a);
    }
    out
}

/// Row-normalized generalized FEVD.
pub fn gfevd(beta: &DMatrix<f64>, sigma: &DMatrix<f64>, opts: &FevdOptions) -> Result<FevdMatrix> {
    let n = sigma.nrows();
    if opts.horizon == 0 {
        return Err(ConnectednessError::ZeroHorizon);
    }
    if sigma.ncols() != n || beta.nrows() != n || n == 0 || !beta.ncols().is_multiple_of(n) {
        return Err(ConnectednessError::Shape {
            beta: beta.shape(),
            sigma: sigma.shape(),
        });
    }
    if beta.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
        return Err(ConnectednessError::NonFinite);
    }
    if let Some(j) = (0..n).find(|&j| !(sigma[(j, j)] > 0.0)) {
        return Err(ConnectednessError::ZeroShockVariance(j));
    }
    let vma = vma_coefficients(beta, opts.horizon);
    let mut theta = DMatrix::zeros(n, n);
    for a in &vma[opts.sum_from.first().min(vma.len())..] {
        let response = a * sigma;
        for i in 0..n {
            for j in 0..n {
                theta[(i, j)] += response[(i, j)] * response[(i, j)] / sigma[(j, j)];
            }
        }
    }
    for i in 0..n {
        let total: f64 = theta.row(i).sum();
        if !(total > 0.0) {
            return Err(ConnectednessError::ZeroRow(i));
        }
        for j in 0..n {
            theta[(i, j)] /= total;
        }
    }
    Ok(FevdMatrix {
        shares: theta,
        horizon: opts.horizon,
        labels: (0..n).map(|i| format!("y{}", i + 1)).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpilloverSummary {
    pub labels: Vec<String>,
    /// Total connectedness, percent.
    pub tci: f64,
    pub to: Vec<f64>,
    pub from: Vec<f64>,
    pub net: Vec<f64>,
    /// `npdc[(i, j)] = 100 (shares[j][i] - shares[i][j])`; positive means i
    /// transmits to j on net.
    #[serde(with = "rows")]
    pub npdc: DMatrix<f64>,
    pub dom: Vec<usize>,
}

pub fn summarize(fevd: &FevdMatrix) -> SpilloverSummary {
    let s = &fevd.shares;
    let n = s.nrows();
    let mut from = vec![0.0; n];
    let mut to = vec![0.0; n];
    let mut off = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                from[i] += s[(i, j)];
                to[j] += s[(i, j)];
                off += s[(i, j)];
            }
        }
    }
    let from: Vec<f64> = from.into_iter().map(|v| 100.0 * v).collect();
    let to: Vec<f64> = to.into_iter().map(|v| 100.0 * v).collect();
    let net = to.iter().zip(&from).map(|(t, f)| t - f).collect();
    let npdc = DMatrix::from_fn(n, n, |i, j| 100.0 * (s[(j, i)] - s[(i, j)]));
    let dom = (0..n).map(|i| (0..n).filter(|&j| j != i && npdc[(i, j)] > 0.0).count()).collect();
    SpilloverSummary {
        labels: fevd.labels.clone(),
        tci: 100.0 * off / n as f64,
        to,
        from,
        net,
        npdc,
        dom,
    }
}

/// A sequence of dated (beta, sigma) estimates.
pub trait CoefficientSource {
    fn labels(&self) -> &[String];
    fn points(&self) -> Vec<(NaiveDate, &DMatrix<f64>, &DMatrix<f64>)>;
}

impl CoefficientSource for TvpVarPath {
    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn points(&self) -> Vec<(NaiveDate, &DMatrix<f64>, &DMatrix<f64>)> {
        self.states.iter().map(|s: &TvpVarState| (s.date, &s.beta, &s.sigma)).collect()
    }
}

impl CoefficientSource for [QuantileVarFit] {
    fn labels(&self) -> &[String] {
        self.first().map_or(&[], |f| f.labels.as_slice())
    }

    fn points(&self) -> Vec<(NaiveDate, &DMatrix<f64>, &DMatrix<f64>)> {
        self.iter().map(|f| (f.end_date, &f.beta_tau, &f.sigma_tau)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicIndexSeries {
    pub labels: Vec<String>,
    pub horizon: usize,
    pub dates: Vec<NaiveDate>,
    pub tci: Vec<f64>,
    /// One row per date, one column per series.
    pub to: Vec<Vec<f64>>,
    pub from: Vec<Vec<f64>>,
    pub net: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatedFailure {
    pub date: NaiveDate,
    pub error: ConnectednessError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicRun {
    pub series: DynamicIndexSeries,
    pub fevds: Vec<FevdMatrix>,
    pub failures: Vec<DatedFailure>,
}

/// Evaluates the FEVD at every point; failing points are collected rather
/// than aborting the run.
pub fn dynamic_indices_partial<S: CoefficientSource + ?Sized>(source: &S, opts: &FevdOptions) -> DynamicRun {
    let labels = source.labels().to_vec();
    let results: Vec<(NaiveDate, Result<FevdMatrix>)> = source
        .points()
        .into_par_iter()
        .map(|(date, beta, sigma)| (date, gfevd(beta, sigma, opts).map(|f| f.with_labels(&labels))))
        .collect();
    let mut series = DynamicIndexSeries {
        labels: labels.clone(),
        horizon: opts.horizon,
        dates: Vec::new(),
        tci: Vec::new(),
        to: Vec::new(),
        from: Vec::new(),
        net: Vec::new(),
    };
    let mut fevds = Vec::new();
    let mut failures = Vec::new();
    for (date, r) in results {
        match r {
            Ok(f) => {
                let s = summarize(&f);
                series.dates.push(date);
                series.tci.push(s.tci);
                series.to.push(s.to);
                series.from.push(s.from);
                series.net.push(s.net);
                fevds.push(f);
            }
            Err(error) => failures.push(DatedFailure { date, error }),
        }
    }
    DynamicRun {
        series,
        fevds,
        failures,
    }
}

/// Dynamic index series; the first failing date aborts with that date.
pub fn dynamic_indices<S: CoefficientSource + ?Sized>(source: &S, opts: &FevdOptions) -> Result<DynamicIndexSeries> {
    if source.points().is_empty() {
        return Err(ConnectednessError::Empty);
    }
    let run = dynamic_indices_partial(source, opts);
    match run.failures.into_iter().next() {
        Some(f) => Err(ConnectednessError::AtDate {
            date: f.date,
            source: Box::new(f.error),
        }),
        None => Ok(run.series),
    }
}
