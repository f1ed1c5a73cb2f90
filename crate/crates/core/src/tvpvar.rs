//! Time-varying parameter VAR estimated with a forgetting-factor Kalman
//! filter.
//!
//! The coefficient vector follows a random walk. Rather than estimating the
//! state-innovation covariance, the predict step inflates the coefficient
//! covariance by `1 / kappa1`, which amounts to a state innovation of
//! `(1/kappa1 - 1) * P_{t-1}`. The innovation covariance is an exponentially
//! weighted average of one-step prediction-error outer products with decay
//! `kappa2`.
//!
//! The coefficient state is `vec` of the N x (N p) matrix taken row by row:
//! element `i * N p + k` is the coefficient of regressor `k` in equation `i`.

use std::path::Path;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ReturnPanel;
use crate::linalg::{invert_spd, least_squares, repair_psd, rows, symmetrize};

pub const DEFAULT_KAPPA1: f64 = 0.99;
pub const DEFAULT_KAPPA2: f64 = 0.96;
pub const DEFAULT_PRIOR_WINDOW: usize = 200;
pub const DEFAULT_BETA_COV_SCALE: f64 = 10.0;

#[derive(Debug, Error)]
pub enum EstimationError {
    #[error("panel contains non-finite values")]
    NonFinite,
    #[error("not enough observations: {len} rows, need more than {required}")]
    InsufficientData { len: usize, required: usize },
    #[error("regressor cross-product is singular ({rows} usable rows, {cols} regressors)")]
    Singular { rows: usize, cols: usize },
    #[error("prediction-error covariance is numerically singular at {date}")]
    VarianceCollapse { date: NaiveDate },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint i/o: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, EstimationError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSpec {
    /// OLS VAR on the first `window` observations; that window is consumed
    /// as burn-in and produces no states.
    TrainingSample { window: usize, beta_cov_scale: f64 },
    /// Explicit prior mean and innovation covariance. Filtering starts at the
    /// first observation with a full set of lags.
    Fixed {
        #[serde(with = "rows")]
        beta: DMatrix<f64>,
        #[serde(with = "rows")]
        sigma: DMatrix<f64>,
        beta_cov_scale: f64,
    },
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec::TrainingSample {
            window: DEFAULT_PRIOR_WINDOW,
            beta_cov_scale: DEFAULT_BETA_COV_SCALE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvpVarConfig {
    pub kappa1: f64,
    pub kappa2: f64,
    pub lags: usize,
    pub prior: PriorSpec,
}

impl Default for TvpVarConfig {
    fn default() -> Self {
        TvpVarConfig {
            kappa1: DEFAULT_KAPPA1,
            kappa2: DEFAULT_KAPPA2,
            lags: 1,
            prior: PriorSpec::default(),
        }
    }
}

impl TvpVarConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, k) in [("kappa1", self.kappa1), ("kappa2", self.kappa2)] {
            if !(k > 0.9 && k <= 1.0) {
                return Err(EstimationError::InvalidConfig(format!("{name} = {k} outside (0.9, 1]")));
            }
        }
        if self.lags == 0 {
            return Err(EstimationError::InvalidConfig("lags must be >= 1".into()));
        }
        let scale = match &self.prior {
            PriorSpec::TrainingSample { beta_cov_scale, .. } | PriorSpec::Fixed { beta_cov_scale, .. } => {
                *beta_cov_scale
            }
        };
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(EstimationError::InvalidConfig(format!("beta_cov_scale = {scale} must be positive")));
        }
        Ok(())
    }
}

/// Filtered state at one observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvpVarState {
    /// Row index into the return panel.
    pub t: usize,
    pub date: NaiveDate,
    /// N x (N p), lag blocks side by side.
    #[serde(with = "rows")]
    pub beta: DMatrix<f64>,
    /// (N^2 p) x (N^2 p).
    #[serde(with = "rows")]
    pub beta_cov: DMatrix<f64>,
    #[serde(with = "rows")]
    pub sigma: DMatrix<f64>,
    pub loglik_increment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvpVarPath {
    pub labels: Vec<String>,
    pub config: TvpVarConfig,
    pub states: Vec<TvpVarState>,
}

impl TvpVarPath {
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let body = serde_json::to_vec(self).map_err(|e| EstimationError::Checkpoint(e.to_string()))?;
        std::fs::write(path, body).map_err(|e| EstimationError::Checkpoint(e.to_string()))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let body = std::fs::read(path).map_err(|e| EstimationError::Checkpoint(e.to_string()))?;
        serde_json::from_slice(&body).map_err(|e| EstimationError::Checkpoint(e.to_string()))
    }

    pub fn terminal(&self) -> Option<&TvpVarState> {
        self.states.last()
    }
}

/// Lagged regressor row for observation `t`: [Y_{t-1}, ..., Y_{t-p}].
fn regressors(data: &DMatrix<f64>, t: usize, lags: usize) -> DVector<f64> {
    let n = data.ncols();
    DVector::from_fn(n * lags, |c, _| data[(t - 1 - c / n, c % n)])
}

/// Least-squares VAR(p) without intercept on rows `start..end` (targets from
/// `start + p`). Returns beta (N x Np), residual covariance, X'X inverse.
fn ols_var(
    data: &DMatrix<f64>,
    start: usize,
    end: usize,
    lags: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let n = data.ncols();
    let k = n * lags;
    let first = start + lags;
    if end <= first + k + 1 {
        return Err(EstimationError::Singular {
            rows: end.saturating_sub(first),
            cols: k,
        });
    }
    let rows_n = end - first;
    let x = DMatrix::from_fn(rows_n, k, |r, c| data[(first + r - 1 - c / n, c % n)]);
    let y = data.rows(first, rows_n).into_owned();
    let fit = least_squares(&x, &y).ok_or(EstimationError::Singular { rows: rows_n, cols: k })?;
    let dof = (rows_n - k) as f64;
    let sigma = repair_psd(&(fit.residuals.transpose() * &fit.residuals / dof));
    Ok((fit.coef.transpose(), sigma, fit.xtx_inv))
}

/// Constant-coefficient VAR(1) by least squares.
pub fn fit_static_var(panel: &ReturnPanel) -> Result<TvpVarState> {
    fit_static_var_lags(panel, 1)
}

/// Constant-coefficient VAR(p) by least squares on the full panel. `beta_cov`
/// is the usual `Sigma ⊗ (X'X)^{-1}` in the state ordering.
pub fn fit_static_var_lags(panel: &ReturnPanel, lags: usize) -> Result<TvpVarState> {
    if !panel.is_finite() {
        return Err(EstimationError::NonFinite);
    }
    let n = panel.n_series();
    if panel.len() <= n * lags + 2 {
        return Err(EstimationError::Singular {
            rows: panel.len().saturating_sub(lags),
            cols: n * lags,
        });
    }
    let (beta, sigma, xtx_inv) = ols_var(&panel.returns, 0, panel.len(), lags)?;
    let beta_cov = sigma.kronecker(&xtx_inv);
    let last = panel.len() - 1;
    Ok(TvpVarState {
        t: last,
        date: panel.dates[last],
        beta,
        beta_cov,
        sigma,
        loglik_increment: 0.0,
    })
}

/// Runs the forgetting-factor Kalman filter over the panel.
pub fn fit_tvp_var(panel: &ReturnPanel, config: &TvpVarConfig) -> Result<TvpVarPath> {
    config.validate()?;
    if !panel.is_finite() {
        return Err(EstimationError::NonFinite);
    }
    let data = &panel.returns;
    let n = panel.n_series();
    let p = config.lags;
    let k = n * p;
    let dim = n * k;

    let (beta0, sigma0, scale, start) = match &config.prior {
        PriorSpec::TrainingSample { window, beta_cov_scale } => {
            let required = *window.max(&(k + p + 2));
            if panel.len() <= required {
                return Err(EstimationError::InsufficientData {
                    len: panel.len(),
                    required,
                });
            }
            let (b, s, _) = ols_var(data, 0, *window, p)?;
            (b, s, *beta_cov_scale, *window)
        }
        PriorSpec::Fixed { beta, sigma, beta_cov_scale } => {
            if beta.shape() != (n, k) || sigma.shape() != (n, n) {
                return Err(EstimationError::InvalidConfig(format!(
                    "fixed prior shapes {:?}/{:?}, expected ({n}, {k})/({n}, {n})",
                    beta.shape(),
                    sigma.shape()
                )));
            }
            if panel.len() <= p {
                return Err(EstimationError::InsufficientData {
                    len: panel.len(),
                    required: p,
                });
            }
            (beta.clone(), sigma.clone(), *beta_cov_scale, p)
        }
    };

    let mut theta = DVector::from_fn(dim, |idx, _| beta0[(idx / k, idx % k)]);
    let mut cov = DMatrix::identity(dim, dim) * scale;
    let mut sigma = sigma0;
    let ln2pi = (2.0 * std::f64::consts::PI).ln();

    let mut states = Vec::with_capacity(panel.len() - start);
    for t in start..panel.len() {
        let x = regressors(data, t, p);
        let y = data.row(t).transpose();
        let beta = DMatrix::from_fn(n, k, |i, c| theta[i * k + c]);
        let err = &y - &beta * &x;

        sigma = &sigma * config.kappa2 + (&err * err.transpose()) * (1.0 - config.kappa2);
        sigma = repair_psd(&sigma);

        cov /= config.kappa1;

        // P Z' where Z = I_N ⊗ x'
        let mut pz = DMatrix::zeros(dim, n);
        for j in 0..n {
            let col = cov.columns(j * k, k) * &x;
            pz.set_column(j, &col);
        }
        let mut s = sigma.clone();
        for i in 0..n {
            for j in 0..n {
                s[(i, j)] += pz.view((i * k, j), (k, 1)).dot(&x);
            }
        }
        symmetrize(&mut s);
        let date = panel.dates[t];
        let s_inv = invert_spd(&s).ok_or(EstimationError::VarianceCollapse { date })?;
        let gain = &pz * &s_inv;
        theta += &gain * &err;
        cov -= &gain * pz.transpose();
        symmetrize(&mut cov);
        if cov.clone().cholesky().is_none() {
            cov = repair_psd(&cov);
        }

        let det = s.determinant();
        let quad = (err.transpose() * &s_inv * &err)[(0, 0)];
        let loglik_increment = -0.5 * (n as f64 * ln2pi + det.ln() + quad);

        states.push(TvpVarState {
            t,
            date,
            beta: DMatrix::from_fn(n, k, |i, c| theta[i * k + c]),
            beta_cov: cov.clone(),
            sigma: sigma.clone(),
            loglik_increment,
        });
    }
    Ok(TvpVarPath {
        labels: panel.series_names.clone(),
        config: config.clone(),
        states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eigenvalue;
    use crate::synthdgp::{simulate, DgpSpec};

    fn panel_from(m: DMatrix<f64>) -> ReturnPanel {
        let start = NaiveDate::from_ymd_opt(2010, 1, 1).unwrap();
        let names = (0..m.ncols()).map(|i| format!("s{i}")).collect();
        ReturnPanel::new((0..m.nrows()).map(|i| start + chrono::Days::new(i as u64)).collect(), names, m).unwrap()
    }

    fn example_beta() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.1, 0.4])
    }

    #[test]
    fn zero_data_keeps_prior_mean() {
        let panel = panel_from(DMatrix::zeros(300, 2));
        let prior = example_beta();
        let cfg = TvpVarConfig {
            prior: PriorSpec::Fixed {
                beta: prior.clone(),
                sigma: DMatrix::identity(2, 2),
                beta_cov_scale: 10.0,
            },
            ..TvpVarConfig::default()
        };
        let path = fit_tvp_var(&panel, &cfg).unwrap();
        assert_eq!(path.states.len(), 299);
        assert!(path.states.iter().all(|s| s.beta == prior));
    }

    #[test]
    fn static_var_rank_deficiency() {
        let panel = simulate(&DgpSpec::constant(example_beta(), DMatrix::identity(2, 2), 3, 1)).unwrap();
        assert!(matches!(fit_static_var(&panel), Err(EstimationError::Singular { .. })));
    }

    #[test]
    fn invalid_kappa_rejected() {
        let panel = simulate(&DgpSpec::constant(example_beta(), DMatrix::identity(2, 2), 400, 1)).unwrap();
        let cfg = TvpVarConfig {
            kappa1: 0.8,
            ..TvpVarConfig::default()
        };
        assert!(matches!(fit_tvp_var(&panel, &cfg), Err(EstimationError::InvalidConfig(_))));
    }

    #[test]
    fn non_finite_rejected() {
        let mut m = DMatrix::from_element(300, 2, 0.1);
        m[(10, 1)] = f64::NAN;
        assert!(matches!(fit_tvp_var(&panel_from(m), &TvpVarConfig::default()), Err(EstimationError::NonFinite)));
    }

    #[test]
    fn states_are_psd_and_causal() {
        let panel = simulate(&DgpSpec::constant(example_beta(), DMatrix::identity(2, 2), 700, 4)).unwrap();
        let cfg = TvpVarConfig::default();
        let full = fit_tvp_var(&panel, &cfg).unwrap();
        assert_eq!(full.states.len(), 700 - DEFAULT_PRIOR_WINDOW);
        for s in &full.states {
            assert!(min_eigenvalue(&s.sigma) >= -1e-10 * s.sigma.trace());
            assert!(min_eigenvalue(&s.beta_cov) >= -1e-10 * s.beta_cov.trace());
        }
        let truncated = fit_tvp_var(&panel.slice(0, 450), &cfg).unwrap();
        assert_eq!(&full.states[..truncated.states.len()], truncated.states.as_slice());
    }

    #[test]
    fn scale_equivariance() {
        let panel = simulate(&DgpSpec::constant(example_beta(), DMatrix::identity(2, 2), 600, 8)).unwrap();
        let c = 0.01;
        let scaled = ReturnPanel {
            returns: &panel.returns * c,
            ..panel.clone()
        };
        let cfg = TvpVarConfig::default();
        let a = fit_tvp_var(&panel, &cfg).unwrap();
        let b = fit_tvp_var(&scaled, &cfg).unwrap();
        for (sa, sb) in a.states.iter().zip(&b.states) {
            assert!((&sa.sigma * (c * c) - &sb.sigma).amax() < 1e-9 * sa.sigma.amax() * c * c);
            assert!((&sa.beta - &sb.beta).amax() < 1e-9);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let panel = simulate(&DgpSpec::constant(example_beta(), DMatrix::identity(2, 2), 260, 2)).unwrap();
        let path = fit_tvp_var(&panel, &TvpVarConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("ckpt.json");
        path.save_json(&file).unwrap();
        let back = TvpVarPath::load_json(&file).unwrap();
        assert_eq!(back.states.len(), path.states.len());
        assert_eq!(back.config, path.config);
        for (x, y) in back.states.iter().zip(&path.states) {
            assert_eq!(x.date, y.date);
            assert!((&x.beta - &y.beta).amax() < 1e-15);
            assert!((&x.sigma - &y.sigma).amax() < 1e-15 * y.sigma.amax().max(1.0));
        }
    }

    #[test]
    fn lag_two_companion_shapes() {
        let beta = DMatrix::from_row_slice(2, 4, &[0.3, 0.0, 0.2, 0.0, 0.0, 0.3, 0.0, 0.2]);
        let panel = simulate(&DgpSpec::constant(beta, DMatrix::identity(2, 2), 500, 3)).unwrap();
        let cfg = TvpVarConfig {
            lags: 2,
            ..TvpVarConfig::default()
        };
        let path = fit_tvp_var(&panel, &cfg).unwrap();
        let last = path.terminal().unwrap();
        assert_eq!(last.beta.shape(), (2, 4));
        assert_eq!(last.beta_cov.shape(), (8, 8));
    }
}
