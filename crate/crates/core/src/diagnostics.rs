//! Descriptive statistics, Jarque–Bera, augmented Dickey–Fuller and VAR
//! lag-order selection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ReturnPanel;
use crate::linalg::{invert_spd, least_squares};

pub const MIN_DESCRIBE_LEN: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum DiagnosticsError {
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("series contains non-finite values")]
    NonFinite,
    #[error("series too short: {len} observations, need more than {required}")]
    TooShort { len: usize, required: usize },
    #[error("ADF regression with {lags} lags is perfectly collinear")]
    Collinear { lags: usize },
    #[error("insufficient observations for VAR({order}) with {n_series} series: T = {len}")]
    InsufficientObservations {
        len: usize,
        n_series: usize,
        order: usize,
    },
    #[error("max_order must be at least 1")]
    ZeroOrder,
}

pub type Result<T> = std::result::Result<T, DiagnosticsError>;

/// Significance band of an ADF statistic against the constant-only
/// MacKinnon critical values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdfBand {
    Below1,
    Below5,
    Below10,
    Above10,
}

impl AdfBand {
    pub fn label(self) -> &'static str {
        match self {
            AdfBand::Below1 => "<0.01",
            AdfBand::Below5 => "<0.05",
            AdfBand::Below10 => "<0.10",
            AdfBand::Above10 => ">=0.10",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesDiagnostics {
    pub mean: f64,
    pub sd: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub jb_statistic: f64,
    pub jb_pvalue: f64,
    pub adf_statistic: f64,
    pub adf_lags: usize,
    pub adf_reject_1pct: bool,
    pub adf_band: AdfBand,
}

/// Sample moments: mean, SD (n-1 denominator), skewness and excess kurtosis
/// from standardized central moments (n denominator).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

pub fn moments(series: &[f64]) -> Result<Moments> {
    if series.iter().any(|v| !v.is_finite()) {
        return Err(DiagnosticsError::NonFinite);
    }
    let n = series.len();
    if n < 2 {
        return Err(DiagnosticsError::TooShort { len: n, required: 1 });
    }
    let nf = n as f64;
    let mean = series.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in series {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let scale = series.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    if m2 <= (16.0 * f64::EPSILON * scale).powi(2) * nf {
        return Err(DiagnosticsError::ZeroVariance);
    }
    let sd = (m2 / (nf - 1.0)).sqrt();
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    Ok(Moments {
        n,
        mean,
        sd,
        skewness: m3 / m2.powf(1.5),
        excess_kurtosis: m4 / (m2 * m2) - 3.0,
    })
}

/// Jarque–Bera statistic and its chi-square(2) p-value.
pub fn jarque_bera(series: &[f64]) -> Result<(f64, f64)> {
    let m = moments(series)?;
    let jb = m.n as f64 / 6.0 * (m.skewness.powi(2) + m.excess_kurtosis.powi(2) / 4.0);
    // chi-square with 2 degrees of freedom: survival function exp(-x/2)
    Ok((jb, (-jb / 2.0).exp()))
}

/// Result of an intercept-only augmented Dickey–Fuller regression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdfResult {
    pub statistic: f64,
    pub lags: usize,
    pub nobs: usize,
    /// Critical values at 1%, 5%, 10%.
    pub critical_values: [f64; 3],
}

impl AdfResult {
    pub fn reject_1pct(&self) -> bool {
        self.statistic < self.critical_values[0]
    }

    pub fn band(&self) -> AdfBand {
        let [c1, c5, c10] = self.critical_values;
        if self.statistic < c1 {
            AdfBand::Below1
        } else if self.statistic < c5 {
            AdfBand::Below5
        } else if self.statistic < c10 {
            AdfBand::Below10
        } else {
            AdfBand::Above10
        }
    }
}

/// Schwert's rule floor(12 (T/100)^{1/4}).
pub fn schwert_max_lags(len: usize) -> usize {
    (12.0 * (len as f64 / 100.0).powf(0.25)).floor() as usize
}

/// MacKinnon (2010) response-surface critical values for the
/// constant-only, single-series Dickey–Fuller tau statistic.
pub fn mackinnon_critical_values(nobs: usize) -> [f64; 3] {
    const COEFS: [[f64; 4]; 3] = [
        [-3.43035, -6.5393, -16.786, -79.433],
        [-2.86154, -2.8903, -4.234, -40.040],
        [-2.56677, -1.5384, -2.809, 0.0],
    ];
    let inv = 1.0 / nobs as f64;
    COEFS.map(|c| c[0] + c[1] * inv + c[2] * inv * inv + c[3] * inv * inv * inv)
}

/// ADF test with constant; the lag count is chosen by BIC over
/// `0..=max_lags` on a common sample, then the chosen regression is refit on
/// its maximal sample.
pub fn adf_test(series: &[f64], max_lags: usize) -> Result<AdfResult> {
    let n = series.len();
    if n <= max_lags + 10 {
        return Err(DiagnosticsError::TooShort {
            len: n,
            required: max_lags + 10,
        });
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(DiagnosticsError::NonFinite);
    }
    let dy: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    // dy[s] = y[s+1] - y[s]; regression row for target dy[s] uses y[s] and
    // dy[s-1..s-k].
    let design = |k_max: usize, first: usize| -> (DMatrix<f64>, DVector<f64>) {
        let rows = dy.len() - first;
        let x = DMatrix::from_fn(rows, k_max + 2, |r, c| {
            let s = first + r;
            match c {
                0 => 1.0,
                1 => series[s],
                _ => dy[s - (c - 1)],
            }
        });
        let y = DVector::from_fn(rows, |r, _| dy[first + r]);
        (x, y)
    };

    let (x, y) = design(max_lags, max_lags);
    let n_eff = y.len() as f64;
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &y;
    let yty = y.dot(&y);
    let mut best: Option<(f64, usize)> = None;
    for k in 0..=max_lags {
        let m = k + 2;
        let Some(inv) = invert_spd(&xtx.view((0, 0), (m, m)).into_owned()) else {
            continue;
        };
        let xty_k = xty.rows(0, m).into_owned();
        let b = &inv * &xty_k;
        let rss = (yty - b.dot(&xty_k)).max(f64::MIN_POSITIVE);
        let bic = n_eff * (rss / n_eff).ln() + m as f64 * n_eff.ln();
        if best.is_none_or(|(v, _)| bic < v) {
            best = Some((bic, k));
        }
    }
    let Some((_, lags)) = best else {
        return Err(DiagnosticsError::Collinear { lags: 0 });
    };

    let (x, y) = design(lags, lags);
    let fit = least_squares(&x, &DMatrix::from_column_slice(y.len(), 1, y.as_slice()))
        .ok_or(DiagnosticsError::Collinear { lags })?;
    let nobs = y.len();
    let dof = (nobs - (lags + 2)) as f64;
    let s2 = fit.residuals.iter().map(|e| e * e).sum::<f64>() / dof;
    let se = (s2 * fit.xtx_inv[(1, 1)]).sqrt();
    if !(se > 0.0) {
        return Err(DiagnosticsError::Collinear { lags });
    }
    Ok(AdfResult {
        statistic: fit.coef[(1, 0)] / se,
        lags,
        nobs,
        critical_values: mackinnon_critical_values(nobs),
    })
}

/// Full diagnostics battery for one return series.
pub fn describe(series: &[f64]) -> Result<SeriesDiagnostics> {
    if series.len() < MIN_DESCRIBE_LEN {
        return Err(DiagnosticsError::TooShort {
            len: series.len(),
            required: MIN_DESCRIBE_LEN - 1,
        });
    }
    let m = moments(series)?;
    let (jb, p) = jarque_bera(series)?;
    let max_lags = schwert_max_lags(series.len()).min(series.len() - 11);
    let adf = adf_test(series, max_lags)?;
    Ok(SeriesDiagnostics {
        mean: m.mean,
        sd: m.sd,
        skewness: m.skewness,
        excess_kurtosis: m.excess_kurtosis,
        jb_statistic: jb,
        jb_pvalue: p,
        adf_statistic: adf.statistic,
        adf_lags: adf.lags,
        adf_reject_1pct: adf.reject_1pct(),
        adf_band: adf.band(),
    })
}

/// BIC of a least-squares VAR(p) with intercept, rows `first..T` as targets.
fn var_bic(data: &DMatrix<f64>, order: usize, first: usize) -> Option<f64> {
    let n = data.ncols();
    let rows = data.nrows() - first;
    let x = DMatrix::from_fn(rows, 1 + n * order, |r, c| {
        if c == 0 {
            1.0
        } else {
            let lag = (c - 1) / n + 1;
            data[(first + r - lag, (c - 1) % n)]
        }
    });
    let y = data.rows(first, rows).into_owned();
    let fit = least_squares(&x, &y)?;
    let sigma = fit.residuals.transpose() * &fit.residuals / rows as f64;
    let det = sigma.determinant();
    if !(det > 0.0) {
        return None;
    }
    let k = (n * (n * order + 1)) as f64;
    Some(det.ln() + k * (rows as f64).ln() / rows as f64)
}

/// Lag order in `1..=max_order` minimizing BIC, all orders fit on the same
/// sample. Ties resolve to the smaller order.
pub fn select_var_order(panel: &ReturnPanel, max_order: usize) -> Result<usize> {
    if max_order == 0 {
        return Err(DiagnosticsError::ZeroOrder);
    }
    let n = panel.n_series();
    if panel.len() <= n * max_order + 10 {
        return Err(DiagnosticsError::InsufficientObservations {
            len: panel.len(),
            n_series: n,
            order: max_order,
        });
    }
    let mut best: Option<(f64, usize)> = None;
    for p in 1..=max_order {
        if let Some(bic) = var_bic(&panel.returns, p, max_order) {
            if best.is_none_or(|(v, _)| bic < v) {
                best = Some((bic, p));
            }
        }
    }
    best.map(|(_, p)| p).ok_or(DiagnosticsError::InsufficientObservations {
        len: panel.len(),
        n_series: n,
        order: max_order,
    })
}
