//! Quantile regression and the quantile VAR.
//!
//! The solver runs iteratively reweighted least squares on an ε-smoothed
//! check loss to get close to the optimum, then finishes with exact
//! basis-exchange (simplex) steps on the underlying linear program so the
//! returned coefficients sit on an optimal vertex: `k` observations are
//! interpolated exactly and no edge direction reduces the objective.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ReturnPanel;
use crate::linalg::{least_squares, numeric_rank, repair_psd, rows, solve_square};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantileError {
    #[error("quantile level {0} outside (0, 1)")]
    InvalidTau(f64),
    #[error("design has {rows} rows and {cols} columns; need more rows than columns")]
    TooFewRows { rows: usize, cols: usize },
    #[error("design matrix is rank deficient (rank {rank} < {cols})")]
    RankDeficient { rank: usize, cols: usize },
    #[error("non-finite input")]
    NonFinite,
    #[error("solver did not converge within {0} basis exchanges")]
    NoConvergence(usize),
    #[error("equation {equation} ({label}): {source}")]
    Equation {
        equation: usize,
        label: String,
        #[source]
        source: Box<QuantileError>,
    },
    #[error("window {start}..{end} too short: need more than {required} rows")]
    WindowTooShort { start: usize, end: usize, required: usize },
}

pub type Result<T> = std::result::Result<T, QuantileError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub irls_max_iter: usize,
    pub epsilon: f64,
    pub epsilon_shrink: f64,
    pub max_exchanges: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            irls_max_iter: 200,
            epsilon: 1e-6,
            epsilon_shrink: 0.1,
            max_exchanges: 20_000,
        }
    }
}

/// ρ_τ(u) = u (τ - 1{u < 0})
pub fn check_loss(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

pub fn check_objective(y: &DVector<f64>, x: &DMatrix<f64>, b: &DVector<f64>, tau: f64) -> f64 {
    (y - x * b).iter().map(|&u| check_loss(u, tau)).sum()
}

fn validate(y: &DVector<f64>, x: &DMatrix<f64>, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(QuantileError::InvalidTau(tau));
    }
    if y.len() != x.nrows() || x.nrows() <= x.ncols() {
        return Err(QuantileError::TooFewRows {
            rows: x.nrows(),
            cols: x.ncols(),
        });
    }
    if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
        return Err(QuantileError::NonFinite);
    }
    let rank = numeric_rank(x);
    if rank < x.ncols() {
        return Err(QuantileError::RankDeficient { rank, cols: x.ncols() });
    }
    Ok(())
}

/// Minimizes Σ ρ_τ(y - X b).
pub fn quantile_regression(y: &DVector<f64>, x: &DMatrix<f64>, tau: f64) -> Result<DVector<f64>> {
    quantile_regression_with(y, x, tau, None, &SolverOptions::default())
}

/// As [`quantile_regression`], optionally starting the exact phase from
/// `start` instead of running IRLS.
pub fn quantile_regression_with(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    tau: f64,
    start: Option<&DVector<f64>>,
    opts: &SolverOptions,
) -> Result<DVector<f64>> {
    validate(y, x, tau)?;
    let b0 = match start {
        Some(b) if b.len() == x.ncols() => b.clone(),
        _ => irls(y, x, tau, opts),
    };
    simplex_finish(y, x, tau, &b0, opts)
}

fn irls(y: &DVector<f64>, x: &DMatrix<f64>, tau: f64, opts: &SolverOptions) -> DVector<f64> {
    let ymat = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    let mut b = match least_squares(x, &ymat) {
        Some(fit) => fit.coef.column(0).into_owned(),
        None => DVector::zeros(x.ncols()),
    };
    let scale = y.amax().max(f64::MIN_POSITIVE);
    let mut eps = opts.epsilon * scale;
    let mut obj = check_objective(y, x, &b, tau);
    let mut weighted = x.clone();
    let mut wy = y.clone();
    for _ in 0..opts.irls_max_iter {
        let r = y - x * &b;
        for i in 0..x.nrows() {
            let side = if r[i] < 0.0 { 1.0 - tau } else { tau };
            let w = (side / r[i].abs().max(eps)).sqrt();
            weighted.row_mut(i).copy_from(&(x.row(i) * w));
            wy[i] = y[i] * w;
        }
        let Some(fit) = least_squares(&weighted, &DMatrix::from_column_slice(wy.len(), 1, wy.as_slice())) else {
            break;
        };
        let candidate = fit.coef.column(0).into_owned();
        let new_obj = check_objective(y, x, &candidate, tau);
        let improved = new_obj < obj;
        if improved {
            b = candidate;
        }
        if !improved || (obj - new_obj) <= 1e-12 * obj.max(f64::MIN_POSITIVE) {
            eps *= opts.epsilon_shrink;
            if eps < 1e-15 * scale {
                break;
            }
        }
        obj = obj.min(new_obj);
    }
    b
}

/// Picks `k` well-conditioned rows with the smallest absolute residuals.
fn initial_basis(x: &DMatrix<f64>, r: &DVector<f64>) -> Option<Vec<usize>> {
    let k = x.ncols();
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    order.sort_by(|&a, &b| r[a].abs().total_cmp(&r[b].abs()).then(a.cmp(&b)));
    let mut basis = Vec::with_capacity(k);
    // Gram–Schmidt on selected rows
    let mut ortho: Vec<DVector<f64>> = Vec::with_capacity(k);
    for i in order {
        let mut v = x.row(i).transpose();
        let norm0 = v.norm();
        if norm0 == 0.0 {
            continue;
        }
        for q in &ortho {
            let proj = q.dot(&v);
            v -= q * proj;
        }
        let norm = v.norm();
        if norm > 1e-8 * norm0 {
            ortho.push(v / norm);
            basis.push(i);
            if basis.len() == k {
                return Some(basis);
            }
        }
    }
    None
}

struct Vertex {
    coef: DVector<f64>,
    inverse: DMatrix<f64>,
    residuals: DVector<f64>,
}

fn vertex(y: &DVector<f64>, x: &DMatrix<f64>, basis: &[usize]) -> Option<Vertex> {
    let k = x.ncols();
    let bmat = DMatrix::from_fn(k, k, |r, c| x[(basis[r], c)]);
    let yb = DVector::from_fn(k, |r, _| y[basis[r]]);
    let coef = solve_square(&bmat, &yb)?;
    let inverse = bmat.try_inverse()?;
    let mut residuals = y - x * &coef;
    for &i in basis {
        residuals[i] = 0.0;
    }
    Some(Vertex {
        coef,
        inverse,
        residuals,
    })
}

fn simplex_finish(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    tau: f64,
    start: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<DVector<f64>> {
    let n = x.nrows();
    let k = x.ncols();
    let r0 = y - x * start;
    let mut basis = initial_basis(x, &r0).ok_or(QuantileError::RankDeficient { rank: 0, cols: k })?;
    let mut v = vertex(y, x, &basis).ok_or(QuantileError::RankDeficient { rank: 0, cols: k })?;
    let yscale = y.amax().max(1.0);
    let zero_tol = 1e-11 * yscale;
    let mut in_basis = vec![false; n];
    for &i in &basis {
        in_basis[i] = true;
    }

    for _ in 0..opts.max_exchanges {
        // directions d = ±B^{-1} e_m; a = X d
        let a_all = x * &v.inverse;
        let mut best: Option<(f64, usize, f64)> = None;
        for m in 0..k {
            for s in [1.0, -1.0] {
                // leaving row's residual becomes -s t
                let mut g = if s > 0.0 { 1.0 - tau } else { tau };
                for i in 0..n {
                    if in_basis[i] {
                        continue;
                    }
                    let a = s * a_all[(i, m)];
                    let r = v.residuals[i];
                    g += if r > zero_tol {
                        -a * tau
                    } else if r < -zero_tol {
                        a * (1.0 - tau)
                    } else if a > 0.0 {
                        a * (1.0 - tau)
                    } else {
                        -a * tau
                    };
                }
                if best.is_none_or(|(bg, _, _)| g < bg) {
                    best = Some((g, m, s));
                }
            }
        }
        let (g, m, s) = best.expect("k >= 1");
        let col_scale = (0..n).map(|i| a_all[(i, m)].abs()).fold(0.0, f64::max).max(1.0);
        if g >= -1e-12 * col_scale {
            return Ok(v.coef);
        }

        // ratio test along the descent edge
        let mut breaks: Vec<(f64, usize, f64)> = (0..n)
            .filter(|&i| !in_basis[i])
            .filter_map(|i| {
                let a = s * a_all[(i, m)];
                let r = v.residuals[i];
                if r.abs() <= zero_tol || a == 0.0 {
                    return None;
                }
                let t = r / a;
                (t > 0.0).then_some((t, i, a.abs()))
            })
            .collect();
        breaks.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
        let mut slope = g;
        let mut entering = None;
        for (_, i, w) in breaks {
            slope += w;
            if slope >= 0.0 {
                entering = Some(i);
                break;
            }
        }
        let Some(enter) = entering else {
            return Err(QuantileError::NoConvergence(opts.max_exchanges));
        };
        let leave = basis[m];
        basis[m] = enter;
        let Some(next) = vertex(y, x, &basis) else {
            return Err(QuantileError::RankDeficient { rank: k - 1, cols: k });
        };
        in_basis[leave] = false;
        in_basis[enter] = true;
        v = next;
    }
    Err(QuantileError::NoConvergence(opts.max_exchanges))
}

/// Quantile VAR(1) fit at level `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileVarFit {
    pub tau: f64,
    pub labels: Vec<String>,
    #[serde(with = "rows")]
    pub beta_tau: DMatrix<f64>,
    #[serde(with = "rows")]
    pub sigma_tau: DMatrix<f64>,
    pub intercept_tau: Vec<f64>,
    /// Panel rows `start..end` supplied the data (the first row only as a lag).
    pub window: (usize, usize),
    pub end_date: NaiveDate,
    /// Per-equation fraction of strictly negative residuals.
    pub negative_fraction: Vec<f64>,
}

/// Equation-by-equation quantile regression of Y_t on an intercept and
/// Y_{t-1}. `sigma_tau` is the second moment of the raw quantile residuals
/// (not re-centered), repaired to PSD.
pub fn fit_quantile_var(panel: &ReturnPanel, tau: f64, window: Option<(usize, usize)>) -> Result<QuantileVarFit> {
    fit_quantile_var_with(panel, tau, window, None, &SolverOptions::default())
}

fn fit_quantile_var_with(
    panel: &ReturnPanel,
    tau: f64,
    window: Option<(usize, usize)>,
    warm: Option<&DMatrix<f64>>,
    opts: &SolverOptions,
) -> Result<QuantileVarFit> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(QuantileError::InvalidTau(tau));
    }
    let n = panel.n_series();
    let (start, end) = window.unwrap_or((0, panel.len()));
    let required = 2 * n + 10;
    if end > panel.len() || end <= start || end - start <= required {
        return Err(QuantileError::WindowTooShort { start, end, required });
    }
    let data = &panel.returns;
    let rows_n = end - start - 1;
    let x = DMatrix::from_fn(rows_n, n + 1, |r, c| if c == 0 { 1.0 } else { data[(start + r, c - 1)] });

    let solved: Vec<Result<DVector<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let y = DVector::from_fn(rows_n, |r, _| data[(start + 1 + r, i)]);
            let warm_i = warm.map(|w| w.row(i).transpose());
            quantile_regression_with(&y, &x, tau, warm_i.as_ref(), opts).map_err(|e| QuantileError::Equation {
                equation: i,
                label: panel.series_names[i].clone(),
                source: Box::new(e),
            })
        })
        .collect();
    let coefs = solved.into_iter().collect::<Result<Vec<_>>>()?;

    let mut resid = DMatrix::zeros(rows_n, n);
    let mut negative_fraction = Vec::with_capacity(n);
    for (i, b) in coefs.iter().enumerate() {
        let y = DVector::from_fn(rows_n, |r, _| data[(start + 1 + r, i)]);
        let mut u = &y - &x * b;
        // the k interpolated rows are zero on the exact vertex
        for v in u.iter_mut() {
            if v.abs() <= 1e-12 * y.amax().max(1.0) {
                *v = 0.0;
            }
        }
        negative_fraction.push(u.iter().filter(|&&e| e < 0.0).count() as f64 / rows_n as f64);
        resid.set_column(i, &u);
    }
    let sigma = repair_psd(&(resid.transpose() * &resid / rows_n as f64));
    Ok(QuantileVarFit {
        tau,
        labels: panel.series_names.clone(),
        beta_tau: DMatrix::from_fn(n, n, |i, j| coefs[i][j + 1]),
        sigma_tau: sigma,
        intercept_tau: coefs.iter().map(|b| b[0]).collect(),
        window: (start, end),
        end_date: panel.dates[end - 1],
        negative_fraction,
    })
}

/// Window start offsets for a rolling run.
pub fn rolling_windows(len: usize, window_len: usize, step: usize) -> Vec<(usize, usize)> {
    if step == 0 || window_len > len {
        return Vec::new();
    }
    (0..=(len - window_len) / step)
        .map(|w| (w * step, w * step + window_len))
        .collect()
}

/// Quantile VAR on rolling windows. Each window after the first starts its
/// exact solve from the previous window's coefficients.
pub fn rolling_quantile_var(
    panel: &ReturnPanel,
    tau: f64,
    window_len: usize,
    step: usize,
) -> Result<Vec<QuantileVarFit>> {
    if step == 0 {
        return Err(QuantileError::WindowTooShort {
            start: 0,
            end: window_len,
            required: window_len,
        });
    }
    let windows = rolling_windows(panel.len(), window_len, step);
    if windows.is_empty() {
        return Err(QuantileError::WindowTooShort {
            start: 0,
            end: panel.len(),
            required: window_len,
        });
    }
    let opts = SolverOptions::default();
    let mut fits: Vec<QuantileVarFit> = Vec::with_capacity(windows.len());
    for w in windows {
        let warm = fits.last().map(|f| {
            let n = f.beta_tau.nrows();
            DMatrix::from_fn(n, n + 1, |i, c| if c == 0 { f.intercept_tau[i] } else { f.beta_tau[(i, c - 1)] })
        });
        fits.push(fit_quantile_var_with(panel, tau, Some(w), warm.as_ref(), &opts)?);
    }
    Ok(fits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdgp::oracle_quantile_lp;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn design_with_intercept(xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(xs.len(), 2, |r, c| if c == 0 { 1.0 } else { xs[r] })
    }

    #[test]
    fn exact_line_recovered_at_every_tau() {
        let xs: Vec<f64> = (0..30).map(|i| i as f64 * 0.37 - 3.0).collect();
        let y = DVector::from_iterator(xs.len(), xs.iter().map(|v| 2.0 * v));
        let x = DMatrix::from_column_slice(xs.len(), 1, &xs);
        for tau in [0.05, 0.3, 0.5, 0.9] {
            let b = quantile_regression(&y, &x, tau).unwrap();
            assert!((b[0] - 2.0).abs() < 1e-12, "tau {tau}: {}", b[0]);
        }
    }

    #[test]
    fn seven_point_median_matches_enumeration() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let ys = [0.3, 1.9, 1.2, 3.8, 2.9, 6.1, 5.0];
        let x = design_with_intercept(&xs);
        let y = DVector::from_column_slice(&ys);
        let b = quantile_regression(&y, &x, 0.5).unwrap();
        let oracle = oracle_quantile_lp(&y, &x, 0.5).unwrap();
        let gap = check_objective(&y, &x, &b, 0.5) - check_objective(&y, &x, &oracle, 0.5);
        assert!(gap.abs() < 1e-12, "gap {gap}");
    }

    #[test]
    fn error_paths() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let y = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
        assert!(matches!(quantile_regression(&y, &x, 0.5), Err(QuantileError::RankDeficient { .. })));
        assert!(matches!(quantile_regression(&y, &x, 1.0), Err(QuantileError::InvalidTau(_))));
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let y = DVector::from_column_slice(&[1.0, 2.0]);
        assert!(matches!(quantile_regression(&y, &x, 0.5), Err(QuantileError::TooFewRows { .. })));
    }

    #[test]
    fn rolling_window_counts() {
        assert_eq!(rolling_windows(100, 100, 1), vec![(0, 100)]);
        assert_eq!(rolling_windows(100, 30, 30).len(), (100 - 30) / 30 + 1);
        assert_eq!(rolling_windows(100, 30, 1).len(), 71);
    }

    fn random_instance(seed: u64, n: usize, k: usize) -> (DVector<f64>, DMatrix<f64>) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, k, |_, c| if c == 0 { 1.0 } else { StandardNormal.sample(&mut rng) });
        let y = DVector::from_fn(n, |r, _| {
            let e: f64 = StandardNormal.sample(&mut rng);
            x.row(r).sum() * 0.5 + e * rng.random_range(0.5..2.0)
        });
        (y, x)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn reflection_symmetry(seed in any::<u64>(), tau in 0.05f64..0.95) {
            let (y, x) = random_instance(seed, 40, 3);
            let b = quantile_regression(&y, &x, tau).unwrap();
            let neg = quantile_regression(&(-&y), &x, 1.0 - tau).unwrap();
            let f = check_objective(&y, &x, &b, tau);
            let f_reflected = check_objective(&y, &x, &(-&neg), tau);
            prop_assert!((f - f_reflected).abs() <= 1e-9 * f.max(1.0));
        }

        #[test]
        fn dominates_ols(seed in any::<u64>(), tau in 0.05f64..0.95) {
            let (y, x) = random_instance(seed, 80, 3);
            let b = quantile_regression(&y, &x, tau).unwrap();
            let ols = least_squares(&x, &DMatrix::from_column_slice(80, 1, y.as_slice())).unwrap();
            let b_ols = ols.coef.column(0).into_owned();
            prop_assert!(check_objective(&y, &x, &b, tau) <= check_objective(&y, &x, &b_ols, tau) + 1e-12);
        }

        #[test]
        fn residual_sign_condition(seed in any::<u64>(), tau in 0.05f64..0.95) {
            let (y, x) = random_instance(seed, 120, 4);
            let b = quantile_regression(&y, &x, tau).unwrap();
            let r = &y - &x * &b;
            let neg = r.iter().filter(|&&u| u < -1e-10).count() as f64 / 120.0;
            prop_assert!((neg - tau).abs() <= 5.0 / 120.0 + 1e-12);
        }
    }
}
