//! Synthetic VAR panels with known spillover structure, plus brute-force
//! oracles for the GFEVD and for quantile regression.
//!
//! Random numbers come from ChaCha20 (`rand_chacha` 0.9) seeded through
//! `SeedableRng::seed_from_u64`; Monte Carlo chunks use independent ChaCha
//! streams selected with `set_stream(chunk)`. Normal draws use the ziggurat
//! sampler of `rand_distr` 0.5 and Student-t draws its `StudentT`.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::connectedness::FevdMatrix;
use crate::dataset::ReturnPanel;
use crate::linalg::{rows, solve_square, spectral_radius};

pub const WARMUP: usize = 100;
pub const MIN_ORACLE_PATHS: usize = 100_000;
/// Paths per Monte Carlo chunk / RNG stream.
const CHUNK: usize = 8192;

#[derive(Debug, Error, PartialEq)]
pub enum DgpError {
    #[error("sigma is not positive semi-definite (min eigenvalue {0})")]
    NotPsd(f64),
    #[error("regime starting at {start} is not stationary (spectral radius {radius})")]
    Unstable { start: usize, radius: f64 },
    #[error("Student-t degrees of freedom must exceed 2, got {0}")]
    BadDegreesOfFreedom(f64),
    #[error("invalid spec: {0}")]
    Invalid(String),
    #[error("oracle needs at least {MIN_ORACLE_PATHS} paths, got {0}")]
    TooFewPaths(usize),
    #[error("oracle instance too large ({rows} x {cols}); limit is 60 x 4")]
    TooLarge { rows: usize, cols: usize },
    #[error("no non-singular basis in design")]
    Degenerate,
}

pub type Result<T> = std::result::Result<T, DgpError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum Innovation {
    Gaussian,
    /// Unit-variance scaled Student-t, independent across components before
    /// the covariance factor is applied.
    StudentT { df: f64 },
}

/// Coefficients and innovation covariance in force from `start` onward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub start: usize,
    #[serde(with = "rows")]
    pub beta: DMatrix<f64>,
    #[serde(with = "rows")]
    pub sigma: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub n_series: usize,
    pub regimes: Vec<Regime>,
    pub innovation: Innovation,
    pub length: usize,
    pub seed: u64,
}

impl DgpSpec {
    pub fn constant(beta: DMatrix<f64>, sigma: DMatrix<f64>, length: usize, seed: u64) -> Self {
        DgpSpec {
            n_series: beta.nrows(),
            regimes: vec![Regime { start: 0, beta, sigma }],
            innovation: Innovation::Gaussian,
            length,
            seed,
        }
    }

    pub fn with_innovation(mut self, innovation: Innovation) -> Self {
        self.innovation = innovation;
        self
    }

    /// Adds a regime switch at observation `start`.
    pub fn with_break(mut self, start: usize, beta: DMatrix<f64>, sigma: DMatrix<f64>) -> Self {
        self.regimes.push(Regime { start, beta, sigma });
        self
    }

    fn regime_at(&self, t: usize) -> usize {
        self.regimes.iter().rposition(|r| r.start <= t).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<Vec<DMatrix<f64>>> {
        let n = self.n_series;
        if n == 0 || self.regimes.is_empty() {
            return Err(DgpError::Invalid("need at least one series and one regime".into()));
        }
        if self.regimes.windows(2).any(|w| w[1].start <= w[0].start) || self.regimes[0].start != 0 {
            return Err(DgpError::Invalid("regimes must start at 0 and increase".into()));
        }
        if let Innovation::StudentT { df } = self.innovation {
            if !(df > 2.0) {
                return Err(DgpError::BadDegreesOfFreedom(df));
            }
        }
        self.regimes
            .iter()
            .map(|r| {
                if r.beta.nrows() != n || r.beta.ncols() % n != 0 || r.sigma.shape() != (n, n) {
                    return Err(DgpError::Invalid(format!(
                        "regime at {}: beta {:?}, sigma {:?} for {n} series",
                        r.start,
                        r.beta.shape(),
                        r.sigma.shape()
                    )));
                }
                let radius = spectral_radius(&r.beta);
                if !(radius < 1.0) {
                    return Err(DgpError::Unstable { start: r.start, radius });
                }
                covariance_factor(&r.sigma)
            })
            .collect()
    }
}

/// L with L L' = sigma, accepting semi-definite input.
fn covariance_factor(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = sigma.clone().cholesky() {
        return Ok(ch.l());
    }
    let sym = (sigma + sigma.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min < -1e-12 * eig.eigenvalues.amax().max(1.0) {
        return Err(DgpError::NotPsd(min));
    }
    let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt))
}

fn unit_draw(rng: &mut ChaCha20Rng, innovation: Innovation) -> f64 {
    match innovation {
        Innovation::Gaussian => StandardNormal.sample(rng),
        Innovation::StudentT { df } => {
            let t: f64 = StudentT::new(df).expect("df validated").sample(rng);
            t * ((df - 2.0) / df).sqrt()
        }
    }
}

/// Simulates Y_t = B_t [Y_{t-1}; ...; Y_{t-p}] + L_t z_t after a discarded
/// warm-up of [`WARMUP`] steps under the first regime.
pub fn simulate(spec: &DgpSpec) -> Result<ReturnPanel> {
    let factors = spec.validate()?;
    let n = spec.n_series;
    let max_lags = spec.regimes.iter().map(|r| r.beta.ncols() / n).max().unwrap_or(1);
    let total = WARMUP + spec.length;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let mut history: Vec<DVector<f64>> = vec![DVector::zeros(n); max_lags];
    let mut out = DMatrix::zeros(spec.length, n);
    for step in 0..total {
        let t = step.saturating_sub(WARMUP);
        let r = if step < WARMUP { 0 } else { spec.regime_at(t) };
        let regime = &spec.regimes[r];
        let lags = regime.beta.ncols() / n;
        let z = DVector::from_fn(n, |_, _| unit_draw(&mut rng, spec.innovation));
        let mut y = &factors[r] * z;
        for l in 0..lags {
            y += regime.beta.columns(l * n, n) * &history[history.len() - 1 - l];
        }
        if step >= WARMUP {
            out.set_row(t, &y.transpose());
        }
        history.remove(0);
        history.push(y);
    }
    let start = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
    let dates = (0..spec.length).map(|i| start + chrono::Days::new(i as u64)).collect();
    let names = (1..=n).map(|i| format!("y{i}")).collect();
    Ok(ReturnPanel::new(dates, names, out).expect("consistent shapes"))
}

/// Monte Carlo GFEVD from the conditional-expectation definition of the
/// generalized impulse response.
///
/// Each path draws an impact vector from N(0, Σ) for the baseline arm; the
/// shocked arm conditions the same draw on ε_j = √Σ_jj. Both arms start from
/// the same history and would receive the same future innovations, so those
/// terms cancel from the difference and are not drawn. The difference is
/// propagated through the VAR recursion, averaged over paths, squared and
/// normalized by row. Supports lag-1 coefficient matrices only.
pub fn oracle_gfevd_mc(
    beta: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    horizon: usize,
    n_paths: usize,
    seed: u64,
) -> Result<FevdMatrix> {
    if n_paths < MIN_ORACLE_PATHS {
        return Err(DgpError::TooFewPaths(n_paths));
    }
    oracle_gfevd_mc_unchecked(beta, sigma, horizon, n_paths, seed)
}

/// As [`oracle_gfevd_mc`] without the minimum path count, for convergence
/// studies.
pub fn oracle_gfevd_mc_unchecked(
    beta: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    horizon: usize,
    n_paths: usize,
    seed: u64,
) -> Result<FevdMatrix> {
    let n = sigma.nrows();
    if beta.shape() != (n, n) || horizon == 0 {
        return Err(DgpError::Invalid("oracle needs square lag-1 beta and horizon >= 1".into()));
    }
    let factor = covariance_factor(sigma)?;
    let n_chunks = n_paths.div_ceil(CHUNK);
    // sums[h][(i, j)] of response differences
    let partial: Vec<Vec<DMatrix<f64>>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let paths = CHUNK.min(n_paths - c * CHUNK);
            let mut sums = vec![DMatrix::zeros(n, n); horizon];
            let mut u = DVector::zeros(n);
            let mut baseline = DVector::zeros(n);
            let (mut y_shock, mut y_base) = (DVector::zeros(n), DVector::zeros(n));
            let (mut next_shock, mut next_base) = (DVector::zeros(n), DVector::zeros(n));
            for _ in 0..paths {
                for v in u.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                factor.mul_to(&u, &mut baseline);
                for j in 0..n {
                    let delta = sigma[(j, j)].sqrt();
                    y_base.copy_from(&baseline);
                    y_shock.copy_from(&baseline);
                    y_shock.axpy((delta - baseline[j]) / sigma[(j, j)], &sigma.column(j), 1.0);
                    for sums_h in sums.iter_mut() {
                        let mut col = sums_h.column_mut(j);
                        col += &y_shock;
                        col -= &y_base;
                        beta.mul_to(&y_shock, &mut next_shock);
                        beta.mul_to(&y_base, &mut next_base);
                        std::mem::swap(&mut y_shock, &mut next_shock);
                        std::mem::swap(&mut y_base, &mut next_base);
                    }
                }
            }
            sums
        })
        .collect();
    let mut theta = DMatrix::zeros(n, n);
    for h in 0..horizon {
        let mut total = DMatrix::zeros(n, n);
        for chunk in &partial {
            total += &chunk[h];
        }
        let girf = total / n_paths as f64;
        theta += girf.map(|v| v * v);
    }
    for i in 0..n {
        let s = theta.row(i).sum();
        theta.row_mut(i).scale_mut(1.0 / s);
    }
    Ok(FevdMatrix {
        shares: theta,
        horizon,
        labels: (1..=n).map(|i| format!("y{i}")).collect(),
    })
}

/// Exact check-loss minimizer by enumerating every basic solution: all
/// `cols`-subsets of rows that determine an interpolating coefficient vector.
pub fn oracle_quantile_lp(y: &DVector<f64>, x: &DMatrix<f64>, tau: f64) -> Result<DVector<f64>> {
    let (n, k) = x.shape();
    if n > 60 || k > 4 || k == 0 {
        return Err(DgpError::TooLarge { rows: n, cols: k });
    }
    if y.len() != n || n < k {
        return Err(DgpError::Invalid("y length must equal rows >= cols".into()));
    }
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut subset: Vec<usize> = (0..k).collect();
    loop {
        let b = DMatrix::from_fn(k, k, |r, c| x[(subset[r], c)]);
        let rhs = DVector::from_fn(k, |r, _| y[subset[r]]);
        if let Some(coef) = solve_square(&b, &rhs) {
            let obj: f64 = (y - x * &coef)
                .iter()
                .map(|&u| if u < 0.0 { u * (tau - 1.0) } else { u * tau })
                .sum();
            if best.as_ref().is_none_or(|(o, _)| obj < *o) {
                best = Some((obj, coef));
            }
        }
        // next combination in lexicographic order
        let mut i = k;
        loop {
            if i == 0 {
                return best.map(|(_, c)| c).ok_or(DgpError::Degenerate);
            }
            i -= 1;
            if subset[i] < n - k + i {
                break;
            }
        }
        subset[i] += 1;
        for m in (i + 1)..k {
            subset[m] = subset[m - 1] + 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connectedness::{gfevd, FevdOptions};
    use crate::diagnostics::moments;

    #[test]
    fn white_noise_covariance_near_identity() {
        let panel = simulate(&DgpSpec::constant(DMatrix::zeros(3, 3), DMatrix::identity(3, 3), 5000, 17)).unwrap();
        let r = &panel.returns;
        let cov = r.transpose() * r / 5000.0;
        // SE of a sample covariance entry is about 1/sqrt(T) off-diagonal and
        // sqrt(2/T) on the diagonal
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                let se = if i == j { (2.0f64 / 5000.0).sqrt() } else { (1.0f64 / 5000.0).sqrt() };
                assert!((cov[(i, j)] - target).abs() < 3.0 * se, "({i},{j}) = {}", cov[(i, j)]);
            }
        }
    }

    #[test]
    fn same_seed_same_panel() {
        let spec = DgpSpec::constant(DMatrix::from_diagonal_element(2, 2, 0.3), DMatrix::identity(2, 2), 300, 5);
        assert_eq!(simulate(&spec).unwrap(), simulate(&spec).unwrap());
        let other = DgpSpec { seed: 6, ..spec.clone() };
        assert_ne!(simulate(&spec).unwrap(), simulate(&other).unwrap());
    }

    #[test]
    fn student_t_has_fat_tails() {
        let mut hits = 0;
        for seed in 0..40 {
            let spec = DgpSpec::constant(DMatrix::zeros(1, 1), DMatrix::identity(1, 1), 5000, seed)
                .with_innovation(Innovation::StudentT { df: 3.0 });
            let m = moments(&simulate(&spec).unwrap().column(0)).unwrap();
            if m.excess_kurtosis > 1.0 {
                hits += 1;
            }
        }
        assert!(hits >= 38, "{hits}/40");
    }

    #[test]
    fn invalid_specs() {
        let bad_sigma = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            simulate(&DgpSpec::constant(DMatrix::zeros(2, 2), bad_sigma, 10, 0)),
            Err(DgpError::NotPsd(_))
        ));
        assert!(matches!(
            simulate(&DgpSpec::constant(DMatrix::identity(2, 2), DMatrix::identity(2, 2), 10, 0)),
            Err(DgpError::Unstable { .. })
        ));
        let t2 = DgpSpec::constant(DMatrix::zeros(1, 1), DMatrix::identity(1, 1), 10, 0)
            .with_innovation(Innovation::StudentT { df: 2.0 });
        assert_eq!(simulate(&t2), Err(DgpError::BadDegreesOfFreedom(2.0)));
    }

    #[test]
    fn regime_switch_changes_dynamics() {
        let a = DMatrix::from_diagonal_element(1, 1, 0.8);
        let b = DMatrix::from_diagonal_element(1, 1, -0.8);
        let spec = DgpSpec::constant(a.clone(), DMatrix::identity(1, 1), 4000, 1).with_break(2000, b, DMatrix::identity(1, 1));
        let y = simulate(&spec).unwrap().column(0);
        let ac = |s: &[f64]| s.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / s.iter().map(|v| v * v).sum::<f64>();
        assert!(ac(&y[..2000]) > 0.7);
        assert!(ac(&y[2000..]) < -0.7);
    }

    #[test]
    fn mc_oracle_identity_without_propagation() {
        let f = oracle_gfevd_mc(&DMatrix::zeros(2, 2), &DMatrix::identity(2, 2), 3, 100_000, 3).unwrap();
        assert!((f.shares.clone() - DMatrix::identity(2, 2)).amax() < 1e-2);
    }

    #[test]
    fn mc_oracle_hand_case() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 1.0]);
        let f = oracle_gfevd_mc(&DMatrix::zeros(2, 2), &sigma, 1, 200_000, 11).unwrap();
        assert!((f.shares[(0, 1)] - 0.390_244).abs() < 5e-3);
        assert!(matches!(oracle_gfevd_mc(&DMatrix::zeros(2, 2), &sigma, 1, 10, 1), Err(DgpError::TooFewPaths(10))));
    }

    #[test]
    fn mc_error_scales_with_paths() {
        let beta = DMatrix::from_row_slice(2, 2, &[0.5, 0.3, 0.0, 0.5]);
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.5]);
        let exact = gfevd(&beta, &sigma, &FevdOptions::with_horizon(3)).unwrap().shares;
        let rms = |paths: usize| {
            let mut s = 0.0;
            for seed in 0..40 {
                let f = oracle_gfevd_mc_unchecked(&beta, &sigma, 3, paths, 1000 + seed).unwrap();
                s += (f.shares - &exact).map(|v| v * v).sum();
            }
            (s / 40.0).sqrt()
        };
        let ratio = rms(10_000) / rms(20_000);
        assert!((1.1..1.8).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn lp_oracle_small_cases() {
        // scalar median of three points
        let x = DMatrix::from_element(3, 1, 1.0);
        let y = DVector::from_column_slice(&[5.0, -1.0, 2.0]);
        assert_eq!(oracle_quantile_lp(&y, &x, 0.5).unwrap()[0], 2.0);
        // low tau approaches the lower envelope: every residual non-negative
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        let x = DMatrix::from_fn(5, 2, |r, c| if c == 0 { 1.0 } else { xs[r] });
        let y = DVector::from_column_slice(&[1.0, 0.2, 2.5, 1.7, 3.9]);
        let b = oracle_quantile_lp(&y, &x, 0.01).unwrap();
        assert!((&y - &x * &b).iter().all(|&u| u >= -1e-12));
        assert!(matches!(
            oracle_quantile_lp(&DVector::zeros(61), &DMatrix::zeros(61, 2), 0.5),
            Err(DgpError::TooLarge { .. })
        ));
    }
}
