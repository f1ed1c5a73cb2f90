//! Simulation-oracle checks of estimator behaviour on synthetic panels.

use std::fs;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use spillover::connectedness::{dynamic_indices, gfevd, summarize, FevdOptions};
use spillover::dataset::ReturnPanel;
use spillover::diagnostics::{describe, jarque_bera, select_var_order};
use spillover::pipeline::{self, static_fevd, DynamicFile, Level, RunConfig};
use spillover::qvar::{check_objective, fit_quantile_var, quantile_regression, rolling_quantile_var};
use spillover::synthdgp::{oracle_gfevd_mc, oracle_quantile_lp, simulate, DgpSpec};
use spillover::tvpvar::{fit_static_var, fit_tvp_var, TvpVarConfig};

fn normals(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn equicorrelated(n: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { rho })
}

/// Y_t on [1, Y_{t-1}] by least squares over rows `start..end`; returns the
/// slope block (N x N) and the residual covariance.
fn ols_with_intercept(y: &DMatrix<f64>, start: usize, end: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = y.ncols();
    let rows = end - start.max(1);
    let x = DMatrix::from_fn(rows, n + 1, |r, c| if c == 0 { 1.0 } else { y[(start.max(1) + r - 1, c - 1)] });
    let target = y.rows(start.max(1), rows).into_owned();
    let xtx = x.transpose() * &x;
    let coef = xtx.lu().solve(&(x.transpose() * &target)).unwrap();
    let resid = &target - &x * &coef;
    let sigma = resid.transpose() * &resid / (rows - n - 1) as f64;
    (coef.rows(1, n).transpose(), sigma)
}

/// Per-equation recursive least squares of Y_t on Y_{t-1} from a diffuse
/// start.
fn rls(y: &DMatrix<f64>) -> DMatrix<f64> {
    let n = y.ncols();
    let mut theta = DMatrix::<f64>::zeros(n, n);
    let mut p = DMatrix::<f64>::identity(n, n) * 1e6;
    for t in 1..y.nrows() {
        let x = y.row(t - 1).transpose();
        let px = &p * &x;
        let denom = 1.0 + (x.transpose() * &px)[(0, 0)];
        let gain = &px / denom;
        for i in 0..n {
            let err = y[(t, i)] - (theta.row(i) * &x)[(0, 0)];
            let mut row = theta.row_mut(i);
            row += gain.transpose() * err;
        }
        p -= &gain * px.transpose();
    }
    theta
}

#[test]
fn jb_size_at_ten_thousand_draws() {
    let mut rng = ChaCha20Rng::seed_from_u64(101);
    let rejections = (0..1000)
        .filter(|_| jarque_bera(&normals(&mut rng, 10_000)).unwrap().1 < 0.05)
        .count();
    assert!((30..=70).contains(&rejections), "{rejections}/1000");
}

#[test]
fn adf_rates_at_length_2000() {
    let mut rng = ChaCha20Rng::seed_from_u64(102);
    let (mut wn, mut rw) = (0, 0);
    for _ in 0..1000 {
        let e = normals(&mut rng, 2000);
        wn += describe(&e).unwrap().adf_reject_1pct as usize;
        let walk: Vec<f64> = e
            .iter()
            .scan(0.0, |s, v| {
                *s += v;
                Some(*s)
            })
            .collect();
        rw += describe(&walk).unwrap().adf_reject_1pct as usize;
    }
    assert!(wn >= 990, "white noise rejected {wn}/1000");
    assert!(rw <= 20, "random walk rejected {rw}/1000");
}

#[test]
fn bic_recovers_lag_order() {
    let beta1 = DMatrix::from_row_slice(3, 3, &[0.4, 0.1, 0.0, 0.0, 0.3, 0.1, 0.1, 0.0, 0.35]);
    let mut ones = 0;
    for seed in 0..200 {
        let p = simulate(&DgpSpec::constant(beta1.clone(), DMatrix::identity(3, 3), 2000, 1000 + seed)).unwrap();
        ones += (select_var_order(&p, 6).unwrap() == 1) as usize;
    }
    assert!(ones >= 190, "order 1 chosen {ones}/200");

    let mut beta2 = DMatrix::zeros(3, 6);
    beta2.view_mut((0, 0), (3, 3)).copy_from(&(DMatrix::identity(3, 3) * 0.2));
    beta2.view_mut((0, 3), (3, 3)).copy_from(&(DMatrix::identity(3, 3) * 0.5));
    let mut twos = 0;
    for seed in 0..200 {
        let p = simulate(&DgpSpec::constant(beta2.clone(), DMatrix::identity(3, 3), 2000, 2000 + seed)).unwrap();
        twos += (select_var_order(&p, 6).unwrap() == 2) as usize;
    }
    assert!(twos >= 180, "order 2 chosen {twos}/200");
}

#[test]
fn tvp_without_forgetting_matches_rls() {
    let beta = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.1, 0.4]);
    let panel = simulate(&DgpSpec::constant(beta, DMatrix::identity(2, 2), 3000, 7)).unwrap();
    let cfg = TvpVarConfig {
        kappa1: 1.0,
        kappa2: 1.0,
        ..TvpVarConfig::default()
    };
    let path = fit_tvp_var(&panel, &cfg).unwrap();
    let diff = (&path.terminal().unwrap().beta - rls(&panel.returns)).amax();
    assert!(diff < 0.05, "{diff}");
}

#[test]
fn tvp_tracks_sign_flip() {
    let beta = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.1, 0.4]);
    for seed in 0..3 {
        let spec = DgpSpec::constant(beta.clone(), DMatrix::identity(2, 2), 3000, 30 + seed).with_break(
            1500,
            -beta.clone(),
            DMatrix::identity(2, 2),
        );
        let panel = simulate(&spec).unwrap();
        let path = fit_tvp_var(&panel, &TvpVarConfig::default()).unwrap();
        let tail = &path.states[path.states.len() - 500..];
        let mean = tail.iter().fold(DMatrix::zeros(2, 2), |a, s| a + &s.beta) / 500.0;
        let y = &panel.returns;
        let x = y.rows(2499, 500).into_owned();
        let target = y.rows(2500, 500).into_owned();
        let ols = (x.transpose() * &x).lu().solve(&(x.transpose() * target)).unwrap().transpose();
        let diff = (mean - ols).amax();
        assert!(diff < 0.1, "seed {seed}: {diff}");
    }
}

#[test]
fn static_var_within_three_standard_errors() {
    let n = 3;
    let truth = DMatrix::from_row_slice(3, 3, &[0.3, 0.1, 0.0, -0.2, 0.4, 0.1, 0.0, 0.2, 0.1]);
    for (beta, seed) in [(DMatrix::zeros(n, n), 11), (truth, 12)] {
        let panel = simulate(&DgpSpec::constant(beta.clone(), equicorrelated(n, 0.3), 5000, seed)).unwrap();
        let fit = fit_static_var(&panel).unwrap();
        for i in 0..n {
            for j in 0..n {
                let se = fit.beta_cov[(i * n + j, i * n + j)].sqrt();
                assert!((fit.beta[(i, j)] - beta[(i, j)]).abs() < 3.0 * se, "({i},{j})");
            }
        }
    }
}

#[test]
fn median_slope_near_ols_in_location_model() {
    let mut rng = ChaCha20Rng::seed_from_u64(13);
    let n = 5000;
    let xs = normals(&mut rng, n);
    let e = normals(&mut rng, n);
    let x = DMatrix::from_fn(n, 2, |r, c| if c == 0 { 1.0 } else { xs[r] });
    let y = DVector::from_fn(n, |r, _| 1.0 + 0.5 * xs[r] + e[r]);
    let b = quantile_regression(&y, &x, 0.5).unwrap();
    let xtx = x.transpose() * &x;
    let ols = xtx.clone().lu().solve(&(x.transpose() * &y)).unwrap();
    let resid = &y - &x * &ols;
    let s2 = resid.norm_squared() / (n - 2) as f64;
    let se = (s2 * xtx.try_inverse().unwrap()[(1, 1)]).sqrt();
    assert!((b[1] - ols[1]).abs() < 2.0 * se, "{} vs {}", b[1], ols[1]);
}

#[test]
fn qvar_median_close_to_ols_on_gaussian_var() {
    let beta = DMatrix::from_row_slice(3, 3, &[0.3, 0.1, 0.0, 0.0, 0.2, 0.2, 0.1, 0.0, 0.3]);
    let panel = simulate(&DgpSpec::constant(beta, equicorrelated(3, 0.2), 3000, 14)).unwrap();
    let q = fit_quantile_var(&panel, 0.5, None).unwrap();
    let (ols, sigma) = ols_with_intercept(&panel.returns, 0, panel.len());
    let y = &panel.returns;
    let x = y.rows(0, y.nrows() - 1);
    let centered = DMatrix::from_fn(x.nrows(), 3, |r, c| x[(r, c)] - x.column(c).mean());
    let xtx_inv = (centered.transpose() * &centered).try_inverse().unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let se = (sigma[(i, i)] * xtx_inv[(j, j)]).sqrt();
            assert!((q.beta_tau[(i, j)] - ols[(i, j)]).abs() < 3.0 * se, "({i},{j})");
        }
    }
}

/// y2_t = 0.3 y1_{t-1} + (0.5 + y1_{t-1}) e_t with positive iid y1, so the
/// conditional tau-quantile slope on y1_{t-1} is 0.3 + z_tau.
fn heteroskedastic_panel(seed: u64, t: usize) -> ReturnPanel {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut data = DMatrix::zeros(t, 2);
    for r in 0..t {
        data[(r, 0)] = rng.random_range(0.5..1.5);
        if r > 0 {
            let e: f64 = StandardNormal.sample(&mut rng);
            data[(r, 1)] = 0.3 * data[(r - 1, 0)] + (0.5 + data[(r - 1, 0)]) * e;
        }
    }
    let start = chrono::NaiveDate::from_ymd_opt(2010, 1, 1).unwrap();
    let dates = (0..t).map(|i| start + chrono::Days::new(i as u64)).collect();
    ReturnPanel::new(dates, vec!["x".into(), "y".into()], data).unwrap()
}

#[test]
fn tail_slope_departs_under_heteroskedasticity() {
    let est = |tau: f64| -> Vec<f64> {
        (0..20)
            .map(|s| fit_quantile_var(&heteroskedastic_panel(500 + s, 2000), tau, None).unwrap().beta_tau[(1, 0)])
            .collect()
    };
    let (lo, mid) = (est(0.05), est(0.5));
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let sd = |v: &[f64]| {
        let m = mean(v);
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    };
    let se = sd(&lo).max(sd(&mid));
    assert!((mean(&mid) - mean(&lo)).abs() > 3.0 * se);
    // b(tau) = 0.3 + z_tau, z_0.05 = -1.6449
    assert!((mean(&lo) - (0.3 - 1.644_853_6)).abs() < 4.0 * sd(&lo) / 20f64.sqrt() + 0.05);
    assert!((mean(&mid) - 0.3).abs() < 4.0 * sd(&mid) / 20f64.sqrt() + 0.05);
}

#[test]
fn median_equals_lad_oracle() {
    let mut rng = ChaCha20Rng::seed_from_u64(15);
    for _ in 0..30 {
        let n = rng.random_range(10..=50);
        let xs = normals(&mut rng, n);
        let e = normals(&mut rng, n);
        let x = DMatrix::from_fn(n, 2, |r, c| if c == 0 { 1.0 } else { xs[r] });
        let y = DVector::from_fn(n, |r, _| 0.5 - xs[r] + e[r]);
        let b = quantile_regression(&y, &x, 0.5).unwrap();
        let exact = oracle_quantile_lp(&y, &x, 0.5).unwrap();
        let gap = check_objective(&y, &x, &b, 0.5) - check_objective(&y, &x, &exact, 0.5);
        assert!(gap.abs() < 1e-9, "{gap}");
    }
}

#[test]
fn rolling_windows_vary_smoothly() {
    let beta = DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.0, 0.2]);
    let panel = simulate(&DgpSpec::constant(beta.clone(), DMatrix::identity(2, 2), 600, 16)).unwrap();
    let fits = rolling_quantile_var(&panel, 0.5, 200, 1).unwrap();
    // Monte Carlo SE of a single 200-observation window
    let singles: Vec<DMatrix<f64>> = (0..40)
        .map(|s| {
            let p = simulate(&DgpSpec::constant(beta.clone(), DMatrix::identity(2, 2), 200, 7000 + s)).unwrap();
            fit_quantile_var(&p, 0.5, None).unwrap().beta_tau
        })
        .collect();
    let mean = singles.iter().fold(DMatrix::zeros(2, 2), |a, b| a + b) / 40.0;
    let se = (singles.iter().fold(DMatrix::zeros(2, 2), |a, b| a + (b - &mean).map(|v| v * v)) / 39.0).map(f64::sqrt);
    for w in fits.windows(2) {
        let step = (&w[1].beta_tau - &w[0].beta_tau).abs();
        for i in 0..2 {
            for j in 0..2 {
                assert!(step[(i, j)] <= 4.0 * se[(i, j)], "({i},{j}) step {}", step[(i, j)]);
            }
        }
    }
}

#[test]
fn gfevd_matches_mc_on_triangular_system() {
    let beta = DMatrix::from_row_slice(2, 2, &[0.5, 0.3, 0.0, 0.5]);
    let sigma = DMatrix::identity(2, 2);
    let exact = gfevd(&beta, &sigma, &FevdOptions::with_horizon(5)).unwrap();
    let mc = oracle_gfevd_mc(&beta, &sigma, 5, 1_000_000, 17).unwrap();
    assert!((exact.shares - mc.shares).amax() < 0.005);
}

#[test]
fn dynamic_tci_stays_near_static_on_constant_dgp() {
    let beta = DMatrix::from_row_slice(3, 3, &[0.4, 0.1, 0.0, 0.2, 0.3, -0.1, 0.0, 0.25, 0.2]);
    let panel = simulate(&DgpSpec::constant(beta, equicorrelated(3, 0.3), 3000, 18)).unwrap();
    let cfg = TvpVarConfig {
        kappa1: 1.0,
        kappa2: 1.0,
        ..TvpVarConfig::default()
    };
    let path = fit_tvp_var(&panel, &cfg).unwrap();
    let series = dynamic_indices(&path, &FevdOptions::default()).unwrap();
    let reference = summarize(&static_fevd(&panel, &Level::Mean, &FevdOptions::default()).unwrap()).tci;
    // the diffuse coefficient prior needs a settling period after burn-in
    let worst = series.tci[200..].iter().map(|t| (t - reference).abs()).fold(0.0, f64::max);
    assert!(worst < 5.0, "{worst}");
}

fn write_prices(panel: &ReturnPanel, dir: &std::path::Path) -> RunConfig {
    let input = dir.join("prices.csv");
    panel.to_prices(100.0).write_csv(&input).unwrap();
    RunConfig {
        input: vec![input],
        out: dir.join("out"),
        ..RunConfig::default()
    }
}

#[test]
fn diagnose_normal_panel_rarely_rejects_normality() {
    let dir = tempfile::tempdir().unwrap();
    let panel = simulate(&DgpSpec::constant(DMatrix::zeros(50, 50), DMatrix::identity(50, 50) * 1e-4, 1000, 19)).unwrap();
    let cfg = write_prices(&panel, dir.path());
    pipeline::cmd_diagnose(&cfg).unwrap();
    let text = fs::read_to_string(cfg.out.join("diagnostics.csv")).unwrap();
    let kept = text
        .lines()
        .skip(1)
        .filter(|l| l.split(',').nth(6).unwrap().parse::<f64>().unwrap() >= 0.05)
        .count();
    assert!(kept >= 45, "{kept}/50");
}

#[test]
fn white_noise_tci_matches_oracle_baseline() {
    let n = 3;
    let opts = FevdOptions::default();
    let baseline: Vec<f64> = (0..100)
        .map(|s| {
            let p = simulate(&DgpSpec::constant(DMatrix::zeros(n, n), DMatrix::identity(n, n), 1000, 3000 + s)).unwrap();
            let (beta, sigma) = ols_with_intercept(&p.returns, 0, p.len());
            summarize(&gfevd(&beta, &sigma, &opts).unwrap()).tci
        })
        .collect();
    let m = baseline.iter().sum::<f64>() / 100.0;
    let sd = (baseline.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 99.0).sqrt();
    let dir = tempfile::tempdir().unwrap();
    let panel = simulate(&DgpSpec::constant(DMatrix::zeros(n, n), DMatrix::identity(n, n) * 1e-4, 1000, 20)).unwrap();
    let mut cfg = write_prices(&panel, dir.path());
    cfg.quantiles.clear();
    cfg.full_precision = true;
    pipeline::cmd_static(&cfg).unwrap();
    let table = fs::read_to_string(cfg.out.join("static_mean.csv")).unwrap();
    let tci: f64 = table.lines().last().unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!((tci - m).abs() < 4.0 * sd, "tci {tci}, baseline {m} +- {sd}");
}

#[test]
fn mean_and_median_tables_agree_on_location_dgp() {
    let n = 3;
    let beta = DMatrix::from_row_slice(3, 3, &[0.3, 0.1, 0.0, 0.1, 0.2, 0.0, 0.0, 0.15, 0.25]);
    let panel = simulate(&DgpSpec::constant(beta, equicorrelated(n, 0.4), 2000, 21)).unwrap();
    let mut shifted = panel.clone();
    shifted.returns.add_scalar_mut(0.5);
    let opts = FevdOptions::default();
    let mean = summarize(&static_fevd(&shifted, &Level::Mean, &opts).unwrap()).tci;
    let median = summarize(&static_fevd(&shifted, &Level::Quantile(0.5), &opts).unwrap()).tci;
    assert!((mean - median).abs() < 3.0, "{mean} vs {median}");
}

fn run_dynamic(panel: &ReturnPanel, kappa: (f64, f64)) -> DynamicFile {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = write_prices(panel, dir.path());
    cfg.quantiles.clear();
    cfg.kappa1 = kappa.0;
    cfg.kappa2 = kappa.1;
    let report = pipeline::cmd_dynamic(&cfg).unwrap();
    assert!(report.is_complete());
    serde_json::from_str(&fs::read_to_string(cfg.out.join("dynamic_mean_h5.json")).unwrap()).unwrap()
}

#[test]
fn dynamic_constant_dgp_is_near_constant() {
    let beta = DMatrix::from_row_slice(2, 2, &[0.3, 0.2, 0.0, 0.3]);
    let panel = simulate(&DgpSpec::constant(beta, equicorrelated(2, 0.3) * 1e-4, 2000, 22)).unwrap();
    let f = run_dynamic(&panel, (1.0, 1.0));
    let late = &f.series.tci[f.series.tci.len() / 2..];
    let (lo, hi) = late.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    assert!(hi - lo < 2.0, "range {lo}..{hi}");
}

#[test]
fn dynamic_variance_break_raises_tci() {
    let n = 3;
    let beta = DMatrix::from_fn(n, n, |i, j| if i == j { 0.2 } else { 0.0 });
    let calm = DMatrix::identity(n, n) * 1e-4;
    let common = DVector::from_element(n, 1.0);
    let stressed = (&common * common.transpose() * 3.0 + DMatrix::identity(n, n)) * 1e-4;
    let spec = DgpSpec::constant(beta.clone(), calm, 2000, 23).with_break(1000, beta, stressed);
    let f = run_dynamic(&simulate(&spec).unwrap(), (0.99, 0.96));
    let split = f.series.dates.iter().position(|d| *d >= chrono::NaiveDate::from_ymd_opt(2000, 1, 3).unwrap() + chrono::Days::new(1000)).unwrap();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (pre, post) = (mean(&f.series.tci[..split]), mean(&f.series.tci[split..]));
    assert!(post > pre, "pre {pre}, post {post}");
}
