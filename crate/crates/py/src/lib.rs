//! Python bindings. Matrices cross the boundary as lists of rows; panels are
//! row-per-date lists with synthetic consecutive dates.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use spillover::connectedness::{self, FevdOptions, SumStart};
use spillover::dataset::{self, PricePanel, ReturnPanel};
use spillover::{diagnostics, network, pipeline, qvar, synthdgp, tvpvar};

type Rows = Vec<Vec<f64>>;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: &Rows) -> PyResult<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("ragged matrix rows"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn dates(n: usize) -> Vec<NaiveDate> {
    let start = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
    (0..n).map(|i| start + chrono::Days::new(i as u64)).collect()
}

fn default_labels(n: usize, labels: Option<Vec<String>>) -> Vec<String> {
    labels.unwrap_or_else(|| (1..=n).map(|i| format!("y{i}")).collect())
}

fn panel(returns: &Rows, labels: Option<Vec<String>>) -> PyResult<ReturnPanel> {
    let m = matrix(returns)?;
    let names = default_labels(m.ncols(), labels);
    ReturnPanel::new(dates(m.nrows()), names, m).map_err(err)
}

/// Log returns of a price matrix (rows are dates, columns series).
#[pyfunction]
fn log_returns(prices: Rows) -> PyResult<Rows> {
    let m = matrix(&prices)?;
    let p = PricePanel {
        dates: dates(m.nrows()),
        series_names: default_labels(m.ncols(), None),
        prices: prices.iter().map(|r| r.iter().map(|&v| Some(v)).collect()).collect(),
    };
    Ok(to_rows(&dataset::log_returns(&p).map_err(err)?.returns))
}

#[pyfunction]
fn describe<'py>(py: Python<'py>, series: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let d = diagnostics::describe(&series).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("mean", d.mean)?;
    out.set_item("sd", d.sd)?;
    out.set_item("skewness", d.skewness)?;
    out.set_item("kurtosis", d.excess_kurtosis + 3.0)?;
    out.set_item("jb", d.jb_statistic)?;
    out.set_item("jb_p", d.jb_pvalue)?;
    out.set_item("adf", d.adf_statistic)?;
    out.set_item("adf_lags", d.adf_lags)?;
    out.set_item("adf_p_band", d.adf_band.label())?;
    Ok(out)
}

/// Jarque-Bera statistic and chi-square(2) p-value.
#[pyfunction]
fn jarque_bera(series: Vec<f64>) -> PyResult<(f64, f64)> {
    diagnostics::jarque_bera(&series).map_err(err)
}

/// Constant-only ADF test; `max_lags` defaults to Schwert's rule.
#[pyfunction]
#[pyo3(signature = (series, max_lags=None))]
fn adf_test<'py>(py: Python<'py>, series: Vec<f64>, max_lags: Option<usize>) -> PyResult<Bound<'py, PyDict>> {
    let lags = max_lags.unwrap_or_else(|| diagnostics::schwert_max_lags(series.len()));
    let r = diagnostics::adf_test(&series, lags).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("statistic", r.statistic)?;
    out.set_item("lags", r.lags)?;
    out.set_item("nobs", r.nobs)?;
    out.set_item("critical_values", r.critical_values.to_vec())?;
    out.set_item("reject_1pct", r.reject_1pct())?;
    Ok(out)
}

#[pyfunction]
fn select_var_order(returns: Rows, max_order: usize) -> PyResult<usize> {
    diagnostics::select_var_order(&panel(&returns, None)?, max_order).map_err(err)
}

/// OLS VAR(1) without intercept: (beta, sigma).
#[pyfunction]
fn fit_static_var(returns: Rows) -> PyResult<(Rows, Rows)> {
    let s = tvpvar::fit_static_var(&panel(&returns, None)?).map_err(err)?;
    Ok((to_rows(&s.beta), to_rows(&s.sigma)))
}

#[pyclass(name = "Fevd", frozen)]
struct PyFevd {
    inner: connectedness::FevdMatrix,
}

#[pymethods]
impl PyFevd {
    #[getter]
    fn shares(&self) -> Rows {
        to_rows(&self.inner.shares)
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.labels.clone()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon
    }

    fn summary(&self) -> PySummary {
        PySummary {
            inner: connectedness::summarize(&self.inner),
        }
    }

    /// Undirected pairwise-spillover network as (source, target, weight).
    fn correlation_network(&self) -> Vec<(String, String, f64)> {
        edge_list(&network::correlation_network(&self.inner))
    }

    fn __repr__(&self) -> String {
        format!("Fevd(n={}, horizon={})", self.inner.n(), self.inner.horizon)
    }
}

fn edge_list(g: &network::SpilloverGraph) -> Vec<(String, String, f64)> {
    g.edges.iter().map(|e| (e.source.clone(), e.target.clone(), e.weight)).collect()
}

#[pyclass(name = "Summary", frozen)]
struct PySummary {
    inner: connectedness::SpilloverSummary,
}

#[pymethods]
impl PySummary {
    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.labels.clone()
    }

    #[getter]
    fn tci(&self) -> f64 {
        self.inner.tci
    }

    #[getter]
    fn to(&self) -> Vec<f64> {
        self.inner.to.clone()
    }

    #[getter(from_)]
    fn from_(&self) -> Vec<f64> {
        self.inner.from.clone()
    }

    #[getter]
    fn net(&self) -> Vec<f64> {
        self.inner.net.clone()
    }

    #[getter]
    fn npdc(&self) -> Rows {
        to_rows(&self.inner.npdc)
    }

    #[getter]
    fn dom(&self) -> Vec<usize> {
        self.inner.dom.clone()
    }

    /// Directed edges with npdc above `threshold` percent.
    #[pyo3(signature = (threshold=network::DEFAULT_THRESHOLD))]
    fn net_network(&self, threshold: f64) -> PyResult<Vec<(String, String, f64)>> {
        Ok(edge_list(&network::net_spillover_network(&self.inner, threshold).map_err(err)?))
    }

    /// Minimum spanning tree on 1/|npdc| as (source, target, npdc, distance).
    fn minimum_spanning_tree(&self) -> PyResult<Vec<(String, String, f64, f64)>> {
        let t = network::minimum_spanning_tree(&self.inner).map_err(err)?;
        Ok(t.edges.iter().map(|e| (e.source.clone(), e.target.clone(), e.weight, e.distance)).collect())
    }

    fn __repr__(&self) -> String {
        format!("Summary(tci={:.3}, n={})", self.inner.tci, self.inner.labels.len())
    }
}

fn fevd_options(horizon: usize, sum_from: u8) -> PyResult<FevdOptions> {
    let sum_from = SumStart::from_index(sum_from).ok_or_else(|| PyValueError::new_err("sum_from must be 0 or 1"))?;
    Ok(FevdOptions { horizon, sum_from })
}

#[pyfunction]
#[pyo3(signature = (beta, sigma, horizon=5, sum_from=0, labels=None))]
fn gfevd(beta: Rows, sigma: Rows, horizon: usize, sum_from: u8, labels: Option<Vec<String>>) -> PyResult<PyFevd> {
    let s = matrix(&sigma)?;
    let f = connectedness::gfevd(&matrix(&beta)?, &s, &fevd_options(horizon, sum_from)?).map_err(err)?;
    let labels = default_labels(s.nrows(), labels);
    if labels.len() != s.nrows() {
        return Err(PyValueError::new_err("one label per series required"));
    }
    Ok(PyFevd {
        inner: f.with_labels(&labels),
    })
}

/// Summary of a share matrix given directly (rows must sum to one).
#[pyfunction]
#[pyo3(signature = (shares, labels=None))]
fn summarize(shares: Rows, labels: Option<Vec<String>>) -> PyResult<PySummary> {
    let m = matrix(&shares)?;
    let f = connectedness::FevdMatrix {
        labels: default_labels(m.nrows(), labels),
        shares: m,
        horizon: 0,
    };
    Ok(PySummary {
        inner: connectedness::summarize(&f),
    })
}

#[pyclass(name = "TvpPath", frozen)]
struct PyTvpPath {
    inner: tvpvar::TvpVarPath,
}

#[pymethods]
impl PyTvpPath {
    fn __len__(&self) -> usize {
        self.inner.states.len()
    }

    fn betas(&self) -> Vec<Rows> {
        self.inner.states.iter().map(|s| to_rows(&s.beta)).collect()
    }

    fn sigmas(&self) -> Vec<Rows> {
        self.inner.states.iter().map(|s| to_rows(&s.sigma)).collect()
    }

    /// Index of the first observation of each state in the input panel.
    fn times(&self) -> Vec<usize> {
        self.inner.states.iter().map(|s| s.t).collect()
    }

    /// Dynamic TCI per state.
    #[pyo3(signature = (horizon=5, sum_from=0))]
    fn dynamic_tci(&self, horizon: usize, sum_from: u8) -> PyResult<Vec<f64>> {
        let s = connectedness::dynamic_indices(&self.inner, &fevd_options(horizon, sum_from)?).map_err(err)?;
        Ok(s.tci)
    }
}

#[pyfunction]
#[pyo3(signature = (returns, kappa1=tvpvar::DEFAULT_KAPPA1, kappa2=tvpvar::DEFAULT_KAPPA2, burn_in=tvpvar::DEFAULT_PRIOR_WINDOW))]
fn fit_tvp_var(returns: Rows, kappa1: f64, kappa2: f64, burn_in: usize) -> PyResult<PyTvpPath> {
    let cfg = tvpvar::TvpVarConfig {
        kappa1,
        kappa2,
        lags: 1,
        prior: tvpvar::PriorSpec::TrainingSample {
            window: burn_in,
            beta_cov_scale: tvpvar::DEFAULT_BETA_COV_SCALE,
        },
    };
    Ok(PyTvpPath {
        inner: tvpvar::fit_tvp_var(&panel(&returns, None)?, &cfg).map_err(err)?,
    })
}

#[pyfunction]
fn quantile_regression(y: Vec<f64>, x: Rows, tau: f64) -> PyResult<Vec<f64>> {
    let b = qvar::quantile_regression(&DVector::from_vec(y), &matrix(&x)?, tau).map_err(err)?;
    Ok(b.iter().copied().collect())
}

#[pyfunction]
fn check_objective(y: Vec<f64>, x: Rows, beta: Vec<f64>, tau: f64) -> PyResult<f64> {
    Ok(qvar::check_objective(&DVector::from_vec(y), &matrix(&x)?, &DVector::from_vec(beta), tau))
}

/// Quantile VAR(1) with intercept on the full panel: dict with beta,
/// sigma, intercept and negative_fraction.
#[pyfunction]
fn fit_quantile_var<'py>(py: Python<'py>, returns: Rows, tau: f64) -> PyResult<Bound<'py, PyDict>> {
    let f = qvar::fit_quantile_var(&panel(&returns, None)?, tau, None).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("beta", to_rows(&f.beta_tau))?;
    out.set_item("sigma", to_rows(&f.sigma_tau))?;
    out.set_item("intercept", f.intercept_tau)?;
    out.set_item("negative_fraction", f.negative_fraction)?;
    Ok(out)
}

/// Simulated returns from a constant VAR(1); Student-t innovations when
/// `df` is given.
#[pyfunction]
#[pyo3(signature = (beta, sigma, length, seed, df=None))]
fn simulate(beta: Rows, sigma: Rows, length: usize, seed: u64, df: Option<f64>) -> PyResult<Rows> {
    let mut spec = synthdgp::DgpSpec::constant(matrix(&beta)?, matrix(&sigma)?, length, seed);
    if let Some(df) = df {
        spec = spec.with_innovation(synthdgp::Innovation::StudentT { df });
    }
    Ok(to_rows(&synthdgp::simulate(&spec).map_err(err)?.returns))
}

/// Runs a CLI subcommand against a TOML config; returns written paths.
#[pyfunction]
fn run(command: &str, config: &str) -> PyResult<Vec<String>> {
    let cfg = pipeline::RunConfig::load(config).map_err(err)?;
    let paths = match command {
        "diagnose" => pipeline::cmd_diagnose(&cfg),
        "static" => pipeline::cmd_static(&cfg),
        "dynamic" => pipeline::cmd_dynamic(&cfg).map(|r| r.outputs),
        "network" => pipeline::cmd_network(&cfg),
        "simulate" => pipeline::cmd_simulate(&cfg),
        other => return Err(PyValueError::new_err(format!("unknown command `{other}`"))),
    }
    .map_err(err)?;
    Ok(paths.iter().map(|p| p.display().to_string()).collect())
}

#[pymodule]
fn spillover_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFevd>()?;
    m.add_class::<PySummary>()?;
    m.add_class::<PyTvpPath>()?;
    m.add_function(wrap_pyfunction!(log_returns, m)?)?;
    m.add_function(wrap_pyfunction!(describe, m)?)?;
    m.add_function(wrap_pyfunction!(jarque_bera, m)?)?;
    m.add_function(wrap_pyfunction!(adf_test, m)?)?;
    m.add_function(wrap_pyfunction!(select_var_order, m)?)?;
    m.add_function(wrap_pyfunction!(fit_static_var, m)?)?;
    m.add_function(wrap_pyfunction!(fit_tvp_var, m)?)?;
    m.add_function(wrap_pyfunction!(gfevd, m)?)?;
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    m.add_function(wrap_pyfunction!(quantile_regression, m)?)?;
    m.add_function(wrap_pyfunction!(check_objective, m)?)?;
    m.add_function(wrap_pyfunction!(fit_quantile_var, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
