//! Subcommand drivers: config loading, per-level estimation and artifact
//! writing. The binary in `src/bin/spillover.rs` is a thin wrapper.
//!
//! Config files are TOML. Relative paths inside a config resolve against the
//! directory of the config file. Every command writes
//! `manifest_<command>.json` next to its outputs.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::connectedness::{
    dynamic_indices_partial, gfevd, summarize, ConnectednessError, DynamicIndexSeries, FevdMatrix, FevdOptions,
    SpilloverSummary, SumStart,
};
use crate::dataset::{self, align, fill_missing, ingest_csv, log_returns, DatasetError, ReturnPanel};
use crate::diagnostics::{describe, DiagnosticsError};
use crate::network::{
    correlation_network, export_graph, minimum_spanning_tree, net_spillover_network, GraphFormat, NetworkError,
};
use crate::qvar::{fit_quantile_var, rolling_quantile_var, QuantileError};
use crate::synthdgp::{simulate, DgpError, DgpSpec};
use crate::tvpvar::{fit_static_var, fit_tvp_var, EstimationError, PriorSpec, TvpVarConfig, DEFAULT_BETA_COV_SCALE};

pub const MAX_HORIZON: usize = 30;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("data: {0}")]
    Dataset(#[from] DatasetError),
    #[error("diagnostics for series `{series}`: {source}")]
    Diagnostics {
        series: String,
        #[source]
        source: DiagnosticsError,
    },
    #[error("level {level}, {stage}: {source}")]
    Stage {
        level: String,
        stage: &'static str,
        #[source]
        source: StageError,
    },
    #[error("network: {0}")]
    Network(#[from] NetworkError),
    #[error("simulation: {0}")]
    Dgp(#[from] DgpError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Quantile(#[from] QuantileError),
    #[error(transparent)]
    Connectedness(#[from] ConnectednessError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

pub type Result<T> = std::result::Result<T, Error>;

fn stage<'a, E: Into<StageError>>(level: &'a Level, stage: &'static str) -> impl FnOnce(E) -> Error + 'a {
    move |e| Error::Stage {
        level: level.name(),
        stage,
        source: e.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(PathBuf),
    Many(Vec<PathBuf>),
}

fn one_or_many<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<PathBuf>, D::Error> {
    Ok(match Option::<OneOrMany>::deserialize(d)? {
        None => Vec::new(),
        Some(OneOrMany::One(p)) => vec![p],
        Some(OneOrMany::Many(v)) => v,
    })
}

/// Run configuration. Every key is optional; defaults follow the
/// conventional connectedness settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// One price CSV or several; several are aligned on the union calendar.
    #[serde(deserialize_with = "one_or_many")]
    pub input: Vec<PathBuf>,
    pub date_column: String,
    /// Series to analyse, in output order. Empty selects all columns.
    pub value_columns: Vec<String>,
    pub max_lookback: usize,
    /// Observations consumed by the TVP-VAR training-sample prior.
    pub burn_in: usize,
    pub horizon: usize,
    pub kappa1: f64,
    pub kappa2: f64,
    pub quantiles: Vec<f64>,
    /// Include the conditional-mean level alongside the quantile levels.
    pub include_mean: bool,
    pub window: usize,
    pub step: usize,
    /// Net-network edge threshold in percent.
    pub threshold: f64,
    pub out: PathBuf,
    /// First VMA term in the variance sums: 0 (impact) or 1.
    pub fevd_sum_from: u8,
    /// Also run the dynamic analysis at `robustness_horizon`.
    pub robustness: bool,
    pub robustness_horizon: usize,
    pub formats: Vec<GraphFormat>,
    pub full_precision: bool,
    /// Write every dated FEVD matrix next to the dynamic series.
    pub dump_fevd: bool,
    /// Save the filtered TVP-VAR path as JSON.
    pub checkpoint: bool,
    pub simulate: Option<SimulateConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(flatten)]
    pub spec: DgpSpec,
    /// Output file; defaults to `<out>/simulated_prices.csv`.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_base_price")]
    pub base_price: f64,
}

fn default_base_price() -> f64 {
    100.0
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: Vec::new(),
            date_column: "date".into(),
            value_columns: Vec::new(),
            max_lookback: dataset::DEFAULT_MAX_LOOKBACK,
            burn_in: crate::tvpvar::DEFAULT_PRIOR_WINDOW,
            horizon: crate::connectedness::DEFAULT_HORIZON,
            kappa1: crate::tvpvar::DEFAULT_KAPPA1,
            kappa2: crate::tvpvar::DEFAULT_KAPPA2,
            quantiles: vec![0.5, 0.05, 0.95],
            include_mean: true,
            window: 200,
            step: 1,
            threshold: crate::network::DEFAULT_THRESHOLD,
            out: PathBuf::from("out"),
            fevd_sum_from: 0,
            robustness: false,
            robustness_horizon: 10,
            formats: vec![GraphFormat::Graphml, GraphFormat::Dot, GraphFormat::Json],
            full_precision: false,
            dump_fevd: false,
            checkpoint: false,
            simulate: None,
        }
    }
}

/// Command-line overrides of config keys.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub horizon: Option<usize>,
    pub quantiles: Option<Vec<f64>>,
    pub window: Option<usize>,
    pub threshold: Option<f64>,
    pub out: Option<PathBuf>,
    pub full_precision: bool,
    pub robustness: bool,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses a config file and resolves its relative paths against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.input.iter_mut().for_each(fix);
        fix(&mut self.out);
        if let Some(out) = self.simulate.as_mut().and_then(|s| s.output.as_mut()) {
            fix(out);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(h) = o.horizon {
            self.horizon = h;
        }
        if let Some(q) = &o.quantiles {
            self.quantiles = q.clone();
        }
        if let Some(w) = o.window {
            self.window = w;
        }
        if let Some(t) = o.threshold {
            self.threshold = t;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        self.full_precision |= o.full_precision;
        self.robustness |= o.robustness;
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (key, h) in [("horizon", self.horizon), ("robustness_horizon", self.robustness_horizon)] {
            if !(1..=MAX_HORIZON).contains(&h) {
                return bad(format!("{key} = {h} outside 1..={MAX_HORIZON}"));
            }
        }
        for (key, k) in [("kappa1", self.kappa1), ("kappa2", self.kappa2)] {
            if !(k > 0.9 && k <= 1.0) {
                return bad(format!("{key} = {k} outside (0.9, 1]"));
            }
        }
        if let Some(q) = self.quantiles.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
            return bad(format!("quantile {q} outside (0, 1)"));
        }
        if self.quantiles.is_empty() && !self.include_mean {
            return bad("no levels requested".into());
        }
        if self.step == 0 {
            return bad("step must be >= 1".into());
        }
        if !(self.threshold >= 0.0) {
            return bad(format!("threshold = {} must be non-negative", self.threshold));
        }
        if SumStart::from_index(self.fevd_sum_from).is_none() {
            return bad(format!("fevd_sum_from = {} must be 0 or 1", self.fevd_sum_from));
        }
        Ok(())
    }

    pub fn levels(&self) -> Vec<Level> {
        let mean = self.include_mean.then_some(Level::Mean);
        mean.into_iter().chain(self.quantiles.iter().map(|&q| Level::Quantile(q))).collect()
    }

    fn fevd_options(&self, horizon: usize) -> FevdOptions {
        FevdOptions {
            horizon,
            sum_from: SumStart::from_index(self.fevd_sum_from).unwrap_or_default(),
        }
    }

    fn horizons(&self) -> Vec<usize> {
        let mut h = vec![self.horizon];
        if self.robustness && self.robustness_horizon != self.horizon {
            h.push(self.robustness_horizon);
        }
        h
    }
}

/// Conditional mean or a conditional quantile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Level {
    Mean,
    Quantile(f64),
}

impl Level {
    /// File-name tag: `mean`, `q0.05`, `q0.50`, ...
    pub fn name(&self) -> String {
        match *self {
            Level::Mean => "mean".into(),
            Level::Quantile(q) => {
                let two = format!("{q:.2}");
                if two.parse::<f64>() == Ok(q) {
                    format!("q{two}")
                } else {
                    format!("q{q}")
                }
            }
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Reads, aligns, fills and differences the configured inputs.
pub fn load_returns(cfg: &RunConfig) -> Result<ReturnPanel> {
    if cfg.input.is_empty() {
        return Err(Error::Config("no input file given".into()));
    }
    let panels = cfg
        .input
        .iter()
        .map(|p| ingest_csv(p, &cfg.date_column, &[]))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut prices = align(&panels)?;
    if !cfg.value_columns.is_empty() {
        let order = cfg
            .value_columns
            .iter()
            .map(|c| {
                prices
                    .series_names
                    .iter()
                    .position(|n| n == c)
                    .ok_or_else(|| DatasetError::MissingColumn(c.clone()))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        prices = prices.select_columns(&order);
    }
    let filled = fill_missing(&prices, cfg.max_lookback)?;
    let returns = log_returns(&filled)?;
    info!("loaded {} series x {} returns", returns.n_series(), returns.len());
    Ok(returns)
}

fn demeaned(panel: &ReturnPanel) -> ReturnPanel {
    let mut out = panel.clone();
    for mut col in out.returns.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    out
}

/// Full-sample FEVD at one level: OLS VAR(1) on demeaned returns for the
/// mean, quantile VAR for a quantile.
pub fn static_fevd(panel: &ReturnPanel, level: &Level, opts: &FevdOptions) -> Result<FevdMatrix> {
    let (beta, sigma): (DMatrix<f64>, DMatrix<f64>) = match *level {
        Level::Mean => {
            let s = fit_static_var(&demeaned(panel)).map_err(stage(level, "VAR estimation"))?;
            (s.beta, s.sigma)
        }
        Level::Quantile(q) => {
            let f = fit_quantile_var(panel, q, None).map_err(stage(level, "quantile VAR estimation"))?;
            (f.beta_tau, f.sigma_tau)
        }
    };
    let f = gfevd(&beta, &sigma, opts).map_err(stage(level, "GFEVD"))?;
    Ok(f.with_labels(&panel.series_names))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(io_err(path))
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    package: &'static str,
    version: &'static str,
    pipeline_order: &'static str,
    rng: &'static str,
    config_sha256: String,
    config: &'a RunConfig,
    inputs: Vec<HashedFile>,
    outputs: Vec<HashedFile>,
}

#[derive(Debug, Serialize)]
struct HashedFile {
    path: String,
    sha256: String,
}

fn hash_file(path: &Path, strip: Option<&Path>) -> Result<HashedFile> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let shown = strip.and_then(|s| path.strip_prefix(s).ok()).unwrap_or(path);
    Ok(HashedFile {
        path: shown.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

/// Writes `manifest_<command>.json` listing hashes of the effective config,
/// inputs and outputs. Output paths are relative to the output directory.
fn write_manifest(cfg: &RunConfig, command: &str, outputs: &[PathBuf]) -> Result<PathBuf> {
    let config_json = serde_json::to_string(cfg)?;
    let manifest = Manifest {
        command,
        package: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        pipeline_order: dataset::PIPELINE_ORDER,
        rng: "ChaCha20 (rand_chacha 0.9), seed_from_u64",
        config_sha256: sha256_hex(config_json.as_bytes()),
        config: cfg,
        inputs: cfg.input.iter().map(|p| hash_file(p, None)).collect::<Result<_>>()?,
        outputs: outputs.iter().map(|p| hash_file(p, Some(&cfg.out))).collect::<Result<_>>()?,
    };
    let path = cfg.out.join(format!("manifest_{command}.json"));
    write_file(&path, &serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

fn fmt_num(v: f64, full: bool) -> String {
    if full {
        format!("{v}")
    } else {
        let r = format!("{v:.1}");
        if r == "-0.0" {
            "0.0".into()
        } else {
            r
        }
    }
}

/// Spillover table: N x N shares in percent with a FROM column, then TO,
/// NET and DOM rows. The TCI sits in the last column of the DOM row, below
/// a `TCI` marker.
pub fn spillover_table(fevd: &FevdMatrix, summary: &SpilloverSummary, full_precision: bool) -> String {
    let n = fevd.n();
    let f = |v: f64| fmt_num(v, full_precision);
    let mut lines = Vec::with_capacity(n + 4);
    let header: Vec<String> = std::iter::once(String::new())
        .chain(summary.labels.iter().cloned())
        .chain(std::iter::once("FROM".into()))
        .collect();
    lines.push(header);
    for i in 0..n {
        let mut row = vec![summary.labels[i].clone()];
        row.extend((0..n).map(|j| f(100.0 * fevd.shares[(i, j)])));
        row.push(f(summary.from[i]));
        lines.push(row);
    }
    let labeled = |name: &str, values: Vec<String>, tail: String| {
        std::iter::once(name.to_string()).chain(values).chain(std::iter::once(tail)).collect::<Vec<_>>()
    };
    lines.push(labeled("TO", summary.to.iter().map(|&v| f(v)).collect(), String::new()));
    lines.push(labeled("NET", summary.net.iter().map(|&v| f(v)).collect(), "TCI".into()));
    lines.push(labeled("DOM", summary.dom.iter().map(|d| d.to_string()).collect(), f(summary.tci)));
    let mut w = csv::WriterBuilder::new().flexible(false).from_writer(Vec::new());
    for line in &lines {
        w.write_record(line).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
}

fn kurtosis_row(name: &str, d: &crate::diagnostics::SeriesDiagnostics, full: bool) -> Vec<String> {
    let g = |v: f64| if full { format!("{v}") } else { format!("{v:.6}") };
    vec![
        name.to_string(),
        g(d.mean),
        g(d.sd),
        g(d.skewness),
        g(d.excess_kurtosis + 3.0),
        g(d.jb_statistic),
        g(d.jb_pvalue),
        g(d.adf_statistic),
        d.adf_band.label().to_string(),
    ]
}

/// `diagnostics.csv`: one row per series. Kurtosis is the raw (Pearson)
/// kurtosis; `adf_p_band` brackets the ADF p-value by the 1/5/10% critical
/// values.
pub fn cmd_diagnose(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let panel = load_returns(cfg)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["series", "mean", "sd", "skewness", "kurtosis", "jb", "jb_p", "adf", "adf_p_band"])
        .expect("in-memory write");
    for (j, name) in panel.series_names.iter().enumerate() {
        let d = describe(&panel.column(j)).map_err(|source| Error::Diagnostics {
            series: name.clone(),
            source,
        })?;
        w.write_record(kurtosis_row(name, &d, cfg.full_precision)).expect("in-memory write");
    }
    ensure_dir(&cfg.out)?;
    let path = cfg.out.join("diagnostics.csv");
    write_file(&path, &String::from_utf8(w.into_inner().expect("flush")).expect("utf8"))?;
    let outputs = vec![path];
    write_manifest(cfg, "diagnose", &outputs)?;
    Ok(outputs)
}

fn static_results(cfg: &RunConfig, panel: &ReturnPanel) -> Result<Vec<(Level, FevdMatrix, SpilloverSummary)>> {
    let opts = cfg.fevd_options(cfg.horizon);
    let levels = cfg.levels();
    levels
        .par_iter()
        .map(|level| {
            let f = static_fevd(panel, level, &opts)?;
            let s = summarize(&f);
            info!("{level}: TCI {:.2}", s.tci);
            Ok((*level, f, s))
        })
        .collect()
}

/// `static_<level>.csv` per level.
pub fn cmd_static(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let panel = load_returns(cfg)?;
    let results = static_results(cfg, &panel)?;
    ensure_dir(&cfg.out)?;
    let mut outputs = Vec::new();
    for (level, f, s) in &results {
        let path = cfg.out.join(format!("static_{}.csv", level.name()));
        write_file(&path, &spillover_table(f, s, cfg.full_precision))?;
        outputs.push(path);
    }
    write_manifest(cfg, "static", &outputs)?;
    Ok(outputs)
}

/// Dynamic series of one level and horizon, as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicFile {
    pub level: String,
    #[serde(flatten)]
    pub series: DynamicIndexSeries,
}

#[derive(Debug, Serialize)]
struct FevdDump {
    date: chrono::NaiveDate,
    shares: Vec<Vec<f64>>,
}

/// Outcome of a dynamic run. `failed_dates` counts dates whose FEVD could
/// not be evaluated; such dates are missing from the series.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicReport {
    pub outputs: Vec<PathBuf>,
    pub failed_dates: usize,
}

impl DynamicReport {
    pub fn is_complete(&self) -> bool {
        self.failed_dates == 0
    }
}

enum LevelPath {
    Tvp(crate::tvpvar::TvpVarPath),
    Rolling(Vec<crate::qvar::QuantileVarFit>),
}

fn estimate_path(cfg: &RunConfig, panel: &ReturnPanel, level: &Level) -> Result<LevelPath> {
    Ok(match *level {
        Level::Mean => {
            let tvp = TvpVarConfig {
                kappa1: cfg.kappa1,
                kappa2: cfg.kappa2,
                lags: 1,
                prior: PriorSpec::TrainingSample {
                    window: cfg.burn_in,
                    beta_cov_scale: DEFAULT_BETA_COV_SCALE,
                },
            };
            LevelPath::Tvp(fit_tvp_var(panel, &tvp).map_err(stage(level, "TVP-VAR filter"))?)
        }
        Level::Quantile(q) => LevelPath::Rolling(
            rolling_quantile_var(panel, q, cfg.window, cfg.step).map_err(stage(level, "rolling quantile VAR"))?,
        ),
    })
}

/// `dynamic_<level>_h<H>.json` per level and horizon, plus optional
/// `fevd_<level>_h<H>.json` dumps and a `tvp_path_mean.json` checkpoint.
pub fn cmd_dynamic(cfg: &RunConfig) -> Result<DynamicReport> {
    cfg.validate()?;
    let panel = load_returns(cfg)?;
    let levels = cfg.levels();
    let paths: Vec<LevelPath> = levels
        .par_iter()
        .map(|level| estimate_path(cfg, &panel, level))
        .collect::<Result<_>>()?;
    ensure_dir(&cfg.out)?;
    let mut outputs = Vec::new();
    let mut failed_dates = 0;
    for (level, path) in levels.iter().zip(&paths) {
        if let (true, LevelPath::Tvp(p)) = (cfg.checkpoint, path) {
            let file = cfg.out.join(format!("tvp_path_{}.json", level.name()));
            p.save_json(&file).map_err(stage(level, "checkpoint"))?;
            outputs.push(file);
        }
        for h in cfg.horizons() {
            let opts = cfg.fevd_options(h);
            let run = match path {
                LevelPath::Tvp(p) => dynamic_indices_partial(p, &opts),
                LevelPath::Rolling(fits) => dynamic_indices_partial(fits.as_slice(), &opts),
            };
            for f in &run.failures {
                warn!("{level}, H={h}: {}: {}", f.date, f.error);
            }
            failed_dates += run.failures.len();
            if run.series.dates.is_empty() {
                return Err(stage(level, "dynamic indices")(ConnectednessError::Empty));
            }
            let file = cfg.out.join(format!("dynamic_{}_h{h}.json", level.name()));
            let body = DynamicFile {
                level: level.name(),
                series: run.series,
            };
            write_file(&file, &serde_json::to_string(&body)?)?;
            outputs.push(file);
            if cfg.dump_fevd {
                let dump: Vec<FevdDump> = body
                    .series
                    .dates
                    .iter()
                    .zip(&run.fevds)
                    .map(|(&date, f)| FevdDump {
                        date,
                        shares: crate::linalg::rows::to_rows(&f.shares),
                    })
                    .collect();
                let file = cfg.out.join(format!("fevd_{}_h{h}.json", level.name()));
                write_file(&file, &serde_json::to_string(&dump)?)?;
                outputs.push(file);
            }
        }
    }
    write_manifest(cfg, "dynamic", &outputs)?;
    Ok(DynamicReport { outputs, failed_dates })
}

/// `{level}_{correlation,net,mst}.{ext}` per level and configured format.
pub fn cmd_network(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let panel = load_returns(cfg)?;
    let results = static_results(cfg, &panel)?;
    ensure_dir(&cfg.out)?;
    let mut outputs = Vec::new();
    for (level, f, s) in &results {
        let net = net_spillover_network(s, cfg.threshold).map_err(stage(level, "net network"))?;
        let mst = minimum_spanning_tree(s).map_err(stage(level, "minimum spanning tree"))?;
        let graphs = [("correlation", correlation_network(f)), ("net", net), ("mst", mst.to_graph())];
        for (kind, g) in &graphs {
            for &format in &cfg.formats {
                let path = cfg.out.join(format!("{}_{kind}.{}", level.name(), format.extension()));
                export_graph(g, format, &path)?;
                outputs.push(path);
            }
        }
    }
    write_manifest(cfg, "network", &outputs)?;
    Ok(outputs)
}

/// Simulates the `[simulate]` spec and writes prices from `base_price`.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let sim = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| Error::Config("missing [simulate] section".into()))?;
    let panel = simulate(&sim.spec)?;
    let path = sim.output.clone().unwrap_or_else(|| cfg.out.join("simulated_prices.csv"));
    if let Some(dir) = path.parent() {
        ensure_dir(dir)?;
    }
    ensure_dir(&cfg.out)?;
    panel.to_prices(sim.base_price).write_csv(&path)?;
    let outputs = vec![path];
    let mut manifest_cfg = cfg.clone();
    manifest_cfg.input.clear();
    write_manifest(&manifest_cfg, "simulate", &outputs)?;
    Ok(outputs)
}
