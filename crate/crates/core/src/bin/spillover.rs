use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;
use spillover::pipeline::{self, Overrides, RunConfig};

/// Exit status when a dynamic run skipped some dates.
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(name = "spillover", version, about = "Connectedness and spillover analysis of return panels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Descriptive statistics, Jarque-Bera and ADF per series
    Diagnose(Common),
    /// Full-sample spillover tables per level
    Static(Common),
    /// Dynamic spillover index series per level
    Dynamic(Common),
    /// Correlation, net-spillover and MST graph files per level
    Network(Common),
    /// Write a synthetic price panel from the [simulate] section
    Simulate(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config file
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Comma-separated quantile levels
    #[arg(long, value_delimiter = ',')]
    quantiles: Option<Vec<f64>>,
    #[arg(long)]
    window: Option<usize>,
    /// Net-network threshold in percent
    #[arg(long)]
    threshold: Option<f64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Do not round table values to one decimal
    #[arg(long)]
    full_precision: bool,
    /// Also run the dynamic analysis at the robustness horizon
    #[arg(long)]
    robustness: bool,
}

impl Common {
    fn config(&self) -> pipeline::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        cfg.apply(&Overrides {
            horizon: self.horizon,
            quantiles: self.quantiles.clone(),
            window: self.window,
            threshold: self.threshold,
            out: self.out.clone(),
            full_precision: self.full_precision,
            robustness: self.robustness,
        });
        Ok(cfg)
    }
}

fn run(cli: Cli) -> pipeline::Result<ExitCode> {
    let (common, name) = match &cli.command {
        Command::Diagnose(c) => (c, "diagnose"),
        Command::Static(c) => (c, "static"),
        Command::Dynamic(c) => (c, "dynamic"),
        Command::Network(c) => (c, "network"),
        Command::Simulate(c) => (c, "simulate"),
    };
    let cfg = common.config()?;
    let outputs = match name {
        "diagnose" => pipeline::cmd_diagnose(&cfg)?,
        "static" => pipeline::cmd_static(&cfg)?,
        "network" => pipeline::cmd_network(&cfg)?,
        "simulate" => pipeline::cmd_simulate(&cfg)?,
        _ => {
            let report = pipeline::cmd_dynamic(&cfg)?;
            for p in &report.outputs {
                println!("{}", p.display());
            }
            if !report.is_complete() {
                error!("{} dated FEVD evaluations failed; series are incomplete", report.failed_dates);
                return Ok(ExitCode::from(EXIT_PARTIAL));
            }
            return Ok(ExitCode::SUCCESS);
        }
    };
    for p in &outputs {
        println!("{}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPILLOVER_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            let mut msg = format!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                if !msg.contains(&s.to_string()) {
                    msg.push_str(&format!(": {s}"));
                }
                src = s.source();
            }
            eprintln!("{msg}");
            ExitCode::FAILURE
        }
    }
}
