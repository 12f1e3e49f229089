//! Command-line harness for orthogonal quantile regression experiments.
//!
//! Subcommands: `generate` writes a synthetic sample, `run` trains and
//! evaluates a method matrix over seeds, `figures` turns a run directory
//! into plot data, and `audit` scores an external intervals file.

pub mod audit;
pub mod config;
pub mod error;
pub mod figures;
pub mod generate;
pub mod run;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use oqr::data::SyntheticSpec;
use oqr::metrics::EvalConfig;

pub use config::{DatasetSource, MethodSpec, Overrides, RunConfig};
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "oqr",
    version,
    about = "Orthogonal quantile regression experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset and its oracle quantiles.
    Generate(GenerateArgs),
    /// Train and evaluate every method for every seed.
    Run(RunArgs),
    /// Extract plot data from a run directory.
    Figures(FiguresArgs),
    /// Score an intervals CSV produced elsewhere.
    Audit(AuditArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output CSV; the oracle sidecar is written next to it.
    #[arg(long, default_value = "synthetic.csv")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7000)]
    pub n: usize,
    /// Minority-group noise scale.
    #[arg(long, default_value_t = 3.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Miscoverage level of the oracle interval.
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run specification (TOML, or JSON by extension); defaults to the synthetic setup.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seeds: `0..30`, `0-29` or `1,2,3`.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: logical cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Multiplier for every penalized method.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Penalty of the treated methods: none, corr or hsic.
    #[arg(long)]
    pub penalty: Option<String>,
    /// Loss of every method: pinball or interval_score.
    #[arg(long)]
    pub loss: Option<String>,
    /// Also report split-conformal intervals.
    #[arg(long)]
    pub conformalize: bool,
}

#[derive(Debug, Args)]
pub struct FiguresArgs {
    /// Directory written by `run`.
    pub run_dir: PathBuf,
    /// Destination (default: `<run_dir>/figures`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Intervals CSV with `lo`, `hi`, `y` and feature columns.
    pub intervals: PathBuf,
    /// Baseline intervals on the same rows, for ILS metrics.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Seed of the slab directions.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the report as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RunArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seeds: self.seeds.clone(),
            out: self.out.clone(),
            jobs: self.jobs,
            gamma: self.gamma,
            penalty: self.penalty.clone(),
            loss: self.loss.clone(),
            conformalize: self.conformalize,
        }
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::new(DatasetSource::Synthetic {
                n: 7000,
                lambda: 3.0,
                seed: 1,
            }),
        };
        cfg.apply(&self.overrides())?;
        Ok(cfg)
    }
}

/// Write to stdout, treating a closed pipe as success.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::io("<stdout>", e)),
        _ => Ok(()),
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => {
            let report =
                generate::generate(&SyntheticSpec::new(a.n, a.lambda, a.seed), a.alpha, &a.out)?;
            emit(&serde_json::to_string_pretty(&report)?)?;
        }
        Command::Run(a) => {
            let summary = run::run(&a.resolve()?)?;
            for r in &summary.aggregate {
                emit(&format!(
                    "{} {}: coverage {:.4} length {:.4} corr {:.4} delta_wsc {:.4} ({} trials)",
                    r.dataset,
                    r.method,
                    r.mean.coverage,
                    r.mean.length,
                    r.mean.corr,
                    r.mean.delta_wsc,
                    r.trials
                ))?;
            }
            emit(&format!("wrote {}", summary.out.display()))?;
            if !summary.failures.is_empty() {
                for f in &summary.failures {
                    eprintln!("seed {} failed: {}", f.seed, f.error);
                }
                return Err(CliError::TrialsFailed {
                    failed: summary.failures.len(),
                    total: summary.seeds.len(),
                });
            }
        }
        Command::Figures(a) => {
            for p in figures::figures(&a.run_dir, a.out.as_deref())? {
                emit(&p.display().to_string())?;
            }
        }
        Command::Audit(a) => {
            let input = audit::load_intervals(&a.intervals)?;
            let baseline = a
                .baseline
                .as_deref()
                .map(audit::load_intervals)
                .transpose()?;
            let report = audit::audit(&input, baseline.as_ref(), &EvalConfig::default(), a.seed)?;
            if let Some(out) = &a.out {
                run::write_json(out, &report)?;
            }
            emit(&serde_json::to_string_pretty(&report)?)?;
        }
    }
    Ok(())
}

/// Parse arguments, run the command and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
