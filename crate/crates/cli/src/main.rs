//! `spiked-edgeworth`: density, accuracy-table and moment experiments, plus
//! spike-count estimation on user data.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 bad flags or config,
//! 3 malformed input data.

mod commands;
mod config;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Numerical(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "spiked-edgeworth", version, about = "Edgeworth-corrected spiked eigenvalue experiments")]
struct Cli {
    /// Config file (key = value lines or a JSON object); flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (default: EDGEWORTH_WORKERS, else all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the standardized spiked eigenvalue and fit Edgeworth curves.
    Density(DensityArgs),
    /// Exact-recovery rates of the spike-count estimator for an accuracy table.
    Table(TableArgs),
    /// Replicate means of the moment estimators on pure noise.
    Moments(MomentsArgs),
    /// Estimate the number of spikes in a data file.
    Spikes(SpikesArgs),
}

#[derive(Debug, Args)]
pub struct DensityArgs {
    /// Experimental setting 1..=9.
    #[arg(long)]
    pub setting: Option<u8>,
    #[arg(long)]
    pub dist: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Dimension of the sample covariance matrix.
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `oracle` or `plugin`.
    #[arg(long)]
    pub coefficients: Option<String>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub lo: Option<f64>,
    #[arg(long)]
    pub hi: Option<f64>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    /// Table id 2..=6.
    #[arg(long)]
    pub table: Option<u8>,
    /// `all` or a list of cells such as "(10,100)(20,200)".
    #[arg(long)]
    pub rows: Option<String>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated subset of jbe, yje, jb, yj, or `all`.
    #[arg(long)]
    pub methods: Option<String>,
    #[arg(long)]
    pub r0: Option<usize>,
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub bootstrap_size: Option<usize>,
    /// `edge` or `theta`.
    #[arg(long)]
    pub gate: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MomentsArgs {
    #[arg(long)]
    pub dist: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for moments.csv; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SpikesArgs {
    /// Headerless CSV, one observation per row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// One of jbe, yje, jb, yj.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub r0: Option<usize>,
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub bootstrap_size: Option<usize>,
    /// `edge` or `theta`.
    #[arg(long)]
    pub gate: Option<String>,
    /// Report file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn workers(flag: Option<usize>, cfg: &RunConfig) -> Result<Option<usize>, CliError> {
    if let Some(w) = cfg.pick(flag, "workers")? {
        return Ok(Some(w));
    }
    match std::env::var("EDGEWORTH_WORKERS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("EDGEWORTH_WORKERS = '{v}' is not a count"))),
        _ => Ok(None),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = cfg.pick::<u32>(None, "schema_version")? {
        if v != spiked_edgeworth::output::CSV_SCHEMA_VERSION {
            return Err(CliError::Usage(format!(
                "schema_version {v} is not supported (this build writes {})",
                spiked_edgeworth::output::CSV_SCHEMA_VERSION
            )));
        }
    }
    let workers = workers(cli.workers, &cfg)?;
    if workers == Some(0) {
        return Err(CliError::Usage("workers must be at least 1".into()));
    }
    match cli.command {
        Command::Density(a) => commands::density(&a, &cfg, workers),
        Command::Table(a) => commands::table(&a, &cfg, workers),
        Command::Moments(a) => commands::moments(&a, &cfg, workers),
        Command::Spikes(a) => commands::spikes(&a, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("spiked-edgeworth: {e}");
            ExitCode::from(e.code())
        }
    }
}
