//! Batch experiment orchestration: single seeded runs, parameter sweeps,
//! and figure-data extraction from result directories.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit code 2: configuration problems; exit code 1: I/O problems.
#[derive(Debug)]
pub enum AppError {
    Config(String),
    Io(String),
}

impl AppError {
    fn code(&self) -> u8 {
        match self {
            AppError::Config(_) => 2,
            AppError::Io(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            AppError::Config(m) | AppError::Io(m) => m,
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Io(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "edge-multiai",
    about = "Deterministic multi-tenant model serving simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one seeded simulation end to end and write its artifacts.
    Run(RunArgs),
    /// Run a sweep specification: axis values x policies x repetitions.
    Sweep(SweepArgs),
    /// Pivot a directory of run reports into figure-ready CSV tables.
    Report(ReportArgs),
}

#[derive(Args, Clone)]
struct Overrides {
    /// Eviction policy: none, lfe, bfe, ws-bfe, iws-bfe.
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Prediction deviation knob in [0, 1].
    #[arg(long)]
    deviation: Option<f64>,
    #[arg(long)]
    mean_concurrency: Option<f64>,
    /// Window width scale in [0, 2].
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    budget_mb: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario JSON; the bundled five-application scenario when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    /// Output directory (default: $EDGE_MULTIAI_OUT or ./results).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format: csv, json, or both when omitted.
    #[arg(long)]
    format: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep specification JSON.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for independent runs (default: available cores).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    format: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory containing run artifacts (searched recursively).
    #[arg(long)]
    results: PathBuf,
    /// Output directory for the figure tables (default: the results dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => commands::cmd_run(args),
        Command::Sweep(args) => commands::cmd_sweep(args),
        Command::Report(args) => commands::cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
