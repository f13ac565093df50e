//! `oddlaw`: certify, compare, simulate and sweep odd-function control laws
//! from a JSON analysis config.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Context;
use crate::config::AnalysisConfig;

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Io(String),
    Infeasible(String),
    Diverged(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) | CliError::Io(_) => 1,
            CliError::Infeasible(_) => 2,
            CliError::Diverged(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Infeasible(m) => write!(f, "not certified: {m}"),
            CliError::Diverged(m) => write!(f, "simulation diverged: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "oddlaw", version, about = "LMI certificates for linear plants under odd-function control laws")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify the configured law(s) and write report.json.
    Certify(Common),
    /// Linear versus nonlinear ultimate bounds and steady-state errors.
    Compare(Common),
    /// Simulate the configured laws and check runs against the certificates.
    Simulate(Common),
    /// Certify over a grid of function parameters and write sweep.csv.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides output.dir in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parallel workers for batch work.
    #[arg(long, default_value_t = default_workers())]
    workers: usize,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Use f̄² in the disturbance terms.
    #[arg(long)]
    strict_energy: bool,
    /// Finite stand-in for an unbounded region.
    #[arg(long)]
    region_cap: Option<f64>,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn run(command: Command) -> Result<(), CliError> {
    let (which, common) = match command {
        Command::Certify(c) => ("certify", c),
        Command::Compare(c) => ("compare", c),
        Command::Simulate(c) => ("simulate", c),
        Command::Sweep(c) => ("sweep", c),
    };
    let mut config = AnalysisConfig::from_path(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if common.strict_energy {
        config.options.strict_energy = true;
    }
    if let Some(cap) = common.region_cap {
        config.options.region_cap = cap;
    }
    let out = commands::out_dir(common.out.as_deref(), &config);
    let ctx = Context::new(config, out, common.workers)?;
    match which {
        "certify" => commands::certify(&ctx).map(drop),
        "compare" => commands::compare(&ctx).map(drop),
        "simulate" => commands::simulate_cmd(&ctx).map(drop),
        _ => commands::sweep(&ctx).map(drop),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
