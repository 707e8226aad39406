//! `tsebct` command-line front end: generate → partition → balance → evaluate → report.

mod artifact;
mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_SOLVER: u8 = 4;

/// Bad flags or configuration values.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A solve that finished without meeting its tolerance.
#[derive(Debug)]
pub struct SolverFailure(pub String);

impl fmt::Display for SolverFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for SolverFailure {}

#[derive(Debug, Parser)]
#[command(name = "tsebct", version, about = "Temporal-spatial entropy balancing for continuous treatments")]
struct Cli {
    /// TOML configuration file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed recorded in every artifact and used by the generator and partitioner.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a synthetic dataset.
    Generate(commands::generate::GenerateArgs),
    /// Aggregate hexagonal cells into flexible grids.
    Partition(commands::partition::PartitionArgs),
    /// Solve for balancing weights.
    Balance(commands::balance::BalanceArgs),
    /// Correlation and uplift metrics for one dataset and several weightings.
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Merge evaluation files into comparison tables.
    Report(commands::evaluate::ReportArgs),
}

/// Column-name overrides shared by the data-reading commands.
#[derive(Debug, Args, Default)]
pub struct SchemaArgs {
    #[arg(long)]
    treatment_col: Option<String>,
    #[arg(long)]
    outcome_col: Option<String>,
    #[arg(long)]
    cell_col: Option<String>,
    #[arg(long)]
    time_col: Option<String>,
    #[arg(long)]
    binary_col: Option<String>,
    #[arg(long)]
    base_weight_col: Option<String>,
    /// Merge cells holding fewer rows than this fraction of the dataset (0 disables).
    #[arg(long)]
    min_stratum_fraction: Option<f64>,
}

impl SchemaArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let s = &mut cfg.schema;
        if let Some(v) = &self.treatment_col {
            s.treatment = v.clone();
        }
        if let Some(v) = &self.outcome_col {
            s.outcome = v.clone();
        }
        if let Some(v) = &self.cell_col {
            s.cell = v.clone();
        }
        if let Some(v) = &self.time_col {
            s.time = Some(v.clone());
        }
        if let Some(v) = &self.binary_col {
            s.binary_outcome = Some(v.clone());
        }
        if let Some(v) = &self.base_weight_col {
            s.base_weight = Some(v.clone());
        }
        if let Some(v) = self.min_stratum_fraction {
            cfg.strata.min_fraction = v;
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::Generate(args) => commands::generate::run(args, cfg),
        Command::Partition(args) => commands::partition::run(args, cfg),
        Command::Balance(args) => commands::balance::run(args, cfg),
        Command::Evaluate(args) => commands::evaluate::run(args, cfg),
        Command::Report(args) => commands::evaluate::report(args, cfg),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use tsebct::Error as E;
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    if err.downcast_ref::<SolverFailure>().is_some() {
        return EXIT_SOLVER;
    }
    match err.downcast_ref::<E>() {
        Some(E::InvalidConfig(_)) => EXIT_USAGE,
        Some(E::HessianSolve { .. } | E::NumericalFailure(_) | E::NoConvergence { .. }) => EXIT_SOLVER,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
