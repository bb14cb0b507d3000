//! `hoc`: generate synthetic noisy datasets, estimate transition matrices,
//! train with forward correction, and run estimation sweeps.

mod commands;
mod settings;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hoc::HocError;

#[derive(Parser, Debug)]
#[command(name = "hoc", version, about = "Label-noise transition matrix estimation from 2-NN consensus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Flat key=value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides `seed` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for output files.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct EstimateArgs {
    /// Dataset directory or manifest.
    pub data: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Sampling rounds G.
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Centers sampled per round |E|.
    #[arg(long)]
    pub sample_size: Option<usize>,
    /// Row-completion weight for local estimates.
    #[arg(long)]
    pub zeta: Option<f64>,
    /// Also estimate local matrices (see `local_size`, `local_rounds`).
    #[arg(long)]
    pub local: bool,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Dataset directory or manifest.
    pub data: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
    /// `none`, `truth`, or a matrix file.
    #[arg(long)]
    pub correction: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Model directory written by `train`.
    #[arg(long, requires = "data")]
    pub model: Option<PathBuf>,
    /// Dataset scored against its clean labels.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Estimated transition matrix file.
    #[arg(long, requires = "truth")]
    pub estimate: Option<PathBuf>,
    /// Reference transition matrix file.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Add a wall-clock runtime column (makes the CSV run-dependent).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic clusterable dataset with injected label noise.
    Generate(CommonArgs),
    /// Estimate the global transition matrix and clean prior.
    Estimate(EstimateArgs),
    /// Estimate the global matrix, then local matrices on neighborhoods.
    EstimateLocal(EstimateArgs),
    /// Train a linear classifier, optionally forward-corrected.
    Train(TrainArgs),
    /// Score a model on clean labels, or an estimate against a reference.
    Eval(EvalArgs),
    /// Estimation error over a grid of sample sizes or noise rates.
    Sweep(SweepArgs),
}

/// Invalid invocation or configuration (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<HocError>() {
        Some(HocError::Data(_) | HocError::Precondition(_)) => 3,
        Some(HocError::Numerical { .. }) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate(args) => commands::generate(&args),
        Command::Estimate(args) => commands::estimate(&args, args.local),
        Command::EstimateLocal(args) => commands::estimate(&args, true),
        Command::Train(args) => commands::train(&args),
        Command::Eval(args) => commands::eval(&args),
        Command::Sweep(args) => commands::sweep(&args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
