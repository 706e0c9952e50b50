use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

mod commands;
mod config;

use config::{FileConfig, FloatList, SystemKind, TerminalWeight, UsizeList};

/// Bad flags, bad config, or an invalid combination of options (exit 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(
    name = "quattro",
    version,
    about = "Transformer-accelerated iLQR toolkit"
)]
struct Cli {
    /// Plain-text `key = value` file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample initial states, run vanilla iLQR MPC from each, write a QDTA dataset.
    GenData(GenDataArgs),
    /// Simulate one closed-loop run and write its trace.
    Run(RunArgs),
    /// Compare hybrid and full updates on every dataset record.
    Eval(EvalArgs),
    /// Time the phases of vanilla and hybrid iterations.
    Bench(BenchArgs),
}

/// Options shared by every subcommand.
#[derive(Args, Debug, Clone, Default)]
pub struct Problem {
    #[arg(long)]
    pub system: Option<SystemKind>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Computed and predicted backward steps, `S:P`.
    #[arg(long)]
    pub split: Option<String>,
    /// Diagonal of the running state weight.
    #[arg(long)]
    pub q: Option<FloatList>,
    /// Diagonal of the control weight.
    #[arg(long)]
    pub r: Option<FloatList>,
    /// Terminal weight as a multiple of Q, or `lqr`.
    #[arg(long)]
    pub qf_scale: Option<TerminalWeight>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub problem: Problem,
    /// grid | lhs
    #[arg(long)]
    pub sampling: Option<String>,
    /// Number of LHS samples.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub sim_seconds: Option<f64>,
    #[arg(long)]
    pub control_interval: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub problem: Problem,
    /// ilqr | quattro | blended
    #[arg(long)]
    pub controller: Option<String>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub sim_seconds: Option<f64>,
    #[arg(long)]
    pub control_interval: Option<usize>,
    /// Initial state, comma-separated.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<FloatList>,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub blend_low: Option<f64>,
    #[arg(long)]
    pub blend_high: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub problem: Problem,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Predict with the exact full-pass gains instead of a model.
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub problem: Problem,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    /// Extra full backward-pass timings for these horizons, comma-separated.
    #[arg(long)]
    pub sweep: Option<UsizeList>,
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<FloatList>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let file = match cli.config.as_deref().map(FileConfig::load).transpose() {
        Ok(f) => f.unwrap_or_default(),
        Err(e) => return usage_exit(&e),
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a, &file),
        Command::Run(a) => commands::run(a, &file),
        Command::Eval(a) => commands::eval(a, &file),
        Command::Bench(a) => commands::bench(a, &file),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => match e.downcast_ref::<UsageError>() {
            Some(u) => usage_exit(u),
            None => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        },
    }
}

fn usage_exit(e: &UsageError) -> ExitCode {
    eprintln!("error: {e}\n\n{}", Cli::command().render_usage());
    ExitCode::from(2)
}
