//! `fiekit` — command-line front end for the functional-estimation toolkit.
//!
//! ```text
//! fiekit simulate|estimate|certify|compare --config <path> [--jobs N] [--seed S] [--out DIR]
//! ```
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error. Failures
//! print a JSON object on standard error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CommandContext;
use config::RunConfig;

/// Command failure with the exit-code class it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration or arguments (exit code 2).
    Config(String),
    /// Failure while executing a valid configuration (exit code 1).
    Runtime(String),
}

impl CliError {
    pub fn config(message: String) -> Self {
        CliError::Config(message)
    }

    pub fn runtime(message: String) -> Self {
        CliError::Runtime(message)
    }
}

#[derive(Parser)]
#[command(
    name = "fiekit",
    version,
    about = "Functional estimation for discrete-time systems: estimate a function of the \
             state from noisy measurements"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate ground-truth trajectories and write them as CSV.
    Simulate(CommonArgs),
    /// Run an estimator over simulated measurements; writes estimate and
    /// timing CSVs.
    Estimate(CommonArgs),
    /// Verify observer conditions and build a Lyapunov certificate; writes
    /// certificate.json.
    Certify(CommonArgs),
    /// Run the optimization-based and deadbeat estimators side by side;
    /// writes per-seed CSVs and summary.json.
    Compare(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Worker pool size for Monte Carlo runs (default: one worker per core).
    #[arg(long)]
    jobs: Option<usize>,
    /// Replace the configured seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(command: &Command) -> Result<(), CliError> {
    let args = match command {
        Command::Simulate(a) | Command::Estimate(a) | Command::Certify(a) | Command::Compare(a) => {
            a
        }
    };
    let text = std::fs::read_to_string(&args.config).map_err(|e| {
        CliError::config(format!("config {}: {e}", args.config.display()))
    })?;
    let config = RunConfig::parse(&text)?;
    let out_dir = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.outputs.directory));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::config(format!("outputs.directory {}: {e}", out_dir.display())))?;
    let ctx = CommandContext {
        config,
        out_dir,
        jobs: args.jobs,
        override_seed: args.seed,
    };
    match command {
        Command::Simulate(_) => commands::cmd_simulate(&ctx),
        Command::Estimate(_) => commands::cmd_estimate(&ctx),
        Command::Certify(_) => commands::cmd_certify(&ctx),
        Command::Compare(_) => commands::cmd_compare(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Runtime(message)) => {
            eprintln!(
                "{}",
                serde_json::json!({"error": message, "kind": "runtime"})
            );
            ExitCode::from(1)
        }
        Err(CliError::Config(message)) => {
            eprintln!(
                "{}",
                serde_json::json!({"error": message, "kind": "config"})
            );
            ExitCode::from(2)
        }
    }
}
