//! `stifflab` command-line front end.
//!
//! Exit codes: 0 success, 1 validation failure, 2 usage or configuration
//! error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "stifflab",
    version,
    about = "Stiffness-discrimination staircase simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Seed for every random stream; overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run simulated sessions; write one JSONL event log per session and summary.csv.
    Simulate {
        /// Session config (JSON). Defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        sessions: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Check where the staircase converges against Bernoulli and Weibull responders.
    ValidateConvergence {
        #[arg(long, default_value_t = 1000)]
        runs: usize,
        #[arg(long, default_value_t = stifflab::staircase::DOWN_UP_RATIO)]
        down_up_ratio: f64,
        #[arg(long, default_value_t = 3)]
        down_rule: u32,
        /// Also write the report as JSON to this file.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Write the per-trial staircase trace of one run as CSV.
    Trace {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Synthesize PQ and PT EMG for an exploration and write raw and envelope CSVs.
    EmgDemo {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Length of the demo signal in seconds.
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Recompute a session from its event log and check it against the recorded result.
    Replay {
        log: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn threads_from_env() -> Result<usize, CliError> {
    match std::env::var("STIFFLAB_THREADS") {
        Ok(v) => v.trim().parse().map_err(|_| {
            CliError::Usage(format!(
                "STIFFLAB_THREADS must be a non-negative integer, got {v:?}"
            ))
        }),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate {
            config,
            sessions,
            out,
            common,
        } => commands::simulate(
            config.as_deref(),
            sessions as usize,
            &out,
            common.seed,
            common.force,
            threads_from_env()?,
        ),
        Command::ValidateConvergence {
            runs,
            down_up_ratio,
            down_rule,
            out,
            common,
        } => commands::validate_convergence(
            runs,
            common.seed.unwrap_or(0),
            down_rule,
            down_up_ratio,
            out.as_deref(),
            common.force,
        ),
        Command::Trace {
            config,
            out,
            common,
        } => commands::trace(config.as_deref(), &out, common.seed, common.force),
        Command::EmgDemo {
            config,
            duration,
            out,
            common,
        } => commands::emg_demo(config.as_deref(), duration, &out, common.seed, common.force),
        Command::Replay { log, common } => commands::replay(&log, common.seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stifflab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
