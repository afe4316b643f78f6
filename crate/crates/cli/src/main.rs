//! `kvsim`: command-line front end for the serving simulator.
//!
//! Four subcommands cover the workflow end to end: `gen-trace` writes
//! synthetic request traces, `simulate` runs one policy over a trace and
//! emits a report directory, `sweep` runs a parameter grid in parallel and
//! merges the results into one comparison table, and `analyze` computes the
//! closed-form memory and penalty figures (and validates them against a
//! finished run).
//!
//! Exit codes: 0 success, 1 usage error, 2 input or validation error,
//! 3 simulation abort. Log verbosity comes from the `KVSIM_LOG` environment
//! variable (`error`, `warn`, `info`, `debug`, `trace`).

mod analyze;
mod config;
mod gen_trace;
mod output;
mod simulate;
mod sweep;

use std::fmt;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "kvsim",
    version,
    about = "Discrete-event simulator for length-speculative LLM serving",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic request trace (one JSON record per line).
    GenTrace(gen_trace::GenTraceArgs),
    /// Run one policy over a trace and write a report directory.
    #[command(after_help = output::columns_help())]
    Simulate(simulate::SimulateArgs),
    /// Run a parameter grid in parallel and merge results into comparison.csv.
    #[command(after_help = output::comparison_help())]
    Sweep(sweep::SweepArgs),
    /// Closed-form memory/penalty figures for a trace, or validation of a run.
    Analyze(analyze::AnalyzeArgs),
}

/// An error in how the tool was invoked, as opposed to bad input data:
/// maps to exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    if let Some(kvsim_core::Error::Unschedulable { .. }) = err.downcast_ref::<kvsim_core::Error>() {
        return 3;
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Remap clap's exit convention onto ours: help and version are
            // successes, everything else is a usage error.
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KVSIM_LOG", "warn")).init();

    let result = match cli.command {
        Command::GenTrace(args) => gen_trace::run(&args),
        Command::Simulate(args) => simulate::run(&args),
        Command::Sweep(args) => sweep::run(&args),
        Command::Analyze(args) => analyze::run(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
