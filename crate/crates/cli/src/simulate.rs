//! `kvsim simulate`: one policy over one trace, report files into a
//! directory.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use kvsim_core::trace::{read_jsonl, TraceRecord};

use crate::config::ConfigArgs;
use crate::output::{run_summary_text, write_run_dir};

#[derive(Debug, clap::Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Input trace file (one JSON record per line).
    #[arg(long, value_name = "PATH")]
    pub trace: PathBuf,
    /// Output directory for the report files.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

/// Read and parse a trace file; parse errors carry the 1-based line number.
pub fn load_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_jsonl(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

pub fn run(args: &SimulateArgs) -> Result<()> {
    let trace = load_trace(&args.trace)?;
    let config = args.config.build()?;
    log::info!(
        "simulating {} requests under the {:?} policy",
        trace.len(),
        config.policy.mode
    );
    let report = kvsim_core::engine::run(&config, &trace)?;
    write_run_dir(&args.out, &config, &report)?;
    print!("{}", run_summary_text(&config, &report));
    Ok(())
}
