//! `kvsim analyze`: the closed-form side of the toolkit.
//!
//! Two input shapes. With `--trace`, the configured predictor runs over the
//! requests (no simulation) and the command prints the reservation
//! arithmetic: the underutilization ratio ΣS_A/ΣS_P, the batch sizes the
//! memory budget supports under predicted and actual lengths, and the
//! expected eviction penalty. With `--run-dir`, a finished `simulate`
//! directory is checked against those same closed forms
//! (optionally against a baseline run for the batch-ratio comparison).

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use kvsim_core::supervisor::expected_pool_penalty;
use kvsim_core::{
    expected_batch_size, underutilization_ratio, validate_against_run, EngineConfig, PoolSummary,
    Predictor, RunReport, ValidationTolerances,
};

use crate::config::ConfigArgs;
use crate::simulate::load_trace;
use crate::UsageError;

#[derive(Debug, clap::Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Trace to run the predictor over (closed forms only, no simulation).
    #[arg(long, value_name = "PATH", conflicts_with = "run_dir")]
    pub trace: Option<PathBuf>,
    /// Finished `simulate` output directory to validate.
    #[arg(long, value_name = "DIR")]
    pub run_dir: Option<PathBuf>,
    /// Baseline run directory (an oracle run of the same trace) for the
    /// batch-size ratio comparison.
    #[arg(long, value_name = "DIR", requires = "run_dir")]
    pub baseline_dir: Option<PathBuf>,
}

pub fn run(args: &AnalyzeArgs) -> Result<()> {
    match (&args.trace, &args.run_dir) {
        (Some(trace), None) => analyze_trace(args, trace),
        (None, Some(run_dir)) => analyze_run_dir(args, run_dir),
        _ => Err(UsageError("pass either --trace or --run-dir".into()).into()),
    }
}

/// Predict every request, then print the reservation arithmetic.
fn analyze_trace(args: &AnalyzeArgs, trace_path: &Path) -> Result<()> {
    let records = load_trace(trace_path)?;
    let config = args.config.build()?;
    let mut spec = config.policy;
    spec.rng_seed = config.rng_seed;
    let mut predictor = Predictor::new(spec, config.scheme)?;

    let mut predicted = Vec::with_capacity(records.len());
    let mut actual = Vec::with_capacity(records.len());
    for record in &records {
        let request = record.to_request();
        request.validate(&config.model)?;
        let prediction = predictor.predict(&request, record.predicted_bucket)?;
        predicted.push(prediction.allocated_tokens);
        actual.push(record.output_tokens);
    }

    // A saturated batch fills the free memory, so the KV budget itself is
    // the a-priori estimate of resident batch bytes in the penalty formula.
    let kv_budget = config.gpu.kv_capacity_bytes(&config.model);
    let summary = PoolSummary::from_lengths(&predicted, &actual, &config.model, kv_budget as f64)?;
    let ratio = underutilization_ratio(&summary)?;
    let mean_sp = summary.sum_sp_bytes as f64 / summary.n as f64;
    let mean_sa = summary.sum_sa_bytes as f64 / summary.n as f64;
    let penalty = expected_pool_penalty(
        summary.p_short,
        summary.n,
        summary.mean_sp_short_bytes,
        summary.mean_resident_bytes,
        &config.gpu,
    );

    println!("n = {}", summary.n);
    println!("sum_sp_bytes = {}", summary.sum_sp_bytes);
    println!("sum_sa_bytes = {}", summary.sum_sa_bytes);
    println!("p_short = {}", summary.p_short);
    println!("underutilization_ratio = {ratio}");
    println!("kv_budget_bytes = {kv_budget}");
    println!(
        "expected_batch_size_predicted = {}",
        expected_batch_size(kv_budget, mean_sp)?
    );
    println!(
        "expected_batch_size_actual = {}",
        expected_batch_size(kv_budget, mean_sa)?
    );
    println!("expected_pool_penalty_s = {penalty}");
    Ok(())
}

fn load_report(dir: &Path) -> Result<RunReport> {
    let path = dir.join("report.json");
    let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file))
        .with_context(|| format!("parsing {}", path.display()))
}

/// Validate a finished run against the closed forms and keep the verdict
/// next to the run files.
fn analyze_run_dir(args: &AnalyzeArgs, dir: &Path) -> Result<()> {
    let config_path = dir.join("config.json");
    let config_file =
        File::open(&config_path).with_context(|| format!("opening {}", config_path.display()))?;
    let config: EngineConfig = serde_json::from_reader(BufReader::new(config_file))
        .with_context(|| format!("parsing {}", config_path.display()))?;
    let report = load_report(dir)?;
    let baseline = args.baseline_dir.as_deref().map(load_report).transpose()?;

    let summary = PoolSummary::from_run(&report, &config.model)?;
    let validation = validate_against_run(
        &report,
        baseline.as_ref(),
        &summary,
        &config.gpu,
        &ValidationTolerances::default(),
    )?;
    let text = validation.to_text();
    fs::write(dir.join("validation.txt"), &text).context("writing validation.txt")?;
    print!("{text}");
    Ok(())
}
