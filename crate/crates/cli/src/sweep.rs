//! `kvsim sweep`: run a parameter grid in parallel and merge the results.
//!
//! The grid is the cartesian product of the axes present in the sweep spec
//! (policies, num_gpus, batch_size_cap, bucket_accuracy); an absent axis
//! keeps the base configuration's value. Every point runs an independent
//! engine on its own copy of the trace and writes its own report directory;
//! a failing point is recorded in the table and the sweep carries on.

use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Deserialize;

use kvsim_core::{pipeline_factor, EngineConfig, RunReport};

use crate::config::{ConfigArgs, Policy};
use crate::output::{write_run_dir, COMPARISON_COLUMNS};
use crate::simulate::load_trace;

#[derive(Debug, clap::Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Input trace file, shared by every grid point.
    #[arg(long, value_name = "PATH")]
    pub trace: PathBuf,
    /// TOML file listing the axes to vary.
    #[arg(long, value_name = "PATH")]
    pub sweep: PathBuf,
    /// Output directory: comparison.csv plus one subdirectory per point.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

/// Axes of the grid. An empty document is a single-point sweep.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSpec {
    policies: Option<Vec<Policy>>,
    num_gpus: Option<Vec<u64>>,
    batch_size_cap: Option<Vec<u64>>,
    bucket_accuracy: Option<Vec<f64>>,
}

/// One grid point; `None` means "keep the base config's value".
#[derive(Debug, Clone, Copy)]
struct Point {
    index: usize,
    policy: Option<Policy>,
    num_gpus: Option<u64>,
    batch_size_cap: Option<u64>,
    bucket_accuracy: Option<f64>,
}

impl Point {
    fn apply(&self, base: &EngineConfig) -> Result<EngineConfig> {
        let mut config = base.clone();
        if let Some(policy) = self.policy {
            config.policy.mode = policy.mode();
        }
        if let Some(gpus) = self.num_gpus {
            config.gpu.num_gpus = gpus;
        }
        if let Some(cap) = self.batch_size_cap {
            config.batch_size_cap = Some(cap);
        }
        if let Some(accuracy) = self.bucket_accuracy {
            config.policy.bucket_accuracy = accuracy;
        }
        config.validate().context("validating grid point")?;
        Ok(config)
    }
}

/// Cartesian product of the present axes, in spec order.
fn enumerate_points(spec: &SweepSpec) -> Vec<Point> {
    // An absent axis contributes the single value None.
    fn axis<T: Copy>(values: &Option<Vec<T>>) -> Vec<Option<T>> {
        match values {
            Some(v) => v.iter().copied().map(Some).collect(),
            None => vec![None],
        }
    }
    let mut points = Vec::new();
    for &policy in &axis(&spec.policies) {
        for &num_gpus in &axis(&spec.num_gpus) {
            for &batch_size_cap in &axis(&spec.batch_size_cap) {
                for &bucket_accuracy in &axis(&spec.bucket_accuracy) {
                    points.push(Point {
                        index: points.len(),
                        policy,
                        num_gpus,
                        batch_size_cap,
                        bucket_accuracy,
                    });
                }
            }
        }
    }
    points
}

/// One merged-table row: the point's coordinates plus either run totals or
/// an error message.
struct Row {
    point: Point,
    pipeline: Option<f64>,
    outcome: std::result::Result<RunReport, String>,
}

impl Row {
    fn record(&self, base: &EngineConfig) -> Vec<String> {
        let policy_name = match &self.outcome {
            Ok(report) => report.policy.clone(),
            // For failed points fall back to the configured mode's wire name.
            Err(_) => {
                let mode = self.point.policy.map_or(base.policy.mode, Policy::mode);
                serde_json::to_value(mode)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default()
            }
        };
        let opt = |v: Option<String>| v.unwrap_or_default();
        let mut record = vec![
            self.point.index.to_string(),
            policy_name,
            self.point.num_gpus.unwrap_or(base.gpu.num_gpus).to_string(),
            opt(self
                .point
                .batch_size_cap
                .or(base.batch_size_cap)
                .map(|v| v.to_string())),
            self.point
                .bucket_accuracy
                .unwrap_or(base.policy.bucket_accuracy)
                .to_string(),
            opt(self.pipeline.map(|v| v.to_string())),
        ];
        match &self.outcome {
            Ok(r) => {
                record.push("ok".into());
                record.push(String::new());
                record.extend([
                    r.requests_total.to_string(),
                    r.sequences_completed.to_string(),
                    r.sequences_within_slo.to_string(),
                    r.num_iterations.to_string(),
                    r.eviction_count.to_string(),
                    r.generation_s.to_string(),
                    r.penalty_s.to_string(),
                    r.overhead_s.to_string(),
                    r.total_time_s.to_string(),
                    r.wall_clock_s.to_string(),
                    r.throughput_seqs_per_s.to_string(),
                    r.average_batch_size.to_string(),
                ]);
            }
            Err(message) => {
                record.push("error".into());
                record.push(message.clone());
                record.extend(std::iter::repeat_n(String::new(), 12));
            }
        }
        record
    }
}

pub fn run(args: &SweepArgs) -> Result<()> {
    let trace = load_trace(&args.trace)?;
    let base = args.config.build()?;
    let spec_text = fs::read_to_string(&args.sweep)
        .with_context(|| format!("reading sweep spec {}", args.sweep.display()))?;
    let spec: SweepSpec = toml::from_str(&spec_text)
        .with_context(|| format!("parsing sweep spec {}", args.sweep.display()))?;
    let points = enumerate_points(&spec);
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    log::info!("sweeping {} grid points", points.len());

    let mut rows: Vec<Row> = points
        .par_iter()
        .map(|&point| {
            let outcome = point.apply(&base).and_then(|config| {
                let report = kvsim_core::engine::run(&config, &trace)?;
                let dir = args.out.join(format!("point-{:03}", point.index));
                write_run_dir(&dir, &config, &report)?;
                Ok((pipeline_factor(&config.model, &config.gpu), report))
            });
            match outcome {
                Ok((pipeline, report)) => Row {
                    point,
                    pipeline: Some(pipeline),
                    outcome: Ok(report),
                },
                Err(err) => {
                    log::warn!("point {} failed: {err:#}", point.index);
                    Row {
                        point,
                        pipeline: None,
                        outcome: Err(format!("{err:#}")),
                    }
                }
            }
        })
        .collect();
    rows.sort_by_key(|row| row.point.index);

    let path = args.out.join("comparison.csv");
    let mut writer = csv::Writer::from_path(&path).with_context(|| path.display().to_string())?;
    writer.write_record(COMPARISON_COLUMNS)?;
    for row in &rows {
        writer.write_record(row.record(&base))?;
    }
    writer.flush()?;

    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    println!(
        "{} points, {} ok, {} failed -> {}",
        rows.len(),
        rows.len() - failed,
        failed,
        path.display()
    );
    Ok(())
}
