//! Report-directory writers and the CSV schemas.
//!
//! Column sets are fixed constants so they are identical across policies and
//! documented verbatim in `--help`. Floats are written with Rust's shortest
//! round-trip formatting, so identical runs produce byte-identical files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};

use kvsim_core::{pipeline_factor, EngineConfig, RunReport};

pub const SEQUENCE_COLUMNS: [&str; 12] = [
    "id",
    "arrival_s",
    "prompt_tokens",
    "output_tokens",
    "bucket",
    "predicted_tokens",
    "allocated_tokens",
    "completion_s",
    "latency_s",
    "evictions",
    "penalty_s",
    "slo_met",
];

pub const ITERATION_COLUMNS: [&str; 10] = [
    "iteration_index",
    "wall_clock_s",
    "batch_size",
    "tokens_resident",
    "admitted",
    "completed",
    "evicted",
    "iteration_latency_s",
    "penalty_latency_s",
    "overhead_latency_s",
];

pub const EVENT_COLUMNS: [&str; 10] = [
    "iteration",
    "sequence_id",
    "row_index",
    "transferred_bytes",
    "rearranged_bytes",
    "transfer_seconds",
    "rearrange_seconds",
    "penalty_seconds",
    "new_allocated_tokens",
    "batch_resident_bytes",
];

pub const COMPARISON_COLUMNS: [&str; 20] = [
    "point",
    "policy",
    "num_gpus",
    "batch_size_cap",
    "bucket_accuracy",
    "pipeline_factor",
    "status",
    "error",
    "requests_total",
    "sequences_completed",
    "sequences_within_slo",
    "num_iterations",
    "eviction_count",
    "generation_s",
    "penalty_s",
    "overhead_s",
    "total_time_s",
    "wall_clock_s",
    "throughput_seqs_per_s",
    "average_batch_size",
];

/// `--help` text documenting every file a run directory contains.
pub fn columns_help() -> String {
    format!(
        "Report directory contents:\n\
         \x20 run_summary.txt   key = value run totals\n\
         \x20 config.json       the exact engine configuration used\n\
         \x20 report.json       the full run report (machine-readable)\n\
         \x20 sequences.csv     {}\n\
         \x20 iterations.csv    {}\n\
         \x20 events.csv        {}",
        SEQUENCE_COLUMNS.join(","),
        ITERATION_COLUMNS.join(","),
        EVENT_COLUMNS.join(",")
    )
}

/// `--help` text for the sweep's merged table.
pub fn comparison_help() -> String {
    format!(
        "Each grid point also gets its own report directory (point-000, \
         point-001, ...) with the same files as `simulate`.\n\n\
         comparison.csv columns:\n\x20 {}",
        COMPARISON_COLUMNS.join(",")
    )
}

/// Render the run totals as `key = value` lines.
pub fn run_summary_text(config: &EngineConfig, report: &RunReport) -> String {
    let mut out = String::new();
    let mut push = |key: &str, value: String| {
        out.push_str(key);
        out.push_str(" = ");
        out.push_str(&value);
        out.push('\n');
    };
    push("policy", report.policy.clone());
    push("requests_total", report.requests_total.to_string());
    push(
        "sequences_completed",
        report.sequences_completed.to_string(),
    );
    push(
        "sequences_within_slo",
        report.sequences_within_slo.to_string(),
    );
    push("num_iterations", report.num_iterations.to_string());
    push("eviction_count", report.eviction_count.to_string());
    push("generation_s", report.generation_s.to_string());
    push("penalty_s", report.penalty_s.to_string());
    push("overhead_s", report.overhead_s.to_string());
    push("total_time_s", report.total_time_s.to_string());
    push("wall_clock_s", report.wall_clock_s.to_string());
    push(
        "throughput_seqs_per_s",
        report.throughput_seqs_per_s.to_string(),
    );
    push("average_batch_size", report.average_batch_size.to_string());
    push(
        "pipeline_factor",
        pipeline_factor(&config.model, &config.gpu).to_string(),
    );
    out
}

/// Write the full report directory for one run.
pub fn write_run_dir(dir: &Path, config: &EngineConfig, report: &RunReport) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;

    fs::write(
        dir.join("run_summary.txt"),
        run_summary_text(config, report),
    )
    .context("writing run_summary.txt")?;

    let mut config_json = serde_json::to_string_pretty(config).context("serializing config")?;
    config_json.push('\n');
    fs::write(dir.join("config.json"), config_json).context("writing config.json")?;

    let file = File::create(dir.join("report.json")).context("creating report.json")?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer(&mut writer, report).context("writing report.json")?;
    writer.write_all(b"\n")?;
    writer.flush()?;

    write_sequences_csv(&dir.join("sequences.csv"), report)?;
    write_iterations_csv(&dir.join("iterations.csv"), report)?;
    write_events_csv(&dir.join("events.csv"), report)?;
    Ok(())
}

fn write_sequences_csv(path: &Path, report: &RunReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| path.display().to_string())?;
    w.write_record(SEQUENCE_COLUMNS)?;
    for s in &report.sequences {
        w.write_record([
            s.id.to_string(),
            s.arrival_s.to_string(),
            s.prompt_tokens.to_string(),
            s.output_tokens.to_string(),
            s.bucket.to_string(),
            s.predicted_tokens.to_string(),
            s.allocated_tokens.to_string(),
            s.completion_s.to_string(),
            s.latency_s.to_string(),
            s.evictions.to_string(),
            s.penalty_s.to_string(),
            s.slo_met.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_iterations_csv(path: &Path, report: &RunReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| path.display().to_string())?;
    w.write_record(ITERATION_COLUMNS)?;
    for i in &report.iterations {
        w.write_record([
            i.iteration_index.to_string(),
            i.wall_clock_s.to_string(),
            i.batch_size.to_string(),
            i.tokens_resident.to_string(),
            i.admitted.to_string(),
            i.completed.to_string(),
            i.evicted.to_string(),
            i.iteration_latency_s.to_string(),
            i.penalty_latency_s.to_string(),
            i.overhead_latency_s.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_events_csv(path: &Path, report: &RunReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| path.display().to_string())?;
    w.write_record(EVENT_COLUMNS)?;
    for e in &report.events {
        w.write_record([
            e.iteration.to_string(),
            e.event.sequence_id.to_string(),
            e.event.row_index.to_string(),
            e.event.transferred_bytes.to_string(),
            e.event.rearranged_bytes.to_string(),
            e.event.transfer_seconds.to_string(),
            e.event.rearrange_seconds.to_string(),
            e.event.penalty_seconds.to_string(),
            e.event.new_allocated_tokens.to_string(),
            e.event.batch_resident_bytes.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_lists_every_column_set() {
        let help = columns_help();
        for column in SEQUENCE_COLUMNS
            .iter()
            .chain(&ITERATION_COLUMNS)
            .chain(&EVENT_COLUMNS)
        {
            assert!(help.contains(column), "help is missing column {column}");
        }
        assert!(comparison_help().contains("pipeline_factor"));
    }
}
