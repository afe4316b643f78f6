//! Closed-form memory and penalty arithmetic, plus cross-checks against
//! simulated runs.
//!
//! Reservation bytes come in two flavors: `S_P` (bytes implied by the
//! predicted output length) and `S_A` (bytes implied by the actual output
//! length). The ratio of their sums says how much batch size a sloppy
//! predictor costs; the short-prediction probability says how much eviction
//! penalty it incurs. Both expressions can be checked against an engine run
//! on the same trace.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GpuConfig, ModelConfig};
use crate::report::RunReport;
use crate::supervisor::expected_pool_penalty;

/// Aggregate reservation statistics for a pool of requests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolSummary {
    /// Number of requests in the pool.
    pub n: u64,
    /// Sum of predicted-length KV bytes over the pool.
    pub sum_sp_bytes: u64,
    /// Sum of actual-length KV bytes over the pool.
    pub sum_sa_bytes: u64,
    /// Fraction of requests predicted shorter than their actual length.
    pub p_short: f64,
    /// Mean predicted-length KV bytes over the short-predicted requests
    /// (the bytes an eviction transfers); 0 when nothing is short.
    pub mean_sp_short_bytes: f64,
    /// Mean total resident KV bytes of the running batch; 0 when unknown.
    pub mean_resident_bytes: f64,
}

impl PoolSummary {
    /// Summarize predicted vs actual output lengths directly.
    /// `mean_resident_bytes` is the caller's batch-occupancy figure (from a
    /// run's eviction events, or an a-priori estimate).
    pub fn from_lengths(
        predicted: &[u64],
        actual: &[u64],
        model: &ModelConfig,
        mean_resident_bytes: f64,
    ) -> Result<Self> {
        if predicted.is_empty() {
            return Err(Error::EmptyInput("PoolSummary::from_lengths"));
        }
        if predicted.len() != actual.len() {
            return Err(Error::Mismatch(format!(
                "predicted list ({}) and actual list ({}) differ in length",
                predicted.len(),
                actual.len()
            )));
        }
        let kv = model.kv_bytes_per_token();
        let mut sum_sp = 0u64;
        let mut sum_sa = 0u64;
        let mut short = 0u64;
        let mut short_sp = 0u64;
        for (&p, &a) in predicted.iter().zip(actual) {
            sum_sp += p * kv;
            sum_sa += a * kv;
            if p < a {
                short += 1;
                short_sp += p * kv;
            }
        }
        let n = predicted.len() as u64;
        Ok(Self {
            n,
            sum_sp_bytes: sum_sp,
            sum_sa_bytes: sum_sa,
            p_short: short as f64 / n as f64,
            mean_sp_short_bytes: if short > 0 {
                short_sp as f64 / short as f64
            } else {
                0.0
            },
            mean_resident_bytes,
        })
    }

    /// Summarize a finished run: predicted lengths from the sequence records
    /// (pre-doubling), batch occupancy from the eviction events.
    pub fn from_run(report: &RunReport, model: &ModelConfig) -> Result<Self> {
        let predicted: Vec<u64> = report
            .sequences
            .iter()
            .map(|s| s.predicted_tokens)
            .collect();
        let actual: Vec<u64> = report.sequences.iter().map(|s| s.output_tokens).collect();
        let mean_resident = if report.events.is_empty() {
            0.0
        } else {
            report
                .events
                .iter()
                .map(|e| e.event.batch_resident_bytes as f64)
                .sum::<f64>()
                / report.events.len() as f64
        };
        Self::from_lengths(&predicted, &actual, model, mean_resident)
    }
}

/// How much smaller the realized batch is versus an oracle batch:
/// sum of actual-length bytes over sum of predicted-length bytes.
pub fn underutilization_ratio(summary: &PoolSummary) -> Result<f64> {
    if summary.sum_sp_bytes == 0 {
        return Err(Error::Mismatch(
            "underutilization ratio undefined for zero predicted bytes".into(),
        ));
    }
    Ok(summary.sum_sa_bytes as f64 / summary.sum_sp_bytes as f64)
}

/// Average batch size a memory budget supports: free bytes over mean
/// per-sequence KV bytes. Real-valued; floor it for a count.
pub fn expected_batch_size(hbm_free_bytes: u64, mean_kv_bytes: f64) -> Result<f64> {
    if mean_kv_bytes <= 0.0 || mean_kv_bytes.is_nan() {
        return Err(Error::Mismatch(
            "expected batch size undefined for non-positive mean KV bytes".into(),
        ));
    }
    Ok(hbm_free_bytes as f64 / mean_kv_bytes)
}

/// Relative-error gates for run-vs-formula validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationTolerances {
    /// Total penalty seconds, simulated vs closed form.
    pub penalty_rel: f64,
    /// Average-batch-size ratio vs byte-sum ratio.
    pub batch_ratio_rel: f64,
    /// Mean rearranged bytes vs half the mean batch bytes.
    pub rearrange_rel: f64,
}

impl Default for ValidationTolerances {
    fn default() -> Self {
        Self {
            penalty_rel: 0.05,
            batch_ratio_rel: 0.10,
            rearrange_rel: 0.02,
        }
    }
}

/// One comparison: a closed-form expectation against a simulated figure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub closed_form: f64,
    pub simulated: f64,
    pub rel_error: f64,
    pub within_tolerance: bool,
}

impl Comparison {
    fn new(closed_form: f64, simulated: f64, tolerance: f64) -> Self {
        let rel_error = if closed_form == 0.0 {
            if simulated == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (simulated - closed_form).abs() / closed_form.abs()
        };
        Self {
            closed_form,
            simulated,
            rel_error,
            within_tolerance: rel_error <= tolerance,
        }
    }
}

/// Outcome of validating a run against the closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Total penalty seconds: expected_pool_penalty vs the run's accrual.
    pub penalty: Comparison,
    /// Batch-size ratio run/baseline vs the underutilization ratio.
    /// Absent without a baseline run.
    pub batch_ratio: Option<Comparison>,
    /// Mean rearranged bytes per eviction vs half the mean batch bytes.
    /// Absent when the run had no evictions.
    pub rearrangement: Option<Comparison>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.penalty.within_tolerance
            && self.batch_ratio.is_none_or(|c| c.within_tolerance)
            && self.rearrangement.is_none_or(|c| c.within_tolerance)
    }

    /// Key = value rendering for the run directory.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut push = |name: &str, c: &Comparison| {
            out.push_str(&format!(
                "{name}_closed_form = {}\n{name}_simulated = {}\n{name}_rel_error = {}\n{name}_ok = {}\n",
                c.closed_form, c.simulated, c.rel_error, c.within_tolerance
            ));
        };
        push("penalty_seconds", &self.penalty);
        if let Some(c) = &self.batch_ratio {
            push("batch_ratio", c);
        }
        if let Some(c) = &self.rearrangement {
            push("rearranged_bytes", c);
        }
        out.push_str(&format!("validation_passed = {}\n", self.passed()));
        out
    }
}

/// Check a run against the closed-form expectations.
///
/// `report` is the run under test; `baseline`, when given, is an oracle-like
/// run of the same trace used for the batch-size ratio check. `summary` must
/// describe the same pool of requests as both runs.
pub fn validate_against_run(
    report: &RunReport,
    baseline: Option<&RunReport>,
    summary: &PoolSummary,
    gpu: &GpuConfig,
    tolerances: &ValidationTolerances,
) -> Result<ValidationReport> {
    if report.requests_total != summary.n {
        return Err(Error::Mismatch(format!(
            "run has {} requests but the summary describes {}",
            report.requests_total, summary.n
        )));
    }
    if let Some(base) = baseline {
        if base.requests_total != summary.n {
            return Err(Error::Mismatch(format!(
                "baseline run has {} requests but the summary describes {}",
                base.requests_total, summary.n
            )));
        }
    }

    let expected_penalty = expected_pool_penalty(
        summary.p_short,
        summary.n,
        summary.mean_sp_short_bytes,
        summary.mean_resident_bytes,
        gpu,
    );
    let penalty = Comparison::new(expected_penalty, report.penalty_s, tolerances.penalty_rel);

    let batch_ratio = match baseline {
        Some(base) if base.average_batch_size > 0.0 => {
            let simulated = report.average_batch_size / base.average_batch_size;
            Some(Comparison::new(
                underutilization_ratio(summary)?,
                simulated,
                tolerances.batch_ratio_rel,
            ))
        }
        _ => None,
    };

    let rearrangement = if report.events.is_empty() {
        None
    } else {
        let n = report.events.len() as f64;
        let mean_rearranged = report
            .events
            .iter()
            .map(|e| e.event.rearranged_bytes as f64)
            .sum::<f64>()
            / n;
        let mean_batch = report
            .events
            .iter()
            .map(|e| e.event.batch_resident_bytes as f64)
            .sum::<f64>()
            / n;
        Some(Comparison::new(
            mean_batch / 2.0,
            mean_rearranged,
            tolerances.rearrange_rel,
        ))
    };

    Ok(ValidationReport {
        penalty,
        batch_ratio,
        rearrangement,
    })
}
