//! Aggregated results of one simulated run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::supervisor::EvictionEvent;

/// Final accounting for one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub id: u64,
    pub arrival_s: f64,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
    pub bucket: u32,
    /// The prediction-derived reservation, before any eviction doubling.
    pub predicted_tokens: u64,
    /// Final allocation, after any eviction doublings.
    pub allocated_tokens: u64,
    pub completion_s: f64,
    /// completion_s - arrival_s.
    pub latency_s: f64,
    pub evictions: u64,
    pub penalty_s: f64,
    pub slo_met: bool,
}

/// An eviction tagged with the iteration it happened in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvictionLog {
    pub iteration: u64,
    #[serde(flatten)]
    pub event: EvictionEvent,
}

/// Everything one engine run produces.
///
/// Time is split three ways: `generation_s` (token ticks plus prompt
/// prefill), `penalty_s` (eviction transfers, rearrangement, and reloads),
/// and `overhead_s` (prediction and retraining constants). `total_time_s` is
/// defined as their sum, so the breakdown is exact by construction.
/// `wall_clock_s` additionally includes idle gaps spent waiting for arrivals
/// in online traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub policy: String,
    pub requests_total: u64,
    pub sequences_completed: u64,
    pub sequences_within_slo: u64,
    pub num_iterations: u64,
    pub eviction_count: u64,
    pub generation_s: f64,
    pub penalty_s: f64,
    pub overhead_s: f64,
    /// generation_s + penalty_s + overhead_s: busy time the run accounted for.
    pub total_time_s: f64,
    /// End-of-run clock, idle gaps included.
    pub wall_clock_s: f64,
    /// sequences_completed / total_time_s.
    pub throughput_seqs_per_s: f64,
    /// Mean batch size over iterations; equals total generated tokens divided
    /// by num_iterations because each running sequence gains one token per
    /// iteration.
    pub average_batch_size: f64,
    pub sequences: Vec<SequenceRecord>,
    pub iterations: Vec<crate::engine::IterationRecord>,
    pub events: Vec<EvictionLog>,
}

impl RunReport {
    /// The structural promises every report must keep.
    pub fn check(&self) -> Result<()> {
        if self.total_time_s != self.generation_s + self.penalty_s + self.overhead_s {
            return Err(Error::Mismatch(format!(
                "latency breakdown {} + {} + {} does not equal total {}",
                self.generation_s, self.penalty_s, self.overhead_s, self.total_time_s
            )));
        }
        if self.sequences_within_slo > self.sequences_completed {
            return Err(Error::Mismatch(format!(
                "{} sequences within SLO but only {} completed",
                self.sequences_within_slo, self.sequences_completed
            )));
        }
        if self.eviction_count != self.events.len() as u64 {
            return Err(Error::Mismatch(format!(
                "eviction_count {} disagrees with {} logged events",
                self.eviction_count,
                self.events.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_report() -> RunReport {
        RunReport {
            policy: "oracle".into(),
            requests_total: 0,
            sequences_completed: 0,
            sequences_within_slo: 0,
            num_iterations: 0,
            eviction_count: 0,
            generation_s: 0.0,
            penalty_s: 0.0,
            overhead_s: 0.0,
            total_time_s: 0.0,
            wall_clock_s: 0.0,
            throughput_seqs_per_s: 0.0,
            average_batch_size: 0.0,
            sequences: vec![],
            iterations: vec![],
            events: vec![],
        }
    }

    #[test]
    fn check_enforces_the_breakdown_identity() {
        let mut r = empty_report();
        assert!(r.check().is_ok());
        r.generation_s = 1.0;
        assert!(r.check().is_err());
        r.total_time_s = 1.0;
        assert!(r.check().is_ok());
    }

    #[test]
    fn check_enforces_slo_and_event_counts() {
        let mut r = empty_report();
        r.sequences_within_slo = 1;
        assert!(r.check().is_err());
        let mut r = empty_report();
        r.eviction_count = 2;
        assert!(r.check().is_err());
    }

    #[test]
    fn json_serialization_is_deterministic() {
        let r = empty_report();
        let a = serde_json::to_string(&r).unwrap();
        let b = serde_json::to_string(&r.clone()).unwrap();
        assert_eq!(a, b);
        let back: RunReport = serde_json::from_str(&a).unwrap();
        assert_eq!(back, r);
    }
}
