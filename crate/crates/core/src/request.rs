//! Generation requests and per-sequence runtime state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// One text-generation job as it appears in a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    /// Arrival time in seconds; 0.0 for offline traces.
    pub arrival_time: f64,
    pub prompt_tokens: u64,
    /// True output length, known to the trace but hidden from non-oracle
    /// predictors.
    pub output_tokens: u64,
}

impl Request {
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        if self.output_tokens < 1 {
            return Err(Error::InvalidRequest {
                id: self.id,
                reason: "output_tokens must be >= 1".into(),
            });
        }
        if self.prompt_tokens + self.output_tokens > model.max_seq_len {
            return Err(Error::InvalidRequest {
                id: self.id,
                reason: format!(
                    "prompt ({}) + output ({}) exceeds max_seq_len ({})",
                    self.prompt_tokens, self.output_tokens, model.max_seq_len
                ),
            });
        }
        if !self.arrival_time.is_finite() || self.arrival_time < 0.0 {
            return Err(Error::InvalidRequest {
                id: self.id,
                reason: "arrival_time must be finite and non-negative".into(),
            });
        }
        Ok(())
    }
}

/// Lifecycle of a sequence inside the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceStatus {
    /// Waiting in the request pool for admission.
    Pooled,
    /// Resident in HBM, generating one token per iteration.
    Running,
    /// Pushed out to host memory after exhausting its reservation.
    Evicted,
    /// All output tokens generated.
    Finished,
}

/// Mutable per-sequence state, owned and mutated only by the engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceState {
    pub request: Request,
    /// Bucket the predictor chose for this sequence.
    pub bucket: u32,
    /// The original prediction-derived allocation, before any doubling.
    pub predicted_tokens: u64,
    /// Reservation in output tokens. Doubles after each eviction, capped at
    /// max_seq_len - prompt_tokens.
    pub allocated_tokens: u64,
    pub generated_tokens: u64,
    pub status: SequenceStatus,
    pub eviction_count: u64,
    /// Penalty seconds actually charged to the clock for this sequence.
    pub penalty_seconds_accrued: f64,
    pub completion_time: Option<f64>,
    /// Reload cost owed when this sequence is next re-admitted. The transfer
    /// out is paid at eviction; the transfer back is paid here.
    pub pending_reload_seconds: f64,
    /// Prompt prefill is charged once, on first admission only.
    pub prefill_charged: bool,
}

impl SequenceState {
    pub fn new(request: Request, bucket: u32, allocated_tokens: u64) -> Self {
        Self {
            request,
            bucket,
            predicted_tokens: allocated_tokens,
            allocated_tokens,
            generated_tokens: 0,
            status: SequenceStatus::Pooled,
            eviction_count: 0,
            penalty_seconds_accrued: 0.0,
            completion_time: None,
            pending_reload_seconds: 0.0,
            prefill_charged: false,
        }
    }

    /// Tokens of KV the scheduler must reserve: prompt plus the allocation.
    pub fn reservation_tokens(&self) -> u64 {
        self.request.prompt_tokens + self.allocated_tokens
    }

    /// Tokens of KV physically resident right now: prompt plus generated.
    pub fn resident_tokens(&self) -> u64 {
        self.request.prompt_tokens + self.generated_tokens
    }

    pub fn is_finished(&self) -> bool {
        self.status == SequenceStatus::Finished
    }

    /// Structural invariants, re-checked by the engine after every tick.
    pub fn check_invariants(&self, model: &ModelConfig) -> Result<()> {
        if self.generated_tokens > self.allocated_tokens {
            return Err(Error::Mismatch(format!(
                "sequence {}: generated {} exceeds allocation {}",
                self.request.id, self.generated_tokens, self.allocated_tokens
            )));
        }
        if self.status == SequenceStatus::Finished
            && self.generated_tokens != self.request.output_tokens
        {
            return Err(Error::Mismatch(format!(
                "sequence {}: finished with {} of {} tokens",
                self.request.id, self.generated_tokens, self.request.output_tokens
            )));
        }
        if self.allocated_tokens > model.max_seq_len - self.request.prompt_tokens {
            return Err(Error::Mismatch(format!(
                "sequence {}: allocation {} exceeds max_seq_len - prompt = {}",
                self.request.id,
                self.allocated_tokens,
                model.max_seq_len - self.request.prompt_tokens
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(prompt: u64, output: u64) -> Request {
        Request {
            id: 1,
            arrival_time: 0.0,
            prompt_tokens: prompt,
            output_tokens: output,
        }
    }

    #[test]
    fn request_bounds() {
        let m = ModelConfig::reference();
        assert!(req(0, 1).validate(&m).is_ok());
        assert!(req(0, 2048).validate(&m).is_ok());
        assert!(req(1, 2048).validate(&m).is_err());
        assert!(req(0, 0).validate(&m).is_err());
        assert!(req(2000, 48).validate(&m).is_ok());
        assert!(req(2000, 49).validate(&m).is_err());
    }

    #[test]
    fn request_rejects_bad_arrival() {
        let m = ModelConfig::reference();
        let mut r = req(0, 10);
        r.arrival_time = -1.0;
        assert!(r.validate(&m).is_err());
        r.arrival_time = f64::NAN;
        assert!(r.validate(&m).is_err());
    }

    #[test]
    fn reservation_and_resident_tokens() {
        let mut s = SequenceState::new(req(100, 60), 0, 205);
        assert_eq!(s.reservation_tokens(), 305);
        assert_eq!(s.resident_tokens(), 100);
        s.generated_tokens = 42;
        assert_eq!(s.resident_tokens(), 142);
        assert_eq!(s.reservation_tokens(), 305);
    }

    #[test]
    fn invariant_checks_catch_violations() {
        let m = ModelConfig::reference();
        let mut s = SequenceState::new(req(0, 60), 0, 205);
        assert!(s.check_invariants(&m).is_ok());

        s.generated_tokens = 206;
        assert!(s.check_invariants(&m).is_err());
        s.generated_tokens = 60;

        s.status = SequenceStatus::Finished;
        assert!(s.check_invariants(&m).is_ok());
        s.generated_tokens = 59;
        assert!(s.check_invariants(&m).is_err());
        s.generated_tokens = 60;

        s.allocated_tokens = 2049;
        assert!(s.check_invariants(&m).is_err());
    }
}
