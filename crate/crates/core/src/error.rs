//! Error type shared across the simulator.

use thiserror::Error;

/// Errors produced by configuration validation, trace ingestion, and the
/// simulation itself.
#[derive(Debug, Error)]
pub enum Error {
    /// A model, GPU, cost, or predictor configuration violates an invariant.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A request violates the core request invariants.
    #[error("invalid request {id}: {reason}")]
    InvalidRequest { id: u64, reason: String },

    /// A length fell outside the bucket scheme's range.
    #[error("length {length} exceeds maximum sequence length {max_seq_len}")]
    LengthOutOfRange { length: u64, max_seq_len: u64 },

    /// Trace-provided prediction mode needs a bucket for every record.
    #[error("request {id}: trace-provided prediction mode requires a predicted_bucket field")]
    MissingBucket { id: u64 },

    /// An operation received empty input where at least one element is required.
    #[error("{0} requires non-empty input")]
    EmptyInput(&'static str),

    /// Inputs that must describe the same trace or batch do not match.
    #[error("mismatched inputs: {0}")]
    Mismatch(String),

    /// A request's reservation cannot fit even an empty GPU; the run aborts.
    #[error(
        "request {id} is unschedulable: reservation of {reservation_bytes} bytes exceeds \
         the {capacity_bytes} bytes of KV capacity on an empty GPU"
    )]
    Unschedulable {
        id: u64,
        reservation_bytes: u64,
        capacity_bytes: u64,
    },

    /// A trace line could not be parsed.
    #[error("trace line {line}: {reason}")]
    TraceParse { line: usize, reason: String },

    /// Reading or writing a trace or report failed.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
