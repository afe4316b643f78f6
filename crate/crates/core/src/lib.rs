//! kvsim — a discrete-event simulator for length-speculative LLM serving.
//!
//! Serving a text-generation model means holding a per-sequence KV cache in
//! GPU memory whose final size is unknown until the sequence finishes.
//! Reserving the maximum sequence length for every request keeps batches
//! small; reserving a *predicted* length packs far more sequences into the
//! same memory but risks evicting the ones that outgrow their reservation.
//! This crate models that trade-off at desk scale:
//!
//! - [`model`] — model/GPU configuration and exact KV-cache byte arithmetic.
//! - [`predictor`] — output-length prediction policies (oracle, max-length,
//!   bucketized, stochastic, trace-provided).
//! - [`scheduler`] — first-fit-decreasing admission against an HBM ledger.
//! - [`supervisor`] — overrun detection, eviction with transfer and
//!   row-rearrangement penalties, and allocation doubling.
//! - [`engine`] — the iteration-level simulation loop with a parameterized
//!   cost model and pipeline-parallel time scaling.
//! - [`analysis`] — closed-form eviction-penalty and underutilization
//!   expressions, cross-validated against simulation output.
//! - [`trace`] — request-trace records, JSONL parsing, and synthetic
//!   trace generation.

pub mod analysis;
pub mod engine;
pub mod error;
pub mod model;
pub mod predictor;
pub mod report;
pub mod request;
pub mod scheduler;
pub mod supervisor;
pub mod trace;

pub use analysis::{
    expected_batch_size, underutilization_ratio, validate_against_run, Comparison, PoolSummary,
    ValidationReport, ValidationTolerances,
};
pub use engine::{pipeline_factor, run, CostModel, EngineConfig, EvictionOverlap, IterationRecord};
pub use error::{Error, Result};
pub use model::{GpuConfig, ModelConfig};
pub use predictor::{
    empirical_short_probability, BucketScheme, Prediction, Predictor, PredictorMode, PredictorSpec,
};
pub use report::{EvictionLog, RunReport, SequenceRecord};
pub use request::{Request, SequenceState, SequenceStatus};
pub use scheduler::{MemoryLedger, PoolView};
pub use supervisor::{expected_pool_penalty, EvictionEvent, LayoutModel};
pub use trace::TraceRecord;
