//! Overrun detection, eviction, and the contiguous-rows memory layout.
//!
//! Running sequences occupy rows of one logical batch matrix. When a
//! sequence exhausts its reservation before finishing, it is evicted: its
//! resident KV moves to host memory and back (paid against the host link
//! twice), and every row below it shifts up to close the hole (each such row
//! is read and written once in HBM). The evicted sequence re-enters the pool
//! with a doubled allocation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GpuConfig, ModelConfig};
use crate::request::{SequenceState, SequenceStatus};
use crate::scheduler::MemoryLedger;

/// Row order of the running batch. Rows are contiguous; evictions close gaps
/// by shifting the tail up, which is exactly what the rearrangement penalty
/// charges for.
#[derive(Debug, Clone, Default)]
pub struct LayoutModel {
    rows: Vec<usize>,
}

impl LayoutModel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Arena indices of running sequences, top row first.
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn batch_size(&self) -> usize {
        self.rows.len()
    }

    /// New admissions append below the current batch.
    pub fn push_row(&mut self, seq_index: usize) {
        self.rows.push(seq_index);
    }

    /// Remove a finished sequence's row; the tail shifts up for free (the
    /// penalty model charges rearrangement only for evictions).
    pub fn remove_row(&mut self, seq_index: usize) -> Result<usize> {
        let pos = self
            .rows
            .iter()
            .position(|&s| s == seq_index)
            .ok_or_else(|| Error::Mismatch(format!("sequence index {seq_index} not in layout")))?;
        self.rows.remove(pos);
        Ok(pos)
    }

    /// Total resident KV bytes across all rows.
    pub fn resident_bytes(&self, arena: &[SequenceState], model: &ModelConfig) -> u64 {
        self.rows
            .iter()
            .map(|&i| model.kv_cache_bytes(arena[i].resident_tokens()))
            .sum()
    }
}

/// Record of one eviction, including the penalty decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvictionEvent {
    pub sequence_id: u64,
    /// Row the sequence occupied when evicted.
    pub row_index: u64,
    /// Resident KV bytes moved to the host and later back.
    pub transferred_bytes: u64,
    /// Resident KV bytes of the rows below the evicted one.
    pub rearranged_bytes: u64,
    /// 2 * transferred / BW_H2D: eviction out plus reload in.
    pub transfer_seconds: f64,
    /// 2 * rearranged / BW_HBM: each shifted row read and written once.
    pub rearrange_seconds: f64,
    /// transfer_seconds + rearrange_seconds.
    pub penalty_seconds: f64,
    pub new_allocated_tokens: u64,
    /// Resident KV bytes of the whole batch (evicted row included) at the
    /// instant of eviction; kept for validating the rows-below expectation.
    pub batch_resident_bytes: u64,
}

/// Sequences that just exhausted their reservation without finishing:
/// generated == allocated while short of the true output. Returned in row
/// order for deterministic processing.
pub fn detect_overruns(arena: &[SequenceState], layout: &LayoutModel) -> Vec<usize> {
    layout
        .rows()
        .iter()
        .copied()
        .filter(|&i| {
            let s = &arena[i];
            s.status == SequenceStatus::Running
                && s.generated_tokens == s.allocated_tokens
                && s.generated_tokens < s.request.output_tokens
        })
        .collect()
}

/// Evict one overrunning sequence.
///
/// Computes the penalty decomposition, removes the row (tail shifts up),
/// releases the ledger reservation, doubles the allocation (capped so prompt
/// plus allocation still fits the context window), and marks the sequence
/// evicted. The caller decides how much of the penalty the clock absorbs and
/// when (the reload half is owed at re-admission).
pub fn evict(
    seq_index: usize,
    arena: &mut [SequenceState],
    layout: &mut LayoutModel,
    ledger: &mut MemoryLedger,
    model: &ModelConfig,
    gpu: &GpuConfig,
) -> Result<EvictionEvent> {
    if arena[seq_index].status != SequenceStatus::Running {
        return Err(Error::Mismatch(format!(
            "evicting sequence {} which is not running",
            arena[seq_index].request.id
        )));
    }
    let batch_resident_bytes = layout.resident_bytes(arena, model);
    let row_index = layout.remove_row(seq_index)?;
    let rearranged_bytes: u64 = layout.rows()[row_index..]
        .iter()
        .map(|&i| model.kv_cache_bytes(arena[i].resident_tokens()))
        .sum();

    let seq = &mut arena[seq_index];
    let transferred_bytes = model.kv_cache_bytes(seq.resident_tokens());
    let transfer_seconds = 2.0 * transferred_bytes as f64 / gpu.bw_h2d;
    let rearrange_seconds = 2.0 * rearranged_bytes as f64 / gpu.bw_hbm;

    ledger.release(model.kv_cache_bytes(seq.reservation_tokens()))?;
    let cap = model.max_seq_len - seq.request.prompt_tokens;
    let new_allocated_tokens = (2 * seq.allocated_tokens).min(cap);
    seq.allocated_tokens = new_allocated_tokens;
    seq.status = SequenceStatus::Evicted;
    seq.eviction_count += 1;

    Ok(EvictionEvent {
        sequence_id: seq.request.id,
        row_index: row_index as u64,
        transferred_bytes,
        rearranged_bytes,
        transfer_seconds,
        rearrange_seconds,
        penalty_seconds: transfer_seconds + rearrange_seconds,
        new_allocated_tokens,
        batch_resident_bytes,
    })
}

/// Closed-form expected total eviction penalty for a pool of `n` sequences
/// when each under-predicts with probability `p`:
/// `2pN(mean_sp / BW_H2D + mean_total_resident / (2 BW_HBM))`. The half on
/// the second term is the expectation of rows below a uniformly placed row.
pub fn expected_pool_penalty(
    p: f64,
    n: u64,
    mean_sp_bytes: f64,
    mean_total_resident_bytes: f64,
    gpu: &GpuConfig,
) -> f64 {
    2.0 * p
        * n as f64
        * (mean_sp_bytes / gpu.bw_h2d + mean_total_resident_bytes / (2.0 * gpu.bw_hbm))
}
