//! The discrete-event loop driving one simulated run.
//!
//! Time advances one generation iteration at a time. Each pass of the loop:
//! arrivals enter the pool (paying the prediction constant), admission fills
//! the batch (paying prompt prefill and any owed reload), every running
//! sequence gains one token (paying the cost-model tick), finished sequences
//! leave, overruns are evicted and re-pooled with doubled allocations
//! (paying transfer, rearrangement, and the retrain constant), and a second
//! admission pass refills memory freed within the iteration.
//!
//! All charged time lands in exactly one of three accumulators — generation,
//! penalty, overhead — so the run's latency breakdown sums to its total by
//! construction. Idle gaps between arrivals move only the wall clock.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GpuConfig, ModelConfig};
use crate::predictor::{BucketScheme, Predictor, PredictorSpec};
use crate::report::{EvictionLog, RunReport, SequenceRecord};
use crate::request::{SequenceState, SequenceStatus};
use crate::scheduler::{self, MemoryLedger, PoolView};
use crate::supervisor::{detect_overruns, evict, LayoutModel};
use crate::trace::TraceRecord;

/// Linear time model for one engine.
///
/// An iteration costs `t_fixed + t_ff_per_seq * batch + t_attn_per_token *
/// resident_tokens`, scaled by the pipeline factor: feed-forward work batches
/// across sequences while attention reads every resident KV token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Per-iteration constant (kernel launches, scheduling).
    pub t_fixed: f64,
    /// Per-sequence share of the batched feed-forward layers.
    pub t_ff_per_seq: f64,
    /// Per-resident-token share of the self-attention layers.
    pub t_attn_per_token: f64,
    /// Prompt processing at first admission, per prompt token.
    pub t_prefill_per_token: f64,
    /// Length-prediction cost per arrived request (overhead category).
    pub predictor_latency: f64,
    /// Predictor retraining cost per eviction (overhead category).
    pub retrain_latency: f64,
}

impl CostModel {
    /// Defaults sized so a saturated batch of a few hundred mid-length
    /// sequences generates a token in roughly 0.19 s, with a 3.7 ms
    /// prediction and an 11 ms retrain constant.
    pub fn reference() -> Self {
        Self {
            t_fixed: 0.005,
            t_ff_per_seq: 3.0e-4,
            t_attn_per_token: 5.0e-7,
            t_prefill_per_token: 1.0e-4,
            predictor_latency: 0.0037,
            retrain_latency: 0.011,
        }
    }

    /// All-zero cost model for tests that meter single components.
    pub fn zero() -> Self {
        Self {
            t_fixed: 0.0,
            t_ff_per_seq: 0.0,
            t_attn_per_token: 0.0,
            t_prefill_per_token: 0.0,
            predictor_latency: 0.0,
            retrain_latency: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let coeffs = [
            self.t_fixed,
            self.t_ff_per_seq,
            self.t_attn_per_token,
            self.t_prefill_per_token,
            self.predictor_latency,
            self.retrain_latency,
        ];
        if coeffs.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidConfig(
                "cost model coefficients must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// How much eviction cost the clock absorbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvictionOverlap {
    /// Charge everything: transfer out, rearrangement, and reload at
    /// re-admission. Conservative, matches the closed-form penalty.
    None,
    /// Transfers overlap with generation; only rearrangement is charged.
    Full,
}

/// Everything one run needs besides the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub model: ModelConfig,
    pub gpu: GpuConfig,
    pub cost: CostModel,
    pub policy: PredictorSpec,
    pub scheme: BucketScheme,
    pub eviction_overlap: EvictionOverlap,
    /// Seeds the predictor rng; overrides `policy.rng_seed` inside `run`.
    pub rng_seed: u64,
    pub batch_size_cap: Option<u64>,
    /// Admission passes an entry may be skipped before it bars later
    /// entries from overtaking it. Unset reproduces plain decreasing
    /// first-fit with no starvation countermeasure.
    pub max_skip_iterations: Option<u64>,
    /// Seconds per output token a completed sequence is allowed.
    pub slo_per_token: f64,
}

impl EngineConfig {
    /// Reference setup around the given policy: 10 buckets over the model's
    /// context, conservative penalty charging, 0.1875 s/token SLO.
    pub fn new(model: ModelConfig, gpu: GpuConfig, policy: PredictorSpec) -> Result<Self> {
        let scheme = BucketScheme::new(model.max_seq_len, 10)?;
        Ok(Self {
            model,
            gpu,
            cost: CostModel::reference(),
            policy,
            scheme,
            eviction_overlap: EvictionOverlap::None,
            rng_seed: policy.rng_seed,
            batch_size_cap: None,
            max_skip_iterations: None,
            slo_per_token: 0.1875,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.gpu.validate(&self.model)?;
        self.cost.validate()?;
        self.policy.validate()?;
        if self.scheme.max_seq_len != self.model.max_seq_len {
            return Err(Error::InvalidConfig(format!(
                "bucket scheme spans {} tokens but the model context is {}",
                self.scheme.max_seq_len, self.model.max_seq_len
            )));
        }
        if self.batch_size_cap == Some(0) {
            return Err(Error::InvalidConfig("batch_size_cap must be >= 1".into()));
        }
        if self.slo_per_token <= 0.0 || !self.slo_per_token.is_finite() {
            return Err(Error::InvalidConfig(
                "slo_per_token must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One row of the per-iteration log.
///
/// `iteration_latency_s` is the tick formula alone; prompt prefill and
/// arrival-time charges appear in the run totals and in the penalty and
/// overhead columns of the pass they occurred in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration_index: u64,
    /// Clock at the end of the pass, idle gaps included.
    pub wall_clock_s: f64,
    pub batch_size: u64,
    /// Resident KV tokens across the batch at the end of the tick.
    pub tokens_resident: u64,
    /// Sequences admitted during this pass (both admission points).
    pub admitted: u64,
    pub completed: u64,
    pub evicted: u64,
    pub iteration_latency_s: f64,
    /// Penalty seconds charged during this pass.
    pub penalty_latency_s: f64,
    /// Overhead seconds charged during this pass.
    pub overhead_latency_s: f64,
}

/// Completion-interval scaling when `l` layers are cut into `num_gpus`
/// pipeline stages: ceil(l / g) / l. With one GPU this is exactly 1.
pub fn pipeline_factor(model: &ModelConfig, gpu: &GpuConfig) -> f64 {
    model.num_layers.div_ceil(gpu.num_gpus) as f64 / model.num_layers as f64
}

/// Charges accumulated within one loop pass, for the iteration record.
#[derive(Debug, Default)]
struct PassCounters {
    admitted: u64,
    completed: u64,
    evicted: u64,
    penalty_s: f64,
    overhead_s: f64,
}

struct Engine<'a> {
    config: &'a EngineConfig,
    factor: f64,
    predictor: Predictor,
    arena: Vec<SequenceState>,
    pool: PoolView,
    ledger: MemoryLedger,
    layout: LayoutModel,
    clock: f64,
    generation_s: f64,
    penalty_s: f64,
    overhead_s: f64,
    iterations: Vec<IterationRecord>,
    events: Vec<EvictionLog>,
}

impl<'a> Engine<'a> {
    fn new(config: &'a EngineConfig) -> Result<Self> {
        config.validate()?;
        let mut spec = config.policy;
        spec.rng_seed = config.rng_seed;
        Ok(Self {
            config,
            factor: pipeline_factor(&config.model, &config.gpu),
            predictor: Predictor::new(spec, config.scheme)?,
            arena: Vec::new(),
            pool: PoolView::new(),
            ledger: MemoryLedger::new(&config.model, &config.gpu),
            layout: LayoutModel::new(),
            clock: 0.0,
            generation_s: 0.0,
            penalty_s: 0.0,
            overhead_s: 0.0,
            iterations: Vec::new(),
            events: Vec::new(),
        })
    }

    /// Move trace records with arrival_time <= clock into the pool, paying
    /// the prediction constant per request.
    fn process_arrivals(
        &mut self,
        trace: &[TraceRecord],
        next_arrival: &mut usize,
        pass: &mut PassCounters,
    ) -> Result<()> {
        while *next_arrival < trace.len() && trace[*next_arrival].arrival_s <= self.clock {
            let record = &trace[*next_arrival];
            let request = record.to_request();
            let prediction = self.predictor.predict(&request, record.predicted_bucket)?;
            self.overhead_s += self.config.cost.predictor_latency;
            self.clock += self.config.cost.predictor_latency;
            pass.overhead_s += self.config.cost.predictor_latency;

            let seq = SequenceState::new(
                request,
                prediction.bucket_index,
                prediction.allocated_tokens,
            );
            let reservation = self.config.model.kv_cache_bytes(seq.reservation_tokens());
            let idx = self.arena.len();
            self.pool
                .insert(idx, reservation, seq.request.arrival_time, seq.request.id);
            self.arena.push(seq);
            *next_arrival += 1;
        }
        Ok(())
    }

    /// One decreasing first-fit pass; charges prefill on first admission and
    /// any reload owed from a prior eviction.
    fn admit_pending(&mut self, pass: &mut PassCounters) -> Result<()> {
        let slots = self
            .config
            .batch_size_cap
            .map(|cap| cap.saturating_sub(self.layout.batch_size() as u64) as usize);
        let admitted = scheduler::admit(
            &mut self.pool,
            &mut self.ledger,
            self.clock,
            slots,
            self.config.max_skip_iterations,
        )?;
        for entry in admitted {
            let seq = &mut self.arena[entry.seq_index];
            seq.status = SequenceStatus::Running;
            self.layout.push_row(entry.seq_index);
            pass.admitted += 1;
            if !seq.prefill_charged {
                seq.prefill_charged = true;
                let prefill =
                    self.config.cost.t_prefill_per_token * seq.request.prompt_tokens as f64;
                self.generation_s += prefill;
                self.clock += prefill;
            }
            if seq.pending_reload_seconds > 0.0 {
                let reload = seq.pending_reload_seconds;
                seq.pending_reload_seconds = 0.0;
                seq.penalty_seconds_accrued += reload;
                self.penalty_s += reload;
                self.clock += reload;
                pass.penalty_s += reload;
            }
        }
        Ok(())
    }

    /// Evict every sequence that exhausted its reservation, charge it per
    /// the overlap mode, and return it to the pool with a doubled allocation.
    fn handle_overruns(&mut self, pass: &mut PassCounters) -> Result<()> {
        for seq_index in detect_overruns(&self.arena, &self.layout) {
            let event = evict(
                seq_index,
                &mut self.arena,
                &mut self.layout,
                &mut self.ledger,
                &self.config.model,
                &self.config.gpu,
            )?;
            let (charge_now, reload) = match self.config.eviction_overlap {
                EvictionOverlap::None => (
                    event.transfer_seconds / 2.0 + event.rearrange_seconds,
                    event.transfer_seconds / 2.0,
                ),
                EvictionOverlap::Full => (event.rearrange_seconds, 0.0),
            };
            let seq = &mut self.arena[seq_index];
            seq.penalty_seconds_accrued += charge_now;
            seq.pending_reload_seconds = reload;
            self.penalty_s += charge_now;
            self.clock += charge_now;
            pass.penalty_s += charge_now;

            self.overhead_s += self.config.cost.retrain_latency;
            self.clock += self.config.cost.retrain_latency;
            pass.overhead_s += self.config.cost.retrain_latency;

            seq.status = SequenceStatus::Pooled;
            let reservation = self.config.model.kv_cache_bytes(seq.reservation_tokens());
            self.pool.insert(
                seq_index,
                reservation,
                seq.request.arrival_time,
                seq.request.id,
            );
            self.events.push(EvictionLog {
                iteration: self.iterations.len() as u64,
                event,
            });
            pass.evicted += 1;
        }
        Ok(())
    }

    /// Post-pass validation: sequence invariants, ledger safety, batch cap.
    fn check_tick(&self) -> Result<()> {
        for &i in self.layout.rows() {
            self.arena[i].check_invariants(&self.config.model)?;
        }
        self.ledger.check()?;
        if let Some(cap) = self.config.batch_size_cap {
            if self.layout.batch_size() as u64 > cap {
                return Err(Error::Mismatch(format!(
                    "batch size {} exceeds cap {}",
                    self.layout.batch_size(),
                    cap
                )));
            }
        }
        Ok(())
    }

    fn into_report(self, requests_total: u64) -> Result<RunReport> {
        let mut sequences = Vec::with_capacity(self.arena.len());
        let mut within_slo = 0u64;
        for seq in &self.arena {
            let completion_s = seq.completion_time.ok_or_else(|| {
                Error::Mismatch(format!("sequence {} never completed", seq.request.id))
            })?;
            let latency_s = completion_s - seq.request.arrival_time;
            let slo_met = latency_s <= self.config.slo_per_token * seq.request.output_tokens as f64;
            within_slo += slo_met as u64;
            sequences.push(SequenceRecord {
                id: seq.request.id,
                arrival_s: seq.request.arrival_time,
                prompt_tokens: seq.request.prompt_tokens,
                output_tokens: seq.request.output_tokens,
                bucket: seq.bucket,
                predicted_tokens: seq.predicted_tokens,
                allocated_tokens: seq.allocated_tokens,
                completion_s,
                latency_s,
                evictions: seq.eviction_count,
                penalty_s: seq.penalty_seconds_accrued,
                slo_met,
            });
        }
        let total_time_s = self.generation_s + self.penalty_s + self.overhead_s;
        let num_iterations = self.iterations.len() as u64;
        let batch_sum: u64 = self.iterations.iter().map(|r| r.batch_size).sum();
        let report = RunReport {
            policy: self.predictor_mode_name().to_string(),
            requests_total,
            sequences_completed: sequences.len() as u64,
            sequences_within_slo: within_slo,
            num_iterations,
            eviction_count: self.events.len() as u64,
            generation_s: self.generation_s,
            penalty_s: self.penalty_s,
            overhead_s: self.overhead_s,
            total_time_s,
            wall_clock_s: self.clock,
            throughput_seqs_per_s: if total_time_s > 0.0 {
                sequences.len() as f64 / total_time_s
            } else {
                0.0
            },
            average_batch_size: if num_iterations > 0 {
                batch_sum as f64 / num_iterations as f64
            } else {
                0.0
            },
            sequences,
            iterations: self.iterations,
            events: self.events,
        };
        report.check()?;
        Ok(report)
    }

    fn predictor_mode_name(&self) -> &'static str {
        use crate::predictor::PredictorMode::*;
        match self.config.policy.mode {
            Oracle => "oracle",
            MaxLength => "max_length",
            BucketOracle => "bucket_oracle",
            Stochastic => "stochastic",
            TraceProvided => "trace_provided",
        }
    }
}

/// Simulate one run of `trace` under `config`.
///
/// The trace must be sorted by arrival time with unique ids, and every
/// request must fit the model's context window. Deterministic: identical
/// (config, trace) pairs produce identical reports.
pub fn run(config: &EngineConfig, trace: &[TraceRecord]) -> Result<RunReport> {
    let mut engine = Engine::new(config)?;
    let mut seen_ids = std::collections::HashSet::with_capacity(trace.len());
    for (i, record) in trace.iter().enumerate() {
        record.to_request().validate(&config.model)?;
        if !seen_ids.insert(record.id) {
            return Err(Error::InvalidRequest {
                id: record.id,
                reason: "duplicate id in trace".into(),
            });
        }
        if i > 0 && trace[i - 1].arrival_s > record.arrival_s {
            return Err(Error::Mismatch(format!(
                "trace not sorted by arrival time at line {}",
                i + 1
            )));
        }
    }

    let mut next_arrival = 0usize;
    loop {
        let mut pass = PassCounters::default();
        engine.process_arrivals(trace, &mut next_arrival, &mut pass)?;
        engine.admit_pending(&mut pass)?;

        if engine.layout.batch_size() == 0 {
            // Arrived work always admits onto an empty GPU, so an empty
            // batch here means the pool is empty too.
            debug_assert!(engine.pool.is_empty());
            if next_arrival >= trace.len() {
                break;
            }
            // Idle until the next arrival; only the wall clock moves.
            if trace[next_arrival].arrival_s > engine.clock {
                engine.clock = trace[next_arrival].arrival_s;
            }
            continue;
        }

        // Generation tick: one token per running sequence.
        let batch: Vec<usize> = engine.layout.rows().to_vec();
        let batch_size = batch.len() as u64;
        let mut tokens_resident = 0u64;
        for &i in &batch {
            engine.arena[i].generated_tokens += 1;
            tokens_resident += engine.arena[i].resident_tokens();
        }
        let cost = &config.cost;
        let iteration_latency_s = (cost.t_fixed
            + cost.t_ff_per_seq * batch_size as f64
            + cost.t_attn_per_token * tokens_resident as f64)
            * engine.factor;
        engine.generation_s += iteration_latency_s;
        engine.clock += iteration_latency_s;

        // Completions before overruns: a sequence that reaches its true
        // length on its last allocated token finishes, never evicts.
        for &i in &batch {
            if engine.arena[i].generated_tokens == engine.arena[i].request.output_tokens {
                engine.arena[i].status = SequenceStatus::Finished;
                engine.arena[i].completion_time = Some(engine.clock);
                engine.layout.remove_row(i)?;
                engine.ledger.release(
                    config
                        .model
                        .kv_cache_bytes(engine.arena[i].reservation_tokens()),
                )?;
                pass.completed += 1;
            }
        }

        engine.handle_overruns(&mut pass)?;

        // Iteration-level admission: refill memory freed this pass.
        engine.admit_pending(&mut pass)?;

        engine.iterations.push(IterationRecord {
            iteration_index: engine.iterations.len() as u64,
            wall_clock_s: engine.clock,
            batch_size,
            tokens_resident,
            admitted: pass.admitted,
            completed: pass.completed,
            evicted: pass.evicted,
            iteration_latency_s,
            penalty_latency_s: pass.penalty_s,
            overhead_latency_s: pass.overhead_s,
        });
        engine.check_tick()?;
    }

    if engine.ledger.reserved_bytes != 0 {
        return Err(Error::Mismatch(format!(
            "{} bytes still reserved after drain",
            engine.ledger.reserved_bytes
        )));
    }
    engine.into_report(trace.len() as u64)
}
