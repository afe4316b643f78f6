//! Engine configuration from a TOML file plus command-line overrides.
//!
//! Every field has a documented default, so running without `--config` (or
//! with an empty file) simulates the 20B-class reference setup: 44 layers,
//! 6144 hidden, 2048-token context, 40 GB of weights on one 80 GB GPU, ten
//! output-length buckets, and the measured stochastic predictor.

use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::ValueEnum;
use serde::Deserialize;

use kvsim_core::{
    BucketScheme, CostModel, EngineConfig, EvictionOverlap, GpuConfig, ModelConfig, PredictorMode,
    PredictorSpec,
};

/// Policy switch used by `--policy` and sweep specs. `predicted` is the
/// stochastic predictor with the configured accuracy knobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Oracle,
    #[value(alias = "max_length")]
    MaxLength,
    Predicted,
    #[value(alias = "bucket_oracle")]
    BucketOracle,
    #[value(alias = "trace_provided")]
    TraceProvided,
}

impl Policy {
    pub fn mode(self) -> PredictorMode {
        match self {
            Policy::Oracle => PredictorMode::Oracle,
            Policy::MaxLength => PredictorMode::MaxLength,
            Policy::Predicted => PredictorMode::Stochastic,
            Policy::BucketOracle => PredictorMode::BucketOracle,
            Policy::TraceProvided => PredictorMode::TraceProvided,
        }
    }
}

/// `--config` plus the per-run override flags shared by `simulate`, `sweep`,
/// and `analyze`.
#[derive(Debug, clap::Args)]
pub struct ConfigArgs {
    /// TOML configuration file; omit to run the reference setup.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Prediction policy (overrides [predictor] mode).
    #[arg(long, value_enum)]
    pub policy: Option<Policy>,
    /// Predictor rng seed (overrides [engine] rng_seed).
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// SLO seconds allowed per generated token.
    #[arg(long, value_name = "SECONDS")]
    pub slo_per_token: Option<f64>,
    /// Number of pipeline GPUs the model is sharded across.
    #[arg(long, value_name = "N")]
    pub gpus: Option<u64>,
    /// Cap on concurrently running sequences.
    #[arg(long, value_name = "N")]
    pub batch_cap: Option<u64>,
}

impl ConfigArgs {
    /// Load the file (if any), fold it over the reference defaults, apply
    /// the flag overrides, and validate the result.
    pub fn build(&self) -> Result<EngineConfig> {
        let file = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str::<ConfigFile>(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => ConfigFile::default(),
        };
        let mut config = file.into_engine_config()?;
        if let Some(policy) = self.policy {
            config.policy.mode = policy.mode();
        }
        if let Some(seed) = self.seed {
            config.rng_seed = seed;
        }
        if let Some(slo) = self.slo_per_token {
            config.slo_per_token = slo;
        }
        if let Some(gpus) = self.gpus {
            config.gpu.num_gpus = gpus;
        }
        if let Some(cap) = self.batch_cap {
            config.batch_size_cap = Some(cap);
        }
        config.validate().context("validating configuration")?;
        Ok(config)
    }
}

/// The TOML document. Sections mirror `EngineConfig`; every field is
/// optional and defaults to the reference setup.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    model: ModelSection,
    #[serde(default)]
    gpu: GpuSection,
    #[serde(default)]
    cost: CostSection,
    #[serde(default)]
    predictor: PredictorSection,
    #[serde(default)]
    scheme: SchemeSection,
    #[serde(default)]
    engine: EngineSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    name: Option<String>,
    num_layers: Option<u64>,
    hidden_dim: Option<u64>,
    max_seq_len: Option<u64>,
    bytes_per_number: Option<u64>,
    weight_bytes: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GpuSection {
    hbm_capacity: Option<u64>,
    bw_hbm: Option<f64>,
    bw_h2d: Option<f64>,
    num_gpus: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostSection {
    t_fixed: Option<f64>,
    t_ff_per_seq: Option<f64>,
    t_attn_per_token: Option<f64>,
    t_prefill_per_token: Option<f64>,
    predictor_latency: Option<f64>,
    retrain_latency: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictorSection {
    /// One of oracle, max_length, bucket_oracle, stochastic, trace_provided.
    mode: Option<PredictorMode>,
    bucket_accuracy: Option<f64>,
    mean_bucket_distance: Option<f64>,
    short_fraction: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemeSection {
    num_buckets: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EngineSection {
    eviction_overlap: Option<EvictionOverlap>,
    rng_seed: Option<u64>,
    batch_size_cap: Option<u64>,
    max_skip_iterations: Option<u64>,
    slo_per_token: Option<f64>,
}

impl ConfigFile {
    fn into_engine_config(self) -> Result<EngineConfig> {
        let reference_model = ModelConfig::reference();
        let model = ModelConfig {
            name: self.model.name.unwrap_or(reference_model.name),
            num_layers: self.model.num_layers.unwrap_or(reference_model.num_layers),
            hidden_dim: self.model.hidden_dim.unwrap_or(reference_model.hidden_dim),
            max_seq_len: self
                .model
                .max_seq_len
                .unwrap_or(reference_model.max_seq_len),
            bytes_per_number: self
                .model
                .bytes_per_number
                .unwrap_or(reference_model.bytes_per_number),
            weight_bytes: self
                .model
                .weight_bytes
                .unwrap_or(reference_model.weight_bytes),
        };
        let reference_gpu = GpuConfig::reference();
        let gpu = GpuConfig {
            hbm_capacity: self.gpu.hbm_capacity.unwrap_or(reference_gpu.hbm_capacity),
            bw_hbm: self.gpu.bw_hbm.unwrap_or(reference_gpu.bw_hbm),
            bw_h2d: self.gpu.bw_h2d.unwrap_or(reference_gpu.bw_h2d),
            num_gpus: self.gpu.num_gpus.unwrap_or(reference_gpu.num_gpus),
        };
        let reference_cost = CostModel::reference();
        let cost = CostModel {
            t_fixed: self.cost.t_fixed.unwrap_or(reference_cost.t_fixed),
            t_ff_per_seq: self
                .cost
                .t_ff_per_seq
                .unwrap_or(reference_cost.t_ff_per_seq),
            t_attn_per_token: self
                .cost
                .t_attn_per_token
                .unwrap_or(reference_cost.t_attn_per_token),
            t_prefill_per_token: self
                .cost
                .t_prefill_per_token
                .unwrap_or(reference_cost.t_prefill_per_token),
            predictor_latency: self
                .cost
                .predictor_latency
                .unwrap_or(reference_cost.predictor_latency),
            retrain_latency: self
                .cost
                .retrain_latency
                .unwrap_or(reference_cost.retrain_latency),
        };
        let rng_seed = self.engine.rng_seed.unwrap_or(0);
        let reference_policy = PredictorSpec::stochastic_reference(rng_seed);
        let policy = PredictorSpec {
            mode: self.predictor.mode.unwrap_or(reference_policy.mode),
            bucket_accuracy: self
                .predictor
                .bucket_accuracy
                .unwrap_or(reference_policy.bucket_accuracy),
            mean_bucket_distance: self
                .predictor
                .mean_bucket_distance
                .unwrap_or(reference_policy.mean_bucket_distance),
            short_fraction: self
                .predictor
                .short_fraction
                .unwrap_or(reference_policy.short_fraction),
            rng_seed,
        };
        let scheme = BucketScheme::new(model.max_seq_len, self.scheme.num_buckets.unwrap_or(10))?;
        Ok(EngineConfig {
            model,
            gpu,
            cost,
            policy,
            scheme,
            eviction_overlap: self
                .engine
                .eviction_overlap
                .unwrap_or(EvictionOverlap::None),
            rng_seed,
            batch_size_cap: self.engine.batch_size_cap,
            max_skip_iterations: self.engine.max_skip_iterations,
            slo_per_token: self.engine.slo_per_token.unwrap_or(0.1875),
        })
    }
}
