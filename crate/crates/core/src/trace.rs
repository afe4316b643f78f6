//! Trace records, line-delimited trace I/O, and synthetic trace generation.
//!
//! A trace is UTF-8 text with one JSON object per line. The format is
//! streamable and diff-friendly; the optional `predicted_bucket` field feeds
//! the trace-provided prediction policy.

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::request::Request;

/// One trace line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub id: u64,
    pub arrival_s: f64,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
    /// Externally supplied bucket for the trace-provided policy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_bucket: Option<u32>,
}

impl TraceRecord {
    pub fn to_request(&self) -> Request {
        Request {
            id: self.id,
            arrival_time: self.arrival_s,
            prompt_tokens: self.prompt_tokens,
            output_tokens: self.output_tokens,
        }
    }
}

/// Parse a line-delimited trace. Errors carry 1-based line numbers; blank
/// lines are ignored.
pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<TraceRecord>> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TraceRecord = serde_json::from_str(&line).map_err(|e| Error::TraceParse {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Write records one JSON object per line. Output is byte-deterministic for
/// identical input.
pub fn write_jsonl<W: Write>(mut writer: W, records: &[TraceRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r).map_err(|e| Error::Mismatch(e.to_string()))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Output-length law for synthetic traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthDistribution {
    /// Every request gets exactly this many tokens.
    Fixed(u64),
    /// Uniform over [lo, hi], inclusive.
    Uniform(u64, u64),
    /// Log-normal with the given underlying normal parameters, clamped to
    /// [1, max_seq_len]. With small tail mass past the clamp the sample mean
    /// stays at exp(mu + sigma^2 / 2).
    LogNormal { mu: f64, sigma: f64 },
}

impl LengthDistribution {
    fn validate(&self) -> Result<()> {
        match *self {
            LengthDistribution::Fixed(v) => {
                if v < 1 {
                    return Err(Error::InvalidConfig("fixed length must be >= 1".into()));
                }
            }
            LengthDistribution::Uniform(lo, hi) => {
                if lo < 1 || hi < lo {
                    return Err(Error::InvalidConfig(format!(
                        "uniform bounds ({lo}, {hi}) need 1 <= lo <= hi"
                    )));
                }
            }
            LengthDistribution::LogNormal { mu, sigma } => {
                if !mu.is_finite() || !sigma.is_finite() || sigma < 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "lognormal parameters ({mu}, {sigma}) invalid"
                    )));
                }
            }
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng, max: u64) -> u64 {
        match *self {
            LengthDistribution::Fixed(v) => v.min(max),
            LengthDistribution::Uniform(lo, hi) => {
                Uniform::new_inclusive(lo, hi).sample(rng).min(max)
            }
            LengthDistribution::LogNormal { mu, sigma } => {
                let draw = LogNormal::new(mu, sigma)
                    .expect("validated parameters")
                    .sample(rng);
                (draw.round() as u64).clamp(1, max)
            }
        }
    }
}

/// Arrival-time law for synthetic traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalPattern {
    /// Everything arrives at t = 0 (offline batch scenario).
    Offline,
    /// Poisson process with the given rate in requests per second.
    Poisson { rate: f64 },
}

/// Recipe for a synthetic trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceGenSpec {
    pub count: u64,
    pub seed: u64,
    pub output_length: LengthDistribution,
    /// Prompt lengths; clamped so prompt + output fits max_seq_len.
    pub prompt_length: LengthDistribution,
    pub arrivals: ArrivalPattern,
    pub max_seq_len: u64,
}

/// Generate a trace, deterministic per seed, sorted by arrival time.
pub fn generate(spec: &TraceGenSpec) -> Result<Vec<TraceRecord>> {
    spec.output_length.validate()?;
    // Fixed(0) prompts are the common no-prompt case; other laws must be valid.
    if !matches!(spec.prompt_length, LengthDistribution::Fixed(0)) {
        spec.prompt_length.validate()?;
    }
    if let ArrivalPattern::Poisson { rate } = spec.arrivals {
        if rate <= 0.0 || !rate.is_finite() {
            return Err(Error::InvalidConfig("poisson rate must be positive".into()));
        }
    }
    if spec.max_seq_len < 1 {
        return Err(Error::InvalidConfig("max_seq_len must be >= 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut clock = 0.0_f64;
    let mut records = Vec::with_capacity(spec.count as usize);
    for id in 0..spec.count {
        let output_tokens = spec.output_length.sample(&mut rng, spec.max_seq_len);
        let prompt_cap = spec.max_seq_len - output_tokens;
        let prompt_tokens = match spec.prompt_length {
            LengthDistribution::Fixed(0) => 0,
            other => other.sample(&mut rng, spec.max_seq_len).min(prompt_cap),
        };
        let arrival_s = match spec.arrivals {
            ArrivalPattern::Offline => 0.0,
            ArrivalPattern::Poisson { rate } => {
                clock += Exp::new(rate).expect("validated rate").sample(&mut rng);
                clock
            }
        };
        records.push(TraceRecord {
            id,
            arrival_s,
            prompt_tokens,
            output_tokens,
            predicted_bucket: None,
        });
    }
    Ok(records)
}
