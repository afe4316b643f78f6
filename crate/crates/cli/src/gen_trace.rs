//! `kvsim gen-trace`: synthetic trace generation.
//!
//! Distributions use a small `kind:args` grammar (`fixed:60`,
//! `uniform:1,2048`, `lognormal:5.1734,0.5`); the parenthesized spellings
//! (`fixed(60)`) work too. Arrivals are `offline` (everything at t = 0) or
//! `poisson:RATE` (requests per second).

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::{Context, Result};

use kvsim_core::trace::{generate, write_jsonl, ArrivalPattern, LengthDistribution, TraceGenSpec};

use crate::UsageError;

#[derive(Debug, clap::Args)]
pub struct GenTraceArgs {
    /// Destination trace file (one JSON record per line).
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Number of requests.
    #[arg(long, default_value_t = 1000)]
    pub count: u64,
    /// Generator seed; identical seeds give byte-identical files.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output-length law: fixed:L, uniform:LO,HI, or lognormal:MU,SIGMA.
    /// The default log-normal has a ~200-token mean, Q&A-style.
    #[arg(long, value_name = "SPEC", default_value = "lognormal:5.1734,0.5")]
    pub output_dist: String,
    /// Prompt-length law, same grammar (fixed:0 disables prompts).
    #[arg(long, value_name = "SPEC", default_value = "fixed:0")]
    pub prompt_dist: String,
    /// Arrival pattern: offline, or poisson:RATE in requests per second.
    #[arg(long, value_name = "SPEC", default_value = "offline")]
    pub arrivals: String,
    /// Model context the trace must fit (prompt + output).
    #[arg(long, default_value_t = 2048)]
    pub max_seq_len: u64,
}

/// Accept both `kind:a,b` and `kind(a,b)`.
fn split_spec(spec: &str) -> (String, Vec<String>) {
    let normalized = spec.trim().trim_end_matches(')').replace('(', ":");
    let (kind, args) = match normalized.split_once(':') {
        Some((kind, args)) => (kind, args),
        None => (normalized.as_str(), ""),
    };
    let args = args
        .split(',')
        .map(|a| a.trim().to_string())
        .filter(|a| !a.is_empty())
        .collect();
    (kind.trim().to_lowercase(), args)
}

fn parse_length(spec: &str) -> Result<LengthDistribution, UsageError> {
    let bad = || {
        UsageError(format!("bad length distribution '{spec}'; expected fixed:L, uniform:LO,HI, or lognormal:MU,SIGMA"))
    };
    let (kind, args) = split_spec(spec);
    match (kind.as_str(), args.as_slice()) {
        ("fixed", [l]) => Ok(LengthDistribution::Fixed(l.parse().map_err(|_| bad())?)),
        ("uniform", [lo, hi]) => Ok(LengthDistribution::Uniform(
            lo.parse().map_err(|_| bad())?,
            hi.parse().map_err(|_| bad())?,
        )),
        ("lognormal", [mu, sigma]) => Ok(LengthDistribution::LogNormal {
            mu: mu.parse().map_err(|_| bad())?,
            sigma: sigma.parse().map_err(|_| bad())?,
        }),
        _ => Err(bad()),
    }
}

fn parse_arrivals(spec: &str) -> Result<ArrivalPattern, UsageError> {
    let bad = || {
        UsageError(format!(
            "bad arrival pattern '{spec}'; expected offline or poisson:RATE"
        ))
    };
    let (kind, args) = split_spec(spec);
    match (kind.as_str(), args.as_slice()) {
        ("offline", []) => Ok(ArrivalPattern::Offline),
        ("poisson", [rate]) => Ok(ArrivalPattern::Poisson {
            rate: rate.parse().map_err(|_| bad())?,
        }),
        _ => Err(bad()),
    }
}

pub fn run(args: &GenTraceArgs) -> Result<()> {
    let spec = TraceGenSpec {
        count: args.count,
        seed: args.seed,
        output_length: parse_length(&args.output_dist)?,
        prompt_length: parse_length(&args.prompt_dist)?,
        arrivals: parse_arrivals(&args.arrivals)?,
        max_seq_len: args.max_seq_len,
    };
    // Semantic problems (uniform bounds inverted, zero output lengths, ...)
    // are invocation mistakes, same as unparseable specs.
    let records = generate(&spec).map_err(|e| UsageError(e.to_string()))?;
    let file =
        File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut writer = BufWriter::new(file);
    write_jsonl(&mut writer, &records)?;
    log::info!("wrote {} records to {}", records.len(), args.out.display());
    Ok(())
}
