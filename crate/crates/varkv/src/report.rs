//! Report envelope and machine-readable serializers.
//!
//! Every report embeds the crate version, the PRNG algorithm id, the
//! subcommand, the master seed, and the full config echo, so a report
//! alone suffices to rerun its experiment. Serialization is
//! deterministic: two runs with equal configs produce byte-identical
//! output.
//!
//! JSON is the primary format. CSV is available per subcommand with a
//! pinned column order; the bench schema is
//! `name,params,n,d,payload_bits,compressed_bits,trials,success_rate,ambiguous_rate`.

use std::io::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::cache::ScaleMemory;
use crate::compress::BenchRecord;
use crate::config::RunConfig;
use crate::linalg::PRNG_ALGORITHM;
use crate::protocol::DecodeThresholds;
use crate::{Result, VERSION};

/// Envelope wrapped around every subcommand's results.
#[derive(Debug, Clone, Serialize)]
pub struct Report<T: Serialize> {
    pub version: &'static str,
    pub prng: &'static str,
    pub command: String,
    pub master_seed: u64,
    pub config: RunConfig,
    pub results: T,
}

impl<T: Serialize> Report<T> {
    pub fn new(config: &RunConfig, results: T) -> Report<T> {
        Report {
            version: VERSION,
            prng: PRNG_ALGORITHM,
            command: config.subcommand.to_string(),
            master_seed: config.master_seed,
            config: config.clone(),
            results,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Forward-pass results: both execution paths, their agreement, and
/// the per-scale memory table.
#[derive(Debug, Clone, Serialize)]
pub struct ForwardResults {
    pub n: usize,
    pub d: usize,
    /// `height x width` of each scale's output map.
    pub scale_shapes: Vec<(usize, usize)>,
    pub memory: Vec<ScaleMemory>,
    /// Tokens cached before the last scale is appended.
    pub tokens_before_last: usize,
    /// Tokens cached after the full pyramid.
    pub total_tokens: usize,
    /// Largest entrywise gap between the one-shot and streaming paths.
    pub max_abs_deviation: f64,
    /// Same gap relative to the larger magnitude at each entry.
    pub max_rel_deviation: f64,
}

/// Aggregate over `trials` independent protocol runs.
#[derive(Debug, Clone, Serialize)]
pub struct ProtocolResults {
    pub n: usize,
    pub d: usize,
    pub mode: String,
    pub eta: f64,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Queries landing between the decode bounds, over all trials.
    pub ambiguous_rate: f64,
    /// Bits Alice hands to Bob (identical across trials).
    pub message_bits: u64,
    pub thresholds: DecodeThresholds,
    /// Trials whose key sampling exhausted its resampling budget;
    /// counted as failures in `success_rate`.
    pub gram_exhausted: usize,
    pub gram_resamples_total: usize,
}

/// One JSON line per trial when a trial log is requested.
#[derive(Debug, Clone, Serialize)]
pub struct TrialLine {
    pub trial: usize,
    pub correct_all: bool,
    pub correct_count: usize,
    pub ambiguous_count: usize,
    pub message_bits: u64,
    pub gram_resamples: usize,
}

/// Gram pass-rate measurement over independent seeds.
#[derive(Debug, Clone, Serialize)]
pub struct JlCheckResults {
    pub n: usize,
    pub d: usize,
    pub epsilon: f64,
    /// Keys drawn per seed, the pre-last-scale token count.
    pub keys: usize,
    pub ambient_dim: usize,
    pub seeds: usize,
    pub passes: usize,
    /// Raw single-draw pass rate: no resampling, one embedder per seed.
    pub pass_rate: f64,
    pub mean_max_offdiag: f64,
    pub mean_max_diag_dev: f64,
}

/// Bench results are the raw grid rows.
#[derive(Debug, Clone, Serialize)]
pub struct BenchResults {
    pub epsilon: f64,
    pub rows: Vec<BenchRecord>,
}

fn csv_from<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| crate::Error::InvalidInput {
        op: "csv_from",
        msg: e.to_string(),
    })?;
    String::from_utf8(bytes).map_err(|e| crate::Error::InvalidInput {
        op: "csv_from",
        msg: e.to_string(),
    })
}

pub fn forward_csv(results: &ForwardResults) -> Result<String> {
    csv_from(&results.memory)
}

pub fn protocol_csv(results: &ProtocolResults) -> Result<String> {
    #[derive(Serialize)]
    struct Row<'a> {
        n: usize,
        d: usize,
        mode: &'a str,
        eta: f64,
        trials: usize,
        success_rate: f64,
        ambiguous_rate: f64,
        message_bits: u64,
    }
    csv_from(&[Row {
        n: results.n,
        d: results.d,
        mode: &results.mode,
        eta: results.eta,
        trials: results.trials,
        success_rate: results.success_rate,
        ambiguous_rate: results.ambiguous_rate,
        message_bits: results.message_bits,
    }])
}

pub fn jl_csv(results: &JlCheckResults) -> Result<String> {
    #[derive(Serialize)]
    struct Row {
        n: usize,
        d: usize,
        epsilon: f64,
        keys: usize,
        seeds: usize,
        pass_rate: f64,
        mean_max_offdiag: f64,
        mean_max_diag_dev: f64,
    }
    csv_from(&[Row {
        n: results.n,
        d: results.d,
        epsilon: results.epsilon,
        keys: results.keys,
        seeds: results.seeds,
        pass_rate: results.pass_rate,
        mean_max_offdiag: results.mean_max_offdiag,
        mean_max_diag_dev: results.mean_max_diag_dev,
    }])
}

pub fn bench_csv(rows: &[BenchRecord]) -> Result<String> {
    csv_from(rows)
}

/// Writes one compact JSON object per line.
pub fn write_trial_log(path: &Path, lines: &[TrialLine]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for line in lines {
        serde_json::to_writer(&mut f, line)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}
