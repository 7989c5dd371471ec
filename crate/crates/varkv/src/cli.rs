//! Subcommand drivers behind the command-line binary.
//!
//! Each driver takes a validated [`RunConfig`], runs its experiment,
//! and returns the report text in the configured format. All
//! randomness fans out from `master_seed` through documented seed
//! derivation, so equal configs produce byte-identical reports.

use std::fs;

use crate::cache::{incremental_forward, ScaleSchedule};
use crate::compress::{bench_compressor, Compressor};
use crate::config::{OutputFormat, RunConfig, Subcommand};
use crate::jl::{build_embedder, check_gram};
use crate::linalg::derive_seed;
use crate::linalg::SeededRng;
use crate::protocol::{compute_thresholds, run_protocol, Mode, NoiseKind, ProtocolConfig};
use crate::report::{
    bench_csv, forward_csv, jl_csv, protocol_csv, write_trial_log, BenchResults, ForwardResults,
    JlCheckResults, ProtocolResults, Report, TrialLine,
};
use crate::var::{var_forward, AttentionWeights, TokenMap, UpInterpolator};
use crate::{Error, Result};

/// Seed stream for forward-pass model parameters, disjoint from the
/// protocol's per-trial streams.
const STREAM_MODEL: u64 = 5;

/// Runs the configured subcommand and returns the report text.
pub fn run(config: &RunConfig) -> Result<String> {
    config.validate()?;
    match config.subcommand {
        Subcommand::Forward => run_forward(config),
        Subcommand::Protocol => run_protocol_cmd(config),
        Subcommand::JlCheck => run_jl_check(config),
        Subcommand::Bench => run_bench(config),
    }
}

/// Builds the forward-pass model for one seed: a Gaussian initial
/// token, one Gaussian weight set shared by every scale, and
/// nearest-neighbor up-interpolators. Sharing the weight set keeps
/// the streaming path bit-identical to the one-shot path, which is
/// what the cross-path deviation in the report measures.
fn forward_model(
    n: usize,
    d: usize,
    master_seed: u64,
) -> Result<(ScaleSchedule, TokenMap, Vec<AttentionWeights>, Vec<UpInterpolator>)> {
    let schedule = ScaleSchedule::new(n)?;
    let num_scales = schedule.num_scales();
    let mut rng = SeededRng::new(derive_seed(master_seed, STREAM_MODEL));
    let token: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
    let x_init = TokenMap::from_single_token(&token)?;
    let shared = AttentionWeights::gaussian(d, &mut rng)?;
    let weights = vec![shared; num_scales];
    let mut interps = Vec::with_capacity(num_scales.saturating_sub(1));
    for k in 1..num_scales {
        let side = 1usize << (k - 1);
        interps.push(UpInterpolator::nearest_neighbor(side, side, 2 * side, 2 * side)?);
    }
    Ok((schedule, x_init, weights, interps))
}

fn run_forward(config: &RunConfig) -> Result<String> {
    let (schedule, x_init, weights, interps) =
        forward_model(config.n, config.d, config.master_seed)?;
    let one_shot = var_forward(&x_init, &weights, &interps, schedule.num_scales())?;
    let streaming = incremental_forward(&x_init, &weights, &interps, &schedule)?;

    let mut max_abs = 0.0f64;
    let mut max_rel = 0.0f64;
    for (a, b) in one_shot.iter().zip(&streaming.maps) {
        for (x, y) in a.as_matrix().data().iter().zip(b.as_matrix().data()) {
            let abs = (x - y).abs();
            max_abs = max_abs.max(abs);
            let denom = x.abs().max(y.abs());
            if denom > 0.0 {
                max_rel = max_rel.max(abs / denom);
            }
        }
    }

    if let Some(dir) = &config.dump_dir {
        fs::create_dir_all(dir)?;
        for (k, map) in streaming.maps.iter().enumerate() {
            let mut f = fs::File::create(dir.join(format!("scale_{}.tokmap", k + 1)))?;
            map.write_binary(&mut f)?;
        }
        let mut f = fs::File::create(dir.join("appends.kvlog"))?;
        streaming.log.write_binary(&mut f)?;
    }

    let results = ForwardResults {
        n: config.n,
        d: config.d,
        scale_shapes: schedule.shapes(),
        memory: streaming.memory.clone(),
        tokens_before_last: schedule.tokens_before_last(),
        total_tokens: schedule.total_tokens(),
        max_abs_deviation: max_abs,
        max_rel_deviation: max_rel,
    };
    match config.format {
        OutputFormat::Json => Report::new(config, results).to_json(),
        OutputFormat::Csv => forward_csv(&results),
    }
}

fn protocol_mode(config: &RunConfig) -> Mode {
    if config.eta == 0.0 {
        Mode::Exact
    } else {
        Mode::Approximate {
            eta: config.eta,
            noise: config.noise.unwrap_or(NoiseKind::Uniform),
        }
    }
}

fn run_protocol_cmd(config: &RunConfig) -> Result<String> {
    let mode = protocol_mode(config);
    let pconfig = ProtocolConfig {
        n: config.n,
        d: config.d,
        epsilon: config.epsilon,
        mode,
    };
    let thresholds = compute_thresholds(config.n, config.epsilon, config.eta)?;
    let schedule = ScaleSchedule::new(config.n)?;
    let message_bits = 2 * (schedule.tokens_before_last() * config.d) as u64 * 64;

    let mut successes = 0usize;
    let mut ambiguous = 0usize;
    let mut gram_exhausted = 0usize;
    let mut resamples_total = 0usize;
    let mut lines = Vec::with_capacity(config.trials);
    for trial in 0..config.trials {
        let seed = derive_seed(config.master_seed, trial as u64);
        match run_protocol(&pconfig, seed) {
            Ok(res) => {
                debug_assert_eq!(res.message_bits, message_bits);
                successes += usize::from(res.correct_all);
                ambiguous += res.ambiguous_count;
                resamples_total += res.gram_resamples as usize;
                lines.push(TrialLine {
                    trial,
                    correct_all: res.correct_all,
                    correct_count: res.correct_count,
                    ambiguous_count: res.ambiguous_count,
                    message_bits: res.message_bits,
                    gram_resamples: res.gram_resamples as usize,
                });
            }
            // A trial that cannot produce an acceptable key family is
            // an honest failure, not an abort of the whole run.
            Err(Error::GramRejected { attempts, .. }) => {
                gram_exhausted += 1;
                resamples_total += attempts as usize;
                lines.push(TrialLine {
                    trial,
                    correct_all: false,
                    correct_count: 0,
                    ambiguous_count: 0,
                    message_bits: 0,
                    gram_resamples: attempts as usize,
                });
            }
            Err(e) => return Err(e),
        }
    }
    if let Some(path) = &config.trial_log {
        write_trial_log(path, &lines)?;
    }

    let results = ProtocolResults {
        n: config.n,
        d: config.d,
        mode: mode.label().to_string(),
        eta: config.eta,
        trials: config.trials,
        successes,
        success_rate: successes as f64 / config.trials as f64,
        ambiguous_rate: ambiguous as f64 / (config.trials * config.n * config.n) as f64,
        message_bits,
        thresholds,
        gram_exhausted,
        gram_resamples_total: resamples_total,
    };
    match config.format {
        OutputFormat::Json => Report::new(config, results).to_json(),
        OutputFormat::Csv => protocol_csv(&results),
    }
}

fn run_jl_check(config: &RunConfig) -> Result<String> {
    let schedule = ScaleSchedule::new(config.n)?;
    let keys_per_seed = schedule.tokens_before_last();
    let ambient = (4 * config.n * config.n).max(keys_per_seed);
    let mut passes = 0usize;
    let mut sum_offdiag = 0.0;
    let mut sum_diag_dev = 0.0;
    for i in 0..config.trials {
        let seed = derive_seed(config.master_seed, i as u64);
        let embedder = build_embedder(ambient, config.d, seed)?;
        let keys = embedder.embed_basis(keys_per_seed)?;
        let report = check_gram(&keys, config.epsilon)?;
        passes += usize::from(report.passed);
        sum_offdiag += report.max_offdiag;
        sum_diag_dev += report.max_diag_dev;
    }
    let results = JlCheckResults {
        n: config.n,
        d: config.d,
        epsilon: config.epsilon,
        keys: keys_per_seed,
        ambient_dim: ambient,
        seeds: config.trials,
        passes,
        pass_rate: passes as f64 / config.trials as f64,
        mean_max_offdiag: sum_offdiag / config.trials as f64,
        mean_max_diag_dev: sum_diag_dev / config.trials as f64,
    };
    match config.format {
        OutputFormat::Json => Report::new(config, results).to_json(),
        OutputFormat::Csv => jl_csv(&results),
    }
}

/// The default bench grid: one row per scheme and parameter choice.
/// Eviction keeps the floor half of the token rows (so at the
/// smallest size it keeps none), quantization sweeps the shipped bit
/// widths plus the values-only 1-bit point, and the sketch runs at
/// half and full rank.
fn default_compressors(tokens: usize, d: usize) -> Vec<Compressor> {
    let mut list = vec![
        Compressor::Identity,
        Compressor::EvictKeepLast { keep: tokens / 2 },
    ];
    for bits in [32u8, 16, 8, 4, 1] {
        list.push(Compressor::Quantize {
            key_bits: Some(bits),
            value_bits: Some(bits),
        });
    }
    list.push(Compressor::Quantize {
        key_bits: None,
        value_bits: Some(1),
    });
    let half = (d / 2).max(1);
    if half < d {
        list.push(Compressor::SketchValues { rank: half });
    }
    list.push(Compressor::SketchValues { rank: d });
    list
}

/// Scheme parse failures from user input are config errors, except
/// the unknown-name case which already carries the known-scheme list.
fn parse_compressor(spec: &str) -> Result<Compressor> {
    Compressor::parse(spec).map_err(|e| match e {
        Error::UnknownCompressor { .. } => e,
        other => Error::Config(other.to_string()),
    })
}

fn run_bench(config: &RunConfig) -> Result<String> {
    let schedule = ScaleSchedule::new(config.n)?;
    let compressors = if config.compressors.is_empty() {
        default_compressors(schedule.tokens_before_last(), config.d)
    } else {
        config
            .compressors
            .iter()
            .map(|s| parse_compressor(s))
            .collect::<Result<Vec<_>>>()?
    };
    let mut rows = Vec::with_capacity(compressors.len());
    for compressor in &compressors {
        rows.push(bench_compressor(
            config.n,
            config.d,
            config.epsilon,
            compressor,
            config.trials,
            config.master_seed,
        )?);
    }
    match config.format {
        OutputFormat::Json => Report::new(
            config,
            BenchResults {
                epsilon: config.epsilon,
                rows,
            },
        )
        .to_json(),
        OutputFormat::Csv => bench_csv(&rows),
    }
}
