//! One-way multi-index protocol over a streaming attention cache.
//!
//! Alice holds a random bit matrix `x` with `L` rows of `d` bits, where
//! `L` is the token count a side-`n` pyramid accumulates before its
//! final scale. She appends one token per row: key `k_l` from a random
//! projection, value row `x_l`. Bob, holding only the cache, appends
//! the final scale's `n^2` tokens as zero rows and asks for `n^2`
//! distinct cells `(l, j)`. Querying with `C * k_l` makes the softmax
//! spike at row `l`: provided the keys passed the Gram check with slack
//! `epsilon`, the spike weight is at least `delta_high` and everything
//! else sums to at most `delta_low`, so output coordinate `j` lands
//! below `delta_low` when the bit is 0 and above `delta_high` when it
//! is 1. The gap survives any multiplicative output perturbation up to
//! `eta` once the decode constant is enlarged, which is the approximate
//! mode.
//!
//! Since the decoded bits travel only through the cache, every protocol
//! success certifies that the cache bits at the hand-off were enough to
//! carry them.

use serde::Serialize;

use crate::cache::{KvCache, ScaleSchedule};
use crate::jl::{check_gram, sample_checked_keys, GramReport, DEFAULT_MAX_GRAM_ATTEMPTS};
use crate::linalg::{derive_seed, Matrix, SeededRng};
use crate::{Error, Result};

/// Seed stream tags, kept distinct so one trial seed fans out into
/// independent key, payload, and noise randomness.
pub(crate) const STREAM_JL: u64 = 1;
pub(crate) const STREAM_INSTANCE: u64 = 2;
pub(crate) const STREAM_NOISE: u64 = 3;

/// How Bob's attention outputs are perturbed in approximate mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Each entry scaled by an independent factor uniform in
    /// `[1 - eta, 1 + eta]`.
    Uniform,
    /// Every entry scaled by exactly `1 - eta`.
    LowExtreme,
    /// Every entry scaled by exactly `1 + eta`.
    HighExtreme,
}

/// Protocol operating mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Mode {
    /// Outputs read back exactly as attention produced them.
    Exact,
    /// Outputs perturbed multiplicatively by at most `eta`.
    Approximate { eta: f64, noise: NoiseKind },
}

impl Mode {
    pub fn eta(&self) -> f64 {
        match self {
            Mode::Exact => 0.0,
            Mode::Approximate { eta, .. } => *eta,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Mode::Exact => "exact",
            Mode::Approximate { .. } => "approximate",
        }
    }
}

/// Full protocol configuration for one family of trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProtocolConfig {
    pub n: usize,
    pub d: usize,
    pub epsilon: f64,
    #[serde(flatten)]
    pub mode: Mode,
}

/// Decode constant and the two softmax mass bounds it induces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecodeThresholds {
    pub epsilon: f64,
    pub eta: f64,
    /// Query scaling constant `C`.
    pub c: f64,
    /// Upper bound `delta_low` on the off-spike output mass.
    pub delta_low: f64,
    /// Lower bound `delta_high` on the spike weight.
    pub delta_high: f64,
    /// Competing softmax entries per query, `L + n^2 - 1`.
    pub competitors: u64,
}

impl DecodeThresholds {
    /// Largest value still decoded as 0: `(1 + eta) * delta_low`.
    pub fn decode_low(&self) -> f64 {
        (1.0 + self.eta) * self.delta_low
    }

    /// Smallest value already decoded as 1: `(1 - eta) * delta_high`.
    pub fn decode_high(&self) -> f64 {
        (1.0 - self.eta) * self.delta_high
    }

    /// Tie-break point for ambiguous readings.
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.decode_low() + self.decode_high())
    }
}

fn mass_bounds(c: f64, epsilon: f64, competitors: f64) -> (f64, f64) {
    // delta_low = M e^(C eps) / (M e^(C eps) + e^(C (1-eps))) and
    // delta_high its complement; dividing through by e^(C eps) keeps
    // the exponent at C (1 - 2 eps), so enlarged constants degrade to
    // (0, 1) instead of overflowing.
    let g = (c * (1.0 - 2.0 * epsilon)).exp();
    (competitors / (competitors + g), g / (competitors + g))
}

/// Computes the decode constant and mass bounds for a side-`n` pyramid.
///
/// Starts from `C = 2 ln(M) / (1 - epsilon)` and doubles until the
/// noise-adjusted decode window `(1+eta) delta_low < (1-eta) delta_high`
/// opens; with `eta = 0` the starting constant already splits the mass
/// as `delta_low + delta_high = 1`.
pub fn compute_thresholds(n: usize, epsilon: f64, eta: f64) -> Result<DecodeThresholds> {
    if !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo { n });
    }
    if n < 2 {
        return Err(Error::InvalidInput {
            op: "compute_thresholds",
            msg: "need at least two scales, so n >= 2".into(),
        });
    }
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::InvalidInput {
            op: "compute_thresholds",
            msg: format!("epsilon must lie in (0, 0.5), got {epsilon}"),
        });
    }
    if !(0.0..1.0).contains(&eta) {
        return Err(Error::InvalidInput {
            op: "compute_thresholds",
            msg: format!("eta must lie in [0, 1), got {eta}"),
        });
    }
    let schedule = ScaleSchedule::new(n)?;
    let competitors = (schedule.tokens_before_last() + n * n - 1) as f64;
    let mut c = 2.0 * competitors.ln() / (1.0 - epsilon);
    for _ in 0..64 {
        let (delta_low, delta_high) = mass_bounds(c, epsilon, competitors);
        if (1.0 + eta) * delta_low < (1.0 - eta) * delta_high {
            return Ok(DecodeThresholds {
                epsilon,
                eta,
                c,
                delta_low,
                delta_high,
                competitors: competitors as u64,
            });
        }
        c *= 2.0;
    }
    let (delta_low, delta_high) = mass_bounds(c, epsilon, competitors);
    Err(Error::NoFeasibleC {
        last_c: c,
        gap: (1.0 + eta) * delta_low - (1.0 - eta) * delta_high,
    })
}

/// Alice's side of an instance: the payload bits and the cells Bob will
/// ask for.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolInstance {
    n: usize,
    d: usize,
    /// `L x d` matrix with entries in {0, 1}.
    payload: Matrix,
    /// `n^2` distinct (row, col) cells.
    queries: Vec<(usize, usize)>,
    seed: u64,
}

impl ProtocolInstance {
    /// Samples payload bits uniformly and draws `n^2` distinct cells
    /// without replacement.
    pub fn random(n: usize, d: usize, seed: u64) -> Result<ProtocolInstance> {
        let schedule = ScaleSchedule::new(n)?;
        if n < 2 {
            return Err(Error::InvalidInput {
                op: "ProtocolInstance::random",
                msg: "need at least two scales, so n >= 2".into(),
            });
        }
        if d == 0 {
            return Err(Error::ZeroDimension {
                op: "ProtocolInstance::random",
                rows: 0,
                cols: 0,
            });
        }
        let l = schedule.tokens_before_last();
        let cells = l * d;
        let wanted = n * n;
        if wanted > cells {
            return Err(Error::InvalidInput {
                op: "ProtocolInstance::random",
                msg: format!(
                    "cannot draw {wanted} distinct cells from a {l}x{d} payload"
                ),
            });
        }
        let mut rng = SeededRng::new(seed);
        let mut payload = Matrix::zeros(l, d);
        for r in 0..l {
            for c in 0..d {
                payload.set(r, c, if rng.bit() { 1.0 } else { 0.0 });
            }
        }
        // Partial Fisher-Yates over the flattened cells.
        let mut pool: Vec<usize> = (0..cells).collect();
        let mut queries = Vec::with_capacity(wanted);
        for i in 0..wanted {
            let j = i + rng.index(cells - i);
            pool.swap(i, j);
            queries.push((pool[i] / d, pool[i] % d));
        }
        ProtocolInstance::with_parts(n, d, payload, queries, seed)
    }

    /// Test hook: builds an instance from explicit parts, validating
    /// payload shape, bit values, and cell distinctness.
    pub fn with_parts(
        n: usize,
        d: usize,
        payload: Matrix,
        queries: Vec<(usize, usize)>,
        seed: u64,
    ) -> Result<ProtocolInstance> {
        let schedule = ScaleSchedule::new(n)?;
        let l = schedule.tokens_before_last();
        if payload.rows() != l || payload.cols() != d {
            return Err(Error::ShapeMismatch {
                op: "ProtocolInstance::with_parts",
                lhs: (l, d),
                rhs: (payload.rows(), payload.cols()),
            });
        }
        if payload.data().iter().any(|&x| x != 0.0 && x != 1.0) {
            return Err(Error::InvalidInput {
                op: "ProtocolInstance::with_parts",
                msg: "payload entries must be 0 or 1".into(),
            });
        }
        if queries.len() != n * n {
            return Err(Error::InvalidInput {
                op: "ProtocolInstance::with_parts",
                msg: format!("need {} query cells, got {}", n * n, queries.len()),
            });
        }
        let mut seen = std::collections::HashSet::new();
        for &(r, c) in &queries {
            if r >= l || c >= d {
                return Err(Error::InvalidInput {
                    op: "ProtocolInstance::with_parts",
                    msg: format!("cell ({r}, {c}) outside the {l}x{d} payload"),
                });
            }
            if !seen.insert((r, c)) {
                return Err(Error::InvalidInput {
                    op: "ProtocolInstance::with_parts",
                    msg: format!("cell ({r}, {c}) repeated"),
                });
            }
        }
        Ok(ProtocolInstance {
            n,
            d,
            payload,
            queries,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Payload row count `L`.
    pub fn rows(&self) -> usize {
        self.payload.rows()
    }

    pub fn payload(&self) -> &Matrix {
        &self.payload
    }

    pub fn queries(&self) -> &[(usize, usize)] {
        &self.queries
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// True bit at a payload cell.
    pub fn bit(&self, row: usize, col: usize) -> bool {
        self.payload.get(row, col) == 1.0
    }
}

/// Outcome of one full protocol run.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolResult {
    /// Bob's decoded bit per query cell, in query order.
    pub decoded: Vec<u8>,
    /// Ground-truth bits in the same order.
    pub expected: Vec<u8>,
    pub correct_all: bool,
    pub correct_count: usize,
    /// Queries that landed strictly between the decode bounds and fell
    /// back to the midpoint rule.
    pub ambiguous_count: usize,
    /// Cache payload bits at the Alice-to-Bob hand-off.
    pub message_bits: u64,
    /// Key families redrawn before the Gram check passed.
    pub gram_resamples: u32,
    /// Gram report of the accepted key family.
    pub gram: GramReport,
}

/// Multiplicative output perturbation, applied entrywise to Bob's
/// attention outputs before decoding.
#[derive(Debug)]
pub struct NoiseSource {
    kind: NoiseKind,
    eta: f64,
    rng: SeededRng,
}

impl NoiseSource {
    pub fn new(kind: NoiseKind, eta: f64, seed: u64) -> NoiseSource {
        NoiseSource {
            kind,
            eta,
            rng: SeededRng::new(seed),
        }
    }

    /// Perturbs every entry (row-major order), so the draw sequence is
    /// independent of which cells Bob reads.
    fn apply(&mut self, outputs: &mut Matrix) {
        for r in 0..outputs.rows() {
            for c in 0..outputs.cols() {
                let factor = match self.kind {
                    NoiseKind::Uniform => self.rng.uniform_in(1.0 - self.eta, 1.0 + self.eta),
                    NoiseKind::LowExtreme => 1.0 - self.eta,
                    NoiseKind::HighExtreme => 1.0 + self.eta,
                };
                outputs.set(r, c, outputs.get(r, c) * factor);
            }
        }
    }
}

/// Alice's hand-off: appends key row `k_l` with value row `x_l` for
/// every payload row into a fresh cache. Returns the cache payload bits
/// at the hand-off, the protocol's message size.
pub fn alice_encode(
    inst: &ProtocolInstance,
    keys: &[Vec<f64>],
    cache: &mut KvCache,
) -> Result<u64> {
    if cache.tokens() != 0 {
        return Err(Error::InvalidInput {
            op: "alice_encode",
            msg: format!("cache already holds {} tokens", cache.tokens()),
        });
    }
    if keys.len() != inst.rows() {
        return Err(Error::InvalidInput {
            op: "alice_encode",
            msg: format!(
                "{} keys for {} payload rows",
                keys.len(),
                inst.rows()
            ),
        });
    }
    let key_block = Matrix::from_rows(keys)?;
    cache.append(&key_block, &inst.payload)?;
    Ok(cache.memory_bits())
}

/// Bob's side: appends the final scale's `n^2` tokens as zero rows,
/// queries every requested cell with the scaled key of its row, and
/// decodes each reading against the thresholds.
pub fn bob_query(
    inst: &ProtocolInstance,
    keys: &[Vec<f64>],
    thresholds: &DecodeThresholds,
    cache: &mut KvCache,
    noise: Option<&mut NoiseSource>,
) -> Result<ProtocolResult> {
    if keys.len() != inst.rows() {
        return Err(Error::InvalidInput {
            op: "bob_query",
            msg: format!("{} keys for {} payload rows", keys.len(), inst.rows()),
        });
    }
    if cache.tokens() != inst.rows() {
        return Err(Error::InvalidInput {
            op: "bob_query",
            msg: format!(
                "cache holds {} tokens, expected Alice's {}",
                cache.tokens(),
                inst.rows()
            ),
        });
    }
    query_and_decode(inst, keys, thresholds, cache, noise)
}

/// Decode pass shared with the compressor harness, which hands Bob a
/// cache that may hold fewer rows than Alice wrote.
pub(crate) fn query_and_decode(
    inst: &ProtocolInstance,
    keys: &[Vec<f64>],
    thresholds: &DecodeThresholds,
    cache: &mut KvCache,
    mut noise: Option<&mut NoiseSource>,
) -> Result<ProtocolResult> {
    let wanted = inst.n * inst.n;
    let zeros = Matrix::zeros(wanted, inst.d);
    cache.append(&zeros, &zeros)?;

    // All queries in one batch; appends are already done, so this is
    // equivalent to asking one cell at a time.
    let mut q = Matrix::zeros(wanted, inst.d);
    for (i, &(row, _)) in inst.queries.iter().enumerate() {
        for (c, &x) in keys[row].iter().enumerate() {
            q.set(i, c, thresholds.c * x);
        }
    }
    let mut outputs = cache.attend(&q)?;
    if let Some(src) = noise.as_deref_mut() {
        src.apply(&mut outputs);
    }

    let lo = thresholds.decode_low();
    let hi = thresholds.decode_high();
    let mid = thresholds.midpoint();
    let mut decoded = Vec::with_capacity(wanted);
    let mut expected = Vec::with_capacity(wanted);
    let mut ambiguous_count = 0;
    let mut correct_count = 0;
    for (i, &(row, col)) in inst.queries.iter().enumerate() {
        let v = outputs.get(i, col);
        let bit = if v <= lo {
            0u8
        } else if v >= hi {
            1u8
        } else {
            ambiguous_count += 1;
            u8::from(v >= mid)
        };
        let truth = u8::from(inst.bit(row, col));
        correct_count += usize::from(bit == truth);
        decoded.push(bit);
        expected.push(truth);
    }
    Ok(ProtocolResult {
        correct_all: correct_count == wanted,
        correct_count,
        ambiguous_count,
        decoded,
        expected,
        message_bits: 0,
        gram_resamples: 0,
        gram: GramReport {
            max_offdiag: 0.0,
            max_diag_dev: 0.0,
            epsilon: thresholds.epsilon,
            passed: true,
        },
    })
}

/// Runs one complete trial: sample keys until the Gram check passes
/// (fresh derived seed each attempt, at most
/// [`DEFAULT_MAX_GRAM_ATTEMPTS`]), sample an instance, hand the cache
/// from Alice to Bob, decode every cell.
pub fn run_protocol(config: &ProtocolConfig, trial_seed: u64) -> Result<ProtocolResult> {
    let thresholds = compute_thresholds(config.n, config.epsilon, config.mode.eta())?;
    let schedule = ScaleSchedule::new(config.n)?;
    let l = schedule.tokens_before_last();
    let ambient = (4 * config.n * config.n).max(l);
    let (keys, gram, gram_resamples) = sample_checked_keys(
        ambient,
        config.d,
        l,
        config.epsilon,
        derive_seed(trial_seed, STREAM_JL),
        DEFAULT_MAX_GRAM_ATTEMPTS,
    )?;
    let inst = ProtocolInstance::random(
        config.n,
        config.d,
        derive_seed(trial_seed, STREAM_INSTANCE),
    )?;
    let mut cache = KvCache::new(config.d);
    let message_bits = alice_encode(&inst, &keys, &mut cache)?;
    let mut noise = match config.mode {
        Mode::Exact => None,
        Mode::Approximate { eta, noise } => Some(NoiseSource::new(
            noise,
            eta,
            derive_seed(trial_seed, STREAM_NOISE),
        )),
    };
    let mut result = bob_query(&inst, &keys, &thresholds, &mut cache, noise.as_mut())?;
    result.message_bits = message_bits;
    result.gram_resamples = gram_resamples;
    result.gram = gram;
    Ok(result)
}

/// Spot check of the logit spike bounds, recomputed from the raw dot
/// products rather than through the cache engine.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SpikeCheck {
    pub queries: usize,
    /// Largest non-spike logit observed (zero keys contribute 0).
    pub max_off_logit: f64,
    /// Smallest spike logit observed.
    pub min_spike_logit: f64,
    /// Bound every non-spike logit must respect, `C * epsilon`.
    pub off_bound: f64,
    /// Bound every spike logit must clear, `C * (1 - epsilon)`.
    pub spike_bound: f64,
    /// Queries where either bound failed.
    pub violations: usize,
}

/// Evaluates, for every query, the logits the scaled key induces over
/// Alice's rows and Bob's zero rows, and asserts the spike structure:
/// non-spike logits at most `C * epsilon`, spike logit at least
/// `C * (1 - epsilon)`. Keys must have passed the Gram check, which is
/// exactly what makes these bounds hold.
pub fn check_spike_bounds(
    inst: &ProtocolInstance,
    keys: &[Vec<f64>],
    thresholds: &DecodeThresholds,
) -> Result<SpikeCheck> {
    if keys.len() != inst.rows() {
        return Err(Error::InvalidInput {
            op: "check_spike_bounds",
            msg: format!("{} keys for {} payload rows", keys.len(), inst.rows()),
        });
    }
    let report = check_gram(keys, thresholds.epsilon)?;
    if !report.passed {
        return Err(Error::GramRejected {
            attempts: 1,
            max_offdiag: report.max_offdiag,
            max_diag_dev: report.max_diag_dev,
            epsilon: thresholds.epsilon,
        });
    }
    let off_bound = thresholds.c * thresholds.epsilon;
    let spike_bound = thresholds.c * (1.0 - thresholds.epsilon);
    let mut max_off_logit = 0.0f64; // Bob's zero keys contribute logit 0
    let mut min_spike_logit = f64::INFINITY;
    let mut violations = 0;
    for &(row, _) in inst.queries() {
        let mut off = 0.0f64;
        let mut spike = f64::NEG_INFINITY;
        for (m, key) in keys.iter().enumerate() {
            let dot: f64 = key.iter().zip(&keys[row]).map(|(a, b)| a * b).sum();
            let logit = thresholds.c * dot;
            if m == row {
                spike = logit;
            } else {
                off = off.max(logit);
            }
        }
        max_off_logit = max_off_logit.max(off);
        min_spike_logit = min_spike_logit.min(spike);
        if off > off_bound || spike < spike_bound {
            violations += 1;
        }
    }
    Ok(SpikeCheck {
        queries: inst.queries().len(),
        max_off_logit,
        min_spike_logit,
        off_bound,
        spike_bound,
        violations,
    })
}

/// One measured point for the memory-vs-size table.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SizeOutcome {
    pub n: usize,
    pub d: usize,
    pub trials: usize,
    pub successes: usize,
    /// Message size observed at the hand-off (constant across trials).
    pub message_bits: u64,
}

/// Row of the lower-bound table derived from measured outcomes.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LowerBoundRow {
    pub n: usize,
    pub d: usize,
    /// Payload rows `L = (n^2 - 1) / 3`.
    pub l_tokens: usize,
    /// Bits Alice must convey for perfect recovery, `L * d`.
    pub payload_bits: u64,
    /// Cache bits actually handed over.
    pub message_bits: u64,
    pub success_rate: f64,
}

/// Tabulates message size against recoverable payload across at least
/// two sizes. A high success rate certifies that `message_bits` sufficed
/// to carry `payload_bits` through the cache; the table shows both
/// growing together.
pub fn lower_bound_report(outcomes: &[SizeOutcome]) -> Result<Vec<LowerBoundRow>> {
    if outcomes.len() < 2 {
        return Err(Error::InvalidInput {
            op: "lower_bound_report",
            msg: format!("need at least two sizes, got {}", outcomes.len()),
        });
    }
    outcomes
        .iter()
        .map(|o| {
            let schedule = ScaleSchedule::new(o.n)?;
            let l = schedule.tokens_before_last();
            if o.trials == 0 {
                return Err(Error::InvalidInput {
                    op: "lower_bound_report",
                    msg: format!("size n={} reports zero trials", o.n),
                });
            }
            let payload_bits = (l * o.d) as u64;
            debug_assert!(o.message_bits >= payload_bits);
            Ok(LowerBoundRow {
                n: o.n,
                d: o.d,
                l_tokens: l,
                payload_bits,
                message_bits: o.message_bits,
                success_rate: o.successes as f64 / o.trials as f64,
            })
        })
        .collect()
}
