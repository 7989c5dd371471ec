//! Cache compressors and the degradation harness.
//!
//! Compression is applied to Alice's snapshot, the exact message the
//! protocol hands to Bob, so `compressed_bits` is literally what a
//! cheaper channel would carry. Every scheme reports its size from its
//! own serialized state: quantized payloads are packed into a real
//! bitstream and read back out of it, not estimated.
//!
//! Shipped schemes: identity, keep-the-last-m eviction, uniform scalar
//! quantization of keys and/or values, and a rank-r sketch of the value
//! matrix through a seeded orthonormalized Gaussian basis.

use serde::Serialize;

use crate::cache::{KvCache, ScaleSchedule};
use crate::jl::{sample_checked_keys, DEFAULT_MAX_GRAM_ATTEMPTS};
use crate::linalg::{derive_seed, gaussian_matrix, matmul, Matrix, SeededRng};
use crate::protocol::{
    compute_thresholds, query_and_decode, DecodeThresholds, ProtocolInstance, STREAM_INSTANCE,
    STREAM_JL,
};
use crate::{Error, Result};

/// Seed stream for compressor-internal randomness, disjoint from the
/// protocol's key/instance/noise streams.
pub(crate) const STREAM_COMPRESS: u64 = 4;

/// A cache compression scheme with fixed parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Compressor {
    /// Stores the snapshot verbatim.
    Identity,
    /// Keeps only the most recent `keep` token rows.
    EvictKeepLast { keep: usize },
    /// Uniform scalar quantization with per-matrix affine range;
    /// `None` leaves that side at full width.
    Quantize {
        key_bits: Option<u8>,
        value_bits: Option<u8>,
    },
    /// Keys kept verbatim; values replaced by their least-squares
    /// reconstruction from a rank-`rank` seeded Gaussian basis.
    SketchValues { rank: usize },
}

/// Alice's snapshot after one compress/decompress round trip, plus the
/// exact size of the compressed form.
#[derive(Debug, Clone)]
pub struct CompressedSnapshot {
    pub keys: Matrix,
    pub values: Matrix,
    pub compressed_bits: u64,
}

impl Compressor {
    /// Parses the CLI spelling: `identity`, `evict:<keep>`,
    /// `quant:<bits>`, `quant-keys:<bits>`, `quant-values:<bits>`,
    /// `sketch:<rank>`.
    pub fn parse(spec: &str) -> Result<Compressor> {
        let unknown = || Error::UnknownCompressor {
            name: spec.to_string(),
        };
        if spec == "identity" {
            return Ok(Compressor::Identity);
        }
        let (head, arg) = spec.split_once(':').ok_or_else(unknown)?;
        match head {
            "evict" => Ok(Compressor::EvictKeepLast {
                keep: arg.parse().map_err(|_| unknown())?,
            }),
            "quant" | "quant-keys" | "quant-values" => {
                let bits: u8 = arg.parse().map_err(|_| unknown())?;
                if !(1..=32).contains(&bits) {
                    return Err(Error::InvalidInput {
                        op: "Compressor::parse",
                        msg: format!("quantization bits must lie in 1..=32, got {bits}"),
                    });
                }
                let (key_bits, value_bits) = match head {
                    "quant" => (Some(bits), Some(bits)),
                    "quant-keys" => (Some(bits), None),
                    _ => (None, Some(bits)),
                };
                Ok(Compressor::Quantize {
                    key_bits,
                    value_bits,
                })
            }
            "sketch" => {
                let rank: usize = arg.parse().map_err(|_| unknown())?;
                if rank == 0 {
                    return Err(Error::InvalidInput {
                        op: "Compressor::parse",
                        msg: "sketch rank must be positive".into(),
                    });
                }
                Ok(Compressor::SketchValues { rank })
            }
            _ => Err(unknown()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Compressor::Identity => "identity",
            Compressor::EvictKeepLast { .. } => "evict",
            Compressor::Quantize { .. } => "quant",
            Compressor::SketchValues { .. } => "sketch",
        }
    }

    pub fn params(&self) -> String {
        match self {
            Compressor::Identity => String::new(),
            Compressor::EvictKeepLast { keep } => format!("keep={keep}"),
            Compressor::Quantize {
                key_bits,
                value_bits,
            } => {
                let side = |b: &Option<u8>| match b {
                    Some(b) => b.to_string(),
                    None => "raw".to_string(),
                };
                format!("key_bits={},value_bits={}", side(key_bits), side(value_bits))
            }
            Compressor::SketchValues { rank } => format!("rank={rank}"),
        }
    }

    /// Compresses a snapshot and immediately decompresses it, returning
    /// the image Bob will see and the exact compressed size.
    pub fn apply(&self, keys: &Matrix, values: &Matrix, seed: u64) -> Result<CompressedSnapshot> {
        if keys.rows() != values.rows() {
            return Err(Error::ShapeMismatch {
                op: "Compressor::apply",
                lhs: (keys.rows(), keys.cols()),
                rhs: (values.rows(), values.cols()),
            });
        }
        let raw_bits = |m: &Matrix| 64 * (m.rows() * m.cols()) as u64;
        match *self {
            Compressor::Identity => Ok(CompressedSnapshot {
                keys: keys.clone(),
                values: values.clone(),
                compressed_bits: raw_bits(keys) + raw_bits(values),
            }),
            Compressor::EvictKeepLast { keep } => {
                let kept = keep.min(keys.rows());
                let k = keys.tail_rows(kept)?;
                let v = values.tail_rows(kept)?;
                // One u64 row count so the receiver can parse the rest.
                let compressed_bits = 64 + raw_bits(&k) + raw_bits(&v);
                Ok(CompressedSnapshot {
                    keys: k,
                    values: v,
                    compressed_bits,
                })
            }
            Compressor::Quantize {
                key_bits,
                value_bits,
            } => {
                let (k, k_bits) = quantize_side(keys, key_bits)?;
                let (v, v_bits) = quantize_side(values, value_bits)?;
                Ok(CompressedSnapshot {
                    keys: k,
                    values: v,
                    compressed_bits: k_bits + v_bits,
                })
            }
            Compressor::SketchValues { rank } => {
                let d = values.cols();
                if rank > d {
                    return Err(Error::InvalidInput {
                        op: "Compressor::apply",
                        msg: format!("sketch rank {rank} exceeds width {d}"),
                    });
                }
                let mut rng = SeededRng::new(seed);
                let basis = orthonormal_columns(d, rank, &mut rng)?;
                // Least squares against an orthonormal basis is just
                // the projection: S = V Q, reconstruction S Q^T.
                let sketch = matmul(values, &basis)?;
                let reconstructed = matmul(&sketch, &basis.transpose())?;
                // Message: raw keys, the sketch, the basis seed, and
                // the rank.
                let compressed_bits = raw_bits(keys) + raw_bits(&sketch) + 64 + 64;
                Ok(CompressedSnapshot {
                    keys: keys.clone(),
                    values: reconstructed,
                    compressed_bits,
                })
            }
        }
    }
}

/// Quantizes one side, or passes it through raw when `bits` is `None`.
/// Returns the reconstructed matrix and its exact serialized size.
fn quantize_side(m: &Matrix, bits: Option<u8>) -> Result<(Matrix, u64)> {
    match bits {
        None => Ok((m.clone(), 64 * (m.rows() * m.cols()) as u64)),
        Some(b) => {
            let (reconstructed, payload_bits) = quantize_matrix(m, b)?;
            // Two f64 for the affine range, then the packed codes.
            Ok((reconstructed, 128 + payload_bits))
        }
    }
}

/// Uniform scalar quantization: affine map of `[min, max]` onto
/// `0..2^bits - 1`, codes packed into a real bitstream and read back.
/// A constant matrix quantizes to all-zero codes and reconstructs
/// exactly.
fn quantize_matrix(m: &Matrix, bits: u8) -> Result<(Matrix, u64)> {
    if !(1..=32).contains(&bits) {
        return Err(Error::InvalidInput {
            op: "quantize_matrix",
            msg: format!("bits must lie in 1..=32, got {bits}"),
        });
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &x in m.data() {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if m.data().is_empty() {
        (lo, hi) = (0.0, 0.0);
    }
    let levels = ((1u64 << bits) - 1) as f64;
    let scale = if hi > lo { levels / (hi - lo) } else { 0.0 };

    let mut writer = BitWriter::new();
    for &x in m.data() {
        let code = ((x - lo) * scale).round() as u64;
        writer.write(code.min(levels as u64), bits);
    }
    let payload_bits = writer.bits_written();
    let buf = writer.into_bytes();

    let mut reader = BitReader::new(&buf);
    let mut data = Vec::with_capacity(m.rows() * m.cols());
    let inv = if scale > 0.0 { (hi - lo) / levels } else { 0.0 };
    for _ in 0..m.rows() * m.cols() {
        let code = reader.read(bits);
        data.push(lo + code as f64 * inv);
    }
    Ok((Matrix::from_vec(m.rows(), m.cols(), data)?, payload_bits))
}

/// Orthonormal `dim x rank` basis from a seeded Gaussian draw,
/// Gram-Schmidt with one re-orthogonalization pass so orthogonality
/// holds to machine precision regardless of the draw's conditioning.
fn orthonormal_columns(dim: usize, rank: usize, rng: &mut SeededRng) -> Result<Matrix> {
    let g = gaussian_matrix(dim, rank, rng)?;
    let mut q = Matrix::zeros(dim, rank);
    for j in 0..rank {
        let mut col: Vec<f64> = (0..dim).map(|r| g.get(r, j)).collect();
        for _ in 0..2 {
            for i in 0..j {
                let dot: f64 = (0..dim).map(|r| q.get(r, i) * col[r]).sum();
                for (r, c) in col.iter_mut().enumerate() {
                    *c -= dot * q.get(r, i);
                }
            }
        }
        let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::InvalidInput {
                op: "orthonormal_columns",
                msg: format!("degenerate basis column {j}"),
            });
        }
        for (r, c) in col.iter().enumerate() {
            q.set(r, j, c / norm);
        }
    }
    Ok(q)
}

/// LSB-first bit packer.
struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    filled: u32,
    written: u64,
}

impl BitWriter {
    fn new() -> BitWriter {
        BitWriter {
            bytes: Vec::new(),
            acc: 0,
            filled: 0,
            written: 0,
        }
    }

    fn write(&mut self, value: u64, bits: u8) {
        self.acc |= value << self.filled;
        self.filled += bits as u32;
        self.written += bits as u64;
        while self.filled >= 8 {
            self.bytes.push((self.acc & 0xFF) as u8);
            self.acc >>= 8;
            self.filled -= 8;
        }
    }

    fn bits_written(&self) -> u64 {
        self.written
    }

    fn into_bytes(mut self) -> Vec<u8> {
        if self.filled > 0 {
            self.bytes.push((self.acc & 0xFF) as u8);
        }
        self.bytes
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    acc: u64,
    filled: u32,
}

impl<'a> BitReader<'a> {
    fn new(bytes: &'a [u8]) -> BitReader<'a> {
        BitReader {
            bytes,
            pos: 0,
            acc: 0,
            filled: 0,
        }
    }

    fn read(&mut self, bits: u8) -> u64 {
        while self.filled < bits as u32 {
            let byte = self.bytes.get(self.pos).copied().unwrap_or(0);
            self.acc |= (byte as u64) << self.filled;
            self.pos += 1;
            self.filled += 8;
        }
        let mask = if bits == 64 { u64::MAX } else { (1u64 << bits) - 1 };
        let v = self.acc & mask;
        self.acc >>= bits;
        self.filled -= bits as u32;
        v
    }
}

/// Outcome of one compressed trial.
#[derive(Debug, Clone, Copy)]
pub struct CompressedTrial {
    pub correct_all: bool,
    pub correct_count: usize,
    pub ambiguous_count: usize,
    /// Exact size of the compressed message.
    pub compressed_bits: u64,
    /// Size of the uncompressed hand-off for comparison.
    pub message_bits: u64,
}

/// Runs one protocol trial with Alice's snapshot replaced by its
/// compressed/decompressed image before Bob's query.
pub fn compress_then_decode(
    inst: &ProtocolInstance,
    keys: &[Vec<f64>],
    thresholds: &DecodeThresholds,
    compressor: &Compressor,
    seed: u64,
) -> Result<CompressedTrial> {
    let d = inst.d();
    let mut cache = KvCache::new(d);
    let message_bits = crate::protocol::alice_encode(inst, keys, &mut cache)?;
    let snapshot = compressor.apply(cache.keys(), cache.values(), seed)?;
    if snapshot.keys.rows() != snapshot.values.rows()
        || snapshot.keys.cols() != d
        || snapshot.values.cols() != d
    {
        return Err(Error::ShapeMismatch {
            op: "compress_then_decode",
            lhs: (snapshot.keys.rows(), snapshot.keys.cols()),
            rhs: (snapshot.values.rows(), snapshot.values.cols()),
        });
    }
    let mut rebuilt = KvCache::new(d);
    rebuilt.append(&snapshot.keys, &snapshot.values)?;
    let result = query_and_decode(inst, keys, thresholds, &mut rebuilt, None)?;
    Ok(CompressedTrial {
        correct_all: result.correct_all,
        correct_count: result.correct_count,
        ambiguous_count: result.ambiguous_count,
        compressed_bits: snapshot.compressed_bits,
        message_bits,
    })
}

/// One row of the benchmark grid.
#[derive(Debug, Clone, Serialize)]
pub struct BenchRecord {
    pub name: String,
    pub params: String,
    pub n: usize,
    pub d: usize,
    /// Bits of the stored payload `x`, `L * d`.
    pub payload_bits: u64,
    /// Exact compressed message size (constant across trials: every
    /// scheme's size depends only on the snapshot shape).
    pub compressed_bits: u64,
    pub trials: usize,
    /// Fraction of trials decoding every cell correctly. A trial whose
    /// key sampling exhausts its Gram budget counts as a failure.
    pub success_rate: f64,
    /// Fraction of queries (over all trials) that fell between the
    /// decode bounds.
    pub ambiguous_rate: f64,
}

/// Benchmarks one compressor in exact mode: per trial, keys and
/// instance are drawn exactly as in the plain protocol (same seed
/// streams, so the identity scheme reproduces the uncompressed
/// baseline trial for trial), then the snapshot is compressed before
/// Bob decodes.
pub fn bench_compressor(
    n: usize,
    d: usize,
    epsilon: f64,
    compressor: &Compressor,
    trials: usize,
    master_seed: u64,
) -> Result<BenchRecord> {
    if trials == 0 {
        return Err(Error::InvalidInput {
            op: "bench_compressor",
            msg: "trials must be positive".into(),
        });
    }
    let thresholds = compute_thresholds(n, epsilon, 0.0)?;
    let schedule = ScaleSchedule::new(n)?;
    let l = schedule.tokens_before_last();
    let ambient = (4 * n * n).max(l);

    // Size probe: every scheme's bit count depends only on the
    // snapshot shape, so a zero snapshot reports the true size.
    let compressed_bits = compressor
        .apply(
            &Matrix::zeros(l, d),
            &Matrix::zeros(l, d),
            derive_seed(master_seed, STREAM_COMPRESS),
        )?
        .compressed_bits;

    let mut successes = 0usize;
    let mut ambiguous_total = 0usize;
    for trial in 0..trials {
        let trial_seed = derive_seed(master_seed, trial as u64);
        let sampled = sample_checked_keys(
            ambient,
            d,
            l,
            epsilon,
            derive_seed(trial_seed, STREAM_JL),
            DEFAULT_MAX_GRAM_ATTEMPTS,
        );
        let keys = match sampled {
            Ok((keys, _, _)) => keys,
            Err(Error::GramRejected { .. }) => continue, // counted as failure
            Err(e) => return Err(e),
        };
        let inst = ProtocolInstance::random(n, d, derive_seed(trial_seed, STREAM_INSTANCE))?;
        let outcome = compress_then_decode(
            &inst,
            &keys,
            &thresholds,
            compressor,
            derive_seed(trial_seed, STREAM_COMPRESS),
        )?;
        debug_assert_eq!(outcome.compressed_bits, compressed_bits);
        successes += usize::from(outcome.correct_all);
        ambiguous_total += outcome.ambiguous_count;
    }
    Ok(BenchRecord {
        name: compressor.name().to_string(),
        params: compressor.params(),
        n,
        d,
        payload_bits: (l * d) as u64,
        compressed_bits,
        trials,
        success_rate: successes as f64 / trials as f64,
        ambiguous_rate: ambiguous_total as f64 / (trials * n * n) as f64,
    })
}

/// Full benchmark grid: every compressor at every `(n, d)` size. Sizes
/// share per-trial randomness across compressors, so rows at one size
/// are paired comparisons.
pub fn sweep(
    compressors: &[Compressor],
    sizes: &[(usize, usize)],
    epsilon: f64,
    trials: usize,
    master_seed: u64,
) -> Result<Vec<BenchRecord>> {
    if compressors.is_empty() || sizes.is_empty() {
        return Err(Error::InvalidInput {
            op: "sweep",
            msg: "compressor and size lists must be nonempty".into(),
        });
    }
    let mut records = Vec::with_capacity(compressors.len() * sizes.len());
    for compressor in compressors {
        for (i, &(n, d)) in sizes.iter().enumerate() {
            let size_seed = derive_seed(master_seed, 0x5157_0000 + i as u64);
            records.push(bench_compressor(n, d, epsilon, compressor, trials, size_seed)?);
        }
    }
    Ok(records)
}
