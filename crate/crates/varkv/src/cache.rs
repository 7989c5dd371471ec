//! Streaming key-value cache and the incremental forward pass.
//!
//! The cache is the only state a streaming evaluator carries between
//! scales: every appended key/value row is kept verbatim, and memory is
//! accounted exactly as `2 * tokens * dim * bits_per_scalar` payload
//! bits. Scratch buffers used during a step are reported separately so
//! the payload curve stays an exact arithmetic object.
//!
//! The incremental pass evaluates each scale's keys and values under
//! the weights current at append time. When one weight set is shared
//! across scales this matches the full-recompute pass row for row; with
//! distinct per-scale weights the two paths are different models by
//! construction, since recomputation re-projects old tokens with the
//! newest weights.

use std::io::{Read, Write};

use serde::Serialize;

use crate::linalg::{matmul, softmax_columns, Matrix};
use crate::var::{
    max_finite, up_interpolate, validate_forward_inputs, AttentionWeights, TokenMap,
    UpInterpolator,
};
use crate::{Error, Result};

/// Accepted accounting widths for one cached scalar.
pub const SUPPORTED_BITS_PER_SCALAR: [u32; 4] = [64, 32, 16, 8];

/// Hard cap on rows accepted when reading a serialized append log.
const MAX_LOG_ENTRIES: u64 = 1 << 20;
const MAX_BLOCK_ENTRIES: u64 = 1 << 24;

/// Append-only key/value store over `dim`-wide rows.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCache {
    dim: usize,
    bits_per_scalar: u32,
    keys: Matrix,
    values: Matrix,
}

impl KvCache {
    /// Empty cache with 64-bit scalar accounting.
    pub fn new(dim: usize) -> KvCache {
        KvCache {
            dim,
            bits_per_scalar: 64,
            keys: Matrix::zeros(0, dim),
            values: Matrix::zeros(0, dim),
        }
    }

    /// Empty cache with an explicit accounting width; the arrays stay
    /// `f64`, only the reported bit counts change.
    pub fn with_bits_per_scalar(dim: usize, bits_per_scalar: u32) -> Result<KvCache> {
        if !SUPPORTED_BITS_PER_SCALAR.contains(&bits_per_scalar) {
            return Err(Error::InvalidInput {
                op: "KvCache::with_bits_per_scalar",
                msg: format!(
                    "bits_per_scalar must be one of {:?}, got {}",
                    SUPPORTED_BITS_PER_SCALAR, bits_per_scalar
                ),
            });
        }
        let mut c = KvCache::new(dim);
        c.bits_per_scalar = bits_per_scalar;
        Ok(c)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bits_per_scalar(&self) -> u32 {
        self.bits_per_scalar
    }

    /// Number of stored tokens (key rows, equal to value rows).
    pub fn tokens(&self) -> usize {
        self.keys.rows()
    }

    pub fn keys(&self) -> &Matrix {
        &self.keys
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    /// Appends aligned key and value blocks; returns the token count
    /// after the append.
    pub fn append(&mut self, keys: &Matrix, values: &Matrix) -> Result<usize> {
        if keys.rows() != values.rows() {
            return Err(Error::ShapeMismatch {
                op: "KvCache::append",
                lhs: (keys.rows(), keys.cols()),
                rhs: (values.rows(), values.cols()),
            });
        }
        if keys.cols() != self.dim || values.cols() != self.dim {
            return Err(Error::ShapeMismatch {
                op: "KvCache::append",
                lhs: (self.tokens(), self.dim),
                rhs: (keys.rows(), keys.cols().max(values.cols())),
            });
        }
        self.keys.append_rows(keys)?;
        self.values.append_rows(values)?;
        Ok(self.tokens())
    }

    /// Batch attention of `queries` (one per row) over every stored
    /// token: per query, softmax over `K q` logits, then the weighted
    /// sum of value rows. Returns one output row per query.
    pub fn attend(&self, queries: &Matrix) -> Result<Matrix> {
        if self.tokens() == 0 {
            return Err(Error::EmptyCache);
        }
        if queries.cols() != self.dim {
            return Err(Error::ShapeMismatch {
                op: "KvCache::attend",
                lhs: (self.tokens(), self.dim),
                rhs: (queries.rows(), queries.cols()),
            });
        }
        let logits = matmul(&self.keys, &queries.transpose())?;
        if !logits.is_finite() {
            return Err(Error::NonFiniteLogits {
                op: "attend",
                max_logit: max_finite(&logits),
            });
        }
        let weights = softmax_columns(&logits);
        matmul(&weights.transpose(), &self.values)
    }

    /// One streaming step: append a single key/value pair, then attend
    /// with a single query over everything stored so far (including the
    /// pair just appended).
    pub fn stream_attend(&mut self, query: &[f64], key: &[f64], value: &[f64]) -> Result<Vec<f64>> {
        for (name, row) in [("query", query), ("key", key), ("value", value)] {
            if row.len() != self.dim {
                return Err(Error::InvalidInput {
                    op: "stream_attend",
                    msg: format!("{name} has length {}, cache dim is {}", row.len(), self.dim),
                });
            }
        }
        let k = Matrix::from_vec(1, self.dim, key.to_vec())?;
        let v = Matrix::from_vec(1, self.dim, value.to_vec())?;
        self.append(&k, &v)?;
        let q = Matrix::from_vec(1, self.dim, query.to_vec())?;
        Ok(self.attend(&q)?.row(0).to_vec())
    }

    /// Exact payload size: `2 * tokens * dim * bits_per_scalar`.
    pub fn memory_bits(&self) -> u64 {
        2 * self.tokens() as u64 * self.dim as u64 * self.bits_per_scalar as u64
    }
}

/// Square-map schedule with sides 1, 2, 4, ..., n.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScaleSchedule {
    n: usize,
    num_scales: usize,
}

impl ScaleSchedule {
    /// `n` must be a power of two.
    pub fn new(n: usize) -> Result<ScaleSchedule> {
        if !n.is_power_of_two() {
            return Err(Error::NotPowerOfTwo { n });
        }
        Ok(ScaleSchedule {
            n,
            num_scales: n.trailing_zeros() as usize + 1,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_scales(&self) -> usize {
        self.num_scales
    }

    /// Side of the square map at scale `k` (1-based).
    pub fn side(&self, k: usize) -> usize {
        1 << (k - 1)
    }

    /// Tokens introduced at scale `k`, `4^(k-1)`.
    pub fn tokens_at(&self, k: usize) -> usize {
        1 << (2 * (k - 1))
    }

    /// Tokens in scales `1..=k`, `(4^k - 1) / 3`.
    pub fn cumulative_tokens(&self, k: usize) -> usize {
        ((1usize << (2 * k)) - 1) / 3
    }

    /// Tokens stored before the final scale begins, `(n^2 - 1) / 3`.
    pub fn tokens_before_last(&self) -> usize {
        self.cumulative_tokens(self.num_scales - 1)
    }

    /// Total tokens across all scales, `(4 n^2 - 1) / 3`.
    pub fn total_tokens(&self) -> usize {
        self.cumulative_tokens(self.num_scales)
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        (1..=self.num_scales).map(|k| (self.side(k), self.side(k))).collect()
    }
}

/// One row of the per-scale memory table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ScaleMemory {
    pub scale: usize,
    /// Tokens resident in the cache after this scale's append.
    pub tokens: usize,
    /// Exact cache payload, `2 * tokens * dim * bits_per_scalar`.
    pub memory_bits: u64,
    /// Scratch high-water mark for the step, counted at the same
    /// scalar width: the current map with its query/key/value/output
    /// blocks (5 m-by-d buffers) plus the logit, weight, and transposed
    /// weight matrices (3 tokens-by-m buffers).
    pub peak_transient_bits: u64,
}

/// Recorded sequence of cache appends, replayable into a fresh cache.
/// Key and value blocks of an entry must share a shape.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AppendLog {
    entries: Vec<(Matrix, Matrix)>,
}

impl AppendLog {
    pub fn new() -> AppendLog {
        AppendLog::default()
    }

    pub fn push(&mut self, keys: Matrix, values: Matrix) -> Result<()> {
        if keys.rows() != values.rows() || keys.cols() != values.cols() {
            return Err(Error::ShapeMismatch {
                op: "AppendLog::push",
                lhs: (keys.rows(), keys.cols()),
                rhs: (values.rows(), values.cols()),
            });
        }
        self.entries.push((keys, values));
        Ok(())
    }

    pub fn entries(&self) -> &[(Matrix, Matrix)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Replays every append into a fresh cache; the log must be
    /// nonempty and shape-consistent.
    pub fn replay(&self) -> Result<KvCache> {
        let dim = match self.entries.first() {
            Some((k, _)) => k.cols(),
            None => {
                return Err(Error::InvalidInput {
                    op: "AppendLog::replay",
                    msg: "log is empty".into(),
                })
            }
        };
        let mut cache = KvCache::new(dim);
        for (k, v) in &self.entries {
            cache.append(k, v)?;
        }
        Ok(cache)
    }

    /// Flat binary layout: entry count as little-endian u64, then per
    /// entry rows and cols as u64 followed by the key block and the
    /// value block as little-endian f64 in row-major order.
    pub fn write_binary<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for (k, v) in &self.entries {
            out.write_all(&(k.rows() as u64).to_le_bytes())?;
            out.write_all(&(k.cols() as u64).to_le_bytes())?;
            for x in k.data().iter().chain(v.data()) {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(input: &mut R) -> Result<AppendLog> {
        let mut u = [0u8; 8];
        let mut read_u64 = |input: &mut R| -> Result<u64> {
            input.read_exact(&mut u)?;
            Ok(u64::from_le_bytes(u))
        };
        let count = read_u64(input)?;
        if count > MAX_LOG_ENTRIES {
            return Err(Error::InvalidInput {
                op: "AppendLog::read_binary",
                msg: format!("implausible entry count {count}"),
            });
        }
        let mut log = AppendLog::new();
        for _ in 0..count {
            let rows = read_u64(input)?;
            let cols = read_u64(input)?;
            let entries = rows
                .checked_mul(cols)
                .filter(|&e| e <= MAX_BLOCK_ENTRIES)
                .ok_or_else(|| Error::InvalidInput {
                    op: "AppendLog::read_binary",
                    msg: format!("implausible block shape {rows}x{cols}"),
                })?;
            let read_block = |input: &mut R| -> Result<Matrix> {
                let mut data = Vec::with_capacity(entries as usize);
                let mut f = [0u8; 8];
                for _ in 0..entries {
                    input.read_exact(&mut f)?;
                    data.push(f64::from_le_bytes(f));
                }
                Matrix::from_vec(rows as usize, cols as usize, data)
            };
            let k = read_block(input)?;
            let v = read_block(input)?;
            log.push(k, v)?;
        }
        Ok(log)
    }
}

/// Everything produced by one incremental forward pass.
#[derive(Debug, Clone)]
pub struct IncrementalRun {
    /// Output map per scale, sides 1, 2, 4, ...
    pub maps: Vec<TokenMap>,
    /// Memory table, one row per scale.
    pub memory: Vec<ScaleMemory>,
    /// Final cache state after the last scale.
    pub cache: KvCache,
    /// Key/value blocks in append order, for replay or serialization.
    pub log: AppendLog,
}

/// Streaming forward pass: each scale appends its projected keys and
/// values once, then attends over the whole cache. Old tokens are never
/// re-projected.
pub fn incremental_forward(
    x_init: &TokenMap,
    weights: &[AttentionWeights],
    interps: &[UpInterpolator],
    schedule: &ScaleSchedule,
) -> Result<IncrementalRun> {
    let num_scales = schedule.num_scales();
    validate_forward_inputs(x_init, weights, interps, num_scales)?;
    let d = x_init.dim();
    let mut cache = KvCache::new(d);
    let mut log = AppendLog::new();
    let mut maps: Vec<TokenMap> = Vec::with_capacity(num_scales);
    let mut memory = Vec::with_capacity(num_scales);
    for k in 1..=num_scales {
        let y = if k == 1 {
            x_init.clone()
        } else {
            up_interpolate(&maps[k - 2], &interps[k - 2])?
        };
        let w = &weights[k - 1];
        let q = matmul(y.as_matrix(), w.w_q())?;
        let kk = matmul(y.as_matrix(), w.w_k())?;
        let vv = matmul(y.as_matrix(), w.w_v())?;
        log.push(kk.clone(), vv.clone())?;
        let tokens = cache.append(&kk, &vv)?;
        let out = cache.attend(&q)?;
        let m = y.tokens() as u64;
        let bps = cache.bits_per_scalar() as u64;
        memory.push(ScaleMemory {
            scale: k,
            tokens,
            memory_bits: cache.memory_bits(),
            peak_transient_bits: bps * (5 * m * d as u64 + 3 * tokens as u64 * m),
        });
        let side = schedule.side(k);
        maps.push(TokenMap::new(side, side, d, out)?);
    }
    Ok(IncrementalRun {
        maps,
        memory,
        cache,
        log,
    })
}
