//! Dense row-major `f64` matrices and the crate's only sources of
//! randomness.
//!
//! All heavier modules reduce to three primitives defined here:
//! [`matmul`], [`softmax_columns`], and [`gaussian_matrix`]. Keeping them
//! in one place pins the accumulation order, which makes the recompute
//! and cached attention paths agree bit-for-bit rather than merely up to
//! rounding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Identifier of the generator stack, embedded in every report so a
/// reader can tell which byte stream produced the numbers.
pub const PRNG_ALGORITHM: &str = "chacha12/ziggurat-normal";

/// Derives a child seed from a master seed and a stream index.
///
/// Uses the splitmix64 finalizer over `master + stream * golden_gamma`,
/// so distinct streams of one master seed are decorrelated and the
/// mapping is stable across platforms.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic random source: ChaCha12 keyed by a 64-bit seed, with
/// standard-normal draws via the ziggurat sampler.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    rng: ChaCha12Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// One standard-normal draw.
    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform draw from `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.gen_range(lo..hi)
    }

    /// Fair coin.
    pub fn bit(&mut self) -> bool {
        self.rng.gen::<bool>()
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }
}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = String;

    fn try_from(raw: RawMatrix) -> std::result::Result<Matrix, String> {
        Matrix::from_vec(raw.rows, raw.cols, raw.data).map_err(|e| e.to_string())
    }
}

impl Matrix {
    /// All-zeros matrix. Zero rows with a fixed column count is the
    /// legal empty state a fresh cache starts from.
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds from a row-major buffer; the length must equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if data.len() != rows * cols {
            return Err(Error::InvalidInput {
                op: "Matrix::from_vec",
                msg: format!(
                    "buffer of length {} cannot fill {}x{}",
                    data.len(),
                    rows,
                    cols
                ),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds from equal-length row slices.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
        let cols = rows.first().map_or(0, Vec::len);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::InvalidInput {
                    op: "Matrix::from_rows",
                    msg: format!("row {} has length {}, expected {}", i, r.len(), cols),
                });
            }
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }

    /// Entrywise scaling by a constant.
    pub fn scaled(&self, factor: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * factor).collect(),
        }
    }

    /// Appends the rows of `block` below the existing rows in place.
    pub fn append_rows(&mut self, block: &Matrix) -> Result<()> {
        if block.cols != self.cols {
            return Err(Error::ShapeMismatch {
                op: "append_rows",
                lhs: (self.rows, self.cols),
                rhs: (block.rows, block.cols),
            });
        }
        self.data.extend_from_slice(&block.data);
        self.rows += block.rows;
        Ok(())
    }

    /// Stacks matrices vertically; all parts must share a column count.
    pub fn vstack(parts: &[Matrix]) -> Result<Matrix> {
        let cols = parts.first().map_or(0, Matrix::cols);
        let mut out = Matrix::zeros(0, cols);
        for p in parts {
            out.append_rows(p)?;
        }
        Ok(out)
    }

    /// Copy of the last `count` rows.
    pub fn tail_rows(&self, count: usize) -> Result<Matrix> {
        if count > self.rows {
            return Err(Error::InvalidInput {
                op: "tail_rows",
                msg: format!("asked for {} rows, matrix has {}", count, self.rows),
            });
        }
        let start = (self.rows - count) * self.cols;
        Ok(Matrix {
            rows: count,
            cols: self.cols,
            data: self.data[start..].to_vec(),
        })
    }

    /// Largest absolute entry; 0 for an empty matrix.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Largest absolute entrywise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                op: "max_abs_diff",
                lhs: (self.rows, self.cols),
                rhs: (other.rows, other.cols),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `a * b` with the classic i-k-j loop order.
///
/// The inner accumulation runs over `k` in ascending order for every
/// output entry; downstream equivalence tests rely on this order being
/// the same wherever a dot product of the same two vectors appears.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: (a.rows, a.cols),
            rhs: (b.rows, b.cols),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a.get(i, k);
            if aik == 0.0 {
                continue;
            }
            let brow = k * b.cols;
            let orow = i * b.cols;
            for j in 0..b.cols {
                out.data[orow + j] += aik * b.data[brow + j];
            }
        }
    }
    Ok(out)
}

/// Column-wise softmax with per-column max subtraction.
///
/// Subtracting the column max is exact in real arithmetic and keeps
/// every exponent argument at or below zero, so `exp` cannot overflow
/// for finite input. Each output column is nonnegative and sums to 1.
/// Callers must pass finite entries; non-finite logits are rejected at
/// the attention boundaries before reaching this function.
pub fn softmax_columns(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.rows, m.cols);
    for c in 0..m.cols {
        let mut max = f64::NEG_INFINITY;
        for r in 0..m.rows {
            max = max.max(m.get(r, c));
        }
        let mut sum = 0.0;
        for r in 0..m.rows {
            let e = (m.get(r, c) - max).exp();
            out.set(r, c, e);
            sum += e;
        }
        for r in 0..m.rows {
            out.set(r, c, out.get(r, c) / sum);
        }
    }
    out
}

/// Matrix of i.i.d. standard-normal entries, filled row-major so the
/// draw order (and thus the content) is pinned by the seed alone.
pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut SeededRng) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::ZeroDimension {
            op: "gaussian_matrix",
            rows,
            cols,
        });
    }
    let mut m = Matrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            m.set(r, c, rng.standard_normal());
        }
    }
    Ok(m)
}
