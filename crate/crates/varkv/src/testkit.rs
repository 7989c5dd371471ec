//! Test-only reference implementations, deliberately written in the
//! most literal form possible so they share no code paths with the
//! production routines they check.

use crate::linalg::{softmax_columns, Matrix};
use crate::var::AttentionWeights;

/// Plain j-in-the-inner-loop triple loop, no skips, no blocking.
pub fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols(), b.rows());
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut acc = 0.0;
            for k in 0..a.cols() {
                acc += a.get(i, k) * b.get(k, j);
            }
            out.set(i, j, acc);
        }
    }
    out
}

/// Softmax per column in its textbook form: exp(z) / sum exp(z), with no
/// max subtraction. Only valid for small logits.
pub fn naive_softmax_columns(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for c in 0..m.cols() {
        let mut sum = 0.0;
        for r in 0..m.rows() {
            let e = m.get(r, c).exp();
            out.set(r, c, e);
            sum += e;
        }
        for r in 0..m.rows() {
            out.set(r, c, out.get(r, c) / sum);
        }
    }
    out
}

/// Attention evaluated entry by entry from its definition:
/// `A[i][j] = exp(q_i . k_j)`, rows normalized, then `D^-1 A X W_V`.
///
/// The exponentials are taken literally (no shifting), so inputs must
/// keep the logits small; production code stays stable where this
/// oracle would overflow.
pub fn naive_attention(x: &Matrix, w: &AttentionWeights) -> Matrix {
    let n = x.rows();
    let q = naive_matmul(x, w.w_q());
    let k = naive_matmul(x, w.w_k());
    let v = naive_matmul(x, w.w_v());
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut dot = 0.0;
            for t in 0..q.cols() {
                dot += q.get(i, t) * k.get(j, t);
            }
            a.set(i, j, dot.exp());
        }
    }
    let mut out = Matrix::zeros(n, v.cols());
    for i in 0..n {
        let mut row_sum = 0.0;
        for j in 0..n {
            row_sum += a.get(i, j);
        }
        for c in 0..v.cols() {
            let mut acc = 0.0;
            for j in 0..n {
                acc += a.get(i, j) / row_sum * v.get(j, c);
            }
            out.set(i, c, acc);
        }
    }
    out
}

/// Cached attention recomputed from scratch: stack every appended key
/// and value block, then run one batch attention for the query block.
pub fn recompute_attend(
    appended: &[(Matrix, Matrix)],
    queries: &Matrix,
) -> Matrix {
    let keys = Matrix::vstack(&appended.iter().map(|(k, _)| k.clone()).collect::<Vec<_>>())
        .unwrap();
    let values = Matrix::vstack(&appended.iter().map(|(_, v)| v.clone()).collect::<Vec<_>>())
        .unwrap();
    let logits = naive_matmul(&keys, &queries.transpose());
    let weights = softmax_columns(&logits);
    naive_matmul(&weights.transpose(), &values)
}
