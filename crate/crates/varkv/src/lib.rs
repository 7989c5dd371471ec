//! varkv — a desk-scale laboratory for key-value cache memory in
//! scale-pyramid autoregressive transformers.
//!
//! The crate provides four layers that build on each other:
//!
//! * [`linalg`] — dense `f64` matrices, column-wise softmax, and a seeded
//!   Gaussian sampler; every result in the crate is reproducible from a
//!   single 64-bit seed.
//! * [`var`] / [`cache`] — a scale-pyramid transformer forward pass
//!   (up-interpolation + full attention per scale) in two algebraically
//!   equivalent forms: full recomputation over the flattened pyramid, and
//!   an incremental pass over a growing key-value cache with exact bit
//!   accounting.
//! * [`jl`] / [`protocol`] — random-projection key vectors and the
//!   one-way Alice/Bob multi-index protocol they enable: bits stored in
//!   value rows are read back through softmax spikes at scaled keys.
//! * [`compress`] — pluggable cache compressors (eviction, scalar
//!   quantization, low-rank value sketches) and a harness measuring how
//!   recovery degrades once the cache drops below the stored payload.
//!
//! The `varkv` binary exposes the same functionality as reproducible
//! subcommands (`forward`, `protocol`, `jl-check`, `bench`); see the
//! crate examples for library-level entry points.

pub mod cache;
pub mod cli;
pub mod compress;
pub mod config;
pub mod jl;
pub mod linalg;
pub mod protocol;
pub mod report;
pub mod var;

#[cfg(test)]
pub(crate) mod testkit;

pub use cache::{incremental_forward, IncrementalRun, KvCache, ScaleMemory, ScaleSchedule};
pub use compress::{bench_compressor, sweep, BenchRecord, Compressor};
pub use config::{OutputFormat, RunConfig, Subcommand};
pub use jl::{build_embedder, check_gram, GramReport, JlEmbedder};
pub use linalg::{
    derive_seed, gaussian_matrix, matmul, softmax_columns, Matrix, SeededRng, PRNG_ALGORITHM,
};
pub use protocol::{
    compute_thresholds, run_protocol, DecodeThresholds, Mode, NoiseKind, ProtocolConfig,
    ProtocolInstance, ProtocolResult,
};
pub use var::{
    attention_layer, last_block, pyramid_up, up_interpolate, var_forward, AttentionWeights,
    TokenMap, UpInterpolator,
};

/// Crate version embedded in every emitted report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Unified error type for every fallible operation in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch, {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        /// (rows, cols) of the left operand.
        lhs: (usize, usize),
        /// (rows, cols) of the right operand.
        rhs: (usize, usize),
    },

    #[error("{op}: dimensions must be nonzero, got {rows}x{cols}")]
    ZeroDimension {
        op: &'static str,
        rows: usize,
        cols: usize,
    },

    #[error("attend: cache holds no tokens")]
    EmptyCache,

    #[error("{op}: non-finite logits (max finite logit {max_logit:e}); inputs too large for exp")]
    NonFiniteLogits { op: &'static str, max_logit: f64 },

    #[error("{n} is not a power of two")]
    NotPowerOfTwo { n: usize },

    #[error("{op}: {msg}")]
    InvalidInput { op: &'static str, msg: String },

    #[error(
        "no feasible decode constant: C={last_c:e} still leaves \
         (1+eta)*delta - (1-eta)*Delta = {gap:e} > 0"
    )]
    NoFeasibleC { last_c: f64, gap: f64 },

    #[error(
        "Gram check rejected after {attempts} attempts \
         (last max_offdiag={max_offdiag:e}, max_diag_dev={max_diag_dev:e}, epsilon={epsilon})"
    )]
    GramRejected {
        attempts: u32,
        max_offdiag: f64,
        max_diag_dev: f64,
        epsilon: f64,
    },

    #[error(
        "unknown compressor '{name}' (known: identity, evict:<keep>, quant:<bits>, \
         quant-keys:<bits>, quant-values:<bits>, sketch:<rank>)"
    )]
    UnknownCompressor { name: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for configuration errors,
    /// 3 for numeric or runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::UnknownCompressor { .. } => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
