//! Crate-wide error type.

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes of the fingerprinting pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("truncated header in {path}: declared {declared} bytes, file has {available}")]
    TruncatedHeader {
        path: PathBuf,
        declared: u64,
        available: u64,
    },

    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("truncated data region in {path}: tensor {name} needs bytes {begin}..{end}, region has {available}")]
    TruncatedData {
        path: PathBuf,
        name: String,
        begin: u64,
        end: u64,
        available: u64,
    },

    #[error("tensor byte ranges overlap in {path}: {first} and {second}")]
    OverlappingTensors {
        path: PathBuf,
        first: String,
        second: String,
    },

    #[error("tensor {name}: byte range holds {actual} bytes but shape {shape:?} as {dtype} needs {expected}")]
    SizeMismatch {
        name: String,
        shape: Vec<usize>,
        dtype: String,
        expected: u64,
        actual: u64,
    },

    #[error("duplicate tensor name across shards: {name} (in {first} and {second})")]
    DuplicateTensor {
        name: String,
        first: String,
        second: String,
    },

    #[error("missing shard {shard} referenced by {index}")]
    MissingShard { index: PathBuf, shard: String },

    #[error("unknown tensor: {0}")]
    UnknownTensor(String),

    #[error("tensor {name} is non-2-D (shape {shape:?})")]
    NonTwoDimensional { name: String, shape: Vec<usize> },

    #[error("non-finite value in tensor {name} at flat index {index}")]
    NonFiniteWeight { name: String, index: usize },

    #[error("no layers discovered (template {template:?} resolved nothing at layer 0)")]
    NoLayers { template: String },

    #[error("inconsistent hidden dim: layer {layer} has {found}, expected {expected}")]
    InconsistentHiddenDim {
        layer: usize,
        found: usize,
        expected: usize,
    },

    #[error("invalid model layout: {0}")]
    InvalidLayout(String),

    #[error("SVD did not converge within {sweeps} sweeps (max relative off-diagonal {residual:.3e})")]
    SvdNonConvergence { sweeps: usize, residual: f64 },

    #[error("null spectrum: all singular values are zero")]
    NullSpectrum,

    #[error("truncation rank {rank} out of range 1..={len}")]
    RankOutOfRange { rank: usize, len: usize },

    #[error("rank mismatch: {a} vs {b}")]
    RankMismatch { a: usize, b: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("fingerprint variant mismatch: {found} where {expected} required")]
    VariantMismatch { expected: String, found: String },

    #[error("fingerprint has no layers")]
    EmptyFingerprint,

    #[error("layer depth mismatch: {a} vs {b} (naive distance requires equal depth)")]
    DepthMismatch { a: usize, b: usize },

    #[error("empty distance matrix")]
    EmptyMatrix,

    #[error("alignment requires rows <= cols, got {rows}x{cols}")]
    RowsExceedCols { rows: usize, cols: usize },

    #[error("distance correlation needs at least 2 samples, got {0}")]
    TooFewSamples(usize),

    #[error("sample length mismatch: {a} vs {b}")]
    SampleLengthMismatch { a: usize, b: usize },

    #[error("unsupported fingerprint format version {found} (supported <= {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("parse error in {path} at byte {offset}: {reason}")]
    Parse {
        path: PathBuf,
        offset: usize,
        reason: String,
    },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid attack spec: {0}")]
    InvalidAttack(String),

    #[error("invalid family spec: {0}")]
    InvalidFamily(String),

    #[error("threshold sweep needs both classes, got only {0}")]
    SingleClass(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wrap an error with a pipeline-position note (e.g. the layer index).
    pub fn with_context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// True for numerical failures (CLI exit code 3) as opposed to
    /// input/usage errors (exit code 2).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::SvdNonConvergence { .. } | Error::NullSpectrum => true,
            Error::Context { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
