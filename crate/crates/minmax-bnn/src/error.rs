//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // ---- tensor / tape ----
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: element count {count} does not match shape {shape:?}")]
    BadShape {
        op: &'static str,
        shape: Vec<usize>,
        count: usize,
    },
    #[error("{op} produced non-finite values")]
    NonFinite { op: &'static str },
    #[error("matrix is not positive definite: pivot {index} = {pivot:e}")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("matrix is asymmetric: |A - A^T| = {deviation:e} exceeds {tolerance:e}")]
    Asymmetric { deviation: f64, tolerance: f64 },
    #[error("degenerate feature: column {column} has norm {norm:e}")]
    DegenerateFeature { column: usize, norm: f64 },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("tape already consumed by a backward pass")]
    TapeConsumed,

    // ---- objective ----
    #[error("coding rate of an empty feature set is undefined")]
    EmptySet,
    #[error("class {class} has no samples")]
    EmptyClass { class: usize },

    // ---- parameters ----
    #[error("parameter mirror violation at `{name}`: {detail}")]
    MirrorViolation { name: String, detail: String },

    // ---- configuration ----
    #[error("configuration error: {0}")]
    Config(String),

    // ---- data files ----
    #[error("{path}: wrong magic at offset 0: got {got:#010x}, expected {expected:#010x}")]
    IdxWrongMagic {
        path: PathBuf,
        got: u32,
        expected: u32,
    },
    #[error("{path}: truncated at byte offset {offset}: need {needed} more bytes")]
    IdxTruncated {
        path: PathBuf,
        offset: usize,
        needed: usize,
    },
    #[error("{path}: extents {extents:?} overflow the addressable payload size")]
    IdxExtentOverflow { path: PathBuf, extents: Vec<u32> },
    #[error("data error: {0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    // ---- checkpoints ----
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    // ---- plotting ----
    #[error("metrics file has no evaluation rows")]
    NoEvalRows,
    #[error("metrics line {line}: {detail}")]
    MalformedMetrics { line: usize, detail: String },

    // ---- training ----
    #[error("numeric abort at outer step {step}, inner {inner} ({phase}): {source}")]
    TrainAbort {
        step: u64,
        inner: u64,
        phase: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code reported by the CLI: 2 configuration, 3 data,
    /// 4 numeric, 5 checkpoint, 6 plotting.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::IdxWrongMagic { .. }
            | Error::IdxTruncated { .. }
            | Error::IdxExtentOverflow { .. }
            | Error::Data(_)
            | Error::Io { .. }
            | Error::EmptyClass { .. } => 3,
            Error::ShapeMismatch { .. }
            | Error::BadShape { .. }
            | Error::NonFinite { .. }
            | Error::NotPositiveDefinite { .. }
            | Error::Asymmetric { .. }
            | Error::DegenerateFeature { .. }
            | Error::NonScalarLoss { .. }
            | Error::TapeConsumed
            | Error::EmptySet => 4,
            Error::MirrorViolation { .. } | Error::Checkpoint(_) => 5,
            Error::NoEvalRows | Error::MalformedMetrics { .. } => 6,
            Error::TrainAbort { source, .. } => source.exit_code(),
        }
    }
}
