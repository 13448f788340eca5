//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor/vector shapes in a numeric operation.
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    /// Invalid argument value (bad kernel size, epsilon out of range, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Index outside the valid range.
    #[error("index out of range: {what} = {index}, valid range 0..{len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    /// A gradient contained NaN or infinity.
    #[error("non-finite gradient in parameter '{parameter}' at element {index}")]
    NonFiniteGradient { parameter: String, index: usize },

    /// Training loss became NaN or infinite.
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    /// Every entry of a loss/metric target was masked out.
    #[error("all target entries are masked (threshold {threshold}); loss is undefined")]
    AllMasked { threshold: f64 },

    /// The loss function returned different values for identical inputs.
    #[error("loss function is not deterministic: two evaluations at the same point differ")]
    NonDeterministicLoss,

    /// Training data has zero variance; z-score normalization is undefined.
    #[error("cannot fit normalizer: training data has zero variance")]
    ZeroVariance,

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Malformed dataset file contents, with location when known.
    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// NaN/Inf in loaded data.
    #[error("non-finite value in {path} at node {node}, time step {step}")]
    NonFiniteData {
        path: String,
        node: usize,
        step: usize,
    },

    /// Checkpoint file with an unknown magic/version tag.
    #[error("unsupported checkpoint format: expected magic '{expected}', found '{found}'")]
    CheckpointVersion { expected: String, found: String },

    /// Truncated or internally inconsistent checkpoint file.
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    /// Checkpoint cannot be used in the requested context.
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    /// backward called without a matching forward pass.
    #[error("missing forward cache: {0}")]
    MissingCache(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.into(),
            got: got.into(),
        }
    }
}
