//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A value violates a documented precondition on an argument.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A configuration is internally inconsistent (bad FFT size, filterbank
    /// denser than the FFT resolution, out-of-range hyperparameter).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Input audio is too short to produce any output.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Tensor shape does not match what an operation expects.
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    /// An operation was called out of order (e.g. backward before forward).
    #[error("invalid state: {0}")]
    State(String),

    /// A cascade-stage contract was violated (e.g. gender classification on a
    /// window already labeled noise).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A gradient or loss became non-finite during training.
    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    /// A model cannot be applied to the given input.
    #[error("model error: {0}")]
    Model(String),

    /// Mean of the given embeddings is (numerically) the zero vector.
    #[error("degenerate centroid: mean embedding has zero norm")]
    DegenerateCentroid,

    /// Embedding set spans fewer than three dimensions.
    #[error("degenerate projection: {0}")]
    DegenerateProjection(String),

    /// Audio span is too short for the requested estimate.
    #[error("segment too short: {0}")]
    TooShort(String),

    /// A file is structurally wrong; names the offending field.
    #[error("format error in field `{field}`: {detail}")]
    Format { field: String, detail: String },

    /// A versioned file was written by an incompatible format revision.
    #[error("version mismatch: {0}")]
    Version(String),

    /// A text file (manifest, CSV) failed to parse.
    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
