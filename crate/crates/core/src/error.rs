use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix dimension must be at least 1")]
    EmptyMatrix,

    #[error("non-finite entry at ({i}, {j})")]
    NonFinite { i: usize, j: usize },

    #[error("matrix is not symmetric at ({i}, {j})")]
    NotSymmetric { i: usize, j: usize },

    #[error("index ({i}, {j}) out of range for dimension {n}")]
    IndexOutOfRange { i: usize, j: usize, n: usize },

    #[error("negative entry {value} at ({i}, {j})")]
    NegativeEntry { i: usize, j: usize, value: f64 },

    #[error("mask entry {value} at ({i}, {j}) is not 0 or 1")]
    InvalidMask { i: usize, j: usize, value: f64 },

    #[error("invalid trigger configuration: {0}")]
    InvalidSpec(String),

    #[error("buffer error at ({i}, {j}) cannot be bounded: {reason}")]
    Unbounded { i: usize, j: usize, reason: &'static str },

    #[error("buffer at ({i}, {j}) is inconsistent with the event-set")]
    BufferMismatch { i: usize, j: usize },

    #[error("out-of-order event-set: expected timestep {expected}, got {got}")]
    OutOfOrder { expected: u32, got: u32 },

    #[error("malformed frame: {0}")]
    Frame(String),

    #[error("invalid covariance at step {step}: trace {trace} is not positive")]
    InvalidCovariance { step: usize, trace: f64 },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("innovation covariance is numerically singular")]
    SingularInnovation,

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error after peeling off context layers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}
