use thiserror::Error;

/// Errors raised by the estimators, samplers and models in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    #[error("non-finite Stein kernel value at row {row}, coordinate {coord}: {value}")]
    NonFiniteStein { row: usize, coord: usize, value: f64 },

    #[error("conditional sampler failed at row {row}, coordinate {coord}: {reason}")]
    Sampler {
        row: usize,
        coord: usize,
        reason: String,
    },

    #[error("training diverged for coordinate {coord} at epoch {epoch}")]
    TrainingDiverged { coord: usize, epoch: usize },

    #[error("model format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
