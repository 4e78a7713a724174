use thiserror::Error;

/// Errors produced by the simulation, calibration and inversion routines.
#[derive(Debug, Error)]
pub enum SparkleError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("mask mismatch: {0}")]
    MaskMismatch(String),

    #[error("rank deficient system: null-space dimension {nullity} (tolerance {tolerance:e})")]
    RankDeficient { nullity: usize, tolerance: f64 },

    #[error("singular gram matrix: {} deficient direction(s) at pivots {:?}", .directions.len(), .directions)]
    SingularGram { directions: Vec<usize> },

    #[error(
        "solver did not converge after {iterations} iterations (kkt residual {kkt_residual:e})"
    )]
    NotConverged {
        iterations: usize,
        kkt_residual: f64,
        best: Vec<f64>,
    },

    #[error("all {0} shift candidates failed to reconstruct")]
    AllShiftsFailed(usize),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SparkleError {
    pub(crate) fn dims(expected: impl ToString, actual: impl ToString) -> Self {
        SparkleError::DimensionMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        SparkleError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, SparkleError>;
