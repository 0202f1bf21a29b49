use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid leg state: {0}")]
    InvalidLegState(String),

    #[error("invalid gait parameters: {0}")]
    InvalidParams(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("integration step {dt} s exceeds the stability bound {max} s")]
    StepTooLarge { dt: f64, max: f64 },

    #[error("covariance matrix is not positive definite (jitter up to {jitter:e})")]
    NotPositiveDefinite { jitter: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("run stopped after {completed} evaluations; resume to continue")]
    Interrupted { completed: usize },

    #[error("resumed run diverged from its recorded history: {0}")]
    ReplayMismatch(String),

    #[error("missing warm-start history")]
    MissingWarmStart,

    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
