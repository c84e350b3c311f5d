use crate::precision::PrecisionMode;

/// Errors shared across the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("{op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("non-finite value produced by {op} under {mode}")]
    NumericalOverflow { op: &'static str, mode: PrecisionMode },

    #[error("target transcript cannot be aligned: needs {needed} frames, have {frames}")]
    InfeasibleTarget { needed: usize, frames: usize },

    #[error("training diverged at epoch {epoch}: loss became non-finite")]
    TrainingDiverged { epoch: usize },

    #[error("held-out token error rate {rate:.4} above the {limit:.4} budget after training")]
    TrainingMissedTarget { rate: f64, limit: f64 },

    #[error("audio format not supported: {0}")]
    UnsupportedAudio(String),

    #[error("malformed file {path}: {detail}")]
    MalformedFile { path: String, detail: String },

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}
