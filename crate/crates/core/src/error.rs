use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("format error in {path}{}: {message}", location.as_ref().map(|l| format!(" ({l})")).unwrap_or_default())]
    Format {
        path: PathBuf,
        location: Option<String>,
        message: String,
    },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("label combination {0:?} has no TRAIN trials")]
    EmptyCombination(Vec<u32>),

    #[error("only one distinct class present; at least two are required")]
    SingleClass,

    #[error("insufficient calibration data: {0}")]
    InsufficientCalibration(String),

    #[error("all paired differences are zero")]
    AllZeroDifferences,

    #[error("unknown class label {0}")]
    UnknownClass(u32),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("label count mismatch: expected K={expected}, got {actual}")]
    LabelCountMismatch { expected: usize, actual: usize },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(
        path: impl Into<PathBuf>,
        location: Option<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Format {
            path: path.into(),
            location,
            message: message.into(),
        }
    }
}
