use thiserror::Error;

/// Errors raised across the reconstruction toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty sample")]
    EmptySample,
    #[error("image too small: {0}")]
    ImageTooSmall(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("degenerate inverse shading: zero at index {0}")]
    DegenerateInverse(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate CRF fit: {0}")]
    DegenerateFit(String),
    #[error("empty alignment window")]
    EmptyWindow,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("unsupported format: {0}")]
    Unsupported(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }

    /// True for errors that stem from numerical breakdown rather than bad input data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::DegenerateFit(_) | Error::DegenerateInverse(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
