use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at {path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("{what} id {id} out of range (< {bound})")]
    OutOfRange {
        what: &'static str,
        id: usize,
        bound: usize,
    },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("feature mode mismatch: attacker expects {expected}, got {got}")]
    ModeMismatch { expected: String, got: String },

    #[error("extraction failed: {0}")]
    Extraction(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("unsupported format tag {found:?}, expected {expected:?}")]
    Format { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Short machine-readable tag, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::Config(_) => "config",
            Error::Numeric(_) => "numeric",
            Error::OutOfRange { .. } => "out_of_range",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::ModeMismatch { .. } => "mode_mismatch",
            Error::Extraction(_) => "extraction",
            Error::Transport(_) => "transport",
            Error::Format { .. } => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Image(_) => "image",
        }
    }
}

pub(crate) fn check_format(expected: &str, found: &str) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Format {
            expected: expected.to_string(),
            found: found.to_string(),
        })
    }
}
