use thiserror::Error;

use crate::losses::LossBreakdown;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent model/train/data configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// An operation was called in a state that does not support it.
    #[error("usage error: {0}")]
    Usage(String),
    /// A label lies outside the attribute or target scale.
    #[error("label error: {0}")]
    Label(String),
    #[error("data error: {0}")]
    Data(String),
    /// Manifest validation failure; one message per offending row/field.
    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("non-finite loss at epoch {epoch}, step {step}: {breakdown}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        breakdown: LossBreakdown,
    },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image error on {path}: {source}")]
    Image {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn image(path: impl AsRef<std::path::Path>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
