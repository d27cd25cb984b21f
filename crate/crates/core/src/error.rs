use std::path::PathBuf;

use thiserror::Error;

use crate::text_perturb::TextRegime;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation failed for `{id}`: {message}")]
    Validation { id: String, message: String },

    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),

    #[error("regime {0} is not rendered through an external rewriter")]
    UnsupportedRegime(TextRegime),

    #[error("no rewrite supplied for sample `{0}`")]
    MissingRewrite(String),

    #[error("invalid reference: {0}")]
    InvalidReference(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("clean metric must be positive, got {0}")]
    DegenerateClean(f64),

    #[error("no responses for sample `{0}`")]
    EmptyPool(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(id: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            id: id.into(),
            message: message.into(),
        }
    }
}
