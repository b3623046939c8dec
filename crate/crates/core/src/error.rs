use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest parse error at line {line}: {message}")]
    ManifestParse { line: usize, message: String },

    #[error("manifest invariant violated for record {id:?}: {message}")]
    ManifestInvariant { id: String, message: String },

    #[error("record {0:?} has no hash")]
    MissingHash(String),

    #[error("records span several categories ({0} and {1})")]
    MixedCategories(u32, u32),

    #[error("unknown image id {0:?}")]
    UnknownImage(String),

    #[error("unknown category id {0}")]
    UnknownCategory(u32),

    #[error("image {0:?} is not active")]
    ImageNotActive(String),

    #[error("stage {stage} cannot run: {reason}")]
    StageOrder { stage: String, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("image codec error: {0}")]
    Codec(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
