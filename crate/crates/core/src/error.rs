use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown topology `{0}`")]
    UnknownTopology(String),

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("record {index}: {message}")]
    Record { index: usize, message: String },

    #[error("synthetic spec: {0}")]
    Synthetic(String),

    #[error("class {0} is not present in the dataset")]
    MissingClass(usize),

    #[error("description for `{action}`: {message}")]
    Description { action: String, message: String },

    #[error("no key joints found in the global description of `{0}`")]
    NoKeyJoints(String),

    #[error("embedding: {0}")]
    Embedding(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("no description or embedding for class {0}")]
    MissingGuidance(usize),

    #[error("checkpoint is frozen; refusing to train it further")]
    Frozen,

    #[error("checkpoint is not frozen; train it to completion before evaluation")]
    NotFrozen,

    #[error("episode: {0}")]
    Episode(String),

    #[error("calibration: {0}")]
    Calibration(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn record(index: usize, message: impl Into<String>) -> Self {
        Error::Record {
            index,
            message: message.into(),
        }
    }

    /// Stable snake_case identifier for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnknownTopology(_) => "unknown_topology",
            Error::InvalidTopology(_) => "invalid_topology",
            Error::Io { .. } => "io",
            Error::Record { .. } => "record",
            Error::Synthetic(_) => "synthetic",
            Error::MissingClass(_) => "missing_class",
            Error::Description { .. } => "description",
            Error::NoKeyJoints(_) => "no_key_joints",
            Error::Embedding(_) => "embedding",
            Error::Shape(_) => "shape",
            Error::Config(_) => "config",
            Error::Checkpoint(_) => "checkpoint",
            Error::MissingGuidance(_) => "missing_guidance",
            Error::Frozen => "frozen",
            Error::NotFrozen => "not_frozen",
            Error::Episode(_) => "episode",
            Error::Calibration(_) => "calibration",
            Error::Json(_) => "json",
        }
    }
}
