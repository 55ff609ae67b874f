use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    /// A record in a line-delimited file could not be used.
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("placement `{placement}`: {message}")]
    Channels { placement: String, message: String },

    #[error("window `{window_id}` contains a non-finite sample")]
    NonFinite { window_id: String },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("unknown activity `{0}`")]
    UnknownActivity(String),

    #[error("unknown placement `{0}`")]
    UnknownPlacement(String),

    #[error("missing channel `{channel}` in placement `{placement}`")]
    MissingChannel { placement: String, channel: String },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("feature sets differ: {0:?}")]
    FeatureMismatch(Vec<String>),

    #[error("embedding for window `{0}` not found")]
    EmbeddingMissing(String),

    #[error("cannot normalize a zero vector (window `{0}`)")]
    ZeroVector(String),

    #[error("duplicate id `{0}` in ranked list")]
    DuplicateId(String),

    #[error("{0} unbound")]
    Unbound(String),

    #[error("unknown template `{0}`")]
    UnknownTemplate(String),

    #[error("backend: {0}")]
    Backend(String),

    #[error("invalid knowledge base: {0}")]
    KnowledgeBase(String),

    #[error("invalid index: {0}")]
    Index(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
