use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A BIO or length problem found while validating one sentence.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SentenceIssue {
    pub sentence_id: String,
    pub message: String,
}

/// One invalid field of a configuration document.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FieldIssue {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid configuration: {}", .0.iter().map(|i| format!("{}: {}", i.field, i.message)).collect::<Vec<_>>().join("; "))]
    InvalidConfig(Vec<FieldIssue>),

    #[error("input too long: {len} tokens exceeds the backend limit of {limit}")]
    InputTooLong { len: usize, limit: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("data error{}: {message}", .sentence_id.as_ref().map(|id| format!(" in sentence {id}")).unwrap_or_default())]
    Data {
        sentence_id: Option<String>,
        message: String,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("request error: {0}")]
    Request(String),

    #[error("annotation batch mismatch: missing {missing:?}, unexpected {extra:?}")]
    BatchMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },

    #[error("validation failed for {} sentence(s)", .0.len())]
    Validation(Vec<SentenceIssue>),

    #[error("invalid state: {0}")]
    State(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("checksum mismatch for {path}: expected {expected}, found {found}")]
    Checksum {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("unsupported format version {found} (this build reads major version {supported})")]
    Version { found: String, supported: u32 },

    #[error("background job failed: {0}")]
    Job(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn data(sentence_id: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Data {
            sentence_id: Some(sentence_id.into()),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
