use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty tokenization for word {word} ({text:?})")]
    EmptyTokenization { word: usize, text: String },

    #[error("invalid document: {0}")]
    InvalidDocument(String),

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("empty segment")]
    EmptySegment,

    #[error("segment is not contiguous in reading order: {0:?}")]
    NonContiguousSegment(Vec<usize>),

    #[error("{what} id {id} out of range (limit {limit})")]
    IdOutOfRange {
        what: &'static str,
        id: usize,
        limit: usize,
    },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("missing gradient for parameter {0}")]
    MissingGrad(String),

    #[error("segment {segment} has {length} tokens, more than max_local_pos={max}")]
    LocalPositionOverflow {
        segment: usize,
        length: usize,
        max: usize,
    },

    #[error("unknown label {label:?}; valid labels: {}", valid.join(", "))]
    UnknownLabel { label: String, valid: Vec<String> },

    #[error("invalid config: {field} {constraint}")]
    InvalidConfig { field: String, constraint: String },

    #[error("infeasible corpus config: {0}")]
    InfeasibleCorpus(String),

    #[error("length mismatch in {what}: {left} vs {right}")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("no valid answer span")]
    NoValidSpan,

    #[error("empty gold answer list")]
    EmptyGold,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("tokenizer mismatch: {0}")]
    TokenizerMismatch(String),

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, constraint: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            constraint: constraint.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
