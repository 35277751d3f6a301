use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("duplicate example id `{id}` at line {line}")]
    DuplicateId { id: String, line: usize },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("lisp parse error at byte {position}: {message}")]
    Lisp { position: usize, message: String },

    #[error("current utterance is empty")]
    EmptyUtterance,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown example id `{0}`")]
    UnknownId(String),

    #[error("N = {requested} exceeds the max setting size {bound} for symbol `{symbol}`")]
    ExceedsMaxSetting {
        symbol: String,
        requested: usize,
        bound: usize,
    },

    #[error("symbol `{symbol}` has {available} examples, {required} required")]
    NotEnoughExamples {
        symbol: String,
        available: usize,
        required: usize,
    },

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("backfill pool exhausted: {needed} replacements needed, {available} eligible")]
    PoolExhausted { needed: usize, available: usize },

    #[error("non-finite loss")]
    NonFiniteLoss,

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("model artifact: {0}")]
    Artifact(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
