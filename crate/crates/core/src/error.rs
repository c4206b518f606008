use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("text produced no tokens{}", id.map(|i| format!(" (chunk {i})")).unwrap_or_default())]
    EmptyInput { id: Option<u64> },

    #[error("vector norm {norm:e} is below the degeneracy floor")]
    DegenerateNorm { norm: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("duplicate evidence id {0}")]
    DuplicateId(u64),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("index is empty")]
    EmptyIndex,

    #[error("score list is empty")]
    EmptyScores,

    #[error("beta must be finite and non-negative, got {0}")]
    NonFiniteBeta(f64),

    #[error("unknown evidence id {0}")]
    UnknownChunkId(u64),

    #[error("token id {id} outside vocabulary of size {size}")]
    InvalidTokenId { id: u32, size: usize },

    #[error("no evidence survived retrieval for sample {sample_id}")]
    NoEvidence { sample_id: String },

    #[error("gradient check failed: max relative error {max_rel_err:e} at {at}")]
    GradientCheck { max_rel_err: f64, at: String },

    #[error("generation trace has no steps")]
    EmptyTrace,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("non-finite loss at epoch {epoch} on sample {sample_id}")]
    NonFiniteLoss { epoch: usize, sample_id: String },

    #[error("index encoder fingerprint {found} does not match encoder {expected}")]
    StaleIndex { expected: String, found: String },

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{}: parse error at byte {offset}: {message}", path.display())]
    Parse {
        path: PathBuf,
        offset: usize,
        message: String,
    },

    #[error("record {record}: {message}")]
    Schema { record: String, message: String },

    #[error("record {record}: supporting fact title {title:?} not present in context")]
    DanglingSupportingFact { record: String, title: String },

    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

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
