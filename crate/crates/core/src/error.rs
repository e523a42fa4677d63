use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corpus is empty after filtering ({reason})")]
    EmptyCorpus { reason: String },

    #[error("cannot split {len} passwords into {folds} folds")]
    InvalidSplit { len: usize, folds: usize },

    #[error("vocabulary size {requested} is unreachable: {reason}; at most {achievable} tokens are possible")]
    VocabularySize {
        requested: usize,
        achievable: usize,
        reason: String,
    },

    #[error("character {0:?} is not in the vocabulary")]
    OutOfVocabulary(char),

    #[error("token index {index} is out of range for a vocabulary of {size}")]
    TokenOutOfRange { index: usize, size: usize },

    #[error("invalid encoding: {0}")]
    InvalidEncoding(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("sequence of {len} tokens does not fit into {max} positions")]
    SequenceTooLong { len: usize, max: usize },

    #[error("exact enumeration refused for n = {n}: limit is {limit} bits")]
    TooManyBits { n: usize, limit: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("evaluation set is empty")]
    EmptyEvalSet,

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
