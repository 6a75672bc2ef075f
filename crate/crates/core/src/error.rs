use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("{0}: empty input")]
    Empty(&'static str),

    #[error(
        "sequence too long: question {question} + document {document} + 3 special tokens exceeds max length {max_len}"
    )]
    Length {
        question: usize,
        document: usize,
        max_len: usize,
    },

    #[error("token id {id} out of vocabulary of size {vocab}")]
    Vocab { id: u32, vocab: usize },

    #[error("index {index} out of range for {what} (len {len})")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid labels: {0}")]
    Labels(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("id mismatch: {0}")]
    IdMismatch(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
