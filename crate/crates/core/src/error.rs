//! Crate-wide error type.

/// Errors produced by decoding, model evaluation and file handling.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A softmax row where every entry is masked out.
    #[error("softmax row {row} is fully masked")]
    DegenerateRow { row: usize },

    #[error("token id {token} out of range for vocabulary of size {vocab}")]
    Vocab { token: u32, vocab: usize },

    #[error("invalid state: {0}")]
    State(String),

    #[error("invalid input: {0}")]
    Input(String),

    /// Data that parses but does not match the expected schema
    /// (e.g. a posterior whose vocabulary disagrees with the model).
    #[error("schema mismatch: {0}")]
    Schema(String),

    /// Malformed container files (bad magic, truncation, shape mismatch).
    #[error("format error: {0}")]
    Format(String),

    #[error("search failed: {0}")]
    Search(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for input/format problems,
    /// 3 for search/decode failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape(_)
            | Error::Vocab { .. }
            | Error::Input(_)
            | Error::Schema(_)
            | Error::Format(_)
            | Error::Io(_)
            | Error::Json(_) => 2,
            Error::DegenerateRow { .. } | Error::State(_) | Error::Search(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
