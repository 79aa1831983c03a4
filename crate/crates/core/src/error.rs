//! Shared error type for the core library.

/// Error type for all core operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An input violated a precondition (non-finite value, misaligned
    /// lengths, bad threshold, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A reward group was too small to produce relative advantages.
    #[error("degenerate group: need at least 2 sequences, got {0}")]
    DegenerateGroup(usize),

    /// A token id was outside the policy vocabulary.
    #[error("token {token} out of vocabulary (size {vocab_size})")]
    OutOfVocab { token: u32, vocab_size: u32 },

    /// A gradient or update produced a non-finite component.
    #[error("numerical failure at record {record}: {detail}")]
    NumericalFailure { record: usize, detail: String },

    /// Configuration failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// Filesystem or serialization failure while reading/writing artifacts.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
