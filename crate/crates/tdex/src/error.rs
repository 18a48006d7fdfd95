//! Crate-wide error type and result alias.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, TdexError>;

#[derive(Debug, Error)]
pub enum TdexError {
    #[error("empty dataset")]
    EmptyDataset,

    /// Malformed or out-of-contract data (NaN readings, bad quaternions,
    /// non-increasing timestamps, wrong feature dimensions, ...).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// Bad user-facing argument or config entry.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// A pipeline stage was requested before its inputs exist.
    #[error("missing artifacts for stage `{0}`; run it first")]
    MissingStage(String),

    #[error("shape mismatch at {layer}: expected {expected}, got {got}")]
    ShapeMismatch {
        layer: String,
        expected: String,
        got: String,
    },

    /// A tape was replayed after the parameters it was recorded against changed.
    #[error("stale tape: parameters changed since the forward pass")]
    StaleTape,

    #[error("reject buffer exhausts index")]
    BufferExhaustsIndex,

    /// A featurizer was called without the auxiliary input it needs.
    #[error("featurizer `{0}` requires auxiliary input: {1}")]
    MissingAux(&'static str, &'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed record: {0}")]
    Json(#[from] serde_json::Error),

    /// Internal invariant violation; a bug, not a data problem.
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl TdexError {
    /// Process exit code for the CLI: 1 usage, 2 data, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            TdexError::InvalidArg(_) => 1,
            TdexError::EmptyDataset
            | TdexError::InvalidData(_)
            | TdexError::MissingStage(_)
            | TdexError::BufferExhaustsIndex
            | TdexError::MissingAux(_, _)
            | TdexError::Io(_)
            | TdexError::Json(_) => 2,
            TdexError::ShapeMismatch { .. } | TdexError::StaleTape | TdexError::Internal(_) => 3,
        }
    }
}
