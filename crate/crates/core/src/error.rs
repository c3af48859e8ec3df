
use crate::seqmodel::ModelParams;

/// Errors produced anywhere in the retrieval pipeline.
#[derive(Debug, thiserror::Error)]
pub enum GramError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid code: {0}")]
    InvalidCode(String),

    #[error("cannot parse code {input:?} at byte {position}: {reason}")]
    CodeParse {
        input: String,
        position: usize,
        reason: String,
    },

    #[error("unknown token {0:?}")]
    UnknownToken(String),

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: u32, size: usize },

    #[error("sequence of length {len} exceeds model maximum {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite loss at step {step} (batch {batch})")]
    NonFiniteLoss {
        step: usize,
        batch: usize,
        last_good: Option<Box<ModelParams>>,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("malformed index file: {0}")]
    IndexFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = GramError> = std::result::Result<T, E>;
