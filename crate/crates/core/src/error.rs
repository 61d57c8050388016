//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("block index {index} out of range for {blocks} blocks")]
    BlockIndexOutOfRange { index: usize, blocks: usize },

    #[error("requested {requested} blocks but the model has only {available} parameterized layers")]
    PartitionTooFine { requested: usize, available: usize },

    #[error("freeze mask selects no trainable parameters")]
    EmptyTrainableSet,

    #[error("tape does not match the requested backward pass: {0}")]
    TapeMismatch(String),

    #[error("activation cache is stale: frozen prefix parameters changed since the cache was built")]
    StaleCache,

    #[error("training diverged (non-finite loss) in block {block} at step {step}")]
    Diverged { block: usize, step: u64 },

    #[error("unknown GPU model {0:?} (not present in the catalog)")]
    UnknownGpu(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
