use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An operation that only exists for the binary graph was called on a
    /// multi-class spec (or vice versa).
    #[error("unsupported graph shape: {0}")]
    UnsupportedShape(String),

    #[error("non-finite value encountered: {0}")]
    NumericalOverflow(String),

    #[error("training diverged at iteration {iteration}: {detail}")]
    TrainingDiverged { iteration: usize, detail: String },

    #[error("exact enumeration over {models} auxiliary models exceeds the budget of {budget}; use Monte Carlo estimation instead")]
    EnumerationTooLarge { models: usize, budget: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("schema violation at {path}: {msg}")]
    Schema { path: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
