//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor shapes; names the op and the offending dimensions.
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A forward op produced NaN or Inf from finite inputs.
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    /// Misuse of the computation tape (non-scalar loss, double backward, ...).
    #[error("tape: {0}")]
    Tape(String),

    /// Optimizer asked to update a parameter that has no gradient.
    #[error("missing gradient for parameter '{0}'")]
    MissingGrad(String),

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("image: {0}")]
    Image(String),

    #[error("eval: {0}")]
    Eval(String),

    /// Training aborted because the loss went non-finite.
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors a user can fix by editing config or arguments.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
