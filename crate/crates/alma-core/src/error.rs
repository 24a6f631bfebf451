//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by tensors, models, solvers, and the harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor or layer received data whose shape does not match.
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    /// A parameter was outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Logits were too degenerate for a constraint loss to be defined
    /// (for example, the normalising gap between sorted logits is zero).
    #[error("degenerate logits: {0}")]
    DegenerateLogits(String),

    /// The constraint gradient vanished where a descent direction was needed.
    #[error("zero gradient: {0}")]
    ZeroGradient(String),

    /// A model or dataset file failed to parse.
    #[error("{path}: parse error at {location}: {msg}")]
    FileFormat {
        path: String,
        location: String,
        msg: String,
    },

    /// The shape chain of a model is inconsistent.
    #[error("model shape chain broken at layer {layer}: {msg}")]
    ShapeChain { layer: usize, msg: String },

    /// An iterative solver diverged.
    #[error("divergence: {0}")]
    Divergence(String),

    /// Reference-model training missed its accuracy target.
    #[error("training failed: {0}")]
    TrainingFailed(String),

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Convenience constructor for [`Error::InvalidArgument`].
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
