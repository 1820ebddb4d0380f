use thiserror::Error;

/// Errors raised by the laboratory's numerical operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate classifier: weight vector has zero norm")]
    DegenerateClassifier,

    #[error("no robust direction: every coordinate of mu is thresholded to zero at eps = {eps}")]
    NoRobustDirection { eps: f64 },

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    TrainingDiverged { iteration: usize, loss: f64 },

    #[error("guided sampling diverged at step {step}, chain {chain}")]
    GuidanceDiverged { step: usize, chain: usize },

    #[error("sampling produced a non-finite value at step {step}, chain {chain}")]
    NonFiniteSample { step: usize, chain: usize },

    #[error("empty negative set for anchor {anchor}")]
    EmptyNegativeSet { anchor: usize },

    #[error("class {class} has {have} members, {need} required")]
    InsufficientClassSize { class: usize, have: usize, need: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn invalid(msg: impl Into<String>) -> LabError {
    LabError::InvalidArgument(msg.into())
}
