//! Dense `f64` tensors, a reverse-mode tape and an adaptive-moment optimizer.

mod checkpoint;
pub mod gradcheck;
mod incidence;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{GradCheck, GradCheckReport};
pub use incidence::Incidence;
pub use params::{AdamConfig, Gradients, ParamId, ParameterStore};
pub use tape::{attention_weights, BoundParams, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {shapes:?}")]
    ShapeMismatch { op: &'static str, shapes: Vec<Vec<usize>> },
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} does not hold {len} values")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("backward already run on this tape")]
    BackwardTwice,
    #[error("backward has not been run")]
    NoBackward,
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("no parameter store is tracked by this tape")]
    NoTrackedStore,
    #[error("parameter {0} has no gradient")]
    MissingGradient(String),
    #[error("duplicate parameter name {0}")]
    DuplicateParameter(String),
    #[error("expected {expected} gradients, got {got}")]
    GradientCount { expected: usize, got: usize },
    #[error("parameter layouts differ")]
    LayoutMismatch,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PartialEq for AutodiffError {
    fn eq(&self, other: &Self) -> bool {
        self.to_string() == other.to_string()
    }
}

#[cfg(test)]
mod tests;
