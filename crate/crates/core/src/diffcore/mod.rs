//! Small reverse-mode automatic differentiation engine over dense `f64`
//! matrices, with parameter storage, SGD and checkpoints.

mod gradcheck;
mod graph;
mod state;
mod tensor;

pub use gradcheck::{gradcheck, GradCheckReport};
pub use graph::{matmul_values, Graph, Var};
pub use state::{
    load_checkpoint, save_checkpoint, Checkpoint, ModelState, Parameter, SgdConfig,
    CHECKPOINT_FORMAT,
};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("log of a non-positive value")]
    LogNonPositive,
    #[error("backward needs a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("parameter {0} registered twice")]
    DuplicateParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint format {found:?}, expected {expected:?}")]
    CheckpointVersion { found: String, expected: String },
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl DiffError {
    pub(crate) fn shape(op: &'static str, left: &Tensor, right: &Tensor) -> DiffError {
        DiffError::ShapeMismatch {
            op,
            left: left.shape().to_vec(),
            right: right.shape().to_vec(),
        }
    }
}
