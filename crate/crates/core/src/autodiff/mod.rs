//! Reverse-mode differentiation, optimizers, gradient checking and
//! checkpoint serialization.

mod array;
pub mod checkpoint;
mod gradcheck;
mod graph;
pub mod optim;
mod params;

pub use array::DenseArray;
pub use gradcheck::gradient_check;
pub use graph::{Gradients, Graph, Mode, NodeId, Op, OpAttrs, OpKind, LEAKY_RELU_SLOPE, SELU_ALPHA, SELU_LAMBDA};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use params::{ParamGroup, ParamId, ParamStore, Parameter};

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("{op}: incompatible shapes, {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: expected {expected} inputs, got {got}")]
    ArityMismatch { op: &'static str, expected: usize, got: usize },
    #[error("unknown op kind {0:?}")]
    UnknownOp(String),
    #[error("{op}: missing attribute {attr}")]
    MissingAttribute { op: &'static str, attr: String },
    #[error("invalid attribute: {0}")]
    InvalidAttribute(String),
    #[error("node {0} does not exist")]
    UnknownNode(usize),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("no gradient for parameter {0}")]
    MissingGradient(String),
    #[error("gradient shape {got:?} does not match parameter {name} {expected:?}")]
    GradientShape { name: String, expected: Vec<usize>, got: Vec<usize> },
    #[error("invalid optimizer config: {0}")]
    InvalidOptimizer(String),
    #[error("gradient check requires dropout to be disabled")]
    ActiveDropout,
    #[error("forward pass is not deterministic: {0}")]
    NonDeterministic(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
