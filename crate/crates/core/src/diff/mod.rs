//! Dense tensors, a define-by-run reverse-mode tape and an AdamW optimizer.
//!
//! Everything trainable in the crate is built from the primitives here. A
//! fresh [`Tape`] is created per training step; parameters enter it as
//! leaves, and [`Tape::backward`] consumes it and returns their gradients.

mod check;
mod optim;
mod tape;
mod tensor;

pub use check::finite_diff_check;
pub use optim::{AdamW, AdamWConfig};
pub use tape::{forward, Gradients, Primitive, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("{op}: incompatible shapes {shapes:?}")]
    ShapeMismatch {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },
    #[error("{op}: expected {expected} inputs, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("shape {shape:?} does not hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("invalid shape {shape:?}: dimensions must be positive")]
    InvalidShape { shape: Vec<usize> },
    #[error("rows have unequal lengths")]
    RaggedRows,
    #[error("backward requires a one-element loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("backward called on an empty tape")]
    EmptyTape,
    #[error("parameter {index} requires a gradient but none was set")]
    MissingGradient { index: usize },
    #[error("optimizer state built for {expected} entries, got {got}")]
    OptimizerLayout { expected: usize, got: usize },
}
