//! Sparse identification of latent dynamics.
//!
//! [`LibrarySpec`] describes the candidate functions Θ, [`SindyModel`] holds a
//! masked coefficient matrix Ξ integrated with explicit Euler sub-steps, and
//! [`fit_stlsq`] recovers Ξ from state/derivative pairs. The same cell is
//! differentiable on a [`crate::diff::Tape`] so it can regularize a learned
//! latent space.

mod analysis;
mod fit;
mod library;
mod loss;
mod model;

pub use analysis::{analyze_discrete_map, analyze_linear_system, EigenAnalysis, Mode, ModeKind};
pub use fit::{central_differences, fit_least_squares, fit_stlsq, StlsqOptions};
pub use library::{expected_term_count, LibrarySpec, Term, TrigKind, TrigTerm};
pub use loss::{
    ensemble_sindy_loss, koopman_chain_loss, koopman_matrix, koopman_sequence_loss,
    squared_norm_mean,
};
pub use model::{masked_xi, sindy_cell, threshold_ladder, EnsembleSindy, SindyModel};

use thiserror::Error;

use crate::diff::DiffError;

#[derive(Debug, Error)]
pub enum SindyError {
    #[error("state dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("candidate library has no terms")]
    EmptyLibrary,
    #[error("invalid integration settings dt={dt}, k={k}")]
    Integration { dt: f64, k: usize },
    #[error("integration diverged at step {step}, sub-step {substep}")]
    Diverged { step: usize, substep: usize },
    #[error("library matrix is rank deficient at column {column}; add ridge regularization or more data")]
    Conditioning { column: usize },
    #[error("{0}")]
    Ensemble(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("sequence of length {len} is too short for {m_max}-step chains")]
    SequenceTooShort { len: usize, m_max: usize },
    #[error("eigen-decomposition failed: {0}")]
    Eigen(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
}
