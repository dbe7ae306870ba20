//! Joint training of the sensor encoder, field decoder and latent dynamics.
//!
//! [`Trainer`] runs epochs of shuffled mini-batches over adjacent window
//! chains, minimizing reconstruction error plus the ensemble SINDy (or
//! Koopman) consistency term, and prunes every ensemble member at its own
//! threshold on a fixed epoch schedule.

mod checkpoint;
mod config;
mod loss;
mod model;
mod select;
mod train;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{LibraryConfig, Mode, TrainConfig};
pub use loss::{combined_loss, LossBreakdown, LossVars};
pub use model::{Dynamics, ModelVars, ShredModel};
pub use select::{select_discovered_model, select_member, validation_latents, Discovered};
pub use train::{EpochLog, Trainer};

use thiserror::Error;

use crate::data::DataError;
use crate::diff::DiffError;
use crate::nets::NetError;
use crate::sindy::SindyError;

#[derive(Debug, Error)]
pub enum ShredError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("window chain starting at {start} needs {chain} windows but only {available} exist")]
    Adjacency {
        start: usize,
        chain: usize,
        available: usize,
    },
    #[error("no training chains: the training split holds {windows} windows, chains need {chain}")]
    NoTrainingData { windows: usize, chain: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch} (reconstruction {recon}, dynamics {dynamics})")]
    NonFinite {
        epoch: usize,
        batch: usize,
        recon: f64,
        dynamics: f64,
    },
    #[error("model selection failed, every member diverged on validation rollout: {0:?}")]
    Selection(Vec<f64>),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint section {section:?} is corrupt: {reason}")]
    CorruptSection { section: String, reason: String },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Sindy(#[from] SindyError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ShredError {
    /// True for failures of the numerics (divergence, non-finite values)
    /// rather than of inputs or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            ShredError::NonFinite { .. }
                | ShredError::Selection(_)
                | ShredError::Sindy(SindyError::Diverged { .. })
        )
    }
}
