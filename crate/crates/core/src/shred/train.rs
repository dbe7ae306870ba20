use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::Mode;
use super::loss::{combined_loss, LossBreakdown};
use super::model::{Dynamics, ShredModel};
use super::ShredError;
use crate::data::{Split, WindowedDataset};
use crate::diff::{AdamW, Tape};
use crate::rng::{rng_for, streams, Rng};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Batch means of each loss term.
    pub recon: f64,
    pub dynamics: f64,
    pub total: f64,
    /// Active terms per ensemble member after this epoch.
    pub nnz: Vec<usize>,
    pub pruned: bool,
    /// Seconds since the trainer was created; excluded from determinism
    /// comparisons.
    pub wall_time: f64,
}

impl EpochLog {
    /// Copy with the wall-clock field zeroed.
    pub fn without_time(&self) -> Self {
        Self {
            wall_time: 0.0,
            ..self.clone()
        }
    }
}

/// Training state: model, optimizer moments and the next epoch index.
///
/// Each epoch draws its shuffling and dropout randomness from a stream
/// derived from `(seed, epoch)`, so resuming from a checkpoint at epoch `e`
/// replays exactly what an uninterrupted run would do.
pub struct Trainer {
    pub model: ShredModel,
    pub optimizer: AdamW,
    pub epoch: usize,
    pub history: Vec<EpochLog>,
    started: Instant,
    warned_null: bool,
}

impl Trainer {
    pub fn new(model: ShredModel) -> Self {
        let optimizer = AdamW::new(model.config.optimizer(), &model.params());
        Self::resume(model, optimizer, 0)
    }

    pub fn resume(model: ShredModel, optimizer: AdamW, epoch: usize) -> Self {
        Self {
            model,
            optimizer,
            epoch,
            history: Vec::new(),
            started: Instant::now(),
            warned_null: false,
        }
    }

    /// One optimizer step on the chains starting at `starts`.
    pub fn step_batch(
        &mut self,
        data: &WindowedDataset,
        starts: &[usize],
        rng: &mut Rng,
    ) -> Result<LossBreakdown, ShredError> {
        let mut tape = Tape::new();
        let vars = self.model.bind(&mut tape);
        let loss = combined_loss(&mut tape, &self.model, &vars, data, starts, Some(rng))?;
        let breakdown = loss.breakdown(&tape);
        if !breakdown.total.is_finite() {
            return Err(ShredError::NonFinite {
                epoch: self.epoch,
                batch: 0,
                recon: breakdown.recon,
                dynamics: breakdown.dynamics,
            });
        }
        if loss.dynamics.is_none() && self.model.config.mode == Mode::Sindy && !self.warned_null {
            log::warn!(
                "every ensemble member is the null model; continuing with reconstruction only"
            );
            self.warned_null = true;
        }
        let leaves = vars.all();
        let mut grads = tape.backward(loss.total)?;
        let mut params = self.model.params_mut();
        for (p, v) in params.iter_mut().zip(&leaves) {
            p.grad = Some(grads.take(*v).unwrap_or_else(|| vec![0.0; p.numel()]));
        }
        self.optimizer.step(&mut params)?;
        self.model.apply_masks();
        Ok(breakdown)
    }

    /// Runs one epoch over shuffled training chains, then prunes if the
    /// schedule says so.
    pub fn run_epoch(&mut self, data: &WindowedDataset) -> Result<EpochLog, ShredError> {
        let cfg = &self.model.config;
        let chain = cfg.chain_len();
        let mut starts = data.chain_starts(Split::Train, chain, cfg.duplicate_tail_fraction);
        if starts.is_empty() {
            return Err(ShredError::NoTrainingData {
                windows: data.splits.train.len(),
                chain,
            });
        }
        let batch_size = cfg.batch_size;
        let mut rng = rng_for(cfg.seed, streams::EPOCH_BASE + self.epoch as u64);
        starts.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut batches = 0usize;
        for (bi, batch) in starts.chunks(batch_size).enumerate() {
            let b = self
                .step_batch(data, batch, &mut rng)
                .map_err(|e| match e {
                    ShredError::NonFinite {
                        epoch,
                        recon,
                        dynamics,
                        ..
                    } => ShredError::NonFinite {
                        epoch,
                        batch: bi,
                        recon,
                        dynamics,
                    },
                    other => other,
                })?;
            sum.recon += b.recon;
            sum.dynamics += b.dynamics;
            sum.total += b.total;
            batches += 1;
        }
        let n = batches as f64;
        let interval = self.model.config.threshold_interval;
        let pruned =
            (self.epoch + 1).is_multiple_of(interval) && self.model.config.mode == Mode::Sindy;
        if pruned {
            if let Dynamics::Sindy(e) = &mut self.model.dynamics {
                e.prune_all();
            }
        }
        let log = EpochLog {
            epoch: self.epoch,
            recon: sum.recon / n,
            dynamics: sum.dynamics / n,
            total: sum.total / n,
            nnz: self.model.ensemble().map(|e| e.nnz()).unwrap_or_default(),
            pruned,
            wall_time: self.started.elapsed().as_secs_f64(),
        };
        self.epoch += 1;
        self.history.push(log.clone());
        Ok(log)
    }

    /// Trains until `end` epochs have completed in total, calling `on_epoch`
    /// after each one.
    pub fn train_until(
        &mut self,
        data: &WindowedDataset,
        end: usize,
        mut on_epoch: impl FnMut(&EpochLog),
    ) -> Result<(), ShredError> {
        while self.epoch < end {
            let log = self.run_epoch(data)?;
            on_epoch(&log);
        }
        Ok(())
    }

    /// Trains for the configured number of epochs.
    pub fn train(&mut self, data: &WindowedDataset) -> Result<(), ShredError> {
        let end = self.model.config.epochs;
        self.train_until(data, end, |_| {})
    }
}
