use serde::{Deserialize, Serialize};

use super::ShredError;
use crate::data::SplitFractions;
use crate::diff::AdamWConfig;
use crate::nets::NetConfig;
use crate::sindy::{LibrarySpec, TrigTerm};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sindy,
    Koopman,
}

/// Candidate library without the state dimension, which comes from the
/// latent size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibraryConfig {
    #[serde(default = "yes")]
    pub include_constant: bool,
    #[serde(default = "one")]
    pub poly_degree: u32,
    #[serde(default)]
    pub trig: Vec<TrigTerm>,
}

fn yes() -> bool {
    true
}

fn one() -> u32 {
    1
}

impl Default for LibraryConfig {
    fn default() -> Self {
        Self {
            include_constant: true,
            poly_degree: 1,
            trig: Vec::new(),
        }
    }
}

fn d_lag() -> usize {
    52
}
fn d_gru_layers() -> usize {
    2
}
fn d_decoder() -> Vec<usize> {
    vec![350, 400]
}
fn d_epochs() -> usize {
    1000
}
fn d_batch() -> usize {
    128
}
fn d_lr() -> f64 {
    1e-3
}
fn d_wd() -> f64 {
    1e-2
}
fn d_dropout() -> f64 {
    0.1
}
fn d_dt() -> f64 {
    1.0
}
fn d_k() -> usize {
    10
}
fn d_interval() -> usize {
    100
}
fn d_low() -> f64 {
    0.1
}
fn d_high() -> f64 {
    1.0
}
fn d_ensemble() -> usize {
    10
}
fn d_m_max() -> usize {
    1
}
fn d_weight() -> f64 {
    1.0
}

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_lag")]
    pub lag: usize,
    pub latent_dim: usize,
    #[serde(default = "d_gru_layers")]
    pub gru_layers: usize,
    #[serde(default)]
    pub gru_hidden: Option<usize>,
    #[serde(default = "d_decoder")]
    pub decoder_widths: Vec<usize>,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_wd")]
    pub weight_decay: f64,
    #[serde(default = "d_dropout")]
    pub dropout: f64,
    #[serde(default)]
    pub grad_clip: Option<f64>,
    /// Latent time between consecutive frames.
    #[serde(default = "d_dt")]
    pub dt: f64,
    /// Euler sub-steps per frame interval.
    #[serde(default = "d_k")]
    pub mini_steps: usize,
    /// Epochs between pruning events.
    #[serde(default = "d_interval")]
    pub threshold_interval: usize,
    #[serde(default = "d_low")]
    pub threshold_low: f64,
    #[serde(default = "d_high")]
    pub threshold_high: f64,
    #[serde(default = "d_ensemble")]
    pub ensemble_size: usize,
    #[serde(default)]
    pub library: LibraryConfig,
    #[serde(default = "mode_default")]
    pub mode: Mode,
    #[serde(default = "d_m_max")]
    pub koopman_m_max: usize,
    #[serde(default = "d_weight")]
    pub sindy_weight: f64,
    #[serde(default)]
    pub duplicate_tail_fraction: f64,
    #[serde(default)]
    pub splits: SplitFractions,
    #[serde(default)]
    pub seed: u64,
}

fn mode_default() -> Mode {
    Mode::Sindy
}

impl TrainConfig {
    /// Defaults for everything except the latent size.
    pub fn with_latent(latent_dim: usize) -> Self {
        serde_json::from_value(serde_json::json!({ "latent_dim": latent_dim }))
            .expect("defaults are valid")
    }

    pub fn validate(&self) -> Result<(), ShredError> {
        let fail = |m: String| Err(ShredError::Config(m));
        let positive = [
            ("lag", self.lag),
            ("latent_dim", self.latent_dim),
            ("gru_layers", self.gru_layers),
            ("batch_size", self.batch_size),
            ("mini_steps", self.mini_steps),
            ("threshold_interval", self.threshold_interval),
            ("ensemble_size", self.ensemble_size),
            ("koopman_m_max", self.koopman_m_max),
        ];
        for (name, v) in positive {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        for (name, v) in [("lr", self.lr), ("dt", self.dt)] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.weight_decay >= 0.0) || !(self.sindy_weight >= 0.0) {
            return fail("weight_decay and sindy_weight must be non-negative".into());
        }
        if !(self.threshold_low >= 0.0 && self.threshold_high >= self.threshold_low) {
            return fail(format!(
                "threshold range [{}, {}] must satisfy 0 ≤ low ≤ high",
                self.threshold_low, self.threshold_high
            ));
        }
        if !(0.0..=1.0).contains(&self.duplicate_tail_fraction) {
            return fail("duplicate_tail_fraction must lie in [0, 1]".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return fail("grad_clip must be positive".into());
            }
        }
        if self.library.poly_degree == 0
            && self.library.trig.is_empty()
            && !self.library.include_constant
        {
            return fail("library is empty".into());
        }
        self.splits
            .validate()
            .map_err(|e| ShredError::Config(e.to_string()))?;
        self.net_config(1, 1)
            .validate()
            .map_err(|e| ShredError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn library_spec(&self) -> LibrarySpec {
        let spec = LibrarySpec {
            dim: self.latent_dim,
            include_constant: self.library.include_constant,
            poly_degree: self.library.poly_degree,
            trig: self.library.trig.clone(),
        };
        match self.mode {
            Mode::Sindy => spec,
            Mode::Koopman => spec.koopman_restrict(),
        }
    }

    pub fn net_config(&self, sensors: usize, output: usize) -> NetConfig {
        NetConfig {
            sensors,
            latent_dim: self.latent_dim,
            gru_layers: self.gru_layers,
            gru_hidden: self.gru_hidden,
            decoder_widths: self.decoder_widths.clone(),
            output,
            dropout: self.dropout,
        }
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            clip_norm: self.grad_clip,
            ..AdamWConfig::default()
        }
    }

    /// Windows per training chain: a pair for SINDy, `m_max + 1` for Koopman.
    pub fn chain_len(&self) -> usize {
        match self.mode {
            Mode::Sindy => 2,
            Mode::Koopman => self.koopman_m_max + 1,
        }
    }
}
