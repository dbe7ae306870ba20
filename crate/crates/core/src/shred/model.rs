use serde::{Deserialize, Serialize};

use super::config::{Mode, TrainConfig};
use super::ShredError;
use crate::diff::{Tape, Tensor, Var};
use crate::nets::{decode, encode, init_params, DecoderParams, DecoderVars, GruParams, GruVars};
use crate::rng::{rng_for, streams};
use crate::sindy::{koopman_matrix, EnsembleSindy, LibrarySpec, SindyModel};

/// Latent dynamics regularizing the encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Dynamics {
    Sindy(EnsembleSindy),
    /// One-interval transition matrix, `z_{t+1} = K z_t`.
    Koopman {
        k: Tensor,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShredModel {
    pub config: TrainConfig,
    pub gru: GruParams,
    pub decoder: DecoderParams,
    pub dynamics: Dynamics,
}

/// A [`ShredModel`]'s parameters recorded on a tape.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub gru: GruVars,
    pub decoder: DecoderVars,
    /// Raw (unmasked) coefficient leaves, one per ensemble member.
    pub xi: Vec<Var>,
    pub koopman: Option<Var>,
}

impl ModelVars {
    /// Leaves in [`ShredModel::params`] order.
    pub fn all(&self) -> Vec<Var> {
        let mut v = self.gru.all();
        v.extend(self.decoder.all());
        v.extend(&self.xi);
        v.extend(self.koopman);
        v
    }
}

impl ShredModel {
    /// Fresh model: random encoder/decoder, zero Ξ for every ensemble member,
    /// identity K in Koopman mode.
    pub fn new(config: TrainConfig, sensors: usize, output: usize) -> Result<Self, ShredError> {
        config.validate()?;
        let mut rng = rng_for(config.seed, streams::INIT);
        let (gru, decoder) = init_params(&config.net_config(sensors, output), &mut rng)?;
        let spec = config.library_spec();
        let dynamics = match config.mode {
            Mode::Sindy => {
                let mut ens = EnsembleSindy::with_ladder(
                    &spec,
                    config.dt,
                    config.mini_steps,
                    config.ensemble_size,
                    config.threshold_low,
                    config.threshold_high,
                )?;
                for m in &mut ens.models {
                    m.xi.requires_grad = true;
                }
                Dynamics::Sindy(ens)
            }
            Mode::Koopman => Dynamics::Koopman {
                k: Tensor::identity(config.latent_dim).trainable(),
            },
        };
        Ok(Self {
            config,
            gru,
            decoder,
            dynamics,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn sensors(&self) -> usize {
        self.gru.sensors()
    }

    pub fn output(&self) -> usize {
        self.decoder.output_width()
    }

    pub fn library_spec(&self) -> LibrarySpec {
        self.config.library_spec()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut v = self.gru.tensors();
        v.extend(self.decoder.tensors());
        match &self.dynamics {
            Dynamics::Sindy(e) => v.extend(e.models.iter().map(|m| &m.xi)),
            Dynamics::Koopman { k } => v.push(k),
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.gru.tensors_mut();
        v.extend(self.decoder.tensors_mut());
        match &mut self.dynamics {
            Dynamics::Sindy(e) => v.extend(e.models.iter_mut().map(|m| &mut m.xi)),
            Dynamics::Koopman { k } => v.push(k),
        }
        v
    }

    pub fn bind(&self, tape: &mut Tape) -> ModelVars {
        let gru = self.gru.bind(tape);
        let decoder = self.decoder.bind(tape);
        let (xi, koopman) = match &self.dynamics {
            Dynamics::Sindy(e) => (e.models.iter().map(|m| tape.leaf(&m.xi)).collect(), None),
            Dynamics::Koopman { k } => (Vec::new(), Some(tape.leaf(k))),
        };
        ModelVars {
            gru,
            decoder,
            xi,
            koopman,
        }
    }

    /// Latents of a time-major `(L·B)×S` window stack.
    pub fn encode(&self, windows: &Tensor) -> Result<Tensor, ShredError> {
        let mut tape = Tape::new();
        let vars = self.gru.bind(&mut tape);
        let w = tape.constant(windows.clone());
        let z = encode(&mut tape, w, self.config.lag, &vars)?;
        Ok(tape.value(z).clone())
    }

    /// Fields decoded from `B×d` latents (no dropout).
    pub fn decode(&self, z: &Tensor) -> Result<Tensor, ShredError> {
        let mut tape = Tape::new();
        let vars = self.decoder.bind(&mut tape);
        let zv = tape.constant(z.clone());
        let out = decode(&mut tape, zv, &vars, None)?;
        Ok(tape.value(out).clone())
    }

    /// Re-zeroes pruned coefficients (the optimizer may move them).
    pub fn apply_masks(&mut self) {
        if let Dynamics::Sindy(e) = &mut self.dynamics {
            for m in &mut e.models {
                m.apply_mask();
            }
        }
    }

    pub fn ensemble(&self) -> Option<&EnsembleSindy> {
        match &self.dynamics {
            Dynamics::Sindy(e) => Some(e),
            Dynamics::Koopman { .. } => None,
        }
    }

    /// One-interval transition matrix `K` of a Koopman model, or of a
    /// linear-library SINDy member.
    pub fn transition(&self, member: usize) -> Result<Tensor, ShredError> {
        match &self.dynamics {
            Dynamics::Koopman { k } => Ok(k.detached()),
            Dynamics::Sindy(e) => {
                let m = e
                    .models
                    .get(member)
                    .ok_or_else(|| ShredError::Config(format!("no ensemble member {member}")))?;
                Ok(koopman_matrix(m)?)
            }
        }
    }

    /// Advances a latent state one frame with the given ensemble member
    /// (ignored in Koopman mode).
    pub fn step_latent(&self, member: usize, z: &[f64]) -> Result<Vec<f64>, ShredError> {
        match &self.dynamics {
            Dynamics::Sindy(e) => {
                let m: &SindyModel = e
                    .models
                    .get(member)
                    .ok_or_else(|| ShredError::Config(format!("no ensemble member {member}")))?;
                Ok(m.step(z)?)
            }
            Dynamics::Koopman { k } => {
                let d = z.len();
                Ok((0..d)
                    .map(|i| (0..d).map(|j| k.at(i, j) * z[j]).sum())
                    .collect())
            }
        }
    }
}
