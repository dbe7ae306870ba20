use serde::{Deserialize, Serialize};

use super::model::{ModelVars, ShredModel};
use super::ShredError;
use crate::data::WindowedDataset;
use crate::diff::{Tape, Var};
use crate::nets::{decode, encode};
use crate::rng::Rng;
use crate::sindy::{ensemble_sindy_loss, koopman_chain_loss, masked_xi};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub dynamics: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub recon: Var,
    /// Absent when every ensemble member has been pruned to the null model.
    pub dynamics: Option<Var>,
}

impl LossVars {
    pub fn breakdown(&self, tape: &Tape) -> LossBreakdown {
        let val = |v: Var| tape.value(v).item().unwrap_or(f64::NAN);
        LossBreakdown {
            recon: val(self.recon),
            dynamics: self.dynamics.map_or(0.0, val),
            total: val(self.total),
        }
    }
}

/// Reconstruction MSE over every window of the chains starting at
/// `starts`, plus `sindy_weight` times the dynamics term linking
/// consecutive chain positions.
///
/// All chain windows are encoded in one stacked batch from the live
/// parameters, so the dynamics term back-propagates into the encoder
/// through both ends of each pair.
pub fn combined_loss(
    tape: &mut Tape,
    model: &ShredModel,
    vars: &ModelVars,
    data: &WindowedDataset,
    starts: &[usize],
    dropout: Option<&mut Rng>,
) -> Result<LossVars, ShredError> {
    let chain = model.config.chain_len();
    if starts.is_empty() {
        return Err(ShredError::Sindy(crate::sindy::SindyError::EmptyBatch));
    }
    if let Some(&bad) = starts.iter().find(|&&s| s + chain > data.len()) {
        return Err(ShredError::Adjacency {
            start: bad,
            chain,
            available: data.len(),
        });
    }
    let b = starts.len();
    let all: Vec<usize> = (0..chain)
        .flat_map(|m| starts.iter().map(move |s| s + m))
        .collect();
    let inputs = tape.constant(data.batch_inputs(&all));
    let z = encode(tape, inputs, model.config.lag, &vars.gru)?;

    let targets = tape.constant(data.batch_targets(&all));
    let recon_out = decode(tape, z, &vars.decoder, dropout)?;
    let recon = tape.mse(recon_out, targets)?;

    let positions: Vec<Var> = (0..chain)
        .map(|m| tape.slice_rows(z, m * b, (m + 1) * b))
        .collect::<Result<_, _>>()?;
    let dynamics = match (model.ensemble(), vars.koopman) {
        (Some(ens), _) => {
            if ens.all_null() {
                None
            } else {
                let xis: Vec<Var> = vars
                    .xi
                    .iter()
                    .zip(&ens.models)
                    .map(|(&x, m)| masked_xi(tape, x, m))
                    .collect::<Result<_, _>>()?;
                Some(ensemble_sindy_loss(
                    tape,
                    positions[0],
                    positions[1],
                    &xis,
                    ens,
                )?)
            }
        }
        (None, Some(k)) => Some(koopman_chain_loss(tape, &positions, k)?),
        (None, None) => None,
    };
    let total = match dynamics {
        Some(d) => {
            let w = tape.scale(d, model.config.sindy_weight)?;
            tape.add(recon, w)?
        }
        None => recon,
    };
    Ok(LossVars {
        total,
        recon,
        dynamics,
    })
}
