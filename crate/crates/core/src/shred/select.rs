use serde::{Deserialize, Serialize};

use super::model::{Dynamics, ShredModel};
use super::ShredError;
use crate::data::{Split, WindowedDataset};
use crate::diff::Tensor;
use crate::sindy::SindyModel;

/// Encoder outputs for every window of `split`, in time order (`n×d`).
pub fn validation_latents(
    model: &ShredModel,
    data: &WindowedDataset,
    split: Split,
) -> Result<Tensor, ShredError> {
    let range = data.splits.range(split);
    if range.is_empty() {
        return Err(ShredError::Config(format!("{split:?} split is empty")));
    }
    let idx: Vec<usize> = range.collect();
    let d = model.latent_dim();
    let mut out = Vec::with_capacity(idx.len() * d);
    for chunk in idx.chunks(256) {
        out.extend_from_slice(model.encode(&data.batch_inputs(chunk))?.data());
    }
    Ok(Tensor::matrix(idx.len(), d, out))
}

/// Index of the sparsest member whose validation error is within 10% of
/// the best; ties go to the lower error, then the lower index. Non-finite
/// errors never qualify.
pub fn select_member(scores: &[(usize, f64)]) -> Result<usize, ShredError> {
    let best = scores
        .iter()
        .map(|s| s.1)
        .filter(|m| m.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(ShredError::Selection(scores.iter().map(|s| s.1).collect()));
    }
    let gate = best * 1.1;
    scores
        .iter()
        .enumerate()
        .filter(|(_, s)| s.1.is_finite() && s.1 <= gate)
        .min_by(|a, b| a.1 .0.cmp(&b.1 .0).then(a.1 .1.total_cmp(&b.1 .1)))
        .map(|(i, _)| i)
        .ok_or_else(|| ShredError::Selection(scores.iter().map(|s| s.1).collect()))
}

/// The model chosen from a trained run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Discovered {
    pub member: usize,
    /// `None` in Koopman mode.
    pub model: Option<SindyModel>,
    pub equations: String,
    /// `(nnz, validation rollout MSE)` per member.
    pub scores: Vec<(usize, f64)>,
}

fn rollout_mse(model: &ShredModel, member: usize, z: &Tensor) -> f64 {
    let d = z.cols();
    let mut state = z.row(0).to_vec();
    let mut err = 0.0;
    for t in 1..z.rows() {
        state = match model.step_latent(member, &state) {
            Ok(s) => s,
            Err(_) => return f64::INFINITY,
        };
        err += state
            .iter()
            .zip(z.row(t))
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>();
    }
    let mse = err / ((z.rows() - 1).max(1) * d) as f64;
    if mse.is_finite() {
        mse
    } else {
        f64::INFINITY
    }
}

fn koopman_equations(k: &Tensor) -> String {
    let d = k.rows();
    let mut s = String::new();
    for i in 0..d {
        let terms: Vec<String> = (0..d)
            .map(|j| format!("{:+.4} z{}", k.at(i, j), j + 1))
            .collect();
        s.push_str(&format!("z{}[t+1] = {}\n", i + 1, terms.join(" ")));
    }
    s
}

/// Rolls each member out from the first validation latent across the
/// validation block and applies [`select_member`].
pub fn select_discovered_model(
    model: &ShredModel,
    data: &WindowedDataset,
) -> Result<Discovered, ShredError> {
    let split = if data.splits.validation.len() >= 2 {
        Split::Validation
    } else {
        Split::Train
    };
    let z = validation_latents(model, data, split)?;
    match &model.dynamics {
        Dynamics::Sindy(e) => {
            let scores: Vec<(usize, f64)> = e
                .models
                .iter()
                .enumerate()
                .map(|(i, m)| (m.nnz(), rollout_mse(model, i, &z)))
                .collect();
            let member = select_member(&scores)?;
            let chosen = e.models[member].clone();
            Ok(Discovered {
                member,
                equations: chosen.equations(4),
                model: Some(chosen),
                scores,
            })
        }
        Dynamics::Koopman { k } => {
            let mse = rollout_mse(model, 0, &z);
            let scores = vec![(k.numel(), mse)];
            select_member(&scores)?;
            Ok(Discovered {
                member: 0,
                model: None,
                equations: koopman_equations(k),
                scores,
            })
        }
    }
}
