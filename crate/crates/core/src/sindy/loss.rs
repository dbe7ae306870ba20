use super::model::{sindy_cell, EnsembleSindy, SindyModel};
use super::SindyError;
use crate::diff::{Tape, Tensor, Var};

/// Mean over rows of `‖a_r − b_r‖²`.
pub fn squared_norm_mean(tape: &mut Tape, a: Var, b: Var) -> Result<Var, SindyError> {
    let cols = tape.value(a).cols() as f64;
    let mse = tape.mse(a, b)?;
    Ok(tape.scale(mse, cols)?)
}

/// Sum over ensemble members of the mean squared one-step rollout error
/// between `z_next` and the member's SINDy step from `z_prev`.
///
/// `xis[i]` is member `i`'s masked coefficient matrix on the tape.
pub fn ensemble_sindy_loss(
    tape: &mut Tape,
    z_prev: Var,
    z_next: Var,
    xis: &[Var],
    ensemble: &EnsembleSindy,
) -> Result<Var, SindyError> {
    if xis.is_empty() || xis.len() != ensemble.len() {
        return Err(SindyError::EmptyBatch);
    }
    if tape.value(z_prev).shape() != tape.value(z_next).shape() {
        return Err(SindyError::Dimension {
            expected: tape.value(z_prev).numel(),
            got: tape.value(z_next).numel(),
        });
    }
    let mut total: Option<Var> = None;
    for (xi, model) in xis.iter().zip(&ensemble.models) {
        let pred = sindy_cell(tape, z_prev, *xi, &model.spec, model.h(), model.k)?;
        let term = squared_norm_mean(tape, z_next, pred)?;
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
    }
    total.ok_or(SindyError::EmptyBatch)
}

/// Koopman loss over explicit chains: `chain[m]` holds the latents `m`
/// steps after `chain[0]`, row-aligned. Returns the mean over `m ≥ 1` and
/// rows of `‖chain[m] − K^m chain[0]‖²` (column-vector convention).
pub fn koopman_chain_loss(tape: &mut Tape, chain: &[Var], k: Var) -> Result<Var, SindyError> {
    if chain.len() < 2 {
        return Err(SindyError::SequenceTooShort {
            len: chain.len(),
            m_max: 1,
        });
    }
    let kt = tape.transpose(k)?;
    let mut pred = chain[0];
    let mut total: Option<Var> = None;
    for &target in &chain[1..] {
        pred = tape.matmul(pred, kt)?;
        let term = squared_norm_mean(tape, target, pred)?;
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
    }
    let m_max = (chain.len() - 1) as f64;
    Ok(tape.scale(total.expect("at least one step"), 1.0 / m_max)?)
}

/// Koopman loss on a `T×d` latent sequence: every start `t < T − m_max` is
/// paired with the `m_max` following states.
pub fn koopman_sequence_loss(
    tape: &mut Tape,
    z: Var,
    k: Var,
    m_max: usize,
) -> Result<Var, SindyError> {
    let t = tape.value(z).rows();
    if m_max == 0 || t <= m_max {
        return Err(SindyError::SequenceTooShort { len: t, m_max });
    }
    let n = t - m_max;
    let chain: Vec<Var> = (0..=m_max)
        .map(|m| tape.slice_rows(z, m, m + n))
        .collect::<Result<_, _>>()?;
    koopman_chain_loss(tape, &chain, k)
}

/// One-interval transition matrix of a linear-library model,
/// `K = ((I + hΞ)^k)ᵀ`, so that the model's step is `z ↦ K z`.
pub fn koopman_matrix(model: &SindyModel) -> Result<Tensor, SindyError> {
    if !model.spec.is_linear() {
        return Err(SindyError::Ensemble(
            "transition matrix requires a linear-only library".into(),
        ));
    }
    let d = model.dim();
    let mut step = Tensor::identity(d);
    for (s, x) in step.data_mut().iter_mut().zip(model.xi.data()) {
        *s += model.h() * x;
    }
    let mut m = Tensor::identity(d);
    for _ in 0..model.k {
        m = m.matmul(&step)?;
    }
    Ok(m.transpose())
}
