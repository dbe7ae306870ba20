use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::EvalError;
use crate::diff::Tensor;
use crate::shred::{Dynamics, ShredModel};
use crate::sindy::{analyze_discrete_map, analyze_linear_system, ModeKind};

/// Angular frequency (rad per time unit) of the strongest spectral peak of
/// `series` sampled every `dt`.
///
/// The mean is removed and a Hann window applied; the peak bin is refined by
/// fitting a parabola through the log magnitudes of it and its neighbours.
/// Returns 0 for a constant series.
pub fn dominant_frequency(series: &[f64], dt: f64) -> Result<f64, EvalError> {
    let n = series.len();
    if n < 4 {
        return Err(EvalError::Invalid(format!(
            "need at least 4 samples for a spectrum, got {n}"
        )));
    }
    if !(dt > 0.0) {
        return Err(EvalError::Invalid(format!(
            "sample interval must be positive, got {dt}"
        )));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = series
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos();
            Complex::new((x - mean) * w, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mags: Vec<f64> = buf[..n / 2 + 1].iter().map(|c| c.norm()).collect();
    let (peak, &top) = mags
        .iter()
        .enumerate()
        .skip(1)
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("n >= 4 gives at least two bins");
    if top <= 1e-300 {
        return Ok(0.0);
    }
    let mut bin = peak as f64;
    if peak + 1 < mags.len() {
        let (a, b, c) = (
            mags[peak - 1].max(1e-300).ln(),
            top.ln(),
            mags[peak + 1].max(1e-300).ln(),
        );
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            bin += (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
        }
    }
    Ok(2.0 * std::f64::consts::PI * bin / (n as f64 * dt))
}

/// [`dominant_frequency`] of each column of a `T×d` latent trace.
pub fn latent_frequencies(latents: &Tensor, dt: f64) -> Result<Vec<f64>, EvalError> {
    let t = latents.rows();
    (0..latents.cols())
        .map(|j| {
            let col: Vec<f64> = (0..t).map(|i| latents.at(i, j)).collect();
            dominant_frequency(&col, dt)
        })
        .collect()
}

/// Angular frequencies of the oscillatory eigenmodes of a trained model's
/// latent dynamics, ascending. SINDy members are read from the linear part
/// of Ξ; Koopman models from `ln μ / dt` of `K`.
pub fn model_frequencies(model: &ShredModel, member: usize) -> Result<Vec<f64>, EvalError> {
    let analysis = match &model.dynamics {
        Dynamics::Sindy(e) => {
            let m = e
                .models
                .get(member)
                .ok_or_else(|| EvalError::Invalid(format!("no ensemble member {member}")))?;
            analyze_linear_system(&m.linear_part())?
        }
        Dynamics::Koopman { k } => analyze_discrete_map(&k.detached(), model.config.dt)?,
    };
    let mut w: Vec<f64> = analysis
        .modes
        .iter()
        .filter(|m| m.kind == ModeKind::Oscillatory)
        .map(|m| m.omega)
        .collect();
    w.sort_by(f64::total_cmp);
    Ok(w)
}
