use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::data::SensorSet;
use crate::diff::Tensor;
use crate::shred::ShredModel;

/// Result of a pure latent rollout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub member: usize,
    /// `(H+1)×d`; row 0 is the encoding of the initial window.
    pub latents: Tensor,
    /// `(H+1)×N` decoded fields.
    pub fields: Tensor,
}

impl ForecastReport {
    pub fn horizon(&self) -> usize {
        self.latents.rows() - 1
    }
}

/// Encodes `window` (`lag×sensors`) once, then advances the latent state
/// `horizon` frames with the given ensemble member (or `K`) and decodes every
/// state. Sensors are never re-read after the first window.
pub fn forecast(
    model: &ShredModel,
    member: usize,
    window: &Tensor,
    horizon: usize,
) -> Result<ForecastReport, EvalError> {
    let lag = model.config.lag;
    if window.ndim() != 2 || window.rows() != lag || window.cols() != model.sensors() {
        return Err(EvalError::Length(format!(
            "initial window is {:?}, expected [{lag}, {}]",
            window.shape(),
            model.sensors()
        )));
    }
    let d = model.latent_dim();
    let z0 = model.encode(window)?;
    let mut latents = Vec::with_capacity((horizon + 1) * d);
    latents.extend_from_slice(z0.data());
    let mut z = z0.into_data();
    for step in 1..=horizon {
        z = match model.step_latent(member, &z) {
            Ok(next) => next,
            Err(e) if e.is_numerical() => return Err(EvalError::Divergence { step }),
            Err(e) => return Err(e.into()),
        };
        if z.iter().any(|x| !x.is_finite()) {
            return Err(EvalError::Divergence { step });
        }
        latents.extend_from_slice(&z);
    }
    let latents = Tensor::matrix(horizon + 1, d, latents);
    let fields = model.decode(&latents)?;
    Ok(ForecastReport {
        member,
        latents,
        fields,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonRow {
    pub start: usize,
    pub end: usize,
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonTable {
    pub rows: Vec<HorizonRow>,
    /// Length-weighted mean of the row errors.
    pub total: f64,
}

fn check_aligned(pred: &Tensor, truth: &Tensor) -> Result<(), EvalError> {
    if pred.ndim() != 2 || pred.shape() != truth.shape() {
        return Err(EvalError::Length(format!(
            "prediction {:?} vs truth {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    Ok(())
}

/// Mean squared error of each frame window `[start, end)` and the
/// length-weighted total.
pub fn horizon_mse(
    pred: &Tensor,
    truth: &Tensor,
    windows: &[Range<usize>],
) -> Result<HorizonTable, EvalError> {
    check_aligned(pred, truth)?;
    let frames = pred.rows();
    let n = pred.cols();
    let mut rows = Vec::with_capacity(windows.len());
    let mut weighted = 0.0;
    let mut length = 0usize;
    for w in windows {
        if w.start >= w.end || w.end > frames {
            return Err(EvalError::Length(format!(
                "window {}..{} does not fit {frames} frames",
                w.start, w.end
            )));
        }
        let a = &pred.data()[w.start * n..w.end * n];
        let b = &truth.data()[w.start * n..w.end * n];
        let mse = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
        weighted += mse * w.len() as f64;
        length += w.len();
        rows.push(HorizonRow {
            start: w.start,
            end: w.end,
            mse,
        });
    }
    let total = if length == 0 {
        0.0
    } else {
        weighted / length as f64
    };
    Ok(HorizonTable { rows, total })
}

/// Predicted and true time series at one spatial point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorTrace {
    pub index: usize,
    pub predicted: Vec<f64>,
    pub truth: Vec<f64>,
}

impl SensorTrace {
    pub fn mse(&self) -> f64 {
        if self.truth.is_empty() {
            return 0.0;
        }
        let s: f64 = self
            .predicted
            .iter()
            .zip(&self.truth)
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        s / self.truth.len() as f64
    }
}

/// Extracts series at `held_out` points, which must not be training sensors.
pub fn sensor_traces(
    pred: &Tensor,
    truth: &Tensor,
    held_out: &[usize],
    training: &SensorSet,
) -> Result<Vec<SensorTrace>, EvalError> {
    check_aligned(pred, truth)?;
    let points = pred.cols();
    held_out
        .iter()
        .map(|&index| {
            if index >= points {
                return Err(EvalError::SensorRange { index, points });
            }
            if training.contains(index) {
                return Err(EvalError::SensorOverlap(index));
            }
            let column = |t: &Tensor| (0..t.rows()).map(|r| t.at(r, index)).collect();
            Ok(SensorTrace {
                index,
                predicted: column(pred),
                truth: column(truth),
            })
        })
        .collect()
}
