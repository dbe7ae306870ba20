//! Fields, their on-disk format, sensor placement, lag windows and the
//! synthetic generators used by the experiments.

mod io;
mod sensors;
mod synth;
mod windows;

pub use io::{load_field, read_field, save_field, write_field, FIELD_MAGIC, FIELD_VERSION};
pub use sensors::{read_sensor_csv, select_sensors, write_sensor_csv, SensorSet};
pub use synth::{
    gen_modal_field, gen_pendulum, gen_sine_ode, modal_pattern, pattern_indices, rasterize_rod,
    ModalTruth, ModeSpec, PendulumParams, PendulumTruth,
};
pub use windows::{Split, SplitFractions, Splits, WindowedDataset};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("not a field file: expected magic \"FLD1\", found {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported field file version {0}")]
    Version(u32),
    #[error("field file truncated in {section}: needed {needed} bytes, {available} available")]
    Truncated {
        section: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("field dimensions overflow: {0}")]
    DimensionOverflow(String),
    #[error("{0} trailing bytes after field payload")]
    TrailingBytes(usize),
    #[error("grid shape {grid:?} does not cover {n} spatial points")]
    GridMismatch { grid: Vec<usize>, n: usize },
    #[error("field is constant (min = max = {0}); cannot standardize")]
    DegenerateScale(f64),
    #[error("field has no recorded scale")]
    MissingScale,
    #[error("requested {requested} sensors but only {available} eligible locations")]
    TooManySensors { requested: usize, available: usize },
    #[error("invalid sensor set: {0}")]
    Sensors(String),
    #[error("sequence of {frames} frames is too short for lag {lag}")]
    LagTooLong { frames: usize, lag: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("trajectory diverged at frame {0}")]
    Divergent(usize),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A time-major `T×N` field with optional grid and scaling metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub data: Tensor,
    pub grid_shape: Option<Vec<usize>>,
    /// `(min, max)` of the original values when the data is standardized.
    pub scale: Option<(f64, f64)>,
    pub dt_physical: f64,
}

impl Field {
    pub fn new(
        data: Tensor,
        grid_shape: Option<Vec<usize>>,
        dt_physical: f64,
    ) -> Result<Self, DataError> {
        if data.ndim() != 2 {
            return Err(DataError::Parameter(format!(
                "field data must be T×N, got {:?}",
                data.shape()
            )));
        }
        if let Some(g) = &grid_shape {
            if g.iter().product::<usize>() != data.cols() || g.is_empty() {
                return Err(DataError::GridMismatch {
                    grid: g.clone(),
                    n: data.cols(),
                });
            }
        }
        Ok(Self {
            data,
            grid_shape,
            scale: None,
            dt_physical,
        })
    }

    pub fn frames(&self) -> usize {
        self.data.rows()
    }

    pub fn points(&self) -> usize {
        self.data.cols()
    }

    /// Global min-max rescaling to `[0, 1]`; records the original range.
    pub fn standardize(&self) -> Result<Self, DataError> {
        let (lo, hi) = self
            .data
            .data()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
                (a.min(x), b.max(x))
            });
        if !(hi > lo) {
            return Err(DataError::DegenerateScale(lo));
        }
        let mut out = self.clone();
        let span = hi - lo;
        for x in out.data.data_mut() {
            *x = ((*x - lo) / span).clamp(0.0, 1.0);
        }
        out.scale = Some((lo, hi));
        Ok(out)
    }

    /// Rescales with a previously recorded `(min, max)`, without clamping,
    /// so unseen data maps consistently with the data the range came from.
    pub fn apply_scale(&self, scale: (f64, f64)) -> Result<Self, DataError> {
        let (lo, hi) = scale;
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(DataError::DegenerateScale(lo));
        }
        let mut out = self.clone();
        for x in out.data.data_mut() {
            *x = (*x - lo) / (hi - lo);
        }
        out.scale = Some(scale);
        Ok(out)
    }

    /// Inverse of [`Field::standardize`].
    pub fn destandardize(&self) -> Result<Self, DataError> {
        let (lo, hi) = self.scale.ok_or(DataError::MissingScale)?;
        let mut out = self.clone();
        for x in out.data.data_mut() {
            *x = *x * (hi - lo) + lo;
        }
        out.scale = None;
        Ok(out)
    }

    /// Variance of all entries around their global mean.
    pub fn variance(&self) -> f64 {
        variance(self.data.data())
    }

    /// Frames `[start, end)` as a new field sharing the metadata.
    pub fn slice_frames(&self, start: usize, end: usize) -> Result<Self, DataError> {
        if start >= end || end > self.frames() {
            return Err(DataError::Parameter(format!(
                "frame range {start}..{end} outside 0..{}",
                self.frames()
            )));
        }
        let n = self.points();
        let data = Tensor::matrix(
            end - start,
            n,
            self.data.data()[start * n..end * n].to_vec(),
        );
        Ok(Self {
            data,
            grid_shape: self.grid_shape.clone(),
            scale: self.scale,
            dt_physical: self.dt_physical,
        })
    }
}

pub(crate) fn variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardize_affine_map() {
        let f = Field::new(Tensor::matrix(3, 1, vec![2.0, 3.0, 4.0]), None, 1.0).unwrap();
        let s = f.standardize().unwrap();
        assert_eq!(s.data.data(), &[0.0, 0.5, 1.0]);
        assert_eq!(s.scale, Some((2.0, 4.0)));
        let back = s.destandardize().unwrap();
        assert_eq!(back.data, f.data);
    }

    #[test]
    fn global_not_per_frame_scale() {
        let f = Field::new(Tensor::matrix(2, 2, vec![0.0, 1.0, 10.0, 20.0]), None, 1.0).unwrap();
        let s = f.standardize().unwrap();
        assert_eq!(s.data.data(), &[0.0, 0.05, 0.5, 1.0]);
    }

    #[test]
    fn standardize_round_trip_is_tight() {
        let vals: Vec<f64> = (0..200)
            .map(|i| ((i as f64) * 0.731).sin() * 37.0 - 5.0)
            .collect();
        let f = Field::new(Tensor::matrix(20, 10, vals), None, 1.0).unwrap();
        let back = f.standardize().unwrap().destandardize().unwrap();
        for (a, b) in back.data.data().iter().zip(f.data.data()) {
            assert!((a - b).abs() <= 4.0 * f64::EPSILON * 42.0, "{a} vs {b}");
        }
    }

    #[test]
    fn degenerate_and_missing_scale() {
        let f = Field::new(Tensor::full(&[3, 2], 1.5), None, 1.0).unwrap();
        assert!(matches!(
            f.standardize(),
            Err(DataError::DegenerateScale(_))
        ));
        assert!(matches!(f.destandardize(), Err(DataError::MissingScale)));
    }

    #[test]
    fn grid_must_cover_points() {
        assert!(Field::new(Tensor::zeros(&[2, 6]), Some(vec![2, 3]), 1.0).is_ok());
        assert!(matches!(
            Field::new(Tensor::zeros(&[2, 6]), Some(vec![2, 4]), 1.0),
            Err(DataError::GridMismatch { .. })
        ));
    }
}
