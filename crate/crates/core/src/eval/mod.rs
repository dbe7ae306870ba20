//! Evaluation of trained models and the scaled-down validation experiments.
//!
//! Forecasting rolls the latent state forward without re-feeding sensors,
//! the landscape scan probes the training loss around the optimum, and the
//! theory harness checks error scaling of least-squares coefficient fits on
//! systems whose true coefficients are known.

mod forecast;
mod frequency;
mod landscape;
mod sine;
mod theory;

pub use forecast::{
    forecast, horizon_mse, sensor_traces, ForecastReport, HorizonRow, HorizonTable, SensorTrace,
};
pub use frequency::{dominant_frequency, latent_frequencies, model_frequencies};
pub use landscape::{
    convexity_check, landscape_directions, landscape_scan, segment_convexity, shred_loss_fn,
    ConvexityReport, LandscapeGrid, SegmentConvexity, Violation, DEFAULT_CONVEXITY_TOLERANCE,
};
pub use sine::{sine_comparison, SineConfig, SineReport};
pub use theory::{
    horizon_growth_check, linear_fit, rollout_growth, theory_scaling_experiment, GrowthReport,
    HorizonConfig, HorizonReport, LinearFit, ScalingCell, ScalingConfig, ScalingReport,
};

use thiserror::Error;

use crate::data::DataError;
use crate::diff::DiffError;
use crate::nets::NetError;
use crate::shred::ShredError;
use crate::sindy::SindyError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("latent rollout diverged at step {step}")]
    Divergence { step: usize },
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("held-out sensor {0} is also a training sensor")]
    SensorOverlap(usize),
    #[error("index {index} is out of range for {points} points")]
    SensorRange { index: usize, points: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Shred(#[from] ShredError),
    #[error(transparent)]
    Sindy(#[from] SindyError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

impl EvalError {
    pub fn is_numerical(&self) -> bool {
        match self {
            EvalError::Divergence { .. } => true,
            EvalError::Shred(e) => e.is_numerical(),
            EvalError::Sindy(SindyError::Diverged { .. }) => true,
            _ => false,
        }
    }
}
