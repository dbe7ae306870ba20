//! Extrapolation of `ẍ = −sin x`: sparse regression with the right
//! function library against a small recurrent next-step predictor.

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::data::gen_sine_ode;
use crate::diff::{AdamW, AdamWConfig, Tape, Tensor};
use crate::nets::{decode, encode, init_params, NetConfig};
use crate::rng::{rng_for, streams};
use crate::sindy::{
    central_differences, fit_stlsq, LibrarySpec, StlsqOptions, Term, TrigKind, TrigTerm,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SineConfig {
    pub x0: f64,
    pub v0: f64,
    /// Samples in the full trajectory; the first half is used for training.
    pub frames: usize,
    pub dt: f64,
    pub threshold: f64,
    /// Euler substeps per sample when rolling out the fitted model.
    pub substeps: usize,
    /// The recurrent baseline sees every `gru_stride`-th sample.
    pub gru_stride: usize,
    pub gru_lag: usize,
    pub gru_hidden: usize,
    pub gru_epochs: usize,
    pub gru_lr: f64,
    pub seed: u64,
}

impl Default for SineConfig {
    fn default() -> Self {
        Self {
            x0: 2.0,
            v0: 0.0,
            frames: 2001,
            dt: 0.01,
            threshold: 0.05,
            substeps: 100,
            gru_stride: 10,
            gru_lag: 8,
            gru_hidden: 16,
            gru_epochs: 400,
            gru_lr: 1e-2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SineReport {
    pub config: SineConfig,
    pub equations: String,
    /// Coefficient of `sin(x)` in the `v̇` equation.
    pub sin_coefficient: f64,
    pub sindy_mse: f64,
    pub gru_mse: f64,
    pub gru_train_loss: f64,
    /// Length of the extrapolated stretch over the training stretch.
    pub horizon_ratio: f64,
}

impl SineReport {
    pub fn sindy_better(&self) -> bool {
        self.sindy_mse < self.gru_mse
    }

    pub fn coefficient_recovered(&self) -> bool {
        (self.sin_coefficient + 1.0).abs() < 1e-3
    }

    pub fn passed(&self) -> bool {
        self.sindy_better() && self.coefficient_recovered()
    }
}

fn mse(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for (x, y) in a.iter().zip(b) {
        for (p, q) in x.iter().zip(y) {
            s += (p - q).powi(2);
            n += 1;
        }
    }
    s / n as f64
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

/// Trains both models on the first half of one trajectory and scores their
/// free-running predictions on the second half, sampled at the baseline's
/// stride.
pub fn sine_comparison(cfg: &SineConfig) -> Result<SineReport, EvalError> {
    if cfg.gru_stride == 0 || cfg.gru_lag == 0 || cfg.substeps == 0 {
        return Err(EvalError::Invalid(
            "stride, lag and substeps must be positive".into(),
        ));
    }
    let traj = gen_sine_ode(cfg.x0, cfg.v0, cfg.frames, cfg.dt)?;
    let train_len = cfg.frames / 2 + 1;
    let all = rows(&traj);
    let train = Tensor::matrix(train_len, 2, traj.data()[..train_len * 2].to_vec());

    // the comparison grid: every stride-th sample after the training block
    let last = train_len - 1;
    let eval_idx: Vec<usize> = (1..)
        .map(|i| last + i * cfg.gru_stride)
        .take_while(|&i| i < cfg.frames)
        .collect();
    if eval_idx.is_empty() {
        return Err(EvalError::Invalid(
            "trajectory too short to extrapolate".into(),
        ));
    }
    let truth: Vec<Vec<f64>> = eval_idx.iter().map(|&i| all[i].clone()).collect();

    let spec = LibrarySpec {
        dim: 2,
        include_constant: true,
        poly_degree: 1,
        trig: vec![
            TrigTerm {
                kind: TrigKind::Sin,
                freq: 1.0,
            },
            TrigTerm {
                kind: TrigKind::Cos,
                freq: 1.0,
            },
        ],
    };
    let derivs = central_differences(&train, cfg.dt)?;
    let model = fit_stlsq(
        &train,
        &derivs,
        &spec,
        StlsqOptions {
            threshold: cfg.threshold,
            max_iter: 10,
            ridge: 0.0,
            dt: cfg.dt * cfg.gru_stride as f64,
            k: cfg.substeps * cfg.gru_stride,
        },
    )?;
    let sin_row = spec
        .terms()
        .iter()
        .position(|t| {
            matches!(
                t,
                Term::Trig {
                    kind: TrigKind::Sin,
                    coord: 0,
                    ..
                }
            )
        })
        .expect("library has sin(z1)");
    let sin_coefficient = model.xi.at(sin_row, 1);
    let path = model.rollout(&all[last], eval_idx.len())?;
    let sindy_mse = mse(&path[1..], &truth);

    let (gru_path, gru_train_loss) = gru_baseline(cfg, &all[..train_len], eval_idx.len())?;
    let gru_mse = mse(&gru_path, &truth);

    Ok(SineReport {
        config: cfg.clone(),
        equations: model.equations(6),
        sin_coefficient,
        sindy_mse,
        gru_mse,
        gru_train_loss,
        horizon_ratio: (cfg.frames - 1) as f64 / last as f64,
    })
}

/// Residual next-state GRU on the strided training series, trained full
/// batch, then rolled out on its own predictions.
fn gru_baseline(
    cfg: &SineConfig,
    train: &[Vec<f64>],
    steps: usize,
) -> Result<(Vec<Vec<f64>>, f64), EvalError> {
    let series: Vec<&Vec<f64>> = train
        .iter()
        .rev()
        .step_by(cfg.gru_stride)
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    let lag = cfg.gru_lag;
    if series.len() <= lag + 1 {
        return Err(EvalError::Invalid(
            "training series shorter than the baseline lag".into(),
        ));
    }
    let net = NetConfig {
        sensors: 2,
        latent_dim: cfg.gru_hidden,
        gru_layers: 1,
        gru_hidden: None,
        decoder_widths: vec![],
        output: 2,
        dropout: 0.0,
    };
    let mut rng = rng_for(cfg.seed, streams::INIT);
    let (mut gru, mut head) = init_params(&net, &mut rng)?;

    let windows = series.len() - lag;
    // time-major stack of all windows
    let mut inputs = Vec::with_capacity(lag * windows * 2);
    for t in 0..lag {
        for b in 0..windows {
            inputs.extend_from_slice(series[b + t]);
        }
    }
    let inputs = Tensor::matrix(lag * windows, 2, inputs);
    let targets = Tensor::matrix(
        windows,
        2,
        (0..windows)
            .flat_map(|b| {
                let (prev, next) = (series[b + lag - 1], series[b + lag]);
                [next[0] - prev[0], next[1] - prev[1]]
            })
            .collect(),
    );

    let opt_cfg = AdamWConfig {
        lr: cfg.gru_lr,
        weight_decay: 0.0,
        ..Default::default()
    };
    let mut params: Vec<&Tensor> = gru.tensors();
    params.extend(head.tensors());
    let mut opt = AdamW::new(opt_cfg, &params);
    let mut last_loss = f64::NAN;
    for _ in 0..cfg.gru_epochs {
        let mut tape = Tape::new();
        let gv = gru.bind(&mut tape);
        let hv = head.bind(&mut tape);
        let x = tape.constant(inputs.clone());
        let h = encode(&mut tape, x, lag, &gv)?;
        let y = decode(&mut tape, h, &hv, None)?;
        let t = tape.constant(targets.clone());
        let loss = tape.mse(y, t)?;
        last_loss = tape.value(loss).item().unwrap_or(f64::NAN);
        let leaves: Vec<_> = gv.all().into_iter().chain(hv.all()).collect();
        let mut grads = tape.backward(loss)?;
        let mut params: Vec<&mut Tensor> = gru.tensors_mut();
        params.extend(head.tensors_mut());
        for (p, v) in params.iter_mut().zip(&leaves) {
            p.grad = Some(grads.take(*v).unwrap_or_else(|| vec![0.0; p.numel()]));
        }
        opt.step(&mut params)?;
    }

    let mut history: Vec<Vec<f64>> = series[series.len() - lag..]
        .iter()
        .map(|r| (*r).clone())
        .collect();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let window = Tensor::matrix(lag, 2, history[history.len() - lag..].concat());
        let mut tape = Tape::new();
        let gv = gru.bind(&mut tape);
        let hv = head.bind(&mut tape);
        let x = tape.constant(window);
        let h = encode(&mut tape, x, lag, &gv)?;
        let y = decode(&mut tape, h, &hv, None)?;
        let delta = tape.value(y).data().to_vec();
        let prev = history.last().expect("non-empty history");
        let next = vec![prev[0] + delta[0], prev[1] + delta[1]];
        out.push(next.clone());
        history.push(next);
    }
    Ok((out, last_loss))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering_and_recovery() {
        let cfg = SineConfig {
            gru_epochs: 150,
            ..Default::default()
        };
        let r = sine_comparison(&cfg).unwrap();
        assert!(r.coefficient_recovered(), "{}", r.sin_coefficient);
        assert!(r.sindy_better(), "{} vs {}", r.sindy_mse, r.gru_mse);
        assert!((r.horizon_ratio - 2.0).abs() < 1e-12);
        assert_eq!(r, sine_comparison(&cfg).unwrap());
    }
}
