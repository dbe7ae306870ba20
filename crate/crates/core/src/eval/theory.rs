//! Monte-Carlo checks of how least-squares coefficient error scales with
//! sample count, library size and noise level on linear systems whose true
//! coefficients are known.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::EvalError;
use crate::diff::Tensor;
use crate::rng::{rng_for, split_seed, streams};
use crate::sindy::{fit_least_squares, LibrarySpec, SindyError, SindyModel};

/// Ordinary least-squares line with a two-sided 95% t interval on the slope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub ci: (f64, f64),
    pub points: usize,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit, EvalError> {
    let n = x.len();
    if n != y.len() || n < 3 {
        return Err(EvalError::Invalid(format!(
            "line fit needs ≥3 paired points, got {n}/{}",
            y.len()
        )));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(EvalError::Invalid(
            "line fit needs at least two distinct x values".into(),
        ));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let df = (n - 2) as f64;
    let stderr = (rss / df / sxx).sqrt();
    let t = t_quantile(df);
    Ok(LinearFit {
        slope,
        intercept,
        slope_stderr: stderr,
        ci: (slope - t * stderr, slope + t * stderr),
        points: n,
    })
}

fn t_quantile(df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0).max(1.0)
}

/// True coefficients of `ż = A z` in `spec`'s term order.
fn linear_xi(a: &Tensor, spec: &LibrarySpec) -> Tensor {
    let d = a.rows();
    let mut xi = Tensor::zeros(&[spec.len(), d]);
    let rows = spec.linear_rows();
    for j in 0..d {
        for (i, &r) in rows.iter().enumerate() {
            xi.set(r, j, a.at(j, i));
        }
    }
    xi
}

struct Trial {
    coef_error: f64,
    rollout_error: f64,
    eig_ratio: f64,
}

/// One noisy fit: `n` states uniform in `[−1, 1]^d`, derivatives `A z + s ε`.
fn run_trial(
    a: &Tensor,
    spec: &LibrarySpec,
    n: usize,
    s: f64,
    rollout: (f64, usize),
    seed: u64,
) -> Result<Trial, EvalError> {
    let d = a.rows();
    let mut rng = rng_for(seed, 0);
    let states: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let states = Tensor::matrix(n, d, states);
    let mut derivs = states.matmul(&a.transpose())?;
    for x in derivs.data_mut() {
        let e: f64 = StandardNormal.sample(&mut rng);
        *x += s * e;
    }
    let theta = spec.evaluate_matrix(&states)?;
    let th = DMatrix::from_row_slice(n, spec.len(), theta.data());
    let gram = th.transpose() * &th;
    let eig_ratio = gram.symmetric_eigenvalues().min() / n as f64;

    let fitted = fit_least_squares(&states, &derivs, spec, 0.0)?;
    let truth = linear_xi(a, spec);
    let coef_error = fitted
        .xi
        .data()
        .iter()
        .zip(truth.data())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();

    let (horizon, frames) = rollout;
    let dt = horizon / frames as f64;
    let true_model = SindyModel::from_coefficients(spec.clone(), truth, dt, 10)?;
    let fitted = fitted.with_integration(dt, 10)?;
    let z0: Vec<f64> = (0..d).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
    let zt = true_model.rollout(&z0, frames)?;
    let zf = fitted.rollout(&z0, frames)?;
    let rollout_error = zt[frames]
        .iter()
        .zip(&zf[frames])
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(Trial {
        coef_error,
        rollout_error,
        eig_ratio,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingConfig {
    /// Generator `A` of `ż = A z`, row-major `d×d`.
    pub system: Vec<Vec<f64>>,
    pub ns: Vec<usize>,
    /// Polynomial degrees for the library-size sweep (at `p_sweep_n`).
    pub degrees: Vec<u32>,
    pub p_sweep_n: usize,
    /// Degree of the library used for the `n` and noise sweeps.
    pub degree: u32,
    pub noise: f64,
    pub trials: usize,
    /// Rollout horizon for the per-trial rollout error and its frame count.
    pub horizon: f64,
    pub frames: usize,
    /// Trials whose `λ_min(ΘᵀΘ)/n` falls below this are flagged.
    pub min_eig_ratio: f64,
    pub seed: u64,
    /// Scalar rate for the error-propagation check.
    pub growth_rate: f64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            system: vec![vec![-0.1, 2.0], vec![-2.0, -0.1]],
            ns: vec![100, 1_000, 10_000, 100_000],
            degrees: vec![1, 2, 3, 4],
            p_sweep_n: 2_000,
            degree: 3,
            noise: 0.1,
            trials: 20,
            horizon: 1.0,
            frames: 100,
            min_eig_ratio: 1e-4,
            seed: 0,
            growth_rate: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingCell {
    pub n: usize,
    pub p: usize,
    pub noise: f64,
    /// `‖Ξ̂ − Ξ*‖` of each usable trial.
    pub errors: Vec<f64>,
    pub rollout_errors: Vec<f64>,
    pub mean_error: f64,
    pub mean_rollout_error: f64,
    /// Smallest `λ_min(ΘᵀΘ)/n` seen over the trials.
    pub min_eig_ratio: f64,
    /// Trials excluded for conditioning.
    pub flagged: usize,
}

/// Error propagation of a misfit rate on `ż = L z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub rate: f64,
    pub fitted_rate: f64,
    pub horizon: f64,
    pub error_t: f64,
    pub error_2t: f64,
    pub measured_ratio: f64,
    /// `e^{L̂T} + e^{LT}`, the exact ratio for a perturbed exponential.
    pub predicted_ratio: f64,
    /// `e^{LT}`, the growth factor of the bound.
    pub exp_lt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub config: ScalingConfig,
    pub n_cells: Vec<ScalingCell>,
    pub p_cells: Vec<ScalingCell>,
    /// Same `n` as the middle of the sweep, noise `s` and `2s`.
    pub noise_cells: (ScalingCell, ScalingCell),
    pub n_slope: LinearFit,
    pub p_slope: LinearFit,
    /// `mean(err at 2s) / mean(err at s)` and its 95% interval.
    pub noise_ratio: f64,
    pub noise_ratio_ci: (f64, f64),
    pub min_eig_ratio: f64,
    pub growth: GrowthReport,
    pub slope_in_band: bool,
    pub linear_in_noise: bool,
    pub eigen_assumption_holds: bool,
    pub growth_matches: bool,
}

impl ScalingReport {
    pub fn passed(&self) -> bool {
        self.slope_in_band
            && self.linear_in_noise
            && self.eigen_assumption_holds
            && self.growth_matches
    }
}

fn system_tensor(rows: &[Vec<f64>]) -> Result<Tensor, EvalError> {
    let d = rows.len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(EvalError::Invalid(
            "system matrix must be square and non-empty".into(),
        ));
    }
    Ok(Tensor::matrix(d, d, rows.concat()))
}

fn run_cell(
    cfg: &ScalingConfig,
    a: &Tensor,
    degree: u32,
    n: usize,
    noise: f64,
    label: u64,
) -> Result<ScalingCell, EvalError> {
    let spec = LibrarySpec::polynomial(a.rows(), degree, true);
    let base = split_seed(cfg.seed, streams::TRIALS.wrapping_add(label << 8));
    let results: Vec<Result<Trial, EvalError>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            run_trial(
                a,
                &spec,
                n,
                noise,
                (cfg.horizon, cfg.frames),
                split_seed(base, t as u64),
            )
        })
        .collect();
    let mut errors = Vec::new();
    let mut rollout_errors = Vec::new();
    let mut min_eig_ratio = f64::INFINITY;
    let mut flagged = 0;
    for r in results {
        match r {
            Ok(t) if t.eig_ratio >= cfg.min_eig_ratio => {
                min_eig_ratio = min_eig_ratio.min(t.eig_ratio);
                errors.push(t.coef_error);
                rollout_errors.push(t.rollout_error);
            }
            Ok(t) => {
                min_eig_ratio = min_eig_ratio.min(t.eig_ratio);
                flagged += 1;
            }
            Err(EvalError::Sindy(SindyError::Conditioning { .. })) => flagged += 1,
            Err(e) => return Err(e),
        }
    }
    let m = |v: &[f64]| if v.is_empty() { f64::NAN } else { mean(v) };
    Ok(ScalingCell {
        n,
        p: spec.len(),
        noise,
        mean_error: m(&errors),
        mean_rollout_error: m(&rollout_errors),
        errors,
        rollout_errors,
        min_eig_ratio,
        flagged,
    })
}

fn log_points(cells: &[ScalingCell], x: impl Fn(&ScalingCell) -> f64) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for c in cells {
        for &e in &c.errors {
            if e > 0.0 {
                xs.push(x(c).ln());
                ys.push(e.ln());
            }
        }
    }
    (xs, ys)
}

/// Closed-form check of how a rate misfit propagates on `ż = L z`: the
/// fitted rate comes from `n` noisy derivative samples, both models are
/// rolled out with the same Euler scheme to `T` and `2T`.
pub fn rollout_growth(
    rate: f64,
    horizon: f64,
    n: usize,
    noise: f64,
    seed: u64,
) -> Result<GrowthReport, EvalError> {
    let spec = LibrarySpec::polynomial(1, 1, false);
    let a = Tensor::matrix(1, 1, vec![rate]);
    let mut rng = rng_for(seed, streams::TRIALS);
    let states: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let derivs: Vec<f64> = states
        .iter()
        .map(|z| {
            let e: f64 = StandardNormal.sample(&mut rng);
            rate * z + noise * e
        })
        .collect();
    let fitted = fit_least_squares(
        &Tensor::matrix(n, 1, states),
        &Tensor::matrix(n, 1, derivs),
        &spec,
        0.0,
    )?;
    let fitted_rate = fitted.xi.at(0, 0);
    let frames = 1000;
    let dt = horizon / frames as f64;
    let truth = SindyModel::from_coefficients(spec, linear_xi(&a, &fitted.spec), dt, 20)?;
    let fitted = fitted.with_integration(dt, 20)?;
    let zt = truth.rollout(&[1.0], 2 * frames)?;
    let zf = fitted.rollout(&[1.0], 2 * frames)?;
    let error_t = (zf[frames][0] - zt[frames][0]).abs();
    let error_2t = (zf[2 * frames][0] - zt[2 * frames][0]).abs();
    Ok(GrowthReport {
        rate,
        fitted_rate,
        horizon,
        error_t,
        error_2t,
        measured_ratio: error_2t / error_t,
        predicted_ratio: (fitted_rate * horizon).exp() + (rate * horizon).exp(),
        exp_lt: (rate * horizon).exp(),
    })
}

/// Sweeps sample count, library size and noise level, fitting unthresholded
/// least squares to noisy derivative targets in every trial.
pub fn theory_scaling_experiment(cfg: &ScalingConfig) -> Result<ScalingReport, EvalError> {
    let a = system_tensor(&cfg.system)?;
    if cfg.trials < 2 || cfg.ns.len() < 2 || cfg.degrees.len() < 2 {
        return Err(EvalError::Invalid(
            "need ≥2 trials, ≥2 sample sizes and ≥2 library degrees".into(),
        ));
    }
    let n_cells: Vec<ScalingCell> = cfg
        .ns
        .iter()
        .enumerate()
        .map(|(i, &n)| run_cell(cfg, &a, cfg.degree, n, cfg.noise, i as u64))
        .collect::<Result<_, _>>()?;
    let p_cells: Vec<ScalingCell> = cfg
        .degrees
        .iter()
        .enumerate()
        .map(|(i, &deg)| run_cell(cfg, &a, deg, cfg.p_sweep_n, cfg.noise, 100 + i as u64))
        .collect::<Result<_, _>>()?;
    let mid_n = cfg.ns[cfg.ns.len() / 2];
    let low = run_cell(cfg, &a, cfg.degree, mid_n, cfg.noise, 200)?;
    let high = run_cell(cfg, &a, cfg.degree, mid_n, 2.0 * cfg.noise, 201)?;

    let (x, y) = log_points(&n_cells, |c| c.n as f64);
    let n_slope = linear_fit(&x, &y)?;
    let (x, y) = log_points(&p_cells, |c| c.p as f64);
    let p_slope = linear_fit(&x, &y)?;

    // delta-method interval for a ratio of independent means
    let (m1, m2) = (mean(&low.errors), mean(&high.errors));
    let noise_ratio = m2 / m1;
    let rel_var = sample_var(&high.errors) / (high.errors.len() as f64 * m2 * m2)
        + sample_var(&low.errors) / (low.errors.len() as f64 * m1 * m1);
    let df = (low.errors.len() + high.errors.len()) as f64 - 2.0;
    let half = t_quantile(df.max(1.0)) * noise_ratio * rel_var.sqrt();
    let noise_ratio_ci = (noise_ratio - half, noise_ratio + half);

    let min_eig_ratio = n_cells
        .iter()
        .map(|c| c.min_eig_ratio)
        .fold(f64::INFINITY, f64::min);
    let growth = rollout_growth(cfg.growth_rate, 2.0, 1_000, cfg.noise, cfg.seed)?;
    let growth_matches = ((growth.measured_ratio / growth.predicted_ratio) - 1.0).abs() < 0.01;
    Ok(ScalingReport {
        slope_in_band: (-0.6..=-0.4).contains(&n_slope.slope),
        linear_in_noise: noise_ratio_ci.0 <= 2.0 && 2.0 <= noise_ratio_ci.1,
        eigen_assumption_holds: n_cells.iter().all(|c| c.flagged == 0)
            && min_eig_ratio > cfg.min_eig_ratio,
        growth_matches,
        config: cfg.clone(),
        n_cells,
        p_cells,
        noise_cells: (low, high),
        n_slope,
        p_slope,
        noise_ratio,
        noise_ratio_ci,
        min_eig_ratio,
        growth,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HorizonConfig {
    pub system: Vec<Vec<f64>>,
    pub ns: Vec<usize>,
    /// Rollout lengths in frames.
    pub horizons: Vec<usize>,
    pub dt: f64,
    pub substeps: usize,
    pub noise: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for HorizonConfig {
    fn default() -> Self {
        Self {
            system: vec![vec![0.1, 2.0], vec![-2.0, 0.1]],
            ns: vec![100, 1_000, 10_000],
            horizons: vec![10, 20, 40, 80],
            dt: 0.05,
            substeps: 10,
            noise: 0.1,
            trials: 20,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonReport {
    pub config: HorizonConfig,
    /// `mean_errors[i][j]`: mean rollout error for `ns[i]` at `horizons[j]`.
    pub mean_errors: Vec<Vec<f64>>,
    /// Slope of log error vs log n at each horizon.
    pub n_slopes: Vec<LinearFit>,
    pub error_grows_with_horizon: bool,
    pub error_shrinks_with_n: bool,
}

impl HorizonReport {
    pub fn passed(&self) -> bool {
        self.error_grows_with_horizon && self.error_shrinks_with_n
    }
}

/// Qualitative multi-step check: the Euler-map rollout error of a fitted
/// model should fall like `n^{-1/2}` and grow with the horizon.
pub fn horizon_growth_check(cfg: &HorizonConfig) -> Result<HorizonReport, EvalError> {
    let a = system_tensor(&cfg.system)?;
    let d = a.rows();
    let spec = LibrarySpec::polynomial(d, 1, true);
    let truth =
        SindyModel::from_coefficients(spec.clone(), linear_xi(&a, &spec), cfg.dt, cfg.substeps)?;
    let hmax = cfg.horizons.iter().copied().max().unwrap_or(0);
    let z0: Vec<f64> = (0..d).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
    let reference = truth.rollout(&z0, hmax)?;

    let mut per_trial = Vec::with_capacity(cfg.ns.len());
    for (i, &n) in cfg.ns.iter().enumerate() {
        let base = split_seed(
            cfg.seed,
            streams::TRIALS.wrapping_add((300 + i as u64) << 8),
        );
        let runs: Vec<Result<Vec<f64>, EvalError>> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng_for(split_seed(base, t as u64), 0);
                let states = Tensor::matrix(
                    n,
                    d,
                    (0..n * d).map(|_| rng.random_range(-1.0..=1.0)).collect(),
                );
                let mut derivs = states.matmul(&a.transpose())?;
                for x in derivs.data_mut() {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    *x += cfg.noise * e;
                }
                let fitted = fit_least_squares(&states, &derivs, &spec, 0.0)?
                    .with_integration(cfg.dt, cfg.substeps)?;
                let path = fitted.rollout(&z0, hmax)?;
                Ok(cfg
                    .horizons
                    .iter()
                    .map(|&h| {
                        path[h]
                            .iter()
                            .zip(&reference[h])
                            .map(|(x, y)| (x - y).powi(2))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .collect())
            })
            .collect();
        per_trial.push(runs.into_iter().collect::<Result<Vec<_>, _>>()?);
    }
    let mean_errors: Vec<Vec<f64>> = per_trial
        .iter()
        .map(|trials| {
            (0..cfg.horizons.len())
                .map(|j| mean(&trials.iter().map(|t| t[j]).collect::<Vec<_>>()))
                .collect()
        })
        .collect();
    let n_slopes = (0..cfg.horizons.len())
        .map(|j| {
            let mut x = Vec::new();
            let mut y = Vec::new();
            for (i, trials) in per_trial.iter().enumerate() {
                for t in trials {
                    x.push((cfg.ns[i] as f64).ln());
                    y.push(t[j].ln());
                }
            }
            linear_fit(&x, &y)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let error_grows_with_horizon = mean_errors
        .iter()
        .all(|row| row.windows(2).all(|w| w[1] > w[0]));
    let error_shrinks_with_n = n_slopes.iter().all(|f| f.ci.1 < 0.0);
    Ok(HorizonReport {
        config: cfg.clone(),
        mean_errors,
        n_slopes,
        error_grows_with_horizon,
        error_shrinks_with_n,
    })
}
