use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DataError, Field};
use crate::diff::Tensor;
use crate::rng::{rng_for, streams};

/// One separable oscillating pattern `a·φ_p(x)·cos(ωt + phase)·e^{growth·t}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub pattern: usize,
    pub amplitude: f64,
    pub omega: f64,
    #[serde(default)]
    pub phase: f64,
    #[serde(default)]
    pub growth: f64,
}

/// Ground truth written next to a generated modal field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalTruth {
    pub kind: String,
    pub grid: (usize, usize),
    pub frames: usize,
    pub dt: f64,
    pub sigma: f64,
    pub seed: u64,
    pub modes: Vec<ModeSpec>,
    /// Angular frequencies of the modes, in the order given.
    pub omegas: Vec<f64>,
}

/// Wave numbers `(i, j)` of pattern `id`: pairs ordered by `i + j`, then `i`,
/// restricted to `i < width`, `j < height`.
pub fn pattern_indices(id: usize, height: usize, width: usize) -> Option<(usize, usize)> {
    let mut k = 0;
    for s in 0..width + height {
        for i in 0..=s {
            let j = s - i;
            if i < width && j < height {
                if k == id {
                    return Some((i, j));
                }
                k += 1;
            }
        }
    }
    None
}

/// Discrete sine pattern on an `height×width` grid (row-major). Distinct
/// ids are exactly orthogonal on the grid.
pub fn modal_pattern(id: usize, height: usize, width: usize) -> Option<Vec<f64>> {
    let (i, j) = pattern_indices(id, height, width)?;
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let px = (PI * (i + 1) as f64 * (x + 1) as f64 / (width + 1) as f64).sin();
            let py = (PI * (j + 1) as f64 * (y + 1) as f64 / (height + 1) as f64).sin();
            out.push(px * py);
        }
    }
    Some(out)
}

/// Superposition of oscillating spatial patterns plus i.i.d. Gaussian noise
/// of standard deviation `sigma`. Frame `n` is at time `n·dt`.
pub fn gen_modal_field(
    grid: (usize, usize),
    modes: &[ModeSpec],
    frames: usize,
    dt: f64,
    sigma: f64,
    seed: u64,
) -> Result<(Field, ModalTruth), DataError> {
    let (h, w) = grid;
    if frames < 2 || !(dt > 0.0) || h == 0 || w == 0 || !(sigma >= 0.0) {
        return Err(DataError::Parameter(format!(
            "modal field needs frames ≥ 2, dt > 0, non-empty grid, σ ≥ 0 (got {frames}, {dt}, {h}×{w}, {sigma})"
        )));
    }
    let patterns: Vec<Vec<f64>> = modes
        .iter()
        .map(|m| {
            modal_pattern(m.pattern, h, w).ok_or_else(|| {
                DataError::Parameter(format!("pattern {} does not fit a {h}×{w} grid", m.pattern))
            })
        })
        .collect::<Result<_, _>>()?;
    let n = h * w;
    let mut rng = rng_for(seed, streams::NOISE);
    let mut data = Vec::with_capacity(frames * n);
    for f in 0..frames {
        let t = f as f64 * dt;
        let coef: Vec<f64> = modes
            .iter()
            .map(|m| m.amplitude * (m.omega * t + m.phase).cos() * (m.growth * t).exp())
            .collect();
        for p in 0..n {
            let mut v: f64 = coef.iter().zip(&patterns).map(|(c, phi)| c * phi[p]).sum();
            if sigma > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                v += sigma * z;
            }
            data.push(v);
        }
    }
    let field = Field::new(Tensor::matrix(frames, n, data), Some(vec![h, w]), dt)?;
    let truth = ModalTruth {
        kind: "modal".into(),
        grid,
        frames,
        dt,
        sigma,
        seed,
        modes: modes.to_vec(),
        omegas: modes.iter().map(|m| m.omega).collect(),
    };
    Ok((field, truth))
}

/// Coefficients of `z̈ = v2·ż² + v3·ż³ − gravity·sin z + sin_v·sin ż`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendulumParams {
    pub v2: f64,
    pub v3: f64,
    pub gravity: f64,
    pub sin_v: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            v2: 0.17,
            v3: -0.06,
            gravity: 10.87,
            sin_v: 0.48,
        }
    }
}

impl PendulumParams {
    pub fn undamped(gravity: f64) -> Self {
        Self {
            v2: 0.0,
            v3: 0.0,
            gravity,
            sin_v: 0.0,
        }
    }

    pub fn accel(&self, z: f64, v: f64) -> f64 {
        self.v2 * v * v + self.v3 * v * v * v - self.gravity * z.sin() + self.sin_v * v.sin()
    }

    /// `ż²/2 − gravity·cos z`, conserved when all damping terms vanish.
    pub fn energy(&self, z: f64, v: f64) -> f64 {
        0.5 * v * v - self.gravity * z.cos()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendulumTruth {
    pub kind: String,
    pub params: PendulumParams,
    pub dt: f64,
    pub grid: (usize, usize),
    pub angle: Vec<f64>,
    pub velocity: Vec<f64>,
}

fn rk4(state: [f64; 2], h: f64, f: impl Fn([f64; 2]) -> [f64; 2]) -> [f64; 2] {
    let add = |s: [f64; 2], k: [f64; 2], c: f64| [s[0] + c * k[0], s[1] + c * k[1]];
    let k1 = f(state);
    let k2 = f(add(state, k1, h / 2.0));
    let k3 = f(add(state, k2, h / 2.0));
    let k4 = f(add(state, k3, h));
    [
        state[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        state[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

fn integrate(
    x0: [f64; 2],
    frames: usize,
    dt: f64,
    substeps: usize,
    f: impl Fn([f64; 2]) -> [f64; 2],
) -> Result<Vec<[f64; 2]>, DataError> {
    let h = dt / substeps as f64;
    let mut out = Vec::with_capacity(frames);
    let mut s = x0;
    for frame in 0..frames {
        if !(s[0].is_finite() && s[1].is_finite()) {
            return Err(DataError::Divergent(frame));
        }
        out.push(s);
        for _ in 0..substeps {
            s = rk4(s, h, &f);
        }
    }
    Ok(out)
}

/// Anti-aliased rod from a pivot in the upper part of the grid. Intensity
/// is 1 within half a pixel of the segment and falls linearly to 0 one
/// pixel further out.
pub fn rasterize_rod(grid: (usize, usize), angle: f64) -> Vec<f64> {
    let (h, w) = grid;
    let px = (w as f64 - 1.0) / 2.0;
    let py = (h as f64 - 1.0) * 0.25;
    let len = 0.6 * (h.min(w) as f64 - 1.0);
    let (bx, by) = (px + len * angle.sin(), py + len * angle.cos());
    let (dx, dy) = (bx - px, by - py);
    let seg2 = dx * dx + dy * dy;
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (qx, qy) = (x as f64 - px, y as f64 - py);
            let s = if seg2 > 0.0 {
                ((qx * dx + qy * dy) / seg2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let dist = ((qx - s * dx).powi(2) + (qy - s * dy).powi(2)).sqrt();
            out.push((1.5 - dist).clamp(0.0, 1.0));
        }
    }
    out
}

/// Video of a damped nonlinear pendulum. Integrates with `substeps` RK4 steps
/// per frame, rasterizes the rod, and adds optional pixel noise (clamped
/// back into `[0, 1]`).
#[allow(clippy::too_many_arguments)]
pub fn gen_pendulum(
    angle0: f64,
    velocity0: f64,
    params: PendulumParams,
    frames: usize,
    dt: f64,
    grid: (usize, usize),
    substeps: usize,
    noise: f64,
    seed: u64,
) -> Result<(Field, PendulumTruth), DataError> {
    if frames == 0 || !(dt > 0.0) || dt > 1.0 / 30.0 || substeps == 0 || grid.0 < 2 || grid.1 < 2 {
        return Err(DataError::Parameter(format!(
            "pendulum needs frames > 0, 0 < dt ≤ 1/30, substeps > 0 and a grid of at least 2×2 (got {frames}, {dt}, {substeps}, {grid:?})"
        )));
    }
    let traj = integrate([angle0, velocity0], frames, dt, substeps, |s| {
        [s[1], params.accel(s[0], s[1])]
    })?;
    let mut rng = rng_for(seed, streams::NOISE);
    let n = grid.0 * grid.1;
    let mut data = Vec::with_capacity(frames * n);
    for s in &traj {
        for v in rasterize_rod(grid, s[0]) {
            let noisy = if noise > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                (v + noise * z).clamp(0.0, 1.0)
            } else {
                v
            };
            data.push(noisy);
        }
    }
    let field = Field::new(
        Tensor::matrix(frames, n, data),
        Some(vec![grid.0, grid.1]),
        dt,
    )?;
    let truth = PendulumTruth {
        kind: "pendulum".into(),
        params,
        dt,
        grid,
        angle: traj.iter().map(|s| s[0]).collect(),
        velocity: traj.iter().map(|s| s[1]).collect(),
    };
    Ok((field, truth))
}

/// `frames×2` trajectory `(x, v)` of `ẍ = −sin x`, sampled every `dt`
/// (ten RK4 steps per sample).
pub fn gen_sine_ode(x0: f64, v0: f64, frames: usize, dt: f64) -> Result<Tensor, DataError> {
    if frames == 0 || !(dt > 0.0) {
        return Err(DataError::Parameter(format!(
            "sine ODE needs frames > 0, dt > 0 (got {frames}, {dt})"
        )));
    }
    let traj = integrate([x0, v0], frames, dt, 10, |s| [s[1], -s[0].sin()])?;
    Ok(Tensor::matrix(
        frames,
        2,
        traj.into_iter().flatten().collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn mode(pattern: usize, omega: f64) -> ModeSpec {
        ModeSpec {
            pattern,
            amplitude: 1.0,
            omega,
            phase: 0.3,
            growth: 0.0,
        }
    }

    #[test]
    fn single_mode_is_periodic_in_frames() {
        let (f, truth) =
            gen_modal_field((6, 5), &[mode(2, 2.0 * PI)], 104, 1.0 / 52.0, 0.0, 0).unwrap();
        assert_eq!(truth.omegas, vec![2.0 * PI]);
        for t in 0..52 {
            for p in 0..30 {
                assert!((f.data.at(t, p) - f.data.at(t + 52, p)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn patterns_are_orthogonal() {
        let (h, w) = (7, 9);
        for a in 0..6 {
            for b in 0..6 {
                let (pa, pb) = (
                    modal_pattern(a, h, w).unwrap(),
                    modal_pattern(b, h, w).unwrap(),
                );
                let dot: f64 = pa.iter().zip(&pb).map(|(x, y)| x * y).sum();
                if a == b {
                    assert!(dot > 1.0);
                } else {
                    assert!(dot.abs() < 1e-12, "{a},{b}: {dot}");
                }
            }
        }
        assert!(modal_pattern(4, 2, 2).is_none());
    }

    #[test]
    fn noiseless_two_mode_field_has_rank_two() {
        let modes = [mode(0, 2.0 * PI), mode(3, 4.0 * PI)];
        let (f, _) = gen_modal_field((8, 8), &modes, 200, 1.0 / 52.0, 0.0, 0).unwrap();
        let m = DMatrix::from_row_slice(200, 64, f.data.data());
        let sv = m.singular_values();
        let energy: f64 = sv.iter().map(|s| s * s).sum();
        let mut sorted: Vec<f64> = sv.iter().copied().collect();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let tail: f64 = sorted[2..].iter().map(|s| s * s).sum();
        assert!(tail < 1e-10 * energy, "{tail} vs {energy}");
        assert!(sorted[1] > 1e-3 * sorted[0]);
        let s = f.standardize().unwrap();
        assert!(s.data.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn modal_noise_is_seeded() {
        let m = [mode(0, 1.0)];
        let a = gen_modal_field((4, 4), &m, 10, 0.1, 0.01, 5).unwrap().0;
        let b = gen_modal_field((4, 4), &m, 10, 0.1, 0.01, 5).unwrap().0;
        let c = gen_modal_field((4, 4), &m, 10, 0.1, 0.01, 6).unwrap().0;
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn free_rotation_is_linear_in_time() {
        let p = PendulumParams::undamped(0.0);
        let (_, truth) = gen_pendulum(0.2, 1.5, p, 100, 1.0 / 30.0, (12, 12), 4, 0.0, 0).unwrap();
        for (i, z) in truth.angle.iter().enumerate() {
            assert!((z - (0.2 + 1.5 * i as f64 / 30.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn undamped_energy_is_conserved() {
        let p = PendulumParams::undamped(10.87);
        let (_, truth) = gen_pendulum(1.0, 0.0, p, 1000, 1.0 / 30.0, (10, 10), 10, 0.0, 0).unwrap();
        let e0 = p.energy(truth.angle[0], truth.velocity[0]);
        let drift = truth
            .angle
            .iter()
            .zip(&truth.velocity)
            .map(|(&z, &v)| (p.energy(z, v) - e0).abs())
            .fold(0.0, f64::max);
        assert!(drift < 1e-6, "{drift}");
    }

    #[test]
    fn small_angle_period() {
        let g = 10.87;
        let p = PendulumParams::undamped(g);
        let dt = 1.0 / 30.0;
        let (_, truth) = gen_pendulum(0.01, 0.0, p, 600, dt, (10, 10), 10, 0.0, 0).unwrap();
        // downward zero crossings, linearly interpolated
        let z = &truth.angle;
        let crossings: Vec<f64> = (0..z.len() - 1)
            .filter(|&i| z[i] > 0.0 && z[i + 1] <= 0.0)
            .map(|i| (i as f64 + z[i] / (z[i] - z[i + 1])) * dt)
            .collect();
        let period = (crossings[crossings.len() - 1] - crossings[0]) / (crossings.len() - 1) as f64;
        let expected = 2.0 * PI / g.sqrt();
        assert!(
            (period / expected - 1.0).abs() < 0.01,
            "{period} vs {expected}"
        );
    }

    #[test]
    fn rod_pixels_are_normalized() {
        let img = rasterize_rod((27, 24), 0.7);
        assert!(img.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(img.iter().filter(|&&v| v == 1.0).count() > 5);
        let (f, _) = gen_pendulum(
            0.5,
            0.0,
            PendulumParams::default(),
            20,
            1.0 / 30.0,
            (27, 24),
            10,
            0.05,
            1,
        )
        .unwrap();
        assert!(f.data.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(gen_pendulum(
            0.5,
            0.0,
            PendulumParams::default(),
            20,
            0.1,
            (27, 24),
            10,
            0.0,
            1
        )
        .is_err());
    }

    #[test]
    fn sine_ode_properties() {
        let zero = gen_sine_ode(0.0, 0.0, 50, 0.1).unwrap();
        assert!(zero.data().iter().all(|&x| x == 0.0));

        let x0 = 0.05;
        let small = gen_sine_ode(x0, 0.0, 101, 0.1).unwrap();
        for i in 0..101 {
            let t = i as f64 * 0.1;
            assert!((small.at(i, 0) - x0 * t.cos()).abs() <= 0.01 * x0, "t={t}");
        }

        let traj = gen_sine_ode(1.2, 0.4, 1000, 0.1).unwrap();
        let e = |i: usize| 0.5 * traj.at(i, 1).powi(2) - traj.at(i, 0).cos();
        let drift = (0..1000).map(|i| (e(i) - e(0)).abs()).fold(0.0, f64::max);
        assert!(drift < 1e-8, "{drift}");
    }
}
