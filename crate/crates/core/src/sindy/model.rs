use serde::{Deserialize, Serialize};

use super::library::LibrarySpec;
use super::SindyError;
use crate::diff::{Tape, Tensor, Var};

/// The latent ODE `ż = Θ(z)Ξ`, integrated with `k` explicit Euler sub-steps
/// of size `h = dt/k` per sample interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SindyModel {
    pub spec: LibrarySpec,
    /// `p×d`; column `j` holds the coefficients of `ż_j`.
    pub xi: Tensor,
    /// Row-major `p×d` active-term mask.
    pub mask: Vec<bool>,
    pub dt: f64,
    pub k: usize,
}

impl SindyModel {
    pub fn zeros(spec: LibrarySpec, dt: f64, k: usize) -> Result<Self, SindyError> {
        if !(dt > 0.0) || k == 0 {
            return Err(SindyError::Integration { dt, k });
        }
        let p = spec.len();
        if p == 0 {
            return Err(SindyError::EmptyLibrary);
        }
        let d = spec.dim;
        Ok(Self {
            xi: Tensor::zeros(&[p, d]),
            mask: vec![true; p * d],
            spec,
            dt,
            k,
        })
    }

    /// Wraps a coefficient matrix; entries that are exactly zero stay active.
    pub fn from_coefficients(
        spec: LibrarySpec,
        xi: Tensor,
        dt: f64,
        k: usize,
    ) -> Result<Self, SindyError> {
        let mut m = Self::zeros(spec, dt, k)?;
        if xi.shape() != m.xi.shape() {
            return Err(SindyError::Dimension {
                expected: m.xi.numel(),
                got: xi.numel(),
            });
        }
        m.xi = xi;
        Ok(m)
    }

    pub fn with_integration(mut self, dt: f64, k: usize) -> Result<Self, SindyError> {
        if !(dt > 0.0) || k == 0 {
            return Err(SindyError::Integration { dt, k });
        }
        self.dt = dt;
        self.k = k;
        Ok(self)
    }

    pub fn h(&self) -> f64 {
        self.dt / self.k as f64
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn nnz(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn mask_tensor(&self) -> Tensor {
        Tensor::from_vec(
            self.xi.shape(),
            self.mask
                .iter()
                .map(|&m| if m { 1.0 } else { 0.0 })
                .collect(),
        )
    }

    /// Zeroes coefficients outside the mask.
    pub fn apply_mask(&mut self) {
        for (x, &m) in self.xi.data_mut().iter_mut().zip(&self.mask) {
            if !m {
                *x = 0.0;
            }
        }
    }

    /// Clears the mask wherever `|Ξ| < threshold`. Cleared entries never
    /// come back, so repeated pruning only removes terms.
    pub fn prune(&mut self, threshold: f64) {
        for (x, m) in self.xi.data().iter().zip(self.mask.iter_mut()) {
            if x.abs() < threshold {
                *m = false;
            }
        }
        self.apply_mask();
    }

    /// Functional form of [`SindyModel::prune`].
    pub fn threshold_prune(&self, threshold: f64) -> Self {
        let mut m = self.clone();
        m.prune(threshold);
        m
    }

    /// `Θ(z)Ξ`.
    pub fn derivative(&self, z: &[f64]) -> Result<Vec<f64>, SindyError> {
        let theta = self.spec.evaluate(z)?;
        let d = self.dim();
        let mut out = vec![0.0; d];
        for (r, th) in theta.iter().enumerate() {
            if *th == 0.0 {
                continue;
            }
            for (j, o) in out.iter_mut().enumerate() {
                *o += th * self.xi.at(r, j);
            }
        }
        Ok(out)
    }

    /// Advances one sample interval `dt` with `k` Euler sub-steps.
    pub fn step(&self, z: &[f64]) -> Result<Vec<f64>, SindyError> {
        let h = self.h();
        let mut s = z.to_vec();
        for sub in 0..self.k {
            let ds = self.derivative(&s)?;
            for (si, di) in s.iter_mut().zip(&ds) {
                *si += h * di;
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(SindyError::Diverged {
                    step: 0,
                    substep: sub,
                });
            }
        }
        Ok(s)
    }

    /// States `z_0..=z_steps` (row 0 is `z0`).
    pub fn rollout(&self, z0: &[f64], steps: usize) -> Result<Vec<Vec<f64>>, SindyError> {
        let mut out = Vec::with_capacity(steps + 1);
        out.push(z0.to_vec());
        for step in 0..steps {
            let next = self.step(&out[step]).map_err(|e| match e {
                SindyError::Diverged { substep, .. } => SindyError::Diverged { step, substep },
                other => other,
            })?;
            out.push(next);
        }
        Ok(out)
    }

    /// Coefficients of the degree-1 terms as a generator `G` with
    /// `ż = G z + (other terms)`; `G[j][i]` multiplies `z_i` in `ż_j`.
    pub fn linear_part(&self) -> Tensor {
        let d = self.dim();
        let rows = self.spec.linear_rows();
        let mut g = Tensor::zeros(&[d, d]);
        for (i, &r) in rows.iter().enumerate() {
            for j in 0..d {
                g.set(j, i, self.xi.at(r, j));
            }
        }
        g
    }

    /// Plain-text equations, one line per `ż_j`.
    pub fn equations(&self, precision: usize) -> String {
        let names = self.spec.term_names();
        let mut lines = Vec::new();
        for j in 0..self.dim() {
            let mut rhs = String::new();
            for (r, name) in names.iter().enumerate() {
                let c = self.xi.at(r, j);
                if !self.mask[r * self.dim() + j] || c == 0.0 {
                    continue;
                }
                let mag = format!("{:.*}", precision, c.abs());
                let body = if name == "1" {
                    mag
                } else {
                    format!("{mag} {name}")
                };
                if rhs.is_empty() {
                    rhs = if c < 0.0 { format!("-{body}") } else { body };
                } else {
                    rhs.push_str(if c < 0.0 { " - " } else { " + " });
                    rhs.push_str(&body);
                }
            }
            if rhs.is_empty() {
                rhs.push('0');
            }
            lines.push(format!("dz{}/dt = {}", j + 1, rhs));
        }
        lines.join("\n") + "\n"
    }
}

/// Records `k` Euler sub-steps of `z ← z + h·Θ(z)Ξ` for a `B×d` batch.
///
/// `xi` must already be masked (see [`masked_xi`]). Fails if any intermediate
/// state stops being finite.
///
/// For affine libraries (constant and linear terms only) the k sub-steps are
/// the single map `[1, z] ↦ [1, z]·Mᵏ`, and `Mᵏ` is formed by repeated
/// squaring, so large `k` costs O(log k) small products instead of k passes
/// over the batch.
pub fn sindy_cell(
    tape: &mut Tape,
    z: Var,
    xi: Var,
    spec: &LibrarySpec,
    h: f64,
    k: usize,
) -> Result<Var, SindyError> {
    if spec.is_affine() && k > 1 {
        return affine_cell(tape, z, xi, spec, h, k);
    }
    let mut s = z;
    for sub in 0..k {
        let theta = spec.evaluate_on_tape(tape, s)?;
        let ds = tape.matmul(theta, xi)?;
        let inc = tape.scale(ds, h)?;
        s = tape.add(s, inc)?;
        if !tape.value(s).is_finite() {
            return Err(SindyError::Diverged {
                step: 0,
                substep: sub,
            });
        }
    }
    Ok(s)
}

fn affine_cell(
    tape: &mut Tape,
    z: Var,
    xi: Var,
    spec: &LibrarySpec,
    h: f64,
    k: usize,
) -> Result<Var, SindyError> {
    let d = spec.dim;
    let c = usize::from(spec.include_constant);
    let n = d + c;
    // one sub-step acting on row vectors [1, z] (or z): M = [[1, hc], [0, I + hA]]
    let hxi = tape.scale(xi, h)?;
    let mut shift = Tensor::zeros(&[n, d]);
    for i in 0..d {
        shift.set(c + i, i, 1.0);
    }
    let shift = tape.constant(shift);
    let right = tape.add(hxi, shift)?;
    let step = if c == 1 {
        let mut e = Tensor::zeros(&[n, 1]);
        e.set(0, 0, 1.0);
        let e = tape.constant(e);
        tape.concat_cols(&[e, right])?
    } else {
        right
    };

    let mut power: Option<Var> = None;
    let mut base = step;
    let mut rest = k;
    loop {
        if rest & 1 == 1 {
            power = Some(match power {
                None => base,
                Some(p) => tape.matmul(p, base)?,
            });
        }
        rest >>= 1;
        if rest == 0 {
            break;
        }
        base = tape.matmul(base, base)?;
    }
    let power = power.expect("k > 1");

    let out = if c == 1 {
        let rows = tape.value(z).rows();
        let ones = tape.constant(Tensor::full(&[rows, 1], 1.0));
        let aug = tape.concat_cols(&[ones, z])?;
        let moved = tape.matmul(aug, power)?;
        tape.slice_cols(moved, 1, n)?
    } else {
        tape.matmul(z, power)?
    };
    if !tape.value(out).is_finite() {
        return Err(SindyError::Diverged {
            step: 0,
            substep: k - 1,
        });
    }
    Ok(out)
}

/// `Ξ ⊙ mask`, so pruned entries receive no gradient.
pub fn masked_xi(tape: &mut Tape, xi: Var, model: &SindyModel) -> Result<Var, SindyError> {
    if model.mask.iter().all(|&m| m) {
        return Ok(xi);
    }
    let m = tape.constant(model.mask_tensor());
    Ok(tape.mul(xi, m)?)
}

/// Ensemble of SINDy cells sharing one library, each pruned at its own
/// threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSindy {
    pub models: Vec<SindyModel>,
    pub thresholds: Vec<f64>,
}

impl EnsembleSindy {
    pub fn new(models: Vec<SindyModel>, thresholds: Vec<f64>) -> Result<Self, SindyError> {
        if models.is_empty() || models.len() != thresholds.len() {
            return Err(SindyError::Ensemble(format!(
                "{} models for {} thresholds",
                models.len(),
                thresholds.len()
            )));
        }
        let spec = &models[0].spec;
        if models.iter().any(|m| &m.spec != spec) {
            return Err(SindyError::Ensemble(
                "members must share one library".into(),
            ));
        }
        Ok(Self { models, thresholds })
    }

    /// `size` zero-initialized members with thresholds evenly spaced on
    /// `[low, high]`.
    pub fn with_ladder(
        spec: &LibrarySpec,
        dt: f64,
        k: usize,
        size: usize,
        low: f64,
        high: f64,
    ) -> Result<Self, SindyError> {
        let thresholds = threshold_ladder(low, high, size)?;
        let models = (0..size)
            .map(|_| SindyModel::zeros(spec.clone(), dt, k))
            .collect::<Result<_, _>>()?;
        Self::new(models, thresholds)
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn prune_all(&mut self) {
        for (m, &t) in self.models.iter_mut().zip(&self.thresholds) {
            m.prune(t);
        }
    }

    pub fn nnz(&self) -> Vec<usize> {
        self.models.iter().map(SindyModel::nnz).collect()
    }

    /// True when every member has been pruned to the null model.
    pub fn all_null(&self) -> bool {
        self.models.iter().all(|m| m.nnz() == 0)
    }
}

/// `size` values evenly spaced on `[low, high]` (ascending).
pub fn threshold_ladder(low: f64, high: f64, size: usize) -> Result<Vec<f64>, SindyError> {
    if size == 0 || !(low >= 0.0) || !(high >= low) {
        return Err(SindyError::Ensemble(format!(
            "invalid threshold ladder [{low}, {high}] × {size}"
        )));
    }
    if size == 1 {
        return Ok(vec![low]);
    }
    Ok((0..size)
        .map(|i| low + (high - low) * i as f64 / (size - 1) as f64)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn growth_model(dt: f64, k: usize) -> SindyModel {
        let spec = LibrarySpec::polynomial(1, 1, false);
        SindyModel::from_coefficients(spec, Tensor::matrix(1, 1, vec![1.0]), dt, k).unwrap()
    }

    #[test]
    fn compound_euler_step() {
        let m = growth_model(0.1, 10);
        let z1 = m.step(&[1.0]).unwrap()[0];
        let exact = 1.01f64.powi(10);
        assert!((z1 - exact).abs() < 1e-15);
        assert!((z1 - 1.104_622_1).abs() < 1e-7);
    }

    #[test]
    fn doubling_substeps_halves_the_error() {
        let e = 0.1f64.exp();
        let gap = |k| e - growth_model(0.1, k).step(&[1.0]).unwrap()[0];
        for k in [5, 10, 20, 40] {
            let ratio = gap(2 * k) / gap(k);
            assert!((0.45..=0.55).contains(&ratio), "k={k}: {ratio}");
        }
    }

    #[test]
    fn null_dynamics_keep_state() {
        let spec = LibrarySpec::polynomial(2, 3, true);
        let m = SindyModel::zeros(spec, 0.3, 4).unwrap();
        assert_eq!(m.step(&[0.4, -1.1]).unwrap(), vec![0.4, -1.1]);
    }

    #[test]
    fn harmonic_oscillator_tracks_closed_form() {
        let spec = LibrarySpec::polynomial(2, 1, false);
        let xi = Tensor::matrix(2, 2, vec![0.0, -1.0, 1.0, 0.0]);
        let m = SindyModel::from_coefficients(spec, xi, 0.01, 1).unwrap();
        let traj = m.rollout(&[1.0, 0.0], 100).unwrap();
        for (i, z) in traj.iter().enumerate() {
            let t = i as f64 * 0.01;
            let err = (z[0] - t.cos()).abs().max((z[1] + t.sin()).abs());
            assert!(err < 1e-2, "t={t}: {err}");
        }
    }

    #[test]
    fn tape_cell_matches_plain_step() {
        let spec = LibrarySpec::polynomial(2, 2, true);
        let xi = Tensor::matrix(
            6,
            2,
            vec![
                0.1, -0.2, 0.5, 1.0, -1.0, 0.3, 0.05, 0.0, 0.0, -0.1, 0.2, 0.0,
            ],
        );
        let m = SindyModel::from_coefficients(spec.clone(), xi.clone(), 0.2, 3).unwrap();
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::matrix(2, 2, vec![0.3, -0.4, 1.0, 0.2]));
        let x = tape.constant(xi);
        let out = sindy_cell(&mut tape, z, x, &spec, m.h(), m.k).unwrap();
        let v = tape.value(out).clone();
        for (r, z0) in [[0.3, -0.4], [1.0, 0.2]].iter().enumerate() {
            let expect = m.step(z0).unwrap();
            for j in 0..2 {
                assert!((v.at(r, j) - expect[j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn affine_power_matches_substeps() {
        for constant in [true, false] {
            let spec = LibrarySpec::polynomial(3, 1, constant);
            let p = spec.len();
            let xi = Tensor::matrix(
                p,
                3,
                (0..p * 3)
                    .map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.3)
                    .collect(),
            );
            for k in [2, 3, 10, 37, 100] {
                let m = SindyModel::from_coefficients(spec.clone(), xi.clone(), 0.05, k).unwrap();
                let mut tape = Tape::new();
                let z = tape.constant(Tensor::matrix(2, 3, vec![0.3, -0.4, 1.0, 0.2, 0.0, -0.7]));
                let x = tape.constant(xi.clone());
                let out = sindy_cell(&mut tape, z, x, &spec, m.h(), k).unwrap();
                let v = tape.value(out).clone();
                for r in 0..2 {
                    let expect = m.step(&[[0.3, -0.4, 1.0], [0.2, 0.0, -0.7]][r]).unwrap();
                    for j in 0..3 {
                        assert!(
                            (v.at(r, j) - expect[j]).abs() < 1e-12,
                            "k={k} const={constant}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn affine_power_gradients() {
        use crate::diff::finite_diff_check;
        let spec = LibrarySpec::polynomial(2, 1, true);
        let xi = Tensor::matrix(3, 2, vec![0.4, -0.3, 0.1, 2.0, -1.5, 0.2]);
        let z = Tensor::matrix(3, 2, vec![0.3, -0.4, 1.0, 0.2, -0.6, 0.9]);
        let w = Tensor::matrix(3, 2, vec![1.0, -0.5, 0.3, 0.7, -1.2, 0.4]);
        let err = finite_diff_check(
            |t: &mut Tape, v: &[Var]| {
                let out = sindy_cell(t, v[0], v[1], &spec, 0.01, 13)
                    .map_err(|_| crate::diff::DiffError::EmptyTape)?;
                let wv = t.constant(w.clone());
                let m = t.mul(out, wv)?;
                t.sum(m)
            },
            &[z, xi],
            1e-6,
        );
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn divergence_names_the_substep() {
        let spec = LibrarySpec::polynomial(1, 3, false);
        let xi = Tensor::matrix(3, 1, vec![0.0, 0.0, 1e200]);
        let m = SindyModel::from_coefficients(spec.clone(), xi.clone(), 1.0, 4).unwrap();
        let err = m.step(&[1e60]).unwrap_err();
        assert!(
            matches!(err, SindyError::Diverged { substep: 0, .. }),
            "{err}"
        );
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::matrix(1, 1, vec![1e60]));
        let x = tape.constant(xi);
        assert!(matches!(
            sindy_cell(&mut tape, z, x, &spec, 0.25, 4),
            Err(SindyError::Diverged { .. })
        ));
    }

    #[test]
    fn pruning_definition_and_fixpoint() {
        let spec = LibrarySpec::polynomial(1, 2, false);
        let xi = Tensor::matrix(2, 1, vec![0.5, 0.05]);
        let m = SindyModel::from_coefficients(spec, xi, 1.0, 1).unwrap();
        let p = m.threshold_prune(0.1);
        assert_eq!(p.mask, vec![true, false]);
        assert_eq!(p.xi.data(), &[0.5, 0.0]);
        assert_eq!(p.threshold_prune(0.1), p);
        assert_eq!(m.threshold_prune(0.0), m);
    }

    #[test]
    fn pruned_entries_stay_pruned() {
        let spec = LibrarySpec::polynomial(1, 2, false);
        let mut m =
            SindyModel::from_coefficients(spec, Tensor::matrix(2, 1, vec![0.5, 0.05]), 1.0, 1)
                .unwrap();
        m.prune(0.1);
        m.xi.data_mut()[1] = 3.0;
        m.prune(0.1);
        assert_eq!(m.mask, vec![true, false]);
        assert_eq!(m.xi.data()[1], 0.0);
    }

    #[test]
    fn linear_part_layout() {
        let spec = LibrarySpec::polynomial(2, 2, true);
        // ż1 = 2 z2, ż2 = -3 z1 + z1²
        let mut xi = Tensor::zeros(&[6, 2]);
        xi.set(2, 0, 2.0);
        xi.set(1, 1, -3.0);
        xi.set(3, 1, 1.0);
        let m = SindyModel::from_coefficients(spec, xi, 1.0, 1).unwrap();
        let g = m.linear_part();
        assert_eq!(g.data(), &[0.0, 2.0, -3.0, 0.0]);
    }

    #[test]
    fn equation_listing() {
        let spec = LibrarySpec::polynomial(3, 1, false);
        let xi = Tensor::matrix(
            3,
            3,
            vec![0.0, -3.10, 2.72, 4.68, 0.0, -5.55, -2.37, 3.25, 0.0],
        );
        let m = SindyModel::from_coefficients(spec, xi, 1.0, 1).unwrap();
        assert_eq!(
            m.equations(2),
            "dz1/dt = 4.68 z2 - 2.37 z3\ndz2/dt = -3.10 z1 + 3.25 z3\ndz3/dt = 2.72 z1 - 5.55 z2\n"
        );
        let z = SindyModel::zeros(LibrarySpec::polynomial(1, 1, true), 1.0, 1).unwrap();
        assert_eq!(z.equations(2), "dz1/dt = 0\n");
    }

    #[test]
    fn ladder_is_uniform() {
        let t = threshold_ladder(0.1, 1.0, 10).unwrap();
        assert_eq!(t.len(), 10);
        assert!((t[0] - 0.1).abs() < 1e-15 && (t[9] - 1.0).abs() < 1e-15);
        assert!((t[1] - 0.2).abs() < 1e-15);
        assert_eq!(threshold_ladder(0.3, 0.5, 1).unwrap(), vec![0.3]);
        assert!(threshold_ladder(1.0, 0.5, 3).is_err());
    }
}
