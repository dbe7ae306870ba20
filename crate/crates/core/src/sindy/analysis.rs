use std::f64::consts::{LN_2, PI};

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use super::SindyError;
use crate::diff::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    /// A conjugate pair `λ ± iω`, reported once.
    Oscillatory,
    /// A real eigenvalue.
    Exponential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub kind: ModeKind,
    /// Continuous-time eigenvalue `(re, im)`; `im ≥ 0` for pairs.
    pub eigenvalue: (f64, f64),
    /// Angular frequency `|Im μ|`.
    pub omega: f64,
    /// Growth rate `Re μ` (negative for decay).
    pub growth_rate: f64,
    pub period: Option<f64>,
    pub half_life: Option<f64>,
    pub doubling_time: Option<f64>,
}

impl Mode {
    fn new(mu: Complex<f64>, kind: ModeKind) -> Self {
        let omega = mu.im.abs();
        let lambda = mu.re;
        Self {
            kind,
            eigenvalue: (mu.re, mu.im.abs()),
            omega,
            growth_rate: lambda,
            period: (kind == ModeKind::Oscillatory && omega > 0.0).then(|| 2.0 * PI / omega),
            half_life: (lambda < 0.0).then(|| LN_2 / -lambda),
            doubling_time: (lambda > 0.0).then(|| LN_2 / lambda),
        }
    }
}

/// Spectral summary of `ż = G z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenAnalysis {
    /// Eigenvalues `(re, im)` of the analyzed matrix, sorted by descending
    /// imaginary part, then real part.
    pub eigenvalues: Vec<(f64, f64)>,
    /// Unit-norm eigenvectors aligned with `eigenvalues`, entries `(re, im)`.
    pub eigenvectors: Vec<Vec<(f64, f64)>>,
    /// Continuous-time modes, one per real eigenvalue or conjugate pair.
    pub modes: Vec<Mode>,
}

impl EigenAnalysis {
    /// Largest eigenpair residual `‖A v − μ v‖ / (‖A‖‖v‖)` against `a`.
    pub fn max_residual(&self, a: &Tensor) -> f64 {
        let m = to_complex(a);
        let norm = m.norm().max(f64::MIN_POSITIVE);
        self.eigenvalues
            .iter()
            .zip(&self.eigenvectors)
            .map(|(&(re, im), v)| {
                let v = nalgebra::DVector::from_iterator(
                    v.len(),
                    v.iter().map(|&(r, i)| Complex::new(r, i)),
                );
                let r = &m * &v - v.scale(1.0) * Complex::new(re, im);
                r.norm() / (norm * v.norm())
            })
            .fold(0.0, f64::max)
    }
}

fn to_complex(a: &Tensor) -> DMatrix<Complex<f64>> {
    DMatrix::from_row_slice(a.rows(), a.cols(), a.data()).map(|x| Complex::new(x, 0.0))
}

fn eigen(a: &Tensor) -> Result<(Vec<Complex<f64>>, Vec<Vec<(f64, f64)>>), SindyError> {
    if a.ndim() != 2 || a.rows() != a.cols() {
        return Err(SindyError::Dimension {
            expected: a.rows(),
            got: a.cols(),
        });
    }
    if !a.is_finite() {
        return Err(SindyError::Eigen("matrix has non-finite entries".into()));
    }
    let n = a.rows();
    let m = DMatrix::from_row_slice(n, n, a.data());
    let schur = m
        .clone()
        .try_schur(f64::EPSILON, 10_000)
        .ok_or_else(|| SindyError::Eigen("Schur iteration did not converge".into()))?;
    let mut values: Vec<Complex<f64>> = schur.complex_eigenvalues().iter().copied().collect();
    values.sort_by(|x, y| y.im.total_cmp(&x.im).then(y.re.total_cmp(&x.re)));

    let mc = to_complex(a);
    let mut vectors = Vec::with_capacity(n);
    for &mu in &values {
        let shifted = &mc - DMatrix::<Complex<f64>>::identity(n, n) * mu;
        let svd = shifted.svd(false, true);
        let v_t = svd
            .v_t
            .ok_or_else(|| SindyError::Eigen("singular vectors unavailable".into()))?;
        let (idx, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|x, y| x.1.total_cmp(y.1))
            .ok_or_else(|| SindyError::Eigen("empty matrix".into()))?;
        // v_t's rows are conjugated right singular vectors
        let v: Vec<Complex<f64>> = v_t.row(idx).iter().map(|c| c.conj()).collect();
        let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        vectors.push(v.iter().map(|c| (c.re / norm, c.im / norm)).collect());
    }
    Ok((values, vectors))
}

fn modes(values: &[Complex<f64>], scale: f64) -> Vec<Mode> {
    let tol = 1e-12 * scale.max(1.0);
    values
        .iter()
        .filter_map(|&mu| {
            if mu.im.abs() <= tol {
                Some(Mode::new(Complex::new(mu.re, 0.0), ModeKind::Exponential))
            } else if mu.im > 0.0 {
                Some(Mode::new(mu, ModeKind::Oscillatory))
            } else {
                None
            }
        })
        .collect()
}

/// Eigen-decomposition of a continuous-time generator `G`, with each
/// eigenvalue interpreted as frequency, growth rate and time scales.
pub fn analyze_linear_system(g: &Tensor) -> Result<EigenAnalysis, SindyError> {
    let (values, vectors) = eigen(g)?;
    let scale = g.frobenius_norm();
    Ok(EigenAnalysis {
        eigenvalues: values.iter().map(|c| (c.re, c.im)).collect(),
        eigenvectors: vectors,
        modes: modes(&values, scale),
    })
}

/// Same as [`analyze_linear_system`] for a one-interval transition matrix
/// `K ≈ e^{G dt}`: eigenvalues are those of `K`, modes use `ln(μ)/dt`.
pub fn analyze_discrete_map(k: &Tensor, dt: f64) -> Result<EigenAnalysis, SindyError> {
    if !(dt > 0.0) {
        return Err(SindyError::Integration { dt, k: 1 });
    }
    let (values, vectors) = eigen(k)?;
    let continuous: Vec<Complex<f64>> = values.iter().map(|mu| mu.ln() / dt).collect();
    let scale = continuous.iter().map(|c| c.norm()).fold(0.0, f64::max);
    Ok(EigenAnalysis {
        eigenvalues: values.iter().map(|c| (c.re, c.im)).collect(),
        eigenvectors: vectors,
        modes: modes(&continuous, scale),
    })
}
