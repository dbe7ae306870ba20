use nalgebra::{DMatrix, DVector};

use super::library::LibrarySpec;
use super::model::SindyModel;
use super::SindyError;
use crate::diff::Tensor;

/// Sequential thresholded least squares settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StlsqOptions {
    pub threshold: f64,
    pub max_iter: usize,
    pub ridge: f64,
    /// Integration settings stored on the returned model.
    pub dt: f64,
    pub k: usize,
}

impl Default for StlsqOptions {
    fn default() -> Self {
        Self {
            threshold: 0.1,
            max_iter: 10,
            ridge: 1e-6,
            dt: 1.0,
            k: 1,
        }
    }
}

fn to_dmatrix(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

/// Ridge least squares `min ‖A x − b‖² + ridge ‖x‖²` via QR of the
/// augmented system. With `ridge == 0` a numerically singular `R` is an error.
fn ridge_solve(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    ridge: f64,
    cols: &[usize],
) -> Result<DVector<f64>, SindyError> {
    let n = a.nrows();
    let p = a.ncols();
    let extra = if ridge > 0.0 { p } else { 0 };
    let mut aug = DMatrix::zeros(n + extra, p);
    aug.view_mut((0, 0), (n, p)).copy_from(a);
    let mut rhs = DVector::zeros(n + extra);
    rhs.rows_mut(0, n).copy_from(b);
    if extra > 0 {
        let s = ridge.sqrt();
        for i in 0..p {
            aug[(n + i, i)] = s;
        }
    }
    if aug.nrows() < p {
        return Err(SindyError::Conditioning {
            column: cols[aug.nrows()],
        });
    }
    let qr = aug.qr();
    let r = qr.r();
    let scale = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    for i in 0..p {
        if !(r[(i, i)].abs() > 1e-12 * scale) || scale == 0.0 {
            return Err(SindyError::Conditioning { column: cols[i] });
        }
    }
    let qtb = qr.q().transpose() * rhs;
    r.solve_upper_triangular(&qtb)
        .ok_or(SindyError::Conditioning { column: cols[0] })
}

/// Fits `dZ ≈ Θ(Z) Ξ` by alternating ridge least squares on the active
/// terms with hard thresholding, independently per output column.
///
/// Stops after `max_iter` rounds or when the mask stops changing; the
/// returned coefficients are a final refit on the surviving terms.
pub fn fit_stlsq(
    states: &Tensor,
    derivs: &Tensor,
    spec: &LibrarySpec,
    opts: StlsqOptions,
) -> Result<SindyModel, SindyError> {
    let d = spec.dim;
    if states.ndim() != 2 || states.cols() != d {
        return Err(SindyError::Dimension {
            expected: d,
            got: states.cols(),
        });
    }
    if derivs.shape() != states.shape() {
        return Err(SindyError::Dimension {
            expected: states.numel(),
            got: derivs.numel(),
        });
    }
    if !(opts.ridge >= 0.0) || !(opts.threshold >= 0.0) {
        return Err(SindyError::Ensemble(format!(
            "threshold {} and ridge {} must be non-negative",
            opts.threshold, opts.ridge
        )));
    }
    let theta = to_dmatrix(&spec.evaluate_matrix(states)?);
    let (n, p) = theta.shape();
    if n < p {
        log::warn!("fitting {p} library terms from only {n} samples");
    }
    let targets = to_dmatrix(derivs);
    let mut model = SindyModel::zeros(spec.clone(), opts.dt, opts.k)?;

    for j in 0..d {
        let b = targets.column(j).clone_owned();
        let mut active: Vec<usize> = (0..p).collect();
        let solve = |active: &[usize]| -> Result<DVector<f64>, SindyError> {
            if active.is_empty() {
                return Ok(DVector::zeros(0));
            }
            let a = theta.select_columns(active.iter());
            ridge_solve(&a, &b, opts.ridge, active)
        };
        let mut coef = solve(&active)?;
        for _ in 0..opts.max_iter {
            let kept: Vec<usize> = active
                .iter()
                .zip(coef.iter())
                .filter(|(_, c)| c.abs() >= opts.threshold)
                .map(|(&i, _)| i)
                .collect();
            if kept.len() == active.len() {
                break;
            }
            active = kept;
            coef = solve(&active)?;
        }
        for r in 0..p {
            model.mask[r * d + j] = false;
        }
        for (&r, &c) in active.iter().zip(coef.iter()) {
            model.mask[r * d + j] = true;
            model.xi.set(r, j, c);
        }
    }
    model.apply_mask();
    Ok(model)
}

/// Unthresholded ridge least squares over the full library.
pub fn fit_least_squares(
    states: &Tensor,
    derivs: &Tensor,
    spec: &LibrarySpec,
    ridge: f64,
) -> Result<SindyModel, SindyError> {
    fit_stlsq(
        states,
        derivs,
        spec,
        StlsqOptions {
            threshold: 0.0,
            max_iter: 0,
            ridge,
            ..Default::default()
        },
    )
}

/// Time derivatives of each column of an `n×d` series sampled every `dt`:
/// second-order central differences inside, second-order one-sided at the
/// two ends. Needs at least three samples.
pub fn central_differences(series: &Tensor, dt: f64) -> Result<Tensor, SindyError> {
    let n = series.rows();
    if series.ndim() != 2 || n < 3 {
        return Err(SindyError::SequenceTooShort { len: n, m_max: 2 });
    }
    let d = series.cols();
    let mut out = Tensor::zeros(&[n, d]);
    let x = |i: usize, j: usize| series.at(i, j);
    for j in 0..d {
        out.set(
            0,
            j,
            (-3.0 * x(0, j) + 4.0 * x(1, j) - x(2, j)) / (2.0 * dt),
        );
        for i in 1..n - 1 {
            out.set(i, j, (x(i + 1, j) - x(i - 1, j)) / (2.0 * dt));
        }
        out.set(
            n - 1,
            j,
            (3.0 * x(n - 1, j) - 4.0 * x(n - 2, j) + x(n - 3, j)) / (2.0 * dt),
        );
    }
    Ok(out)
}
