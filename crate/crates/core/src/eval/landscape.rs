use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::data::WindowedDataset;
use crate::diff::{Tape, Tensor};
use crate::rng::{rng_for, streams};
use crate::shred::{combined_loss, ShredModel};

/// Slack allowed in the midpoint inequality to absorb rounding.
pub const DEFAULT_CONVEXITY_TOLERANCE: f64 = 1e-7;

/// Random direction with one i.i.d. Gaussian tensor per parameter tensor,
/// each scaled to unit Frobenius norm.
pub fn landscape_directions(params: &[Tensor], seed: u64) -> Vec<Tensor> {
    let mut rng = rng_for(seed, streams::LANDSCAPE);
    params
        .iter()
        .map(|p| {
            let mut data: Vec<f64> = (0..p.numel())
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let norm = data.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                data.iter_mut().for_each(|x| *x /= norm);
            }
            Tensor::from_vec(p.shape(), data)
        })
        .collect()
}

/// `θ + (a·rx + b·ry)`, with the sum formed so that swapping the direction
/// pair and the coefficients gives bit-identical parameters.
fn perturb(base: &[Tensor], rx: &[Tensor], ry: &[Tensor], a: f64, b: f64) -> Vec<Tensor> {
    base.iter()
        .zip(rx.iter().zip(ry))
        .map(|(t, (x, y))| {
            let data = t
                .data()
                .iter()
                .zip(x.data().iter().zip(y.data()))
                .map(|(&p, (&dx, &dy))| p + (a * dx + b * dy))
                .collect();
            Tensor::from_vec(t.shape(), data)
        })
        .collect()
}

fn finite_or_inf(x: f64) -> f64 {
    if x.is_finite() {
        x
    } else {
        f64::INFINITY
    }
}

/// Loss sampled on the plane spanned by two random directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    pub alpha: f64,
    pub n: usize,
    pub seeds: (u64, u64),
    /// Grid coordinates `t ∈ [−1, 1]`; the displacement is `t·α`.
    pub coords: Vec<f64>,
    /// Row-major `n×n`, indexed `[ix·n + iy]`. Non-finite losses are `+inf`.
    pub losses: Vec<f64>,
    pub base_loss: f64,
}

impl LandscapeGrid {
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.losses[ix * self.n + iy]
    }

    pub fn center(&self) -> f64 {
        let c = self.n / 2;
        self.at(c, c)
    }

    /// `(t_x, t_y, loss)` rows.
    pub fn rows(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::with_capacity(self.n * self.n);
        for ix in 0..self.n {
            for iy in 0..self.n {
                out.push((self.coords[ix], self.coords[iy], self.at(ix, iy)));
            }
        }
        out
    }

    /// Every grid row and column as a sampled segment.
    pub fn line_segments(&self) -> Vec<Vec<f64>> {
        let n = self.n;
        let mut segs: Vec<Vec<f64>> = (0..n)
            .map(|ix| (0..n).map(|iy| self.at(ix, iy)).collect())
            .collect();
        segs.extend((0..n).map(|iy| (0..n).map(|ix| self.at(ix, iy)).collect()));
        segs
    }
}

fn check_grid(alpha: f64, n: usize) -> Result<(), EvalError> {
    if n < 3 || n.is_multiple_of(2) {
        return Err(EvalError::Invalid(format!(
            "grid size must be odd and at least 3, got {n}"
        )));
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(EvalError::Invalid(format!(
            "alpha must be finite and non-negative, got {alpha}"
        )));
    }
    Ok(())
}

/// Evaluates `loss` at `θ₀ + α(t_x r_x + t_y r_y)` on an `n×n` grid of
/// `t ∈ [−1, 1]`, with `r_x`, `r_y` drawn from `seeds`. Cells are evaluated
/// in parallel and stored in index order.
pub fn landscape_scan<F>(
    base: &[Tensor],
    loss: F,
    alpha: f64,
    n: usize,
    seeds: (u64, u64),
) -> Result<LandscapeGrid, EvalError>
where
    F: Fn(&[Tensor]) -> f64 + Sync,
{
    check_grid(alpha, n)?;
    let rx = landscape_directions(base, seeds.0);
    let ry = landscape_directions(base, seeds.1);
    let c = (n / 2) as f64;
    let coords: Vec<f64> = (0..n).map(|i| (i as f64 - c) / c).collect();
    let losses: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|cell| {
            let (ix, iy) = (cell / n, cell % n);
            let p = perturb(base, &rx, &ry, coords[ix] * alpha, coords[iy] * alpha);
            finite_or_inf(loss(&p))
        })
        .collect();
    Ok(LandscapeGrid {
        alpha,
        n,
        seeds,
        coords,
        losses,
        base_loss: finite_or_inf(loss(base)),
    })
}

/// Evaluation-mode training loss of `model` on the fixed chain batch
/// `starts`, as a function of a replacement parameter list.
pub fn shred_loss_fn<'a>(
    model: &'a ShredModel,
    data: &'a WindowedDataset,
    starts: &'a [usize],
) -> impl Fn(&[Tensor]) -> f64 + Sync + 'a {
    move |params: &[Tensor]| {
        let mut m = model.clone();
        for (dst, src) in m.params_mut().into_iter().zip(params) {
            dst.data_mut().copy_from_slice(src.data());
        }
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape);
        match combined_loss(&mut tape, &m, &vars, data, starts, None) {
            Ok(l) => l.breakdown(&tape).total,
            Err(_) => f64::INFINITY,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub segment: usize,
    /// Sample indices of the triple.
    pub left: usize,
    pub mid: usize,
    pub right: usize,
    /// `f(mid) − (f(left) + f(right))/2`.
    pub excess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub tolerance: f64,
    pub segments: usize,
    pub triples: usize,
    pub violations: Vec<Violation>,
}

impl ConvexityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    /// Share of segments without any violation.
    pub fn segment_pass_fraction(&self) -> f64 {
        if self.segments == 0 {
            return 1.0;
        }
        let mut bad: Vec<usize> = self.violations.iter().map(|v| v.segment).collect();
        bad.dedup();
        1.0 - bad.len() as f64 / self.segments as f64
    }
}

/// Checks `f(mid) ≤ (f(left) + f(right))/2 + tol` for every symmetric triple
/// of each segment's equally spaced samples.
pub fn convexity_check(segments: &[Vec<f64>], tol: f64) -> ConvexityReport {
    let mut violations = Vec::new();
    let mut triples = 0;
    for (s, f) in segments.iter().enumerate() {
        for mid in 1..f.len().saturating_sub(1) {
            for h in 1..=mid.min(f.len() - 1 - mid) {
                triples += 1;
                let (l, r) = (f[mid - h], f[mid + h]);
                let bound = 0.5 * (l + r) + tol;
                let ok = f[mid] <= bound || (f[mid].is_infinite() && bound.is_infinite());
                if !ok {
                    violations.push(Violation {
                        segment: s,
                        left: mid - h,
                        mid,
                        right: mid + h,
                        excess: f[mid] - 0.5 * (l + r),
                    });
                }
            }
        }
    }
    ConvexityReport {
        tolerance: tol,
        segments: segments.len(),
        triples,
        violations,
    }
}

/// Convexity along random segments of the scan plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentConvexity {
    /// Endpoints in plane coordinates. Every segment starts at the base
    /// point `(0, 0)` and ends uniformly within `[−α, α]²`.
    pub endpoints: Vec<((f64, f64), (f64, f64))>,
    pub samples: Vec<Vec<f64>>,
    pub report: ConvexityReport,
}

/// Samples `count` random paths on the plane of the `seeds` directions,
/// each running from the base parameters to a point uniform in `[−α, α]²`,
/// takes `points` equally spaced losses along each, and runs
/// [`convexity_check`].
#[allow(clippy::too_many_arguments)]
pub fn segment_convexity<F>(
    base: &[Tensor],
    loss: F,
    alpha: f64,
    seeds: (u64, u64),
    count: usize,
    points: usize,
    tol: f64,
    seed: u64,
) -> Result<SegmentConvexity, EvalError>
where
    F: Fn(&[Tensor]) -> f64 + Sync,
{
    if points < 3 {
        return Err(EvalError::Invalid(format!(
            "segments need at least 3 samples, got {points}"
        )));
    }
    check_grid(alpha, 3)?;
    let rx = landscape_directions(base, seeds.0);
    let ry = landscape_directions(base, seeds.1);
    let mut rng = rng_for(seed, streams::LANDSCAPE + 1);
    let endpoints: Vec<_> = (0..count)
        .map(|_| {
            let mut p = || rng.random_range(-1.0..=1.0) * alpha;
            ((0.0, 0.0), (p(), p()))
        })
        .collect();
    let samples: Vec<Vec<f64>> = endpoints
        .par_iter()
        .map(|&((x0, y0), (x1, y1))| {
            (0..points)
                .map(|i| {
                    let s = i as f64 / (points - 1) as f64;
                    let p = perturb(base, &rx, &ry, x0 + s * (x1 - x0), y0 + s * (y1 - y0));
                    finite_or_inf(loss(&p))
                })
                .collect()
        })
        .collect();
    let report = convexity_check(&samples, tol);
    Ok(SegmentConvexity {
        endpoints,
        samples,
        report,
    })
}
