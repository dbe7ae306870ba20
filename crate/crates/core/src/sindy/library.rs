use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::SindyError;
use crate::diff::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrigKind {
    Sin,
    Cos,
}

/// `kind(freq · z_i)`, applied to every coordinate `i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigTerm {
    pub kind: TrigKind,
    pub freq: f64,
}

/// Candidate function library Θ.
///
/// Term order: the constant (if enabled), monomials of degree 1..=P in
/// graded lexicographic order, then for each trig entry one term per
/// coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibrarySpec {
    pub dim: usize,
    pub include_constant: bool,
    pub poly_degree: u32,
    #[serde(default)]
    pub trig: Vec<TrigTerm>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Term {
    Constant,
    /// Coordinate indices with repetition, nondecreasing (`[0, 0, 1]` = z1²z2).
    Monomial(Vec<usize>),
    Trig {
        kind: TrigKind,
        freq: f64,
        coord: usize,
    },
}

impl Term {
    pub fn degree(&self) -> usize {
        match self {
            Term::Constant => 0,
            Term::Monomial(idx) => idx.len(),
            Term::Trig { .. } => usize::MAX,
        }
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        match self {
            Term::Constant => 1.0,
            Term::Monomial(idx) => idx.iter().map(|&i| z[i]).product(),
            Term::Trig { kind, freq, coord } => {
                let a = freq * z[*coord];
                match kind {
                    TrigKind::Sin => a.sin(),
                    TrigKind::Cos => a.cos(),
                }
            }
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Constant => write!(f, "1"),
            Term::Monomial(idx) => {
                let mut parts = Vec::new();
                let mut i = 0;
                while i < idx.len() {
                    let c = idx[i];
                    let run = idx[i..].iter().take_while(|&&x| x == c).count();
                    if run == 1 {
                        parts.push(format!("z{}", c + 1));
                    } else {
                        parts.push(format!("z{}^{}", c + 1, run));
                    }
                    i += run;
                }
                write!(f, "{}", parts.join(" "))
            }
            Term::Trig { kind, freq, coord } => {
                let name = match kind {
                    TrigKind::Sin => "sin",
                    TrigKind::Cos => "cos",
                };
                if *freq == 1.0 {
                    write!(f, "{name}(z{})", coord + 1)
                } else {
                    write!(f, "{name}({freq} z{})", coord + 1)
                }
            }
        }
    }
}

fn multisets(
    dim: usize,
    degree: usize,
    start: usize,
    prefix: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if prefix.len() == degree {
        out.push(prefix.clone());
        return;
    }
    for i in start..dim {
        prefix.push(i);
        multisets(dim, degree, i, prefix, out);
        prefix.pop();
    }
}

impl LibrarySpec {
    pub fn polynomial(dim: usize, degree: u32, include_constant: bool) -> Self {
        Self {
            dim,
            include_constant,
            poly_degree: degree,
            trig: Vec::new(),
        }
    }

    pub fn terms(&self) -> Vec<Term> {
        let mut terms = Vec::new();
        if self.include_constant {
            terms.push(Term::Constant);
        }
        for deg in 1..=self.poly_degree as usize {
            let mut out = Vec::new();
            multisets(self.dim, deg, 0, &mut Vec::new(), &mut out);
            terms.extend(out.into_iter().map(Term::Monomial));
        }
        for t in &self.trig {
            for coord in 0..self.dim {
                terms.push(Term::Trig {
                    kind: t.kind,
                    freq: t.freq,
                    coord,
                });
            }
        }
        terms
    }

    pub fn term_names(&self) -> Vec<String> {
        self.terms().iter().map(ToString::to_string).collect()
    }

    pub fn len(&self) -> usize {
        self.terms().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row indices of the degree-1 monomials, in coordinate order.
    pub fn linear_rows(&self) -> Vec<usize> {
        self.terms()
            .iter()
            .enumerate()
            .filter(|(_, t)| matches!(t, Term::Monomial(i) if i.len() == 1))
            .map(|(k, _)| k)
            .collect()
    }

    /// Same state dimension, only the linear monomials.
    pub fn koopman_restrict(&self) -> Self {
        Self {
            dim: self.dim,
            include_constant: false,
            poly_degree: 1,
            trig: Vec::new(),
        }
    }

    /// Only constant and degree-1 terms, with at least one linear term.
    pub fn is_affine(&self) -> bool {
        self.poly_degree == 1 && self.trig.is_empty()
    }

    pub fn is_linear(&self) -> bool {
        !self.include_constant && self.poly_degree == 1 && self.trig.is_empty()
    }

    /// Θ(z) for a single state.
    pub fn evaluate(&self, z: &[f64]) -> Result<Vec<f64>, SindyError> {
        if z.len() != self.dim {
            return Err(SindyError::Dimension {
                expected: self.dim,
                got: z.len(),
            });
        }
        Ok(self.terms().iter().map(|t| t.eval(z)).collect())
    }

    /// Θ(Z) for a `n×d` matrix of states, as `n×p`.
    pub fn evaluate_matrix(&self, z: &Tensor) -> Result<Tensor, SindyError> {
        if z.ndim() != 2 || z.cols() != self.dim {
            return Err(SindyError::Dimension {
                expected: self.dim,
                got: z.cols(),
            });
        }
        let terms = self.terms();
        let mut data = Vec::with_capacity(z.rows() * terms.len());
        for r in 0..z.rows() {
            let row = z.row(r);
            data.extend(terms.iter().map(|t| t.eval(row)));
        }
        Ok(Tensor::matrix(z.rows(), terms.len(), data))
    }

    /// Records Θ(Z) on the tape for a `B×d` state batch.
    pub fn evaluate_on_tape(&self, tape: &mut Tape, z: Var) -> Result<Var, SindyError> {
        let zt = tape.value(z);
        if zt.ndim() != 2 || zt.cols() != self.dim {
            return Err(SindyError::Dimension {
                expected: self.dim,
                got: zt.cols(),
            });
        }
        let rows = zt.rows();
        let mut blocks = Vec::new();
        if self.include_constant {
            blocks.push(tape.constant(Tensor::full(&[rows, 1], 1.0)));
        }
        if self.poly_degree >= 1 {
            blocks.push(z);
        }
        if self.poly_degree >= 2 {
            let cols: Vec<Var> = (0..self.dim)
                .map(|i| tape.slice_cols(z, i, i + 1))
                .collect::<Result<_, _>>()?;
            let mut cache: HashMap<Vec<usize>, Var> = HashMap::new();
            for (i, &c) in cols.iter().enumerate() {
                cache.insert(vec![i], c);
            }
            for deg in 2..=self.poly_degree as usize {
                let mut out = Vec::new();
                multisets(self.dim, deg, 0, &mut Vec::new(), &mut out);
                for m in out {
                    let prefix = cache[&m[..deg - 1]];
                    let v = tape.mul(prefix, cols[m[deg - 1]])?;
                    blocks.push(v);
                    cache.insert(m, v);
                }
            }
        }
        for t in &self.trig {
            let scaled = tape.scale(z, t.freq)?;
            blocks.push(match t.kind {
                TrigKind::Sin => tape.sin(scaled)?,
                TrigKind::Cos => tape.cos(scaled)?,
            });
        }
        if blocks.is_empty() {
            return Err(SindyError::EmptyLibrary);
        }
        if blocks.len() == 1 {
            return Ok(blocks[0]);
        }
        Ok(tape.concat_cols(&blocks)?)
    }
}

fn binomial(n: u64, k: u64) -> u64 {
    (1..=k).fold(1, |acc, i| acc * (n + 1 - i) / i)
}

/// `C(d+P, P)` plus trig terms, minus one without the constant.
pub fn expected_term_count(spec: &LibrarySpec) -> usize {
    let poly = binomial(
        spec.dim as u64 + u64::from(spec.poly_degree),
        u64::from(spec.poly_degree),
    ) as usize;
    poly - usize::from(!spec.include_constant) + spec.dim * spec.trig.len()
}
