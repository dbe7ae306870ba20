use super::tensor::{matmul_nt, matmul_raw, matmul_tn};
use super::{DiffError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Differentiable primitive operations.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// `m×k · k×n`
    MatMul,
    Add,
    Sub,
    /// Elementwise (Hadamard) product.
    Mul,
    /// Adds a length-`n` row vector to every row of an `m×n` matrix.
    AddRow,
    /// `scale·x + shift`, elementwise.
    Affine {
        scale: f64,
        shift: f64,
    },
    Sigmoid,
    Tanh,
    Relu,
    Sin,
    Cos,
    Powi(i32),
    /// Concatenates 2-D inputs with equal row counts along columns.
    ConcatCols,
    /// Stacks 2-D inputs with equal column counts along rows.
    ConcatRows,
    SliceCols {
        start: usize,
        end: usize,
    },
    SliceRows {
        start: usize,
        end: usize,
    },
    Transpose,
    /// Sum of all entries, as a one-element tensor.
    Sum,
    /// Mean of squared differences over all entries.
    MeanSquaredDiff,
}

impl Primitive {
    fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::AddRow => "add_row",
            Primitive::Affine { .. } => "affine",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Tanh => "tanh",
            Primitive::Relu => "relu",
            Primitive::Sin => "sin",
            Primitive::Cos => "cos",
            Primitive::Powi(_) => "powi",
            Primitive::ConcatCols => "concat_cols",
            Primitive::ConcatRows => "concat_rows",
            Primitive::SliceCols { .. } => "slice_cols",
            Primitive::SliceRows { .. } => "slice_rows",
            Primitive::Transpose => "transpose",
            Primitive::Sum => "sum",
            Primitive::MeanSquaredDiff => "mean_squared_diff",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Option<Primitive>,
    inputs: Vec<usize>,
    tracked: bool,
}

/// Define-by-run record of a computation.
///
/// Nodes are appended in evaluation order, so reverse insertion order is a
/// valid reverse topological order for backpropagation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::from_vec(&self.shapes[v.0], g.clone()))
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0)?.take()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. Gradients are tracked iff `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let tracked = t.requires_grad;
        self.push(t.detached(), None, Vec::new(), tracked)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.detached(), None, Vec::new(), false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(
        &mut self,
        value: Tensor,
        op: Option<Primitive>,
        inputs: Vec<usize>,
        tracked: bool,
    ) -> Var {
        self.nodes.push(Node {
            value,
            op,
            inputs,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    /// Evaluates `op` on `inputs` and records the result.
    pub fn apply(&mut self, op: Primitive, inputs: &[Var]) -> Result<Var, DiffError> {
        let vals: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let value = forward(&op, &vals)?;
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        let ids = inputs.iter().map(|v| v.0).collect();
        Ok(self.push(value, Some(op), ids, tracked))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, DiffError> {
        self.apply(Primitive::AddRow, &[a, row])
    }

    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var, DiffError> {
        self.apply(Primitive::Affine { scale, shift }, &[a])
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Result<Var, DiffError> {
        self.affine(a, scale, 0.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, DiffError> {
        self.apply(Primitive::Sigmoid, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, DiffError> {
        self.apply(Primitive::Tanh, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, DiffError> {
        self.apply(Primitive::Relu, &[a])
    }

    pub fn sin(&mut self, a: Var) -> Result<Var, DiffError> {
        self.apply(Primitive::Sin, &[a])
    }

    pub fn cos(&mut self, a: Var) -> Result<Var, DiffError> {
        self.apply(Primitive::Cos, &[a])
    }

    pub fn powi(&mut self, a: Var, n: i32) -> Result<Var, DiffError> {
        self.apply(Primitive::Powi(n), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        self.apply(Primitive::ConcatCols, parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        self.apply(Primitive::ConcatRows, parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, DiffError> {
        self.apply(Primitive::SliceCols { start, end }, &[a])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, DiffError> {
        self.apply(Primitive::SliceRows { start, end }, &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, DiffError> {
        self.apply(Primitive::Transpose, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, DiffError> {
        self.apply(Primitive::Sum, &[a])
    }

    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.apply(Primitive::MeanSquaredDiff, &[a, b])
    }

    /// Backpropagates from a one-element `loss`, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients, DiffError> {
        if self.nodes.is_empty() {
            return Err(DiffError::EmptyTape);
        }
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.numel() != 1 {
            return Err(DiffError::NonScalarLoss {
                shape: loss_node.value.shape().to_vec(),
            });
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.tracked {
                continue;
            }
            let Some(op) = &node.op else { continue };
            let Some(g) = grads[id].take() else { continue };
            let ins: Vec<&Tensor> = node.inputs.iter().map(|&i| &self.nodes[i].value).collect();
            let contribs = backward_rule(op, &ins, &node.value, &g);
            for (&input, contrib) in node.inputs.iter().zip(contribs) {
                if !self.nodes[input].tracked {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        let shapes = self
            .nodes
            .into_iter()
            .map(|nd| nd.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }
}

fn mismatch(op: &Primitive, vals: &[&Tensor]) -> DiffError {
    DiffError::ShapeMismatch {
        op: op.name(),
        shapes: vals.iter().map(|t| t.shape().to_vec()).collect(),
    }
}

fn expect_arity(op: &Primitive, vals: &[&Tensor], n: usize) -> Result<(), DiffError> {
    if vals.len() != n {
        return Err(DiffError::Arity {
            op: op.name(),
            expected: n,
            got: vals.len(),
        });
    }
    Ok(())
}

fn elementwise(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_vec(t.shape(), t.data().iter().map(|&v| f(v)).collect())
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_vec(
        a.shape(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Forward evaluation of a primitive without recording.
pub fn forward(op: &Primitive, vals: &[&Tensor]) -> Result<Tensor, DiffError> {
    use Primitive::*;
    let unary = matches!(
        op,
        Affine { .. }
            | Sigmoid
            | Tanh
            | Relu
            | Sin
            | Cos
            | Powi(_)
            | SliceCols { .. }
            | SliceRows { .. }
            | Transpose
            | Sum
    );
    if unary {
        expect_arity(op, vals, 1)?;
    } else if !matches!(op, ConcatCols | ConcatRows) {
        expect_arity(op, vals, 2)?;
    }
    let out = match op {
        MatMul => {
            let (a, b) = (vals[0], vals[1]);
            if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(mismatch(op, vals));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            Tensor::from_vec(&[m, n], matmul_raw(a.data(), b.data(), m, k, n))
        }
        Add | Sub | Mul | MeanSquaredDiff => {
            let (a, b) = (vals[0], vals[1]);
            if a.shape() != b.shape() {
                return Err(mismatch(op, vals));
            }
            match op {
                Add => zip_with(a, b, |x, y| x + y),
                Sub => zip_with(a, b, |x, y| x - y),
                Mul => zip_with(a, b, |x, y| x * y),
                _ => {
                    let s: f64 = a
                        .data()
                        .iter()
                        .zip(b.data())
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum();
                    Tensor::scalar(s / a.numel() as f64)
                }
            }
        }
        AddRow => {
            let (a, b) = (vals[0], vals[1]);
            if a.ndim() != 2 || b.numel() != a.cols() {
                return Err(mismatch(op, vals));
            }
            let n = a.cols();
            let data = a
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| x + b.data()[i % n])
                .collect();
            Tensor::from_vec(a.shape(), data)
        }
        Affine { scale, shift } => elementwise(vals[0], |x| scale * x + shift),
        Sigmoid => elementwise(vals[0], sigmoid),
        Tanh => elementwise(vals[0], f64::tanh),
        Relu => elementwise(vals[0], |x| x.max(0.0)),
        Sin => elementwise(vals[0], f64::sin),
        Cos => elementwise(vals[0], f64::cos),
        Powi(n) => elementwise(vals[0], |x| x.powi(*n)),
        ConcatCols => {
            if vals.is_empty() || vals.iter().any(|t| t.ndim() != 2) {
                return Err(mismatch(op, vals));
            }
            let rows = vals[0].rows();
            if vals.iter().any(|t| t.rows() != rows) {
                return Err(mismatch(op, vals));
            }
            let total: usize = vals.iter().map(|t| t.cols()).sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for t in vals {
                    data.extend_from_slice(t.row(r));
                }
            }
            Tensor::from_vec(&[rows, total], data)
        }
        ConcatRows => {
            if vals.is_empty() || vals.iter().any(|t| t.ndim() != 2) {
                return Err(mismatch(op, vals));
            }
            let cols = vals[0].cols();
            if vals.iter().any(|t| t.cols() != cols) {
                return Err(mismatch(op, vals));
            }
            let rows: usize = vals.iter().map(|t| t.rows()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for t in vals {
                data.extend_from_slice(t.data());
            }
            Tensor::from_vec(&[rows, cols], data)
        }
        SliceCols { start, end } => {
            let a = vals[0];
            if a.ndim() != 2 || start >= end || *end > a.cols() {
                return Err(mismatch(op, vals));
            }
            let mut data = Vec::with_capacity(a.rows() * (end - start));
            for r in 0..a.rows() {
                data.extend_from_slice(&a.row(r)[*start..*end]);
            }
            Tensor::from_vec(&[a.rows(), end - start], data)
        }
        SliceRows { start, end } => {
            let a = vals[0];
            if a.ndim() != 2 || start >= end || *end > a.rows() {
                return Err(mismatch(op, vals));
            }
            let c = a.cols();
            Tensor::from_vec(&[end - start, c], a.data()[start * c..end * c].to_vec())
        }
        Transpose => {
            if vals[0].ndim() != 2 {
                return Err(mismatch(op, vals));
            }
            vals[0].transpose()
        }
        Sum => Tensor::scalar(vals[0].data().iter().sum()),
    };
    Ok(out)
}

fn backward_rule(op: &Primitive, ins: &[&Tensor], out: &Tensor, g: &[f64]) -> Vec<Vec<f64>> {
    use Primitive::*;
    let ew = |x: &Tensor, f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        x.data().iter().zip(g).map(|(&v, &gi)| f(v, gi)).collect()
    };
    match op {
        MatMul => {
            let (a, b) = (ins[0], ins[1]);
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            vec![
                matmul_nt(g, b.data(), m, n, k),
                matmul_tn(a.data(), g, m, k, n),
            ]
        }
        Add => vec![g.to_vec(), g.to_vec()],
        Sub => vec![g.to_vec(), g.iter().map(|v| -v).collect()],
        Mul => vec![ew(ins[1], &|b, gi| b * gi), ew(ins[0], &|a, gi| a * gi)],
        AddRow => {
            let n = ins[0].cols();
            let mut gb = vec![0.0; n];
            for (i, gi) in g.iter().enumerate() {
                gb[i % n] += gi;
            }
            vec![g.to_vec(), gb]
        }
        Affine { scale, .. } => vec![g.iter().map(|v| v * scale).collect()],
        Sigmoid => vec![ew(out, &|y, gi| gi * y * (1.0 - y))],
        Tanh => vec![ew(out, &|y, gi| gi * (1.0 - y * y))],
        Relu => vec![ew(ins[0], &|x, gi| if x > 0.0 { gi } else { 0.0 })],
        Sin => vec![ew(ins[0], &|x, gi| gi * x.cos())],
        Cos => vec![ew(ins[0], &|x, gi| -gi * x.sin())],
        Powi(n) => {
            let n = *n;
            vec![ew(ins[0], &|x, gi| gi * f64::from(n) * x.powi(n - 1))]
        }
        ConcatCols => {
            let rows = out.rows();
            let total = out.cols();
            let mut offset = 0;
            ins.iter()
                .map(|t| {
                    let c = t.cols();
                    let mut part = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        part.extend_from_slice(&g[r * total + offset..r * total + offset + c]);
                    }
                    offset += c;
                    part
                })
                .collect()
        }
        ConcatRows => {
            let mut offset = 0;
            ins.iter()
                .map(|t| {
                    let part = g[offset..offset + t.numel()].to_vec();
                    offset += t.numel();
                    part
                })
                .collect()
        }
        SliceCols { start, end } => {
            let a = ins[0];
            let (cols, w) = (a.cols(), end - start);
            let mut ga = vec![0.0; a.numel()];
            for r in 0..a.rows() {
                ga[r * cols + start..r * cols + end].copy_from_slice(&g[r * w..(r + 1) * w]);
            }
            vec![ga]
        }
        SliceRows { start, end } => {
            let a = ins[0];
            let c = a.cols();
            let mut ga = vec![0.0; a.numel()];
            ga[start * c..end * c].copy_from_slice(g);
            vec![ga]
        }
        Transpose => {
            let gt = Tensor::from_vec(out.shape(), g.to_vec()).transpose();
            vec![gt.into_data()]
        }
        Sum => vec![vec![g[0]; ins[0].numel()]],
        MeanSquaredDiff => {
            let (a, b) = (ins[0], ins[1]);
            let c = 2.0 * g[0] / a.numel() as f64;
            let ga: Vec<f64> = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| c * (x - y))
                .collect();
            let gb = ga.iter().map(|v| -v).collect();
            vec![ga, gb]
        }
    }
}
