//! Stacked GRU encoder and shallow ReLU decoder.
//!
//! Batches are row-major: a batch of `B` sensor vectors is a `B×S` matrix and
//! weights multiply from the right (`x·W`). A batch of lag windows enters the
//! encoder as one time-major `(L·B)×S` matrix whose rows `t·B..(t+1)·B` hold
//! time step `t` of every window.

use rand::Rng as _;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{DiffError, Tape, Tensor, Var};
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("{what}: expected width {expected}, got {got}")]
    Width {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("window has {got} rows, encoder expects lag {expected}")]
    Lag { expected: usize, got: usize },
    #[error("invalid network configuration: {0}")]
    Config(String),
}

/// Layer widths and regularization of an encoder/decoder pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub sensors: usize,
    pub latent_dim: usize,
    pub gru_layers: usize,
    /// Width of the non-final GRU layers; defaults to `latent_dim`.
    #[serde(default)]
    pub gru_hidden: Option<usize>,
    pub decoder_widths: Vec<usize>,
    pub output: usize,
    pub dropout: f64,
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: &str| Err(NetError::Config(m.to_string()));
        if self.sensors == 0 || self.latent_dim == 0 || self.output == 0 {
            return bad("sensor count, latent dimension and output width must be positive");
        }
        if self.gru_layers == 0 {
            return bad("at least one GRU layer is required");
        }
        if self.gru_hidden == Some(0) || self.decoder_widths.contains(&0) {
            return bad("layer widths must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    fn gru_widths(&self) -> Vec<(usize, usize)> {
        let inner = self.gru_hidden.unwrap_or(self.latent_dim);
        (0..self.gru_layers)
            .map(|i| {
                let input = if i == 0 { self.sensors } else { inner };
                let hidden = if i + 1 == self.gru_layers {
                    self.latent_dim
                } else {
                    inner
                };
                (input, hidden)
            })
            .collect()
    }
}

/// Gate weights of one GRU layer. `w_*` act on the input, `u_*` on the
/// hidden state; biases are `1×hidden` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct GruLayer {
    pub w_u: Tensor,
    pub u_u: Tensor,
    pub b_u: Tensor,
    pub w_r: Tensor,
    pub u_r: Tensor,
    pub b_r: Tensor,
    pub w_h: Tensor,
    pub u_h: Tensor,
    pub b_h: Tensor,
}

pub const GRU_TENSOR_NAMES: [&str; 9] = [
    "w_u", "u_u", "b_u", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h",
];

impl GruLayer {
    pub fn input_width(&self) -> usize {
        self.w_u.rows()
    }

    pub fn hidden_width(&self) -> usize {
        self.u_u.rows()
    }

    pub fn tensors(&self) -> [&Tensor; 9] {
        [
            &self.w_u, &self.u_u, &self.b_u, &self.w_r, &self.u_r, &self.b_r, &self.w_h, &self.u_h,
            &self.b_h,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 9] {
        [
            &mut self.w_u,
            &mut self.u_u,
            &mut self.b_u,
            &mut self.w_r,
            &mut self.u_r,
            &mut self.b_r,
            &mut self.w_h,
            &mut self.u_h,
            &mut self.b_h,
        ]
    }

    /// Rebuilds a layer from tensors in [`GRU_TENSOR_NAMES`] order.
    pub fn from_tensors(t: Vec<Tensor>) -> Result<Self, NetError> {
        let [w_u, u_u, b_u, w_r, u_r, b_r, w_h, u_h, b_h]: [Tensor; 9] = t
            .try_into()
            .map_err(|_| NetError::Config("a GRU layer has exactly 9 tensors".into()))?;
        let layer = Self {
            w_u,
            u_u,
            b_u,
            w_r,
            u_r,
            b_r,
            w_h,
            u_h,
            b_h,
        };
        let (i, h) = (layer.input_width(), layer.hidden_width());
        for (k, t) in layer.tensors().iter().enumerate() {
            let expect = match k % 3 {
                0 => [i, h],
                1 => [h, h],
                _ => [1, h],
            };
            if t.shape() != expect {
                return Err(NetError::Width {
                    what: GRU_TENSOR_NAMES[k],
                    expected: expect[0] * expect[1],
                    got: t.numel(),
                });
            }
        }
        Ok(layer)
    }

    fn bind(&self, tape: &mut Tape) -> GruLayerVars {
        let v = self.tensors().map(|t| tape.leaf(t));
        GruLayerVars {
            w_u: v[0],
            u_u: v[1],
            b_u: v[2],
            w_r: v[3],
            u_r: v[4],
            b_r: v[5],
            w_h: v[6],
            u_h: v[7],
            b_h: v[8],
            input: self.input_width(),
            hidden: self.hidden_width(),
        }
    }
}

/// A [`GruLayer`] recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct GruLayerVars {
    pub w_u: Var,
    pub u_u: Var,
    pub b_u: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_h: Var,
    pub u_h: Var,
    pub b_h: Var,
    input: usize,
    hidden: usize,
}

impl GruLayerVars {
    pub fn all(&self) -> [Var; 9] {
        [
            self.w_u, self.u_u, self.b_u, self.w_r, self.u_r, self.b_r, self.w_h, self.u_h,
            self.b_h,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub layers: Vec<GruLayer>,
}

#[derive(Clone, Debug)]
pub struct GruVars {
    pub layers: Vec<GruLayerVars>,
}

impl GruVars {
    pub fn all(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|l| l.all()).collect()
    }
}

impl GruParams {
    pub fn latent_dim(&self) -> usize {
        self.layers.last().map_or(0, GruLayer::hidden_width)
    }

    pub fn sensors(&self) -> usize {
        self.layers.first().map_or(0, GruLayer::input_width)
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.tensors_mut())
            .collect()
    }

    pub fn bind(&self, tape: &mut Tape) -> GruVars {
        GruVars {
            layers: self.layers.iter().map(|l| l.bind(tape)).collect(),
        }
    }
}

/// One step of a GRU layer.
///
/// `u = σ(xW_u + hU_u + b_u)`, `r = σ(xW_r + hU_r + b_r)`,
/// `h̃ = tanh(xW_h + (r⊙h)U_h + b_h)`, `h' = (1−u)⊙h + u⊙h̃`.
pub fn gru_cell(tape: &mut Tape, x: Var, h: Var, layer: &GruLayerVars) -> Result<Var, NetError> {
    check_width(tape, x, layer.input, "gru input")?;
    check_width(tape, h, layer.hidden, "gru hidden state")?;
    let gate = |tape: &mut Tape, w: Var, u: Var, b: Var, hh: Var| -> Result<Var, DiffError> {
        let xi = tape.matmul(x, w)?;
        let hi = tape.matmul(hh, u)?;
        let s = tape.add(xi, hi)?;
        tape.add_row(s, b)
    };
    let u_pre = gate(tape, layer.w_u, layer.u_u, layer.b_u, h)?;
    let u = tape.sigmoid(u_pre)?;
    let r_pre = gate(tape, layer.w_r, layer.u_r, layer.b_r, h)?;
    let r = tape.sigmoid(r_pre)?;
    let rh = tape.mul(r, h)?;
    let c_pre = gate(tape, layer.w_h, layer.u_h, layer.b_h, rh)?;
    let cand = tape.tanh(c_pre)?;
    blend(tape, h, u, cand)
}

// h + u⊙(h̃ − h)
fn blend(tape: &mut Tape, h: Var, u: Var, cand: Var) -> Result<Var, NetError> {
    let diff = tape.sub(cand, h)?;
    let step = tape.mul(u, diff)?;
    Ok(tape.add(h, step)?)
}

fn check_width(tape: &Tape, v: Var, expected: usize, what: &'static str) -> Result<(), NetError> {
    let t = tape.value(v);
    if t.ndim() != 2 || t.cols() != expected {
        return Err(NetError::Width {
            what,
            expected,
            got: t.cols(),
        });
    }
    Ok(())
}

/// Runs one layer over a time-major stacked sequence, returning the stacked
/// hidden sequence `(L·B)×hidden`. Input projections for all steps are
/// computed in a single product.
fn run_layer(
    tape: &mut Tape,
    seq: Var,
    lag: usize,
    batch: usize,
    layer: &GruLayerVars,
) -> Result<Var, NetError> {
    let hid = layer.hidden;
    let w_cat = tape.concat_cols(&[layer.w_u, layer.w_r, layer.w_h])?;
    let b_cat = tape.concat_cols(&[layer.b_u, layer.b_r, layer.b_h])?;
    let proj = tape.matmul(seq, w_cat)?;
    let proj = tape.add_row(proj, b_cat)?;
    let u_cat = tape.concat_cols(&[layer.u_u, layer.u_r])?;
    let mut h = tape.constant(Tensor::zeros(&[batch, hid]));
    let mut outputs = Vec::with_capacity(lag);
    for t in 0..lag {
        let p = tape.slice_rows(proj, t * batch, (t + 1) * batch)?;
        let hu = tape.matmul(h, u_cat)?;
        let pu = tape.slice_cols(p, 0, 2 * hid)?;
        let gates_pre = tape.add(pu, hu)?;
        let gates = tape.sigmoid(gates_pre)?;
        let u = tape.slice_cols(gates, 0, hid)?;
        let r = tape.slice_cols(gates, hid, 2 * hid)?;
        let rh = tape.mul(r, h)?;
        let ch = tape.matmul(rh, layer.u_h)?;
        let pc = tape.slice_cols(p, 2 * hid, 3 * hid)?;
        let c_pre = tape.add(pc, ch)?;
        let cand = tape.tanh(c_pre)?;
        h = blend(tape, h, u, cand)?;
        outputs.push(h);
    }
    if outputs.len() == 1 {
        return Ok(outputs[0]);
    }
    Ok(tape.concat_rows(&outputs)?)
}

/// Encodes a batch of lag windows into the final top-layer hidden states.
///
/// `windows` is `(lag·batch)×sensors`, time-major. Returns `batch×latent`.
pub fn encode(tape: &mut Tape, windows: Var, lag: usize, gru: &GruVars) -> Result<Var, NetError> {
    let first = gru
        .layers
        .first()
        .ok_or_else(|| NetError::Config("encoder has no layers".into()))?;
    check_width(tape, windows, first.input, "encoder input")?;
    let rows = tape.value(windows).rows();
    if lag == 0 || !rows.is_multiple_of(lag) {
        return Err(NetError::Lag {
            expected: lag,
            got: rows,
        });
    }
    let batch = rows / lag;
    let mut seq = windows;
    for layer in &gru.layers {
        seq = run_layer(tape, seq, lag, batch, layer)?;
    }
    if lag == 1 {
        return Ok(seq);
    }
    Ok(tape.slice_rows(seq, (lag - 1) * batch, lag * batch)?)
}

/// Encodes a single `lag×sensors` window into a latent row vector.
pub fn encode_window(
    tape: &mut Tape,
    window: &Tensor,
    lag: usize,
    gru: &GruVars,
) -> Result<Var, NetError> {
    if window.rows() != lag || window.ndim() != 2 {
        return Err(NetError::Lag {
            expected: lag,
            got: window.rows(),
        });
    }
    let w = tape.constant(window.clone());
    encode(tape, w, lag, gru)
}

/// Affine layer `x·W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams {
    pub layers: Vec<Dense>,
    pub dropout: f64,
}

#[derive(Clone, Debug)]
pub struct DecoderVars {
    pub layers: Vec<(Var, Var)>,
    dropout: f64,
    input: usize,
}

impl DecoderVars {
    pub fn all(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

impl DecoderParams {
    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.w.rows())
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.cols())
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.w, &mut l.b])
            .collect()
    }

    pub fn bind(&self, tape: &mut Tape) -> DecoderVars {
        DecoderVars {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.leaf(&l.w), tape.leaf(&l.b)))
                .collect(),
            dropout: self.dropout,
            input: self.input_width(),
        }
    }
}

/// Decodes `batch×latent` states into `batch×N` fields.
///
/// Hidden layers are affine → ReLU → dropout. Dropout is inverted (kept units
/// scaled by `1/(1−rate)`) and only applied when `train` supplies an RNG.
pub fn decode(
    tape: &mut Tape,
    z: Var,
    dec: &DecoderVars,
    train: Option<&mut Rng>,
) -> Result<Var, NetError> {
    check_width(tape, z, dec.input, "decoder input")?;
    let mut rng = train;
    let mut x = z;
    let last = dec.layers.len() - 1;
    for (i, &(w, b)) in dec.layers.iter().enumerate() {
        let xw = tape.matmul(x, w)?;
        x = tape.add_row(xw, b)?;
        if i == last {
            break;
        }
        x = tape.relu(x)?;
        if let Some(r) = rng.as_deref_mut() {
            if dec.dropout > 0.0 {
                let shape = tape.value(x).shape().to_vec();
                let keep = 1.0 - dec.dropout;
                let n: usize = shape.iter().product();
                let mask = (0..n)
                    .map(|_| {
                        if r.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let m = tape.constant(Tensor::from_vec(&shape, mask));
                x = tape.mul(x, m)?;
            }
        }
    }
    Ok(x)
}

fn uniform_tensor(rows: usize, cols: usize, fan_in: usize, rng: &mut Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::matrix(rows, cols, data).trainable()
}

/// Draws every weight from `U(−1/√fan_in, 1/√fan_in)`.
pub fn init_params(cfg: &NetConfig, rng: &mut Rng) -> Result<(GruParams, DecoderParams), NetError> {
    cfg.validate()?;
    let layers = cfg
        .gru_widths()
        .into_iter()
        .map(|(i, h)| GruLayer {
            w_u: uniform_tensor(i, h, i, rng),
            u_u: uniform_tensor(h, h, h, rng),
            b_u: uniform_tensor(1, h, h, rng),
            w_r: uniform_tensor(i, h, i, rng),
            u_r: uniform_tensor(h, h, h, rng),
            b_r: uniform_tensor(1, h, h, rng),
            w_h: uniform_tensor(i, h, i, rng),
            u_h: uniform_tensor(h, h, h, rng),
            b_h: uniform_tensor(1, h, h, rng),
        })
        .collect();
    let mut widths = vec![cfg.latent_dim];
    widths.extend(&cfg.decoder_widths);
    widths.push(cfg.output);
    let dense = widths
        .windows(2)
        .map(|w| Dense {
            w: uniform_tensor(w[0], w[1], w[0], rng),
            b: uniform_tensor(1, w[1], w[0], rng),
        })
        .collect();
    Ok((
        GruParams { layers },
        DecoderParams {
            layers: dense,
            dropout: cfg.dropout,
        },
    ))
}
