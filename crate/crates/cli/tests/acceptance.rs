//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion;
//! with `SHRED_ACCEPTANCE_STRICT` set, exits nonzero if any fails.
//!
//! The slow criteria drive the `shred` binary the same way a user would; the
//! metrics are then recomputed in-process from the written artifacts.

use std::f64::consts::PI;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::Rng as _;
use serde_json::{json, Value};
use shred_core::data::{
    gen_modal_field, gen_pendulum, load_field, read_field, select_sensors, write_field, Field,
    ModeSpec, PendulumParams, SensorSet, Split, SplitFractions, WindowedDataset,
};
use shred_core::diff::{finite_diff_check, DiffError, Tape, Tensor, Var};
use shred_core::eval::{forecast, horizon_mse};
use shred_core::nets::{decode, encode, init_params, DecoderParams, GruParams, NetConfig};
use shred_core::rng::{rng_for, Rng};
use shred_core::shred::{
    combined_loss, load_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, Dynamics, Mode,
    ShredModel, TrainConfig, Trainer,
};
use shred_core::sindy::{
    fit_stlsq, koopman_matrix, koopman_sequence_loss, sindy_cell, LibrarySpec, SindyModel,
    StlsqOptions, TrigKind, TrigTerm,
};

type Outcome = Result<String, String>;

fn shred() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_shred"));
    c.env("RUST_LOG", "warn");
    c
}

/// Runs the binary, returning its exit code and stdout.
fn run(args: &[&str]) -> (i32, String) {
    let out = shred().args(args).output().expect("spawn shred");
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    if !out.status.success() {
        eprintln!(
            "shred {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        );
    }
    (out.status.code().unwrap_or(-1), stdout)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(
        &fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display())),
    )
    .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn random_matrix(rng: &mut Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect(),
    )
}

/// Entries of magnitude in [0.1, 1] with random sign, away from ReLU's kink.
fn off_zero(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| {
                let m = rng.random_range(0.1..1.0);
                if rng.random::<bool>() {
                    m
                } else {
                    -m
                }
            })
            .collect(),
    )
}

/// `Σ out ⊙ w` for a fixed random weight, so every output entry matters.
fn weighted_sum(tape: &mut Tape, out: Var, w: &Tensor) -> Result<Var, DiffError> {
    let wv = tape.constant(w.clone());
    let m = tape.mul(out, wv)?;
    tape.sum(m)
}

const PRIMITIVES: usize = 21;

/// One randomized check of primitive `op`.
fn primitive_trial(op: usize, rng: &mut Rng) -> f64 {
    let (r, c) = (rng.random_range(1..5), rng.random_range(1..5));
    let a = random_matrix(rng, r, c, -1.5, 1.5);
    let b = random_matrix(rng, r, c, -1.5, 1.5);
    let h = 1e-6;
    macro_rules! check {
        ($params:expr, $out_shape:expr, |$t:ident, $v:ident| $body:expr) => {{
            let (orows, ocols) = $out_shape;
            let w = random_matrix(rng, orows, ocols, -1.0, 1.0);
            finite_diff_check(
                |$t: &mut Tape, $v: &[Var]| {
                    let out = $body?;
                    weighted_sum($t, out, &w)
                },
                &$params,
                h,
            )
        }};
    }
    match op {
        0 => {
            let n = rng.random_range(1..5);
            let b = random_matrix(rng, c, n, -1.5, 1.5);
            check!([a, b], (r, n), |t, v| t.matmul(v[0], v[1]))
        }
        1 => check!([a, b], (r, c), |t, v| t.add(v[0], v[1])),
        2 => check!([a, b], (r, c), |t, v| t.sub(v[0], v[1])),
        3 => check!([a, b], (r, c), |t, v| t.mul(v[0], v[1])),
        4 => {
            let row = random_matrix(rng, 1, c, -1.0, 1.0);
            check!([a, row], (r, c), |t, v| t.add_row(v[0], v[1]))
        }
        5 => check!([a], (r, c), |t, v| t.affine(v[0], 1.7, -0.3)),
        6 => check!([a], (r, c), |t, v| t.scale(v[0], -2.5)),
        7 => check!([a], (r, c), |t, v| t.sigmoid(v[0])),
        8 => check!([a], (r, c), |t, v| t.tanh(v[0])),
        9 => {
            let a = off_zero(rng, r, c);
            check!([a], (r, c), |t, v| t.relu(v[0]))
        }
        10 => check!([a], (r, c), |t, v| t.sin(v[0])),
        11 => check!([a], (r, c), |t, v| t.cos(v[0])),
        12 => check!([a], (r, c), |t, v| t.powi(v[0], 3)),
        13 => {
            let b = random_matrix(rng, r, 2, -1.0, 1.0);
            check!([a, b], (r, c + 2), |t, v| t.concat_cols(&[v[0], v[1]]))
        }
        14 => check!([a, b], (2 * r, c), |t, v| t.concat_rows(&[v[0], v[1]])),
        15 => {
            let a = random_matrix(rng, r, 4, -1.0, 1.0);
            check!([a], (r, 2), |t, v| t.slice_cols(v[0], 1, 3))
        }
        16 => {
            let a = random_matrix(rng, 4, c, -1.0, 1.0);
            check!([a], (2, c), |t, v| t.slice_rows(v[0], 2, 4))
        }
        17 => check!([a], (c, r), |t, v| t.transpose(v[0])),
        18 | 19 => {
            // scalar outputs; a random factor stands in for the weight
            let w = rng.random_range(0.5..2.0);
            finite_diff_check(
                |t: &mut Tape, v: &[Var]| {
                    let out = if op == 18 {
                        t.sum(v[0])?
                    } else {
                        t.mse(v[0], v[1])?
                    };
                    t.scale(out, w)
                },
                &[a, b],
                h,
            )
        }
        _ => {
            // composition of several primitives
            let m = random_matrix(rng, c, c, -1.0, 1.0);
            check!([a, m], (r, c), |t, v| {
                let x = t.matmul(v[0], v[1])?;
                let s = t.sin(x)?;
                let q = t.mul(s, v[0])?;
                t.tanh(q)
            })
        }
    }
}

/// Central differences over a parameter list rebuilt by `rebind` on each
/// evaluation; `eval` returns the loss and, on request, analytic gradients.
fn parameter_check(
    params: &[Tensor],
    eval: impl Fn(&[Tensor], bool) -> (f64, Option<Vec<Vec<f64>>>),
) -> f64 {
    let (_, grads) = eval(params, true);
    let grads = grads.expect("gradients requested");
    let h = 1e-6;
    let mut probe: Vec<Tensor> = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        for j in 0..params[i].numel() {
            let orig = params[i].data()[j];
            probe[i].data_mut()[j] = orig + h;
            let up = eval(&probe, false).0;
            probe[i].data_mut()[j] = orig - h;
            let down = eval(&probe, false).0;
            probe[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = (grads[i][j] - numeric).abs() / numeric.abs().max(1.0);
            if !err.is_finite() {
                return f64::INFINITY;
            }
            worst = worst.max(err);
        }
    }
    worst
}

fn gather(grads: &shred_core::diff::Gradients, vars: &[Var], params: &[Tensor]) -> Vec<Vec<f64>> {
    vars.iter()
        .zip(params)
        .map(|(&v, p)| grads.get(v).map_or(vec![0.0; p.numel()], Tensor::into_data))
        .collect()
}

fn net_trial(kind: usize, rng: &mut Rng) -> f64 {
    let (sensors, latent, lag, batch) = (3, 2, 4, 3);
    let cfg = NetConfig {
        sensors,
        latent_dim: latent,
        gru_layers: 2,
        gru_hidden: Some(3),
        decoder_widths: vec![4],
        output: 5,
        dropout: 0.0,
    };
    let (gru, dec) = init_params(&cfg, rng).expect("init");
    let x = random_matrix(rng, lag * batch, sensors, -1.0, 1.0);
    if kind == 0 {
        let w = random_matrix(rng, batch, latent, -1.0, 1.0);
        let params: Vec<Tensor> = gru.tensors().into_iter().cloned().collect();
        parameter_check(&params, |ps, want| {
            let mut g: GruParams = gru.clone();
            for (dst, src) in g.tensors_mut().into_iter().zip(ps) {
                dst.data_mut().copy_from_slice(src.data());
            }
            let mut tape = Tape::new();
            let gv = g.bind(&mut tape);
            let xv = tape.constant(x.clone());
            let hz = encode(&mut tape, xv, lag, &gv).expect("encode");
            let l = weighted_sum(&mut tape, hz, &w).expect("loss");
            let value = tape.value(l).item().unwrap_or(f64::NAN);
            let grads = want.then(|| gather(&tape.backward(l).expect("backward"), &gv.all(), ps));
            (value, grads)
        })
    } else {
        let z = random_matrix(rng, batch, latent, -1.0, 1.0);
        let w = random_matrix(rng, batch, 5, -1.0, 1.0);
        let params: Vec<Tensor> = dec.tensors().into_iter().cloned().collect();
        parameter_check(&params, |ps, want| {
            let mut d: DecoderParams = dec.clone();
            for (dst, src) in d.tensors_mut().into_iter().zip(ps) {
                dst.data_mut().copy_from_slice(src.data());
            }
            let mut tape = Tape::new();
            let dv = d.bind(&mut tape);
            let zv = tape.constant(z.clone());
            let y = decode(&mut tape, zv, &dv, None).expect("decode");
            let l = weighted_sum(&mut tape, y, &w).expect("loss");
            let value = tape.value(l).item().unwrap_or(f64::NAN);
            let grads = want.then(|| gather(&tape.backward(l).expect("backward"), &dv.all(), ps));
            (value, grads)
        })
    }
}

fn sindy_trial(kind: usize, rng: &mut Rng) -> f64 {
    let d = 2;
    let spec = LibrarySpec {
        dim: d,
        include_constant: true,
        poly_degree: 2,
        trig: vec![
            TrigTerm {
                kind: TrigKind::Sin,
                freq: 1.0,
            },
            TrigTerm {
                kind: TrigKind::Cos,
                freq: 2.0,
            },
        ],
    };
    let z = random_matrix(rng, 4, d, -1.0, 1.0);
    let h = 1e-6;
    match kind {
        0 => {
            let w = random_matrix(rng, 4, spec.len(), -1.0, 1.0);
            finite_diff_check(
                |t: &mut Tape, v: &[Var]| {
                    let theta = spec
                        .evaluate_on_tape(t, v[0])
                        .map_err(|_| DiffError::EmptyTape)?;
                    weighted_sum(t, theta, &w)
                },
                &[z],
                h,
            )
        }
        1 => {
            let xi = random_matrix(rng, spec.len(), d, -0.5, 0.5);
            let w = random_matrix(rng, 4, d, -1.0, 1.0);
            finite_diff_check(
                |t: &mut Tape, v: &[Var]| {
                    let out = sindy_cell(t, v[0], v[1], &spec, 0.02, 5)
                        .map_err(|_| DiffError::EmptyTape)?;
                    weighted_sum(t, out, &w)
                },
                &[z, xi],
                h,
            )
        }
        2 => {
            // affine library: the cell takes the matrix-power path
            let affine = LibrarySpec::polynomial(d, 1, true);
            let xi = random_matrix(rng, affine.len(), d, -2.0, 2.0);
            let w = random_matrix(rng, 4, d, -1.0, 1.0);
            finite_diff_check(
                |t: &mut Tape, v: &[Var]| {
                    let out = sindy_cell(t, v[0], v[1], &affine, 0.01, 10)
                        .map_err(|_| DiffError::EmptyTape)?;
                    weighted_sum(t, out, &w)
                },
                &[z, xi],
                h,
            )
        }
        _ => {
            let seq = random_matrix(rng, 8, d, -1.0, 1.0);
            let k = random_matrix(rng, d, d, -0.8, 0.8);
            let m_max = rng.random_range(1..4);
            finite_diff_check(
                |t: &mut Tape, v: &[Var]| {
                    koopman_sequence_loss(t, v[0], v[1], m_max).map_err(|_| DiffError::EmptyTape)
                },
                &[seq, k],
                h,
            )
        }
    }
}

fn tiny_dataset(lag: usize) -> WindowedDataset {
    let modes = [ModeSpec {
        pattern: 1,
        amplitude: 1.0,
        omega: 2.0 * PI,
        phase: 0.0,
        growth: 0.0,
    }];
    let (f, _) = gen_modal_field((4, 4), &modes, 60, 1.0 / 20.0, 0.01, 1).expect("field");
    let f = f.standardize().expect("scale");
    let s = select_sensors(&f, 3, 2, true).expect("sensors");
    WindowedDataset::new(&f, &s, lag, SplitFractions::default()).expect("dataset")
}

fn combined_trial(mode: Mode, seed: u64) -> f64 {
    let data = tiny_dataset(3);
    let mut cfg = TrainConfig::with_latent(2);
    cfg.lag = 3;
    cfg.gru_layers = 2;
    cfg.gru_hidden = Some(3);
    cfg.decoder_widths = vec![4];
    cfg.dropout = 0.0;
    cfg.ensemble_size = 2;
    cfg.library.poly_degree = 2;
    cfg.dt = 0.05;
    cfg.mini_steps = 3;
    cfg.mode = mode;
    cfg.koopman_m_max = 2;
    cfg.seed = seed;
    let mut model = ShredModel::new(cfg, 3, 16).expect("model");
    let mut rng = rng_for(seed, 99);
    if let Dynamics::Sindy(e) = &mut model.dynamics {
        for m in &mut e.models {
            for x in m.xi.data_mut() {
                *x = rng.random_range(-0.5..0.5);
            }
        }
        e.models[1].mask[1] = false;
        model.apply_masks();
    }
    let starts = [0, 5, 13];
    let params: Vec<Tensor> = model.params().into_iter().cloned().collect();
    parameter_check(&params, |ps, want| {
        let mut m = model.clone();
        for (dst, src) in m.params_mut().into_iter().zip(ps) {
            dst.data_mut().copy_from_slice(src.data());
        }
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape);
        let l = combined_loss(&mut tape, &m, &vars, &data, &starts, None).expect("loss");
        let value = l.breakdown(&tape).total;
        let grads =
            want.then(|| gather(&tape.backward(l.total).expect("backward"), &vars.all(), ps));
        (value, grads)
    })
}

fn c1_gradients() -> Outcome {
    let mut rng = rng_for(2024, 0);
    let mut trials = 0usize;
    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();
    let mut record = |name: String, err: f64| {
        trials += 1;
        if !(err <= worst) {
            worst = err;
            worst_at = name;
        }
    };
    for round in 0..5 {
        for op in 0..PRIMITIVES + 1 {
            record(
                format!("primitive {op} round {round}"),
                primitive_trial(op, &mut rng),
            );
        }
        for kind in 0..2 {
            record(
                format!("network {kind} round {round}"),
                net_trial(kind, &mut rng),
            );
        }
        for kind in 0..4 {
            record(
                format!("sindy {kind} round {round}"),
                sindy_trial(kind, &mut rng),
            );
        }
    }
    for seed in 0..2 {
        record(
            format!("combined sindy {seed}"),
            combined_trial(Mode::Sindy, seed),
        );
        record(
            format!("combined koopman {seed}"),
            combined_trial(Mode::Koopman, seed),
        );
    }
    let msg = format!("{trials} trials, worst relative error {worst:.2e} ({worst_at})");
    if trials >= 100 && worst < 1e-5 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Fits with exact derivatives and compares against the generating matrix.
fn stlsq_case(a: &[Vec<f64>], z0: &[f64], degree: u32) -> (f64, bool) {
    let d = a.len();
    let spec = LibrarySpec::polynomial(d, degree, true);
    let deriv = |z: &[f64]| -> Vec<f64> {
        (0..d)
            .map(|i| (0..d).map(|j| a[i][j] * z[j]).sum())
            .collect()
    };
    // RK4 trajectory; derivatives are evaluated exactly at the visited states
    let (steps, h) = (300, 0.01);
    let mut z = z0.to_vec();
    let mut states = Vec::with_capacity(steps * d);
    let mut derivs = Vec::with_capacity(steps * d);
    for _ in 0..steps {
        states.extend_from_slice(&z);
        derivs.extend(deriv(&z));
        let k1 = deriv(&z);
        let s2: Vec<f64> = (0..d).map(|i| z[i] + 0.5 * h * k1[i]).collect();
        let k2 = deriv(&s2);
        let s3: Vec<f64> = (0..d).map(|i| z[i] + 0.5 * h * k2[i]).collect();
        let k3 = deriv(&s3);
        let s4: Vec<f64> = (0..d).map(|i| z[i] + h * k3[i]).collect();
        let k4 = deriv(&s4);
        for i in 0..d {
            z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    let states = Tensor::matrix(steps, d, states);
    let derivs = Tensor::matrix(steps, d, derivs);
    let model = fit_stlsq(
        &states,
        &derivs,
        &spec,
        StlsqOptions {
            threshold: 0.05,
            max_iter: 10,
            ridge: 0.0,
            dt: h,
            k: 1,
        },
    )
    .expect("fit");
    let mut expected = vec![0.0; spec.len() * d];
    for (j, row) in spec.linear_rows().into_iter().enumerate() {
        for i in 0..d {
            expected[row * d + i] = a[i][j];
        }
    }
    let mut err: f64 = 0.0;
    let mut support = true;
    for (idx, (&x, &e)) in model.xi.data().iter().zip(&expected).enumerate() {
        err = err.max((x - e).abs());
        support &= model.mask[idx] == (e != 0.0);
    }
    (err, support)
}

fn c2_stlsq() -> Outcome {
    let mut rng = rng_for(17, 0);
    let mut random = vec![vec![0.0; 3]; 3];
    for row in &mut random {
        for x in row.iter_mut() {
            let m: f64 = rng.random_range(0.3..1.0);
            *x = if rng.random::<bool>() { m } else { -m };
        }
    }
    let cases = [
        ("decay", vec![vec![-2.0]], vec![1.5]),
        (
            "damped oscillator",
            vec![vec![-0.1, 1.0], vec![-1.0, -0.1]],
            vec![1.0, 0.0],
        ),
        ("random 3-D", random, vec![0.5, -0.3, 0.8]),
    ];
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, a, z0) in cases {
        let (err, support) = stlsq_case(&a, &z0, 2);
        ok &= err < 1e-6 && support;
        parts.push(format!(
            "{name}: max error {err:.1e}, support {}",
            if support { "exact" } else { "WRONG" }
        ));
    }
    let msg = parts.join("; ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn euler_cell(k: usize) -> f64 {
    let spec = LibrarySpec::polynomial(1, 1, false);
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::matrix(1, 1, vec![1.0]));
    let xi = tape.constant(Tensor::matrix(1, 1, vec![1.0]));
    let out = sindy_cell(&mut tape, z, xi, &spec, 0.1 / k as f64, k).expect("cell");
    tape.value(out).data()[0]
}

fn c3_euler() -> Outcome {
    let v = euler_cell(10);
    // compound-interest closed form
    let closed = (1.0f64 + 0.1 / 10.0).powi(10);
    let model = SindyModel::from_coefficients(
        LibrarySpec::polynomial(1, 1, false),
        Tensor::matrix(1, 1, vec![1.0]),
        0.1,
        10,
    )
    .expect("model");
    let stepped = model.step(&[1.0]).expect("step")[0];
    let gap = |x: f64| 0.1f64.exp() - x;
    let ratio = gap(euler_cell(20)) / gap(v);
    let msg = format!(
        "cell {v:.10} (closed form {closed:.10}, model step {stepped:.10}); gap ratio {ratio:.4}"
    );
    if (v - 1.1046221).abs() <= 1e-7
        && (v - closed).abs() < 1e-14
        && (v - stepped).abs() < 1e-14
        && (0.45..=0.55).contains(&ratio)
    {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Shared state between the end-to-end criteria.
struct Workspace {
    root: PathBuf,
    field: PathBuf,
    sindy_run: Option<PathBuf>,
}

fn modal_config(ws: &Workspace, out: &str, train: Value) -> PathBuf {
    let cfg = json!({
        "field": ws.field,
        "output_dir": ws.root.join(out),
        "sensors": 25,
        "sensor_seed": 1,
        "log_every": 100,
        "train": train,
    });
    let path = ws.root.join(format!("{out}.json"));
    fs::write(&path, serde_json::to_string_pretty(&cfg).expect("json")).expect("write config");
    path
}

/// Settings for the two-mode discovery run: affine decoder, ten-member
/// ensemble with thresholds 0.1 to 1.0 pruned every 100 epochs.
fn discovery_train_config() -> Value {
    json!({
        "latent_dim": 4,
        "lag": 10,
        "gru_layers": 2,
        "gru_hidden": 16,
        "decoder_widths": [],
        "epochs": 1500,
        "batch_size": 128,
        "lr": 1e-2,
        "weight_decay": 1e-2,
        "dropout": 0.0,
        "dt": 1.0 / 52.0,
        "mini_steps": 100,
        "threshold_interval": 100,
        "threshold_low": 0.1,
        "threshold_high": 1.0,
        "ensemble_size": 10,
        "library": { "include_constant": true, "poly_degree": 1 },
        "sindy_weight": 1.0,
        "seed": 3,
    })
}

/// Both target frequencies must have a model frequency within 5%.
fn frequencies_match(found: &[f64], targets: &[f64]) -> bool {
    targets
        .iter()
        .all(|t| found.iter().any(|f| ((f - t) / t).abs() < 0.05))
}

fn dataset_of(run: &Path, field: &Path) -> (Checkpoint, Field, WindowedDataset) {
    let ck = load_checkpoint(run.join("checkpoint.shrd")).expect("checkpoint");
    let extra = &ck.extra;
    let scale = (
        extra["scale"][0].as_f64().expect("scale"),
        extra["scale"][1].as_f64().expect("scale"),
    );
    let f = load_field(field)
        .expect("field")
        .apply_scale(scale)
        .expect("scale");
    let idx: Vec<usize> = serde_json::from_value(extra["sensors"].clone()).expect("sensors");
    let s = SensorSet::new(idx, f.points(), None).expect("sensor set");
    let ds =
        WindowedDataset::new(&f, &s, ck.model.config.lag, ck.model.config.splits).expect("dataset");
    (ck, f, ds)
}

fn c4_discovery(ws: &mut Workspace) -> Outcome {
    let gen = ws.root.join("modal");
    let (code, _) = run(&[
        "generate",
        "modal",
        "--modes",
        "2",
        "--grid",
        "20x20",
        "--frames",
        "3000",
        "--dt",
        "1/52",
        "--sigma",
        "0.01",
        "--seed",
        "7",
        "--out",
        p(&gen),
    ]);
    if code != 0 {
        return Err(format!("generate exited {code}"));
    }
    ws.field = gen.join("field.fld");
    let cfg = modal_config(ws, "sindy", discovery_train_config());
    let (code, stdout) = run(&["train", "--config", p(&cfg)]);
    if code != 0 {
        return Err(format!("train exited {code}"));
    }
    let run_dir = ws.root.join("sindy");
    ws.sindy_run = Some(run_dir.clone());
    let (ck, field, ds) = dataset_of(&run_dir, &ws.field);
    let model = &ck.model;
    let var = field.variance();

    let test: Vec<usize> = ds.splits.test.clone().collect();
    let z = model.encode(&ds.batch_inputs(&test)).expect("encode");
    let rec = model.decode(&z).expect("decode");
    let targets = ds.batch_targets(&test);
    let recon = rec
        .data()
        .iter()
        .zip(targets.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / rec.numel() as f64
        / var;

    let discovered = read_json(&run_dir.join("discovered.json"));
    let member = discovered["discovered"]["member"].as_u64().expect("member") as usize;
    let freqs: Vec<f64> =
        serde_json::from_value(discovered["frequencies_physical"].clone()).expect("frequencies");
    let freq_ok = frequencies_match(&freqs, &[2.0 * PI, 4.0 * PI]);

    let b0 = ds.splits.test.start;
    let tf = ds.target_frame(b0);
    let rollout = match forecast(model, member, &ds.window(b0), 500) {
        Ok(fc) => {
            let truth = field.slice_frames(tf, tf + 501).expect("truth").data;
            horizon_mse(&fc.fields, &truth, &[0..501])
                .expect("mse")
                .total
                / var
        }
        Err(_) => f64::INFINITY,
    };
    let summary = stdout.lines().last().unwrap_or_default().to_string();
    let msg = format!(
        "test reconstruction {:.2}% of variance; frequencies/2π {:?}; 500-step rollout {:.2}% of variance; {summary}",
        100.0 * recon,
        freqs.iter().map(|w| (w / (2.0 * PI) * 1e4).round() / 1e4).collect::<Vec<_>>(),
        100.0 * rollout
    );
    if recon < 0.05 && freq_ok && rollout < 0.10 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c5_koopman(ws: &Workspace) -> Outcome {
    let Some(sindy_run) = &ws.sindy_run else {
        return Err("needs the discovery run".into());
    };
    let mut train = discovery_train_config();
    train["epochs"] = 600.into();
    train["sindy_weight"] = 100.0.into();
    train["ensemble_size"] = 1.into();
    let cfg = modal_config(ws, "koopman", train);
    let (code, _) = run(&["train", "--config", p(&cfg), "--mode", "koopman"]);
    if code != 0 {
        return Err(format!("koopman train exited {code}"));
    }
    let discovered = read_json(&ws.root.join("koopman").join("discovered.json"));
    let mode_ok = discovered["mode"] == "koopman";
    let freqs: Vec<f64> =
        serde_json::from_value(discovered["frequencies_physical"].clone()).expect("frequencies");
    let freq_ok = frequencies_match(&freqs, &[2.0 * PI, 4.0 * PI]);

    // frozen latents from the trained discovery encoder
    let (ck, _, ds) = dataset_of(sindy_run, &ws.field);
    let mut cfg = ck.model.config.clone();
    cfg.library.include_constant = false;
    cfg.library.poly_degree = 1;
    cfg.ensemble_size = 1;
    let (sensors, output) = (ck.model.sensors(), ck.model.output());
    let mut sindy = ShredModel::new(cfg.clone(), sensors, output).expect("model");
    sindy.gru = ck.model.gru.clone();
    sindy.decoder = ck.model.decoder.clone();
    let xi = Tensor::matrix(
        4,
        4,
        vec![
            0.0, -6.2, 0.3, 0.0, 6.3, 0.0, 0.0, -0.4, -0.2, 0.0, 0.0, -12.5, 0.0, 0.5, 12.6, 0.0,
        ],
    );
    let member = SindyModel::from_coefficients(
        LibrarySpec::polynomial(4, 1, false),
        xi,
        cfg.dt,
        cfg.mini_steps,
    )
    .expect("member");
    if let Dynamics::Sindy(e) = &mut sindy.dynamics {
        e.models[0].xi.data_mut().copy_from_slice(member.xi.data());
    }
    let mut kcfg = cfg.clone();
    kcfg.mode = Mode::Koopman;
    kcfg.koopman_m_max = 1;
    let mut koop = ShredModel::new(kcfg, sensors, output).expect("koopman model");
    koop.gru = sindy.gru.clone();
    koop.decoder = sindy.decoder.clone();
    koop.dynamics = Dynamics::Koopman {
        k: koopman_matrix(&member).expect("K").trainable(),
    };
    let starts = ds.chain_starts(Split::Train, 2, 0.0);
    let starts = &starts[..256.min(starts.len())];
    let dyn_loss = |m: &ShredModel| {
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape);
        combined_loss(&mut tape, m, &vars, &ds, starts, None)
            .expect("loss")
            .breakdown(&tape)
            .dynamics
    };
    let (a, b) = (dyn_loss(&sindy), dyn_loss(&koop));
    let diff = (a - b).abs();
    let msg = format!(
        "frequencies/2π {:?}; one-step loss {a:.6e} vs {b:.6e} (difference {diff:.1e})",
        freqs
            .iter()
            .map(|w| (w / (2.0 * PI) * 1e4).round() / 1e4)
            .collect::<Vec<_>>()
    );
    if mode_ok && freq_ok && diff < 1e-10 && a > 0.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c6_scaling(ws: &Workspace) -> Outcome {
    let out = ws.root.join("thm1");
    let (code, stdout) = run(&["validate-theory", "--suite", "thm1", "--out", p(&out)]);
    let r = read_json(&out.join("report.json"));
    let slope = r["n_slope"]["slope"].as_f64().unwrap_or(f64::NAN);
    let linear = r["linear_in_noise"].as_bool() == Some(true);
    let msg = format!("exit {code}; {}", stdout.lines().next().unwrap_or_default());
    if code == 0 && (-0.6..=-0.4).contains(&slope) && linear {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c7_sine(ws: &Workspace) -> Outcome {
    let out = ws.root.join("sine");
    let (code, stdout) = run(&["validate-theory", "--suite", "sine", "--out", p(&out)]);
    let r = read_json(&out.join("report.json"));
    let (s, g) = (
        r["sindy_mse"].as_f64().unwrap_or(f64::NAN),
        r["gru_mse"].as_f64().unwrap_or(f64::NAN),
    );
    let c = r["sin_coefficient"].as_f64().unwrap_or(f64::NAN);
    let ratio = r["horizon_ratio"].as_f64().unwrap_or(0.0);
    let msg = format!("exit {code}; {}", stdout.lines().next().unwrap_or_default());
    if code == 0 && s < g && (c + 1.0).abs() < 1e-3 && ratio >= 2.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c8_landscape(ws: &Workspace) -> Outcome {
    let Some(run_dir) = &ws.sindy_run else {
        return Err("needs the discovery run".into());
    };
    let out = ws.root.join("landscape");
    let ck = run_dir.join("checkpoint.shrd");
    let (code, stdout) = run(&[
        "landscape",
        "--checkpoint",
        p(&ck),
        "--field",
        p(&ws.field),
        "--alpha",
        "5",
        "--grid",
        "21",
        "--seeds",
        "1,2",
        "--segments",
        "100",
        "--points",
        "5",
        "--out",
        p(&out),
    ]);
    if code != 0 {
        return Err(format!("landscape exited {code}"));
    }
    let rows = fs::read_to_string(out.join("landscape.csv"))
        .expect("grid")
        .lines()
        .count()
        - 1;
    let v = read_json(&out.join("convexity.json"));
    let center = v["center_equals_base"].as_bool() == Some(true);
    let fraction = v["segments"]["pass_fraction"].as_f64().unwrap_or(0.0);
    // context only: the same check at a smaller radius
    let small = ws.root.join("landscape_small");
    run(&[
        "landscape",
        "--checkpoint",
        p(&ck),
        "--field",
        p(&ws.field),
        "--alpha",
        "1",
        "--grid",
        "21",
        "--seeds",
        "1,2",
        "--segments",
        "100",
        "--points",
        "5",
        "--out",
        p(&small),
    ]);
    let small_fraction = read_json(&small.join("convexity.json"))["segments"]["pass_fraction"]
        .as_f64()
        .unwrap_or(0.0);
    let msg = format!(
        "{rows} grid rows; alpha 5: {}; (alpha 1 for reference: {:.0}% of segments convex)",
        stdout.trim(),
        100.0 * small_fraction
    );
    if rows == 441 && center && fraction >= 0.95 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c9_determinism(ws: &Workspace) -> Outcome {
    // small runs through the CLI, twice with identical configs
    let gen = ws.root.join("small");
    let (code, _) = run(&[
        "generate",
        "modal",
        "--grid",
        "8x8",
        "--frames",
        "400",
        "--seed",
        "3",
        "--out",
        p(&gen),
    ]);
    if code != 0 {
        return Err(format!("generate exited {code}"));
    }
    let field_path = gen.join("field.fld");
    let train = json!({
        "latent_dim": 3, "lag": 6, "gru_hidden": 8, "decoder_widths": [16], "epochs": 12, "batch_size": 32,
        "lr": 1e-2, "dropout": 0.1, "dt": 1.0 / 52.0, "ensemble_size": 3, "threshold_interval": 5,
        "threshold_low": 0.01, "threshold_high": 0.1, "seed": 9,
    });
    let mut logs = Vec::new();
    for name in ["det_a", "det_b"] {
        let cfg = json!({ "field": field_path, "output_dir": ws.root.join(name), "sensors": 6, "train": train });
        let path = ws.root.join(format!("{name}.json"));
        fs::write(&path, cfg.to_string()).expect("config");
        let (code, _) = run(&["train", "--config", p(&path)]);
        if code != 0 {
            return Err(format!("train exited {code}"));
        }
        logs.push(fs::read(ws.root.join(name).join("train.log.jsonl")).expect("log"));
    }
    let logs_equal = logs[0] == logs[1] && !logs[0].is_empty();
    let (code, _) = run(&[
        "replay",
        p(&ws.root.join("det_a").join("run-manifest.json")),
    ]);
    let replay_ok = code == 0;

    // checkpoint round trip against the in-memory model
    let field = load_field(&field_path)
        .expect("field")
        .standardize()
        .expect("scale");
    let sensors = select_sensors(&field, 6, 9, true).expect("sensors");
    let mut cfg: TrainConfig = serde_json::from_value(train.clone()).expect("config");
    cfg.epochs = 3;
    let ds = WindowedDataset::new(&field, &sensors, cfg.lag, cfg.splits).expect("dataset");
    let mut trainer =
        Trainer::new(ShredModel::new(cfg, sensors.len(), field.points()).expect("model"));
    trainer.train(&ds).expect("train");
    let ck = Checkpoint {
        model: trainer.model.clone(),
        optimizer: trainer.optimizer.clone(),
        epoch: trainer.epoch,
        extra: json!({}),
    };
    let back = read_checkpoint(&write_checkpoint(&ck).expect("write")).expect("read");
    let idx: Vec<usize> = (0..ds.len()).collect();
    let inputs = ds.batch_inputs(&idx);
    let fwd = |m: &ShredModel| {
        m.decode(&m.encode(&inputs).expect("encode"))
            .expect("decode")
    };
    let forward_equal = fwd(&trainer.model).data() == fwd(&back.model).data() && back == ck;

    // FLD1 bytes
    let bytes = fs::read(&field_path).expect("field bytes");
    let parsed = read_field(&bytes).expect("parse");
    let mut again = Vec::new();
    write_field(&parsed, &mut again).expect("write");
    let fld_equal = again == bytes && read_field(&again).expect("reparse") == parsed;

    let msg = format!(
        "logs identical: {logs_equal}; replay: {replay_ok}; checkpoint forward outputs identical: {forward_equal}; FLD1 bytes identical: {fld_equal}"
    );
    if logs_equal && replay_ok && forward_equal && fld_equal {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Upward zero crossings, linearly interpolated, in units of samples.
fn upward_crossings(x: &[f64]) -> Vec<f64> {
    x.windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] < 0.0 && w[1] >= 0.0)
        .map(|(i, w)| i as f64 + w[0] / (w[0] - w[1]))
        .collect()
}

fn c10_pendulum() -> Outcome {
    let g = PendulumParams::default().gravity;
    let params = PendulumParams::undamped(g);
    let dt = 0.01;
    let (_, truth) =
        gen_pendulum(1.2, 0.0, params, 1001, dt, (8, 8), 10, 0.0, 0).expect("pendulum");
    let e0 = params.energy(truth.angle[0], truth.velocity[0]);
    let drift = truth
        .angle
        .iter()
        .zip(&truth.velocity)
        .map(|(&z, &v)| (params.energy(z, v) - e0).abs())
        .fold(0.0, f64::max);

    let (_, small) =
        gen_pendulum(0.01, 0.0, params, 1001, dt, (8, 8), 10, 0.0, 0).expect("pendulum");
    let c = upward_crossings(&small.angle);
    let period = (c[c.len() - 1] - c[0]) / (c.len() - 1) as f64 * dt;
    let expected = 2.0 * PI / g.sqrt();
    let rel = (period - expected).abs() / expected;
    let msg = format!(
        "energy drift {drift:.1e} over 1000 steps; small-angle period {period:.5} vs {expected:.5} ({:.3}%)",
        100.0 * rel
    );
    if drift < 1e-6 && rel < 0.01 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn main() {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut ws = Workspace {
        root: dir.path().to_path_buf(),
        field: PathBuf::new(),
        sindy_run: None,
    };
    // e.g. SHRED_ACCEPTANCE_ONLY=1,2,3 for a quick partial run
    let only: Option<Vec<usize>> = std::env::var("SHRED_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failures = 0;
    let mut skipped = 0;
    let mut report = |id: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            skipped += 1;
            println!("SKIP  {id:>2} {name}");
            return;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS  {id:>2} {name}: {msg} [{secs:.1}s]"),
            Err(msg) => {
                failures += 1;
                println!("FAIL  {id:>2} {name}: {msg} [{secs:.1}s]");
            }
        }
    };
    report(1, "gradient correctness", &mut c1_gradients);
    report(2, "sparse regression oracle recovery", &mut c2_stlsq);
    report(3, "Euler cell fidelity", &mut c3_euler);
    report(4, "end-to-end discovery", &mut || c4_discovery(&mut ws));
    report(5, "Koopman equivalence", &mut || c5_koopman(&ws));
    report(6, "coefficient error scaling", &mut || c6_scaling(&ws));
    report(7, "sine extrapolation ordering", &mut || c7_sine(&ws));
    report(8, "landscape and convexity", &mut || c8_landscape(&ws));
    report(9, "determinism and persistence", &mut || {
        c9_determinism(&ws)
    });
    report(10, "pendulum physics", &mut c10_pendulum);
    if failures > 0 {
        println!("{failures} of 10 criteria failed");
        // known failures are recorded in the README; strict mode gates on them
        if std::env::var_os("SHRED_ACCEPTANCE_STRICT").is_some() {
            std::process::exit(1);
        }
        return;
    }
    if skipped > 0 {
        println!("{} criteria passed, {skipped} skipped", 10 - skipped);
    } else {
        println!("all 10 criteria passed");
    }
}
