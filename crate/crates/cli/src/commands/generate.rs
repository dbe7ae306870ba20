use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use serde_json::json;
use shred_core::data::{
    gen_modal_field, gen_pendulum, gen_sine_ode, save_field, Field, ModeSpec, PendulumParams,
};

use crate::config::{parse_grid, parse_number};
use crate::error::{CliError, CliResult};
use crate::manifest::{ensure_dir, write_json, RunManifest};

pub const FIELD_NAME: &str = "field.fld";
pub const TRUTH_NAME: &str = "truth.json";

#[derive(Debug, Subcommand)]
pub enum GenerateKind {
    /// Superposition of oscillating spatial patterns plus noise.
    Modal(ModalArgs),
    /// Rendered video of a damped nonlinear pendulum.
    Pendulum(PendulumArgs),
    /// Two-column trajectory (x, v) of x'' = -sin x.
    Sine(SineArgs),
}

#[derive(Debug, Args)]
pub struct ModalArgs {
    /// Use the first N modes of the built-in table (ω = 2π, 4π, 6π, 8π).
    #[arg(long, default_value_t = 2, conflicts_with = "mode_file")]
    pub modes: usize,
    /// JSON list of mode specs {pattern, amplitude, omega, phase, growth}.
    #[arg(long)]
    pub mode_file: Option<PathBuf>,
    #[arg(long, default_value = "20x20", value_parser = parse_grid)]
    pub grid: (usize, usize),
    #[arg(long, default_value_t = 3000)]
    pub frames: usize,
    /// Seconds per frame; fractions like 1/52 are accepted.
    #[arg(long, default_value = "1/52", value_parser = parse_number)]
    pub dt: f64,
    #[arg(long, default_value_t = 0.01)]
    pub sigma: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PendulumArgs {
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub angle0: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub velocity0: f64,
    #[arg(long, default_value_t = PendulumParams::default().v2, allow_negative_numbers = true)]
    pub v2: f64,
    #[arg(long, default_value_t = PendulumParams::default().v3, allow_negative_numbers = true)]
    pub v3: f64,
    #[arg(long, default_value_t = PendulumParams::default().gravity)]
    pub gravity: f64,
    #[arg(long, default_value_t = PendulumParams::default().sin_v, allow_negative_numbers = true)]
    pub sin_v: f64,
    /// Zero all damping terms, keeping only gravity.
    #[arg(long)]
    pub undamped: bool,
    #[arg(long, default_value_t = 1000)]
    pub frames: usize,
    #[arg(long, default_value = "1/50", value_parser = parse_number)]
    pub dt: f64,
    #[arg(long, default_value = "32x32", value_parser = parse_grid)]
    pub grid: (usize, usize),
    #[arg(long, default_value_t = 20)]
    pub substeps: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SineArgs {
    #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
    pub x0: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub v0: f64,
    #[arg(long, default_value_t = 2001)]
    pub frames: usize,
    #[arg(long, default_value = "0.01", value_parser = parse_number)]
    pub dt: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Built-in modes: distinct spatial patterns, harmonically spaced frequencies.
pub fn default_modes(count: usize) -> Vec<ModeSpec> {
    let table = [
        (0, 1.0, 1.0, 0.0),
        (3, 0.7, 2.0, 0.5),
        (5, 0.5, 3.0, 1.0),
        (8, 0.4, 4.0, 1.5),
    ];
    table[..count.min(table.len())]
        .iter()
        .map(|&(pattern, amplitude, k, phase)| ModeSpec {
            pattern,
            amplitude,
            omega: 2.0 * PI * k,
            phase,
            growth: 0.0,
        })
        .collect()
}

fn finish(
    out: &Path,
    field: &Field,
    truth: serde_json::Value,
    manifest: RunManifest,
) -> CliResult<()> {
    ensure_dir(out)?;
    save_field(field, out.join(FIELD_NAME))?;
    write_json(&out.join(TRUTH_NAME), &truth)?;
    manifest.finish(out, &[FIELD_NAME, TRUTH_NAME])?;
    println!(
        "wrote {} ({} frames × {} points) and {}",
        out.join(FIELD_NAME).display(),
        field.frames(),
        field.points(),
        TRUTH_NAME
    );
    Ok(())
}

pub fn run(kind: &GenerateKind, args: &[String]) -> CliResult<()> {
    match kind {
        GenerateKind::Modal(a) => {
            let modes = match &a.mode_file {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                    serde_json::from_str::<Vec<ModeSpec>>(&text)
                        .map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?
                }
                None => {
                    if a.modes == 0 || a.modes > 4 {
                        return Err(CliError::usage(format!(
                            "--modes must be 1..=4, got {}",
                            a.modes
                        )));
                    }
                    default_modes(a.modes)
                }
            };
            let (field, truth) = gen_modal_field(a.grid, &modes, a.frames, a.dt, a.sigma, a.seed)?;
            let truth = serde_json::to_value(&truth)?;
            let manifest =
                RunManifest::new("generate modal", args, truth.clone()).seed("noise", a.seed);
            finish(&a.out, &field, truth, manifest)
        }
        GenerateKind::Pendulum(a) => {
            let params = if a.undamped {
                PendulumParams::undamped(a.gravity)
            } else {
                PendulumParams {
                    v2: a.v2,
                    v3: a.v3,
                    gravity: a.gravity,
                    sin_v: a.sin_v,
                }
            };
            let (field, truth) = gen_pendulum(
                a.angle0,
                a.velocity0,
                params,
                a.frames,
                a.dt,
                a.grid,
                a.substeps,
                a.noise,
                a.seed,
            )
            .map_err(|e| CliError::usage(e.to_string()))?;
            let mut value = serde_json::to_value(&truth)?;
            // coefficients of z'' in the library basis, signs included
            value["coefficients"] = json!({
                "z_dot^2": params.v2,
                "z_dot^3": params.v3,
                "sin(z)": -params.gravity,
                "sin(z_dot)": params.sin_v,
            });
            let config = json!({
                "angle0": a.angle0, "velocity0": a.velocity0, "params": params, "frames": a.frames,
                "dt": a.dt, "grid": a.grid, "substeps": a.substeps, "noise": a.noise,
            });
            let manifest =
                RunManifest::new("generate pendulum", args, config).seed("noise", a.seed);
            finish(&a.out, &field, value, manifest)
        }
        GenerateKind::Sine(a) => {
            let traj = gen_sine_ode(a.x0, a.v0, a.frames, a.dt)?;
            let field = Field::new(traj, None, a.dt)?;
            let truth = json!({
                "kind": "sine",
                "x0": a.x0,
                "v0": a.v0,
                "frames": a.frames,
                "dt": a.dt,
                "columns": ["x", "v"],
                "equations": ["x' = v", "v' = -1 sin(x)"],
            });
            let manifest = RunManifest::new("generate sine", args, truth.clone());
            finish(&a.out, &field, truth, manifest)
        }
    }
}
