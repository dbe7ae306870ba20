use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::PathBuf;

use clap::Args;
use serde_json::json;
use shred_core::data::{read_sensor_csv, save_field, Field};
use shred_core::diff::Tensor;
use shred_core::eval::{
    forecast, horizon_mse, latent_frequencies, model_frequencies, sensor_traces,
};
use shred_core::shred::{load_checkpoint, select_discovered_model};

use super::train::dataset_for;
use crate::config::{parse_windows, WindowSpec};
use crate::error::{CliError, CliResult};
use crate::manifest::{ensure_dir, write_json, RunManifest};

pub const REPORT_NAME: &str = "forecast.json";
pub const PREDICTION_NAME: &str = "prediction.fld";
pub const TRACES_NAME: &str = "traces.csv";

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Field the checkpoint was trained on (or a continuation of it).
    #[arg(long)]
    pub field: PathBuf,
    /// Frames to roll out past the initial encoding.
    #[arg(long)]
    pub horizon: usize,
    /// Step windows for the error table, e.g. 0:100,100:200,200:275.
    #[arg(long, value_parser = parse_windows)]
    pub windows: Option<WindowSpec>,
    /// File of spatial indices (one per line) to report as time series.
    #[arg(long)]
    pub held_out_sensors: Option<PathBuf>,
    /// Window index to encode; defaults to the first test window.
    #[arg(long)]
    pub start: Option<usize>,
    /// Ensemble member to roll out; defaults to the selected one.
    #[arg(long)]
    pub member: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

fn first_rows(t: &Tensor, rows: usize) -> Tensor {
    Tensor::matrix(rows, t.cols(), t.data()[..rows * t.cols()].to_vec())
}

/// Clips error windows to the frames that have ground truth, dropping
/// windows that lie entirely beyond it.
fn clip_windows(windows: &[Range<usize>], available: usize) -> Vec<Range<usize>> {
    let mut out = Vec::with_capacity(windows.len());
    for w in windows {
        if w.start >= available {
            log::warn!(
                "window {}..{} lies beyond the {available} frames of truth; dropped",
                w.start,
                w.end
            );
        } else if w.end > available {
            log::warn!(
                "window {}..{} truncated to {}..{available}",
                w.start,
                w.end,
                w.start
            );
            out.push(w.start..available);
        } else {
            out.push(w.clone());
        }
    }
    out
}

pub fn run(a: &ForecastArgs, args: &[String]) -> CliResult<()> {
    if !a.checkpoint.is_file() {
        return Err(CliError::usage(format!(
            "checkpoint {} does not exist",
            a.checkpoint.display()
        )));
    }
    let ck = load_checkpoint(&a.checkpoint)?;
    let (meta, field, sensors, data) = dataset_for(&ck, &a.field)?;
    let model = &ck.model;
    let steps = a.horizon + 1;
    let windows = a
        .windows
        .clone()
        .map(|w| w.0)
        .unwrap_or_else(|| vec![0..steps]);
    if let Some(w) = windows.iter().find(|w| w.end > steps) {
        return Err(CliError::usage(format!(
            "window {}..{} exceeds the {steps} forecast steps",
            w.start, w.end
        )));
    }
    let start = match a.start {
        Some(s) if s >= data.len() => {
            return Err(CliError::usage(format!(
                "--start {s} but only {} windows exist",
                data.len()
            )))
        }
        Some(s) => s,
        None if !data.splits.test.is_empty() => data.splits.test.start,
        None => 0,
    };
    let member = match a.member {
        Some(m) => m,
        None => select_discovered_model(model, &data)?.member,
    };
    if let Some(e) = model.ensemble() {
        if member >= e.len() {
            return Err(CliError::usage(format!(
                "--member {member} but the ensemble has {}",
                e.len()
            )));
        }
    }

    let report = forecast(model, member, &data.window(start), a.horizon)?;
    let target = data.target_frame(start);
    let available = (field.frames() - target).min(steps);
    if available < steps {
        log::warn!(
            "horizon {} needs {steps} frames of truth from frame {target}; only {available} exist",
            a.horizon
        );
    }
    let truth = field.slice_frames(target, target + available)?.data;
    let pred = first_rows(&report.fields, available);
    let table = horizon_mse(&pred, &truth, &clip_windows(&windows, available))?;

    let held_out = match &a.held_out_sensors {
        Some(p) => read_sensor_csv(p, field.points())?.indices,
        None => Vec::new(),
    };
    let traces = sensor_traces(&pred, &truth, &held_out, &sensors)?;

    let frame_dt = meta.frame_dt;
    let to_physical = model.config.dt / frame_dt;
    let omegas: Vec<f64> = model_frequencies(model, member)?
        .iter()
        .map(|w| w * to_physical)
        .collect();
    let latent_omegas = if report.latents.rows() >= 4 {
        latent_frequencies(&report.latents, frame_dt)?
    } else {
        Vec::new()
    };

    ensure_dir(&a.out)?;
    let mut prediction = Field::new(report.fields.clone(), meta.grid_shape.clone(), frame_dt)?;
    prediction.scale = Some(meta.scale);
    save_field(&prediction, a.out.join(PREDICTION_NAME))?;
    let mut outputs = vec![REPORT_NAME, PREDICTION_NAME];
    if !held_out.is_empty() {
        let mut csv = String::from("step,sensor,predicted,truth\n");
        for &s in &held_out {
            for step in 0..steps {
                let truth = if step < available {
                    field.data.at(target + step, s).to_string()
                } else {
                    String::new()
                };
                writeln!(csv, "{step},{s},{},{truth}", report.fields.at(step, s))
                    .expect("string write");
            }
        }
        let path = a.out.join(TRACES_NAME);
        fs::write(&path, csv).map_err(|e| CliError::io(&path, e))?;
        outputs.push(TRACES_NAME);
    }
    let summary = json!({
        "member": member,
        "start_window": start,
        "target_frame": target,
        "horizon": a.horizon,
        "truth_steps": available,
        "field_variance": truth.data().iter().map(|x| x * x).sum::<f64>() / truth.numel() as f64
            - (truth.data().iter().sum::<f64>() / truth.numel() as f64).powi(2),
        "table": table,
        "held_out_mse": traces.iter().map(|t| json!({"index": t.index, "mse": t.mse()})).collect::<Vec<_>>(),
        "model_frequencies": omegas,
        "latent_frequencies": latent_omegas,
        "latents": (0..report.latents.rows()).map(|r| report.latents.row(r).to_vec()).collect::<Vec<_>>(),
    });
    write_json(&a.out.join(REPORT_NAME), &summary)?;
    RunManifest::new(
        "forecast",
        args,
        json!({
            "checkpoint": a.checkpoint, "field": a.field, "horizon": a.horizon, "windows": windows,
            "start": start, "member": member, "held_out": held_out,
        }),
    )
    .seed("train", model.config.seed)
    .finish(&a.out, &outputs)?;

    for row in &table.rows {
        println!("steps {:>5}..{:<5} mse {:.6e}", row.start, row.end, row.mse);
    }
    println!(
        "total mse {:.6e} over {available} steps (member {member})",
        table.total
    );
    Ok(())
}
