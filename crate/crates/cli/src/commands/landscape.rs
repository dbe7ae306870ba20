use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use clap::Args;
use serde_json::json;
use shred_core::data::Split;
use shred_core::diff::Tensor;
use shred_core::eval::{
    convexity_check, landscape_scan, segment_convexity, shred_loss_fn, DEFAULT_CONVEXITY_TOLERANCE,
};
use shred_core::shred::load_checkpoint;

use super::train::dataset_for;
use crate::config::parse_seed_pair;
use crate::error::{CliError, CliResult};
use crate::manifest::{ensure_dir, write_json, RunManifest};

pub const GRID_NAME: &str = "landscape.csv";
pub const VERDICT_NAME: &str = "convexity.json";

#[derive(Debug, Args)]
pub struct LandscapeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub field: PathBuf,
    /// Perturbation radius along each direction.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Grid points per axis (odd, at least 3).
    #[arg(long, default_value_t = 21)]
    pub grid: usize,
    /// Seeds of the two random directions.
    #[arg(long, default_value = "1,2", value_parser = parse_seed_pair)]
    pub seeds: (u64, u64),
    /// Random segments for the midpoint convexity check.
    #[arg(long, default_value_t = 100)]
    pub segments: usize,
    /// Samples per segment.
    #[arg(long, default_value_t = 5)]
    pub points: usize,
    #[arg(long, default_value_t = DEFAULT_CONVEXITY_TOLERANCE)]
    pub tolerance: f64,
    /// Training chains in the fixed evaluation batch; defaults to the batch size.
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(a: &LandscapeArgs, args: &[String]) -> CliResult<()> {
    if a.grid < 3 || a.grid.is_multiple_of(2) {
        return Err(CliError::usage(format!(
            "--grid must be odd and at least 3, got {}",
            a.grid
        )));
    }
    if !(a.alpha >= 0.0 && a.alpha.is_finite()) {
        return Err(CliError::usage(format!(
            "--alpha must be finite and non-negative, got {}",
            a.alpha
        )));
    }
    if !a.checkpoint.is_file() {
        return Err(CliError::usage(format!(
            "checkpoint {} does not exist",
            a.checkpoint.display()
        )));
    }
    let ck = load_checkpoint(&a.checkpoint)?;
    let (_, _, _, data) = dataset_for(&ck, &a.field)?;
    let model = &ck.model;
    let batch = a.batch.unwrap_or(model.config.batch_size);
    let mut starts = data.chain_starts(Split::Train, model.config.chain_len(), 0.0);
    if starts.is_empty() {
        return Err(CliError::usage(
            "the field has no training chains for this model",
        ));
    }
    starts.truncate(batch.max(1));

    let base: Vec<Tensor> = model.params().into_iter().cloned().collect();
    let loss = shred_loss_fn(model, &data, &starts);
    let grid = landscape_scan(&base, &loss, a.alpha, a.grid, a.seeds)?;
    let lines = convexity_check(&grid.line_segments(), a.tolerance);
    let segments = segment_convexity(
        &base,
        &loss,
        a.alpha,
        a.seeds,
        a.segments,
        a.points,
        a.tolerance,
        a.seeds.0,
    )?;

    ensure_dir(&a.out)?;
    let mut csv = String::from("t_x,t_y,loss\n");
    for (x, y, l) in grid.rows() {
        writeln!(csv, "{x},{y},{l}").expect("string write");
    }
    let path = a.out.join(GRID_NAME);
    fs::write(&path, csv).map_err(|e| CliError::io(&path, e))?;

    let center_exact = grid.center() == grid.base_loss;
    let fraction = segments.report.segment_pass_fraction();
    let verdict = json!({
        "alpha": a.alpha,
        "grid": a.grid,
        "seeds": [a.seeds.0, a.seeds.1],
        "tolerance": a.tolerance,
        "batch_chains": starts.len(),
        "base_loss": grid.base_loss,
        "center_loss": grid.center(),
        "center_equals_base": center_exact,
        "grid_lines": {
            "passed": lines.passed(),
            "triples": lines.triples,
            "violations": lines.violations.len(),
            "pass_fraction": lines.segment_pass_fraction(),
        },
        "segments": {
            "count": segments.report.segments,
            "points": a.points,
            "passed": segments.report.passed(),
            "violations": segments.report.violations,
            "pass_fraction": fraction,
        },
    });
    write_json(&a.out.join(VERDICT_NAME), &verdict)?;
    RunManifest::new(
        "landscape",
        args,
        json!({
            "checkpoint": a.checkpoint, "field": a.field, "alpha": a.alpha, "grid": a.grid,
            "segments": a.segments, "points": a.points, "tolerance": a.tolerance, "batch": starts.len(),
        }),
    )
    .seed("direction_x", a.seeds.0)
    .seed("direction_y", a.seeds.1)
    .finish(&a.out, &[GRID_NAME, VERDICT_NAME])?;

    println!(
        "base loss {:.6e}; center {} base; grid lines {}; segments convex {:.1}% ({} of {})",
        grid.base_loss,
        if center_exact {
            "equals"
        } else {
            "DIFFERS from"
        },
        if lines.passed() {
            "convex"
        } else {
            "not convex"
        },
        100.0 * fraction,
        (fraction * segments.report.segments as f64).round(),
        segments.report.segments
    );
    Ok(())
}
