//! `shred`: generate synthetic fields, train latent sparse-dynamics models,
//! forecast, scan loss landscapes and run the theory checks.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numerical abort,
//! 4 acceptance failure.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{forecast, generate, landscape, theory, train};
use error::{CliError, CliResult};
use manifest::{compare_outputs, RunManifest};

#[derive(Debug, Parser)]
#[command(
    name = "shred",
    version,
    about = "Latent sparse-dynamics discovery from sparse sensors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic field and its ground truth.
    #[command(subcommand)]
    Generate(generate::GenerateKind),
    /// Train a model from a JSON run configuration.
    Train(train::TrainArgs),
    /// Roll a trained model forward and score it against the field.
    Forecast(forecast::ForecastArgs),
    /// Scan the training loss around a checkpoint and test convexity.
    Landscape(landscape::LandscapeArgs),
    /// Run an error-scaling or extrapolation suite.
    ValidateTheory(theory::TheoryArgs),
    /// Re-run the command recorded in a run manifest and compare outputs.
    Replay {
        /// Path to a run-manifest.json.
        manifest: PathBuf,
    },
}

fn dispatch(command: &Command, args: &[String]) -> CliResult<()> {
    match command {
        Command::Generate(kind) => generate::run(kind, args),
        Command::Train(a) => train::run(a, args),
        Command::Forecast(a) => forecast::run(a, args),
        Command::Landscape(a) => landscape::run(a, args),
        Command::ValidateTheory(a) => theory::run(a, args),
        Command::Replay { manifest } => replay(manifest),
    }
}

fn replay(path: &std::path::Path) -> CliResult<()> {
    let recorded = RunManifest::load(path)?;
    let dir = path
        .canonicalize()
        .map_err(|e| CliError::io(path, e))?
        .parent()
        .map(PathBuf::from)
        .unwrap_or_default();
    if recorded.version != env!("CARGO_PKG_VERSION") {
        log::warn!(
            "manifest was written by version {}, replaying with {}",
            recorded.version,
            env!("CARGO_PKG_VERSION")
        );
    }
    let cli = Cli::try_parse_from(
        std::iter::once("shred".to_string()).chain(recorded.args.iter().cloned()),
    )
    .map_err(|e| CliError::usage(format!("manifest arguments do not parse: {e}")))?;
    if matches!(cli.command, Command::Replay { .. }) {
        return Err(CliError::usage("a manifest cannot record a replay"));
    }
    std::env::set_current_dir(&recorded.cwd).map_err(|e| CliError::io(&recorded.cwd, e))?;
    log::info!("replaying `shred {}`", recorded.args.join(" "));
    dispatch(&cli.command, &recorded.args)?;
    let differing = compare_outputs(&recorded, &dir);
    if differing.is_empty() {
        println!(
            "replay reproduced all {} outputs bit-identically",
            recorded.outputs.len()
        );
        Ok(())
    } else {
        Err(CliError::Acceptance(format!(
            "replay outputs differ: {}",
            differing.join(", ")
        )))
    }
}

/// Caps the worker pool at `SHRED_THREADS` when set.
fn init_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("SHRED_THREADS") else {
        return Ok(());
    };
    let n: usize = value.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::usage(format!(
            "SHRED_THREADS must be a positive integer, got {value:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Internal(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let args: Vec<String> = std::env::args().skip(1).collect();
    match init_threads().and_then(|()| dispatch(&cli.command, &args)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
