use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use shred_core::data::{
    load_field, read_sensor_csv, select_sensors, write_sensor_csv, Field, SensorSet,
    WindowedDataset,
};
use shred_core::eval::model_frequencies;
use shred_core::shred::{
    load_checkpoint, save_checkpoint, select_discovered_model, Checkpoint, EpochLog, Mode,
    ShredModel, Trainer,
};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{ensure_dir, write_json, RunManifest};

pub const CHECKPOINT_NAME: &str = "checkpoint.shrd";
pub const LOG_NAME: &str = "train.log.jsonl";
pub const EQUATIONS_NAME: &str = "equations.txt";
pub const DISCOVERED_NAME: &str = "discovered.json";
pub const SENSORS_NAME: &str = "sensors.csv";

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Sindy,
    Koopman,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Override the latent dynamics model from the config.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
}

/// Data provenance stored in the checkpoint so later commands can rebuild
/// the exact inputs the model was trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub field: PathBuf,
    pub sensors: Vec<usize>,
    pub sensor_seed: Option<u64>,
    /// `(min, max)` used to standardize the field.
    pub scale: (f64, f64),
    pub points: usize,
    pub frame_dt: f64,
    pub grid_shape: Option<Vec<usize>>,
}

impl RunMeta {
    pub fn from_checkpoint(ck: &Checkpoint) -> CliResult<Self> {
        serde_json::from_value(ck.extra.clone())
            .map_err(|e| CliError::usage(format!("checkpoint carries no usable run metadata: {e}")))
    }
}

/// Loads a field and brings it into the model's units: raw fields get
/// `scale` applied; already standardized fields must agree with it.
pub fn standardized_field(path: &Path, scale: Option<(f64, f64)>) -> CliResult<Field> {
    let field = load_field(path)?;
    match (field.scale, scale) {
        (None, None) => Ok(field.standardize()?),
        (None, Some(s)) => Ok(field.apply_scale(s)?),
        (Some(have), Some(want)) if have != want => Err(CliError::usage(format!(
            "{} is standardized with scale {have:?}, the model expects {want:?}",
            path.display()
        ))),
        (Some(_), _) => Ok(field),
    }
}

fn log_line(log: &EpochLog) -> CliResult<String> {
    let mut v = serde_json::to_value(log)?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("wall_time");
    }
    Ok(serde_json::to_string(&v)?)
}

/// Keeps the log lines of epochs before `epoch` so a resumed run's log
/// matches an uninterrupted one.
fn truncate_log(path: &Path, epoch: usize) -> CliResult<String> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(CliError::io(path, e)),
    };
    let mut kept = String::new();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line)?;
        if v["epoch"].as_u64().is_some_and(|e| (e as usize) < epoch) {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    Ok(kept)
}

pub fn run(a: &TrainArgs, args: &[String]) -> CliResult<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    match a.mode {
        Some(ModeArg::Koopman) => cfg.train.mode = Mode::Koopman,
        Some(ModeArg::Sindy) => cfg.train.mode = Mode::Sindy,
        None => {}
    }
    cfg.train
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;
    ensure_dir(&cfg.output_dir)?;
    let out = cfg.output_dir.clone();

    let field = standardized_field(&cfg.field, None)?;
    let sensors = match &cfg.sensor_file {
        Some(p) => read_sensor_csv(p, field.points())?,
        None => select_sensors(
            &field,
            cfg.sensors,
            cfg.sensor_seed(),
            cfg.drop_constant_sensors,
        )?,
    };
    let data = WindowedDataset::new(&field, &sensors, cfg.train.lag, cfg.train.splits)?;
    let meta = RunMeta {
        field: cfg.field.clone(),
        sensors: sensors.indices.clone(),
        sensor_seed: sensors.seed,
        scale: field.scale.expect("standardized field has a scale"),
        points: field.points(),
        frame_dt: field.dt_physical,
        grid_shape: field.grid_shape.clone(),
    };
    let extra = serde_json::to_value(&meta)?;

    let ck_path = out.join(CHECKPOINT_NAME);
    let log_path = out.join(LOG_NAME);
    let (mut trainer, prior_log) = if a.resume {
        let ck = load_checkpoint(&ck_path)?;
        let mut expected = cfg.train.clone();
        expected.epochs = ck.model.config.epochs;
        if ck.model.config != expected {
            return Err(CliError::usage(format!(
                "{} was trained with a different configuration; only epochs may change on resume",
                ck_path.display()
            )));
        }
        if RunMeta::from_checkpoint(&ck)? != meta {
            return Err(CliError::usage(
                "resume data (field, sensors or scale) differs from the checkpoint",
            ));
        }
        let mut model = ck.model;
        model.config.epochs = cfg.train.epochs;
        log::info!("resuming at epoch {}", ck.epoch);
        let log = truncate_log(&log_path, ck.epoch)?;
        (Trainer::resume(model, ck.optimizer, ck.epoch), log)
    } else {
        let model = ShredModel::new(cfg.train.clone(), sensors.len(), field.points())?;
        (Trainer::new(model), String::new())
    };

    let mut log_file =
        BufWriter::new(File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?);
    let io = |e| CliError::io(&log_path, e);
    log_file.write_all(prior_log.as_bytes()).map_err(io)?;
    let save = |trainer: &Trainer| {
        save_checkpoint(
            &Checkpoint {
                model: trainer.model.clone(),
                optimizer: trainer.optimizer.clone(),
                epoch: trainer.epoch,
                extra: extra.clone(),
            },
            &ck_path,
        )
    };

    log::info!(
        "training {:?} model: {} windows ({} train), {} sensors, {} points, {} epochs",
        cfg.train.mode,
        data.len(),
        data.splits.train.len(),
        sensors.len(),
        field.points(),
        cfg.train.epochs
    );
    let mut last: Option<EpochLog> = None;
    while trainer.epoch < cfg.train.epochs {
        let result = trainer.run_epoch(&data);
        let log = match result {
            Ok(l) => l,
            Err(e) => {
                log_file.flush().map_err(io)?;
                return Err(e.into());
            }
        };
        writeln!(log_file, "{}", log_line(&log)?).map_err(io)?;
        if (log.epoch + 1) % cfg.log_every == 0 || log.pruned {
            log::info!(
                "epoch {:>5}  loss {:.4e}  recon {:.4e}  dyn {:.4e}  nnz {:?}",
                log.epoch,
                log.total,
                log.recon,
                log.dynamics,
                log.nnz
            );
        }
        if cfg.checkpoint_every.is_some_and(|n| trainer.epoch % n == 0) {
            log_file.flush().map_err(io)?;
            save(&trainer)?;
        }
        last = Some(log);
    }
    log_file.flush().map_err(io)?;
    save(&trainer)?;
    write_sensor_csv(&sensors, out.join(SENSORS_NAME))?;

    let model = &trainer.model;
    let discovered = select_discovered_model(model, &data)?;
    let omegas = model_frequencies(model, discovered.member)?;
    let physical: Vec<f64> = omegas
        .iter()
        .map(|w| w * model.config.dt / meta.frame_dt)
        .collect();
    fs::write(out.join(EQUATIONS_NAME), &discovered.equations)
        .map_err(|e| CliError::io(&out, e))?;
    write_json(
        &out.join(DISCOVERED_NAME),
        &serde_json::json!({
            "mode": model.config.mode,
            "discovered": discovered,
            "frequencies_latent": omegas,
            "frequencies_physical": physical,
        }),
    )?;

    RunManifest::new("train", args, serde_json::to_value(&cfg)?)
        .seed("train", cfg.train.seed)
        .seed("sensors", cfg.sensor_seed())
        .finish(
            &out,
            &[
                CHECKPOINT_NAME,
                LOG_NAME,
                EQUATIONS_NAME,
                DISCOVERED_NAME,
                SENSORS_NAME,
            ],
        )?;

    print!("{}", discovered.equations);
    match last {
        Some(l) => println!(
            "epoch {}: loss {:.6e} (reconstruction {:.6e}, dynamics {:.6e}); active terms {:?}; selected member {} with {} terms",
            l.epoch,
            l.total,
            l.recon,
            l.dynamics,
            l.nnz,
            discovered.member,
            discovered.scores[discovered.member].0
        ),
        None => println!("no epochs run; selected member {}", discovered.member),
    }
    Ok(())
}

/// Rebuilds the dataset a checkpoint was trained on from `field_path`.
pub fn dataset_for(
    ck: &Checkpoint,
    field_path: &Path,
) -> CliResult<(RunMeta, Field, SensorSet, WindowedDataset)> {
    let meta = RunMeta::from_checkpoint(ck)?;
    let field = standardized_field(field_path, Some(meta.scale))?;
    if field.points() != ck.model.output() {
        return Err(CliError::usage(format!(
            "{} has {} spatial points, the checkpoint decodes {}",
            field_path.display(),
            field.points(),
            ck.model.output()
        )));
    }
    let sensors = SensorSet::new(meta.sensors.clone(), field.points(), meta.sensor_seed)?;
    if sensors.len() != ck.model.sensors() {
        return Err(CliError::usage(
            "checkpoint sensor list does not match its encoder width",
        ));
    }
    let data = WindowedDataset::new(
        &field,
        &sensors,
        ck.model.config.lag,
        ck.model.config.splits,
    )?;
    Ok((meta, field, sensors, data))
}
