use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shred_core::shred::TrainConfig;

use crate::error::{CliError, CliResult};

fn d_sensors() -> usize {
    25
}
fn d_log_every() -> usize {
    10
}
fn yes() -> bool {
    true
}

/// Training run: paths plus the model and optimizer settings.
///
/// Relative paths are resolved against the directory holding the config
/// file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub field: PathBuf,
    pub output_dir: PathBuf,
    /// File with one sensor index per line; overrides random placement.
    #[serde(default)]
    pub sensor_file: Option<PathBuf>,
    #[serde(default = "d_sensors")]
    pub sensors: usize,
    /// Defaults to `train.seed`.
    #[serde(default)]
    pub sensor_seed: Option<u64>,
    #[serde(default = "yes")]
    pub drop_constant_sensors: bool,
    /// Write an intermediate checkpoint every this many epochs.
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    #[serde(default = "d_log_every")]
    pub log_every: usize,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Parses and validates `path`; every referenced input must exist.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.field = resolve(base, &cfg.field);
        cfg.output_dir = resolve(base, &cfg.output_dir);
        cfg.sensor_file = cfg.sensor_file.map(|p| resolve(base, &p));
        cfg.validate_paths()?;
        Ok(cfg)
    }

    pub fn validate_paths(&self) -> CliResult<()> {
        if !self.field.is_file() {
            return Err(CliError::usage(format!(
                "field file {} does not exist",
                self.field.display()
            )));
        }
        if let Some(p) = &self.sensor_file {
            if !p.is_file() {
                return Err(CliError::usage(format!(
                    "sensor file {} does not exist",
                    p.display()
                )));
            }
        }
        if self.output_dir.is_file() {
            return Err(CliError::usage(format!(
                "output directory {} is an existing file",
                self.output_dir.display()
            )));
        }
        if self.log_every == 0 || self.checkpoint_every == Some(0) {
            return Err(CliError::usage(
                "log_every and checkpoint_every must be positive",
            ));
        }
        self.train
            .validate()
            .map_err(|e| CliError::usage(e.to_string()))
    }

    pub fn sensor_seed(&self) -> u64 {
        self.sensor_seed.unwrap_or(self.train.seed)
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// `"20x20"` → `(20, 20)`.
pub fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let h: usize = h
        .trim()
        .parse()
        .map_err(|_| format!("bad grid height in {s:?}"))?;
    let w: usize = w
        .trim()
        .parse()
        .map_err(|_| format!("bad grid width in {s:?}"))?;
    Ok((h, w))
}

/// A float, or a fraction such as `1/52`.
pub fn parse_number(s: &str) -> Result<f64, String> {
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| format!("bad number {s:?}"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("bad number {s:?}"))?;
            a / b
        }
        None => s.trim().parse().map_err(|_| format!("bad number {s:?}"))?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{s:?} is not finite"))
    }
}

/// Half-open step windows of an error table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowSpec(pub Vec<Range<usize>>);

/// `"0:100,100:200"` → half-open ranges.
pub fn parse_windows(s: &str) -> Result<WindowSpec, String> {
    s.split(',')
        .map(|part| {
            let (a, b) = part
                .split_once(':')
                .ok_or_else(|| format!("expected start:end, got {part:?}"))?;
            let a: usize = a
                .trim()
                .parse()
                .map_err(|_| format!("bad window start in {part:?}"))?;
            let b: usize = b
                .trim()
                .parse()
                .map_err(|_| format!("bad window end in {part:?}"))?;
            if a >= b {
                return Err(format!("empty window {part:?}"));
            }
            Ok(a..b)
        })
        .collect::<Result<_, _>>()
        .map(WindowSpec)
}

/// `"1,2"` → `(1, 2)`.
pub fn parse_seed_pair(s: &str) -> Result<(u64, u64), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected two seeds a,b, got {s:?}"))?;
    let a = a.trim().parse().map_err(|_| format!("bad seed in {s:?}"))?;
    let b = b.trim().parse().map_err(|_| format!("bad seed in {s:?}"))?;
    if a == b {
        return Err("the two direction seeds must differ".into());
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parsers() {
        assert_eq!(parse_grid("20x32").unwrap(), (20, 32));
        assert!(parse_grid("20").is_err());
        assert_eq!(parse_number("1/4").unwrap(), 0.25);
        assert_eq!(parse_number("0.5").unwrap(), 0.5);
        assert!(parse_number("1/0").is_err());
        assert_eq!(
            parse_windows("0:100,100:200,200:275").unwrap().0,
            vec![0..100, 100..200, 200..275]
        );
        assert!(parse_windows("5:5").is_err());
        assert_eq!(parse_seed_pair("1,2").unwrap(), (1, 2));
        assert!(parse_seed_pair("3,3").is_err());
    }

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "f.fld", "");
        let p = write(
            dir.path(),
            "c.json",
            r#"{"field":"f.fld","output_dir":"out","train":{"latent_dim":3},"bogus":1}"#,
        );
        let e = RunConfig::load(&p).unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        let p = write(
            dir.path(),
            "c2.json",
            r#"{"field":"f.fld","output_dir":"out","train":{"latent_dim":3,"lr_typo":1}}"#,
        );
        assert_eq!(RunConfig::load(&p).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn missing_field_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "c.json",
            r#"{"field":"nope.fld","output_dir":"out","train":{"latent_dim":3}}"#,
        );
        let e = RunConfig::load(&p).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("nope.fld"), "{e}");
    }

    #[test]
    fn relative_paths_follow_config() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "f.fld", "");
        let p = write(
            dir.path(),
            "c.json",
            r#"{"field":"f.fld","output_dir":"out","train":{"latent_dim":3,"ensemble_size":10,"threshold_low":0.1,"threshold_high":1.0,"threshold_interval":100}}"#,
        );
        let cfg = RunConfig::load(&p).unwrap();
        assert_eq!(cfg.field, dir.path().join("f.fld"));
        assert_eq!(cfg.output_dir, dir.path().join("out"));
        assert_eq!(cfg.sensors, 25);
    }
}
