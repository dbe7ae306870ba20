//! Run manifests: what was run, with which seeds, and hashes of every
//! output, so a run can be replayed and compared byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_NAME: &str = "run-manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name, exactly as given.
    pub args: Vec<String>,
    /// Working directory the arguments are relative to.
    pub cwd: PathBuf,
    /// Fully resolved configuration of the run.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    /// SHA-256 of each output, keyed by path relative to the output directory.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, args: &[String], config: serde_json::Value) -> Self {
        Self {
            tool: "shred".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args: args.to_vec(),
            cwd: std::env::current_dir().unwrap_or_default(),
            config,
            seeds: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.into(), value);
        self
    }

    /// Hashes `names` inside `dir` and writes the manifest next to them.
    pub fn finish(mut self, dir: &Path, names: &[&str]) -> CliResult<()> {
        for name in names {
            self.outputs
                .insert((*name).to_string(), hash_file(&dir.join(name))?);
        }
        write_json(&dir.join(MANIFEST_NAME), &self)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }
}

pub fn hash_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Creates `dir` (and parents) or fails with a usage error naming it.
pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| {
        CliError::usage(format!(
            "cannot create output directory {}: {e}",
            dir.display()
        ))
    })
}

/// Outputs whose hash differs from `expected` (or that are missing).
pub fn compare_outputs(expected: &RunManifest, dir: &Path) -> Vec<String> {
    expected
        .outputs
        .iter()
        .filter(|(name, hash)| hash_file(&dir.join(name)).ok().as_ref() != Some(*hash))
        .map(|(name, _)| name.clone())
        .collect()
}
