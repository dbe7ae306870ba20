use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::model::{Dynamics, ShredModel};
use super::ShredError;
use crate::diff::AdamW;
use crate::nets::GRU_TENSOR_NAMES;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SHRD";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ShredModel,
    pub optimizer: AdamW,
    /// Number of completed epochs.
    pub epoch: usize,
    /// Caller metadata (sensor placement, data scale, ...).
    pub extra: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: TrainConfig,
    epoch: usize,
    optimizer_step: u64,
    sensors: usize,
    output: usize,
    thresholds: Vec<f64>,
    extra: serde_json::Value,
}

fn param_names(model: &ShredModel) -> Vec<String> {
    let mut names = Vec::new();
    for l in 0..model.gru.layers.len() {
        names.extend(GRU_TENSOR_NAMES.iter().map(|n| format!("gru.{l}.{n}")));
    }
    for l in 0..model.decoder.layers.len() {
        names.push(format!("decoder.{l}.w"));
        names.push(format!("decoder.{l}.b"));
    }
    match &model.dynamics {
        Dynamics::Sindy(e) => names.extend((0..e.len()).map(|i| format!("xi.{i}"))),
        Dynamics::Koopman { .. } => names.push("koopman.k".into()),
    }
    names
}

fn push_section(buf: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    let start = buf.len();
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(shape.len() as u8);
    for &d in shape {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf[start..]);
    buf.extend_from_slice(&crc.to_le_bytes());
}

pub fn write_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>, ShredError> {
    let model = &ck.model;
    let header = Header {
        config: model.config.clone(),
        epoch: ck.epoch,
        optimizer_step: ck.optimizer.step,
        sensors: model.sensors(),
        output: model.output(),
        thresholds: model
            .ensemble()
            .map(|e| e.thresholds.clone())
            .unwrap_or_default(),
        extra: ck.extra.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| ShredError::Checkpoint(e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);

    let names = param_names(model);
    for (name, t) in names.iter().zip(model.params()) {
        push_section(&mut buf, name, t.shape(), t.data());
    }
    if let Some(e) = model.ensemble() {
        for (i, m) in e.models.iter().enumerate() {
            let mask: Vec<f64> = m.mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            push_section(&mut buf, &format!("mask.{i}"), m.xi.shape(), &mask);
        }
    }
    for (i, (m, v)) in ck
        .optimizer
        .first_moment
        .iter()
        .zip(&ck.optimizer.second_moment)
        .enumerate()
    {
        push_section(&mut buf, &format!("adam.m.{i}"), &[m.len()], m);
        push_section(&mut buf, &format!("adam.v.{i}"), &[v.len()], v);
    }
    Ok(buf)
}

struct Section {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn corrupt(section: &str, reason: impl Into<String>) -> ShredError {
    ShredError::CorruptSection {
        section: section.to_string(),
        reason: reason.into(),
    }
}

fn parse_sections(mut bytes: &[u8]) -> Result<HashMap<String, Section>, ShredError> {
    let mut out = HashMap::new();
    let mut previous = String::from("header");
    while !bytes.is_empty() {
        let unnamed = format!("<section after {previous}>");
        let take = |b: &mut &[u8], n: usize, who: &str| -> Result<Vec<u8>, ShredError> {
            if b.len() < n {
                return Err(corrupt(
                    who,
                    format!("truncated: needed {n} bytes, {} left", b.len()),
                ));
            }
            let (head, tail) = b.split_at(n);
            *b = tail;
            Ok(head.to_vec())
        };
        let start = bytes;
        let name_len =
            u16::from_le_bytes(take(&mut bytes, 2, &unnamed)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut bytes, name_len, &unnamed)?)
            .map_err(|_| corrupt(&unnamed, "name is not UTF-8"))?;
        let ndims = take(&mut bytes, 1, &name)?[0] as usize;
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            let d = u64::from_le_bytes(take(&mut bytes, 8, &name)?.try_into().unwrap());
            shape.push(usize::try_from(d).map_err(|_| corrupt(&name, "dimension overflow"))?);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|c| c.checked_mul(8))
            .ok_or_else(|| corrupt(&name, "dimension overflow"))?;
        let payload = take(&mut bytes, count, &name)?;
        let body_len = start.len() - bytes.len();
        let crc = u32::from_le_bytes(take(&mut bytes, 4, &name)?.try_into().unwrap());
        if crc32fast::hash(&start[..body_len]) != crc {
            return Err(corrupt(&name, "checksum mismatch"));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        previous = name.clone();
        out.insert(name, Section { shape, data });
    }
    Ok(out)
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint, ShredError> {
    if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(ShredError::Checkpoint(
            "not a checkpoint (expected magic \"SHRD\")".into(),
        ));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(ShredError::Checkpoint(format!(
            "version mismatch: file has {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let json_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let json = bytes
        .get(12..12 + json_len)
        .ok_or_else(|| corrupt("header", "truncated"))?;
    let header: Header =
        serde_json::from_slice(json).map_err(|e| corrupt("header", e.to_string()))?;
    let mut sections = parse_sections(&bytes[12 + json_len..])?;

    let mut model = ShredModel::new(header.config, header.sensors, header.output)?;
    let mut fetch = |name: &str, shape: &[usize]| -> Result<Vec<f64>, ShredError> {
        let s = sections
            .remove(name)
            .ok_or_else(|| ShredError::Checkpoint(format!("missing section {name:?}")))?;
        if s.shape != shape {
            return Err(corrupt(
                name,
                format!("shape {:?}, expected {shape:?}", s.shape),
            ));
        }
        Ok(s.data)
    };
    let names = param_names(&model);
    for (name, t) in names.iter().zip(model.params_mut()) {
        let data = fetch(name, t.shape())?;
        t.data_mut().copy_from_slice(&data);
    }
    if let Dynamics::Sindy(e) = &mut model.dynamics {
        if e.thresholds.len() != header.thresholds.len() {
            return Err(ShredError::Checkpoint(
                "threshold ladder does not match ensemble".into(),
            ));
        }
        e.thresholds = header.thresholds;
        for (i, m) in e.models.iter_mut().enumerate() {
            let mask = fetch(&format!("mask.{i}"), m.xi.shape())?;
            m.mask = mask.iter().map(|&x| x != 0.0).collect();
        }
    }
    let mut optimizer = AdamW::new(model.config.optimizer(), &model.params());
    optimizer.step = header.optimizer_step;
    for i in 0..optimizer.first_moment.len() {
        let n = optimizer.first_moment[i].len();
        optimizer.first_moment[i] = fetch(&format!("adam.m.{i}"), &[n])?;
        optimizer.second_moment[i] = fetch(&format!("adam.v.{i}"), &[n])?;
    }
    if let Some(extra) = sections.keys().next() {
        return Err(ShredError::Checkpoint(format!(
            "unexpected section {extra:?}"
        )));
    }
    Ok(Checkpoint {
        model,
        optimizer,
        epoch: header.epoch,
        extra: header.extra,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<(), ShredError> {
    let path = path.as_ref();
    fs::write(path, write_checkpoint(ck)?).map_err(|source| ShredError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, ShredError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ShredError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_checkpoint(&bytes)
}
