//! Model checkpoint format: a single-line JSON header (spec, tensor
//! names/shapes, seed, metrics) followed by each tensor's raw
//! little-endian f64 payload, concatenated in header order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::models::{ModelSpec, NamedTensor, Parameters, StatsMode, TrainMetrics, TrainedModel};

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("header: {0}")]
    Header(#[from] serde_json::Error),
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    spec: ModelSpec,
    train_seed: u64,
    metrics: TrainMetrics,
    dn_mode: StatsMode,
    tensors: Vec<TensorEntry>,
}

/// Serialize a trained model. Deterministic: equal models produce
/// byte-identical files.
pub fn save(model: &TrainedModel, path: &Path) -> Result<(), CheckpointError> {
    let header = Header {
        version: CHECKPOINT_VERSION,
        spec: model.spec.clone(),
        train_seed: model.train_seed,
        metrics: model.metrics.clone(),
        dn_mode: model.dn_mode,
        tensors: model
            .params
            .tensors
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                shape: t.tensor.shape().to_vec(),
                trainable: t.trainable,
            })
            .collect(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    for t in &model.params.tensors {
        for v in t.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<TrainedModel, CheckpointError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CheckpointError::Malformed("missing header line".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..newline])?;
    if header.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Malformed(format!(
            "version {} unsupported (want {CHECKPOINT_VERSION})",
            header.version
        )));
    }
    let mut offset = newline + 1;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let len: usize = entry.shape.iter().product();
        let nbytes = len * 8;
        if offset + nbytes > bytes.len() {
            return Err(CheckpointError::Malformed(format!(
                "payload truncated at tensor {}",
                entry.name
            )));
        }
        let data: Vec<f64> = bytes[offset..offset + nbytes]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        offset += nbytes;
        let tensor = Tensor::new(entry.shape.clone(), data)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        tensors.push(NamedTensor {
            name: entry.name.clone(),
            tensor,
            trainable: entry.trainable,
        });
    }
    if offset != bytes.len() {
        return Err(CheckpointError::Malformed(format!(
            "{} trailing bytes after payload",
            bytes.len() - offset
        )));
    }
    Ok(TrainedModel {
        spec: header.spec,
        params: Parameters { tensors },
        train_seed: header.train_seed,
        metrics: header.metrics,
        dn_mode: header.dn_mode,
    })
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String, CheckpointError> {
    let bytes = fs::read(path)?;
    Ok(sha256_hex(&bytes))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Digest of parameter values alone (attacks must not change it).
pub fn params_digest(params: &Parameters) -> String {
    let mut hasher = Sha256::new();
    for t in &params.tensors {
        hasher.update(t.name.as_bytes());
        for v in t.tensor.data() {
            hasher.update(v.to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
