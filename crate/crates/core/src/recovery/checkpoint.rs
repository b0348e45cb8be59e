//! Parameter checkpoints: one JSON header line, then the raw little-endian
//! `f64` parameter block.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FdbError, Result};
use crate::io::write_atomic;

use super::{Architecture, TinyRegressor, PARAM_COUNT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub architecture: Architecture,
    #[serde(rename = "T_f")]
    pub t_f: usize,
    pub seed: u64,
    pub epochs: usize,
    pub param_count: usize,
}

pub fn encode_checkpoint(model: &TinyRegressor, seed: u64, epochs: usize) -> Vec<u8> {
    let header = CheckpointHeader {
        architecture: model.architecture(),
        t_f: model.t_f(),
        seed,
        epochs,
        param_count: model.params().len(),
    };
    let mut bytes = serde_json::to_vec(&header).expect("header serializes");
    bytes.push(b'\n');
    for p in model.params() {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    bytes
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointHeader, TinyRegressor)> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| FdbError::Format("checkpoint has no header line".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..split])?;
    if header.param_count != PARAM_COUNT {
        return Err(FdbError::Format(format!(
            "checkpoint holds {} parameters, architecture needs {PARAM_COUNT}",
            header.param_count
        )));
    }
    let body = &bytes[split + 1..];
    if body.len() != 8 * header.param_count {
        return Err(FdbError::Format(format!(
            "checkpoint body is {} bytes, expected {}",
            body.len(),
            8 * header.param_count
        )));
    }
    let params = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let model = TinyRegressor::from_params(header.architecture, header.t_f, params)?;
    Ok((header, model))
}

pub fn write_checkpoint(path: &Path, model: &TinyRegressor, seed: u64, epochs: usize) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model, seed, epochs))
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, TinyRegressor)> {
    decode_checkpoint(&std::fs::read(path)?)
}
