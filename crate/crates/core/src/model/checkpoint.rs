//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `DNMTCKPT`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a UTF-8 JSON header
//! (config, seed, epoch, tensor names and shapes), then every parameter as a
//! little-endian `f64` in header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TransformerConfig;
use super::params::ModelParams;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DNMTCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorShape {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: TransformerConfig,
    pub seed: u64,
    pub epoch: usize,
    pub tensors: Vec<TensorShape>,
}

pub fn save_checkpoint(path: impl AsRef<Path>, p: &ModelParams, seed: u64, epoch: usize) -> Result<()> {
    let path = path.as_ref();
    let header = CheckpointHeader {
        config: p.config.clone(),
        seed,
        epoch,
        tensors: p
            .layout
            .tensors()
            .map(|(name, id)| TensorShape {
                name: name.to_string(),
                shape: [id.rows, id.cols],
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(20 + json.len() + 8 * p.data.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for x in &p.data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelParams, CheckpointHeader)> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = 20 + header_len;
    if bytes.len() < body {
        return Err(bad("truncated header"));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[20..body])?;
    let payload = &bytes[body..];
    if payload.len() % 8 != 0 {
        return Err(bad("payload is not a whole number of f64 values"));
    }
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let params = ModelParams::from_data(header.config.clone(), data)?;
    let expected: Vec<TensorShape> = params
        .layout
        .tensors()
        .map(|(name, id)| TensorShape {
            name: name.to_string(),
            shape: [id.rows, id.cols],
        })
        .collect();
    if expected != header.tensors {
        return Err(bad("tensor table does not match the configured architecture"));
    }
    Ok((params, header))
}
