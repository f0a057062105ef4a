//! Checkpoint files: an 8-byte magic, a u32 format version, a u32-length JSON
//! header (architecture, seed, tensor table, caller metadata), then every
//! tensor as little-endian f32 in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Arch, ModelState, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"AUSCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    arch: Arch,
    seed: u64,
    dtype: String,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelState<f32>,
    /// Free-form caller metadata (pipeline configuration, best epoch, ...).
    pub meta: serde_json::Value,
}

pub fn encode_checkpoint(model: &ModelState<f32>, meta: &serde_json::Value) -> Vec<u8> {
    let header = Header {
        arch: model.arch().clone(),
        seed: model.seed(),
        dtype: "f32".into(),
        tensors: model.params().iter().map(|t| TensorEntry { name: t.name.clone(), shape: t.shape.clone() }).collect(),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::with_capacity(16 + json.len() + 4 * model.n_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in model.params() {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let err = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(err("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let header_len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() < header_len {
        return Err(err("truncated header"));
    }
    let header: Header =
        serde_json::from_slice(&body[..header_len]).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    if header.dtype != "f32" {
        return Err(Error::Checkpoint(format!("unsupported dtype {}", header.dtype)));
    }
    let mut data = &body[header_len..];
    let mut params = Vec::with_capacity(header.tensors.len());
    for entry in header.tensors {
        let n: usize = entry.shape.iter().product();
        if data.len() < 4 * n {
            return Err(Error::Checkpoint(format!("truncated data in tensor {}", entry.name)));
        }
        let (head, rest) = data.split_at(4 * n);
        let values = head.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        params.push(Tensor { name: entry.name, shape: entry.shape, data: values });
        data = rest;
    }
    if !data.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", data.len())));
    }
    let model = ModelState::from_params(header.arch, header.seed, params)
        .map_err(|e| Error::Checkpoint(format!("inconsistent tensors: {e}")))?;
    Ok(Checkpoint { model, meta: header.meta })
}

pub fn save_checkpoint(model: &ModelState<f32>, meta: &serde_json::Value, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model, meta)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
