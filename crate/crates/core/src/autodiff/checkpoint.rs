//! Single-file checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 8 bytes   magic  b"PLCKPT\0\x01"
//! u64       manifest length in bytes
//! ...       manifest, UTF-8 JSON
//! ...       blob of f64 values, little-endian, in manifest order
//! ```
//!
//! The manifest lists every tensor as `{name, shape, offset, count}` where
//! `offset` and `count` are in f64 units from the start of the blob. Optimizer
//! moments are stored as `adam.m/<param>` and `adam.v/<param>`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamConfig, AdamState, ParamStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PLCKPT\0\x01";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    meta: serde_json::Value,
    tensors: Vec<Entry>,
    adam: Option<AdamHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct AdamHeader {
    config: AdamConfig,
    step: u64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub params: ParamStore,
    pub adam: Option<AdamState>,
}

pub fn to_bytes(params: &ParamStore, adam: Option<&AdamState>, meta: &serde_json::Value) -> Result<Vec<u8>> {
    let mut entries = Vec::new();
    let mut blob: Vec<f64> = Vec::new();
    let mut put = |name: String, t: &Tensor| {
        entries.push(Entry {
            name,
            shape: t.shape().to_vec(),
            offset: blob.len(),
            count: t.len(),
        });
        blob.extend_from_slice(t.data());
    };
    for (_, p) in params.iter() {
        put(p.name.clone(), &p.tensor);
    }
    if let Some(a) = adam {
        for (((_, p), m), v) in params.iter().zip(&a.m).zip(&a.v) {
            put(format!("adam.m/{}", p.name), m);
            put(format!("adam.v/{}", p.name), v);
        }
    }
    let manifest = Manifest {
        meta: meta.clone(),
        tensors: entries,
        adam: adam.map(|a| AdamHeader {
            config: a.config,
            step: a.step,
        }),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| Error::invalid(format!("checkpoint manifest: {e}")))?;
    let mut out = Vec::with_capacity(16 + json.len() + blob.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in blob {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |m: &str| Error::invalid(format!("malformed checkpoint: {m}"));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic header"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json_end = 16usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("manifest length exceeds file"))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[16..json_end]).map_err(|e| bad(&e.to_string()))?;
    let blob = &bytes[json_end..];
    if !blob.len().is_multiple_of(8) {
        return Err(bad("blob is not a whole number of f64 values"));
    }
    let read = |e: &Entry| -> Result<Tensor> {
        let expected: usize = e.shape.iter().product();
        let end = e.offset.checked_add(e.count).ok_or_else(|| bad("offset overflow"))?;
        if expected != e.count || end * 8 > blob.len() {
            return Err(bad(&format!("entry {} out of range", e.name)));
        }
        let data = blob[e.offset * 8..end * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(e.shape.clone(), data)
    };

    let mut params = ParamStore::new();
    let mut m = Vec::new();
    let mut v = Vec::new();
    for e in &manifest.tensors {
        let t = read(e)?;
        if e.name.starts_with("adam.m/") {
            m.push(t);
        } else if e.name.starts_with("adam.v/") {
            v.push(t);
        } else {
            params.add(e.name.clone(), t)?;
        }
    }
    let adam = match manifest.adam {
        Some(h) => Some(AdamState::from_parts(h.config, h.step, m, v, &params)?),
        None => None,
    };
    Ok(Checkpoint {
        meta: manifest.meta,
        params,
        adam,
    })
}

pub fn save(path: &Path, params: &ParamStore, adam: Option<&AdamState>, meta: &serde_json::Value) -> Result<()> {
    let bytes = to_bytes(params, adam, meta)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
