//! Named-array container: an 8-byte magic, a little-endian `u32` version, a
//! `u64` manifest length, a JSON manifest (array name, shape, dtype, byte
//! offset, plus free-form metadata) and the raw little-endian payload.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CTTSARCH";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    arrays: Vec<ArrayEntry>,
    meta: serde_json::Value,
}

/// Decoded container contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub arrays: Vec<(String, Tensor)>,
    pub meta: serde_json::Value,
}

impl Archive {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

pub fn encode_archive(arrays: &[(String, Tensor)], meta: serde_json::Value) -> Result<Vec<u8>> {
    let mut entries = Vec::with_capacity(arrays.len());
    let mut payload = Vec::new();
    for (name, t) in arrays {
        entries.push(ArrayEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            dtype: "f64".into(),
            offset: payload.len() as u64,
        });
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = serde_json::to_vec(&Manifest {
        version: ARCHIVE_VERSION,
        arrays: entries,
        meta,
    })
    .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(20 + manifest.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_archive(bytes: &[u8]) -> Result<Archive> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint archive"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != ARCHIVE_VERSION {
        return Err(Error::Checkpoint(format!("unsupported archive version {version}")));
    }
    let mlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let manifest_end = 20usize
        .checked_add(mlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[20..manifest_end])
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let payload = &bytes[manifest_end..];
    let mut arrays = Vec::with_capacity(manifest.arrays.len());
    for entry in manifest.arrays {
        let n: usize = entry.shape.iter().product();
        let width = match entry.dtype.as_str() {
            "f64" => 8,
            "f32" => 4,
            other => return Err(Error::Checkpoint(format!("unknown dtype {other}"))),
        };
        let start = entry.offset as usize;
        let end = start + n * width;
        let raw = payload
            .get(start..end)
            .ok_or_else(|| Error::Checkpoint(format!("array {} out of bounds", entry.name)))?;
        let data = if width == 8 {
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect()
        } else {
            raw.chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                .collect()
        };
        arrays.push((entry.name, Tensor::new(entry.shape, data)?));
    }
    Ok(Archive {
        arrays,
        meta: manifest.meta,
    })
}

pub fn write_archive(
    path: impl AsRef<Path>,
    arrays: &[(String, Tensor)],
    meta: serde_json::Value,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_archive(arrays, meta)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<Archive> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_archive(&bytes)
}
