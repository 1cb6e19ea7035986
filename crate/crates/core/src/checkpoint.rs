//! Checkpoint envelope shared by discriminative and generative models:
//! one line of JSON header terminated by `\n`, followed by `len`
//! little-endian `f64` values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT: &str = "classil-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub meta: serde_json::Value,
    pub len: usize,
}

impl CheckpointHeader {
    pub fn new(kind: &str, meta: serde_json::Value, len: usize) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            kind: kind.to_string(),
            meta,
            len,
        }
    }
}

pub fn encode(header: &CheckpointHeader, payload: &[f64]) -> Result<Vec<u8>> {
    if header.len != payload.len() {
        return Err(Error::Checkpoint("header length disagrees with payload".into()));
    }
    let mut out = serde_json::to_vec(header)?;
    out.push(b'\n');
    out.reserve(payload.len() * 8);
    for v in payload {
        out.extend(v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], expected_kind: &str) -> Result<(CheckpointHeader, Vec<f64>)> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("missing header terminator".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..split])?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format {} v{}",
            header.format, header.version
        )));
    }
    if header.kind != expected_kind {
        return Err(Error::Checkpoint(format!(
            "expected a {expected_kind} checkpoint, found {}",
            header.kind
        )));
    }
    let body = &bytes[split + 1..];
    if body.len() != header.len * 8 {
        return Err(Error::Checkpoint(format!(
            "payload has {} bytes, header declares {} values",
            body.len(),
            header.len
        )));
    }
    let payload = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((header, payload))
}
