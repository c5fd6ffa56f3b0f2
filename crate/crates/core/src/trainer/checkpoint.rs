//! Checkpoint files.
//!
//! Layout:
//!
//! ```text
//! b"CKPT" | version: u8 | header_len: u32 LE | header JSON | f32 LE blocks
//! ```
//!
//! Blocks follow [`PARAM_NAMES`] order, each row-major with the shape given
//! by the header dims. Trained parameters are always f32-representable, so a
//! save/load roundtrip is exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelDims, ParamSet, PARAM_NAMES};

const MAGIC: &[u8; 4] = b"CKPT";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u8,
    pub dims: ModelDims,
    pub tau: f64,
    pub seed: u64,
    pub blocks: Vec<String>,
}

pub fn encode_checkpoint(p: &ParamSet, seed: u64) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        dims: p.dims,
        tau: p.tau,
        seed,
        blocks: PARAM_NAMES.iter().map(|s| s.to_string()).collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::json("checkpoint header", e))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in p.w.tensors() {
        for &v in &t.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(p: &ParamSet, seed: u64, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(p, seed)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ParamSet, CheckpointHeader)> {
    if bytes.len() < 9 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("missing magic or truncated preamble".into()));
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(Error::CheckpointVersion {
            found: bytes[4],
            expected: FORMAT_VERSION,
        });
    }
    let header_len = u32::from_le_bytes([bytes[5], bytes[6], bytes[7], bytes[8]]) as usize;
    let body = &bytes[9..];
    if body.len() < header_len {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&body[..header_len])
        .map_err(|e| Error::json("checkpoint header", e))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion {
            found: header.format_version,
            expected: FORMAT_VERSION,
        });
    }
    if header.blocks != PARAM_NAMES {
        return Err(Error::Checkpoint(format!(
            "unexpected block order {:?}",
            header.blocks
        )));
    }
    let mut p = ParamSet::zeros(header.dims)?;
    p.tau = header.tau;
    let expected: usize = header.dims.shapes().iter().map(|(r, c)| r * c * 4).sum();
    let blocks = &body[header_len..];
    if blocks.len() != expected {
        return Err(Error::Checkpoint(format!(
            "parameter blocks are {} bytes but header dims need {expected}",
            blocks.len()
        )));
    }
    let mut values = blocks
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])));
    for t in p.w.tensors_mut() {
        for v in &mut t.data {
            *v = values.next().expect("length checked above");
        }
    }
    if !p.w.is_finite() {
        return Err(Error::Checkpoint("non-finite parameter".into()));
    }
    Ok((p, header))
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamSet, CheckpointHeader)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
