//! Model checkpoint container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic    8 bytes   b"TSCKPT\0\0"
//! version  u32       currently 1 (mandatory)
//! meta_len u64       length of the JSON meta block
//! meta     JSON      {"config": ModelConfig, "param_count": usize}
//! tensors  repeated  u64 element count + that many f64 values,
//!                    in order: conv w/b per block, head weight, head bias
//! ```
//!
//! The config echo carries the init seed, so a checkpoint is
//! self-describing and reloads bit-identically.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams, NnError};

const MAGIC: &[u8; 8] = b"TSCKPT\0\0";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    config: ModelConfig,
    param_count: usize,
}

fn push_tensor(buf: &mut Vec<u8>, values: &[f64]) {
    buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn tensor_order(params: &ModelParams) -> Vec<&[f64]> {
    let mut out: Vec<&[f64]> = Vec::new();
    for (w, b) in params.conv_w.iter().zip(&params.conv_b) {
        out.push(w.as_slice().expect("contiguous"));
        out.push(b.as_slice().expect("contiguous"));
    }
    out.push(params.head_w.as_slice().expect("contiguous"));
    out.push(params.head_b.as_slice().expect("contiguous"));
    out
}

/// Write `params` to `path` (write-then-rename, so readers never observe
/// a partial file).
pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<(), NnError> {
    let meta = Meta { config: params.config.clone(), param_count: params.param_count() };
    let meta_bytes =
        serde_json::to_vec(&meta).map_err(|e| NnError::CheckpointFormat(e.to_string()))?;

    let mut buf = Vec::with_capacity(64 + meta_bytes.len() + params.param_count() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(meta_bytes.len() as u64).to_le_bytes());
    buf.extend_from_slice(&meta_bytes);
    for tensor in tensor_order(params) {
        push_tensor(&mut buf, tensor);
    }

    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_exact(reader: &mut impl Read, len: usize, what: &str) -> Result<Vec<u8>, NnError> {
    let mut buf = vec![0u8; len];
    reader
        .read_exact(&mut buf)
        .map_err(|_| NnError::CheckpointFormat(format!("truncated while reading {what}")))?;
    Ok(buf)
}

fn read_u64(reader: &mut impl Read, what: &str) -> Result<u64, NnError> {
    let b = read_exact(reader, 8, what)?;
    Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
}

fn read_tensor(reader: &mut impl Read, expected: usize, what: &str) -> Result<Vec<f64>, NnError> {
    let len = read_u64(reader, what)? as usize;
    if len != expected {
        return Err(NnError::CheckpointFormat(format!(
            "{what}: expected {expected} values, found {len}"
        )));
    }
    let raw = read_exact(reader, len * 8, what)?;
    Ok(raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

/// Read a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<ModelParams, NnError> {
    let mut f = fs::File::open(path)?;
    let magic = read_exact(&mut f, 8, "magic")?;
    if magic != MAGIC {
        return Err(NnError::CheckpointFormat("bad magic; not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(read_exact(&mut f, 4, "version")?.try_into().expect("4"));
    if version != VERSION {
        return Err(NnError::CheckpointFormat(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let meta_len = read_u64(&mut f, "meta length")? as usize;
    let meta_bytes = read_exact(&mut f, meta_len, "meta")?;
    let meta: Meta = serde_json::from_slice(&meta_bytes)
        .map_err(|e| NnError::CheckpointFormat(format!("meta: {e}")))?;
    meta.config.validate()?;

    let mut params = ModelParams::zeroed(&meta.config)?;
    for (i, (w, b)) in params.conv_w.iter_mut().zip(params.conv_b.iter_mut()).enumerate() {
        let wv = read_tensor(&mut f, w.len(), &format!("conv weight {i}"))?;
        w.as_slice_mut().expect("contiguous").copy_from_slice(&wv);
        let bv = read_tensor(&mut f, b.len(), &format!("conv bias {i}"))?;
        b.as_slice_mut().expect("contiguous").copy_from_slice(&bv);
    }
    let hw = read_tensor(&mut f, params.head_w.len(), "head weight")?;
    params.head_w.as_slice_mut().expect("contiguous").copy_from_slice(&hw);
    let hb = read_tensor(&mut f, params.head_b.len(), "head bias")?;
    params.head_b.as_slice_mut().expect("contiguous").copy_from_slice(&hb);

    if params.param_count() != meta.param_count {
        return Err(NnError::CheckpointFormat(format!(
            "param count mismatch: meta says {}, tensors hold {}",
            meta.param_count,
            params.param_count()
        )));
    }
    if !params.all_finite() {
        return Err(NnError::CheckpointFormat("checkpoint contains non-finite values".into()));
    }
    Ok(params)
}
