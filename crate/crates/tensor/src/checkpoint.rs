//! Binary parameter checkpoints.
//!
//! Layout: the ASCII line `pathe-ckpt v1\n`, then one record per parameter:
//! `u32` name length, name bytes (UTF-8), `u32` rank, `rank` × `u32` dims,
//! then `product(dims)` little-endian `f32` values. All integers are
//! little-endian.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8] = b"pathe-ckpt v1\n";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint or unsupported version")]
    BadHeader,
    #[error("truncated checkpoint at byte {0}")]
    Truncated(usize),
    #[error("invalid parameter name at byte {0}")]
    BadName(usize),
    #[error("checkpoint lacks parameter `{0}`")]
    Missing(String),
    #[error("checkpoint has unexpected parameter `{0}`")]
    Unexpected(String),
    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn encode<T: Scalar>(store: &ParamStore<T>) -> Vec<u8> {
    let mut buf = CHECKPOINT_MAGIC.to_vec();
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        let value = store.value(id);
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        buf.extend_from_slice(&(value.rank() as u32).to_le_bytes());
        for &d in value.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in value.data() {
            buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    buf
}

pub fn decode(bytes: &[u8]) -> Result<Vec<CheckpointEntry>, CheckpointError> {
    if !bytes.starts_with(CHECKPOINT_MAGIC) {
        return Err(CheckpointError::BadHeader);
    }
    let mut pos = CHECKPOINT_MAGIC.len();
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], CheckpointError> {
        let end = pos
            .checked_add(n)
            .filter(|&e| e <= bytes.len())
            .ok_or(CheckpointError::Truncated(*pos))?;
        let s = &bytes[*pos..end];
        *pos = end;
        Ok(s)
    };
    let u32_at = |pos: &mut usize| -> Result<usize, CheckpointError> {
        let b = take(pos, 4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    };
    let mut entries = Vec::new();
    while pos < bytes.len() {
        let start = pos;
        let name_len = u32_at(&mut pos)?;
        let name = std::str::from_utf8(take(&mut pos, name_len)?)
            .map_err(|_| CheckpointError::BadName(start))?
            .to_string();
        let rank = u32_at(&mut pos)?;
        let shape = (0..rank)
            .map(|_| u32_at(&mut pos))
            .collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let nbytes = n.checked_mul(4).ok_or(CheckpointError::Truncated(pos))?;
        let raw = take(&mut pos, nbytes)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        entries.push(CheckpointEntry {
            name,
            shape,
            values,
        });
    }
    Ok(entries)
}

pub fn save<T: Scalar>(store: &ParamStore<T>, path: &Path) -> Result<(), CheckpointError> {
    let mut file = fs::File::create(path)?;
    file.write_all(&encode(store))?;
    Ok(())
}

/// Overwrites every parameter of `store` from the checkpoint at `path`.
/// Names and shapes must match exactly.
pub fn load_into<T: Scalar>(store: &mut ParamStore<T>, path: &Path) -> Result<(), CheckpointError> {
    let entries = decode(&fs::read(path)?)?;
    apply(store, &entries)
}

pub fn apply<T: Scalar>(
    store: &mut ParamStore<T>,
    entries: &[CheckpointEntry],
) -> Result<(), CheckpointError> {
    let mut seen = vec![false; store.len()];
    for e in entries {
        let id = store
            .id(&e.name)
            .ok_or_else(|| CheckpointError::Unexpected(e.name.clone()))?;
        if store.value(id).shape() != e.shape.as_slice() {
            return Err(CheckpointError::ShapeMismatch {
                name: e.name.clone(),
                expected: store.value(id).shape().to_vec(),
                found: e.shape.clone(),
            });
        }
        let values = e
            .values
            .iter()
            .map(|&v| T::from_f64_lossy(v as f64))
            .collect();
        *store.value_mut(id) = Tensor::new(e.shape.clone(), values).expect("shape checked");
        seen[id.index()] = true;
    }
    if let Some(id) = store.ids().find(|id| !seen[id.index()]) {
        return Err(CheckpointError::Missing(store.name(id).to_string()));
    }
    Ok(())
}
