//! Binary parameter checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic    4 bytes  "TSCK"
//! version  u32      1
//! count    u32      number of blocks
//! block*   name_len u32, name (UTF-8), rank u32, dims u32 × rank,
//!          payload f32 × product(dims)
//! ```
//!
//! Learnable parameters come first, then buffers; buffer names carry a
//! `buffer:` prefix.

use std::fs;
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Real;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TSCK";
pub const VERSION: u32 = 1;
const BUFFER_PREFIX: &str = "buffer:";

/// One named array from a checkpoint file.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn encode_blocks(blocks: &[Block]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for b in blocks {
        out.extend_from_slice(&(b.name.len() as u32).to_le_bytes());
        out.extend_from_slice(b.name.as_bytes());
        out.extend_from_slice(&(b.shape.len() as u32).to_le_bytes());
        for &d in &b.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &b.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_blocks(bytes: &[u8]) -> Result<Vec<Block>> {
    let mut at = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(at..at + n)
            .ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        at += n;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
    let version = u32_at(take(4)?);
    if version != VERSION {
        return Err(Error::Unsupported(format!("checkpoint version {version}")));
    }
    let count = u32_at(take(4)?) as usize;
    let mut blocks = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u32_at(take(4)?) as usize;
        let name = String::from_utf8(take(len)?.to_vec())
            .map_err(|_| Error::Format("block name is not UTF-8".into()))?;
        let rank = u32_at(take(4)?) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32_at(take(4)?) as usize);
        }
        let n: usize = shape.iter().product();
        let payload = take(4 * n)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        blocks.push(Block { name, shape, data });
    }
    Ok(blocks)
}

pub fn to_blocks<T: Real>(store: &ParamStore<T>) -> Vec<Block> {
    let params = store.params().iter().map(|p| Block {
        name: p.name.clone(),
        shape: p.shape.clone(),
        data: p.value.iter().map(|v| v.f64() as f32).collect(),
    });
    let buffers = store.buffers().iter().map(|b| Block {
        name: format!("{BUFFER_PREFIX}{}", b.name),
        shape: b.shape.clone(),
        data: b.value.iter().map(|v| v.f64() as f32).collect(),
    });
    params.chain(buffers).collect()
}

/// Overwrites `store` with the checkpoint contents; names and shapes must
/// match exactly.
pub fn load_blocks<T: Real>(store: &mut ParamStore<T>, blocks: &[Block]) -> Result<()> {
    let expected = to_blocks(store);
    if expected.len() != blocks.len() {
        return Err(Error::Shape(format!(
            "checkpoint has {} blocks, network expects {}",
            blocks.len(),
            expected.len()
        )));
    }
    for (e, b) in expected.iter().zip(blocks) {
        if e.name != b.name || e.shape != b.shape {
            return Err(Error::Shape(format!(
                "checkpoint block {} {:?} does not match network block {} {:?}",
                b.name, b.shape, e.name, e.shape
            )));
        }
    }
    let np = store.params().len();
    for (p, b) in store.params_mut().iter_mut().zip(blocks) {
        for (v, &d) in p.value.iter_mut().zip(&b.data) {
            *v = T::of(d as f64);
        }
    }
    for (i, b) in blocks[np..].iter().enumerate() {
        let buf = store.buffer_mut(super::params::BufferId(i));
        for (v, &d) in buf.iter_mut().zip(&b.data) {
            *v = T::of(d as f64);
        }
    }
    Ok(())
}

pub fn save_checkpoint<T: Real>(store: &ParamStore<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_blocks(&to_blocks(store))).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(store: &mut ParamStore<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    load_blocks(store, &decode_blocks(&bytes)?)
}
