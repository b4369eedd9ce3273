//! Binary checkpoint format.
//!
//! ```text
//! "CEMP" | version u32 = 1 | config_len u32 | config JSON
//! then per tensor until EOF:
//!   name_len u32 | name (UTF-8) | rank u32 | dims u32 × rank | f32 × Π dims
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::{ModelConfig, ModelParams};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CEMP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint config: {0}")]
    Config(String),
}

pub fn encode(params: &ModelParams<f32>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config = serde_json::to_vec(&params.config).expect("config serializes");
    buf.extend_from_slice(&(config.len() as u32).to_le_bytes());
    buf.extend_from_slice(&config);
    for tensor in params.tensors() {
        buf.extend_from_slice(&(tensor.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(tensor.name.as_bytes());
        buf.extend_from_slice(&(tensor.dims.len() as u32).to_le_bytes());
        for &d in &tensor.dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for x in tensor.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CheckpointError::Corrupt(format!("unexpected end of data at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn decode(bytes: &[u8]) -> Result<ModelParams<f32>, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::Corrupt("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(CheckpointError::Corrupt(format!("unsupported version {version}")));
    }
    let config_len = r.u32()?;
    let config: ModelConfig =
        serde_json::from_slice(r.take(config_len)?).map_err(|e| CheckpointError::Config(e.to_string()))?;
    let mut params = ModelParams::<f32>::zeros(&config).map_err(|e| CheckpointError::Config(e.to_string()))?;
    let expected: Vec<(String, Vec<usize>)> = params.tensors().into_iter().map(|t| (t.name, t.dims)).collect();
    let mut slots = params.tensors_mut();
    for ((name, dims), slot) in expected.iter().zip(slots.iter_mut()) {
        let name_len = r.u32()?;
        let found = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CheckpointError::Corrupt("tensor name is not UTF-8".into()))?;
        if found != name {
            return Err(CheckpointError::Corrupt(format!("expected tensor {name}, found {found}")));
        }
        let rank = r.u32()?;
        let found_dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        if &found_dims != dims {
            return Err(CheckpointError::Corrupt(format!(
                "tensor {name}: expected dims {dims:?}, found {found_dims:?}"
            )));
        }
        let raw = r.take(slot.len() * 4)?;
        for (dst, chunk) in slot.iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    drop(slots);
    if !r.done() {
        return Err(CheckpointError::Corrupt("trailing bytes after last tensor".into()));
    }
    if !params.is_finite() {
        return Err(CheckpointError::Corrupt("non-finite parameter".into()));
    }
    Ok(params)
}

pub fn save(params: &ModelParams<f32>, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, encode(params))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelParams<f32>, CheckpointError> {
    decode(&fs::read(path)?)
}
