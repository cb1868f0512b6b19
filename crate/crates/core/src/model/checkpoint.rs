//! Binary parameter files.
//!
//! Layout, all integers little-endian:
//! `"STNCBRDG"`, u32 version, u8 dtype width (4 or 8), u32 meta length,
//! meta JSON, u32 tensor count, then per tensor: u16 name length, name,
//! u8 rank, u64 per dimension, raw values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, Parameterized};
use crate::corpus::write_atomic;
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"STNCBRDG";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// `"lm"` or `"classifier"`.
    pub kind: String,
    pub vocab_size: usize,
    pub model: ModelConfig,
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub meta: CheckpointMeta,
    pub tensors: Vec<StoredTensor<T>>,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

pub fn encode_checkpoint<T: Scalar, P: Parameterized<T>>(
    model: &P,
    meta: &CheckpointMeta,
) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(T::DTYPE);
    let meta = serde_json::to_vec(meta).expect("meta serializes");
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    let tensors = model.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in &tensors {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data {
            v.write_le(&mut out);
        }
    }
    out
}

pub fn write_checkpoint<T: Scalar, P: Parameterized<T>>(
    path: &Path,
    model: &P,
    meta: &CheckpointMeta,
) -> Result<(), ModelError> {
    write_atomic(path, &encode_checkpoint(model, meta)).map_err(|e| bad(e.to_string()))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| bad("truncated file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint<T: Scalar>(buf: &[u8]) -> Result<Checkpoint<T>, ModelError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let dtype = r.u8()?;
    if dtype != T::DTYPE {
        return Err(bad(format!(
            "stored with {}-byte floats, requested {}",
            dtype,
            T::DTYPE
        )));
    }
    let meta_len = r.u32()? as usize;
    let meta: CheckpointMeta =
        serde_json::from_slice(r.take(meta_len)?).map_err(|e| bad(format!("meta: {e}")))?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let n = r.u16()? as usize;
        let name =
            String::from_utf8(r.take(n)?.to_vec()).map_err(|_| bad("tensor name is not UTF-8"))?;
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let len: usize = shape.iter().product();
        let width = T::DTYPE as usize;
        let raw = r.take(
            len.checked_mul(width)
                .ok_or_else(|| bad("tensor too large"))?,
        )?;
        let data = raw.chunks_exact(width).map(T::read_le).collect();
        tensors.push(StoredTensor { name, shape, data });
    }
    if r.pos != buf.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(Checkpoint { meta, tensors })
}

pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>, ModelError> {
    decode_checkpoint(&std::fs::read(path)?)
}

impl<T: Scalar> Checkpoint<T> {
    /// Copies stored values into `model`, which must have the same tensor
    /// names and shapes in the same order.
    pub fn load_into<P: Parameterized<T>>(&self, model: &mut P) -> Result<(), ModelError> {
        let expected: Vec<(String, Vec<usize>)> = model
            .tensors()
            .into_iter()
            .map(|t| (t.name, t.shape))
            .collect();
        if expected.len() != self.tensors.len() {
            return Err(bad(format!(
                "{} tensors stored, model has {}",
                self.tensors.len(),
                expected.len()
            )));
        }
        for ((name, shape), s) in expected.iter().zip(&self.tensors) {
            if *name != s.name || *shape != s.shape {
                return Err(bad(format!(
                    "tensor {} {:?} does not match {} {:?}",
                    s.name, s.shape, name, shape
                )));
            }
        }
        for (dst, s) in model.tensors_mut().into_iter().zip(&self.tensors) {
            dst.data.copy_from_slice(&s.data);
        }
        Ok(())
    }
}
