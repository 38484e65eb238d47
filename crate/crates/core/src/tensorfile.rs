//! Named f32 tensor files: `MCK1` checkpoints and `MEM1` embedding exports.
//!
//! Layout: 4-byte magic, u32 LE tensor count, then per tensor a u32 name
//! length, UTF-8 name bytes, u32 rank, `rank` u64 extents and the values
//! as f32 LE in row-major order.

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MCK1";
pub const EMBEDDING_MAGIC: &[u8; 4] = b"MEM1";

pub fn encode(magic: &[u8; 4], tensors: &[(&str, &Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_tensors(path: &Path, magic: &[u8; 4], tensors: &[(&str, &Tensor)]) -> Result<()> {
    fs::write(path, encode(magic, tensors)).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn read_tensors(path: &Path, magic: &[u8; 4]) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, magic).map_err(|msg| Error::format(path, None, msg))
}

pub fn decode(bytes: &[u8], magic: &[u8; 4]) -> std::result::Result<Vec<(String, Tensor)>, String> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let truncated = || "truncated tensor file".to_string();
    if c.take(4) != Some(&magic[..]) {
        return Err(format!("bad magic, expected {}", String::from_utf8_lossy(magic)));
    }
    let count = c.u32().ok_or_else(truncated)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = c.u32().ok_or_else(truncated)? as usize;
        let name = std::str::from_utf8(c.take(len).ok_or_else(truncated)?)
            .map_err(|_| "tensor name is not UTF-8".to_string())?
            .to_string();
        let rank = c.u32().ok_or_else(truncated)? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(c.u64().ok_or_else(truncated)? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| format!("tensor {name} has an oversized shape"))?;
        let raw = c.take(n.checked_mul(4).ok_or_else(truncated)?).ok_or_else(truncated)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| format!("tensor {name}: {e}"))?;
        out.push((name, t));
    }
    if c.pos != bytes.len() {
        return Err("trailing bytes after tensor payload".into());
    }
    Ok(out)
}
