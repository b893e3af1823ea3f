//! Binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "TBST" | version: u32 | count: u32
//! count × { name_len: u32 | name: utf8 | ndim: u32 | dims: ndim × u64 | dtype: u8 | offset: u64 }
//! payload: raw little-endian values, entry offsets relative to payload start
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TBST";
pub const VERSION: u32 = 1;

pub fn to_bytes<S: Scalar>(store: &ParamStore<S>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for p in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.push(S::DTYPE as u8);
        out.extend_from_slice(&offset.to_le_bytes());
        offset += (p.value.len() * S::DTYPE.size()) as u64;
    }
    for p in store.iter() {
        for &v in p.value.data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated manifest".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Parses a container, converting stored values to `S` when the dtype differs.
pub fn from_bytes<S: Scalar>(bytes: &[u8]) -> Result<ParamStore<S>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not utf-8".into()))?
            .to_string();
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let dtype = DType::from_tag(r.take(1)?[0]).ok_or_else(|| Error::Checkpoint("unknown dtype".into()))?;
        let offset = r.u64()? as usize;
        entries.push((name, shape, dtype, offset));
    }
    let payload = &bytes[r.pos..];
    let mut store = ParamStore::new();
    let mut expected_offset = 0usize;
    for (name, shape, dtype, offset) in entries {
        let n: usize = shape.iter().product();
        let len = n * dtype.size();
        if offset != expected_offset || offset + len > payload.len() {
            return Err(Error::Checkpoint(format!("payload for `{name}` out of bounds")));
        }
        let raw = &payload[offset..offset + len];
        let data: Vec<S> = match dtype {
            DType::F32 => raw.chunks_exact(4).map(|c| S::of(f32::read_le(c) as f64)).collect(),
            DType::F64 => raw.chunks_exact(8).map(|c| S::of(f64::read_le(c))).collect(),
        };
        let value = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("`{name}`: {e}")))?;
        store.add(name, value);
        expected_offset += len;
    }
    if expected_offset != payload.len() {
        return Err(Error::Checkpoint("trailing bytes after payload".into()));
    }
    Ok(store)
}

pub fn save<S: Scalar>(store: &ParamStore<S>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(store))?;
    Ok(())
}

pub fn load<S: Scalar>(path: impl AsRef<Path>) -> Result<ParamStore<S>> {
    from_bytes(&std::fs::read(path)?)
}
