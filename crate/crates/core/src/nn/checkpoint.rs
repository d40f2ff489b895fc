//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SFUS" | version: u32 | repeated {
//!     name_len: u32 | name: utf-8 | rank: u32 | dims: u64 × rank | values: f32 × Π dims
//! }
//! ```
//!
//! Records run to end of file.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SFUS";
pub const VERSION: u32 = 1;

pub fn encode(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + store.count() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (_, p) in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.tensor.rank() as u32).to_le_bytes());
        for d in p.tensor.shape() {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in p.tensor.data() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
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
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} (needed {} more)",
                self.pos, n
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamStore> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).map_err(|_| Error::Checkpoint("missing magic".into()))? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut store = ParamStore::new();
    while !r.done() {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| Error::Checkpoint(format!("parameter name: {e}")))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let payload = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if store.find(&name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
        }
        store.add(name, Tensor::new(shape, data)?);
    }
    Ok(store)
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    std::fs::write(path, encode(store))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore> {
    decode(&std::fs::read(path)?)
}

/// SHA-256 of the encoded checkpoint, hex.
pub fn content_hash(store: &ParamStore) -> String {
    hex::encode(Sha256::digest(encode(store)))
}
