//! Binary tensor checkpoints.
//!
//! Layout (little endian): magic `RLS1`, then per tensor a `u32` name length,
//! the UTF-8 name, a `u32` rank, `rank` `u64` dims and the `f64` payload. The
//! file ends with a `u64` checksum: the wrapping sum of every payload byte.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RLS1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            dims,
            data,
        }
    }

    pub fn scalar(name: impl Into<String>, value: f64) -> Self {
        Self::new(name, vec![], vec![value])
    }
}

pub fn encode(tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    let mut checksum = 0u64;
    for t in tensors {
        let expected: usize = t.dims.iter().product();
        if expected != t.data.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {} has {} values for dims {:?}",
                t.name,
                t.data.len(),
                t.dims
            )));
        }
        out.extend((t.name.len() as u32).to_le_bytes());
        out.extend(t.name.as_bytes());
        out.extend((t.dims.len() as u32).to_le_bytes());
        for d in &t.dims {
            out.extend((*d as u64).to_le_bytes());
        }
        for v in &t.data {
            let bytes = v.to_le_bytes();
            checksum = bytes.iter().fold(checksum, |c, b| c.wrapping_add(*b as u64));
            out.extend(bytes);
        }
    }
    out.extend(checksum.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len() - 8);
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    if bytes.len() < MAGIC.len() + 8 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("missing RLS1 header".into()));
    }
    let mut cur = Cursor { bytes, pos: 4 };
    let mut checksum = 0u64;
    let mut tensors = Vec::new();
    while cur.pos < bytes.len() - 8 {
        let name_len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = cur.u32("rank")? as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("tensor {name} has implausible rank {rank}")));
        }
        let dims = (0..rank)
            .map(|_| cur.u64("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} is too large")))?;
        let payload = cur.take(count, "payload")?;
        checksum = payload.iter().fold(checksum, |c, b| c.wrapping_add(*b as u64));
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push(NamedTensor { name, dims, data });
    }
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().expect("8 bytes"));
    if stored != checksum {
        return Err(Error::Checkpoint(format!(
            "checksum mismatch: stored {stored}, computed {checksum}"
        )));
    }
    Ok(tensors)
}

pub fn write(path: &Path, tensors: &[NamedTensor]) -> Result<()> {
    fs::write(path, encode(tensors)?).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<NamedTensor>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
