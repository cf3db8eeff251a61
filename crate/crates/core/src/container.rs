//! Little-endian tensor container shared by every binary file the crate
//! writes: feature sets, descriptor checkpoints, memory banks and score maps.
//!
//! Layout:
//!
//! ```text
//! magic        [u8; 8]
//! version      u32
//! tensor count u32
//! repeated:    D u64, H u64, W u64, D*H*W x f32
//! trailer      u64 byte length, UTF-8 bytes
//! ```

use std::path::Path;

use crate::{CfaError, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MAX_DIM: u64 = (1 << 31) - 1;

pub const FEATURE_MAGIC: [u8; 8] = *b"CFAFEAT\0";
pub const DESCRIPTOR_MAGIC: [u8; 8] = *b"CFADESC\0";
pub const BANK_MAGIC: [u8; 8] = *b"CFABANK\0";
pub const SCORE_MAGIC: [u8; 8] = *b"CFAMAP\0\0";

/// One decoded tensor: `(D, H, W)` dims and its channel-major payload.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub dims: [usize; 3],
    pub data: Vec<f32>,
}

impl RawTensor {
    pub fn new(dims: [usize; 3], data: Vec<f32>) -> Result<Self> {
        let expected = checked_len(dims)?;
        if data.len() != expected {
            return Err(CfaError::Shape(format!(
                "tensor {dims:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }
}

fn checked_len(dims: [usize; 3]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| CfaError::Shape(format!("tensor {dims:?} is too large")))
}

pub fn encode(magic: [u8; 8], tensors: &[&RawTensor], trailer: &str) -> Result<Vec<u8>> {
    let payload: usize = tensors.iter().map(|t| 24 + 4 * t.data.len()).sum();
    let mut out = Vec::with_capacity(16 + payload + 8 + trailer.len());
    out.extend_from_slice(&magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let count = u32::try_from(tensors.len())
        .map_err(|_| CfaError::DimOverflow { value: tensors.len() as u64 })?;
    out.extend_from_slice(&count.to_le_bytes());
    for t in tensors {
        for &d in &t.dims {
            let d = d as u64;
            if d > MAX_DIM {
                return Err(CfaError::DimOverflow { value: d });
            }
            out.extend_from_slice(&d.to_le_bytes());
        }
        if t.data.len() != checked_len(t.dims)? {
            return Err(CfaError::Shape(format!(
                "tensor {:?} carries {} values",
                t.dims,
                t.data.len()
            )));
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&(trailer.len() as u64).to_le_bytes());
    out.extend_from_slice(trailer.as_bytes());
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CfaError::Truncated {
                context: format!(
                    "{what}: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Decodes and validates a container. Every value must be finite.
pub fn decode(bytes: &[u8], magic: [u8; 8]) -> Result<(Vec<RawTensor>, String)> {
    let mut cur = Cursor { bytes, pos: 0 };
    let found: [u8; 8] = match cur.take(8, "magic") {
        Ok(m) => m.try_into().unwrap(),
        Err(_) => {
            let mut found = [0u8; 8];
            found[..bytes.len()].copy_from_slice(bytes);
            return Err(CfaError::BadMagic {
                expected: magic,
                found,
            });
        }
    };
    if found != magic {
        return Err(CfaError::BadMagic {
            expected: magic,
            found,
        });
    }
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(CfaError::UnsupportedVersion(version));
    }
    let count = cur.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(64));
    for idx in 0..count {
        let mut dims = [0usize; 3];
        for d in &mut dims {
            let v = cur.u64("tensor dims")?;
            if v > MAX_DIM {
                return Err(CfaError::DimOverflow { value: v });
            }
            *d = v as usize;
        }
        let len = checked_len(dims)?;
        let raw = cur.take(
            len.checked_mul(4).ok_or(CfaError::DimOverflow { value: len as u64 })?,
            &format!("payload of tensor {idx} {dims:?}"),
        )?;
        let mut data = Vec::with_capacity(len);
        for (offset, chunk) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(CfaError::NonFinite {
                    tensor: idx,
                    offset,
                });
            }
            data.push(v);
        }
        tensors.push(RawTensor { dims, data });
    }
    let trailer_len = cur.u64("trailer length")?;
    let trailer_len = usize::try_from(trailer_len).map_err(|_| CfaError::Truncated {
        context: "trailer length".into(),
    })?;
    let trailer = cur.take(trailer_len, "trailer")?;
    let trailer = std::str::from_utf8(trailer)
        .map_err(|_| CfaError::BadTrailer)?
        .to_owned();
    if cur.pos != bytes.len() {
        return Err(CfaError::TrailingBytes(bytes.len() - cur.pos));
    }
    Ok((tensors, trailer))
}

pub fn write_file(
    path: &Path,
    magic: [u8; 8],
    tensors: &[&RawTensor],
    trailer: &str,
) -> Result<()> {
    let bytes = encode(magic, tensors, trailer)?;
    std::fs::write(path, bytes).map_err(|e| CfaError::io(path, e))
}

pub fn read_file(path: &Path, magic: [u8; 8]) -> Result<(Vec<RawTensor>, String)> {
    let bytes = std::fs::read(path).map_err(|e| CfaError::io(path, e))?;
    decode(&bytes, magic)
}
