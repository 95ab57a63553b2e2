//! CSTF v1: a portable little-endian tensor file format.
//!
//! Layout: magic `43 53 54 46` ("CSTF"), u32 version (=1), u32 dtype code
//! (0 = f32, 1 = f64), u32 rank, `rank` u32 extents, then the row-major
//! scalar payload. Readers reject bad magic, unknown versions and
//! payload-length mismatches.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Dtype, Scalar, Tensor, MAX_RANK};

pub const MAGIC: [u8; 4] = *b"CSTF";
pub const VERSION: u32 = 1;

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * t.rank() + t.len() * T::DTYPE.size_bytes());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&T::DTYPE.code().to_le_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &e in t.shape() {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let mut off = 0usize;
    let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
        if *off + n > bytes.len() {
            return Err(Error::Format("CSTF file truncated".into()));
        }
        let s = &bytes[*off..*off + n];
        *off += n;
        Ok(s)
    };
    let read_u32 = |off: &mut usize| -> Result<u32> {
        let s = take(off, 4)?;
        Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    };

    if take(&mut off, 4)? != MAGIC {
        return Err(Error::Format("bad CSTF magic".into()));
    }
    let version = read_u32(&mut off)?;
    if version != VERSION {
        return Err(Error::Format(format!("unknown CSTF version {version}")));
    }
    let dtype_code = read_u32(&mut off)?;
    let dtype = Dtype::from_code(dtype_code)
        .ok_or_else(|| Error::Format(format!("unknown CSTF dtype code {dtype_code}")))?;
    if dtype != T::DTYPE {
        return Err(Error::Format(format!(
            "CSTF dtype is {dtype}, reader expects {}",
            T::DTYPE
        )));
    }
    let rank = read_u32(&mut off)? as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Format(format!("CSTF rank {rank} out of range")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(&mut off)? as usize);
    }
    let count: usize = shape.iter().product();
    let payload = &bytes[off..];
    if payload.len() != count * T::DTYPE.size_bytes() {
        return Err(Error::Format(format!(
            "CSTF payload length {} does not match shape {:?}",
            payload.len(),
            shape
        )));
    }
    let data = payload
        .chunks_exact(T::DTYPE.size_bytes())
        .map(T::read_le)
        .collect();
    Tensor::new(shape, data)
}

pub fn write_file<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(t))?;
    Ok(())
}

pub fn read_file<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}
