//! Binary parameter checkpoints.
//!
//! Layout: `b"LOADCKPT"`, version `u32`, then one record per parameter until
//! end of file: name length `u32`, UTF-8 name, rank `u32`, `rank` dims as
//! `u32`, and the values as little-endian `f64`. All integers are little-endian.

use std::io::{Read, Write};

use super::{ParamGroup, Result, Tensor, TensorError};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LOADCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<T: Scalar>(params: &ParamGroup<T>, mut w: impl Write) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for (name, entry) in params.iter() {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        let shape = entry.value.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in entry.value.data() {
            w.write_all(&v.f64().to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32(buf: &[u8], pos: &mut usize) -> Result<u32> {
    let end = *pos + 4;
    let bytes = buf
        .get(*pos..end)
        .ok_or_else(|| TensorError::Checkpoint("truncated integer".into()))?;
    *pos = end;
    Ok(u32::from_le_bytes(bytes.try_into().unwrap()))
}

pub fn read_checkpoint<T: Scalar>(mut r: impl Read) -> Result<ParamGroup<T>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() < 12 || &buf[..8] != CHECKPOINT_MAGIC {
        return Err(TensorError::Checkpoint("bad magic".into()));
    }
    let mut pos = 8;
    let version = read_u32(&buf, &mut pos)?;
    if version != CHECKPOINT_VERSION {
        return Err(TensorError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let mut out = ParamGroup::new();
    while pos < buf.len() {
        let len = read_u32(&buf, &mut pos)? as usize;
        let name = buf
            .get(pos..pos + len)
            .ok_or_else(|| TensorError::Checkpoint("truncated name".into()))?;
        let name = String::from_utf8(name.to_vec())
            .map_err(|_| TensorError::Checkpoint("name is not UTF-8".into()))?;
        pos += len;
        let rank = read_u32(&buf, &mut pos)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&buf, &mut pos)? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = buf
            .get(pos..pos + 8 * n)
            .ok_or_else(|| TensorError::Checkpoint(format!("truncated data for `{name}`")))?;
        pos += 8 * n;
        let data = raw
            .chunks_exact(8)
            .map(|c| T::c(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        out.insert(name, Tensor::new(shape, data)?);
    }
    Ok(out)
}
