//! Flat binary parameter container.
//!
//! ```text
//! "PTNN"            4 bytes
//! version           u32 LE
//! tensor count      u32 LE
//! per tensor:
//!   name length     u32 LE
//!   name            UTF-8 bytes
//!   rank            u32 LE
//!   dims            rank × u64 LE
//!   values          product(dims) × f64 LE
//! ```
//!
//! Tensors are written in name order. Trainable flags and roles are not
//! stored; they belong to the architecture that owns the parameters.

use std::io::{Read, Write};

use crate::error::{NnError, Result};
use crate::params::ParameterSet;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PTNN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut w: W, params: &ParameterSet) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, p) in params.iter() {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        let shape = p.tensor.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for d in shape {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        for v in p.tensor.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| NnError::Checkpoint(format!("tensor name: {e}")))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut values = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut b)?;
            values.push(f64::from_le_bytes(b));
        }
        out.push((name, Tensor::new(shape, values)?));
    }
    Ok(out)
}

/// Overwrites the values of `params` with checkpoint tensors. Every tensor in
/// `params` must be present with an identical shape, and no extras are allowed.
pub fn load_into(params: &mut ParameterSet, tensors: Vec<(String, Tensor)>) -> Result<()> {
    if tensors.len() != params.len() {
        return Err(NnError::Checkpoint(format!(
            "checkpoint has {} tensors, architecture expects {}",
            tensors.len(),
            params.len()
        )));
    }
    for (name, t) in tensors {
        let p = params
            .get_mut(&name)
            .map_err(|_| NnError::Checkpoint(format!("unexpected tensor `{name}`")))?;
        if p.tensor.shape() != t.shape() {
            return Err(NnError::Checkpoint(format!(
                "tensor `{name}` has shape {:?}, expected {:?}",
                t.shape(),
                p.tensor.shape()
            )));
        }
        p.tensor.values_mut().copy_from_slice(t.values());
    }
    Ok(())
}
