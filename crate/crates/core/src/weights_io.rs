//! Shared little-endian binary framing for weights and corpus files.
//!
//! Every file starts with an 8-byte magic string and a u32 version. Matrices
//! are stored as (rows: u64, cols: u64, data: rows*cols f64) row-major.

use std::io::{Read, Write};

use crate::numerics::Matrix;
use crate::{Error, Result};

pub fn write_magic<W: Write>(w: &mut W, magic: &[u8; 8], version: u32) -> Result<()> {
    w.write_all(magic)?;
    w.write_all(&version.to_le_bytes())?;
    Ok(())
}

pub fn read_magic<R: Read>(r: &mut R, magic: &[u8; 8]) -> Result<u32> {
    let mut got = [0u8; 8];
    r.read_exact(&mut got)?;
    if &got != magic {
        return Err(Error::Format(format!(
            "bad magic: expected {:?}, got {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&got)
        )));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v)?;
    Ok(u32::from_le_bytes(v))
}

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_i32<W: Write>(w: &mut W, v: i32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn read_i32<R: Read>(r: &mut R) -> Result<i32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(i32::from_le_bytes(b))
}

pub fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn write_matrix<W: Write>(w: &mut W, m: &Matrix) -> Result<()> {
    write_u64(w, m.rows() as u64)?;
    write_u64(w, m.cols() as u64)?;
    for &v in m.data() {
        write_f64(w, v)?;
    }
    Ok(())
}

pub fn read_matrix<R: Read>(r: &mut R) -> Result<Matrix> {
    let rows = read_u64(r)? as usize;
    let cols = read_u64(r)? as usize;
    if rows.checked_mul(cols).is_none() || rows * cols > 1 << 28 {
        return Err(Error::Format(format!("implausible matrix shape {rows}x{cols}")));
    }
    let mut data = vec![0.0; rows * cols];
    for v in data.iter_mut() {
        *v = read_f64(r)?;
    }
    Matrix::from_vec(rows, cols, data)
}

/// Vectors are framed as 1 x n matrices.
pub fn write_vector<W: Write>(w: &mut W, v: &[f64]) -> Result<()> {
    write_matrix(w, &Matrix::from_vec(1, v.len(), v.to_vec())?)
}

pub fn read_vector<R: Read>(r: &mut R) -> Result<Vec<f64>> {
    let m = read_matrix(r)?;
    if m.rows() != 1 {
        return Err(Error::Format(format!(
            "expected a 1-row vector frame, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    Ok(m.data().to_vec())
}

/// FNV-1a over the little-endian bytes of a float slice; used for
/// frozen-weights content checks.
pub fn content_hash(parts: &[&[f64]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for v in *part {
            for b in v.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
    }
    h
}
