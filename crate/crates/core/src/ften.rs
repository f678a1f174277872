//! `FTEN` binary tensor files.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 0..4  | magic `FTEN` |
//! | 4     | version, `1` |
//! | 5     | dtype, `1` = f32 LE |
//! | 6     | ndim, `2` or `3` |
//! | 7     | reserved, `0` |
//! | 8..   | `ndim` u32 dims, order `[C,] H, W` |
//! | ..    | payload, row-major (channel-major for 3-D) |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tensor2D, Tensor3D};

pub const MAGIC: &[u8; 4] = b"FTEN";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 1;
const FIXED_HEADER: usize = 8;

/// A tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum FtenTensor {
    Two(Tensor2D<f32>),
    Three(Tensor3D<f32>),
}

impl FtenTensor {
    pub fn dims(&self) -> Vec<usize> {
        match self {
            FtenTensor::Two(t) => vec![t.height(), t.width()],
            FtenTensor::Three(t) => vec![t.channels(), t.height(), t.width()],
        }
    }

    fn payload(&self) -> &[f32] {
        match self {
            FtenTensor::Two(t) => t.data(),
            FtenTensor::Three(t) => t.data(),
        }
    }

    pub fn into_2d(self) -> Result<Tensor2D<f32>> {
        match self {
            FtenTensor::Two(t) => Ok(t),
            FtenTensor::Three(t) => Err(Error::shape(format!(
                "expected a 2-D tensor, found 3-D {:?}",
                t.shape()
            ))),
        }
    }

    pub fn into_3d(self) -> Result<Tensor3D<f32>> {
        match self {
            FtenTensor::Three(t) => Ok(t),
            FtenTensor::Two(t) => Err(Error::shape(format!(
                "expected a 3-D tensor, found 2-D {:?}",
                t.shape()
            ))),
        }
    }
}

impl<T: Scalar> From<&Tensor2D<T>> for FtenTensor {
    fn from(t: &Tensor2D<T>) -> Self {
        FtenTensor::Two(t.cast())
    }
}

impl<T: Scalar> From<&Tensor3D<T>> for FtenTensor {
    fn from(t: &Tensor3D<T>) -> Self {
        FtenTensor::Three(t.cast())
    }
}

pub fn header_len(ndim: usize) -> usize {
    FIXED_HEADER + 4 * ndim
}

pub fn to_bytes(t: &FtenTensor) -> Vec<u8> {
    let dims = t.dims();
    let payload = t.payload();
    let mut out = Vec::with_capacity(header_len(dims.len()) + 4 * payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[VERSION, DTYPE_F32, dims.len() as u8, 0]);
    for d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<FtenTensor> {
    if bytes.len() < FIXED_HEADER {
        return Err(Error::format(
            bytes.len() as u64,
            format!("header truncated: {} of {FIXED_HEADER} bytes", bytes.len()),
        ));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::format(0, format!("bad magic {:?}", &bytes[0..4])));
    }
    if bytes[4] != VERSION {
        return Err(Error::format(
            4,
            format!("unsupported version {}", bytes[4]),
        ));
    }
    if bytes[5] != DTYPE_F32 {
        return Err(Error::format(5, format!("unsupported dtype {}", bytes[5])));
    }
    let ndim = bytes[6] as usize;
    if ndim != 2 && ndim != 3 {
        return Err(Error::format(6, format!("ndim must be 2 or 3, got {ndim}")));
    }
    if bytes[7] != 0 {
        return Err(Error::format(7, format!("reserved byte is {}", bytes[7])));
    }
    let hlen = header_len(ndim);
    if bytes.len() < hlen {
        return Err(Error::format(
            bytes.len() as u64,
            format!("dimension block truncated: need {hlen} header bytes"),
        ));
    }
    let mut dims = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let off = FIXED_HEADER + 4 * i;
        let d = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        if d == 0 {
            return Err(Error::format(off as u64, "zero dimension"));
        }
        dims.push(d);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format(FIXED_HEADER as u64, "dimension product overflows"))?;
    let expected = count
        .checked_mul(4)
        .and_then(|n| n.checked_add(hlen))
        .ok_or_else(|| Error::format(FIXED_HEADER as u64, "payload size overflows"))?;
    if bytes.len() < expected {
        return Err(Error::format(
            bytes.len() as u64,
            format!("payload truncated: expected {expected} bytes total"),
        ));
    }
    if bytes.len() > expected {
        return Err(Error::format(
            expected as u64,
            "trailing bytes after payload",
        ));
    }
    let data: Vec<f32> = bytes[hlen..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(match ndim {
        2 => FtenTensor::Two(Tensor2D::from_vec(dims[0], dims[1], data)?),
        _ => FtenTensor::Three(Tensor3D::from_vec(dims[0], dims[1], dims[2], data)?),
    })
}

pub fn write_tensor(path: impl AsRef<Path>, t: &FtenTensor) -> Result<()> {
    fs::write(path, to_bytes(t))?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<FtenTensor> {
    let bytes = fs::read(path)?;
    from_bytes(&bytes)
}
