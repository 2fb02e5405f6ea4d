//! Minimal binary tensor container.
//!
//! Layout (all integers and floats little-endian):
//!
//! | bytes            | content                      |
//! |------------------|------------------------------|
//! | 4                | magic `b"LSAD"`              |
//! | 4                | version, `u32` = 1           |
//! | 4                | ndim, `u32`                  |
//! | 4 * ndim         | dims, `u32` each             |
//! | 4 * prod(dims)   | data, `f32` row-major        |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result, TensorFormatError};

pub const MAGIC: [u8; 4] = *b"LSAD";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorFormatError> {
        if dims.is_empty() {
            return Err(TensorFormatError::InvalidHeader("ndim must be >= 1".into()));
        }
        if let Some(pos) = dims.iter().position(|&d| d == 0) {
            return Err(TensorFormatError::InvalidHeader(format!(
                "dim {pos} is zero"
            )));
        }
        let numel = checked_numel(&dims)?;
        if numel != data.len() {
            return Err(TensorFormatError::PayloadMismatch {
                expected: numel * 4,
                actual: data.len() * 4,
            });
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self, TensorFormatError> {
        let numel = checked_numel(&dims)?;
        Self::new(dims, vec![0.0; numel])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_parts(self) -> (Vec<usize>, Vec<f32>) {
        (self.dims, self.data)
    }
}

fn checked_numel(dims: &[usize]) -> Result<usize, TensorFormatError> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(|| TensorFormatError::InvalidHeader("element count overflows".into()))
}

pub fn encode_tensor(tensor: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * tensor.dims.len() + 4 * tensor.data.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensor.dims.len() as u32).to_le_bytes());
    for &d in &tensor.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &x in &tensor.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32, TensorFormatError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(TensorFormatError::Truncated {
            expected: offset + 4,
            actual: bytes.len(),
        })
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor, TensorFormatError> {
    if bytes.len() < 4 {
        return Err(TensorFormatError::Truncated {
            expected: 12,
            actual: bytes.len(),
        });
    }
    let magic = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if magic != MAGIC {
        return Err(TensorFormatError::BadMagic { found: magic });
    }
    let version = read_u32(bytes, 4)?;
    if version != VERSION {
        return Err(TensorFormatError::UnsupportedVersion(version));
    }
    let ndim = read_u32(bytes, 8)? as usize;
    if ndim == 0 {
        return Err(TensorFormatError::InvalidHeader("ndim must be >= 1".into()));
    }
    let mut dims = Vec::with_capacity(ndim.min(64));
    for i in 0..ndim {
        dims.push(read_u32(bytes, 12 + 4 * i)? as usize);
    }
    if let Some(pos) = dims.iter().position(|&d| d == 0) {
        return Err(TensorFormatError::InvalidHeader(format!(
            "dim {pos} is zero"
        )));
    }
    let header = 12 + 4 * ndim;
    let numel = checked_numel(&dims)?;
    let payload = bytes.len() - header;
    if payload < numel * 4 {
        return Err(TensorFormatError::Truncated {
            expected: numel * 4,
            actual: payload,
        });
    }
    if payload != numel * 4 {
        return Err(TensorFormatError::PayloadMismatch {
            expected: numel * 4,
            actual: payload,
        });
    }
    let data = bytes[header..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(Tensor { dims, data })
}

pub fn write_tensor(tensor: &Tensor, destination: impl AsRef<Path>) -> Result<()> {
    let destination = destination.as_ref();
    fs::write(destination, encode_tensor(tensor)).map_err(|e| Error::io(destination, e))
}

pub fn read_tensor(source: impl AsRef<Path>) -> Result<Tensor> {
    let source = source.as_ref();
    let bytes = fs::read(source).map_err(|e| Error::io(source, e))?;
    decode_tensor(&bytes).map_err(|e| Error::TensorFormat {
        path: source.to_path_buf(),
        source: e,
    })
}
