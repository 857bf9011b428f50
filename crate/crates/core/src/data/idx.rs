//! Reader for the IDX binary tensor format used by MNIST-style digit files.
//!
//! A file starts with two zero bytes, a type code and a dimension count,
//! followed by one big-endian `u32` per dimension and the row-major payload.

use super::LabeledDataset;
use crate::error::{format_err, invalid, Error, Result};
use crate::nn::Matrix;

/// Decoded tensor: its dimensions and the data flattened to
/// `dims[0] × product(dims[1..])`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ElementType {
    U8,
    I8,
    I16,
    I32,
    F32,
    F64,
}

impl ElementType {
    fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0x08 => Self::U8,
            0x09 => Self::I8,
            0x0B => Self::I16,
            0x0C => Self::I32,
            0x0D => Self::F32,
            0x0E => Self::F64,
            other => return Err(Error::Unsupported(format!("IDX type code {other:#04x}"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Self::U8 | Self::I8 => 1,
            Self::I16 => 2,
            Self::I32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            // Pixel bytes are scaled to [0, 1].
            Self::U8 => b[0] as f64 / 255.0,
            Self::I8 => b[0] as i8 as f64,
            Self::I16 => i16::from_be_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_be_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_be_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_be_bytes(b.try_into().expect("8 bytes")),
        }
    }
}

struct Header {
    ty: ElementType,
    dims: Vec<usize>,
    count: usize,
    payload_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 4 {
        return Err(format_err("IDX stream shorter than its magic number"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(format_err("bad IDX magic: first two bytes must be zero"));
    }
    let ty = ElementType::from_code(bytes[2])?;
    let ndims = bytes[3] as usize;
    if ndims == 0 {
        return Err(format_err("IDX tensor must have at least one dimension"));
    }
    let payload_start = 4 + 4 * ndims;
    if bytes.len() < payload_start {
        return Err(format_err("truncated IDX dimension table"));
    }
    let dims: Vec<usize> = bytes[4..payload_start]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format_err("IDX dimensions overflow"))?;
    let needed = count
        .checked_mul(ty.size())
        .and_then(|n| n.checked_add(payload_start))
        .ok_or_else(|| format_err("IDX dimensions overflow"))?;
    if bytes.len() < needed {
        return Err(format_err(format!(
            "truncated IDX payload: expected {} bytes, found {}",
            needed - payload_start,
            bytes.len() - payload_start
        )));
    }
    if bytes.len() > needed {
        return Err(format_err(format!(
            "{} trailing bytes after IDX payload",
            bytes.len() - needed
        )));
    }
    Ok(Header {
        ty,
        dims,
        count,
        payload_start,
    })
}

/// Parses an IDX stream. 1-D tensors come back as an `N × 1` matrix.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    let header = parse_header(bytes)?;
    let size = header.ty.size();
    let payload = &bytes[header.payload_start..header.payload_start + header.count * size];
    let data: Vec<f64> = payload.chunks_exact(size).map(|c| header.ty.decode(c)).collect();
    let rows = header.dims[0];
    let cols = header.dims[1..]
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format_err("IDX dimensions overflow"))?;
    let data = Matrix::from_vec(rows, cols, data).map_err(|e| format_err(e.to_string()))?;
    Ok(IdxTensor {
        dims: header.dims,
        data,
    })
}

/// Parses a 1-D unsigned-byte IDX label file into raw label values.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let header = parse_header(bytes)?;
    if header.ty != ElementType::U8 || header.dims.len() != 1 {
        return Err(format_err("label files must be 1-D unsigned bytes"));
    }
    Ok(bytes[header.payload_start..].iter().map(|&b| b as usize).collect())
}

/// Pairs an image file with its label file.
pub fn idx_dataset(images: &[u8], labels: &[u8], num_classes: usize) -> Result<LabeledDataset> {
    let images = parse_idx(images)?;
    let labels = parse_idx_labels(labels)?;
    if images.data.rows() != labels.len() {
        return Err(invalid(format!(
            "{} images but {} labels",
            images.data.rows(),
            labels.len()
        )));
    }
    LabeledDataset::labeled(images.data, labels, num_classes)
}
