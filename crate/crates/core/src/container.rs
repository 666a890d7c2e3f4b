//! Framed binary container shared by volume and model files.
//!
//! Layout: 8-byte magic, `u64` little-endian header length, UTF-8 JSON header,
//! then a raw little-endian payload of `f64` or `f32` values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    #[default]
    F64,
    F32,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
        }
    }
}

pub(crate) fn encode(magic: &[u8; 8], header: &str, values: &[f64], dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + header.len() + values.len() * dtype.size());
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    match dtype {
        Dtype::F64 => values
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        Dtype::F32 => values
            .iter()
            .for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
    }
    out
}

/// Splits a container into its header text and payload bytes.
pub(crate) fn split<'a>(magic: &[u8; 8], bytes: &'a [u8], path: &Path) -> Result<(&'a str, &'a [u8])> {
    if bytes.len() < 8 || &bytes[..8] != magic {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    if bytes.len() < 16 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: 16,
            found: bytes.len(),
        });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let end = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or(Error::Truncated {
            path: path.to_path_buf(),
            expected: 16 + header_len,
            found: bytes.len(),
        })?;
    let header = std::str::from_utf8(&bytes[16..end])
        .map_err(|e| Error::BadHeader(format!("header is not UTF-8: {e}")))?;
    Ok((header, &bytes[end..]))
}

pub(crate) fn decode(payload: &[u8], count: usize, dtype: Dtype, path: &Path) -> Result<Vec<f64>> {
    let expected = count * dtype.size();
    if payload.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::TrailingBytes {
            path: path.to_path_buf(),
            extra: payload.len() - expected,
        });
    }
    Ok(match dtype {
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    })
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
