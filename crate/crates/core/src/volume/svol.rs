//! `.svol`: 8-byte magic, JSON header, little-endian voxel payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{IntensityRange, Volume};
use crate::container::{self, Dtype};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SAINTVOL";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    dtype: Dtype,
    order: String,
    normalization: Option<IntensityRange>,
}

pub(crate) fn to_bytes(v: &Volume, dtype: Dtype) -> Result<Vec<u8>> {
    let header = Header {
        dims: v.dims,
        spacing_mm: v.spacing,
        dtype,
        order: "zyx".into(),
        normalization: v.intensity,
    };
    let text = serde_json::to_string(&header)?;
    Ok(container::encode(MAGIC, &text, &v.data, dtype))
}

pub(crate) fn from_bytes(bytes: &[u8], path: &Path) -> Result<Volume> {
    let (text, payload) = container::split(MAGIC, bytes, path)?;
    let header: Header = serde_json::from_str(text)
        .map_err(|e| Error::BadHeader(format!("{}: {e}", path.display())))?;
    if header.order != "zyx" {
        return Err(Error::BadHeader(format!("unsupported voxel order `{}`", header.order)));
    }
    if header.spacing_mm.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::BadSpacing {
            spacing: header.spacing_mm,
        });
    }
    let count = header.dims.iter().product();
    let data = container::decode(payload, count, header.dtype, path)?;
    Ok(Volume::new(header.dims, header.spacing_mm, data)?.with_intensity(header.normalization))
}

pub fn save_svol(v: &Volume, path: &Path) -> Result<()> {
    container::write_file(path, &to_bytes(v, Dtype::F64)?)
}

pub fn load_svol(path: &Path) -> Result<Volume> {
    from_bytes(&container::read_file(path)?, path)
}
