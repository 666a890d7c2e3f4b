//! Spacing-aware 3-D volumes, their slice views, and axial decimation.
//!
//! Axes follow the usual radiological naming: `x` is sagittal, `y` coronal and
//! `z` axial. Data is stored z-major (`data[z][y][x]`).

mod export;
mod phantom;
mod svol;

pub use export::{export_csv, export_pgm, CsvTable};
pub use phantom::{phantom, Recipe};
pub use svol::{load_svol, save_svol};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Sagittal,
    Coronal,
    Axial,
}

impl View {
    /// Volume axis the slices of this view are stacked along.
    pub fn index_axis(self) -> usize {
        match self {
            View::Sagittal => 0,
            View::Coronal => 1,
            View::Axial => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            View::Sagittal => "sagittal",
            View::Coronal => "coronal",
            View::Axial => "axial",
        }
    }
}

impl std::str::FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sagittal" => Ok(View::Sagittal),
            "coronal" => Ok(View::Coronal),
            "axial" => Ok(View::Axial),
            other => Err(Error::invalid(format!("unknown view `{other}`"))),
        }
    }
}

/// Source intensity bounds that were mapped onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityRange {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f64; 3],
    data: Vec<f64>,
    intensity: Option<IntensityRange>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], data: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("degenerate dims {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::BadSpacing { spacing });
        }
        let n = dims[0] * dims[1] * dims[2];
        if n != data.len() {
            return Err(Error::invalid(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        Ok(Volume {
            dims,
            spacing,
            data,
            intensity: None,
        })
    }

    pub fn filled(dims: [usize; 3], spacing: [f64; 3], value: f64) -> Result<Self> {
        Volume::new(dims, spacing, vec![value; dims[0] * dims[1] * dims[2]])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn intensity(&self) -> Option<IntensityRange> {
        self.intensity
    }

    pub fn with_intensity(mut self, range: Option<IntensityRange>) -> Self {
        self.intensity = range;
        self
    }

    /// Same voxels, different declared spacing.
    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Result<Self> {
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::BadSpacing { spacing });
        }
        self.spacing = spacing;
        Ok(self)
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(x, y, z)]
    }

    /// Min-max rescale onto `[0, 1]`, recording the source bounds. A constant
    /// volume maps to zeros.
    pub fn normalized(mut self) -> Self {
        let (lo, hi) = self
            .data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let span = hi - lo;
        for v in &mut self.data {
            *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
        }
        self.intensity = Some(IntensityRange { min: lo, max: hi });
        self
    }

    pub fn axial_slice(&self, z: usize) -> &[f64] {
        let plane = self.dims[0] * self.dims[1];
        &self.data[z * plane..(z + 1) * plane]
    }

    /// Keep the first `depth` axial slices.
    pub fn crop_z(&self, depth: usize) -> Result<Volume> {
        if depth == 0 || depth > self.dims[2] {
            return Err(Error::invalid(format!(
                "cannot crop depth {} to {depth}",
                self.dims[2]
            )));
        }
        let plane = self.dims[0] * self.dims[1];
        Ok(Volume {
            dims: [self.dims[0], self.dims[1], depth],
            spacing: self.spacing,
            data: self.data[..depth * plane].to_vec(),
            intensity: self.intensity,
        })
    }
}

/// Keeps axial slices `0, r, 2r, ...`; no low-pass filtering.
///
/// The output has `(Z - 1) / r + 1` slices and axial spacing `r * R_z`.
pub fn decimate_z(v: &Volume, r_z: usize) -> Result<Volume> {
    let [x, y, z] = v.dims;
    if r_z < 1 {
        return Err(Error::invalid("r_z must be at least 1"));
    }
    if r_z > z {
        return Err(Error::invalid(format!("r_z = {r_z} exceeds depth {z}")));
    }
    let out_z = (z - 1) / r_z + 1;
    let plane = x * y;
    let mut data = Vec::with_capacity(out_z * plane);
    for k in 0..out_z {
        data.extend_from_slice(v.axial_slice(k * r_z));
    }
    Ok(Volume {
        dims: [x, y, out_z],
        spacing: [v.spacing[0], v.spacing[1], v.spacing[2] * r_z as f64],
        data,
        intensity: v.intensity,
    })
}

/// A 2-D image with physical spacing `(row, col)` in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub rows: usize,
    pub cols: usize,
    pub spacing: [f64; 2],
    pub data: Vec<f64>,
}

impl Slice {
    pub fn new(rows: usize, cols: usize, spacing: [f64; 2], data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::invalid(format!(
                "{rows}x{cols} slice needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Slice {
            rows,
            cols,
            spacing,
            data,
        })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }
}

/// All slices of one view, ordered by their index along the view axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceStack {
    pub view: View,
    pub slices: Vec<Slice>,
}

/// Sagittal slice `x` is `(Y, Z)` with spacing `(R_y, R_z)`; coronal slice `y`
/// is `(X, Z)` with `(R_x, R_z)`; axial slice `z` is `(X, Y)` with `(R_x, R_y)`.
pub fn extract_view(v: &Volume, view: View) -> SliceStack {
    let n = v.dims[view.index_axis()];
    SliceStack {
        view,
        slices: (0..n).map(|i| view_slice(v, view, i)).collect(),
    }
}

/// Slice `i` of `view`, as [`extract_view`] would return it.
pub fn view_slice(v: &Volume, view: View, i: usize) -> Slice {
    let [nx, ny, nz] = v.dims;
    let [rx, ry, rz] = v.spacing;
    let (rows, cols, spacing) = match view {
        View::Sagittal => (ny, nz, [ry, rz]),
        View::Coronal => (nx, nz, [rx, rz]),
        View::Axial => (nx, ny, [rx, ry]),
    };
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        data.extend((0..cols).map(|c| match view {
            View::Sagittal => v.get(i, r, c),
            View::Coronal => v.get(r, i, c),
            View::Axial => v.get(r, c, i),
        }));
    }
    Slice {
        rows,
        cols,
        spacing,
        data,
    }
}

impl SliceStack {
    /// Inverse of [`extract_view`]; `index_spacing` is the spacing along the
    /// stacking axis, which the slices themselves do not carry.
    pub fn assemble(&self, index_spacing: f64) -> Result<Volume> {
        let first = self
            .slices
            .first()
            .ok_or_else(|| Error::invalid("cannot assemble an empty stack"))?;
        if let Some(bad) = self
            .slices
            .iter()
            .position(|s| s.rows != first.rows || s.cols != first.cols || s.data.len() != s.rows * s.cols)
        {
            return Err(Error::invalid(format!(
                "ragged stack: slice {bad} is {}x{}, slice 0 is {}x{}",
                self.slices[bad].rows, self.slices[bad].cols, first.rows, first.cols
            )));
        }
        let n = self.slices.len();
        let (dims, spacing) = match self.view {
            View::Sagittal => (
                [n, first.rows, first.cols],
                [index_spacing, first.spacing[0], first.spacing[1]],
            ),
            View::Coronal => (
                [first.rows, n, first.cols],
                [first.spacing[0], index_spacing, first.spacing[1]],
            ),
            View::Axial => (
                [first.rows, first.cols, n],
                [first.spacing[0], first.spacing[1], index_spacing],
            ),
        };
        let mut vol = Volume::new(dims, spacing, vec![0.0; dims[0] * dims[1] * dims[2]])?;
        for (i, s) in self.slices.iter().enumerate() {
            for r in 0..s.rows {
                for c in 0..s.cols {
                    let (x, y, z) = match self.view {
                        View::Sagittal => (i, r, c),
                        View::Coronal => (r, i, c),
                        View::Axial => (r, c, i),
                    };
                    let idx = vol.index(x, y, z);
                    vol.data[idx] = s.data[r * s.cols + c];
                }
            }
        }
        Ok(vol)
    }
}
