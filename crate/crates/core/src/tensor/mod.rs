//! Dense `f64` tensors, a reverse-mode tape, convolution kernels and Adam.
//!
//! A [`Tensor`] is a plain value: a shape and a row-major buffer. Differentiable
//! computation happens on a [`Tape`], which records every operation applied to
//! [`Var`] handles and replays them in reverse on [`Tape::backward`]. Tapes are
//! rebuilt for every forward pass and never shared between threads.

mod adam;
pub(crate) mod conv;
mod gradcheck;
mod params;
mod tape;

pub use adam::{Adam, AdamConfig, AdamState};
pub use gradcheck::{gradcheck, gradcheck_inputs, relative_error};
pub use params::{ParamSet, ParamFile};
pub use tape::{Tape, Var};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} holds {n} values but {} were given",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    /// Channel `c` of a `[C, H, W]` tensor, as `[1, H, W]`.
    pub fn channel(&self, c: usize) -> Tensor {
        assert_eq!(self.shape.len(), 3);
        let plane = self.shape[1] * self.shape[2];
        Tensor {
            shape: vec![1, self.shape[1], self.shape[2]],
            data: self.data[c * plane..(c + 1) * plane].to_vec(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Stack `[C_i, H, W]` tensors along the channel axis without a tape.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
    if first.shape.len() != 3 {
        return Err(Error::invalid(format!(
            "concat expects [C, H, W], got {:?}",
            first.shape
        )));
    }
    let (h, w) = (first.shape[1], first.shape[2]);
    let mut channels = 0;
    for p in parts {
        if p.shape.len() != 3 || p.shape[1] != h || p.shape[2] != w {
            return Err(Error::shape("concat_channels", &first.shape, &p.shape));
        }
        channels += p.shape[0];
    }
    let mut data = Vec::with_capacity(channels * h * w);
    for p in parts {
        data.extend_from_slice(&p.data);
    }
    Ok(Tensor {
        shape: vec![channels, h, w],
        data,
    })
}

/// Inverse of [`concat_channels`]: split a `[C, H, W]` tensor into chunks.
pub fn split_channels(t: &Tensor, sizes: &[usize]) -> Result<Vec<Tensor>> {
    if t.shape.len() != 3 || sizes.iter().sum::<usize>() != t.shape[0] {
        return Err(Error::invalid(format!(
            "cannot split {:?} into channel groups {sizes:?}",
            t.shape
        )));
    }
    let plane = t.shape[1] * t.shape[2];
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &s in sizes {
        out.push(Tensor {
            shape: vec![s, t.shape[1], t.shape[2]],
            data: t.data[start * plane..(start + s) * plane].to_vec(),
        });
        start += s;
    }
    Ok(out)
}
