//! Periodic shuffling along the column axis.
//!
//! `r_z` channel images of `H x W` interleave into one `H x r_z W` image:
//! channel `c`, pixel `(h, w)` goes to `(h, w * r_z + c)`. Channel 0 therefore
//! keeps the observed columns.

use crate::error::{Error, Result};
use crate::volume::Slice;

pub fn ps_map(c: usize, h: usize, w: usize, r_z: usize) -> Result<(usize, usize)> {
    if c >= r_z {
        return Err(Error::invalid(format!("channel {c} out of range for r_z = {r_z}")));
    }
    Ok((h, w * r_z + c))
}

pub fn periodic_shuffle(stack: &[Slice]) -> Result<Slice> {
    let first = stack
        .first()
        .ok_or_else(|| Error::invalid("periodic shuffle needs at least one channel"))?;
    let (h, w, r) = (first.rows, first.cols, stack.len());
    if let Some(bad) = stack.iter().find(|s| (s.rows, s.cols) != (h, w)) {
        return Err(Error::shape("periodic_shuffle", &[h, w], &[bad.rows, bad.cols]));
    }
    let mut data = vec![0.0; h * w * r];
    for (c, s) in stack.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                data[y * w * r + x * r + c] = s.data[y * w + x];
            }
        }
    }
    Slice::new(h, w * r, [first.spacing[0], first.spacing[1] / r as f64], data)
}

pub fn inverse_shuffle(image: &Slice, r_z: usize) -> Result<Vec<Slice>> {
    if r_z == 0 || image.cols % r_z != 0 {
        return Err(Error::invalid(format!(
            "width {} is not a multiple of r_z = {r_z}",
            image.cols
        )));
    }
    let (h, w) = (image.rows, image.cols / r_z);
    (0..r_z)
        .map(|c| {
            let mut data = Vec::with_capacity(h * w);
            for y in 0..h {
                data.extend((0..w).map(|x| image.data[y * image.cols + x * r_z + c]));
            }
            Slice::new(h, w, [image.spacing[0], image.spacing[1] * r_z as f64], data)
        })
        .collect()
}
