//! PSNR and SSIM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume;

const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// `10 log10(max^2 / MSE)`; `f64::INFINITY` for identical inputs.
pub fn psnr(pred: &[f64], gt: &[f64], max_val: f64) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::shape("psnr", &[pred.len()], &[gt.len()]));
    }
    if pred.is_empty() {
        return Err(Error::invalid("psnr of empty inputs"));
    }
    let mse = pred.iter().zip(gt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_val * max_val / mse).log10())
}

/// `inf` for the identical-input sentinel, otherwise the shortest exact form.
pub fn format_db(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SsimWindow {
    /// 11x11 Gaussian (sigma 1.5), sliding over every fully inside position.
    #[default]
    Gaussian,
    /// Uniform 8x8 blocks, non-overlapping; partial blocks are dropped.
    Block,
}

impl SsimWindow {
    pub fn size(self) -> usize {
        match self {
            SsimWindow::Gaussian => 11,
            SsimWindow::Block => 8,
        }
    }

    fn weights(self) -> Vec<f64> {
        let n = self.size();
        match self {
            SsimWindow::Block => vec![1.0 / (n * n) as f64; n * n],
            SsimWindow::Gaussian => {
                let sigma = 1.5;
                let c = (n / 2) as f64;
                let g: Vec<f64> = (0..n)
                    .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
                    .collect();
                let mut w: Vec<f64> = (0..n * n).map(|i| g[i / n] * g[i % n]).collect();
                let total: f64 = w.iter().sum();
                w.iter_mut().for_each(|v| *v /= total);
                w
            }
        }
    }
}

/// Mean local SSIM of two row-major `rows x cols` images with data range `l`.
pub fn ssim(pred: &[f64], gt: &[f64], rows: usize, cols: usize, window: SsimWindow, l: f64) -> Result<f64> {
    if pred.len() != rows * cols || gt.len() != rows * cols {
        return Err(Error::shape("ssim", &[rows, cols], &[pred.len(), gt.len()]));
    }
    let n = window.size();
    if rows < n || cols < n {
        return Err(Error::invalid(format!(
            "{rows}x{cols} image is smaller than the {n}x{n} SSIM window"
        )));
    }
    let weights = window.weights();
    let c1 = (K1 * l).powi(2);
    let c2 = (K2 * l).powi(2);
    let step = match window {
        SsimWindow::Gaussian => 1,
        SsimWindow::Block => n,
    };
    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in (0..=rows - n).step_by(step) {
        for c0 in (0..=cols - n).step_by(step) {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let (w, k) = (weights[i * n + j], (r0 + i) * cols + c0 + j);
                    mx += w * pred[k];
                    my += w * gt[k];
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let (w, k) = (weights[i * n + j], (r0 + i) * cols + c0 + j);
                    let (dx, dy) = (pred[k] - mx, gt[k] - my);
                    vx += w * dx * dx;
                    vy += w * dy * dy;
                    cxy += w * dx * dy;
                }
            }
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Mean of the per-axial-slice SSIM.
pub fn ssim_volume(pred: &Volume, gt: &Volume, window: SsimWindow) -> Result<f64> {
    if pred.dims() != gt.dims() {
        return Err(Error::shape("ssim_volume", &pred.dims(), &gt.dims()));
    }
    let [nx, ny, nz] = pred.dims();
    let mut total = 0.0;
    for z in 0..nz {
        total += ssim(pred.axial_slice(z), gt.axial_slice(z), ny, nx, window, 1.0)?;
    }
    Ok(total / nz as f64)
}
