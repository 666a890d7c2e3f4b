//! Zero-padded, stride-1, shape-preserving 2-D convolution kernels.
//!
//! Layouts: input `[C_in, H, W]`, kernel `[C_out, C_in, k, k]`, output
//! `[C_out, H, W]`, all row-major. Padding is `k / 2` on every side.
//!
//! Every output pixel accumulates its terms in the same (in-channel, ky, kx)
//! order regardless of image size, so a pixel whose receptive field is fully
//! inside a crop gets the bit-identical value it gets in the full image.

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvGeom {
    fn pad(&self) -> isize {
        (self.k / 2) as isize
    }

    /// Output rows `y` whose source row `y + dy` is in bounds, and likewise
    /// for columns.
    #[inline]
    fn valid_range(len: usize, d: isize) -> (usize, usize) {
        let lo = (-d).max(0) as usize;
        let hi = (len as isize - d.max(0)).max(0) as usize;
        (lo.min(len), hi.max(lo.min(len)))
    }
}

pub(crate) fn forward(input: &[f64], kernel: &[f64], g: ConvGeom) -> Vec<f64> {
    let ConvGeom { c_in, c_out, h, w, k } = g;
    let hw = h * w;
    let p = g.pad();
    let mut out = vec![0.0; c_out * hw];
    for o in 0..c_out {
        let out_plane = &mut out[o * hw..(o + 1) * hw];
        for i in 0..c_in {
            let in_plane = &input[i * hw..(i + 1) * hw];
            for ky in 0..k {
                let dy = ky as isize - p;
                let (y_lo, y_hi) = ConvGeom::valid_range(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - p;
                    let (x_lo, x_hi) = ConvGeom::valid_range(w, dx);
                    if x_lo == x_hi {
                        continue;
                    }
                    let wv = kernel[((o * c_in + i) * k + ky) * k + kx];
                    for y in y_lo..y_hi {
                        let sy = (y as isize + dy) as usize;
                        let src_lo = (x_lo as isize + dx) as usize;
                        let src = &in_plane[sy * w + src_lo..sy * w + src_lo + (x_hi - x_lo)];
                        let dst = &mut out_plane[y * w + x_lo..y * w + x_hi];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn backward_input(grad_out: &[f64], kernel: &[f64], g: ConvGeom) -> Vec<f64> {
    let ConvGeom { c_in, c_out, h, w, k } = g;
    let hw = h * w;
    let p = g.pad();
    let mut grad_in = vec![0.0; c_in * hw];
    for o in 0..c_out {
        let g_plane = &grad_out[o * hw..(o + 1) * hw];
        for i in 0..c_in {
            let gi_plane = &mut grad_in[i * hw..(i + 1) * hw];
            for ky in 0..k {
                let dy = ky as isize - p;
                let (y_lo, y_hi) = ConvGeom::valid_range(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - p;
                    let (x_lo, x_hi) = ConvGeom::valid_range(w, dx);
                    if x_lo == x_hi {
                        continue;
                    }
                    let wv = kernel[((o * c_in + i) * k + ky) * k + kx];
                    for y in y_lo..y_hi {
                        let sy = (y as isize + dy) as usize;
                        let dst_lo = (x_lo as isize + dx) as usize;
                        let src = &g_plane[y * w + x_lo..y * w + x_hi];
                        let dst = &mut gi_plane[sy * w + dst_lo..sy * w + dst_lo + (x_hi - x_lo)];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    grad_in
}

pub(crate) fn backward_kernel(grad_out: &[f64], input: &[f64], g: ConvGeom) -> Vec<f64> {
    let ConvGeom { c_in, c_out, h, w, k } = g;
    let hw = h * w;
    let p = g.pad();
    let mut grad_k = vec![0.0; c_out * c_in * k * k];
    for o in 0..c_out {
        let g_plane = &grad_out[o * hw..(o + 1) * hw];
        for i in 0..c_in {
            let in_plane = &input[i * hw..(i + 1) * hw];
            for ky in 0..k {
                let dy = ky as isize - p;
                let (y_lo, y_hi) = ConvGeom::valid_range(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - p;
                    let (x_lo, x_hi) = ConvGeom::valid_range(w, dx);
                    if x_lo == x_hi {
                        continue;
                    }
                    let mut acc = 0.0;
                    for y in y_lo..y_hi {
                        let sy = (y as isize + dy) as usize;
                        let src_lo = (x_lo as isize + dx) as usize;
                        let a = &g_plane[y * w + x_lo..y * w + x_hi];
                        let b = &in_plane[sy * w + src_lo..sy * w + src_lo + (x_hi - x_lo)];
                        acc += a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
                    }
                    grad_k[((o * c_in + i) * k + ky) * k + kx] += acc;
                }
            }
        }
    }
    grad_k
}
