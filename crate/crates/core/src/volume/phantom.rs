//! Deterministic synthetic volumes standing in for CT scans.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Volume;
use crate::error::{Error, Result};

pub const DEFAULT_ELLIPSOIDS: usize = 8;
pub const DEFAULT_LAMINA_PERIOD_MM: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Recipe {
    /// Soft-edged random ellipsoids.
    Ellipsoids { count: usize },
    /// Sinusoidal layers stacked along z with a period in millimetres, slightly
    /// tilted and amplitude-modulated in-plane.
    Laminae { period_mm: f64 },
    /// `(x + y + z) / 2^k`: exactly representable, strictly increasing in z.
    Ramp,
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Recipe::Ellipsoids { count } => write!(f, "ellipsoids:{count}"),
            Recipe::Laminae { period_mm } => write!(f, "laminae:{period_mm}"),
            Recipe::Ramp => write!(f, "ramp"),
        }
    }
}

impl FromStr for Recipe {
    type Err = Error;

    /// `ellipsoids[:count]`, `laminae[:period_mm]` or `ramp`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let bad = || Error::invalid(format!("bad recipe `{s}`"));
        match (name, arg) {
            ("ellipsoids", None) => Ok(Recipe::Ellipsoids {
                count: DEFAULT_ELLIPSOIDS,
            }),
            ("ellipsoids", Some(a)) => Ok(Recipe::Ellipsoids {
                count: a.parse().map_err(|_| bad())?,
            }),
            ("laminae", None) => Ok(Recipe::Laminae {
                period_mm: DEFAULT_LAMINA_PERIOD_MM,
            }),
            ("laminae", Some(a)) => {
                let period_mm: f64 = a.parse().map_err(|_| bad())?;
                if !(period_mm > 0.0) {
                    return Err(bad());
                }
                Ok(Recipe::Laminae { period_mm })
            }
            ("ramp", None) => Ok(Recipe::Ramp),
            _ => Err(bad()),
        }
    }
}

pub fn phantom(dims: [usize; 3], spacing: [f64; 3], seed: u64, recipe: Recipe) -> Result<Volume> {
    if dims.iter().any(|&d| d < 8) {
        return Err(Error::invalid(format!(
            "phantom dims must be at least 8 per axis, got {dims:?}"
        )));
    }
    if spacing.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::BadSpacing { spacing });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [nx, ny, nz] = dims;
    let mut data = vec![0.0; nx * ny * nz];
    let idx = |x: usize, y: usize, z: usize| (z * ny + y) * nx + x;

    match recipe {
        Recipe::Ramp => {
            let denom = (nx + ny + nz - 3).next_power_of_two() as f64;
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        data[idx(x, y, z)] = (x + y + z) as f64 / denom;
                    }
                }
            }
            return Volume::new(dims, spacing, data);
        }
        Recipe::Laminae { period_mm } => {
            let [rx, ry, rz] = spacing;
            let tilt_x: f64 = rng.gen_range(-0.3..0.3);
            let tilt_y: f64 = rng.gen_range(-0.3..0.3);
            let phase: f64 = rng.gen_range(0.0..TAU);
            let (lx, ly): (f64, f64) = (rng.gen_range(20.0..60.0), rng.gen_range(20.0..60.0));
            let (px, py): (f64, f64) = (rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU));
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        let (fx, fy, fz) = (x as f64 * rx, y as f64 * ry, z as f64 * rz);
                        let amp = 0.7 + 0.3 * (TAU * fx / lx + px).cos() * (TAU * fy / ly + py).cos();
                        let arg = TAU * (fz + tilt_x * fx + tilt_y * fy) / period_mm + phase;
                        data[idx(x, y, z)] = amp * arg.sin();
                    }
                }
            }
        }
        Recipe::Ellipsoids { count } => {
            let extent = [nx as f64 * spacing[0], ny as f64 * spacing[1], nz as f64 * spacing[2]];
            struct Blob {
                center: [f64; 3],
                axes: [f64; 3],
                cos: f64,
                sin: f64,
                weight: f64,
            }
            let blobs: Vec<Blob> = (0..count)
                .map(|_| {
                    let center = [0, 1, 2].map(|a| rng.gen_range(0.15..0.85) * extent[a]);
                    let axes = [0, 1, 2].map(|a| rng.gen_range(0.08..0.3) * extent[a]);
                    let angle: f64 = rng.gen_range(0.0..TAU);
                    let weight = rng.gen_range(0.2..1.0) * if rng.gen_bool(0.3) { -1.0 } else { 1.0 };
                    Blob {
                        center,
                        axes,
                        cos: angle.cos(),
                        sin: angle.sin(),
                        weight,
                    }
                })
                .collect();
            const SHARPNESS: f64 = 10.0;
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        let p = [x as f64 * spacing[0], y as f64 * spacing[1], z as f64 * spacing[2]];
                        let mut v = 0.0;
                        for b in &blobs {
                            let (dx, dy, dz) = (p[0] - b.center[0], p[1] - b.center[1], p[2] - b.center[2]);
                            let u = b.cos * dx + b.sin * dy;
                            let w = -b.sin * dx + b.cos * dy;
                            let rho = ((u / b.axes[0]).powi(2) + (w / b.axes[1]).powi(2) + (dz / b.axes[2]).powi(2)).sqrt();
                            v += b.weight / (1.0 + (SHARPNESS * (rho - 1.0)).exp());
                        }
                        data[idx(x, y, z)] = v;
                    }
                }
            }
        }
    }
    Ok(Volume::new(dims, spacing, data)?.normalized())
}
