use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Nearest,
    Trilinear,
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Baseline::Nearest => "nearest",
            Baseline::Trilinear => "trilinear",
        })
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Baseline::Nearest),
            "trilinear" => Ok(Baseline::Trilinear),
            _ => Err(Error::invalid(format!("unknown baseline `{s}`"))),
        }
    }
}

/// Interpolates each `(x, y)` column along z to `r_z Z'` slices. In-plane
/// positions coincide, so trilinear reduces to linear in z. Nearest takes the
/// lower observed neighbour. Past the last observed slice, trilinear
/// extrapolates from the last two observed slices and nearest repeats the
/// last one.
pub fn baseline_interp(sparse: &Volume, r_z: usize, method: Baseline) -> Result<Volume> {
    if r_z == 0 {
        return Err(Error::invalid("r_z must be >= 1"));
    }
    let [nx, ny, nz] = sparse.dims();
    let plane = nx * ny;
    let out_z = nz * r_z;
    let mut data = vec![0.0; plane * out_z];
    let r = r_z as f64;
    for z in 0..out_z {
        let (lo, j) = (z / r_z, z % r_z);
        let dst = &mut data[z * plane..(z + 1) * plane];
        let v0 = sparse.axial_slice(lo);
        if j == 0 || method == Baseline::Nearest {
            dst.copy_from_slice(v0);
        } else if lo + 1 < nz {
            let v1 = sparse.axial_slice(lo + 1);
            let (a, b) = ((r_z - j) as f64, j as f64);
            for i in 0..plane {
                dst[i] = (v0[i] * a + v1[i] * b) / r;
            }
        } else if nz >= 2 {
            let prev = sparse.axial_slice(lo - 1);
            let (a, b) = ((r_z + j) as f64, j as f64);
            for i in 0..plane {
                dst[i] = (v0[i] * a - prev[i] * b) / r;
            }
        } else {
            dst.copy_from_slice(v0);
        }
    }
    let [rx, ry, rz] = sparse.spacing();
    Ok(Volume::new([nx, ny, out_z], [rx, ry, rz / r], data)?.with_intensity(sparse.intensity()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{decimate_z, phantom, Recipe};

    #[test]
    fn trilinear_reconstructs_ramp() {
        let v = phantom([8, 8, 13], [1.0; 3], 0, Recipe::Ramp).unwrap();
        for r in 1..5 {
            let s = decimate_z(&v, r).unwrap();
            let up = baseline_interp(&s, r, Baseline::Trilinear).unwrap();
            let up = up.crop_z(13).unwrap();
            assert_eq!(up.data(), v.data(), "r_z = {r}");
        }
    }

    #[test]
    fn nearest_takes_lower_neighbour() {
        let v = phantom([8, 8, 9], [1.0; 3], 0, Recipe::Ellipsoids { count: 3 }).unwrap();
        let s = decimate_z(&v, 2).unwrap();
        let up = baseline_interp(&s, 2, Baseline::Nearest).unwrap();
        assert_eq!(up.dims(), [8, 8, 10]);
        for z in 0..10 {
            assert_eq!(up.axial_slice(z), s.axial_slice(z / 2));
        }
    }

    #[test]
    fn constant_exact_and_observed_preserved() {
        let c = Volume::filled([8, 8, 4], [1.0, 1.0, 3.0], 0.25).unwrap();
        for m in [Baseline::Nearest, Baseline::Trilinear] {
            let up = baseline_interp(&c, 3, m).unwrap();
            assert!(up.data().iter().all(|&v| v == 0.25));
            assert_eq!(decimate_z(&up, 3).unwrap(), c);
        }
    }
}
