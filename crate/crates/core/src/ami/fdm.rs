//! Filter distance matrices.
//!
//! Interpolated channel `c` of an `r_z`-fold sub-pixel layer lands at column
//! `w * r_z + c` of the super-resolved image, while the `k x k` feature patch
//! that produces it sits on observed columns `(w + dw) * r_z`. The FDM holds
//! the physical distance from every patch position to the output voxel, so
//! the generated filter can depend on spacing and sub-pixel offset but not on
//! where in the slice it is applied.

use super::shuffle::ps_map;
use crate::error::{Error, Result};
use crate::volume::CsvTable;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterDistanceMatrix {
    pub c: usize,
    pub k: usize,
    pub r_z: usize,
    /// `(R_H, R_W)` in millimetres on the super-resolved grid.
    pub spacing: [f64; 2],
    /// Row-major `k x k` distances in millimetres.
    pub values: Vec<f64>,
}

impl FilterDistanceMatrix {
    pub fn get(&self, h: usize, w: usize) -> f64 {
        self.values[h * self.k + w]
    }
}

pub fn fdm(c: usize, k: usize, r_h: f64, r_w: f64, r_z: usize) -> Result<FilterDistanceMatrix> {
    if c == 0 {
        return Err(Error::invalid(
            "channel 0 carries the observed slice; no filter is generated for it",
        ));
    }
    if c >= r_z {
        return Err(Error::invalid(format!("channel {c} out of range for r_z = {r_z}")));
    }
    if k % 2 == 0 {
        return Err(Error::invalid(format!("kernel size {k} is even")));
    }
    if !(r_h > 0.0 && r_w > 0.0) {
        return Err(Error::BadSpacing {
            spacing: [r_h, r_w, 1.0],
        });
    }
    let half = k / 2;
    // Output voxel of channel c at the patch centre, in SR coordinates.
    let (oh, ow) = ps_map(c, half, half, r_z)?;
    let mut values = Vec::with_capacity(k * k);
    for h in 0..k {
        for w in 0..k {
            let (ph, pw) = ps_map(0, h, w, r_z)?;
            let dh = (ph as f64 - oh as f64) * r_h;
            let dw = (pw as f64 - ow as f64) * r_w;
            values.push(dh.hypot(dw));
        }
    }
    Ok(FilterDistanceMatrix {
        c,
        k,
        r_z,
        spacing: [r_h, r_w],
        values,
    })
}

/// Every FDM for `c = 1..r_z` as rows `c, h, w, distance_mm`.
pub fn fdm_table(k: usize, r_h: f64, r_w: f64, r_z: usize) -> Result<CsvTable> {
    let mut t = CsvTable::new(["c", "h", "w", "distance_mm"]);
    for c in 1..r_z {
        let m = fdm(c, k, r_h, r_w, r_z)?;
        for h in 0..k {
            for w in 0..k {
                t.push([c.to_string(), h.to_string(), w.to_string(), format!("{}", m.get(h, w))]);
            }
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_evaluated_k3_r2() {
        let m = fdm(1, 3, 1.0, 1.0, 2).unwrap();
        assert!((m.get(1, 1) - 1.0).abs() < 1e-12);
        assert!((m.get(1, 2) - 1.0).abs() < 1e-12);
        assert!((m.get(0, 0) - 10f64.sqrt()).abs() < 1e-12);
        assert!((m.get(2, 2) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn doubling_spacing_doubles_entries() {
        let a = fdm(2, 5, 0.7, 1.3, 4).unwrap();
        let b = fdm(2, 5, 1.4, 2.6, 4).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn channels_are_distinct() {
        let ms: Vec<_> = (1..4).map(|c| fdm(c, 3, 1.0, 1.0, 4).unwrap()).collect();
        assert_ne!(ms[0].values, ms[1].values);
        assert_ne!(ms[1].values, ms[2].values);
        assert_ne!(ms[0].values, ms[2].values);
    }

    #[test]
    fn rejects_channel_zero_and_out_of_range() {
        assert!(fdm(0, 3, 1.0, 1.0, 2).is_err());
        assert!(fdm(2, 3, 1.0, 1.0, 2).is_err());
        assert!(fdm(1, 4, 1.0, 1.0, 2).is_err());
        assert!(fdm(1, 3, 0.0, 1.0, 2).is_err());
    }

    #[test]
    fn table_rows() {
        let t = fdm_table(3, 1.0, 1.0, 2).unwrap();
        assert_eq!(t.rows.len(), 9);
        assert!(t.rows.contains(&vec!["1".into(), "1".into(), "1".into(), "1".into()]));
    }
}
