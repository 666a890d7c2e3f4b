use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{format_db, psnr, ssim, SsimWindow};
use crate::volume::{CsvTable, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Full,
    /// Central `c x c` in-plane patch over all z.
    Central(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceSet {
    All,
    /// Axial slices with `z % r_z != 0`.
    Synthesized,
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Region::Full => f.write_str("full"),
            Region::Central(c) => write!(f, "center{c}"),
        }
    }
}

impl fmt::Display for SliceSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SliceSet::All => "all",
            SliceSet::Synthesized => "synth",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub volume_id: String,
    pub method: String,
    pub r_z: usize,
    pub region: Region,
    pub slices: SliceSet,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
}

impl MetricsReport {
    pub fn extend(&mut self, rows: impl IntoIterator<Item = MetricRow>) {
        self.rows.extend(rows);
    }

    /// Rows matching all given keys.
    pub fn select<'a>(
        &'a self,
        method: &'a str,
        r_z: usize,
        region: Region,
        slices: SliceSet,
    ) -> impl Iterator<Item = &'a MetricRow> + 'a {
        self.rows
            .iter()
            .filter(move |r| r.method == method && r.r_z == r_z && r.region == region && r.slices == slices)
    }

    /// Mean PSNR over matching rows; `None` if there are none.
    pub fn mean_psnr(&self, method: &str, r_z: usize, region: Region, slices: SliceSet) -> Option<f64> {
        let v: Vec<f64> = self.select(method, r_z, region, slices).map(|r| r.psnr_db).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Columns `volume_id, method, r_z, region, psnr_db, ssim`; the region
    /// cell combines the spatial region and slice subset, e.g. `center32/synth`.
    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(["volume_id", "method", "r_z", "region", "psnr_db", "ssim"]);
        for r in &self.rows {
            t.push([
                r.volume_id.clone(),
                r.method.clone(),
                r.r_z.to_string(),
                format!("{}/{}", r.region, r.slices),
                format_db(r.psnr_db),
                format!("{}", r.ssim),
            ]);
        }
        t
    }
}

/// PSNR and SSIM of `pred` against `gt` for every region and slice subset.
/// Both are first cropped to their common depth, so a prediction with a
/// trailing extrapolated slice past the end of `gt` is scored on `gt`'s
/// extent.
pub fn evaluate(
    volume_id: &str,
    method: &str,
    pred: &Volume,
    gt: &Volume,
    r_z: usize,
    regions: &[Region],
) -> Result<Vec<MetricRow>> {
    let (pd, gd) = (pred.dims(), gt.dims());
    if pd[..2] != gd[..2] {
        return Err(Error::shape("evaluate", &pd, &gd));
    }
    let depth = pd[2].min(gd[2]);
    let mut rows = Vec::new();
    for &region in regions {
        let (x0, y0, w, h) = match region {
            Region::Full => (0, 0, gd[0], gd[1]),
            Region::Central(c) => {
                if c == 0 || c > gd[0] || c > gd[1] {
                    return Err(Error::invalid(format!(
                        "central crop {c} does not fit a {}x{} volume",
                        gd[0], gd[1]
                    )));
                }
                ((gd[0] - c) / 2, (gd[1] - c) / 2, c, c)
            }
        };
        let plane = |v: &Volume, z: usize| -> Vec<f64> {
            let s = v.axial_slice(z);
            let nx = v.dims()[0];
            (y0..y0 + h).flat_map(|y| s[y * nx + x0..y * nx + x0 + w].iter().copied()).collect()
        };
        for slices in [SliceSet::All, SliceSet::Synthesized] {
            let zs: Vec<usize> = (0..depth)
                .filter(|z| slices == SliceSet::All || z % r_z.max(1) != 0)
                .collect();
            if zs.is_empty() {
                continue;
            }
            let (mut p_all, mut g_all) = (Vec::new(), Vec::new());
            let mut ssim_sum = 0.0;
            for &z in &zs {
                let (p, g) = (plane(pred, z), plane(gt, z));
                ssim_sum += ssim(&p, &g, h, w, SsimWindow::Gaussian, 1.0)?;
                p_all.extend(p);
                g_all.extend(g);
            }
            rows.push(MetricRow {
                volume_id: volume_id.into(),
                method: method.into(),
                r_z,
                region,
                slices,
                psnr_db: psnr(&p_all, &g_all, 1.0)?,
                ssim: ssim_sum / zs.len() as f64,
            });
        }
    }
    Ok(rows)
}
