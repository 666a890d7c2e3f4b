//! Receptive-field arithmetic and patch-based inference.
//!
//! A zero-padded, stride-1 chain of convolutions with kernel sizes `k_i` lets
//! information travel `sum(k_i / 2)` pixels per side. Running such a chain on
//! tiles whose fetch region extends at least that far past the tile core
//! reproduces whole-image inference exactly; with less overlap, tile cores
//! near an internal boundary see zero padding where real neighbours should
//! be, producing seams.

use crate::error::{Error, Result};
use crate::volume::{CsvTable, Slice};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvChainSpec {
    pub kernels: Vec<usize>,
    /// Spatial dimensionality the chain runs in (2 or 3).
    pub dims: usize,
}

impl ConvChainSpec {
    pub fn new(kernels: Vec<usize>) -> Self {
        ConvChainSpec { kernels, dims: 2 }
    }

    pub fn with_dims(mut self, dims: usize) -> Self {
        self.dims = dims;
        self
    }

    /// Pixels of context needed per side: `sum(k_i / 2)`.
    pub fn margin(&self) -> Result<usize> {
        if self.kernels.is_empty() {
            return Err(Error::invalid("empty conv chain"));
        }
        if let Some(k) = self.kernels.iter().find(|&&k| k % 2 == 0) {
            return Err(Error::invalid(format!("even kernel size {k} in conv chain")));
        }
        Ok(self.kernels.iter().map(|k| k / 2).sum())
    }
}

/// Half-open N-D box.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub start: Vec<usize>,
    pub end: Vec<usize>,
}

impl Region {
    pub fn extent(&self) -> Vec<usize> {
        self.start.iter().zip(&self.end).map(|(s, e)| e - s).collect()
    }

    pub fn contains(&self, p: &[usize]) -> bool {
        p.iter()
            .zip(self.start.iter().zip(&self.end))
            .all(|(&x, (&s, &e))| s <= x && x < e)
    }

    pub fn contains_region(&self, other: &Region) -> bool {
        (0..self.start.len()).all(|a| self.start[a] <= other.start[a] && other.end[a] <= self.end[a])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tile {
    pub core: Region,
    pub fetch: Region,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilePlan {
    pub grid: Vec<usize>,
    pub core: Vec<usize>,
    pub margin: usize,
    pub tiles: Vec<Tile>,
}

/// Partitions `grid` into cores of size `core` (the last tile per axis may be
/// smaller) and expands each by `margin` per side, clamped to the grid.
pub fn plan(grid: &[usize], core: &[usize], margin: usize) -> Result<TilePlan> {
    if grid.len() != core.len() || grid.is_empty() {
        return Err(Error::invalid(format!("grid {grid:?} and core {core:?} disagree in rank")));
    }
    if core.contains(&0) {
        return Err(Error::invalid("tile core size must be positive"));
    }
    if core.iter().zip(grid).any(|(c, g)| c > g) {
        return Err(Error::invalid(format!("core {core:?} exceeds grid {grid:?}")));
    }
    let per_axis: Vec<Vec<(usize, usize, usize, usize)>> = grid
        .iter()
        .zip(core)
        .map(|(&n, &c)| {
            (0..n)
                .step_by(c)
                .map(|s| {
                    let e = (s + c).min(n);
                    (s, e, s.saturating_sub(margin), (e + margin).min(n))
                })
                .collect()
        })
        .collect();

    let mut tiles = Vec::new();
    let mut counter = vec![0usize; grid.len()];
    loop {
        let pick: Vec<_> = counter.iter().enumerate().map(|(a, &i)| per_axis[a][i]).collect();
        tiles.push(Tile {
            core: Region {
                start: pick.iter().map(|p| p.0).collect(),
                end: pick.iter().map(|p| p.1).collect(),
            },
            fetch: Region {
                start: pick.iter().map(|p| p.2).collect(),
                end: pick.iter().map(|p| p.3).collect(),
            },
        });
        // Row-major advance: last axis fastest.
        let mut a = grid.len();
        loop {
            if a == 0 {
                return Ok(TilePlan {
                    grid: grid.to_vec(),
                    core: core.to_vec(),
                    margin,
                    tiles,
                });
            }
            a -= 1;
            counter[a] += 1;
            if counter[a] < per_axis[a].len() {
                break;
            }
            counter[a] = 0;
        }
    }
}

fn crop(image: &Slice, r: &Region) -> Slice {
    let (rows, cols) = (r.end[0] - r.start[0], r.end[1] - r.start[1]);
    let mut data = Vec::with_capacity(rows * cols);
    for y in r.start[0]..r.end[0] {
        data.extend_from_slice(&image.data[y * image.cols + r.start[1]..y * image.cols + r.end[1]]);
    }
    Slice {
        rows,
        cols,
        spacing: image.spacing,
        data,
    }
}

/// Runs `net` on each tile's fetch region independently and writes the core
/// back. `net` must preserve shape.
pub fn tiled_infer<F>(image: &Slice, net: F, plan: &TilePlan) -> Result<Slice>
where
    F: Fn(&Slice) -> Result<Slice>,
{
    if plan.grid != [image.rows, image.cols] {
        return Err(Error::invalid(format!(
            "plan grid {:?} does not match {}x{} image",
            plan.grid, image.rows, image.cols
        )));
    }
    let mut out = image.clone();
    for tile in &plan.tiles {
        let input = crop(image, &tile.fetch);
        let result = net(&input)?;
        if (result.rows, result.cols) != (input.rows, input.cols) {
            return Err(Error::invalid("tile network changed the tile shape"));
        }
        let (oy, ox) = (tile.core.start[0] - tile.fetch.start[0], tile.core.start[1] - tile.fetch.start[1]);
        for y in tile.core.start[0]..tile.core.end[0] {
            for x in tile.core.start[1]..tile.core.end[1] {
                let ly = y - tile.core.start[0] + oy;
                let lx = x - tile.core.start[1] + ox;
                out.data[y * out.cols + x] = result.data[ly * result.cols + lx];
            }
        }
    }
    Ok(out)
}

/// Whether pixel `p` lies within `band` of an internal core boundary along
/// any axis. Grid edges are not seams: tiles there see the same padding as
/// the whole image.
pub fn in_seam_band(plan: &TilePlan, p: &[usize], band: usize) -> bool {
    (0..plan.grid.len()).any(|a| {
        let c = plan.core[a];
        (c..plan.grid[a]).step_by(c).any(|b| p[a] + band >= b && p[a] < b + band)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileStat {
    pub tile_id: usize,
    pub seam_mad: f64,
    pub interior_mad: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StitchReport {
    pub band: usize,
    pub seam_mad: f64,
    pub interior_mad: f64,
    pub ratio: f64,
    pub max_abs: f64,
    pub tiles: Vec<TileStat>,
    /// `|tiled - monolithic|` per pixel.
    pub diff: Slice,
}

/// Seam / interior ratio; 1 when both are zero.
fn mad_ratio(seam: f64, interior: f64) -> f64 {
    if seam == 0.0 && interior == 0.0 {
        1.0
    } else if interior == 0.0 {
        f64::INFINITY
    } else {
        seam / interior
    }
}

/// Mean absolute deviation of `tiled` from `monolithic` inside versus outside
/// the seam band of width `band`.
pub fn stitch_report(tiled: &Slice, monolithic: &Slice, plan: &TilePlan, band: usize) -> Result<StitchReport> {
    if (tiled.rows, tiled.cols) != (monolithic.rows, monolithic.cols) {
        return Err(Error::shape(
            "stitch_report",
            &[tiled.rows, tiled.cols],
            &[monolithic.rows, monolithic.cols],
        ));
    }
    let diff: Vec<f64> = tiled
        .data
        .iter()
        .zip(&monolithic.data)
        .map(|(a, b)| (a - b).abs())
        .collect();

    #[derive(Default, Clone, Copy)]
    struct Acc {
        seam: f64,
        seam_n: usize,
        interior: f64,
        interior_n: usize,
    }
    impl Acc {
        fn add(&mut self, seam: bool, d: f64) {
            if seam {
                self.seam += d;
                self.seam_n += 1;
            } else {
                self.interior += d;
                self.interior_n += 1;
            }
        }
        fn means(&self) -> (f64, f64) {
            let m = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
            (m(self.seam, self.seam_n), m(self.interior, self.interior_n))
        }
    }

    let mut total = Acc::default();
    let mut tiles = Vec::with_capacity(plan.tiles.len());
    for (tile_id, tile) in plan.tiles.iter().enumerate() {
        let mut acc = Acc::default();
        for y in tile.core.start[0]..tile.core.end[0] {
            for x in tile.core.start[1]..tile.core.end[1] {
                let seam = in_seam_band(plan, &[y, x], band);
                let d = diff[y * tiled.cols + x];
                acc.add(seam, d);
                total.add(seam, d);
            }
        }
        let (seam_mad, interior_mad) = acc.means();
        tiles.push(TileStat {
            tile_id,
            seam_mad,
            interior_mad,
            ratio: mad_ratio(seam_mad, interior_mad),
        });
    }
    let (seam_mad, interior_mad) = total.means();
    Ok(StitchReport {
        band,
        seam_mad,
        interior_mad,
        ratio: mad_ratio(seam_mad, interior_mad),
        max_abs: diff.iter().copied().fold(0.0, f64::max),
        tiles,
        diff: Slice {
            rows: tiled.rows,
            cols: tiled.cols,
            spacing: tiled.spacing,
            data: diff,
        },
    })
}

impl StitchReport {
    /// Rows `tile_id, seam_mad, interior_mad, ratio`, plus a final `all` row.
    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(["tile_id", "seam_mad", "interior_mad", "ratio"]);
        for s in &self.tiles {
            t.push([
                s.tile_id.to_string(),
                format!("{:e}", s.seam_mad),
                format!("{:e}", s.interior_mad),
                format!("{}", s.ratio),
            ]);
        }
        t.push([
            "all".to_string(),
            format!("{:e}", self.seam_mad),
            format!("{:e}", self.interior_mad),
            format!("{}", self.ratio),
        ]);
        t
    }

    /// Difference map scaled so the largest deviation is 1.
    pub fn heat_map(&self) -> Slice {
        let scale = if self.max_abs > 0.0 { 1.0 / self.max_abs } else { 0.0 };
        Slice {
            data: self.diff.data.iter().map(|d| d * scale).collect(),
            ..self.diff.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn margins() {
        assert_eq!(ConvChainSpec::new(vec![3; 52]).margin().unwrap(), 52);
        assert_eq!(ConvChainSpec::new(vec![3]).margin().unwrap(), 1);
        assert_eq!(ConvChainSpec::new(vec![3, 5, 3]).margin().unwrap(), 4);
        assert!(ConvChainSpec::new(vec![3, 4]).margin().is_err());
        assert!(ConvChainSpec::new(vec![]).margin().is_err());
    }

    #[test]
    fn single_tile_fetch_is_clamped() {
        let p = plan(&[64], &[64], 3).unwrap();
        assert_eq!(p.tiles.len(), 1);
        assert_eq!(p.tiles[0].fetch, Region { start: vec![0], end: vec![64] });
    }

    #[test]
    fn exact_partition_with_short_last_tile() {
        let p = plan(&[10], &[4], 0).unwrap();
        let cores: Vec<_> = p.tiles.iter().map(|t| (t.core.start[0], t.core.end[0])).collect();
        assert_eq!(cores, vec![(0, 4), (4, 8), (8, 10)]);
    }

    #[test]
    fn huge_margin_fetches_everything() {
        let p = plan(&[10, 7], &[3, 2], 50).unwrap();
        for t in &p.tiles {
            assert_eq!(t.fetch.start, vec![0, 0]);
            assert_eq!(t.fetch.end, vec![10, 7]);
        }
    }

    #[test]
    fn zero_core_rejected() {
        assert!(plan(&[10], &[0], 1).is_err());
    }

    #[test]
    fn every_voxel_in_exactly_one_core_3d() {
        let p = plan(&[7, 5, 9], &[3, 5, 4], 2).unwrap();
        for z in 0..7 {
            for y in 0..5 {
                for x in 0..9 {
                    let hits = p.tiles.iter().filter(|t| t.core.contains(&[z, y, x])).count();
                    assert_eq!(hits, 1);
                }
            }
        }
        assert!(p.tiles.iter().all(|t| t.fetch.contains_region(&t.core)));
    }

    #[test]
    fn identity_net_tiles_exactly() {
        let img = Slice::new(9, 11, [1.0; 2], (0..99).map(|i| i as f64).collect()).unwrap();
        let p = plan(&[9, 11], &[4, 3], 0).unwrap();
        let out = tiled_infer(&img, |s| Ok(s.clone()), &p).unwrap();
        assert_eq!(out, img);
        let rep = stitch_report(&out, &img, &p, 2).unwrap();
        assert_eq!((rep.seam_mad, rep.interior_mad, rep.ratio), (0.0, 0.0, 1.0));
    }

    #[test]
    fn seam_band_is_internal_only() {
        let p = plan(&[12], &[4], 0).unwrap();
        let band: Vec<usize> = (0..12).filter(|&i| in_seam_band(&p, &[i], 1)).collect();
        assert_eq!(band, vec![3, 4, 7, 8]);
    }
}
