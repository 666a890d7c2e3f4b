//! End-to-end inference, baselines, evaluation and the two-stage trainer.

mod baseline;
mod eval;
mod experiment;

pub use baseline::{baseline_interp, Baseline};
pub use eval::{evaluate, MetricRow, MetricsReport, Region, SliceSet};
pub use experiment::{
    build_dataset, evaluate_experiment, train_saint, Dataset, ExperimentConfig, LogRow, TrainOutcome,
};

use crate::ami::{sr_volume, AmiParams};
use crate::error::{Error, Result};
use crate::rfn::{fuse_volume, RfnParams};
use crate::volume::{View, Volume};

/// Sagittal and coronal reconstructions of `sparse`.
pub fn two_view(sparse: &Volume, r_z: usize, ami: &AmiParams, threads: usize) -> Result<(Volume, Volume)> {
    Ok((
        sr_volume(sparse, View::Sagittal, r_z, ami, threads)?,
        sr_volume(sparse, View::Coronal, r_z, ami, threads)?,
    ))
}

/// Full pipeline: two-view AMI, then residual fusion of synthesized slices.
pub fn saint_infer(sparse: &Volume, r_z: usize, ami: &AmiParams, rfn: &RfnParams, threads: usize) -> Result<Volume> {
    if r_z == 0 {
        return Err(Error::invalid("r_z must be >= 1"));
    }
    if r_z == 1 {
        return Ok(sparse.clone());
    }
    let (sag, cor) = two_view(sparse, r_z, ami, threads)?;
    fuse_volume(&sag, &cor, sparse, r_z, rfn, threads)
}

/// Voxel-wise mean of two equally shaped volumes.
pub fn average(a: &Volume, b: &Volume) -> Result<Volume> {
    if a.dims() != b.dims() {
        return Err(Error::shape("average", &a.dims(), &b.dims()));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| (x + y) * 0.5).collect();
    Ok(Volume::new(a.dims(), a.spacing(), data)?.with_intensity(a.intensity()))
}

/// The fusion baseline: [`average`] on synthesized slices, observed slices
/// copied from `sparse`. Equals an untrained [`fuse_volume`].
pub fn average_fusion(sag: &Volume, cor: &Volume, sparse: &Volume, r_z: usize) -> Result<Volume> {
    let avg = average(sag, cor)?;
    let [nx, ny, nz] = avg.dims();
    let plane = nx * ny;
    if sparse.dims()[..2] != avg.dims()[..2] || r_z == 0 || nz != r_z * sparse.dims()[2] {
        return Err(Error::shape("average_fusion", &avg.dims(), &sparse.dims()));
    }
    let mut data = avg.data().to_vec();
    for z in (0..nz).step_by(r_z) {
        data[z * plane..(z + 1) * plane].copy_from_slice(sparse.axial_slice(z / r_z));
    }
    Ok(Volume::new(avg.dims(), avg.spacing(), data)?.with_intensity(sparse.intensity()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ami::AmiConfig;
    use crate::rfn::RfnConfig;
    use crate::volume::{decimate_z, phantom, Recipe};

    #[test]
    fn saint_preserves_observed_slices() {
        let ami = AmiParams::init(AmiConfig::micro(), 1).unwrap();
        let rfn = RfnParams::init(RfnConfig::micro(), 2).unwrap();
        let v = phantom([9, 8, 13], [0.9, 1.0, 2.0], 4, Recipe::Laminae { period_mm: 9.0 }).unwrap();
        for r in [1, 2, 3] {
            let s = decimate_z(&v, r).unwrap();
            let out = saint_infer(&s, r, &ami, &rfn, 1).unwrap();
            assert_eq!(out.dims(), [9, 8, r * s.dims()[2]]);
            assert_eq!(decimate_z(&out, r).unwrap().data(), s.data());
        }
    }

    #[test]
    fn untrained_fusion_is_average_fusion() {
        let ami = AmiParams::init(AmiConfig::micro(), 1).unwrap();
        let rfn = RfnParams::init(RfnConfig::micro(), 2).unwrap();
        let v = phantom([8, 8, 12], [1.0, 1.0, 2.0], 4, Recipe::Ellipsoids { count: 4 }).unwrap();
        let s = decimate_z(&v, 3).unwrap();
        let (sag, cor) = two_view(&s, 3, &ami, 1).unwrap();
        assert_eq!(
            fuse_volume(&sag, &cor, &s, 3, &rfn, 1).unwrap(),
            average_fusion(&sag, &cor, &s, 3).unwrap()
        );
    }
}
