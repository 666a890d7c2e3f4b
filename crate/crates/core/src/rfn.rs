//! Residual fusion of the sagittal and coronal reconstructions.
//!
//! Each synthesized axial slice becomes the average of its two view-wise
//! versions plus a residual predicted from the ordered pair. The residual
//! head starts at zero, so an untrained network is exactly the average.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ami::check_layout;
use crate::container::Dtype;
use crate::error::{Error, Result};
use crate::nn::{conv, Cursor, RdnShape};
use crate::tensor::{Adam, ParamFile, ParamSet, Tape, Tensor, Var};
use crate::volume::{Slice, Volume};

pub const MODEL_KIND: &str = "rfn";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RfnConfig {
    pub rdb_count: usize,
    pub convs_per_rdb: usize,
    pub growth_rate: usize,
    pub first_conv_channels: usize,
    pub input_channels: usize,
    pub kernel: usize,
}

impl RfnConfig {
    pub fn full() -> Self {
        RfnConfig {
            rdb_count: 5,
            convs_per_rdb: 4,
            growth_rate: 16,
            first_conv_channels: 32,
            input_channels: 2,
            kernel: 3,
        }
    }

    pub fn desk() -> Self {
        RfnConfig {
            rdb_count: 2,
            convs_per_rdb: 3,
            growth_rate: 8,
            first_conv_channels: 16,
            input_channels: 2,
            kernel: 3,
        }
    }

    pub fn micro() -> Self {
        RfnConfig {
            rdb_count: 1,
            convs_per_rdb: 2,
            growth_rate: 2,
            first_conv_channels: 3,
            input_channels: 2,
            kernel: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels != 2 {
            return Err(Error::invalid(format!(
                "the fusion network takes two views, config says {}",
                self.input_channels
            )));
        }
        self.rdn().validate()
    }

    pub fn rdn(&self) -> RdnShape {
        RdnShape {
            in_channels: self.input_channels,
            channels: self.first_conv_channels,
            rdb_count: self.rdb_count,
            convs_per_rdb: self.convs_per_rdb,
            growth_rate: self.growth_rate,
            kernel: self.kernel,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RfnParams {
    pub config: RfnConfig,
    pub seed: u64,
    pub params: ParamSet,
}

impl RfnParams {
    pub fn init(config: RfnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        config.rdn().register(&mut params, "body.", &mut rng);
        let k = config.kernel;
        params.push("head.w", Tensor::zeros(&[1, config.first_conv_channels, k, k]));
        params.push("head.b", Tensor::zeros(&[1]));
        Ok(RfnParams { config, seed, params })
    }

    pub fn to_file(&self) -> Result<ParamFile> {
        Ok(ParamFile {
            kind: MODEL_KIND.into(),
            seed: self.seed,
            config: serde_json::to_value(self.config)?,
            params: self.params.clone(),
        })
    }

    pub fn from_file(file: ParamFile) -> Result<Self> {
        if file.kind != MODEL_KIND {
            return Err(Error::BadHeader(format!(
                "expected a `{MODEL_KIND}` model, found `{}`",
                file.kind
            )));
        }
        let config: RfnConfig = serde_json::from_value(file.config)?;
        check_layout(&RfnParams::init(config, file.seed)?.params, &file.params)?;
        Ok(RfnParams {
            config,
            seed: file.seed,
            params: file.params,
        })
    }

    pub fn save(&self, path: &Path, dtype: Dtype) -> Result<()> {
        self.to_file()?.save(path, dtype)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file(ParamFile::load(path)?)
    }
}

/// `sag` and `cor` are `[1, H, W]`; returns `(average, residual)`.
pub fn forward_parts<'t>(config: &RfnConfig, vars: &[Var<'t>], sag: Var<'t>, cor: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
    let tape = sag.tape();
    let avg = sag.add(cor)?.scale(0.5);
    let mut cursor = Cursor::new(vars);
    let body = config.rdn().forward(&mut cursor, tape.concat_channels(&[sag, cor])?)?;
    let residual = conv(body, &mut cursor)?;
    Ok((avg, residual))
}

pub fn forward<'t>(config: &RfnConfig, vars: &[Var<'t>], sag: Var<'t>, cor: Var<'t>) -> Result<Var<'t>> {
    let (avg, residual) = forward_parts(config, vars, sag, cor)?;
    avg.add(residual)
}

fn slice_tensor(s: &Slice) -> Tensor {
    Tensor::new(vec![1, s.rows, s.cols], s.data.clone()).expect("slice invariant")
}

pub fn fuse_slice(sag: &Slice, cor: &Slice, params: &RfnParams) -> Result<Slice> {
    if (sag.rows, sag.cols) != (cor.rows, cor.cols) {
        return Err(Error::shape("fuse_slice", &[sag.rows, sag.cols], &[cor.rows, cor.cols]));
    }
    let tape = Tape::new();
    let vars = params.params.bind(&tape, false);
    let out = forward(
        &params.config,
        &vars,
        tape.constant(slice_tensor(sag)),
        tape.constant(slice_tensor(cor)),
    )?;
    Slice::new(sag.rows, sag.cols, sag.spacing, out.value().data().to_vec())
}

/// Raw `[y][x]` axial plane as a slice with rows along y.
fn plane(v: &Volume, z: usize) -> Slice {
    let [nx, ny, _] = v.dims();
    let [rx, ry, _] = v.spacing();
    Slice {
        rows: ny,
        cols: nx,
        spacing: [ry, rx],
        data: v.axial_slice(z).to_vec(),
    }
}

/// Fuses every synthesized axial slice; slices at `z % r_z == 0` are copied
/// from `sparse`.
pub fn fuse_volume(
    sag: &Volume,
    cor: &Volume,
    sparse: &Volume,
    r_z: usize,
    params: &RfnParams,
    threads: usize,
) -> Result<Volume> {
    if r_z == 0 {
        return Err(Error::invalid("r_z must be >= 1"));
    }
    let dims = sag.dims();
    if cor.dims() != dims {
        return Err(Error::shape("fuse_volume", &dims, &cor.dims()));
    }
    let [nx, ny, nz] = dims;
    let sd = sparse.dims();
    if sd[0] != nx || sd[1] != ny || nz != r_z * sd[2] {
        return Err(Error::invalid(format!(
            "sparse volume {sd:?} inconsistent with {dims:?} at r_z = {r_z}"
        )));
    }
    let synthesized: Vec<usize> = (0..nz).filter(|z| z % r_z != 0).collect();
    let fuse = |zs: &[usize]| -> Result<Vec<Slice>> {
        zs.iter().map(|&z| fuse_slice(&plane(sag, z), &plane(cor, z), params)).collect()
    };
    let threads = threads.clamp(1, synthesized.len().max(1));
    let fused: Vec<Slice> = if threads == 1 {
        fuse(&synthesized)?
    } else {
        let chunk = synthesized.len().div_ceil(threads);
        let parts: Vec<Result<Vec<Slice>>> = std::thread::scope(|s| {
            let handles: Vec<_> = synthesized.chunks(chunk).map(|zs| s.spawn(move || fuse(zs))).collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        let mut all = Vec::with_capacity(synthesized.len());
        for p in parts {
            all.extend(p?);
        }
        all
    };

    let plane_len = nx * ny;
    let mut data = vec![0.0; plane_len * nz];
    for z in (0..nz).step_by(r_z) {
        data[z * plane_len..(z + 1) * plane_len].copy_from_slice(sparse.axial_slice(z / r_z));
    }
    for (z, s) in synthesized.iter().zip(fused) {
        data[z * plane_len..(z + 1) * plane_len].copy_from_slice(&s.data);
    }
    Ok(Volume::new(dims, sag.spacing(), data)?.with_intensity(sparse.intensity()))
}

/// One axial training triple, each `[1, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RfnSample {
    pub sag: Tensor,
    pub cor: Tensor,
    pub gt: Tensor,
}

impl RfnSample {
    /// Axial slice `z` of the three volumes.
    pub fn from_volumes(sag: &Volume, cor: &Volume, gt: &Volume, z: usize) -> Result<Self> {
        if sag.dims() != cor.dims() || gt.dims()[..2] != sag.dims()[..2] {
            return Err(Error::shape("rfn sample", &sag.dims(), &gt.dims()));
        }
        let t = |v: &Volume| slice_tensor(&plane(v, z));
        Ok(RfnSample {
            sag: t(sag),
            cor: t(cor),
            gt: t(gt),
        })
    }
}

/// Mean L1 over `batch`, with gradients accumulated into `params`.
pub fn rfn_loss_and_grads(batch: &[RfnSample], params: &mut RfnParams) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset("RFN batch is empty".into()));
    }
    params.params.zero_grads();
    let weight = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for s in batch {
        let tape = Tape::new();
        let vars = params.params.bind(&tape, true);
        let fused = forward(&params.config, &vars, tape.constant(s.sag.clone()), tape.constant(s.cor.clone()))?;
        let loss = fused.l1_loss(tape.constant(s.gt.clone()))?.scale(weight);
        tape.backward(loss)?;
        total += loss.value().item();
        params.params.accumulate_grads(&vars);
    }
    Ok(total)
}

/// One Adam step on the fusion loss; returns the loss before the update.
pub fn rfn_train_step(batch: &[RfnSample], params: &mut RfnParams, opt: &mut Adam) -> Result<f64> {
    let loss = rfn_loss_and_grads(batch, params)?;
    opt.step(&mut params.params)?;
    Ok(loss)
}
