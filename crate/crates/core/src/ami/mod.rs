//! Anisotropic meta interpolation.
//!
//! A slice's three-slice neighbourhood goes through an RDN feature learner;
//! each interpolated channel `c` is the features convolved with a filter that
//! a small MLP generates from the channel's filter distance matrix. Channel 0
//! is the observed slice itself, and the channels are interleaved along the
//! sparse (column) axis.

mod fdm;
mod shuffle;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use fdm::{fdm, fdm_table, FilterDistanceMatrix};
pub use shuffle::{inverse_shuffle, periodic_shuffle, ps_map};

use crate::container::Dtype;
use crate::error::{Error, Result};
use crate::nn::{linear, linear_params, Cursor, RdnShape};
use crate::tensor::{Adam, ParamFile, ParamSet, Tape, Tensor, Var};
use crate::tiling::ConvChainSpec;
use crate::volume::{view_slice, Slice, SliceStack, View, Volume};

pub const MODEL_KIND: &str = "ami";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmiConfig {
    pub rdb_count: usize,
    pub convs_per_rdb: usize,
    pub growth_rate: usize,
    pub base_channels: usize,
    pub kernel: usize,
    pub input_slices: usize,
    pub fg_hidden: usize,
}

impl AmiConfig {
    pub fn full() -> Self {
        AmiConfig {
            rdb_count: 6,
            convs_per_rdb: 8,
            growth_rate: 32,
            base_channels: 64,
            kernel: 3,
            input_slices: 3,
            fg_hidden: 64,
        }
    }

    pub fn desk() -> Self {
        AmiConfig {
            rdb_count: 2,
            convs_per_rdb: 3,
            growth_rate: 8,
            base_channels: 16,
            kernel: 3,
            input_slices: 3,
            fg_hidden: 64,
        }
    }

    /// Small enough for exhaustive finite-difference checks.
    pub fn micro() -> Self {
        AmiConfig {
            rdb_count: 1,
            convs_per_rdb: 2,
            growth_rate: 2,
            base_channels: 3,
            kernel: 3,
            input_slices: 3,
            fg_hidden: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_slices != 3 {
            return Err(Error::invalid(format!(
                "AMI takes three consecutive slices, config says {}",
                self.input_slices
            )));
        }
        if self.fg_hidden == 0 {
            return Err(Error::invalid("filter generator hidden width must be >= 1"));
        }
        self.rdn().validate()
    }

    pub fn rdn(&self) -> RdnShape {
        RdnShape {
            in_channels: self.input_slices,
            channels: self.base_channels,
            rdb_count: self.rdb_count,
            convs_per_rdb: self.convs_per_rdb,
            growth_rate: self.growth_rate,
            kernel: self.kernel,
        }
    }

    /// Longest conv path of the feature learner.
    pub fn feature_chain(&self) -> ConvChainSpec {
        self.rdn().longest_path()
    }
}

/// Feature-learning parameters (`fl.*`) followed by filter-generation
/// parameters (`fg.*`).
#[derive(Debug, Clone, PartialEq)]
pub struct AmiParams {
    pub config: AmiConfig,
    pub seed: u64,
    pub params: ParamSet,
}

impl AmiParams {
    pub fn init(config: AmiConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        config.rdn().register(&mut params, "fl.", &mut rng);
        let (k2, h) = (config.kernel * config.kernel, config.fg_hidden);
        linear_params(&mut params, "fg.fc1", h, k2, &mut rng);
        linear_params(&mut params, "fg.fc2", h, h, &mut rng);
        linear_params(&mut params, "fg.fc3", config.base_channels * k2, h, &mut rng);
        Ok(AmiParams { config, seed, params })
    }

    /// Index of the first filter-generation parameter.
    pub fn fg_offset(&self) -> usize {
        self.config.rdn().param_count()
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
        let config: AmiConfig = serde_json::from_value(file.config)?;
        let reference = AmiParams::init(config, file.seed)?;
        check_layout(&reference.params, &file.params)?;
        Ok(AmiParams {
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

/// Names and shapes of `found` must match what the config registers.
pub(crate) fn check_layout(expected: &ParamSet, found: &ParamSet) -> Result<()> {
    if expected.len() != found.len() {
        return Err(Error::BadHeader(format!(
            "config registers {} parameters, file holds {}",
            expected.len(),
            found.len()
        )));
    }
    for i in 0..expected.len() {
        if expected.name(i) != found.name(i) || expected.get(i).shape() != found.get(i).shape() {
            return Err(Error::BadHeader(format!(
                "parameter {i}: expected {} {:?}, found {} {:?}",
                expected.name(i),
                expected.get(i).shape(),
                found.name(i),
                found.get(i).shape()
            )));
        }
    }
    Ok(())
}

/// Bound AMI parameters on one tape.
#[derive(Clone, Copy)]
pub struct AmiNet<'a, 't> {
    pub config: &'a AmiConfig,
    fl: &'a [Var<'t>],
    fg: &'a [Var<'t>],
}

impl<'a, 't> AmiNet<'a, 't> {
    pub fn new(params: &'a AmiParams, vars: &'a [Var<'t>]) -> Self {
        let (fl, fg) = vars.split_at(params.fg_offset());
        AmiNet {
            config: &params.config,
            fl,
            fg,
        }
    }

    /// `[3, H, W]` triplet to `[C', H, W]` features.
    pub fn features(&self, triplet: Var<'t>) -> Result<Var<'t>> {
        let shape = triplet.shape();
        if shape.len() != 3 || shape[0] != self.config.input_slices {
            return Err(Error::shape("features", &[self.config.input_slices, 0, 0], &shape));
        }
        let mut cursor = Cursor::new(self.fl);
        self.config.rdn().forward(&mut cursor, triplet)
    }

    /// Filter for one interpolated channel, laid out as a `[1, C', k, k]`
    /// conv kernel so that convolving the features yields one channel.
    pub fn filter(&self, tape: &'t Tape, p: &FilterDistanceMatrix) -> Result<Var<'t>> {
        let (cp, k) = (self.config.base_channels, self.config.kernel);
        if p.k != k {
            return Err(Error::shape("generate_filters", &[k, k], &[p.k, p.k]));
        }
        let mut cursor = Cursor::new(self.fg);
        let x = tape.constant(Tensor::from_vec(p.values.clone()));
        let h = linear(x, &mut cursor)?.relu();
        let h = linear(h, &mut cursor)?.relu();
        linear(h, &mut cursor)?.reshape(&[1, cp, k, k])
    }

    /// Filters for channels `1..r_z`.
    pub fn filters(&self, tape: &'t Tape, r_z: usize, spacing: [f64; 2]) -> Result<Vec<Var<'t>>> {
        (1..r_z)
            .map(|c| self.filter(tape, &fdm(c, self.config.kernel, spacing[0], spacing[1], r_z)?))
            .collect()
    }

    /// `[3, H, W]` triplet to the `[1, H, r_z W]` super-resolved slice.
    /// `spacing` is `(R_H, R_W)` of the super-resolved grid.
    pub fn super_resolve(&self, triplet: Var<'t>, r_z: usize, spacing: [f64; 2]) -> Result<Var<'t>> {
        let filters = self.filters(triplet.tape(), r_z, spacing)?;
        self.super_resolve_with(triplet, &filters)
    }

    /// Same as [`AmiNet::super_resolve`] with precomputed filters.
    pub fn super_resolve_with(&self, triplet: Var<'t>, filters: &[Var<'t>]) -> Result<Var<'t>> {
        let center = triplet.narrow_channels(1, 1)?;
        if filters.is_empty() {
            return Ok(center);
        }
        let feats = self.features(triplet)?;
        let mut parts = vec![center];
        for w in filters {
            parts.push(feats.conv2d(*w)?);
        }
        triplet.tape().interleave_cols(&parts)
    }
}

/// Neighbours `i - 1, i, i + 1` of a stack, replicating the edge slice.
pub fn triplet(stack: &SliceStack, i: usize) -> Result<Tensor> {
    let n = stack.slices.len();
    if i >= n {
        return Err(Error::invalid(format!("slice {i} out of range for a stack of {n}")));
    }
    triplet_from([
        &stack.slices[i.saturating_sub(1)],
        &stack.slices[i],
        &stack.slices[(i + 1).min(n - 1)],
    ])
}

pub fn triplet_from(slices: [&Slice; 3]) -> Result<Tensor> {
    let (h, w) = (slices[1].rows, slices[1].cols);
    let mut data = Vec::with_capacity(3 * h * w);
    for s in slices {
        if (s.rows, s.cols) != (h, w) {
            return Err(Error::shape("triplet", &[h, w], &[s.rows, s.cols]));
        }
        data.extend_from_slice(&s.data);
    }
    Tensor::new(vec![3, h, w], data)
}

/// Super-resolves the centre of a `[3, H, W]` triplet along its columns.
/// `spacing` is `(R_H, R_W)` of the super-resolved grid.
pub fn sr_slice(triplet: &Tensor, r_z: usize, spacing: [f64; 2], params: &AmiParams) -> Result<Slice> {
    if r_z == 0 {
        return Err(Error::invalid("r_z must be >= 1"));
    }
    let tape = Tape::new();
    let vars = params.params.bind(&tape, false);
    let net = AmiNet::new(params, &vars);
    let out = net.super_resolve(tape.constant(triplet.clone()), r_z, spacing)?;
    to_slice(&out.value(), spacing)
}

fn to_slice(t: &Tensor, spacing: [f64; 2]) -> Result<Slice> {
    let s = t.shape();
    Slice::new(s[1], s[2], spacing, t.data().to_vec())
}

/// Applies [`sr_slice`] to every slice of `view` and reassembles. The
/// output has `r_z Z'` axial slices at spacing `R_z / r_z`.
pub fn sr_volume(sparse: &Volume, view: View, r_z: usize, params: &AmiParams, threads: usize) -> Result<Volume> {
    if view == View::Axial {
        return Err(Error::invalid("AMI runs on sagittal or coronal slices"));
    }
    if r_z == 0 {
        return Err(Error::invalid("r_z must be >= 1"));
    }
    let [rx, ry, rz] = sparse.spacing();
    let spacing = [if view == View::Sagittal { ry } else { rx }, rz / r_z as f64];
    let n = sparse.dims()[view.index_axis()];
    let stack = SliceStack {
        view,
        slices: (0..n).map(|i| view_slice(sparse, view, i)).collect(),
    };

    let run = |range: std::ops::Range<usize>| -> Result<Vec<Slice>> {
        let tape = Tape::new();
        let vars = params.params.bind(&tape, false);
        let net = AmiNet::new(params, &vars);
        let filters = net.filters(&tape, r_z, spacing)?;
        let filters: Vec<Var> = filters.iter().map(|w| tape.constant((*w.value()).clone())).collect();
        range
            .map(|i| {
                // Per-slice tape so the graph does not grow with the volume.
                let t = Tape::new();
                let vars = params.params.bind(&t, false);
                let net = AmiNet::new(params, &vars);
                let ws: Vec<Var> = filters.iter().map(|w| t.constant((*w.value()).clone())).collect();
                let out = net.super_resolve_with(t.constant(triplet(&stack, i)?), &ws)?;
                to_slice(&out.value(), spacing)
            })
            .collect()
    };

    let threads = threads.clamp(1, n.max(1));
    let slices = if threads == 1 {
        run(0..n)?
    } else {
        let chunk = n.div_ceil(threads);
        let parts: Vec<Result<Vec<Slice>>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let range = (t * chunk).min(n)..((t + 1) * chunk).min(n);
                    s.spawn(move || run(range))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        let mut all = Vec::with_capacity(n);
        for p in parts {
            all.extend(p?);
        }
        all
    };
    let index_spacing = sparse.spacing()[view.index_axis()];
    Ok(SliceStack { view, slices }
        .assemble(index_spacing)?
        .with_intensity(sparse.intensity()))
}

/// Channel mean of the features of `(image, image, image)`: a shape
/// preserving, zero-padded conv chain with margin
/// `config.feature_chain().margin()`.
pub fn feature_map(image: &Slice, params: &AmiParams) -> Result<Slice> {
    let tape = Tape::new();
    let vars = params.params.bind(&tape, false);
    let net = AmiNet::new(params, &vars);
    let t = triplet_from([image, image, image])?;
    let f = net.features(tape.constant(t))?.value();
    let (c, plane) = (f.shape()[0], image.rows * image.cols);
    let mut data = vec![0.0; plane];
    for ch in 0..c {
        for (d, v) in data.iter_mut().zip(&f.data()[ch * plane..(ch + 1) * plane]) {
            *d += v;
        }
    }
    data.iter_mut().for_each(|d| *d /= c as f64);
    Slice::new(image.rows, image.cols, image.spacing, data)
}

/// One training pair: an LR triplet and the dense slice it should become.
#[derive(Debug, Clone, PartialEq)]
pub struct AmiSample {
    pub view: View,
    pub r_z: usize,
    /// `(R_H, R_W)` of the super-resolved grid.
    pub spacing: [f64; 2],
    pub triplet: Tensor,
    /// `[1, H, W_t]` with `W_t <= r_z W`; the prediction is cropped to it.
    pub target: Tensor,
}

impl AmiSample {
    /// Slice `index` of `view` from a dense volume decimated by `r_z`.
    pub fn from_volume(dense: &Volume, view: View, index: usize, r_z: usize) -> Result<Self> {
        if view == View::Axial {
            return Err(Error::invalid("AMI trains on sagittal or coronal slices"));
        }
        let sparse = crate::volume::decimate_z(dense, r_z)?;
        Self::from_pair(dense, &sparse, view, index, r_z)
    }

    /// As [`AmiSample::from_volume`] with the decimated volume precomputed.
    pub fn from_pair(dense: &Volume, sparse: &Volume, view: View, index: usize, r_z: usize) -> Result<Self> {
        let n = sparse.dims()[view.index_axis()];
        if index >= n {
            return Err(Error::invalid(format!("slice {index} out of range for {n}")));
        }
        let lr = |i: usize| view_slice(sparse, view, i);
        let (a, b, c) = (lr(index.saturating_sub(1)), lr(index), lr((index + 1).min(n - 1)));
        let triplet = triplet_from([&a, &b, &c])?;
        let gt = view_slice(dense, view, index);
        let width = gt.cols.min(r_z * b.cols);
        let mut data = Vec::with_capacity(gt.rows * width);
        for r in 0..gt.rows {
            data.extend_from_slice(&gt.data[r * gt.cols..r * gt.cols + width]);
        }
        Ok(AmiSample {
            view,
            r_z,
            spacing: [b.spacing[0], sparse.spacing()[2] / r_z as f64],
            triplet,
            target: Tensor::new(vec![1, gt.rows, width], data)?,
        })
    }
}

/// L1 between the cropped prediction and the target of one sample.
pub fn sample_loss<'t>(net: &AmiNet<'_, 't>, tape: &'t Tape, sample: &AmiSample) -> Result<Var<'t>> {
    let pred = net.super_resolve(tape.constant(sample.triplet.clone()), sample.r_z, sample.spacing)?;
    let want = sample.target.shape();
    let have = pred.shape();
    if want.len() != 3 || want[1] != have[1] || want[2] > have[2] {
        return Err(Error::shape("ami target", &have, want));
    }
    let pred = if want[2] < have[2] { pred.crop_cols(want[2])? } else { pred };
    pred.l1_loss(tape.constant(sample.target.clone()))
}

/// Two-view L1 objective over `batch`: per view the mean sample loss, summed
/// over views. Gradients are accumulated into `params`.
pub fn ami_loss_and_grads(batch: &[AmiSample], params: &mut AmiParams) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset("AMI batch is empty".into()));
    }
    params.params.zero_grads();
    let mut total = 0.0;
    for view in [View::Sagittal, View::Coronal] {
        let group: Vec<&AmiSample> = batch.iter().filter(|s| s.view == view).collect();
        let weight = 1.0 / group.len().max(1) as f64;
        for sample in group {
            let tape = Tape::new();
            let vars = params.params.bind(&tape, true);
            let loss = {
                let net = AmiNet::new(params, &vars);
                sample_loss(&net, &tape, sample)?.scale(weight)
            };
            tape.backward(loss)?;
            total += loss.value().item();
            params.params.accumulate_grads(&vars);
        }
    }
    Ok(total)
}

/// One Adam step on the two-view loss; returns the loss before the update.
pub fn ami_train_step(batch: &[AmiSample], params: &mut AmiParams, opt: &mut Adam) -> Result<f64> {
    let loss = ami_loss_and_grads(batch, params)?;
    opt.step(&mut params.params)?;
    Ok(loss)
}
