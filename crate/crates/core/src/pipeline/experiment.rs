use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{average_fusion, baseline_interp, evaluate, two_view, Baseline, MetricsReport, Region};
use crate::ami::{ami_train_step, AmiConfig, AmiParams, AmiSample};
use crate::error::{Error, Result};
use crate::rfn::{fuse_volume, rfn_train_step, RfnConfig, RfnParams, RfnSample};
use crate::tensor::{Adam, AdamConfig, Tensor};
use crate::volume::{decimate_z, phantom, CsvTable, Recipe, View, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dims: [usize; 3],
    /// Cycled over the generated volumes.
    pub recipes: Vec<Recipe>,
    pub train_volumes: usize,
    pub held_out_volumes: usize,
    /// Range the (isotropic) in-plane spacing is drawn from, in mm.
    pub inplane_spacing_mm: [f64; 2],
    /// Range the dense axial spacing is drawn from, in mm.
    pub axial_spacing_mm: [f64; 2],
    pub train_rz: Vec<usize>,
    pub eval_rz: Vec<usize>,
    pub ami: AmiConfig,
    pub rfn: RfnConfig,
    pub ami_steps: usize,
    pub rfn_steps: usize,
    /// Slices per view per AMI step; axial slices per RFN step.
    pub batch_size: usize,
    /// Square training crop; `None` trains on whole slices.
    pub patch: Option<usize>,
    /// Stage-1 optimizer. The default raises the learning rate to 3e-3 so
    /// 500 steps suffice; stage 2 keeps 1e-4.
    pub ami_adam: AdamConfig,
    pub rfn_adam: AdamConfig,
    /// Side of the central evaluation patch.
    pub eval_crop: usize,
    /// Worker threads for inference; training itself is single-threaded.
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            dims: [48, 48, 48],
            recipes: vec![Recipe::Laminae { period_mm: 32.0 }, Recipe::Ellipsoids { count: 8 }],
            train_volumes: 6,
            held_out_volumes: 2,
            inplane_spacing_mm: [0.8, 1.0],
            axial_spacing_mm: [0.8, 6.0],
            train_rz: vec![2, 3],
            eval_rz: vec![2, 4],
            ami: AmiConfig::desk(),
            rfn: RfnConfig::desk(),
            ami_steps: 500,
            rfn_steps: 500,
            batch_size: 4,
            patch: None,
            ami_adam: AdamConfig {
                lr: 3e-3,
                ..AdamConfig::default()
            },
            rfn_adam: AdamConfig::default(),
            eval_crop: 32,
            threads: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.recipes.is_empty() {
            return Err(Error::EmptyDataset("no phantom recipes configured".into()));
        }
        if self.train_volumes == 0 {
            return Err(Error::EmptyDataset("no training volumes configured".into()));
        }
        if self.train_rz.is_empty() || self.train_rz.iter().chain(&self.eval_rz).any(|&r| r < 1) {
            return Err(Error::invalid("r_z sets must be non-empty and >= 1"));
        }
        if self.ami_steps == 0 || self.rfn_steps == 0 || self.batch_size == 0 {
            return Err(Error::invalid("step counts and batch size must be > 0"));
        }
        for range in [self.inplane_spacing_mm, self.axial_spacing_mm] {
            if !(range[0] > 0.0 && range[0] <= range[1]) {
                return Err(Error::invalid(format!("bad spacing range {range:?}")));
            }
        }
        if let Some(p) = self.patch {
            if p == 0 || p > self.dims[0] || p > self.dims[1] {
                return Err(Error::invalid(format!("patch {p} does not fit {:?}", self.dims)));
            }
        }
        self.ami.validate()?;
        self.rfn.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<(String, Volume)>,
    pub held_out: Vec<(String, Volume)>,
}

pub fn build_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut make = |i: usize| -> Result<Volume> {
        let s = rng.gen_range(cfg.inplane_spacing_mm[0]..=cfg.inplane_spacing_mm[1]);
        let rz = rng.gen_range(cfg.axial_spacing_mm[0]..=cfg.axial_spacing_mm[1]);
        let seed: u64 = rng.gen();
        phantom(cfg.dims, [s, s, rz], seed, cfg.recipes[i % cfg.recipes.len()])
    };
    let train = (0..cfg.train_volumes)
        .map(|i| Ok((format!("train-{i}"), make(i)?)))
        .collect::<Result<_>>()?;
    let held_out = (0..cfg.held_out_volumes)
        .map(|i| Ok((format!("heldout-{i}"), make(i)?)))
        .collect::<Result<_>>()?;
    Ok(Dataset { train, held_out })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub stage: String,
    pub step: usize,
    pub r_z: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub ami: AmiParams,
    pub rfn: RfnParams,
    pub log: Vec<LogRow>,
}

impl TrainOutcome {
    pub fn log_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(["stage", "step", "r_z", "loss"]);
        for r in &self.log {
            t.push([r.stage.clone(), r.step.to_string(), r.r_z.to_string(), format!("{}", r.loss)]);
        }
        t
    }
}

/// `[C, H, W]` window starting at `(r0, c0)`.
fn crop_hw(t: &Tensor, r0: usize, c0: usize, h: usize, w: usize) -> Tensor {
    let s = t.shape();
    let (ch, sh, sw) = (s[0], s[1], s[2]);
    let mut data = Vec::with_capacity(ch * h * w);
    for c in 0..ch {
        for r in r0..r0 + h {
            let base = (c * sh + r) * sw;
            data.extend_from_slice(&t.data()[base + c0..base + c0 + w]);
        }
    }
    Tensor::new(vec![ch, h, w], data).expect("window inside tensor")
}

/// Stage 1 trains AMI on both views with `r_z` drawn per step; stage 2
/// freezes it and trains RFN on synthesized axial slices. Deterministic per
/// config. `progress` sees every log row as it is produced.
pub fn train_saint(cfg: &ExperimentConfig, data: &Dataset, mut progress: impl FnMut(&LogRow)) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::EmptyDataset("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut log = Vec::with_capacity(cfg.ami_steps + cfg.rfn_steps);

    let sparse: Vec<Vec<Volume>> = data
        .train
        .iter()
        .map(|(_, v)| cfg.train_rz.iter().map(|&r| decimate_z(v, r)).collect())
        .collect::<Result<_>>()?;

    let mut ami = AmiParams::init(cfg.ami, cfg.seed)?;
    let mut opt = Adam::new(&ami.params, cfg.ami_adam);
    for step in 0..cfg.ami_steps {
        let ri = rng.gen_range(0..cfg.train_rz.len());
        let r_z = cfg.train_rz[ri];
        let mut batch = Vec::with_capacity(2 * cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let vi = rng.gen_range(0..data.train.len());
            let (dense, lr) = (&data.train[vi].1, &sparse[vi][ri]);
            for view in [View::Sagittal, View::Coronal] {
                let index = rng.gen_range(0..lr.dims()[view.index_axis()]);
                let mut s = AmiSample::from_pair(dense, lr, view, index, r_z)?;
                if let Some(p) = cfg.patch {
                    let r0 = rng.gen_range(0..=s.triplet.shape()[1] - p);
                    s.triplet = crop_hw(&s.triplet, r0, 0, p, s.triplet.shape()[2]);
                    s.target = crop_hw(&s.target, r0, 0, p, s.target.shape()[2]);
                }
                batch.push(s);
            }
        }
        let loss = ami_train_step(&batch, &mut ami, &mut opt)?;
        let row = LogRow {
            stage: "ami".into(),
            step,
            r_z,
            loss,
        };
        progress(&row);
        log.push(row);
    }

    // Frozen AMI reconstructions for every training volume and factor.
    let views: Vec<Vec<(Volume, Volume)>> = sparse
        .iter()
        .map(|per_r| {
            per_r
                .iter()
                .zip(&cfg.train_rz)
                .map(|(s, &r)| two_view(s, r, &ami, cfg.threads))
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut rfn = RfnParams::init(cfg.rfn, cfg.seed.wrapping_add(2))?;
    let mut opt = Adam::new(&rfn.params, cfg.rfn_adam);
    for step in 0..cfg.rfn_steps {
        let ri = rng.gen_range(0..cfg.train_rz.len());
        let r_z = cfg.train_rz[ri];
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let vi = rng.gen_range(0..data.train.len());
            let gt = &data.train[vi].1;
            let (sag, cor) = &views[vi][ri];
            let depth = gt.dims()[2].min(sag.dims()[2]);
            let synthesized: Vec<usize> = (0..depth).filter(|z| z % r_z != 0).collect();
            let z = *synthesized
                .choose(&mut rng)
                .ok_or_else(|| Error::EmptyDataset(format!("no synthesized slices at r_z = {r_z}")))?;
            let mut s = RfnSample::from_volumes(sag, cor, gt, z)?;
            if let Some(p) = cfg.patch {
                let (h, w) = (s.gt.shape()[1], s.gt.shape()[2]);
                let (r0, c0) = (rng.gen_range(0..=h - p), rng.gen_range(0..=w - p));
                s = RfnSample {
                    sag: crop_hw(&s.sag, r0, c0, p, p),
                    cor: crop_hw(&s.cor, r0, c0, p, p),
                    gt: crop_hw(&s.gt, r0, c0, p, p),
                };
            }
            batch.push(s);
        }
        let loss = rfn_train_step(&batch, &mut rfn, &mut opt)?;
        let row = LogRow {
            stage: "rfn".into(),
            step,
            r_z,
            loss,
        };
        progress(&row);
        log.push(row);
    }
    Ok(TrainOutcome { ami, rfn, log })
}

/// Scores SAINT, the two-view average and both baselines on every volume of
/// `volumes` at every factor in `r_zs`.
pub fn evaluate_experiment(
    volumes: &[(String, Volume)],
    r_zs: &[usize],
    ami: &AmiParams,
    rfn: &RfnParams,
    crop: usize,
    threads: usize,
) -> Result<MetricsReport> {
    let mut report = MetricsReport::default();
    for (id, gt) in volumes {
        let regions = [Region::Full, Region::Central(crop.min(gt.dims()[0]).min(gt.dims()[1]))];
        for &r_z in r_zs {
            let sparse = decimate_z(gt, r_z)?;
            let (sag, cor) = two_view(&sparse, r_z, ami, threads)?;
            let fused = fuse_volume(&sag, &cor, &sparse, r_z, rfn, threads)?;
            let avg = average_fusion(&sag, &cor, &sparse, r_z)?;
            report.extend(evaluate(id, "saint", &fused, gt, r_z, &regions)?);
            report.extend(evaluate(id, "average", &avg, gt, r_z, &regions)?);
            for b in [Baseline::Trilinear, Baseline::Nearest] {
                let up = baseline_interp(&sparse, r_z, b)?;
                report.extend(evaluate(id, &b.to_string(), &up, gt, r_z, &regions)?);
            }
        }
    }
    Ok(report)
}
