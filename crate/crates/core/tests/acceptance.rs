//! Acceptance criteria, run in order with one PASS/FAIL line each. The
//! trained model is shared by the experiment-backed criteria.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{ami_end_to_end_error, op_cases, rfn_end_to_end_error, H};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saint_core::ami::{feature_map, fdm, inverse_shuffle, periodic_shuffle, ps_map};
use saint_core::metrics::{psnr, ssim, SsimWindow};
use saint_core::pipeline::{
    build_dataset, evaluate_experiment, saint_infer, train_saint, Dataset, ExperimentConfig, MetricsReport, Region,
    SliceSet, TrainOutcome,
};
use saint_core::tensor::gradcheck_inputs;
use saint_core::tiling::{plan, stitch_report, tiled_infer, ConvChainSpec};
use saint_core::volume::{decimate_z, export_csv, phantom, view_slice, Recipe, Slice, View, Volume};

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let t = Instant::now();
    let mut o = f();
    let took = t.elapsed();
    o.detail = format!("{} [{:.1}s, limit {}s]", o.detail, took.as_secs_f64(), limit.as_secs());
    o.pass &= took <= limit;
    o
}

fn ac1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut cases = 0;
    for r in 1..=8 {
        for _ in 0..8 {
            let (h, w) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
            let stack: Vec<Slice> = (0..r)
                .map(|_| Slice::new(h, w, [1.0, 1.0], (0..h * w).map(|_| rng.gen()).collect()).unwrap())
                .collect();
            let img = periodic_shuffle(&stack).unwrap();
            let back = inverse_shuffle(&img, r).unwrap();
            if back.iter().zip(&stack).any(|(a, b)| a.data != b.data) {
                return check(false, format!("round trip failed at r_z={r}, {h}x{w}"));
            }
            let mut hits = vec![0u8; h * w * r];
            for c in 0..r {
                for y in 0..h {
                    for x in 0..w {
                        let (py, px) = ps_map(c, y, x, r).unwrap();
                        hits[py * w * r + px] += 1;
                        if img.get(py, px) != stack[c].get(y, x) {
                            return check(false, format!("shuffle disagrees with ps_map at r_z={r}"));
                        }
                    }
                }
            }
            if hits.iter().any(|&n| n != 1) {
                return check(false, format!("ps_map not a bijection at r_z={r}"));
            }
            cases += 1;
        }
    }
    check(true, format!("{cases} random stacks, r_z 1..8"))
}

fn ac2() -> Outcome {
    let m = fdm(1, 3, 1.0, 1.0, 2).unwrap();
    let want = [((1, 1), 1.0), ((1, 2), 1.0), ((0, 0), 10f64.sqrt()), ((2, 2), 2f64.sqrt())];
    for ((h, w), v) in want {
        if (m.get(h, w) - v).abs() > 1e-12 {
            return check(false, format!("P_1({h},{w}) = {} != {v}", m.get(h, w)));
        }
    }
    for r in 2..=6 {
        let ms: Vec<_> = (1..r).map(|c| fdm(c, 3, 0.8, 1.7, r).unwrap()).collect();
        for (i, a) in ms.iter().enumerate() {
            for b in &ms[i + 1..] {
                if a.values == b.values {
                    return check(false, format!("duplicate channels at r_z={r}"));
                }
            }
            for s in [0.5, 2.0, 3.0] {
                let scaled = fdm(a.c, 3, 0.8 * s, 1.7 * s, r).unwrap();
                if a.values.iter().zip(&scaled.values).any(|(x, y)| (x * s - y).abs() > 1e-12) {
                    return check(false, format!("spacing linearity fails at r_z={r}, s={s}"));
                }
            }
        }
    }
    check(true, "hand values, linearity s in {0.5,2,3}, distinct channels r_z<=6")
}

fn ac3() -> Outcome {
    let mut worst_op = 0.0f64;
    let mut worst_name = "";
    for seed in 0..10 {
        for (name, inputs, f) in op_cases(seed) {
            let e = gradcheck_inputs(&*f, &inputs, H, None).unwrap();
            if e > worst_op {
                worst_op = e;
                worst_name = name;
            }
        }
    }
    let ami = ami_end_to_end_error(1, 8);
    let rfn = rfn_end_to_end_error(2, 8);
    check(
        worst_op < 1e-4 && ami < 1e-3 && rfn < 1e-3,
        format!("ops max rel err {worst_op:.2e} ({worst_name}), AMI {ami:.2e}, RFN {rfn:.2e}"),
    )
}

fn ac9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (rows, cols) = (rng.gen_range(11..20), rng.gen_range(11..20));
        let a: Vec<f64> = (0..rows * cols).map(|_| rng.gen()).collect();
        let b: Vec<f64> = a.iter().map(|v| (v + rng.gen_range(-0.3..0.3)).clamp(0.0, 1.0)).collect();
        let mse = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
        worst = worst.max((psnr(&a, &b, 1.0).unwrap() - 10.0 * (1.0 / mse).log10()).abs());
        worst = worst.max((ssim(&a, &b, rows, cols, SsimWindow::Gaussian, 1.0).unwrap() - ssim_direct(&a, &b, rows, cols)).abs());
    }
    let gt = vec![0.5; 64];
    let off: Vec<f64> = gt.iter().map(|v| v + 0.1).collect();
    let p20 = psnr(&off, &gt, 1.0).unwrap();
    let img: Vec<f64> = (0..144).map(|i| ((i * 37) % 11) as f64 / 11.0).collect();
    let s1 = ssim(&img, &img, 12, 12, SsimWindow::Gaussian, 1.0).unwrap();
    check(
        worst < 1e-9 && (p20 - 20.0).abs() < 1e-9 && (s1 - 1.0).abs() < 1e-12,
        format!("max oracle diff {worst:.1e}, PSNR(MSE=0.01) = {p20:.12}, SSIM(identical) = {s1}"),
    )
}

/// Gaussian-window SSIM from the textbook formula, one window at a time.
fn ssim_direct(a: &[f64], b: &[f64], rows: usize, cols: usize) -> f64 {
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let z: f64 = g.iter().sum::<f64>().powi(2);
    let (c1, c2) = (1e-4, 9e-4);
    let mut acc = Vec::new();
    for r0 in 0..=rows - 11 {
        for c0 in 0..=cols - 11 {
            let at = |v: &[f64], i: usize, j: usize| v[(r0 + i) * cols + c0 + j];
            let wsum = |f: &dyn Fn(usize, usize) -> f64| -> f64 {
                (0..11).flat_map(|i| (0..11).map(move |j| (i, j))).map(|(i, j)| g[i] * g[j] / z * f(i, j)).sum()
            };
            let mx = wsum(&|i, j| at(a, i, j));
            let my = wsum(&|i, j| at(b, i, j));
            let vx = wsum(&|i, j| (at(a, i, j) - mx).powi(2));
            let vy = wsum(&|i, j| (at(b, i, j) - my).powi(2));
            let cxy = wsum(&|i, j| (at(a, i, j) - mx) * (at(b, i, j) - my));
            acc.push((2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2)));
        }
    }
    acc.iter().sum::<f64>() / acc.len() as f64
}

struct Trained {
    cfg: ExperimentConfig,
    data: Dataset,
    model: TrainOutcome,
    train_time: Duration,
}

fn out_dir() -> std::path::PathBuf {
    std::path::PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn train() -> Trained {
    let cfg = ExperimentConfig::default();
    let data = build_dataset(&cfg).unwrap();
    let t = Instant::now();
    let model = train_saint(&cfg, &data, |_| {}).unwrap();
    let train_time = t.elapsed();
    let _ = export_csv(&model.log_csv(), &out_dir().join("training_log.csv"));
    Trained {
        cfg,
        data,
        model,
        train_time,
    }
}

fn mean_psnr(rep: &MetricsReport, method: &str, r_z: usize, region: Region) -> f64 {
    rep.mean_psnr(method, r_z, region, SliceSet::Synthesized).unwrap()
}

fn ac4(t: &Trained, rep: &MetricsReport) -> Outcome {
    let region = Region::Central(t.cfg.eval_crop);
    let (saint, tri, avg) = (
        mean_psnr(rep, "saint", 2, region),
        mean_psnr(rep, "trilinear", 2, region),
        mean_psnr(rep, "average", 2, region),
    );
    let per_volume: Vec<String> = rep
        .select("saint", 2, region, SliceSet::Synthesized)
        .zip(rep.select("trilinear", 2, region, SliceSet::Synthesized))
        .map(|(s, l)| format!("{} {:.2}/{:.2}", s.volume_id, s.psnr_db, l.psnr_db))
        .collect();
    let a = saint > tri;
    let b = saint >= avg;
    let limit = Duration::from_secs(15 * 60);
    check(
        a && b && t.train_time <= limit,
        format!(
            "(a) SAINT {saint:.2} dB vs trilinear {tri:.2} dB: {}; (b) RFN {saint:.2} dB vs average {avg:.2} dB: {}; per volume SAINT/trilinear [{}]; training {:.0}s of {}s",
            if a { "ok" } else { "NOT MET" },
            if b { "ok" } else { "NOT MET" },
            per_volume.join(", "),
            t.train_time.as_secs_f64(),
            limit.as_secs()
        ),
    )
}

fn ac5(t: &Trained, rep: &MetricsReport) -> Outcome {
    let region = Region::Central(t.cfg.eval_crop);
    let (saint, nearest) = (mean_psnr(rep, "saint", 4, region), mean_psnr(rep, "nearest", 4, region));
    let finite = rep.select("saint", 4, region, SliceSet::All).all(|r| r.psnr_db.is_finite() && r.ssim.is_finite());
    check(
        finite && saint > nearest,
        format!("r_z=4 (not trained): SAINT {saint:.2} dB vs nearest {nearest:.2} dB, finite metrics: {finite}"),
    )
}

fn ac6(t: &Trained) -> Outcome {
    let mut n = 0;
    for seed in 0..2u64 {
        let recipe = if seed == 0 { Recipe::Laminae { period_mm: 8.0 } } else { Recipe::Ellipsoids { count: 8 } };
        let v = phantom([24, 24, 24], [0.9, 0.9, 2.0], 100 + seed, recipe).unwrap();
        for r in [2, 3, 4, 6] {
            let sparse = decimate_z(&v, r).unwrap();
            let out = saint_infer(&sparse, r, &t.model.ami, &t.model.rfn, 1).unwrap();
            let back = decimate_z(&out, r).unwrap();
            let same = back.dims() == sparse.dims()
                && back.data().iter().zip(sparse.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return check(false, format!("observed slices changed at r_z={r}, seed {seed}"));
            }
            n += 1;
        }
    }
    check(true, format!("{n} volume/factor pairs bit-exact"))
}

fn ac7(t: &Trained) -> Outcome {
    let ami = &t.model.ami;
    let v = phantom([8, 96, 96], [1.0; 3], 77, Recipe::Ellipsoids { count: 12 }).unwrap();
    let img = view_slice(&v, View::Sagittal, 4);
    let net = |s: &Slice| feature_map(s, ami);
    let mono = net(&img).unwrap();
    let margin = ami.config.feature_chain().margin().unwrap();
    let full = plan(&[96, 96], &[32, 32], margin).unwrap();
    let exact = stitch_report(&tiled_infer(&img, net, &full).unwrap(), &mono, &full, margin).unwrap();
    let bare = plan(&[96, 96], &[32, 32], 0).unwrap();
    let seams = stitch_report(&tiled_infer(&img, net, &bare).unwrap(), &mono, &bare, margin).unwrap();
    let deep = ConvChainSpec::new(vec![3; 52]).with_dims(3).margin().unwrap();
    let _ = export_csv(&seams.to_csv(), &out_dir().join("stitch_margin0.csv"));
    check(
        exact.max_abs <= 1e-9 && seams.ratio > 1.0 && deep == 52 && 2 * deep == 104,
        format!(
            "margin {margin}: max abs {:.1e}; margin 0: seam MAD {:.3e} / interior MAD {:.3e} = {:.2}; 52 x k3 -> {deep} per side, {} total",
            exact.max_abs,
            seams.seam_mad,
            seams.interior_mad,
            seams.ratio,
            2 * deep
        ),
    )
}

fn ac8(t: &Trained) -> Outcome {
    let r = 2;
    let laminae = t
        .cfg
        .recipes
        .iter()
        .copied()
        .find(|r| matches!(r, Recipe::Laminae { .. }))
        .unwrap_or(Recipe::Laminae { period_mm: 32.0 });
    let v = phantom([48, 48, 48], [0.9, 0.9, 1.0], 808, laminae).unwrap();
    let sparse = decimate_z(&v, r).unwrap();
    let mut outs: Vec<Volume> = Vec::new();
    let mut rates = Vec::new();
    for rz in [1.0, 3.0, 6.0] {
        let declared = sparse.clone().with_spacing([0.9, 0.9, rz]).unwrap();
        let out = saint_infer(&declared, r, &t.model.ami, &t.model.rfn, 1).unwrap();
        let [nx, ny, nz] = out.dims();
        let mut diff = 0.0;
        let mut count = 0usize;
        for z in (1..nz).filter(|z| z % r != 0) {
            let (a, b) = (out.axial_slice(z), out.axial_slice(z - 1));
            diff += a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum::<f64>();
            count += nx * ny;
        }
        rates.push(diff / count as f64);
        outs.push(out);
    }
    let max_diff = |a: &Volume, b: &Volume| a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    let d = [max_diff(&outs[0], &outs[1]), max_diff(&outs[1], &outs[2]), max_diff(&outs[0], &outs[2])];
    let differ = d.iter().all(|&x| x > 0.0);
    let monotone = rates.windows(2).all(|w| w[1] >= w[0]);
    check(
        differ && monotone,
        format!(
            "max abs diff between sweeps {:.3e}/{:.3e}/{:.3e}; mean inter-slice diff at R_z 1/3/6 mm: {:.5}/{:.5}/{:.5} ({})",
            d[0],
            d[1],
            d[2],
            rates[0],
            rates[1],
            rates[2],
            if monotone { "non-decreasing" } else { "NOT non-decreasing" }
        ),
    )
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut report = |name: &str, o: Outcome| {
        println!("{name} {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failures += 1;
        }
    };
    report("AC-1", timed(Duration::from_secs(1), ac1));
    report("AC-2", timed(Duration::from_secs(1), ac2));
    report("AC-3", timed(Duration::from_secs(120), ac3));
    report("AC-9", ac9());

    let trained = train();
    let rep = evaluate_experiment(
        &trained.data.held_out,
        &[2, 4],
        &trained.model.ami,
        &trained.model.rfn,
        trained.cfg.eval_crop,
        1,
    )
    .unwrap();
    let _ = export_csv(&rep.to_csv(), &out_dir().join("metrics.csv"));
    report("AC-4", ac4(&trained, &rep));
    report("AC-5", ac5(&trained, &rep));
    report("AC-6", ac6(&trained));
    report("AC-7", timed(Duration::from_secs(60), || ac7(&trained)));
    report("AC-8", ac8(&trained));

    println!("acceptance: {} criteria failed", failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
