#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saint_core::ami::{sample_loss, AmiConfig, AmiNet, AmiParams, AmiSample};
use saint_core::rfn::{self, RfnConfig, RfnParams};
use saint_core::tensor::{gradcheck_inputs, Tape, Tensor, Var};
use saint_core::volume::{phantom, Recipe, View};
use saint_core::Result;

pub const H: f64 = 1e-4;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero, so relu and |.| kinks are out of reach of
/// the finite-difference stencil.
pub fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `sum(w * x)` with fixed weights, turning any op output into a scalar with
/// a non-uniform upstream gradient.
pub fn weighted_sum<'t>(x: Var<'t>, seed: u64) -> Result<Var<'t>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(&mut rng, &x.shape());
    Ok(x.mul(x.tape().constant(w))?.sum())
}

type OpCase = (&'static str, Vec<Tensor>, Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>>);

/// Every differentiable op on small random shapes drawn from `seed`.
pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, h, w) = (rng.gen_range(1..4), rng.gen_range(2..6), rng.gen_range(2..6));
    let k = [1, 3, 5][rng.gen_range(0..3)];
    let co = rng.gen_range(1..4);
    let r = rng.gen_range(1..4);
    let s = rng.gen_range(-2.0..2.0);
    let mut t = |shape: &[usize]| rand_tensor(&mut rng, shape);
    let a = t(&[c, h, w]);
    let b = t(&[c, h, w]);
    let kern = t(&[co, c, k, k]);
    let bias = t(&[c]);
    let m = t(&[3, 4]);
    let v = t(&[4]);
    let parts: Vec<Tensor> = (0..r).map(|_| t(&[1, h, w])).collect();
    let relu_in = off_kink(&mut rng, &[c, h, w]);
    let l1_in = off_kink(&mut rng, &[c, h, w]);
    vec![
        ("add", vec![a.clone(), b.clone()], Box::new(|_, x| weighted_sum(x[0].add(x[1])?, 1))),
        ("mul", vec![a.clone(), b.clone()], Box::new(|_, x| weighted_sum(x[0].mul(x[1])?, 2))),
        ("add_scalar", vec![a.clone()], Box::new(move |_, x| weighted_sum(x[0].add_scalar(s), 3))),
        ("scale", vec![a.clone()], Box::new(move |_, x| weighted_sum(x[0].scale(s), 4))),
        ("relu", vec![relu_in], Box::new(|_, x| weighted_sum(x[0].relu(), 5))),
        ("bias_add", vec![a.clone(), bias], Box::new(|_, x| weighted_sum(x[0].bias_add(x[1])?, 6))),
        ("conv2d", vec![a.clone(), kern.clone()], Box::new(|_, x| weighted_sum(x[0].conv2d(x[1])?, 7))),
        ("conv2d_sum", vec![a.clone(), kern], Box::new(|_, x| Ok(x[0].conv2d(x[1])?.sum()))),
        ("concat", vec![a.clone(), b.clone()], Box::new(|t, x| weighted_sum(t.concat_channels(x)?, 8))),
        ("narrow", vec![a.clone()], Box::new(move |_, x| weighted_sum(x[0].narrow_channels(c - 1, 1)?, 9))),
        ("crop_cols", vec![a.clone()], Box::new(move |_, x| weighted_sum(x[0].crop_cols(w - 1)?, 10))),
        ("reshape", vec![a.clone()], Box::new(move |_, x| weighted_sum(x[0].reshape(&[c * h * w])?, 11))),
        ("sum", vec![a.clone()], Box::new(|_, x| Ok(x[0].sum()))),
        ("mean", vec![a.clone()], Box::new(|_, x| Ok(x[0].mul(x[0])?.mean()))),
        (
            "l1_loss",
            vec![l1_in],
            Box::new(move |t, x| x[0].l1_loss(t.constant(Tensor::zeros(&[c, h, w])))),
        ),
        ("matvec", vec![m, v], Box::new(|_, x| weighted_sum(x[0].matvec(x[1])?, 12))),
        ("interleave", parts, Box::new(|t, x| weighted_sum(t.interleave_cols(x)?, 13))),
    ]
}

pub fn micro_triplet(seed: u64) -> (AmiSample, AmiParams) {
    let v = phantom([8, 8, 9], [0.9, 0.9, 1.5], seed, Recipe::Laminae { period_mm: 6.0 }).unwrap();
    let s = AmiSample::from_volume(&v, View::Sagittal, 3, 2).unwrap();
    (s, AmiParams::init(AmiConfig::micro(), seed).unwrap())
}

/// Worst relative error of the full AMI loss w.r.t. every parameter tensor,
/// perturbing up to `per_tensor` entries of each.
pub fn ami_end_to_end_error(seed: u64, per_tensor: usize) -> f64 {
    let (sample, params) = micro_triplet(seed);
    gradcheck_inputs(
        |tape, vars| sample_loss(&AmiNet::new(&params, vars), tape, &sample),
        params.params.tensors(),
        H,
        Some(per_tensor),
    )
    .unwrap()
}

/// Same for the fusion network, with a non-zero residual head so the body
/// is reachable.
pub fn rfn_end_to_end_error(seed: u64, per_tensor: usize) -> f64 {
    let mut params = RfnParams::init(RfnConfig::micro(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let head = params.params.index_of("head.w").unwrap();
    let shape = params.params.get(head).shape().to_vec();
    *params.params.get_mut(head) = rand_tensor(&mut rng, &shape);
    let sag = rand_tensor(&mut rng, &[1, 6, 5]);
    let cor = rand_tensor(&mut rng, &[1, 6, 5]);
    let config = params.config;
    gradcheck_inputs(
        |tape, vars| {
            let out = rfn::forward(&config, vars, tape.constant(sag.clone()), tape.constant(cor.clone()))?;
            Ok(out.mean())
        },
        params.params.tensors(),
        H,
        Some(per_tensor),
    )
    .unwrap()
}
