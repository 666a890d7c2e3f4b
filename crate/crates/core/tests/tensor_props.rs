use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use saint_core::tensor::{concat_channels, split_channels, Adam, AdamConfig, ParamSet, Tape, Tensor};

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-1.0f64..1.0, n).prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
}

fn conv_case() -> impl Strategy<Value = (Tensor, Tensor, Tensor, f64, f64)> {
    (1usize..4, 1usize..7, 1usize..7, 1usize..4, prop::sample::select(vec![1usize, 3, 5]))
        .prop_flat_map(|(c, h, w, co, k)| {
            (tensor(vec![c, h, w]), tensor(vec![c, h, w]), tensor(vec![co, c, k, k]), -3.0f64..3.0, -3.0f64..3.0)
        })
}

fn conv(x: &Tensor, k: &Tensor) -> Tensor {
    let tape = Tape::new();
    let y = tape.constant(x.clone()).conv2d(tape.constant(k.clone())).unwrap();
    (*y.value()).clone()
}

proptest! {
    #[test]
    fn conv_is_linear((x, y, k, a, b) in conv_case()) {
        let combo = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect(),
        ).unwrap();
        let lhs = conv(&combo, &k);
        let (cx, cy) = (conv(&x, &k), conv(&y, &k));
        for i in 0..lhs.len() {
            prop_assert!((lhs.data()[i] - (a * cx.data()[i] + b * cy.data()[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn concat_split_round_trip(
        sizes in prop::collection::vec(1usize..4, 1..5),
        h in 1usize..5,
        w in 1usize..5,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parts: Vec<Tensor> = sizes
            .iter()
            .map(|&c| Tensor::new(vec![c, h, w], (0..c * h * w).map(|_| rng.gen()).collect()).unwrap())
            .collect();
        let refs: Vec<&Tensor> = parts.iter().collect();
        let joined = concat_channels(&refs).unwrap();
        prop_assert_eq!(split_channels(&joined, &sizes).unwrap(), parts);
    }
}

#[test]
fn adam_hand_evaluated_first_step() {
    let mut ps = ParamSet::new();
    ps.push("w", Tensor::from_vec(vec![0.0]));
    let mut opt = Adam::new(&ps, AdamConfig::default());
    let tape = Tape::new();
    let vars = ps.bind(&tape, true);
    tape.backward(vars[0].sum()).unwrap();
    ps.accumulate_grads(&vars);
    opt.step(&mut ps).unwrap();
    // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
    let expected = -1e-4 * 1.0 / (1.0 + 1e-8);
    assert!((ps.get(0).data()[0] - expected).abs() < 1e-12);
    assert!((ps.get(0).data()[0] + 1e-4).abs() < 1e-8);
    assert!(ps.grad(0).is_none());
}

#[test]
fn training_is_bit_reproducible() {
    let run = || {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ps = ParamSet::new();
        ps.push("k", Tensor::new(vec![2, 1, 3, 3], (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap());
        let x = Tensor::new(vec![1, 6, 6], (0..36).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let target = Tensor::full(&[2, 6, 6], 0.25);
        let mut opt = Adam::new(&ps, AdamConfig { lr: 1e-2, ..AdamConfig::default() });
        for _ in 0..25 {
            let tape = Tape::new();
            let vars = ps.bind(&tape, true);
            let loss = tape.constant(x.clone()).conv2d(vars[0]).unwrap().l1_loss(tape.constant(target.clone())).unwrap();
            tape.backward(loss).unwrap();
            ps.accumulate_grads(&vars);
            opt.step(&mut ps).unwrap();
        }
        ps.flat_values()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}
