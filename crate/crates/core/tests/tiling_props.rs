use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saint_core::tensor::{Tape, Tensor};
use saint_core::tiling::{in_seam_band, plan, stitch_report, tiled_infer, ConvChainSpec};
use saint_core::volume::Slice;
use saint_core::Result;

/// Random zero-padded chain of 2-channel conv+relu layers, averaged to one
/// output channel by a final conv.
struct Chain {
    kernels: Vec<Tensor>,
}

impl Chain {
    fn random(ks: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = ks.len();
        let kernels = ks
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let (ci, co) = (if i == 0 { 1 } else { 2 }, if i + 1 == n { 1 } else { 2 });
                let len = co * ci * k * k;
                Tensor::new(vec![co, ci, k, k], (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap()
            })
            .collect();
        Chain { kernels }
    }

    fn spec(&self) -> ConvChainSpec {
        ConvChainSpec::new(self.kernels.iter().map(|k| k.shape()[2]).collect())
    }

    fn run(&self, s: &Slice) -> Result<Slice> {
        let tape = Tape::new();
        let mut x = tape.constant(Tensor::new(vec![1, s.rows, s.cols], s.data.clone())?);
        for (i, k) in self.kernels.iter().enumerate() {
            x = x.conv2d(tape.constant(k.clone()))?;
            if i + 1 < self.kernels.len() {
                x = x.add_scalar(0.05).relu();
            }
        }
        Slice::new(s.rows, s.cols, s.spacing, x.value().data().to_vec())
    }
}

fn image(h: usize, w: usize, seed: u64) -> Slice {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Slice::new(h, w, [1.0, 1.0], (0..h * w).map(|_| rng.gen()).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sufficient_margin_is_exact(
        ks in prop::collection::vec(prop::sample::select(vec![1usize, 3, 5]), 1..5),
        h in 8usize..20,
        w in 8usize..20,
        core in 3usize..8,
        seed in any::<u64>(),
    ) {
        let chain = Chain::random(&ks, seed);
        let img = image(h, w, seed);
        let mono = chain.run(&img).unwrap();
        let margin = chain.spec().margin().unwrap();
        let p = plan(&[h, w], &[core.min(h), core.min(w)], margin).unwrap();
        let tiled = tiled_infer(&img, |s| chain.run(s), &p).unwrap();
        let rep = stitch_report(&tiled, &mono, &p, margin).unwrap();
        prop_assert!(rep.max_abs <= 1e-9, "max abs {}", rep.max_abs);
    }

    #[test]
    fn short_margin_errors_stay_in_seam_band(
        ks in prop::collection::vec(prop::sample::select(vec![3usize, 5]), 1..4),
        seed in any::<u64>(),
        short in 0usize..3,
    ) {
        let chain = Chain::random(&ks, seed);
        let (h, w) = (18, 18);
        let img = image(h, w, seed ^ 1);
        let mono = chain.run(&img).unwrap();
        let full = chain.spec().margin().unwrap();
        let margin = full.saturating_sub(short + 1);
        let p = plan(&[h, w], &[6, 6], margin).unwrap();
        let tiled = tiled_infer(&img, |s| chain.run(s), &p).unwrap();
        for r in 0..h {
            for c in 0..w {
                if (tiled.get(r, c) - mono.get(r, c)).abs() > 1e-9 {
                    prop_assert!(in_seam_band(&p, &[r, c], full), "({r}, {c}) deviates outside the band");
                }
            }
        }
    }

    #[test]
    fn cores_partition_the_grid(
        grid in prop::collection::vec(1usize..12, 1..4),
        core_seed in any::<u64>(),
        margin in 0usize..5,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(core_seed);
        let core: Vec<usize> = grid.iter().map(|&g| rng.gen_range(1..=g)).collect();
        let p = plan(&grid, &core, margin).unwrap();
        let total: usize = grid.iter().product();
        let mut hits = vec![0u32; total];
        for t in &p.tiles {
            prop_assert!(t.fetch.contains_region(&t.core));
            let ext = t.core.extent();
            let n: usize = ext.iter().product();
            for i in 0..n {
                let mut rem = i;
                let mut flat = 0;
                for a in 0..grid.len() {
                    let stride: usize = ext[a + 1..].iter().product();
                    let coord = t.core.start[a] + rem / stride;
                    rem %= stride;
                    flat = flat * grid[a] + coord;
                }
                hits[flat] += 1;
            }
        }
        prop_assert!(hits.iter().all(|&n| n == 1));
    }
}

#[test]
fn deep_3d_chain_padding() {
    let spec = ConvChainSpec::new(vec![3; 52]).with_dims(3);
    assert_eq!(spec.margin().unwrap(), 52);
    assert_eq!(2 * spec.margin().unwrap(), 104);
    assert_eq!(ConvChainSpec::new(vec![3, 5, 3]).margin().unwrap(), 4);
    assert!(ConvChainSpec::new(vec![]).margin().is_err());
    assert!(ConvChainSpec::new(vec![4]).margin().is_err());
}

#[test]
fn margin_three_on_a_single_tile_axis() {
    let p = plan(&[64], &[64], 3).unwrap();
    assert_eq!(p.tiles.len(), 1);
    assert_eq!((p.tiles[0].fetch.start[0], p.tiles[0].fetch.end[0]), (0, 64));
}
