use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mvpconv::autodiff::Tape;
use mvpconv::metrics::compute_miou;
use mvpconv::model::{build_model, BlockOptions, SegModelConfig};
use mvpconv::mvpconv::{mvpconv_forward, MVPConvBlock, MVPConvConfig, Variant};
use mvpconv::nn::{Ctx, Mode, ParamSet};
use mvpconv::voxel::{devoxelize, voxelize, VoxelGrid};
use mvpconv::Tensor;

fn random(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, rng.random_range(0..=i));
    }
    p
}

fn permute_coords(c: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let (b, n) = (c.shape()[0], c.shape()[1]);
    Tensor::from_fn(c.shape().to_vec(), |i| {
        let (bi, p, a) = (i / (n * 3), (i / 3) % n, i % 3);
        c.data()[(bi * n + perm[p]) * 3 + a]
    })
    .reshape([b, n, 3])
    .unwrap()
}

fn permute_channels_last(x: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let n = *x.shape().last().unwrap();
    Tensor::from_fn(x.shape().to_vec(), |i| x.data()[(i / n) * n + perm[i % n]])
}

/// IoU per class from explicit index sets.
fn set_iou(preds: &[usize], labels: &[usize], class: usize) -> f64 {
    let inter = preds.iter().zip(labels).filter(|(&p, &l)| p == class && l == class).count();
    let union = preds.iter().zip(labels).filter(|(&p, &l)| p == class || l == class).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn miou_matches_set_oracle(seed in any::<u64>(), batch in 1usize..4, points in 1usize..40, k in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = batch * points;
        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let got = compute_miou(&preds, &labels, batch, points, k).unwrap();
        let mut want = 0.0;
        for b in 0..batch {
            let s = b * points..(b + 1) * points;
            want += (0..k).map(|c| set_iou(&preds[s.clone()], &labels[s.clone()], c)).sum::<f64>() / k as f64;
        }
        want /= batch as f64;
        prop_assert!((got.miou - want).abs() < 1e-12);
        let hits = preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
        prop_assert!((got.accuracy - hits as f64 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn voxelize_ignores_point_order(seed in any::<u64>(), n in 1usize..120, r in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords = random(&[1, n, 3], 0.0, (r - 1) as f64, &mut rng);
        let feats = random(&[1, 2, n], -1.0, 1.0, &mut rng);
        let perm = shuffled(n, &mut rng);
        let a = voxelize(&coords, &feats, r).unwrap();
        let b = voxelize(&permute_coords(&coords, &perm), &permute_channels_last(&feats, &perm), r).unwrap();
        prop_assert!(a.features().max_abs_diff(b.features()) < 1e-12);
    }

    #[test]
    fn devoxelize_hits_lattice_values(seed in any::<u64>(), r in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = VoxelGrid::new(random(&[1, 1, r, r, r], -1.0, 1.0, &mut rng), r).unwrap();
        let cells: Vec<[usize; 3]> = (0..20).map(|_| [0; 3].map(|_| rng.random_range(0..r))).collect();
        let coords = Tensor::new([1, cells.len(), 3], cells.iter().flatten().map(|&v| v as f64).collect()).unwrap();
        let out = devoxelize(&grid, &coords).unwrap();
        for (i, &c) in cells.iter().enumerate() {
            prop_assert_eq!(out.data()[i], grid.at(0, 0, c));
        }
    }

    #[test]
    fn param_count_matches_built_model(
        w in prop::sample::select(vec![0.25, 0.5, 1.0]),
        variant in prop::sample::select(Variant::ALL.to_vec()),
        use_1x1 in any::<bool>(),
        depth in 1usize..4,
    ) {
        let cfg = SegModelConfig {
            width_multiplier: w,
            blocks: vec![(8, 4), (16, 2)],
            global_dim: 16,
            classifier: vec![8],
            block: BlockOptions { variant, use_1x1_conv: use_1x1, conv3d_depth: depth, transmission_enabled: true },
            ..Default::default()
        };
        let (_, params) = build_model::<f32>(&cfg).unwrap();
        prop_assert_eq!(params.trainable_count(), cfg.param_count());
    }
}

#[test]
fn block_is_permutation_equivariant_in_train_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut params = ParamSet::<f64>::new();
    let block = MVPConvBlock::new(&mut params, &mut rng, "b", MVPConvConfig::new(3, 6, 5)).unwrap();
    let n = 96;
    let pos = random(&[2, n, 3], -1.0, 1.0, &mut rng);
    let feats = random(&[2, 3, n], -1.0, 1.0, &mut rng);
    let perm = shuffled(n, &mut rng);
    let run = |p: &Tensor<f64>, f: &Tensor<f64>| {
        let tape = Tape::new();
        let mut cx = Ctx::new(&tape, &params, Mode::Train);
        let x = tape.constant(f.clone());
        mvpconv_forward(&mut cx, &block, p, x).unwrap().value().as_ref().clone()
    };
    let base = run(&pos, &feats);
    let moved = run(&permute_coords(&pos, &perm), &permute_channels_last(&feats, &perm));
    assert!(permute_channels_last(&base, &perm).max_abs_diff(&moved) < 1e-9);
}

#[test]
fn aggregation_set_arithmetic() {
    use mvpconv::mvpconv::{aggregate_features, NeuronOutput};
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let tape = Tape::new();
    // Multiples of 1/8 keep every sum exact.
    let mut dyadic = || tape.constant(Tensor::from_fn(vec![2, 4, 10], |_| rng.random_range(-32i32..32) as f64 / 8.0));
    let out = NeuronOutput { v1: dyadic(), p1: dyadic(), v2: Some(dyadic()), p2: Some(dyadic()) };
    let h = aggregate_features(&out, Variant::H).unwrap().value();
    let g = aggregate_features(&out, Variant::G).unwrap().value();
    let p1 = out.p1.value();
    for i in 0..h.len() {
        assert_eq!(h.data()[i] - g.data()[i], p1.data()[i]);
    }

    let c = |v: f64| tape.constant(Tensor::full([1, 2, 3], v));
    let consts = NeuronOutput { v1: c(1.0), p1: c(-7.0), v2: Some(c(2.0)), p2: Some(c(3.0)) };
    let g = aggregate_features(&consts, Variant::G).unwrap().value();
    assert!(g.data().iter().all(|&v| v == 6.0));
}
