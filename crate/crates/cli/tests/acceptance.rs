//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs sequentially so the latency criterion never shares the CPU.

use std::process::ExitCode;
use std::rc::Rc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mvpconv::autodiff::{add, mul, sum, Tape};
use mvpconv::gradcheck::run_suite;
use mvpconv::metrics::EvalResult;
use mvpconv::model::build_model;
use mvpconv::mvpconv::{aggregate_features, block_map, mvpconv_forward, MVPConvBlock, MVPConvConfig, Variant};
use mvpconv::nn::{Checkpoint, Ctx, Mode, ParamSet};
use mvpconv::pointcloud::{generate_synthetic, normalize_points, ShapeKind};
use mvpconv::train::{evaluate, split_dataset, train_loop, DatasetSpec, TrainConfig};
use mvpconv::voxel::{devoxelize, trilinear_stencil, voxelize, voxelize_var, devoxelize_var, PointVoxelMap, VoxelGrid};
use mvpconv::Tensor;
use mvpconv_cli::ablation::{self, AblationReport, Grid};
use mvpconv_cli::bench::bench_latency;
use mvpconv_cli::RunConfig;

type Check = Result<(bool, String), String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// Grid coordinates in `[0, r − 1]`, a tenth of them snapped onto integer planes.
fn grid_coords(b: usize, n: usize, r: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let top = (r - 1) as f64;
    Tensor::from_fn(vec![b, n, 3], |_| {
        let v = rng.random_range(0.0..=top);
        if rng.random_bool(0.1) {
            v.round()
        } else {
            v
        }
    })
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn partition_of_unity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for r in [2, 4, 8] {
        let top = (r - 1) as f64;
        for i in 0..1000 {
            let mut c = [0.0; 3];
            for v in &mut c {
                *v = match i {
                    0 => 0.0,
                    1 => top,
                    _ => rng.random_range(0.0..=top),
                };
            }
            let s = trilinear_stencil(c, r).map_err(err)?;
            worst = worst.max((s.weights.iter().sum::<f64>() - 1.0).abs());
        }
    }
    Ok((worst < 1e-6, format!("max |sum w - 1| = {worst:.2e} over 3000 queries (tol 1e-6)")))
}

fn linear_field() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (b, c, r, n) = (2, 2, 8, 500);
    let coef: Vec<[f64; 4]> = (0..b * c)
        .map(|_| [0; 4].map(|_| rng.random_range(-3.0..3.0)))
        .collect();
    let field = |k: usize, p: [f64; 3]| coef[k][0] * p[0] + coef[k][1] * p[1] + coef[k][2] * p[2] + coef[k][3];
    let r3 = r * r * r;
    let grid = Tensor::from_fn(vec![b, c, r, r, r], |i| {
        let (k, cell) = (i / r3, i % r3);
        let (u, v, w) = (cell / (r * r), (cell / r) % r, cell % r);
        field(k, [u as f64, v as f64, w as f64])
    });
    let grid = VoxelGrid::new(grid, r).map_err(err)?;
    let eps = 1e-9;
    let coords = uniform(&[b, n, 3], eps, (r - 1) as f64 - eps, &mut rng);
    let out = devoxelize(&grid, &coords).map_err(err)?;
    let mut worst = 0.0f64;
    for bi in 0..b {
        for ci in 0..c {
            for p in 0..n {
                let q = &coords.data()[(bi * n + p) * 3..(bi * n + p) * 3 + 3];
                let want = field(bi * c + ci, [q[0], q[1], q[2]]);
                worst = worst.max((out.data()[(bi * c + ci) * n + p] - want).abs());
            }
        }
    }
    Ok((worst <= 1e-12, format!("max |err| = {worst:.2e} at {} points (tol 1e-12)", b * n)))
}

/// Per-voxel mean by scanning every point for every voxel.
fn voxel_mean_oracle(coords: &Tensor<f64>, feats: &Tensor<f64>, r: usize) -> Vec<f64> {
    let (b, n, c) = (coords.shape()[0], coords.shape()[1], feats.shape()[1]);
    let cell = |v: f64| (v.floor() as usize).min(r - 1);
    let mut out = vec![0.0; b * c * r * r * r];
    for bi in 0..b {
        for u in 0..r {
            for v in 0..r {
                for w in 0..r {
                    let members: Vec<usize> = (0..n)
                        .filter(|&p| {
                            let q = &coords.data()[(bi * n + p) * 3..(bi * n + p) * 3 + 3];
                            (cell(q[0]), cell(q[1]), cell(q[2])) == (u, v, w)
                        })
                        .collect();
                    if members.is_empty() {
                        continue;
                    }
                    for ci in 0..c {
                        let total: f64 = members.iter().map(|&p| feats.data()[(bi * c + ci) * n + p]).sum();
                        out[(bi * c + ci) * r * r * r + (u * r + v) * r + w] = total / members.len() as f64;
                    }
                }
            }
        }
    }
    out
}

fn voxelize_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst, mut empties, mut empty_bad) = (0.0f64, 0usize, 0usize);
    for _ in 0..20 {
        let b = rng.random_range(1..=2);
        let n = rng.random_range(1..=256);
        let r = rng.random_range(2..=8);
        let c = rng.random_range(1..=4);
        let coords = grid_coords(b, n, r, &mut rng);
        let feats = uniform(&[b, c, n], -1.0, 1.0, &mut rng);
        let got = voxelize(&coords, &feats, r).map_err(err)?;
        let want = voxel_mean_oracle(&coords, &feats, r);
        let counts = voxel_mean_oracle(&coords, &Tensor::full([b, 1, n], 1.0), r);
        for (i, (&g, &w)) in got.features().data().iter().zip(&want).enumerate() {
            worst = worst.max((g - w).abs());
            let cell = i % (r * r * r);
            let bi = i / (c * r * r * r);
            if counts[bi * r * r * r + cell] == 0.0 {
                empties += 1;
                if g != 0.0 || g.is_sign_negative() {
                    empty_bad += 1;
                }
            }
        }
    }
    Ok((
        worst <= 1e-12 && empty_bad == 0 && empties > 0,
        format!("max |err| = {worst:.2e} (tol 1e-12); {empties} empty cells, {empty_bad} nonzero"),
    ))
}

/// `<x, A^T y>` with the transpose taken from the tape's backward rule.
fn tape_adjoint<F>(forward: F, x: &Tensor<f64>, y: &Tensor<f64>) -> Result<(f64, f64), String>
where
    F: for<'t> Fn(mvpconv::autodiff::Var<'t, f64>) -> mvpconv::Result<mvpconv::autodiff::Var<'t, f64>>,
{
    let tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let ax = forward(xv).map_err(err)?;
    let lhs = ax.value().dot(y);
    let loss = sum(mul(ax, tape.constant(y.clone())).map_err(err)?);
    let g = tape.backward(loss).map_err(err)?;
    Ok((lhs, x.dot(&g.get(xv))))
}

fn adjoint_dot_tests() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut vox, mut devox) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let b = rng.random_range(1..=2);
        let n = rng.random_range(1..=128);
        let r = rng.random_range(2..=8);
        let c = rng.random_range(1..=3);
        let map = Rc::new(PointVoxelMap::new(&grid_coords(b, n, r, &mut rng), r).map_err(err)?);
        let pts = uniform(&[b, c, n], -1.0, 1.0, &mut rng);
        let cells = uniform(&[b, c, r, r, r], -1.0, 1.0, &mut rng);

        let (l, rt) = tape_adjoint(|x| voxelize_var(&map, x), &pts, &cells)?;
        vox = vox.max(rel_err(l, rt));
        let direct = (map.voxelize(&pts).map_err(err)?.dot(&cells), pts.dot(&map.voxelize_adjoint(&cells).map_err(err)?));
        vox = vox.max(rel_err(direct.0, direct.1));

        let (l, rt) = tape_adjoint(|g| devoxelize_var(&map, g), &cells, &pts)?;
        devox = devox.max(rel_err(l, rt));
        let direct = (map.devoxelize(&cells).map_err(err)?.dot(&pts), cells.dot(&map.devoxelize_adjoint(&pts).map_err(err)?));
        devox = devox.max(rel_err(direct.0, direct.1));
    }
    Ok((
        vox < 1e-10 && devox < 1e-10,
        format!("max rel err voxelize {vox:.2e}, devoxelize {devox:.2e} over 20 instances each (tol 1e-10)"),
    ))
}

fn gradient_suite() -> Check {
    let reports = run_suite(1).map_err(err)?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.layer.as_str()).collect();
    let worst = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    let mut detail = format!("{} layers, worst rel err {worst:.2e} (tol 1e-4)", reports.len());
    if !failed.is_empty() {
        detail.push_str(&format!("; failed: {}", failed.join(", ")));
    }
    Ok((failed.is_empty(), detail))
}

fn block_output(block: &MVPConvBlock, params: &ParamSet<f32>, positions: &Tensor<f32>, feats: &Tensor<f32>, mode: Mode) -> Result<Tensor<f32>, String> {
    let tape = Tape::new();
    let mut cx = Ctx::new(&tape, params, mode);
    let x = tape.constant(feats.clone());
    let out = mvpconv_forward(&mut cx, block, positions, x).map_err(err)?;
    Ok(out.value().as_ref().clone())
}

fn similarity_invariance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (b, n) = (2, 256);
    let mut norm_err = 0.0f64;
    let mut block_err = 0.0f64;
    let mut params = ParamSet::<f32>::new();
    let block = MVPConvBlock::new(&mut params, &mut rng, "blk", MVPConvConfig::new(3, 8, 8)).map_err(err)?;
    for _ in 0..5 {
        let p = uniform(&[b, n, 3], -1.0, 1.0, &mut rng);
        let s = rng.random_range(0.25..4.0);
        let t = [0; 3].map(|_| rng.random_range(-10.0..10.0));
        let q = Tensor::from_fn(p.shape().to_vec(), |i| s * p.data()[i] + t[i % 3]);
        let a = normalize_points(&p).map_err(err)?;
        let c = normalize_points(&q).map_err(err)?;
        norm_err = norm_err.max(a.tensor().max_abs_diff(c.tensor()));

        let feats = uniform(&[b, 3, n], -1.0, 1.0, &mut rng).cast::<f32>();
        for mode in [Mode::Train, Mode::Eval] {
            let ya = block_output(&block, &params, &p.cast(), &feats, mode)?;
            let yb = block_output(&block, &params, &q.cast(), &feats, mode)?;
            block_err = block_err.max(ya.max_abs_diff(&yb));
        }
    }
    Ok((
        norm_err < 1e-9 && block_err < 1e-5,
        format!("normalize max diff {norm_err:.2e} (tol 1e-9); block max diff {block_err:.2e} (tol 1e-5, f32)"),
    ))
}

fn permutation_equivariance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (model, params) = build_model::<f32>(&ablation::desk_model()).map_err(err)?;
    let clouds = generate_synthetic(ShapeKind::Quad, 512, 2, 11).map_err(err)?;
    let cloud = mvpconv::pointcloud::PointCloud::stack(&[&clouds[0], &clouds[1]]).map_err(err)?.cast::<f32>();
    let n = cloud.points();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let base = model.logits(&params, &cloud).map_err(err)?;
    let moved = model.logits(&params, &cloud.permute_points(&perm).map_err(err)?).map_err(err)?;
    let k = base.shape()[1];
    let mut worst = 0.0f64;
    for row in 0..cloud.batch() * k {
        for (dst, &src) in perm.iter().enumerate() {
            let d = (moved.data()[row * n + dst] - base.data()[row * n + src]).abs();
            worst = worst.max(d as f64);
        }
    }
    Ok((worst <= 1e-5, format!("max |logit diff| = {worst:.2e} over {} logits (tol 1e-5, f32)", base.len())))
}

fn aggregation_variants() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let positions = uniform(&[2, 64, 3], -1.0, 1.0, &mut rng).cast::<f32>();
    let feats = uniform(&[2, 3, 64], -1.0, 1.0, &mut rng).cast::<f32>();
    let mut mismatched = Vec::new();
    let mut b_identical = false;
    for (i, variant) in Variant::ALL.iter().copied().enumerate() {
        let mut params = ParamSet::<f32>::new();
        let mut init_rng = ChaCha8Rng::seed_from_u64(80);
        let cfg = MVPConvConfig {
            variant,
            ..MVPConvConfig::new(3, 8, 4)
        };
        let block = MVPConvBlock::new(&mut params, &mut init_rng, &format!("v{i}"), cfg).map_err(err)?;
        let map = block_map(&positions, 4).map_err(err)?;
        let tape = Tape::new();
        let mut cx = Ctx::new(&tape, &params, Mode::Eval);
        let out = block.neurons(&mut cx, &map, tape.constant(feats.clone())).map_err(err)?;
        let y = block.forward_mapped(&mut cx, &map, tape.constant(feats.clone())).map_err(err)?;
        let agg = aggregate_features(&out, variant).map_err(err)?;

        let members: Vec<Rc<Tensor<f32>>> = variant
            .members()
            .iter()
            .map(|&m| out.member(m).map(|v| v.value()).ok_or_else(|| format!("{variant}: member {m:?} missing")))
            .collect::<Result<_, _>>()?;
        let mut brute = members[0].data().to_vec();
        for m in &members[1..] {
            for (a, &x) in brute.iter_mut().zip(m.data()) {
                *a += x;
            }
        }
        let bits = |t: &[f32]| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        if bits(y.value().data()) != bits(&brute) || bits(agg.value().data()) != bits(&brute) {
            mismatched.push(variant.to_string());
        }
        if variant == Variant::B {
            let plain = add(out.v1, out.p1).map_err(err)?;
            b_identical = bits(plain.value().data()) == bits(y.value().data());
        }
    }
    let detail = format!(
        "{} variants matched brute-force sums bitwise{}; B == add(V1, P1): {b_identical}",
        Variant::ALL.len() - mismatched.len(),
        if mismatched.is_empty() { String::new() } else { format!(" (mismatch: {})", mismatched.join(",")) }
    );
    Ok((mismatched.is_empty() && b_identical, detail))
}

fn learning_config() -> RunConfig {
    let mut cfg = RunConfig {
        model: ablation::desk_model(),
        train: TrainConfig {
            epochs: 100,
            dataset: DatasetSpec {
                kind: ShapeKind::Quad,
                n_points: 512,
                n_clouds: 40,
                seed: 7,
            },
            eval_fraction: 0.2,
            ..Default::default()
        },
    };
    cfg.reseed(7);
    cfg
}

fn learning_sanity() -> Check {
    let cfg = learning_config();
    let (train, eval) = split_dataset(cfg.train.dataset.generate::<f32>().map_err(err)?, cfg.train.eval_fraction).map_err(err)?;
    let (model, mut params) = build_model::<f32>(&cfg.model).map_err(err)?;
    let out = train_loop(&model, &mut params, &train, &eval, &cfg.train).map_err(err)?;
    let first = out.history.first().map_or(f64::NAN, |r| r.loss);
    let last = out.history.last().map_or(f64::NAN, |r| r.loss);
    let e = &out.final_eval;
    let pass = e.accuracy >= 0.90 && e.miou >= 0.75 && last < 0.2 * first && train.len() == 32 && eval.len() == 8;
    Ok((
        pass,
        format!(
            "{} train / {} eval, {} params: acc {:.4} (>= 0.90), mIoU {:.4} (>= 0.75), loss {first:.4} -> {last:.4}",
            train.len(),
            eval.len(),
            model.config.param_count(),
            e.accuracy,
            e.miou
        ),
    ))
}

fn finite_unit(v: Option<f64>) -> bool {
    v.is_some_and(|x| x.is_finite() && (0.0..=1.0).contains(&x))
}

fn ablation_grids() -> Check {
    let base = ablation::desk_defaults();
    let dir = tempfile::tempdir().map_err(err)?;
    let mut problems = Vec::new();
    let params_of = |report: &AblationReport, id: &str| report.rows.iter().find(|r| r.config_id == id).map(|r| r.param_count);
    let mut counts = Vec::new();
    let mut reports = Vec::new();
    for (grid, want) in [(Grid::Table5, 8), (Grid::Table4, 4), (Grid::Table6, 2)] {
        let out = dir.path().join(grid.name());
        let report = ablation::run_ablation(&base, grid, 5).map_err(err)?;
        ablation::write_report(&report, &out).map_err(err)?;
        let json: AblationReport =
            serde_json::from_str(&std::fs::read_to_string(out.join("ablation.json")).map_err(err)?).map_err(err)?;
        let csv = ablation::parse_csv(&std::fs::read_to_string(out.join("ablation.csv")).map_err(err)?).map_err(err)?;
        if json != report || csv != report.rows {
            problems.push(format!("{}: report round trip differs", grid.name()));
        }
        let good = report
            .rows
            .iter()
            .filter(|r| {
                r.skipped.is_none()
                    && finite_unit(r.miou)
                    && finite_unit(r.accuracy)
                    && r.final_loss.is_some_and(f64::is_finite)
                    && r.median_latency_ms.is_some_and(f64::is_finite)
            })
            .count();
        if report.rows.len() != want || good != want {
            problems.push(format!("{}: {} rows, {good} finite (want {want})", grid.name(), report.rows.len()));
        }
        counts.push(format!("{} {}/{want}", grid.name(), good));
        reports.push(report);
    }
    let labels: Vec<String> = reports[0].rows.iter().map(|r| r.variant.to_string()).collect();
    if labels.join("") != "ABCDEFGH" {
        problems.push(format!("table5 labels {labels:?}"));
    }
    let ids: Vec<&str> = reports[1].rows.iter().map(|r| r.config_id.as_str()).collect();
    match (params_of(&reports[1], "init"), params_of(&reports[0], "B")) {
        (Some(a), Some(b)) if a == b => {}
        other => problems.push(format!("init vs B param counts {other:?}")),
    }
    let with_without: Vec<bool> = reports[2].rows.iter().map(|r| r.use_1x1_conv).collect();
    if with_without != [true, false] {
        problems.push(format!("table6 1x1 flags {with_without:?}"));
    }
    let detail = format!(
        "{}; table4 rows {}; {}",
        counts.join(", "),
        ids.join(","),
        if problems.is_empty() { "round trips ok".to_string() } else { problems.join("; ") }
    );
    Ok((problems.is_empty(), detail))
}

fn latency_trend() -> Check {
    let resolutions = [4, 8, 16, 32];
    let mut series = Vec::new();
    let mut monotone = true;
    for _ in 0..3 {
        let rows = bench_latency::<f32>(&ablation::desk_model(), 2048, &resolutions, 5, 7).map_err(err)?;
        let medians: Vec<f64> = rows.iter().map(|r| r.median_ms).collect();
        monotone &= medians.windows(2).all(|w| w[0] <= w[1]);
        series.push(medians.iter().map(|m| format!("{m:.1}")).collect::<Vec<_>>().join("/"));
    }
    Ok((monotone, format!("median ms at r=4/8/16/32, N=2048: {}", series.join("  "))))
}

fn same_metrics(a: &EvalResult, b: &EvalResult) -> bool {
    a.miou.to_bits() == b.miou.to_bits()
        && a.accuracy.to_bits() == b.accuracy.to_bits()
        && a.per_class_iou.iter().map(|v| v.to_bits()).eq(b.per_class_iou.iter().map(|v| v.to_bits()))
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(err)?;
    let mut cfg = learning_config();
    cfg.train.epochs = 4;
    cfg.train.dataset.n_points = 256;
    cfg.train.dataset.n_clouds = 20;
    let (train, eval) = split_dataset(cfg.train.dataset.generate::<f32>().map_err(err)?, cfg.train.eval_fraction).map_err(err)?;
    let mut runs = Vec::new();
    for attempt in 0..2 {
        let mut tc = cfg.train.clone();
        tc.checkpoint_dir = Some(dir.path().join(format!("run{attempt}")));
        let (model, mut params) = build_model::<f32>(&cfg.model).map_err(err)?;
        runs.push(train_loop(&model, &mut params, &train, &eval, &tc).map_err(err)?);
    }
    let key = |h: &[mvpconv::train::EpochRecord]| {
        h.iter().map(|r| (r.epoch, r.loss.to_bits(), r.miou.to_bits(), r.accuracy.to_bits())).collect::<Vec<_>>()
    };
    let same_history = key(&runs[0].history) == key(&runs[1].history);

    let mut other = cfg.model.clone();
    other.seed += 1;
    let (model, mut params) = build_model::<f32>(&other).map_err(err)?;
    let mut restored = Vec::new();
    for (file, want) in [("final.mvpc", &runs[0].final_eval), ("best.mvpc", &runs[0].best_eval)] {
        Checkpoint::load(dir.path().join("run0").join(file)).map_err(err)?.restore_params(&mut params).map_err(err)?;
        let got = evaluate(&model, &params, &eval, cfg.train.batch_size).map_err(err)?;
        restored.push(same_metrics(&got, want));
    }
    let same_files = std::fs::read(dir.path().join("run0/final.mvpc")).map_err(err)?
        == std::fs::read(dir.path().join("run1/final.mvpc")).map_err(err)?;
    Ok((
        same_history && same_files && restored.iter().all(|&x| x),
        format!(
            "histories identical: {same_history}; final checkpoints identical: {same_files}; reload final/best metrics bit-exact: {}/{}",
            restored[0], restored[1]
        ),
    ))
}

fn main() -> ExitCode {
    type Criterion = (u32, &'static str, u64, fn() -> Check);
    let criteria: [Criterion; 12] = [
        (1, "trilinear partition of unity", 1, partition_of_unity),
        (2, "linear-field exactness", 1, linear_field),
        (3, "voxelize oracle equivalence", 1, voxelize_oracle),
        (4, "adjoint dot-tests", 1, adjoint_dot_tests),
        (5, "gradient suite", 30, gradient_suite),
        (6, "translation and scale invariance", 5, similarity_invariance),
        (7, "permutation equivariance", 5, permutation_equivariance),
        (8, "aggregation variants", 5, aggregation_variants),
        (9, "learning sanity", 600, learning_sanity),
        (10, "ablation harness", 1800, ablation_grids),
        (11, "latency trend", 120, latency_trend),
        (12, "determinism and persistence", 120, determinism),
    ];
    let filter: Vec<u32> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut failures = 0;
    for (id, name, budget, check) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let took = start.elapsed();
        let in_time = took <= Duration::from_secs(budget);
        let (pass, detail) = match result {
            Ok((ok, detail)) => (ok && in_time, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failures += 1;
        }
        println!(
            "{} {id:>2} {name}: {detail}; {:.2}s (budget {budget}s)",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
    }
    println!("{failures} failed");
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
