//! Tape gradients against central finite differences, layer by layer.
//!
//! Every check runs in f64. A layer whose output is not a scalar is reduced
//! with a fixed random projection `Σ out ⊙ R`. Elements with
//! `|analytic| ≥ ABS_FLOOR` are compared relatively,
//! `|a − n| / max(|a|, |n|)`, the rest absolutely.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{concat_channels, finite_diff_grad, mul, sum, Tape, Var};
use crate::error::Result;
use crate::model::{build_model, SegModelConfig};
use crate::mvpconv::{block_map, MVPConvBlock, MVPConvConfig, Variant};
use crate::nn::{batchnorm_train, conv3d, cross_entropy, leaky_relu, pointwise_mlp, Ctx, Mode, ParamKind, ParamSet, BN_EPS};
use crate::tensor::Tensor;
use crate::voxel::{devoxelize_var, voxelize_var, PointVoxelMap};

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Number of gradient elements compared.
    pub checked: usize,
}

impl LayerReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < REL_TOL && self.max_abs_err < ABS_FLOOR
    }
}

/// `(max relative error, max absolute error)` under the floor rule above.
pub fn compare(analytic: &[f64], numeric: &[f64]) -> (f64, f64) {
    let (mut rel, mut abs) = (0.0f64, 0.0f64);
    for (&a, &n) in analytic.iter().zip(numeric) {
        let d = (a - n).abs();
        if a.abs() >= ABS_FLOOR {
            rel = rel.max(d / a.abs().max(n.abs()));
        } else {
            abs = abs.max(d);
        }
    }
    if analytic.len() != numeric.len() {
        rel = f64::INFINITY;
    }
    (rel, abs)
}

type Forward<'a> = dyn for<'t, 'p> Fn(&mut Ctx<'t, 'p, f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>> + 'a;

fn project<'t>(out: Var<'t, f64>, weights: Option<&Tensor<f64>>) -> Result<Var<'t, f64>> {
    match weights {
        None => Ok(out),
        Some(r) => Ok(sum(mul(out, out.tape().constant(r.clone()))?)),
    }
}

fn loss_value(params: &ParamSet<f64>, inputs: &[Tensor<f64>], weights: Option<&Tensor<f64>>, f: &Forward) -> Result<f64> {
    let tape = Tape::new();
    let mut cx = Ctx::new(&tape, params, Mode::Train);
    let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut cx, &vars)?;
    Ok(project(out, weights)?.value().item())
}

/// Compares gradients with respect to every input and every trainable
/// parameter of `params`.
pub fn check_layer(
    name: &str,
    params: &ParamSet<f64>,
    inputs: &[Tensor<f64>],
    rng: &mut ChaCha8Rng,
    f: &Forward,
) -> Result<LayerReport> {
    let tape = Tape::new();
    let mut cx = Ctx::new(&tape, params, Mode::Train);
    let leaves: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut cx, &leaves)?;
    let weights = (!out.value().is_scalar()).then(|| uniform(rng, &out.shape(), 1.0));
    let loss = project(out, weights.as_ref())?;
    let mut grads = tape.backward(loss)?;
    let mut analytic = Vec::new();
    for &leaf in &leaves {
        analytic.extend_from_slice(grads.get(leaf).data());
    }
    for g in cx.param_grads(&mut grads).into_iter().flatten() {
        analytic.extend_from_slice(g.data());
    }

    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..inputs.len() {
        let mut perturbed = inputs.to_vec();
        let fd = finite_diff_grad(
            |x| {
                perturbed[i] = x.clone();
                loss_value(params, &perturbed, weights.as_ref(), f)
            },
            &inputs[i],
            FD_STEP,
        )?;
        numeric.extend_from_slice(fd.data());
    }
    let mut shifted = params.clone();
    for (id, p) in params.iter() {
        if p.kind != ParamKind::Trainable {
            continue;
        }
        let fd = finite_diff_grad(
            |x| {
                *shifted.value_mut(id) = x.clone();
                loss_value(&shifted, inputs, weights.as_ref(), f)
            },
            &p.value,
            FD_STEP,
        )?;
        *shifted.value_mut(id) = p.value.clone();
        numeric.extend_from_slice(fd.data());
    }
    let (max_rel_err, max_abs_err) = compare(&analytic, &numeric);
    Ok(LayerReport {
        layer: name.to_string(),
        max_rel_err,
        max_abs_err,
        checked: analytic.len(),
    })
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-bound..bound))
}

/// Values bounded away from zero so activation kinks stay out of reach of the step.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Block used by the neuron and block checks: `C₁ = 2`, `C₂ = 4`, `r = 3`.
fn small_block(rng: &mut ChaCha8Rng, variant: Variant) -> Result<(MVPConvBlock, ParamSet<f64>)> {
    let mut params = ParamSet::new();
    let mut cfg = MVPConvConfig::new(2, 4, 3);
    cfg.variant = variant;
    let block = MVPConvBlock::new(&mut params, rng, "block", cfg)?;
    jitter_affine(&mut params, rng);
    Ok((block, params))
}

/// Moves γ and β off their 1/0 initial values so their gradients are generic.
fn jitter_affine(params: &mut ParamSet<f64>, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = params
        .iter()
        .filter(|(_, p)| p.name.ends_with(".gamma") || p.name.ends_with(".beta"))
        .map(|(id, _)| id)
        .collect();
    for id in ids {
        for v in params.value_mut(id).data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
}

fn small_map(rng: &mut ChaCha8Rng, points: usize, r: usize) -> Result<Rc<PointVoxelMap>> {
    block_map(&uniform(rng, &[1, points, 3], 1.0), r)
}

/// Runs every layer check from one seed.
pub fn run_suite(seed: u64) -> Result<Vec<LayerReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let none = ParamSet::<f64>::new();
    let mut reports = Vec::new();

    for (name, cin, cout, k, r) in [("conv3d_k1", 2, 3, 1, 3), ("conv3d_k3", 2, 2, 3, 4)] {
        let inputs = [
            uniform(rng, &[1, cin, r, r, r], 1.0),
            uniform(rng, &[cout, cin, k, k, k], 0.5),
            uniform(rng, &[cout], 0.5),
        ];
        reports.push(check_layer(name, &none, &inputs, rng, &|_, v| conv3d(v[0], v[1], v[2]))?);
    }

    let inputs = [uniform(rng, &[1, 3, 8], 1.0), uniform(rng, &[4, 3], 0.5), uniform(rng, &[4], 0.5)];
    reports.push(check_layer("pointwise_mlp", &none, &inputs, rng, &|_, v| pointwise_mlp(v[0], v[1], v[2]))?);

    let inputs = [uniform(rng, &[2, 3, 5], 1.0), uniform(rng, &[3], 1.5), uniform(rng, &[3], 0.5)];
    reports.push(check_layer("batchnorm_train", &none, &inputs, rng, &|_, v| {
        Ok(batchnorm_train(v[0], v[1], v[2], BN_EPS)?.0)
    })?);

    let inputs = [off_zero(rng, &[2, 3, 4])];
    reports.push(check_layer("leaky_relu", &none, &inputs, rng, &|_, v| leaky_relu(v[0], 0.1))?);

    let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..3)).collect();
    let inputs = [uniform(rng, &[1, 3, 5], 2.0)];
    reports.push(check_layer("cross_entropy", &none, &inputs, rng, &|_, v| cross_entropy(v[0], &labels))?);

    let map = small_map(rng, 12, 4)?;
    let inputs = [uniform(rng, &[1, 3, 12], 1.0)];
    reports.push(check_layer("voxelize", &none, &inputs, rng, &|_, v| voxelize_var(&map, v[0]))?);
    let inputs = [uniform(rng, &[1, 3, 4, 4, 4], 1.0)];
    reports.push(check_layer("devoxelize", &none, &inputs, rng, &|_, v| devoxelize_var(&map, v[0]))?);

    let map = small_map(rng, 8, 3)?;
    let (block, params) = small_block(rng, Variant::H)?;
    let inputs = [uniform(rng, &[1, 2, 8], 1.0)];
    reports.push(check_layer("initializing_neuron", &params, &inputs, rng, &|cx, v| {
        let (v1, p1) = block.initializing_neuron(cx, &map, v[0])?;
        concat_channels(&[v1, p1])
    })?);

    let inputs = [uniform(rng, &[1, 4, 8], 1.0), uniform(rng, &[1, 4, 8], 1.0)];
    reports.push(check_layer("transmission_neuron", &params, &inputs, rng, &|cx, v| {
        let (v2, p2) = block.transmission_neuron(cx, &map, v[0], v[1])?;
        concat_channels(&[v2.expect("built"), p2.expect("built")])
    })?);

    let (block, params) = small_block(rng, Variant::G)?;
    let inputs = [uniform(rng, &[1, 2, 8], 1.0)];
    reports.push(check_layer("mvpconv_block", &params, &inputs, rng, &|cx, v| {
        block.forward_mapped(cx, &map, v[0])
    })?);

    let cfg = SegModelConfig {
        blocks: vec![(4, 3)],
        global_dim: 4,
        classifier: vec![4],
        num_classes: 3,
        in_channels: 2,
        seed,
        ..Default::default()
    };
    let (model, mut params) = build_model::<f64>(&cfg)?;
    jitter_affine(&mut params, rng);
    let positions = uniform(rng, &[1, 8, 3], 1.0);
    let labels: Vec<usize> = (0..8).map(|i| i % 3).collect();
    let inputs = [uniform(rng, &[1, 2, 8], 1.0)];
    reports.push(check_layer("model_cross_entropy", &params, &inputs, rng, &|cx, v| {
        cross_entropy(model.forward(cx, &positions, v[0])?, &labels)
    })?);

    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compare_uses_the_absolute_floor() {
        let (rel, abs) = compare(&[1.0, 1e-8], &[1.0 + 1e-6, 3e-8]);
        assert!((rel - 1e-6 / (1.0 + 1e-6)).abs() < 1e-15);
        assert!((abs - 2e-8).abs() < 1e-20);
    }

    #[test]
    fn detects_a_wrong_rule() {
        let none = ParamSet::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = [uniform(&mut rng, &[4], 1.0)];
        // Value of x², gradient recorded as x (half the truth).
        let bad = check_layer("bad", &none, &x, &mut rng, &|_, v| {
            let value = v[0].value().map(|a| a * a);
            let xs = v[0].value().as_ref().clone();
            Ok(v[0].tape().record(
                "bad_square",
                &[v[0]],
                value,
                Box::new(move |bw| {
                    let g = Tensor::from_fn(xs.shape().to_vec(), |i| bw.grad.data()[i] * xs.data()[i]);
                    vec![Some(g)]
                }),
            ))
        })
        .unwrap();
        assert!(!bad.passed());
    }

    #[test]
    fn suite_passes() {
        for r in run_suite(1).unwrap() {
            assert!(r.passed(), "{r:?}");
        }
    }
}
