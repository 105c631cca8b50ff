//! Batch normalization over every axis except channels (axis 1).
//!
//! Train mode uses the biased batch variance, both for normalizing and for
//! the running-variance update.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::params::{Ctx, Mode, ParamId, ParamKind, ParamSet};
use crate::tensor::{Real, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

struct Layout {
    batch: usize,
    channels: usize,
    inner: usize,
}

impl Layout {
    fn of(op: &'static str, shape: &[usize]) -> Result<Self> {
        if shape.len() < 2 {
            return Err(Error::contract(op, format!("rank < 2: {shape:?}")));
        }
        Ok(Layout {
            batch: shape[0],
            channels: shape[1],
            inner: shape[2..].iter().product(),
        })
    }

    fn count(&self) -> usize {
        self.batch * self.inner
    }

    fn rows(&self, c: usize) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        (0..self.batch).map(move |b| {
            let start = (b * self.channels + c) * self.inner;
            start..start + self.inner
        })
    }
}

fn check_affine<T: Real>(op: &'static str, channels: usize, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    if gamma.shape() != [channels] || beta.shape() != [channels] {
        return Err(Error::ShapeMismatch {
            op,
            left: vec![channels],
            right: gamma.shape().to_vec(),
        });
    }
    Ok(())
}

/// Batch-statistics normalization. Returns the output together with the
/// per-channel batch mean and biased variance.
pub fn batchnorm_train<'t, T: Real>(
    x: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    eps: f64,
) -> Result<(Var<'t, T>, Vec<f64>, Vec<f64>)> {
    let xv = x.value();
    let lay = Layout::of("batchnorm", xv.shape())?;
    check_affine("batchnorm", lay.channels, &gamma.value(), &beta.value())?;
    let m = lay.count();
    if m < 2 {
        return Err(Error::contract(
            "batchnorm",
            "train mode needs at least two values per channel",
        ));
    }
    let xd = xv.data();
    let (gv, bv) = (gamma.value(), beta.value());
    let mut mean = vec![0.0f64; lay.channels];
    let mut var = vec![0.0f64; lay.channels];
    let mut inv_std = vec![0.0f64; lay.channels];
    let mut out = vec![T::zero(); xd.len()];
    for c in 0..lay.channels {
        let s: f64 = lay.rows(c).flat_map(|r| xd[r].iter()).map(|v| v.as_f64()).sum();
        let mu = s / m as f64;
        let ss: f64 = lay
            .rows(c)
            .flat_map(|r| xd[r].iter())
            .map(|v| (v.as_f64() - mu).powi(2))
            .sum();
        let sigma2 = ss / m as f64;
        let istd = 1.0 / (sigma2 + eps).sqrt();
        let (g, b) = (gv.data()[c].as_f64(), bv.data()[c].as_f64());
        for r in lay.rows(c) {
            for i in r {
                out[i] = T::of_f64(g * (xd[i].as_f64() - mu) * istd + b);
            }
        }
        mean[c] = mu;
        var[c] = sigma2;
        inv_std[c] = istd;
    }
    let out = Tensor::new(xv.shape().to_vec(), out)?;
    let saved_mean = mean.clone();
    let y = x.tape().record(
        "batchnorm_train",
        &[x, gamma, beta],
        out,
        Box::new(move |bw| {
            let lay = Layout::of("batchnorm", bw.inputs[0].shape()).unwrap();
            let (xd, gd, g) = (bw.inputs[0].data(), bw.inputs[1].data(), bw.grad.data());
            let mf = lay.count() as f64;
            let mut gx = vec![T::zero(); xd.len()];
            let mut ggamma = Vec::with_capacity(lay.channels);
            let mut gbeta = Vec::with_capacity(lay.channels);
            for c in 0..lay.channels {
                let (mu, istd) = (saved_mean[c], inv_std[c]);
                let (mut sum_g, mut sum_gx) = (0.0f64, 0.0f64);
                for r in lay.rows(c) {
                    for i in r {
                        let gi = g[i].as_f64();
                        sum_g += gi;
                        sum_gx += gi * (xd[i].as_f64() - mu) * istd;
                    }
                }
                let scale = gd[c].as_f64() * istd / mf;
                for r in lay.rows(c) {
                    for i in r {
                        let xhat = (xd[i].as_f64() - mu) * istd;
                        gx[i] = T::of_f64(scale * (mf * g[i].as_f64() - sum_g - xhat * sum_gx));
                    }
                }
                ggamma.push(T::of_f64(sum_gx));
                gbeta.push(T::of_f64(sum_g));
            }
            vec![
                Some(Tensor::new(bw.inputs[0].shape().to_vec(), gx).unwrap()),
                Some(Tensor::new([lay.channels], ggamma).unwrap()),
                Some(Tensor::new([lay.channels], gbeta).unwrap()),
            ]
        }),
    );
    Ok((y, mean, var))
}

/// Normalization with fixed (running) statistics.
pub fn batchnorm_eval<'t, T: Real>(
    x: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: f64,
) -> Result<Var<'t, T>> {
    let xv = x.value();
    let lay = Layout::of("batchnorm", xv.shape())?;
    check_affine("batchnorm", lay.channels, &gamma.value(), &beta.value())?;
    check_affine("batchnorm", lay.channels, running_mean, running_var)?;
    let istd: Vec<f64> = running_var
        .data()
        .iter()
        .map(|v| 1.0 / (v.as_f64() + eps).sqrt())
        .collect();
    let mean: Vec<f64> = running_mean.data().iter().map(|v| v.as_f64()).collect();
    let (xd, gv, bv) = (xv.data(), gamma.value(), beta.value());
    let mut out = vec![T::zero(); xd.len()];
    for c in 0..lay.channels {
        let (g, b) = (gv.data()[c].as_f64(), bv.data()[c].as_f64());
        for r in lay.rows(c) {
            for i in r {
                out[i] = T::of_f64(g * (xd[i].as_f64() - mean[c]) * istd[c] + b);
            }
        }
    }
    let out = Tensor::new(xv.shape().to_vec(), out)?;
    Ok(x.tape().record(
        "batchnorm_eval",
        &[x, gamma, beta],
        out,
        Box::new(move |bw| {
            let lay = Layout::of("batchnorm", bw.inputs[0].shape()).unwrap();
            let (xd, gd, g) = (bw.inputs[0].data(), bw.inputs[1].data(), bw.grad.data());
            let mut gx = vec![T::zero(); xd.len()];
            let mut ggamma = Vec::with_capacity(lay.channels);
            let mut gbeta = Vec::with_capacity(lay.channels);
            for c in 0..lay.channels {
                let (mut sum_g, mut sum_gx) = (0.0f64, 0.0f64);
                let k = gd[c].as_f64() * istd[c];
                for r in lay.rows(c) {
                    for i in r {
                        let gi = g[i].as_f64();
                        sum_g += gi;
                        sum_gx += gi * (xd[i].as_f64() - mean[c]) * istd[c];
                        gx[i] = T::of_f64(gi * k);
                    }
                }
                ggamma.push(T::of_f64(sum_gx));
                gbeta.push(T::of_f64(sum_g));
            }
            vec![
                Some(Tensor::new(bw.inputs[0].shape().to_vec(), gx).unwrap()),
                Some(Tensor::new([lay.channels], ggamma).unwrap()),
                Some(Tensor::new([lay.channels], gbeta).unwrap()),
            ]
        }),
    ))
}

/// Batch-norm layer with learned affine and running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new<T: Real>(params: &mut ParamSet<T>, name: &str, channels: usize) -> Self {
        let c = [channels];
        BatchNorm {
            gamma: params.add(format!("{name}.gamma"), Tensor::full(c, T::one()), ParamKind::Trainable),
            beta: params.add(format!("{name}.beta"), Tensor::zeros(c), ParamKind::Trainable),
            running_mean: params.add(format!("{name}.running_mean"), Tensor::zeros(c), ParamKind::Buffer),
            running_var: params.add(format!("{name}.running_var"), Tensor::full(c, T::one()), ParamKind::Buffer),
            channels,
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn param_count(channels: usize) -> usize {
        2 * channels
    }

    pub fn forward<'t, T: Real>(&self, cx: &mut Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let (gamma, beta) = (cx.param(self.gamma), cx.param(self.beta));
        match cx.mode() {
            Mode::Train => {
                let (y, mean, var) = batchnorm_train(x, gamma, beta, self.eps)?;
                let m = self.momentum;
                let blend = |old: &Tensor<T>, new: &[f64]| {
                    Tensor::from_fn([self.channels], |c| {
                        T::of_f64((1.0 - m) * old.data()[c].as_f64() + m * new[c])
                    })
                };
                let rm = blend(cx.buffer(self.running_mean), &mean);
                let rv = blend(cx.buffer(self.running_var), &var);
                cx.push_update(self.running_mean, rm);
                cx.push_update(self.running_var, rv);
                Ok(y)
            }
            Mode::Eval => {
                let (rm, rv) = (cx.buffer(self.running_mean), cx.buffer(self.running_var));
                batchnorm_eval(x, gamma, beta, rm, rv, self.eps)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn constant_channel_maps_to_beta() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn([2, 2, 3], |i| if (i / 3) % 2 == 0 { 4.0 } else { -1.5 }));
        let gamma = tape.leaf(Tensor::new([2], vec![2.0, 3.0]).unwrap());
        let beta = tape.leaf(Tensor::new([2], vec![0.25, -0.75]).unwrap());
        let (y, mean, var) = batchnorm_train(x, gamma, beta, BN_EPS).unwrap();
        assert_eq!(mean, vec![4.0, -1.5]);
        assert_eq!(var, vec![0.0, 0.0]);
        for (i, &v) in y.value().data().iter().enumerate() {
            assert_eq!(v, if (i / 3) % 2 == 0 { 0.25 } else { -0.75 });
        }
    }

    #[test]
    fn eval_with_unit_stats() {
        let tape = Tape::new();
        let xs = Tensor::from_fn([1, 2, 4], |i| i as f64 - 3.0);
        let x = tape.leaf(xs.clone());
        let (gamma, beta) = (tape.leaf(Tensor::full([2], 1.0)), tape.leaf(Tensor::zeros([2])));
        let y = batchnorm_eval(x, gamma, beta, &Tensor::zeros([2]), &Tensor::full([2], 1.0), BN_EPS).unwrap();
        let k = 1.0 / (1.0 + BN_EPS).sqrt();
        for (a, b) in y.value().data().iter().zip(xs.data()) {
            assert!((a - b * k).abs() < 1e-15);
        }
    }

    #[test]
    fn train_output_has_zero_channel_mean() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn([3, 2, 5], |i| ((i * 31) % 11) as f64 * 0.3 + 1.0));
        let (gamma, beta) = (tape.leaf(Tensor::full([2], 1.0)), tape.leaf(Tensor::zeros([2])));
        let (y, _, _) = batchnorm_train(x, gamma, beta, BN_EPS).unwrap();
        let y = y.value();
        for c in 0..2 {
            let mean: f64 = (0..3).flat_map(|b| (0..5).map(move |i| (b * 2 + c) * 5 + i)).map(|i| y.data()[i]).sum::<f64>() / 15.0;
            assert!(mean.abs() < 1e-6);
        }
    }

    #[test]
    fn single_value_per_channel_is_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::<f64>::zeros([1, 2, 1]));
        let (gamma, beta) = (tape.leaf(Tensor::full([2], 1.0)), tape.leaf(Tensor::zeros([2])));
        assert!(matches!(batchnorm_train(x, gamma, beta, BN_EPS), Err(Error::Contract { .. })));
    }

    #[test]
    fn layer_updates_running_stats_in_train_mode_only() {
        let mut params = ParamSet::<f64>::new();
        let bn = BatchNorm::new(&mut params, "bn", 1);
        let x = Tensor::new([1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let tape = Tape::new();
        let mut cx = Ctx::new(&tape, &params, Mode::Train);
        let xv = tape.constant(x.clone());
        bn.forward(&mut cx, xv).unwrap();
        let updates = cx.into_updates();
        params.apply_updates(updates);
        assert!((params.value(bn.running_mean).item() - 0.25).abs() < 1e-15);
        assert!((params.value(bn.running_var).item() - (0.9 + 0.1 * 1.25)).abs() < 1e-15);

        let before = params.clone();
        let tape = Tape::new();
        let mut cx = Ctx::new(&tape, &params, Mode::Eval);
        let xv = tape.constant(x);
        bn.forward(&mut cx, xv).unwrap();
        assert!(cx.into_updates().is_empty());
        assert_eq!(params, before);
    }
}
