//! Per-point linear map (a kernel-1 one-dimensional convolution).

use rand::Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::params::{fan_in_uniform, Ctx, ParamId, ParamKind, ParamSet};
use crate::tensor::{Real, Tensor};

/// `out[b, j, i] = Σ_c W[j, c]·x[b, c, i] + bias[j]` for `x: [B × Cin × N]`.
pub fn pointwise_mlp<'t, T: Real>(x: Var<'t, T>, weight: Var<'t, T>, bias: Var<'t, T>) -> Result<Var<'t, T>> {
    let (xv, wv, bv) = (x.value(), weight.value(), bias.value());
    xv.expect_rank("pointwise_mlp", 3)?;
    wv.expect_rank("pointwise_mlp", 2)?;
    let (batch, cin, n) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
    let cout = wv.shape()[0];
    if wv.shape()[1] != cin || bv.shape() != [cout] {
        return Err(Error::ShapeMismatch {
            op: "pointwise_mlp",
            left: xv.shape().to_vec(),
            right: wv.shape().to_vec(),
        });
    }
    let (xd, wd) = (xv.data(), wv.data());
    let mut out = vec![T::zero(); batch * cout * n];
    for b in 0..batch {
        for j in 0..cout {
            let row = &mut out[(b * cout + j) * n..][..n];
            row.iter_mut().for_each(|v| *v = bv.data()[j]);
            for c in 0..cin {
                let a = wd[j * cin + c];
                for (o, &s) in row.iter_mut().zip(&xd[(b * cin + c) * n..][..n]) {
                    *o = *o + a * s;
                }
            }
        }
    }
    let out = Tensor::new([batch, cout, n], out)?;
    Ok(x.tape().record(
        "pointwise_mlp",
        &[x, weight, bias],
        out,
        Box::new(move |bw| {
            let (xd, wd, g) = (bw.inputs[0].data(), bw.inputs[1].data(), bw.grad.data());
            let mut gx = vec![T::zero(); xd.len()];
            let mut gw = vec![T::zero(); wd.len()];
            let mut gb = vec![T::zero(); cout];
            for b in 0..batch {
                for j in 0..cout {
                    let go = &g[(b * cout + j) * n..][..n];
                    gb[j] = gb[j] + go.iter().fold(T::zero(), |s, &v| s + v);
                    for c in 0..cin {
                        let xs = &xd[(b * cin + c) * n..][..n];
                        let a = wd[j * cin + c];
                        let mut acc = T::zero();
                        for ((gxi, &gi), &xi) in gx[(b * cin + c) * n..][..n].iter_mut().zip(go).zip(xs) {
                            *gxi = *gxi + a * gi;
                            acc = acc + gi * xi;
                        }
                        gw[j * cin + c] = gw[j * cin + c] + acc;
                    }
                }
            }
            vec![
                Some(Tensor::new([batch, cin, n], gx).unwrap()),
                Some(Tensor::new([cout, cin], gw).unwrap()),
                Some(Tensor::new([cout], gb).unwrap()),
            ]
        }),
    ))
}

#[derive(Debug, Clone)]
pub struct PointwiseLinear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub cin: usize,
    pub cout: usize,
}

impl PointwiseLinear {
    pub fn new<T: Real, R: Rng>(params: &mut ParamSet<T>, rng: &mut R, name: &str, cin: usize, cout: usize) -> Result<Self> {
        if cin == 0 || cout == 0 {
            return Err(Error::Config(format!("{name}: channels must be positive ({cin}->{cout})")));
        }
        let weight = params.add(
            format!("{name}.weight"),
            fan_in_uniform(rng, &[cout, cin], cin),
            ParamKind::Trainable,
        );
        let bias = params.add(format!("{name}.bias"), Tensor::zeros([cout]), ParamKind::Trainable);
        Ok(PointwiseLinear { weight, bias, cin, cout })
    }

    pub fn param_count(cin: usize, cout: usize) -> usize {
        cout * cin + cout
    }

    pub fn forward<'t, T: Real>(&self, cx: &mut Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let (w, b) = (cx.param(self.weight), cx.param(self.bias));
        pointwise_mlp(x, w, b)
    }
}
