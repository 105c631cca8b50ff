//! Direct 3D convolution, stride 1, "same" zero padding (`k / 2`).
//!
//! Cross-correlation orientation: `out[o] = Σ w[k]·in[o + k − pad] + bias`.
//! Kernels work row by row along the innermost axis so the hot loop is a
//! contiguous multiply-add.

use rand::Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::params::{fan_in_uniform, Ctx, ParamId, ParamKind, ParamSet};
use crate::tensor::{Real, Tensor};

/// One contiguous run shared by an output row and its shifted input row.
#[derive(Clone, Copy)]
struct Run {
    out: usize,
    inp: usize,
    len: usize,
}

fn valid(size: usize, offset: usize, pad: usize) -> (usize, usize) {
    // Output positions o with 0 <= o + offset - pad < size.
    let lo = pad.saturating_sub(offset);
    let hi = (size + pad).saturating_sub(offset).min(size);
    (lo, hi)
}

/// Runs for one kernel tap `(kd, kh, kw)` over a `[D × H × W]` volume.
fn runs(dims: [usize; 3], tap: [usize; 3], pad: usize) -> Vec<Run> {
    let [d, h, w] = dims;
    let (d0, d1) = valid(d, tap[0], pad);
    let (h0, h1) = valid(h, tap[1], pad);
    let (w0, w1) = valid(w, tap[2], pad);
    if d0 >= d1 || h0 >= h1 || w0 >= w1 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity((d1 - d0) * (h1 - h0));
    for od in d0..d1 {
        let id = od + tap[0] - pad;
        for oh in h0..h1 {
            let ih = oh + tap[1] - pad;
            out.push(Run {
                out: (od * h + oh) * w + w0,
                inp: (id * h + ih) * w + w0 + tap[2] - pad,
                len: w1 - w0,
            });
        }
    }
    out
}

struct Geometry {
    batch: usize,
    cin: usize,
    cout: usize,
    k: usize,
    dims: [usize; 3],
}

impl Geometry {
    fn volume(&self) -> usize {
        self.dims.iter().product()
    }

    fn taps(&self) -> Vec<([usize; 3], Vec<Run>)> {
        let k = self.k;
        (0..k * k * k)
            .map(|t| {
                let tap = [t / (k * k), (t / k) % k, t % k];
                (tap, runs(self.dims, tap, k / 2))
            })
            .collect()
    }
}

fn geometry(x: &[usize], w: &[usize], b: &[usize]) -> Result<Geometry> {
    if x.len() != 5 || w.len() != 5 {
        return Err(Error::contract(
            "conv3d",
            format!("input {x:?} / weight {w:?} must both be rank 5"),
        ));
    }
    let k = w[2];
    if !(k == 1 || k == 3) || w[3] != k || w[4] != k {
        return Err(Error::contract("conv3d", format!("kernel {w:?} must be 1x1x1 or 3x3x3")));
    }
    if w[1] != x[1] {
        return Err(Error::ShapeMismatch {
            op: "conv3d",
            left: x.to_vec(),
            right: w.to_vec(),
        });
    }
    if b != [w[0]] {
        return Err(Error::ShapeMismatch {
            op: "conv3d",
            left: w.to_vec(),
            right: b.to_vec(),
        });
    }
    Ok(Geometry {
        batch: x[0],
        cin: x[1],
        cout: w[0],
        k,
        dims: [x[2], x[3], x[4]],
    })
}

#[inline]
fn axpy<T: Real>(dst: &mut [T], a: T, src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + a * s;
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn forward<T: Real>(g: &Geometry, x: &[T], w: &[T], bias: &[T]) -> Vec<T> {
    let vol = g.volume();
    let kk = g.k.pow(3);
    let taps = g.taps();
    let mut out = vec![T::zero(); g.batch * g.cout * vol];
    for b in 0..g.batch {
        for co in 0..g.cout {
            let plane = &mut out[(b * g.cout + co) * vol..][..vol];
            plane.iter_mut().for_each(|v| *v = bias[co]);
            for ci in 0..g.cin {
                let src = &x[(b * g.cin + ci) * vol..][..vol];
                let wk = &w[(co * g.cin + ci) * kk..][..kk];
                for (t, (_, runs)) in taps.iter().enumerate() {
                    let wv = wk[t];
                    for r in runs {
                        axpy(&mut plane[r.out..r.out + r.len], wv, &src[r.inp..r.inp + r.len]);
                    }
                }
            }
        }
    }
    out
}

fn backward<T: Real>(g: &Geometry, x: &[T], w: &[T], grad: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let vol = g.volume();
    let kk = g.k.pow(3);
    let taps = g.taps();
    let mut gx = vec![T::zero(); x.len()];
    let mut gw = vec![T::zero(); w.len()];
    let mut gb = vec![T::zero(); g.cout];
    for b in 0..g.batch {
        for co in 0..g.cout {
            let go = &grad[(b * g.cout + co) * vol..][..vol];
            gb[co] = gb[co] + T::of_f64(go.iter().map(|v| v.as_f64()).sum());
            for ci in 0..g.cin {
                let src = &x[(b * g.cin + ci) * vol..][..vol];
                let dst = &mut gx[(b * g.cin + ci) * vol..][..vol];
                let widx = (co * g.cin + ci) * kk;
                for (t, (_, runs)) in taps.iter().enumerate() {
                    let wv = w[widx + t];
                    let mut acc = T::zero();
                    for r in runs {
                        let gs = &go[r.out..r.out + r.len];
                        axpy(&mut dst[r.inp..r.inp + r.len], wv, gs);
                        acc = acc + dot(gs, &src[r.inp..r.inp + r.len]);
                    }
                    gw[widx + t] = gw[widx + t] + acc;
                }
            }
        }
    }
    (gx, gw, gb)
}

/// `[B × Cin × D × H × W] → [B × Cout × D × H × W]` with weights
/// `[Cout × Cin × k × k × k]`, `k ∈ {1, 3}`, and bias `[Cout]`.
pub fn conv3d<'t, T: Real>(x: Var<'t, T>, weight: Var<'t, T>, bias: Var<'t, T>) -> Result<Var<'t, T>> {
    let (xv, wv, bv) = (x.value(), weight.value(), bias.value());
    let geo = geometry(xv.shape(), wv.shape(), bv.shape())?;
    let mut shape = xv.shape().to_vec();
    shape[1] = geo.cout;
    let out = Tensor::new(shape, forward(&geo, xv.data(), wv.data(), bv.data()))?;
    Ok(x.tape().record(
        "conv3d",
        &[x, weight, bias],
        out,
        Box::new(move |bw| {
            let (x, w, b) = (bw.inputs[0], bw.inputs[1], bw.inputs[2]);
            let (gx, gw, gb) = backward(&geo, x.data(), w.data(), bw.grad.data());
            vec![
                Some(Tensor::new(x.shape().to_vec(), gx).unwrap()),
                Some(Tensor::new(w.shape().to_vec(), gw).unwrap()),
                Some(Tensor::new(b.shape().to_vec(), gb).unwrap()),
            ]
        }),
    ))
}

/// Learnable 3D convolution: weights and bias registered in a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Conv3d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
}

impl Conv3d {
    pub fn new<T: Real, R: Rng>(
        params: &mut ParamSet<T>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
    ) -> Result<Self> {
        if !(kernel == 1 || kernel == 3) || cin == 0 || cout == 0 {
            return Err(Error::Config(format!(
                "{name}: conv3d needs k in {{1,3}} and positive channels (k={kernel}, {cin}->{cout})"
            )));
        }
        let shape = [cout, cin, kernel, kernel, kernel];
        let weight = params.add(
            format!("{name}.weight"),
            fan_in_uniform(rng, &shape, cin * kernel.pow(3)),
            ParamKind::Trainable,
        );
        let bias = params.add(format!("{name}.bias"), Tensor::zeros([cout]), ParamKind::Trainable);
        Ok(Conv3d {
            weight,
            bias,
            cin,
            cout,
            kernel,
        })
    }

    pub fn param_count(cin: usize, cout: usize, kernel: usize) -> usize {
        cout * cin * kernel.pow(3) + cout
    }

    pub fn forward<'t, T: Real>(&self, cx: &mut Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let (w, b) = (cx.param(self.weight), cx.param(self.bias));
        conv3d(x, w, b)
    }
}
