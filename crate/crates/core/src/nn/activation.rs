use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Leaky ReLU: `x` for `x ≥ 0`, `slope·x` otherwise. The derivative at zero is 1.
/// `slope = 0` is plain ReLU.
pub fn leaky_relu<'t, T: Real>(x: Var<'t, T>, slope: f64) -> Result<Var<'t, T>> {
    if !(0.0..1.0).contains(&slope) {
        return Err(Error::contract("leaky_relu", format!("slope {slope} outside [0, 1)")));
    }
    let s = T::of_f64(slope);
    let out = x.value().map(|v| if v >= T::zero() { v } else { s * v });
    Ok(x.tape().record(
        if slope == 0.0 { "relu" } else { "leaky_relu" },
        &[x],
        out,
        Box::new(move |bw| {
            let inp = bw.inputs[0].data();
            let g = crate::tensor::Tensor::from_fn(bw.grad.shape().to_vec(), |i| {
                if inp[i] >= T::zero() {
                    bw.grad.data()[i]
                } else {
                    s * bw.grad.data()[i]
                }
            });
            vec![Some(g)]
        }),
    ))
}

pub fn relu<'t, T: Real>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    leaky_relu(x, 0.0)
}
