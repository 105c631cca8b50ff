//! Learnable layers, loss and optimizer.

mod activation;
mod adam;
mod checkpoint;
mod conv;
mod linear;
mod loss;
mod norm;
mod params;

pub use activation::{leaky_relu, relu};
pub use adam::{AdamConfig, AdamSlot, AdamState};
pub use checkpoint::{Checkpoint, StoredTensor, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use conv::{conv3d, Conv3d};
pub use linear::{pointwise_mlp, PointwiseLinear};
pub use loss::cross_entropy;
pub use norm::{batchnorm_eval, batchnorm_train, BatchNorm, BN_EPS, BN_MOMENTUM};
pub use params::{Ctx, Mode, Param, ParamId, ParamKind, ParamSet};

use rand::Rng;

use crate::autodiff::Var;
use crate::error::Result;
use crate::tensor::Real;

/// 3×3×3 (or 1×1×1) convolution, 3D batch norm, leaky ReLU.
#[derive(Debug, Clone)]
pub struct ConvBnAct {
    pub conv: Conv3d,
    pub norm: BatchNorm,
    pub slope: f64,
}

impl ConvBnAct {
    pub fn new<T: Real, R: Rng>(
        params: &mut ParamSet<T>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        slope: f64,
    ) -> Result<Self> {
        Ok(ConvBnAct {
            conv: Conv3d::new(params, rng, &format!("{name}.conv"), cin, cout, 3)?,
            norm: BatchNorm::new(params, &format!("{name}.bn"), cout),
            slope,
        })
    }

    pub fn param_count(cin: usize, cout: usize) -> usize {
        Conv3d::param_count(cin, cout, 3) + BatchNorm::param_count(cout)
    }

    pub fn forward<'t, T: Real>(&self, cx: &mut Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = self.conv.forward(cx, x)?;
        let y = self.norm.forward(cx, y)?;
        leaky_relu(y, self.slope)
    }
}

/// Shared MLP: pointwise linear map, 1D batch norm, ReLU.
#[derive(Debug, Clone)]
pub struct SharedMlp {
    pub linear: PointwiseLinear,
    pub norm: BatchNorm,
}

impl SharedMlp {
    pub fn new<T: Real, R: Rng>(params: &mut ParamSet<T>, rng: &mut R, name: &str, cin: usize, cout: usize) -> Result<Self> {
        Ok(SharedMlp {
            linear: PointwiseLinear::new(params, rng, &format!("{name}.linear"), cin, cout)?,
            norm: BatchNorm::new(params, &format!("{name}.bn"), cout),
        })
    }

    pub fn param_count(cin: usize, cout: usize) -> usize {
        PointwiseLinear::param_count(cin, cout) + BatchNorm::param_count(cout)
    }

    pub fn forward<'t, T: Real>(&self, cx: &mut Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = self.linear.forward(cx, x)?;
        let y = self.norm.forward(cx, y)?;
        relu(y)
    }
}
