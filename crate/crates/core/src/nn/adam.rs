//! Bias-corrected Adam without weight decay.

use crate::error::{Error, Result};
use crate::nn::params::{ParamId, ParamKind, ParamSet};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers for every trainable parameter, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub slots: Vec<AdamSlot<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamSlot<T> {
    pub param: ParamId,
    pub first: Tensor<T>,
    pub second: Tensor<T>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamSet<T>, config: AdamConfig) -> Self {
        let slots = params
            .iter()
            .filter(|(_, p)| p.kind == ParamKind::Trainable)
            .map(|(id, p)| AdamSlot {
                param: id,
                first: Tensor::zeros_like(&p.value),
                second: Tensor::zeros_like(&p.value),
            })
            .collect();
        AdamState {
            config,
            step: 0,
            slots,
        }
    }

    /// One update from per-slot gradients (indexed like the parameter set;
    /// buffer slots are ignored). Nothing changes when any gradient is
    /// non-finite or mis-shaped.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Option<Tensor<T>>]) -> Result<()> {
        for slot in &self.slots {
            let g = grads
                .get(slot.param.index())
                .and_then(Option::as_ref)
                .ok_or_else(|| Error::Optimizer(format!("missing gradient for {}", params.get(slot.param).name)))?;
            if g.shape() != slot.first.shape() {
                return Err(Error::Optimizer(format!(
                    "gradient shape {:?} for {} expected {:?}",
                    g.shape(),
                    params.get(slot.param).name,
                    slot.first.shape()
                )));
            }
            if !g.all_finite() {
                return Err(Error::Optimizer(format!(
                    "non-finite gradient for {}",
                    params.get(slot.param).name
                )));
            }
        }

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for slot in &mut self.slots {
            let g = grads[slot.param.index()].as_ref().unwrap();
            let p = params.value_mut(slot.param);
            let (m, v) = (slot.first.data_mut(), slot.second.data_mut());
            for (i, (pi, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gi = gi.as_f64();
                let mi = beta1 * m[i].as_f64() + (1.0 - beta1) * gi;
                let vi = beta2 * v[i].as_f64() + (1.0 - beta2) * gi * gi;
                m[i] = T::of_f64(mi);
                v[i] = T::of_f64(vi);
                let delta = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
                *pi = T::of_f64(pi.as_f64() - delta);
            }
        }
        Ok(())
    }
}
