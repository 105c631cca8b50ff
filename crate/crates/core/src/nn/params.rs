use rand::Rng;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Learned by the optimizer.
    Trainable,
    /// Running statistic, updated by forward passes in train mode.
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub kind: ParamKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Named model state in registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, kind: ParamKind) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param { name, value, kind });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Scalar count of trainable parameters.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::Trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    kind: p.kind,
                })
                .collect(),
        }
    }

    /// Replaces the value of `id`, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "ParamSet::set",
                left: p.value.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn apply_updates(&mut self, updates: Vec<(ParamId, Tensor<T>)>) {
        for (id, value) in updates {
            self.params[id.0].value = value;
        }
    }
}

/// Uniform in `±√(1/fan_in)`, drawn in f64 so every dtype sees the same values.
pub(crate) fn fan_in_uniform<T: Real, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = (1.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| T::of_f64(rng.random_range(-bound..bound)))
}

/// Per-forward state: the tape, lazily bound parameter leaves and pending
/// running-statistic updates.
pub struct Ctx<'t, 'p, T> {
    tape: &'t Tape<T>,
    params: &'p ParamSet<T>,
    leaves: Vec<Option<Var<'t, T>>>,
    mode: Mode,
    updates: Vec<(ParamId, Tensor<T>)>,
}

impl<'t, 'p, T: Real> Ctx<'t, 'p, T> {
    pub fn new(tape: &'t Tape<T>, params: &'p ParamSet<T>, mode: Mode) -> Self {
        Ctx {
            tape,
            params,
            leaves: vec![None; params.len()],
            mode,
            updates: Vec::new(),
        }
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn params(&self) -> &'p ParamSet<T> {
        self.params
    }

    /// Tape leaf for a trainable parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var<'t, T> {
        if let Some(v) = self.leaves[id.0] {
            return v;
        }
        let p = self.params.get(id);
        debug_assert_eq!(p.kind, ParamKind::Trainable, "{} is a buffer", p.name);
        let v = self.tape.leaf(p.value.clone());
        self.leaves[id.0] = Some(v);
        v
    }

    pub fn buffer(&self, id: ParamId) -> &'p Tensor<T> {
        self.params.value(id)
    }

    pub fn push_update(&mut self, id: ParamId, value: Tensor<T>) {
        self.updates.push((id, value));
    }

    /// Gradient for every parameter slot: `None` for buffers, zeros for
    /// trainable parameters the loss never touched.
    pub fn param_grads(&self, grads: &mut Gradients<T>) -> Vec<Option<Tensor<T>>> {
        self.params
            .iter()
            .map(|(id, p)| match (p.kind, self.leaves[id.0]) {
                (ParamKind::Buffer, _) => None,
                (ParamKind::Trainable, Some(v)) => Some(grads.take(v)),
                (ParamKind::Trainable, None) => Some(Tensor::zeros_like(&p.value)),
            })
            .collect()
    }

    pub fn into_updates(self) -> Vec<(ParamId, Tensor<T>)> {
        self.updates
    }
}
