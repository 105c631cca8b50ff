//! Reverse-mode differentiation on a dynamic tape.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its value, its input node ids and a backward rule. Nodes are appended in
//! execution order, so the node list is always a valid topological order and
//! the reverse sweep in [`Tape::backward`] only has to walk it backwards.
//!
//! The tape is rebuilt for every forward pass. Leaves created with
//! [`Tape::leaf`] participate in differentiation; [`Tape::constant`] nodes do
//! not, and neither do nodes whose inputs are all constants.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// What a backward rule sees: the input values, the output value and the
/// gradient of the loss with respect to the output.
pub struct Backward<'a, T> {
    pub inputs: Vec<&'a Tensor<T>>,
    pub output: &'a Tensor<T>,
    pub grad: &'a Tensor<T>,
}

/// Maps an output gradient to one optional gradient per input, in input order.
pub type BackwardRule<T> = Box<dyn Fn(&Backward<'_, T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    op: &'static str,
    inputs: Vec<usize>,
    value: Rc<Tensor<T>>,
    requires_grad: bool,
    rule: Option<BackwardRule<T>>,
}

pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node on a tape.
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for Var<'_, T> {}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let nodes = self.tape.nodes.borrow();
        let node = &nodes[self.id];
        write!(f, "Var#{}({}, {:?})", self.id, node.op, node.value.shape())
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        Rc::clone(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Op names in recording order.
    pub fn ops(&self) -> Vec<&'static str> {
        self.nodes.borrow().iter().map(|n| n.op).collect()
    }

    /// Input ids of every node, in recording order.
    pub fn edges(&self) -> Vec<Vec<usize>> {
        self.nodes.borrow().iter().map(|n| n.inputs.clone()).collect()
    }

    /// Differentiable leaf.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push("leaf", Vec::new(), value, true, None)
    }

    /// Non-differentiable leaf.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push("const", Vec::new(), value, false, None)
    }

    /// Records a derived node. The node takes part in differentiation when
    /// any input does.
    pub fn record<'t>(
        &'t self,
        op: &'static str,
        inputs: &[Var<'t, T>],
        value: Tensor<T>,
        rule: BackwardRule<T>,
    ) -> Var<'t, T> {
        let nodes = self.nodes.borrow();
        let requires_grad = inputs.iter().any(|v| nodes[v.id].requires_grad);
        drop(nodes);
        debug_assert!(inputs.iter().all(|v| std::ptr::eq(v.tape, self)));
        let ids = inputs.iter().map(|v| v.id).collect();
        self.push(op, ids, value, requires_grad, Some(rule))
    }

    fn push(
        &self,
        op: &'static str,
        inputs: Vec<usize>,
        value: Tensor<T>,
        requires_grad: bool,
        rule: Option<BackwardRule<T>>,
    ) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            op,
            inputs,
            value: Rc::new(value),
            requires_grad,
            rule,
        });
        Var { tape: self, id }
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        if !std::ptr::eq(loss.tape, self) || loss.id >= nodes.len() {
            return Err(Error::UnknownOutput(loss.id));
        }
        let root = &nodes[loss.id];
        if !root.value.is_scalar() {
            return Err(Error::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", root.value.shape()),
            ));
        }

        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(root.value.shape().to_vec(), T::one()));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let (Some(rule), Some(grad)) = (&node.rule, grads[id].as_ref()) else {
                continue;
            };
            let inputs = node.inputs.iter().map(|&i| &*nodes[i].value).collect();
            let contribs = rule(&Backward {
                inputs,
                output: &node.value,
                grad,
            });
            debug_assert_eq!(contribs.len(), node.inputs.len(), "rule arity for {}", node.op);
            for (&input, contrib) in node.inputs.iter().zip(contribs) {
                let Some(contrib) = contrib else { continue };
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }

        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Result of a backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `var`; zeros when the loss does not depend on it.
    pub fn get(&self, var: Var<'_, T>) -> Tensor<T> {
        match self.grads.get(var.id).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[var.id].clone()),
        }
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Tensor<T> {
        match self.grads.get_mut(var.id).and_then(Option::take) {
            Some(g) => g,
            None => Tensor::zeros(self.shapes[var.id].clone()),
        }
    }
}

fn same_shape<T: Real>(op: &'static str, a: &Var<'_, T>, b: &Var<'_, T>) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(Error::ShapeMismatch {
            op,
            left: sa,
            right: sb,
        });
    }
    Ok(())
}

/// `a + b` for identical shapes.
pub fn add<'t, T: Real>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    same_shape("add", &a, &b)?;
    let (va, vb) = (a.value(), b.value());
    let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
    let out = Tensor::new(va.shape().to_vec(), data)?;
    Ok(a.tape.record(
        "add",
        &[a, b],
        out,
        Box::new(|bw| vec![Some(bw.grad.clone()), Some(bw.grad.clone())]),
    ))
}

/// Elementwise product for identical shapes.
pub fn mul<'t, T: Real>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    same_shape("mul", &a, &b)?;
    let (va, vb) = (a.value(), b.value());
    let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
    let out = Tensor::new(va.shape().to_vec(), data)?;
    Ok(a.tape.record(
        "mul",
        &[a, b],
        out,
        Box::new(|bw| {
            let g = bw.grad.data();
            let ga = Tensor::from_fn(bw.grad.shape().to_vec(), |i| g[i] * bw.inputs[1].data()[i]);
            let gb = Tensor::from_fn(bw.grad.shape().to_vec(), |i| g[i] * bw.inputs[0].data()[i]);
            vec![Some(ga), Some(gb)]
        }),
    ))
}

pub fn scale<'t, T: Real>(a: Var<'t, T>, factor: f64) -> Var<'t, T> {
    let c = T::of_f64(factor);
    let out = a.value().map(|v| v * c);
    a.tape.record(
        "scale",
        &[a],
        out,
        Box::new(move |bw| vec![Some(bw.grad.map(|g| g * c))]),
    )
}

/// Sum of all elements, accumulated in index order.
pub fn sum<'t, T: Real>(a: Var<'t, T>) -> Var<'t, T> {
    let total: f64 = a.value().data().iter().map(|v| v.as_f64()).sum();
    a.tape.record(
        "sum",
        &[a],
        Tensor::scalar(T::of_f64(total)),
        Box::new(|bw| {
            let g = bw.grad.item();
            vec![Some(Tensor::full(bw.inputs[0].shape().to_vec(), g))]
        }),
    )
}

/// Concatenates `[B × Cᵢ × …]` tensors along the channel axis.
pub fn concat_channels<'t, T: Real>(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::contract("concat_channels", "no inputs"))?;
    let base = first.shape();
    if base.len() < 2 {
        return Err(Error::contract("concat_channels", format!("rank < 2: {base:?}")));
    }
    let (batch, inner) = (base[0], base[2..].iter().product::<usize>());
    let mut channels = Vec::with_capacity(parts.len());
    for p in parts {
        let s = p.shape();
        if s.len() != base.len() || s[0] != batch || s[2..] != base[2..] {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                left: base.clone(),
                right: s,
            });
        }
        channels.push(s[1]);
    }
    let total: usize = channels.iter().sum();
    let mut data = Vec::with_capacity(batch * total * inner);
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    for b in 0..batch {
        for (v, &c) in values.iter().zip(&channels) {
            data.extend_from_slice(&v.data()[b * c * inner..(b + 1) * c * inner]);
        }
    }
    let mut shape = base.clone();
    shape[1] = total;
    let out = Tensor::new(shape, data)?;
    Ok(first.tape.record(
        "concat_channels",
        parts,
        out,
        Box::new(move |bw| {
            let g = bw.grad.data();
            let mut offset = 0;
            channels
                .iter()
                .zip(&bw.inputs)
                .map(|(&c, input)| {
                    let mut part = Vec::with_capacity(batch * c * inner);
                    for b in 0..batch {
                        let start = (b * total + offset) * inner;
                        part.extend_from_slice(&g[start..start + c * inner]);
                    }
                    offset += c;
                    Some(Tensor::new(input.shape().to_vec(), part).unwrap())
                })
                .collect()
        }),
    ))
}

/// Max over the point axis: `[B × C × N] → [B × C]`. The gradient goes to the
/// first maximal point.
pub fn max_over_points<'t, T: Real>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let v = x.value();
    v.expect_rank("max_over_points", 3)?;
    let (b, c, n) = (v.shape()[0], v.shape()[1], v.shape()[2]);
    let mut argmax = Vec::with_capacity(b * c);
    let mut data = Vec::with_capacity(b * c);
    for row in v.data().chunks_exact(n) {
        let (mut best, mut at) = (row[0], 0);
        for (i, &val) in row.iter().enumerate().skip(1) {
            if val > best {
                best = val;
                at = i;
            }
        }
        argmax.push(at);
        data.push(best);
    }
    let out = Tensor::new([b, c], data)?;
    Ok(x.tape.record(
        "max_over_points",
        &[x],
        out,
        Box::new(move |bw| {
            let mut g = Tensor::zeros([b, c, n]);
            let gd = g.data_mut();
            for (row, (&at, &go)) in argmax.iter().zip(bw.grad.data()).enumerate() {
                gd[row * n + at] = go;
            }
            vec![Some(g)]
        }),
    ))
}

/// Repeats `[B × C]` along a new point axis: `[B × C × N]`.
pub fn broadcast_points<'t, T: Real>(x: Var<'t, T>, n: usize) -> Result<Var<'t, T>> {
    let v = x.value();
    v.expect_rank("broadcast_points", 2)?;
    if n == 0 {
        return Err(Error::contract("broadcast_points", "n must be positive"));
    }
    let (b, c) = (v.shape()[0], v.shape()[1]);
    let mut data = Vec::with_capacity(b * c * n);
    for &val in v.data() {
        data.extend(std::iter::repeat_n(val, n));
    }
    let out = Tensor::new([b, c, n], data)?;
    Ok(x.tape.record(
        "broadcast_points",
        &[x],
        out,
        Box::new(move |bw| {
            let data = bw
                .grad
                .data()
                .chunks_exact(n)
                .map(|row| T::of_f64(row.iter().map(|v| v.as_f64()).sum()))
                .collect();
            vec![Some(Tensor::new([b, c], data).unwrap())]
        }),
    ))
}

/// Central-difference gradient of a scalar map, evaluated in f64.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor<f64>, h: f64) -> Result<Tensor<f64>>
where
    F: FnMut(&Tensor<f64>) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::contract("finite_diff_grad", format!("step {h} must be positive")));
    }
    let mut probe = x.clone();
    let mut grad = Tensor::zeros_like(x);
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::OracleFailure(format!(
                "non-finite evaluation at element {i}: f(x+h)={plus}, f(x-h)={minus}"
            )));
        }
        grad.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}
