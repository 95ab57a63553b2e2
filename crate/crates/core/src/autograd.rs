//! Tape-based reverse-mode automatic differentiation.
//!
//! A `Tape` records one forward pass as an ordered list of primitive
//! operations; construction order is the topological order, so a single
//! reverse sweep visits every node exactly once. Parameters live outside the
//! tape in a `ParamSet` and are spliced in as leaves; after `backward`,
//! `accumulate_param_grads` adds each leaf's gradient into its parameter slot.
//!
//! First-order only. Values are immutable once recorded.

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Named trainable tensor with a gradient accumulator of identical shape.
#[derive(Debug, Clone)]
pub struct Param<T: Scalar> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Ordered, uniquely named collection of parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<T: Scalar> {
    entries: Vec<Param<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.entries.iter().any(|p| p.name == name) {
            return Err(Error::Config(format!("duplicate parameter name '{name}'")));
        }
        let grad = Tensor::zeros(value.shape().to_vec()).expect("grad shape");
        self.entries.push(Param { name, value, grad });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].grad
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.entries.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Total scalar element count across all parameters.
    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.grad = Tensor::zeros(p.value.shape().to_vec()).expect("grad shape");
        }
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        if value.shape() != self.entries[id.0].value.shape() {
            return Err(Error::shape(format!(
                "parameter '{}' has shape {:?}, replacement has {:?}",
                self.entries[id.0].name,
                self.entries[id.0].value.shape(),
                value.shape()
            )));
        }
        self.entries[id.0].value = value;
        Ok(())
    }

    pub(crate) fn value_data_mut(&mut self, id: ParamId) -> &mut [T] {
        self.entries[id.0].value.data_mut()
    }

    pub(crate) fn add_to_grad(&mut self, id: ParamId, delta: &Tensor<T>) {
        let g = self.entries[id.0].grad.data_mut();
        for (slot, &d) in g.iter_mut().zip(delta.data()) {
            *slot += d;
        }
    }
}

#[derive(Debug, Clone)]
enum Op<T: Scalar> {
    Leaf,
    Add(ValueId, ValueId),
    Mul(ValueId, ValueId),
    Scale(ValueId, T),
    AddBias(ValueId, ValueId),
    Matmul(ValueId, ValueId),
    Transpose(ValueId, usize, usize),
    Reshape(ValueId),
    Softmax(ValueId, usize),
    LayerNorm {
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        eps: f64,
    },
    Gelu(ValueId),
    AvgPool2d {
        x: ValueId,
        r: usize,
    },
    AdaptiveAvgPool2d(ValueId),
    BilinearResize(ValueId),
    Conv1x1 {
        x: ValueId,
        w: ValueId,
        b: Option<ValueId>,
    },
    DwConv3x3 {
        x: ValueId,
        w: ValueId,
        b: Option<ValueId>,
    },
    Concat {
        xs: Vec<ValueId>,
        axis: usize,
    },
    MeanAll(ValueId),
    SumAll(ValueId),
    CrossEntropy {
        logits: ValueId,
        labels: Vec<u32>,
    },
}

#[derive(Debug, Clone)]
struct Node<T: Scalar> {
    op: Op<T>,
    value: Tensor<T>,
    param: Option<ParamId>,
}

/// One recorded forward pass, ready for a single reverse sweep.
#[derive(Debug, Default)]
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, param: Option<ParamId>) -> ValueId {
        self.nodes.push(Node { op, value, param });
        ValueId(self.nodes.len() - 1)
    }

    fn check(&self, id: ValueId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::State(format!(
                "value id {} is not on this tape",
                id.0
            )));
        }
        Ok(())
    }

    pub fn value(&self, id: ValueId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` call w.r.t. this node, if reached.
    pub fn grad(&self, id: ValueId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    // ── Leaves ────────────────────────────────────────────────────────

    /// Record a non-trainable input.
    pub fn input(&mut self, value: Tensor<T>) -> ValueId {
        self.push(Op::Leaf, value, None)
    }

    /// Splice a parameter's current value into the graph.
    pub fn param(&mut self, params: &ParamSet<T>, id: ParamId) -> ValueId {
        self.push(Op::Leaf, params.value(id).clone(), Some(id))
    }

    // ── Recorded operations ───────────────────────────────────────────

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check(a)?;
        self.check(b)?;
        let v = kernels::add(self.value(a), self.value(b))?;
        Ok(self.push(Op::Add(a, b), v, None))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check(a)?;
        self.check(b)?;
        let v = kernels::mul(self.value(a), self.value(b))?;
        Ok(self.push(Op::Mul(a, b), v, None))
    }

    pub fn scale(&mut self, a: ValueId, c: T) -> Result<ValueId> {
        self.check(a)?;
        let v = kernels::scale(self.value(a), c);
        Ok(self.push(Op::Scale(a, c), v, None))
    }

    pub fn add_bias(&mut self, x: ValueId, bias: ValueId) -> Result<ValueId> {
        self.check(x)?;
        self.check(bias)?;
        let v = kernels::add_bias(self.value(x), self.value(bias))?;
        Ok(self.push(Op::AddBias(x, bias), v, None))
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check(a)?;
        self.check(b)?;
        let v = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::Matmul(a, b), v, None))
    }

    pub fn transpose(&mut self, x: ValueId, ax_a: usize, ax_b: usize) -> Result<ValueId> {
        self.check(x)?;
        let v = kernels::transpose(self.value(x), ax_a, ax_b)?;
        Ok(self.push(Op::Transpose(x, ax_a, ax_b), v, None))
    }

    pub fn reshape(&mut self, x: ValueId, shape: Vec<usize>) -> Result<ValueId> {
        self.check(x)?;
        let v = self.value(x).reshape(shape)?;
        Ok(self.push(Op::Reshape(x), v, None))
    }

    pub fn softmax(&mut self, x: ValueId, axis: usize) -> Result<ValueId> {
        self.check(x)?;
        let v = kernels::softmax(self.value(x), axis)?;
        Ok(self.push(Op::Softmax(x, axis), v, None))
    }

    pub fn layer_norm(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        eps: f64,
    ) -> Result<ValueId> {
        self.check(x)?;
        self.check(gamma)?;
        self.check(beta)?;
        let v = kernels::layer_norm(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(
            Op::LayerNorm {
                x,
                gamma,
                beta,
                eps,
            },
            v,
            None,
        ))
    }

    pub fn gelu(&mut self, x: ValueId) -> Result<ValueId> {
        self.check(x)?;
        let v = kernels::gelu(self.value(x));
        Ok(self.push(Op::Gelu(x), v, None))
    }

    pub fn avg_pool2d(&mut self, x: ValueId, r: usize) -> Result<ValueId> {
        self.check(x)?;
        let v = kernels::avg_pool2d(self.value(x), r)?;
        Ok(self.push(Op::AvgPool2d { x, r }, v, None))
    }

    pub fn adaptive_avg_pool2d(&mut self, x: ValueId, oh: usize, ow: usize) -> Result<ValueId> {
        self.check(x)?;
        let v = kernels::adaptive_avg_pool2d(self.value(x), oh, ow)?;
        Ok(self.push(Op::AdaptiveAvgPool2d(x), v, None))
    }

    pub fn bilinear_resize(&mut self, x: ValueId, oh: usize, ow: usize) -> Result<ValueId> {
        self.check(x)?;
        let v = kernels::bilinear_resize(self.value(x), oh, ow)?;
        Ok(self.push(Op::BilinearResize(x), v, None))
    }

    pub fn conv1x1(&mut self, x: ValueId, w: ValueId, b: Option<ValueId>) -> Result<ValueId> {
        self.check(x)?;
        self.check(w)?;
        if let Some(b) = b {
            self.check(b)?;
        }
        let bias = b.map(|id| self.value(id).clone());
        let v = kernels::conv1x1(self.value(x), self.value(w), bias.as_ref())?;
        Ok(self.push(Op::Conv1x1 { x, w, b }, v, None))
    }

    pub fn dwconv3x3(&mut self, x: ValueId, w: ValueId, b: Option<ValueId>) -> Result<ValueId> {
        self.check(x)?;
        self.check(w)?;
        if let Some(b) = b {
            self.check(b)?;
        }
        let bias = b.map(|id| self.value(id).clone());
        let v = kernels::dwconv3x3(self.value(x), self.value(w), bias.as_ref())?;
        Ok(self.push(Op::DwConv3x3 { x, w, b }, v, None))
    }

    pub fn concat(&mut self, xs: &[ValueId], axis: usize) -> Result<ValueId> {
        for &x in xs {
            self.check(x)?;
        }
        let tensors: Vec<&Tensor<T>> = xs.iter().map(|&id| self.value(id)).collect();
        let v = kernels::concat(&tensors, axis)?;
        Ok(self.push(
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            v,
            None,
        ))
    }

    pub fn mean_all(&mut self, x: ValueId) -> Result<ValueId> {
        self.check(x)?;
        let v = Tensor::scalar(kernels::mean_all(self.value(x)));
        Ok(self.push(Op::MeanAll(x), v, None))
    }

    pub fn sum_all(&mut self, x: ValueId) -> Result<ValueId> {
        self.check(x)?;
        let v = Tensor::scalar(kernels::sum_all(self.value(x)));
        Ok(self.push(Op::SumAll(x), v, None))
    }

    /// Mean per-pixel cross-entropy of [B,K,H,W] logits against [B,H,W] labels.
    pub fn cross_entropy(&mut self, logits: ValueId, labels: Vec<u32>) -> Result<ValueId> {
        self.check(logits)?;
        let v = Tensor::scalar(kernels::cross_entropy(self.value(logits), &labels)?);
        Ok(self.push(Op::CrossEntropy { logits, labels }, v, None))
    }

    // ── Reverse sweep ─────────────────────────────────────────────────

    /// Reverse-mode sweep from a scalar loss node. Gradients of every node
    /// reachable from the loss become available through `grad`.
    pub fn backward(&mut self, loss: ValueId) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::State(
                "backward requires a recorded forward pass".into(),
            ));
        }
        self.check(loss)?;
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }

        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; n];
        grads[loss.0] = Some(Tensor::scalar(T::ONE));

        for i in (0..n).rev() {
            let dy = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            // Re-insert so callers can inspect intermediate gradients.
            let node_op = self.nodes[i].op.clone();
            match &node_op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, dy.clone());
                    accumulate(&mut grads, *b, dy.clone());
                }
                Op::Mul(a, b) => {
                    let da = kernels::mul(&dy, self.value(*b))?;
                    let db = kernels::mul(&dy, self.value(*a))?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, *a, kernels::scale(&dy, *c));
                }
                Op::AddBias(x, bias) => {
                    accumulate(&mut grads, *x, dy.clone());
                    accumulate(&mut grads, *bias, kernels::add_bias_backward_bias(&dy));
                }
                Op::Matmul(a, b) => {
                    let (da, db) = kernels::matmul_backward(self.value(*a), self.value(*b), &dy)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Transpose(x, ax_a, ax_b) => {
                    accumulate(&mut grads, *x, kernels::transpose(&dy, *ax_a, *ax_b)?);
                }
                Op::Reshape(x) => {
                    let dx = dy.reshape(self.value(*x).shape().to_vec())?;
                    accumulate(&mut grads, *x, dx);
                }
                Op::Softmax(x, axis) => {
                    let y = &self.nodes[i].value;
                    accumulate(&mut grads, *x, kernels::softmax_backward(y, &dy, *axis));
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    eps,
                } => {
                    let (dx, dgamma, dbeta) =
                        kernels::layer_norm_backward(self.value(*x), self.value(*gamma), *eps, &dy);
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gamma, dgamma);
                    accumulate(&mut grads, *beta, dbeta);
                }
                Op::Gelu(x) => {
                    accumulate(&mut grads, *x, kernels::gelu_backward(self.value(*x), &dy));
                }
                Op::AvgPool2d { x, r } => {
                    let dx = kernels::avg_pool2d_backward(&dy, self.value(*x).shape(), *r);
                    accumulate(&mut grads, *x, dx);
                }
                Op::AdaptiveAvgPool2d(x) => {
                    let dx = kernels::adaptive_avg_pool2d_backward(&dy, self.value(*x).shape());
                    accumulate(&mut grads, *x, dx);
                }
                Op::BilinearResize(x) => {
                    let dx = kernels::bilinear_resize_backward(&dy, self.value(*x).shape());
                    accumulate(&mut grads, *x, dx);
                }
                Op::Conv1x1 { x, w, b } => {
                    let (dx, dw, db) =
                        kernels::conv1x1_backward(self.value(*x), self.value(*w), &dy);
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                    if let Some(b) = b {
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::DwConv3x3 { x, w, b } => {
                    let (dx, dw, db) =
                        kernels::dwconv3x3_backward(self.value(*x), self.value(*w), &dy);
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                    if let Some(b) = b {
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Concat { xs, axis } => {
                    let shapes: Vec<Vec<usize>> = xs
                        .iter()
                        .map(|&id| self.value(id).shape().to_vec())
                        .collect();
                    let parts = kernels::concat_backward(&dy, &shapes, *axis);
                    for (&x, part) in xs.iter().zip(parts) {
                        accumulate(&mut grads, x, part);
                    }
                }
                Op::MeanAll(x) => {
                    let len = self.value(*x).len();
                    let g = dy.item()? * T::from_f64(1.0 / len as f64);
                    let dx = Tensor::full(self.value(*x).shape().to_vec(), g)?;
                    accumulate(&mut grads, *x, dx);
                }
                Op::SumAll(x) => {
                    let dx = Tensor::full(self.value(*x).shape().to_vec(), dy.item()?)?;
                    accumulate(&mut grads, *x, dx);
                }
                Op::CrossEntropy { logits, labels } => {
                    let dx =
                        kernels::cross_entropy_backward(self.value(*logits), labels, dy.item()?);
                    accumulate(&mut grads, *logits, dx);
                }
            }
            grads[i] = Some(dy);
        }
        self.grads = grads;
        Ok(())
    }

    /// Add every parameter leaf's gradient into its `ParamSet` slot.
    pub fn accumulate_param_grads(&self, params: &mut ParamSet<T>) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Some(pid), Some(Some(g))) = (node.param, self.grads.get(i)) {
                params.add_to_grad(pid, g);
            }
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], id: ValueId, delta: Tensor<T>) {
    match &mut grads[id.0] {
        Some(existing) => {
            let sum = kernels::add(existing, &delta).expect("gradient shapes agree");
            grads[id.0] = Some(sum);
        }
        slot @ None => *slot = Some(delta),
    }
}
