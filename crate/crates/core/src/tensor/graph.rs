//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so a reverse sweep over the tape visits every node after
//! all of its consumers. Gradients accumulate additively when a value is used
//! more than once.

use std::collections::HashMap;

use super::ops::{self, BnCache, Direction, Pad2d};
use super::{BufferId, ParamId, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T: Scalar> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: (usize, usize),
    },
    ReflectPad {
        input: Var,
        pad: Pad2d,
    },
    AvgPool {
        input: Var,
        window: usize,
    },
    BatchNorm {
        input: Var,
        scale: Var,
        shift: Var,
        cache: BnCache<T>,
    },
    Relu(Var),
    Tanh(Var),
    GlobalAvgPool(Var),
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    LogSoftmax(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, T),
    Square(Var),
    Polyphase {
        input: Var,
        dir: Direction,
        parity: usize,
    },
    Interleave {
        even: Var,
        odd: Var,
        dir: Direction,
    },
    Sum(Var),
    Mean(Var),
    HuberSum {
        input: Var,
        delta: T,
    },
    Nll {
        input: Var,
        labels: Vec<usize>,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: HashMap::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool, name: &'static str) -> Result<Var> {
        let value = value.ensure_finite(name)?;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input (no gradient tracked).
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf, false, "input")
    }

    /// Leaf whose gradient is kept after [`backward`](Self::backward).
    pub fn variable(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf, true, "input")
    }

    /// Insert a stored parameter as a leaf; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.param(id).value.clone(),
            op: Op::Leaf,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last [`backward`](Self::backward) target w.r.t. `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    // -- operations ---------------------------------------------------------

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: (usize, usize)) -> Result<Var> {
        let out = ops::conv2d(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
        )?;
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        self.push(out, Op::Conv2d { input, weight, bias, stride }, rg, "conv2d")
    }

    pub fn reflect_pad(&mut self, input: Var, pad: Pad2d) -> Result<Var> {
        if pad == Pad2d::default() {
            return Ok(input);
        }
        let out = ops::reflect_pad(self.value(input), pad)?;
        let rg = self.rg(input);
        self.push(out, Op::ReflectPad { input, pad }, rg, "reflect_pad")
    }

    pub fn avg_pool(&mut self, input: Var, window: usize) -> Result<Var> {
        let out = ops::avg_pool(self.value(input), window)?;
        let rg = self.rg(input);
        self.push(out, Op::AvgPool { input, window }, rg, "avg_pool")
    }

    /// Batch normalization with running statistics held in `store` buffers.
    pub fn batch_norm(
        &mut self,
        input: Var,
        scale: Var,
        shift: Var,
        store: &mut ParamStore<T>,
        running: (BufferId, BufferId),
        training: bool,
    ) -> Result<Var> {
        let (rm, rv) = store.buffer_pair_mut(running.0, running.1);
        let (out, cache) = ops::batch_norm(
            &self.nodes[input.0].value,
            &self.nodes[scale.0].value,
            &self.nodes[shift.0].value,
            rm,
            rv,
            training,
        )?;
        let rg = self.rg(input) || self.rg(scale) || self.rg(shift);
        self.push(out, Op::BatchNorm { input, scale, shift, cache }, rg, "batch_norm")
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let out = ops::relu(self.value(input));
        let rg = self.rg(input);
        self.push(out, Op::Relu(input), rg, "relu")
    }

    pub fn tanh(&mut self, input: Var) -> Result<Var> {
        let out = ops::tanh(self.value(input));
        let rg = self.rg(input);
        self.push(out, Op::Tanh(input), rg, "tanh")
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let out = ops::global_avg_pool(self.value(input))?;
        let rg = self.rg(input);
        self.push(out, Op::GlobalAvgPool(input), rg, "global_avg_pool")
    }

    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = ops::dense(self.value(input), self.value(weight), self.value(bias))?;
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        self.push(out, Op::Dense { input, weight, bias }, rg, "dense")
    }

    pub fn log_softmax(&mut self, input: Var) -> Result<Var> {
        let out = ops::log_softmax(self.value(input))?;
        let rg = self.rg(input);
        self.push(out, Op::LogSoftmax(input), rg, "log_softmax")
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let refs: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = ops::concat(&refs, axis)?;
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(out, Op::Concat { inputs: inputs.to_vec(), axis }, rg, "concat")
    }

    fn zip_with(&self, a: Var, b: Var, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape(op, format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        Tensor::new(x.shape(), x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "add", |p, q| p + q)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "sub", |p, q| p - q)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Sub(a, b), rg, "sub")
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        let out = self.value(a).map(|v| v * factor);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, factor), rg, "scale")
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| v * v);
        let rg = self.rg(a);
        self.push(out, Op::Square(a), rg, "square")
    }

    /// Even (`parity = 0`) or odd (`parity = 1`) samples along `dir`.
    pub fn polyphase(&mut self, input: Var, dir: Direction, parity: usize) -> Result<Var> {
        let out = ops::polyphase(self.value(input), dir, parity)?;
        let rg = self.rg(input);
        self.push(out, Op::Polyphase { input, dir, parity }, rg, "split_even_odd")
    }

    pub fn interleave(&mut self, even: Var, odd: Var, dir: Direction) -> Result<Var> {
        let out = ops::interleave(self.value(even), self.value(odd), dir)?;
        let rg = self.rg(even) || self.rg(odd);
        self.push(out, Op::Interleave { even, odd, dir }, rg, "merge_even_odd")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let out = Tensor::scalar(v.mean());
        let rg = self.rg(a);
        self.push(out, Op::Mean(a), rg, "mean")
    }

    pub fn huber_sum(&mut self, input: Var, delta: T) -> Result<Var> {
        let out = Tensor::scalar(self.value(input).data().iter().map(|&x| ops::huber(x, delta)).sum());
        let rg = self.rg(input);
        self.push(out, Op::HuberSum { input, delta }, rg, "huber_sum")
    }

    /// Batch-mean negative log-likelihood of `labels` under row-wise log-probabilities.
    pub fn nll(&mut self, log_probs: Var, labels: &[usize]) -> Result<Var> {
        let lp = self.value(log_probs);
        let [b, p] = lp.dims2("cross_entropy")?;
        if labels.len() != b {
            return Err(Error::shape("cross_entropy", format!("{} labels for batch {b}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= p) {
            return Err(Error::LabelOutOfRange { label: bad, classes: p });
        }
        let total: T = labels.iter().enumerate().map(|(i, &l)| -lp.data()[i * p + l]).sum();
        let out = Tensor::scalar(total / T::of(b as f64));
        let rg = self.rg(log_probs);
        self.push(
            out,
            Op::Nll {
                input: log_probs,
                labels: labels.to_vec(),
            },
            rg,
            "cross_entropy",
        )
    }

    // -- reverse sweep ------------------------------------------------------

    fn accumulate(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Back-propagate from a single-element `target` (seeded with 1).
    pub fn backward(&mut self, target: Var) -> Result<()> {
        if self.value(target).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("target must be scalar, got {:?}", self.shape(target)),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[target.0] = Some(Tensor::full(self.shape(target), T::one()));

        for idx in (0..=target.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                // leaf gradients are kept for inspection
                grads[idx] = Some(g);
                continue;
            }
            let val = |v: Var| &self.nodes[v.0].value;
            let needs = |v: Var| self.nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv2d { input, weight, bias, stride } => {
                    let cg = ops::conv2d_backward(val(*input), val(*weight), bias.is_some(), *stride, &g)?;
                    if needs(*input) {
                        Self::accumulate(&mut grads, *input, cg.input);
                    }
                    if needs(*weight) {
                        Self::accumulate(&mut grads, *weight, cg.weight);
                    }
                    if let (Some(b), Some(gb)) = (bias, cg.bias) {
                        if needs(*b) {
                            Self::accumulate(&mut grads, *b, gb);
                        }
                    }
                }
                Op::ReflectPad { input, pad } => {
                    let gi = ops::reflect_pad_backward(&g, val(*input).shape(), *pad)?;
                    Self::accumulate(&mut grads, *input, gi);
                }
                Op::AvgPool { input, window } => {
                    let gi = ops::avg_pool_backward(&g, val(*input).shape(), *window)?;
                    Self::accumulate(&mut grads, *input, gi);
                }
                Op::BatchNorm { input, scale, shift, cache } => {
                    let (gi, gs, gb) = ops::batch_norm_backward(&g, val(*scale), cache)?;
                    if needs(*input) {
                        Self::accumulate(&mut grads, *input, gi);
                    }
                    if needs(*scale) {
                        Self::accumulate(&mut grads, *scale, gs);
                    }
                    if needs(*shift) {
                        Self::accumulate(&mut grads, *shift, gb);
                    }
                }
                Op::Relu(input) => {
                    let x = val(*input);
                    let gi = Tensor::new(
                        x.shape(),
                        x.data()
                            .iter()
                            .zip(g.data())
                            .map(|(&xv, &gv)| if xv > T::zero() { gv } else { T::zero() })
                            .collect(),
                    )?;
                    Self::accumulate(&mut grads, *input, gi);
                }
                Op::Tanh(input) => {
                    let y = &node.value;
                    let gi = Tensor::new(
                        y.shape(),
                        y.data()
                            .iter()
                            .zip(g.data())
                            .map(|(&yv, &gv)| gv * (T::one() - yv * yv))
                            .collect(),
                    )?;
                    Self::accumulate(&mut grads, *input, gi);
                }
                Op::GlobalAvgPool(input) => {
                    let gi = ops::global_avg_pool_backward(&g, val(*input).shape())?;
                    Self::accumulate(&mut grads, *input, gi);
                }
                Op::Dense { input, weight, bias } => {
                    let (gi, gw, gb) = ops::dense_backward(val(*input), val(*weight), &g)?;
                    if needs(*input) {
                        Self::accumulate(&mut grads, *input, gi);
                    }
                    if needs(*weight) {
                        Self::accumulate(&mut grads, *weight, gw);
                    }
                    if needs(*bias) {
                        Self::accumulate(&mut grads, *bias, gb);
                    }
                }
                Op::LogSoftmax(input) => {
                    let gi = ops::log_softmax_backward(&node.value, &g);
                    Self::accumulate(&mut grads, *input, gi);
                }
                Op::Concat { inputs, axis } => {
                    let shapes: Vec<Vec<usize>> = inputs.iter().map(|&v| val(v).shape().to_vec()).collect();
                    for (&v, gi) in inputs.iter().zip(ops::concat_backward(&g, &shapes, *axis)) {
                        if needs(v) {
                            Self::accumulate(&mut grads, v, gi);
                        }
                    }
                }
                Op::Add(a, b) => {
                    if needs(*b) {
                        Self::accumulate(&mut grads, *b, g.clone());
                    }
                    if needs(*a) {
                        Self::accumulate(&mut grads, *a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if needs(*b) {
                        Self::accumulate(&mut grads, *b, g.map(|v| -v));
                    }
                    if needs(*a) {
                        Self::accumulate(&mut grads, *a, g);
                    }
                }
                Op::Scale(a, factor) => {
                    let f = *factor;
                    Self::accumulate(&mut grads, *a, g.map(|v| v * f));
                }
                Op::Square(a) => {
                    let x = val(*a);
                    let two = T::of(2.0);
                    let gi = Tensor::new(
                        x.shape(),
                        x.data().iter().zip(g.data()).map(|(&xv, &gv)| two * xv * gv).collect(),
                    )?;
                    Self::accumulate(&mut grads, *a, gi);
                }
                Op::Polyphase { input, dir, parity } => {
                    let zeros = Tensor::zeros(g.shape());
                    let gi = if *parity == 0 {
                        ops::interleave(&g, &zeros, *dir)?
                    } else {
                        ops::interleave(&zeros, &g, *dir)?
                    };
                    Self::accumulate(&mut grads, *input, gi);
                }
                Op::Interleave { even, odd, dir } => {
                    if needs(*even) {
                        Self::accumulate(&mut grads, *even, ops::polyphase(&g, *dir, 0)?);
                    }
                    if needs(*odd) {
                        Self::accumulate(&mut grads, *odd, ops::polyphase(&g, *dir, 1)?);
                    }
                }
                Op::Sum(a) => {
                    let s = g.item();
                    Self::accumulate(&mut grads, *a, Tensor::full(val(*a).shape(), s));
                }
                Op::Mean(a) => {
                    let x = val(*a);
                    let s = g.item() / T::of(x.len() as f64);
                    Self::accumulate(&mut grads, *a, Tensor::full(x.shape(), s));
                }
                Op::HuberSum { input, delta } => {
                    let s = g.item();
                    let d = *delta;
                    let gi = val(*input).map(|x| ops::huber_grad(x, d) * s);
                    Self::accumulate(&mut grads, *input, gi);
                }
                Op::Nll { input, labels } => {
                    let x = val(*input);
                    let p = x.shape()[1];
                    let s = -g.item() / T::of(labels.len() as f64);
                    let mut gi = Tensor::zeros(x.shape());
                    for (i, &l) in labels.iter().enumerate() {
                        gi.data_mut()[i * p + l] = s;
                    }
                    Self::accumulate(&mut grads, *input, gi);
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Add the gradients of every parameter leaf into `store`'s grad buffers.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<T>) {
        for (&id, &v) in &self.params {
            if let Some(g) = self.grad(v) {
                store.param_mut(id).grad.add_assign(g);
            }
        }
    }
}
