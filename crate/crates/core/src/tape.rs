//! Reverse-mode differentiation over tensors.
//!
//! Every differentiable operation appends a node to the [`Tape`] holding its
//! output value and whatever the backward pass needs. [`Tape::backward`]
//! walks the nodes in exact reverse order of creation, so the tape is a
//! topological order by construction.
//!
//! ```
//! use euisnet::tape::Tape;
//! use euisnet::tensor::{Shape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.variable(Tensor::full(Shape::new(1, 1, 2, 2), 3.0));
//! let y = tape.mul(x, x).unwrap();
//! let loss = tape.sum(y);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).unwrap().data(), &[6.0; 4]);
//! ```

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::kernels::{self, BatchNormSaved, TransposeGeometry};
use crate::param::{ParamId, ParamStore, Parameter};
use crate::tensor::{Scalar, Shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Whether stochastic and batch-dependent layers behave as in training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Statistics source for [`Tape::batch_norm`].
#[derive(Clone, Copy, Debug)]
pub enum NormStats<'a> {
    /// Normalize with the batch's own mean and variance.
    Batch,
    /// Normalize with fixed running statistics.
    Running { mean: &'a [f64], var: &'a [f64] },
}

/// Probability floor/ceiling applied inside the binary cross-entropy.
pub const BCE_CLAMP: f64 = 1e-7;

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: TransposeGeometry,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        saved: BatchNormSaved<T>,
        batch_stats: bool,
    },
    Relu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        x: Var,
    },
    GlobalMaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    ChannelMean {
        x: Var,
    },
    Dropout {
        x: Var,
        mask: Option<Vec<T>>,
    },
    Concat {
        parts: Vec<Var>,
    },
    SliceChannels {
        x: Var,
        start: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    Scale {
        x: Var,
        factor: T,
    },
    Bce {
        pred: Var,
        target: Tensor<T>,
    },
    Dice {
        pred: Var,
        target: Tensor<T>,
        smooth: T,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records a forward pass for later differentiation.
///
/// A tape is single-use: build it, call [`Tape::backward`] once, drop it.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    fault: bool,
    branches: Option<u64>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
            fault: false,
            branches: None,
        }
    }

    /// Starts hashing the discrete choices made by non-smooth ops: ReLU
    /// signs, pooling winners and loss clamping.
    pub fn track_branches(&mut self) {
        self.branches.get_or_insert(0xcbf2_9ce4_8422_2325);
    }

    /// Hash of the choices recorded since [`Tape::track_branches`]. Two
    /// passes with equal signatures ran on the same smooth piece of the
    /// function.
    pub fn branch_signature(&self) -> Option<u64> {
        self.branches
    }

    fn note_branches(&mut self, choices: impl Iterator<Item = u64>) {
        if let Some(h) = self.branches.as_mut() {
            for c in choices {
                *h = (*h ^ c).wrapping_mul(0x0100_0000_01b3);
            }
        }
    }

    /// Deliberately corrupts the conv2d weight gradient (scaled by 1.5).
    ///
    /// Only meant for exercising gradient-check failure paths.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, on: bool) {
        self.fault = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn derived(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs = inputs.iter().any(|&v| self.needs(v));
        self.push(value, op, needs)
    }

    /// An input that is not differentiated.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A free leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Binds a parameter. Binding the same parameter twice yields the same var.
    pub fn param(&mut self, p: &Parameter<T>) -> Var {
        if let Some(&v) = self.params.get(&p.id) {
            return v;
        }
        let v = self.push(p.value.clone(), Op::Leaf, true);
        self.params.insert(p.id, v);
        v
    }

    /// Zero-padded, stride-1 "same" convolution with an odd square kernel.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let pad = self.shape(w).h / 2;
        self.conv2d_general(x, w, b, 1, pad)
    }

    pub fn conv2d_general(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let out = kernels::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.derived(out, Op::Conv2d { x, w, b, stride, pad }, &inputs))
    }

    /// Stride-2 transposed convolution that exactly doubles `H×W`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let geom = TransposeGeometry::UPSAMPLE2;
        let out = kernels::conv_transpose2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), geom)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.derived(out, Op::ConvTranspose2d { x, w, b, geom }, &inputs))
    }

    /// Batch normalization. With [`NormStats::Batch`] the per-channel batch
    /// mean and biased variance are returned for running-statistics updates.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: NormStats<'_>,
        eps: f64,
    ) -> Result<(Var, Option<(Vec<f64>, Vec<f64>)>)> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let (out, saved, batch_stats) = match stats {
            NormStats::Batch => {
                let (o, s) = kernels::batch_norm_train_forward(xv, gv, bv, eps)?;
                (o, s, true)
            }
            NormStats::Running { mean, var } => {
                let (o, s) = kernels::batch_norm_infer_forward(xv, gv, bv, mean, var, eps)?;
                (o, s, false)
            }
        };
        let stats_out = batch_stats.then(|| (saved.mean.clone(), saved.var.clone()));
        let v = self.derived(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
                batch_stats,
            },
            &[x, gamma, beta],
        );
        Ok((v, stats_out))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::zero()));
        if self.branches.is_some() {
            let signs: Vec<u64> = self.value(x).data().iter().map(|&v| (v > T::zero()) as u64).collect();
            self.note_branches(signs.into_iter());
        }
        self.derived(out, Op::Relu { x }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        self.derived(out, Op::Sigmoid { x }, &[x])
    }

    pub fn max_pool2(&mut self, x: Var) -> Var {
        let (out, argmax) = kernels::max_pool2_forward(self.value(x));
        self.note_branches(argmax.iter().map(|&i| i as u64));
        self.derived(out, Op::MaxPool2 { x, argmax }, &[x])
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let out = kernels::global_avg_pool(self.value(x));
        self.derived(out, Op::GlobalAvgPool { x }, &[x])
    }

    pub fn global_max_pool(&mut self, x: Var) -> Var {
        let (out, argmax) = kernels::global_max_pool(self.value(x));
        self.note_branches(argmax.iter().map(|&i| i as u64));
        self.derived(out, Op::GlobalMaxPool { x, argmax }, &[x])
    }

    pub fn channel_mean(&mut self, x: Var) -> Var {
        let out = kernels::channel_mean(self.value(x));
        self.derived(out, Op::ChannelMean { x }, &[x])
    }

    /// Inverted dropout: survivors are scaled by `1/(1-rate)`; identity in
    /// [`Mode::Infer`] or at rate zero.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidParameter(format!("dropout rate {rate} outside [0, 1)")));
        }
        let (out, mask) = if mode == Mode::Train && rate > 0.0 {
            let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
            let mask: Vec<T> = (0..self.value(x).len())
                .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
                .collect();
            let xv = self.value(x);
            let data = xv.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
            (Tensor::from_vec(xv.shape(), data)?, Some(mask))
        } else {
            (self.value(x).clone(), None)
        };
        Ok(self.derived(out, Op::Dropout { x, mask }, &[x]))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = kernels::concat_channels(&values)?;
        Ok(self.derived(out, Op::Concat { parts: parts.to_vec() }, parts))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(x).slice_channels(start, len)?;
        Ok(self.derived(out, Op::SliceChannels { x, start }, &[x]))
    }

    /// Broadcasting addition.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::broadcast_binary(self.value(a), self.value(b), "add", |x, y| x + y)?;
        Ok(self.derived(out, Op::Add { a, b }, &[a, b]))
    }

    /// Broadcasting elementwise multiplication.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::broadcast_binary(self.value(a), self.value(b), "mul", |x, y| x * y)?;
        Ok(self.derived(out, Op::Mul { a, b }, &[a, b]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.derived(out, Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).mean());
        self.derived(out, Op::Mean { x }, &[x])
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.derived(out, Op::Scale { x, factor }, &[x])
    }

    /// Mean binary cross-entropy of probabilities against a target mask.
    pub fn bce(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::Shape(format!(
                "bce: prediction {} vs target {}",
                p.shape(),
                target.shape()
            )));
        }
        let total: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                let p = p.as_f64().clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                let t = t.as_f64();
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum();
        let out = Tensor::scalar(T::from_f64_lossy(total / p.len() as f64));
        if self.branches.is_some() {
            let clamped: Vec<u64> = self
                .value(pred)
                .data()
                .iter()
                .map(|v| {
                    let v = v.as_f64();
                    (v < BCE_CLAMP) as u64 | (((v > 1.0 - BCE_CLAMP) as u64) << 1)
                })
                .collect();
            self.note_branches(clamped.into_iter());
        }
        Ok(self.derived(
            out,
            Op::Bce {
                pred,
                target: target.clone(),
            },
            &[pred],
        ))
    }

    /// `1 - (2Σpt + s) / (Σp + Σt + s)` over the whole tensor.
    pub fn soft_dice(&mut self, pred: Var, target: &Tensor<T>, smooth: T) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::Shape(format!(
                "dice: prediction {} vs target {}",
                p.shape(),
                target.shape()
            )));
        }
        let (inter, total) = dice_terms(p, target);
        let s = smooth.as_f64();
        let out = Tensor::scalar(T::from_f64_lossy(1.0 - (2.0 * inter + s) / (total + s)));
        Ok(self.derived(
            out,
            Op::Dice {
                pred,
                target: target.clone(),
                smooth,
            },
            &[pred],
        ))
    }

    /// Propagates gradients from a scalar `loss` back to every leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let ls = self.shape(loss);
        if !ls.is_scalar() {
            return Err(Error::Usage(format!("backward needs a scalar loss, found {ls}")));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
        }
        let mut leaves = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.needs_grad && matches!(node.op, Op::Leaf) {
                let g = grads[i].take().unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                leaves.insert(i, g);
            }
        }
        Ok(Gradients {
            leaves,
            params: self.params.clone(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.needs(v) {
            return;
        }
        debug_assert_eq!(g.shape(), self.shape(v));
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn backward_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, pad } => {
                let (dx, mut dw, db) =
                    kernels::conv2d_backward(self.value(*x), self.value(*w), g, *stride, *pad, self.needs(*x));
                if self.fault {
                    dw = dw.map(|v| v * T::from_f64_lossy(1.5));
                }
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *w, dw);
                if let Some(b) = b {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let (dx, dw, db) =
                    kernels::conv_transpose2d_backward(self.value(*x), self.value(*w), g, *geom, self.needs(*x));
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *w, dw);
                if let Some(b) = b {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
                batch_stats,
            } => {
                let (dx, dgamma, dbeta) = kernels::batch_norm_backward(g, self.value(*gamma), saved, *batch_stats);
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gamma, dgamma);
                self.accumulate(grads, *beta, dbeta);
            }
            Op::Relu { x } => {
                let xv = self.value(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.shape(), data).unwrap());
            }
            Op::Sigmoid { x } => {
                let data = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(&g, &y)| g * y * (T::one() - y))
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.shape(), data).unwrap());
            }
            Op::MaxPool2 { x, argmax } | Op::GlobalMaxPool { x, argmax } => {
                let dx = kernels::scatter_argmax(g, argmax, self.shape(*x));
                self.accumulate(grads, *x, dx);
            }
            Op::GlobalAvgPool { x } => {
                let dx = kernels::global_avg_pool_backward(g, self.shape(*x));
                self.accumulate(grads, *x, dx);
            }
            Op::ChannelMean { x } => {
                let dx = kernels::channel_mean_backward(g, self.shape(*x));
                self.accumulate(grads, *x, dx);
            }
            Op::Dropout { x, mask } => {
                let dx = match mask {
                    Some(m) => {
                        let data = g.data().iter().zip(m).map(|(&g, &m)| g * m).collect();
                        Tensor::from_vec(g.shape(), data).unwrap()
                    }
                    None => g.clone(),
                };
                self.accumulate(grads, *x, dx);
            }
            Op::Concat { parts } => {
                let mut start = 0;
                for &p in parts {
                    let c = self.shape(p).c;
                    if self.needs(p) {
                        self.accumulate(grads, p, g.slice_channels(start, c).unwrap());
                    }
                    start += c;
                }
            }
            Op::SliceChannels { x, start } => {
                let xs = self.shape(*x);
                let gs = g.shape();
                let plane = xs.plane();
                let mut dx = Tensor::zeros(xs);
                for n in 0..xs.n {
                    let dst = &mut dx.item_mut(n)[start * plane..(start + gs.c) * plane];
                    dst.copy_from_slice(g.item(n));
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Add { a, b } => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, kernels::reduce_to(g, self.shape(*a)));
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, kernels::reduce_to(g, self.shape(*b)));
                }
            }
            Op::Mul { a, b } => {
                let (ga, gb) =
                    kernels::mul_backward(self.value(*a), self.value(*b), g, (self.needs(*a), self.needs(*b)));
                if let Some(ga) = ga {
                    self.accumulate(grads, *a, ga);
                }
                if let Some(gb) = gb {
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Sum { x } => {
                let gv = g.data()[0];
                self.accumulate(grads, *x, Tensor::full(self.shape(*x), gv));
            }
            Op::Mean { x } => {
                let s = self.shape(*x);
                let gv = g.data()[0] / T::from_usize(s.numel()).unwrap();
                self.accumulate(grads, *x, Tensor::full(s, gv));
            }
            Op::Scale { x, factor } => {
                let f = *factor;
                self.accumulate(grads, *x, g.map(|v| v * f));
            }
            Op::Bce { pred, target } => {
                let p = self.value(*pred);
                let scale = g.data()[0].as_f64() / p.len() as f64;
                let data = p
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&p, &t)| {
                        let p = p.as_f64();
                        if p <= BCE_CLAMP || p >= 1.0 - BCE_CLAMP {
                            T::zero()
                        } else {
                            T::from_f64_lossy(scale * (p - t.as_f64()) / (p * (1.0 - p)))
                        }
                    })
                    .collect();
                self.accumulate(grads, *pred, Tensor::from_vec(p.shape(), data).unwrap());
            }
            Op::Dice { pred, target, smooth } => {
                let p = self.value(*pred);
                let (inter, total) = dice_terms(p, target);
                let s = smooth.as_f64();
                let denom = total + s;
                let numer = 2.0 * inter + s;
                let gv = g.data()[0].as_f64();
                let data = target
                    .data()
                    .iter()
                    .map(|&t| T::from_f64_lossy(-gv * (2.0 * t.as_f64() * denom - numer) / (denom * denom)))
                    .collect();
                self.accumulate(grads, *pred, Tensor::from_vec(p.shape(), data).unwrap());
            }
        }
    }
}

fn dice_terms<T: Scalar>(p: &Tensor<T>, t: &Tensor<T>) -> (f64, f64) {
    let mut inter = 0.0;
    let mut total = 0.0;
    for (&p, &t) in p.data().iter().zip(t.data()) {
        let (p, t) = (p.as_f64(), t.as_f64());
        inter += p * t;
        total += p + t;
    }
    (inter, total)
}

/// Gradients of a scalar loss with respect to the tape's leaves.
pub struct Gradients<T> {
    leaves: HashMap<usize, Tensor<T>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf created with [`Tape::variable`] or [`Tape::param`].
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v.0)
    }

    /// Gradient of a bound parameter, `None` if it was never bound.
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id).and_then(|v| self.leaves.get(&v.0))
    }

    /// Adds the gradients into each parameter's accumulator. Parameters the
    /// forward pass never touched receive nothing.
    pub fn accumulate_into<S: ParamStore<T> + ?Sized>(&self, store: &mut S) {
        for p in store.parameters_mut() {
            if let Some(g) = self.param(p.id) {
                p.grad.add_assign(g);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.variable(Tensor::ones(Shape::new(1, 1, 2, 2)));
        assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn reused_var_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.variable(Tensor::full(Shape::scalar(), 2.0));
        let y = tape.add(x, x).unwrap();
        let z = tape.mul(y, x).unwrap(); // 2x^2
        let g = tape.backward(z).unwrap();
        assert_eq!(g.wrt(x).unwrap().data()[0], 8.0);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::ones(Shape::scalar()));
        let x = tape.variable(Tensor::ones(Shape::scalar()));
        let y = tape.mul(c, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert!(g.wrt(c).is_none());
        assert_eq!(g.wrt(x).unwrap().data()[0], 1.0);
    }

    #[test]
    fn dropout_rejects_bad_rate() {
        let mut tape = Tape::<f64>::new();
        let x = tape.variable(Tensor::ones(Shape::scalar()));
        let mut rng = rand::rng();
        assert!(tape.dropout(x, 1.0, Mode::Train, &mut rng).is_err());
        assert!(tape.dropout(x, -0.1, Mode::Infer, &mut rng).is_err());
    }
}
