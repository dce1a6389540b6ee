//! Define-by-run computation graph.
//!
//! Nodes are appended in evaluation order, so every input of a node has a
//! smaller index than the node itself and reverse index order is a valid
//! topological order for backward.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, ConvGeom, Padding};
use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::{Element, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Up2 {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Relu {
        input: Var,
    },
    Dropout {
        input: Var,
        mask: Vec<T>,
    },
    Softmax {
        input: Var,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
    },
    Sum {
        input: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: T,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of tensors and the operations that produced them.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
    backward_done: bool,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
            backward_done: false,
        }
    }

    /// A graph that records values only. Backward is unavailable and no
    /// activations are retained for it.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad && self.grad_enabled)
    }

    /// Constant input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn into_value(mut self, v: Var) -> Tensor<T> {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(&[0]))
    }

    /// Gradient of `v` after backward; `None` when nothing flowed into it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Gradient of `v` as a tensor, zero-filled when nothing flowed into it.
    pub fn grad_tensor(&self, v: Var) -> Tensor<T> {
        let node = &self.nodes[v.0];
        match &node.grad {
            Some(g) => Tensor::new(node.value.shape().to_vec(), g.clone())
                .expect("gradient shape matches value shape"),
            None => Tensor::zeros(node.value.shape()),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let op = if self.grad_enabled && requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Option<Var>]) -> bool {
        vars.iter().flatten().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Hash of every piecewise-linear branch taken by the recorded ops:
    /// ReLU input signs and max-pool winners. Two evaluations with equal
    /// signatures lie on the same smooth piece. Only meaningful on a graph
    /// that records ops.
    pub fn kink_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for node in &self.nodes {
            match &node.op {
                Op::Relu { input } => {
                    for &v in self.nodes[input.0].value.data() {
                        mix((v > T::zero()) as u64);
                    }
                }
                Op::MaxPool { argmax, .. } => argmax.iter().for_each(|&a| mix(a as u64)),
                _ => {}
            }
        }
        h
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        dilation: usize,
        padding: Padding,
    ) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let geom = ConvGeom::new(x.dims4()?, w.dims4()?, stride, dilation, padding)?;
        let out = kernels::conv2d_forward(x, w, bias.map(|b| self.value(b)), &geom)?;
        let rg = self.needs(&[Some(input), Some(weight), bias]);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        ))
    }

    /// Kernel-2 stride-2 transposed convolution (doubles H and W).
    pub fn transposed_conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let out = kernels::up2_forward(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
        )?;
        let rg = self.needs(&[Some(input), Some(weight), bias]);
        Ok(self.push(
            out,
            Op::Up2 {
                input,
                weight,
                bias,
            },
            rg,
        ))
    }

    pub fn maxpool2d(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = kernels::maxpool2_forward(self.value(input))?;
        let rg = self.needs(&[Some(input)]);
        Ok(self.push(out, Op::MaxPool { input, argmax }, rg))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [ba, ca, ha, wa] = self.value(a).dims4()?;
        let [bb, cb, hb, wb] = self.value(b).dims4()?;
        if (ba, ha, wa) != (bb, hb, wb) {
            return shape_err(format!(
                "concat_channels: [{ba},{ca},{ha},{wa}] vs [{bb},{cb},{hb},{wb}] differ outside the channel axis"
            ));
        }
        let plane = ha * wa;
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(ba * (ca + cb) * plane);
        for n in 0..ba {
            out.extend_from_slice(&xa[n * ca * plane..(n + 1) * ca * plane]);
            out.extend_from_slice(&xb[n * cb * plane..(n + 1) * cb * plane]);
        }
        let out = Tensor::new(vec![ba, ca + cb, ha, wa], out)?;
        let rg = self.needs(&[Some(a), Some(b)]);
        Ok(self.push(out, Op::Concat { a, b }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = self.value(input).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.needs(&[Some(input)]);
        self.push(out, Op::Relu { input }, rg)
    }

    /// Inverted dropout. Identity when `training` is false or `rate` is zero.
    /// The mask is drawn from `seed` alone.
    pub fn dropout(&mut self, input: Var, rate: f64, training: bool, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return invalid(format!("dropout rate must lie in [0, 1), got {rate}"));
        }
        if !training || rate == 0.0 {
            return Ok(input);
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = self.value(input);
        let mask: Vec<T> = (0..x.numel())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let out = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect(),
        )?;
        let rg = self.needs(&[Some(input)]);
        Ok(self.push(out, Op::Dropout { input, mask }, rg))
    }

    /// Softmax over the channel axis of a 4-d tensor.
    pub fn softmax_channels(&mut self, input: Var) -> Result<Var> {
        let out = softmax_channels(self.value(input))?;
        let rg = self.needs(&[Some(input)]);
        Ok(self.push(out, Op::Softmax { input }, rg))
    }

    /// Mean per-pixel cross-entropy between channel logits and class indices
    /// laid out as `[B, H, W]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let x = self.value(logits);
        let [b, c, h, w] = x.dims4()?;
        if targets.len() != b * h * w {
            return shape_err(format!(
                "cross_entropy: {} targets for a [{b},{c},{h},{w}] logit map",
                targets.len()
            ));
        }
        if let Some((i, &t)) = targets.iter().enumerate().find(|(_, &t)| t >= c) {
            return invalid(format!("target {t} at position {i} outside [0, {c})"));
        }
        let plane = h * w;
        let xd = x.data();
        let mut total = 0.0f64;
        for n in 0..b {
            for p in 0..plane {
                let at = |ch: usize| xd[(n * c + ch) * plane + p];
                let m = (0..c).map(at).fold(T::neg_infinity(), T::max);
                let lse = m + (0..c).map(|ch| (at(ch) - m).exp()).sum::<T>().ln();
                total += (lse - at(targets[n * plane + p])).as_f64();
            }
        }
        let loss = Tensor::scalar(T::lit(total / (b * plane) as f64));
        let rg = self.needs(&[Some(logits)]);
        Ok(self.push(
            loss,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = Tensor::scalar(self.value(input).sum());
        let rg = self.needs(&[Some(input)]);
        self.push(s, Op::Sum { input }, rg)
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (xa, xb) = (self.value(a), self.value(b));
        if xa.shape() != xb.shape() {
            return shape_err(format!("mul of {:?} and {:?}", xa.shape(), xb.shape()));
        }
        let out = Tensor::new(
            xa.shape().to_vec(),
            xa.data().iter().zip(xb.data()).map(|(&p, &q)| p * q).collect(),
        )?;
        let rg = self.needs(&[Some(a), Some(b)]);
        Ok(self.push(out, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let factor = T::lit(factor);
        let out = self.value(input).map(|v| v * factor);
        let rg = self.needs(&[Some(input)]);
        self.push(out, Op::Scale { input, factor }, rg)
    }

    /// Reverse-mode sweep from a scalar `loss`. Populates the gradient of
    /// every node that requires one and is reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.grad_enabled {
            return Err(Error::GradDisabled);
        }
        if self.backward_done {
            return Err(Error::BackwardRepeated);
        }
        let shape = self.nodes[loss.0].value.shape().to_vec();
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            let Some(grad) = node.grad.as_deref() else {
                continue;
            };
            propagate(before, node, grad)?;
        }
        Ok(())
    }
}

fn accumulate<T: Element>(nodes: &mut [Node<T>], v: Var, f: impl FnOnce(&mut [T])) {
    let node = &mut nodes[v.0];
    if !node.requires_grad {
        return;
    }
    let n = node.value.numel();
    f(node.grad.get_or_insert_with(|| vec![T::zero(); n]));
}

fn add_into<T: Element>(nodes: &mut [Node<T>], v: Var, delta: &[T]) {
    accumulate(nodes, v, |g| {
        for (a, &d) in g.iter_mut().zip(delta) {
            *a += d;
        }
    });
}

fn propagate<T: Element>(nodes: &mut [Node<T>], node: &Node<T>, grad: &[T]) -> Result<()> {
    match &node.op {
        Op::Leaf => {}
        Op::Conv2d {
            input,
            weight,
            bias,
            geom,
        } => {
            let need_dx = nodes[input.0].requires_grad;
            let (dx, dw, db) = kernels::conv2d_backward(
                &nodes[input.0].value,
                &nodes[weight.0].value,
                grad,
                geom,
                need_dx,
            );
            if let Some(dx) = dx {
                add_into(nodes, *input, &dx);
            }
            add_into(nodes, *weight, &dw);
            if let Some(b) = bias {
                add_into(nodes, *b, &db);
            }
        }
        Op::Up2 {
            input,
            weight,
            bias,
        } => {
            let need_dx = nodes[input.0].requires_grad;
            let (dx, dw, db) = kernels::up2_backward(
                &nodes[input.0].value,
                &nodes[weight.0].value,
                grad,
                need_dx,
            )?;
            if let Some(dx) = dx {
                add_into(nodes, *input, &dx);
            }
            add_into(nodes, *weight, &dw);
            if let Some(b) = bias {
                add_into(nodes, *b, &db);
            }
        }
        Op::MaxPool { input, argmax } => accumulate(nodes, *input, |g| {
            for (&src, &d) in argmax.iter().zip(grad) {
                g[src] += d;
            }
        }),
        Op::Concat { a, b } => {
            let [n, ca, h, w] = nodes[a.0].value.dims4()?;
            let cb = nodes[b.0].value.dims4()?[1];
            let plane = h * w;
            let stride = (ca + cb) * plane;
            accumulate(nodes, *a, |g| {
                for i in 0..n {
                    for (x, &d) in g[i * ca * plane..(i + 1) * ca * plane]
                        .iter_mut()
                        .zip(&grad[i * stride..i * stride + ca * plane])
                    {
                        *x += d;
                    }
                }
            });
            accumulate(nodes, *b, |g| {
                for i in 0..n {
                    for (x, &d) in g[i * cb * plane..(i + 1) * cb * plane]
                        .iter_mut()
                        .zip(&grad[i * stride + ca * plane..(i + 1) * stride])
                    {
                        *x += d;
                    }
                }
            });
        }
        Op::Relu { input } => {
            let y = node.value.data();
            accumulate(nodes, *input, |g| {
                for ((x, &d), &yv) in g.iter_mut().zip(grad).zip(y) {
                    if yv > T::zero() {
                        *x += d;
                    }
                }
            });
        }
        Op::Dropout { input, mask } => accumulate(nodes, *input, |g| {
            for ((x, &d), &m) in g.iter_mut().zip(grad).zip(mask) {
                *x += d * m;
            }
        }),
        Op::Softmax { input } => {
            let [b, c, h, w] = node.value.dims4()?;
            let plane = h * w;
            let y = node.value.data();
            accumulate(nodes, *input, |g| {
                for n in 0..b {
                    for p in 0..plane {
                        let idx = |ch: usize| (n * c + ch) * plane + p;
                        let dot: T = (0..c).map(|ch| y[idx(ch)] * grad[idx(ch)]).sum();
                        for ch in 0..c {
                            g[idx(ch)] += y[idx(ch)] * (grad[idx(ch)] - dot);
                        }
                    }
                }
            });
        }
        Op::CrossEntropy { logits, targets } => {
            let probs = softmax_channels(&nodes[logits.0].value)?;
            let [b, c, h, w] = probs.dims4()?;
            let plane = h * w;
            let scale = grad[0] / T::lit((b * plane) as f64);
            let pd = probs.data();
            accumulate(nodes, *logits, |g| {
                for n in 0..b {
                    for p in 0..plane {
                        let t = targets[n * plane + p];
                        for ch in 0..c {
                            let i = (n * c + ch) * plane + p;
                            let onehot = if ch == t { T::one() } else { T::zero() };
                            g[i] += (pd[i] - onehot) * scale;
                        }
                    }
                }
            });
        }
        Op::Sum { input } => accumulate(nodes, *input, |g| {
            for x in g.iter_mut() {
                *x += grad[0];
            }
        }),
        Op::Mul { a, b } => {
            let da: Vec<T> = nodes[b.0]
                .value
                .data()
                .iter()
                .zip(grad)
                .map(|(&q, &d)| q * d)
                .collect();
            let db: Vec<T> = nodes[a.0]
                .value
                .data()
                .iter()
                .zip(grad)
                .map(|(&p, &d)| p * d)
                .collect();
            add_into(nodes, *a, &da);
            add_into(nodes, *b, &db);
        }
        Op::Scale { input, factor } => accumulate(nodes, *input, |g| {
            for (x, &d) in g.iter_mut().zip(grad) {
                *x += d * *factor;
            }
        }),
    }
    Ok(())
}

/// Max-subtracted softmax over the channel axis.
pub fn softmax_channels<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, c, h, w] = x.dims4()?;
    if c == 0 {
        return shape_err("softmax over zero channels");
    }
    let plane = h * w;
    let xd = x.data();
    let mut out = vec![T::zero(); xd.len()];
    for n in 0..b {
        for p in 0..plane {
            let idx = |ch: usize| (n * c + ch) * plane + p;
            let m = (0..c).map(|ch| xd[idx(ch)]).fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for ch in 0..c {
                let e = (xd[idx(ch)] - m).exp();
                out[idx(ch)] = e;
                z += e;
            }
            for ch in 0..c {
                out[idx(ch)] = out[idx(ch)] / z;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}
