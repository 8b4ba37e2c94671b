//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every op appends a node holding its output; [`Graph::backward`] walks the
//! tape in reverse. Parameters are leaves created with [`Graph::param`];
//! anything created with [`Graph::constant`] (inputs, targets, frozen
//! weights) never receives a gradient.
//!
//! Layouts: sequences are `[batch][channels][length]`, conv weights
//! `[c_out][c_in][kernel]`, transposed-conv weights `[c_in][c_out][kernel]`,
//! linear weights `[in][out]`.

mod conv;
mod gradcheck;

pub use conv::{col2im_add, im2col, ConvGeom};
pub use gradcheck::{check_gradients, GradCheckReport, GRADCHECK_FLOOR};

use conv::ConvDims;

use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param,
    Conv { x: NodeId, w: NodeId, b: Option<NodeId>, geom: ConvGeom },
    ConvTranspose { x: NodeId, w: NodeId, b: Option<NodeId>, geom: ConvGeom },
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Upsample { x: NodeId, factor: usize },
    AvgPool { x: NodeId, factor: usize },
    Flatten(NodeId),
    Linear { x: NodeId, w: NodeId, b: NodeId },
    L1 { pred: NodeId, target: NodeId, weight: Option<NodeId> },
    L2 { pred: NodeId, target: NodeId, weight: Option<NodeId> },
    CrossEntropy { logits: NodeId, labels: Vec<usize> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads[id.0].as_ref()
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.grads[id.0].take()
    }
}

fn mismatch(msg: String) -> Error {
    Error::ShapeMismatch(msg)
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Scalar value of a loss node.
    pub fn scalar(&self, id: NodeId) -> T {
        self.nodes[id.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn any_grad(&self, ids: &[Option<NodeId>]) -> bool {
        ids.iter().flatten().any(|id| self.nodes[id.0].requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Constant, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Param, true)
    }

    fn conv_dims(&self, x: NodeId, w: NodeId, transposed: bool, geom: &ConvGeom) -> Result<ConvDims> {
        let (batch, c_in, len_in) = self.value(x).dims3()?;
        let (w0, w1, kernel) = self.value(w).dims3()?;
        let (wc_in, c_out) = if transposed { (w0, w1) } else { (w1, w0) };
        if wc_in != c_in {
            return Err(mismatch(format!("conv weight expects {wc_in} input channels, got {c_in}")));
        }
        let len_out = if transposed {
            geom.transposed_out_len(len_in, kernel)
        } else {
            geom.out_len(len_in, kernel)
        }
        .ok_or_else(|| mismatch(format!("conv geometry {geom:?} invalid for length {len_in}")))?;
        Ok(ConvDims {
            batch,
            c_in,
            c_out,
            kernel,
            len_in,
            len_out,
        })
    }

    fn check_bias(&self, b: Option<NodeId>, channels: usize) -> Result<()> {
        match b.map(|b| self.value(b).shape()) {
            Some(s) if s != [channels] => Err(mismatch(format!("bias shape {s:?}, expected [{channels}]"))),
            _ => Ok(()),
        }
    }

    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, geom: ConvGeom) -> Result<NodeId> {
        let d = self.conv_dims(x, w, false, &geom)?;
        self.check_bias(b, d.c_out)?;
        let y = conv::conv_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &d,
            &geom,
        );
        let value = Tensor::from_vec(&[d.batch, d.c_out, d.len_out], y)?;
        let rg = self.any_grad(&[Some(x), Some(w), b]);
        Ok(self.push(value, Op::Conv { x, w, b, geom }, rg))
    }

    pub fn conv_transpose1d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, geom: ConvGeom) -> Result<NodeId> {
        let d = self.conv_dims(x, w, true, &geom)?;
        self.check_bias(b, d.c_out)?;
        let y = conv::conv_transpose_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &d,
            &geom,
        );
        let value = Tensor::from_vec(&[d.batch, d.c_out, d.len_out], y)?;
        let rg = self.any_grad(&[Some(x), Some(w), b]);
        Ok(self.push(value, Op::ConvTranspose { x, w, b, geom }, rg))
    }

    fn unary(&mut self, x: NodeId, f: impl Fn(T) -> T, op: Op) -> NodeId {
        let value = self.value(x).map(f);
        let rg = self.requires_grad(x);
        self.push(value, op, rg)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| T::one() / (T::one() + (-v).exp()), Op::Sigmoid(x))
    }

    fn binary(&mut self, a: NodeId, b: NodeId, f: impl Fn(T, T) -> T, op: Op) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(mismatch(format!("elementwise {:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&p, &q)| f(p, q)).collect();
        let value = Tensor::from_vec(va.shape(), data)?;
        let rg = self.any_grad(&[Some(a), Some(b)]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |p, q| p * q, Op::Mul(a, b))
    }

    /// Nearest-neighbour upsampling along the length axis.
    pub fn upsample(&mut self, x: NodeId, factor: usize) -> Result<NodeId> {
        let (b, c, l) = self.value(x).dims3()?;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(b * c * l * factor);
        for row in src.chunks_exact(l) {
            for &v in row {
                data.extend(std::iter::repeat_n(v, factor));
            }
        }
        let value = Tensor::from_vec(&[b, c, l * factor], data)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::Upsample { x, factor }, rg))
    }

    /// Non-overlapping average pooling with window = stride = `factor`.
    pub fn avg_pool(&mut self, x: NodeId, factor: usize) -> Result<NodeId> {
        let (b, c, l) = self.value(x).dims3()?;
        if factor == 0 || l % factor != 0 {
            return Err(Error::IndivisibleLength { len: l, divisor: factor });
        }
        let scale = T::one() / T::from_usize(factor).unwrap();
        let data = self
            .value(x)
            .data()
            .chunks_exact(factor)
            .map(|w| w.iter().copied().sum::<T>() * scale)
            .collect();
        let value = Tensor::from_vec(&[b, c, l / factor], data)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::AvgPool { x, factor }, rg))
    }

    /// `[batch][channels][length]` to `[batch][channels * length]`.
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        let (b, c, l) = self.value(x).dims3()?;
        let value = self.value(x).clone().reshaped(&[b, c * l])?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::Flatten(x), rg))
    }

    /// `x[batch][in] * w[in][out] + b[out]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (batch, din) = self.value(x).dims2()?;
        let (win, dout) = self.value(w).dims2()?;
        if win != din {
            return Err(mismatch(format!("linear weight expects {win} inputs, got {din}")));
        }
        self.check_bias(Some(b), dout)?;
        let mut y = vec![T::zero(); batch * dout];
        for row in y.chunks_exact_mut(dout) {
            row.copy_from_slice(self.value(b).data());
        }
        gemm(
            batch,
            din,
            dout,
            T::one(),
            MatRef::new(self.value(x).data(), din),
            MatRef::new(self.value(w).data(), dout),
            T::one(),
            &mut y,
        );
        let value = Tensor::from_vec(&[batch, dout], y)?;
        let rg = self.any_grad(&[Some(x), Some(w), Some(b)]);
        Ok(self.push(value, Op::Linear { x, w, b }, rg))
    }

    fn check_loss_operands(&self, pred: NodeId, target: NodeId, weight: Option<NodeId>) -> Result<()> {
        let shape = self.value(pred).shape();
        if self.value(target).shape() != shape {
            return Err(mismatch(format!(
                "loss operands {:?} vs {:?}",
                shape,
                self.value(target).shape()
            )));
        }
        if let Some(w) = weight {
            if self.value(w).shape() != shape {
                return Err(mismatch("loss weight shape differs from prediction".into()));
            }
        }
        Ok(())
    }

    /// Weighted mean of `f(pred - target)`; unweighted mean when `weight` is None.
    fn regression_loss(&self, pred: NodeId, target: NodeId, weight: Option<NodeId>, f: impl Fn(T) -> T) -> T {
        let p = self.value(pred).data();
        let t = self.value(target).data();
        match weight {
            None => {
                let sum: T = p.iter().zip(t).map(|(&a, &b)| f(a - b)).sum();
                sum / T::from_usize(p.len()).unwrap()
            }
            Some(w) => {
                let w = self.value(w).data();
                let denom: T = w.iter().copied().sum();
                if denom == T::zero() {
                    return T::zero();
                }
                let sum: T = p.iter().zip(t).zip(w).map(|((&a, &b), &c)| c * f(a - b)).sum();
                sum / denom
            }
        }
    }

    /// Mean absolute error, optionally weighted per element.
    pub fn l1_loss(&mut self, pred: NodeId, target: NodeId, weight: Option<NodeId>) -> Result<NodeId> {
        self.check_loss_operands(pred, target, weight)?;
        let v = self.regression_loss(pred, target, weight, |d| d.abs());
        let rg = self.requires_grad(pred);
        Ok(self.push(Tensor::scalar(v), Op::L1 { pred, target, weight }, rg))
    }

    /// Mean squared error, optionally weighted per element.
    pub fn l2_loss(&mut self, pred: NodeId, target: NodeId, weight: Option<NodeId>) -> Result<NodeId> {
        self.check_loss_operands(pred, target, weight)?;
        let v = self.regression_loss(pred, target, weight, |d| d * d);
        let rg = self.requires_grad(pred);
        Ok(self.push(Tensor::scalar(v), Op::L2 { pred, target, weight }, rg))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (batch, n_cls) = self.value(logits).dims2()?;
        if labels.len() != batch {
            return Err(mismatch(format!("{} labels for batch of {batch}", labels.len())));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= n_cls) {
            return Err(Error::LabelOutOfRange { label, n_cls });
        }
        let total: T = self
            .value(logits)
            .data()
            .chunks_exact(n_cls)
            .zip(labels)
            .map(|(row, &label)| neg_log_softmax(row, label))
            .sum();
        let v = total / T::from_usize(batch).unwrap();
        let rg = self.requires_grad(logits);
        Ok(self.push(
            Tensor::scalar(v),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse-mode gradients of the scalar node `loss` for every node that
    /// requires them.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(mismatch("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        if !self.requires_grad(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Param | Op::Constant) {
                continue;
            }
            let Some(gy) = grads[idx].take() else { continue };
            self.backprop_node(node, &gy, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn buffer(&self, id: NodeId) -> Option<Vec<T>> {
        self.wants(id).then(|| vec![T::zero(); self.value(id).len()])
    }

    fn deposit(&self, grads: &mut [Option<Tensor<T>>], id: NodeId, g: Vec<T>) -> Result<()> {
        let g = Tensor::from_vec(self.value(id).shape(), g)?;
        match &mut grads[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
        Ok(())
    }

    fn deposit_opt(&self, grads: &mut [Option<Tensor<T>>], id: Option<NodeId>, g: Option<Vec<T>>) -> Result<()> {
        if let (Some(id), Some(g)) = (id, g) {
            self.deposit(grads, id, g)?;
        }
        Ok(())
    }

    fn backprop_node(&self, node: &Node<T>, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let gyd = gy.data();
        match &node.op {
            Op::Constant | Op::Param => {}
            &Op::Conv { x, w, b, geom } | &Op::ConvTranspose { x, w, b, geom } => {
                let transposed = matches!(node.op, Op::ConvTranspose { .. });
                let d = self.conv_dims(x, w, transposed, &geom)?;
                let mut gx = self.buffer(x);
                let mut gw = self.buffer(w);
                let mut gb = b.and_then(|b| self.buffer(b));
                let (xv, wv) = (self.value(x).data(), self.value(w).data());
                let f = if transposed {
                    conv::conv_transpose_backward
                } else {
                    conv::conv_backward
                };
                f(xv, wv, gyd, &d, &geom, gx.as_deref_mut(), gw.as_deref_mut(), gb.as_deref_mut());
                self.deposit_opt(grads, Some(x), gx)?;
                self.deposit_opt(grads, Some(w), gw)?;
                self.deposit_opt(grads, b, gb)?;
            }
            &Op::Relu(x) => {
                let g = node
                    .value
                    .data()
                    .iter()
                    .zip(gyd)
                    .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
                    .collect();
                self.deposit(grads, x, g)?;
            }
            &Op::Tanh(x) => {
                let g = node
                    .value
                    .data()
                    .iter()
                    .zip(gyd)
                    .map(|(&y, &g)| g * (T::one() - y * y))
                    .collect();
                self.deposit(grads, x, g)?;
            }
            &Op::Sigmoid(x) => {
                let g = node
                    .value
                    .data()
                    .iter()
                    .zip(gyd)
                    .map(|(&y, &g)| g * y * (T::one() - y))
                    .collect();
                self.deposit(grads, x, g)?;
            }
            &Op::Add(a, b) => {
                for id in [a, b] {
                    if self.wants(id) {
                        self.deposit(grads, id, gyd.to_vec())?;
                    }
                }
            }
            &Op::Mul(a, b) => {
                for (id, other) in [(a, b), (b, a)] {
                    if self.wants(id) {
                        let g = self.value(other).data().iter().zip(gyd).map(|(&o, &g)| o * g).collect();
                        self.deposit(grads, id, g)?;
                    }
                }
            }
            &Op::Upsample { x, factor } => {
                let g = gyd.chunks_exact(factor).map(|w| w.iter().copied().sum()).collect();
                self.deposit(grads, x, g)?;
            }
            &Op::AvgPool { x, factor } => {
                let scale = T::one() / T::from_usize(factor).unwrap();
                let g = gyd
                    .iter()
                    .flat_map(|&g| std::iter::repeat_n(g * scale, factor))
                    .collect();
                self.deposit(grads, x, g)?;
            }
            &Op::Flatten(x) => {
                self.deposit(grads, x, gyd.to_vec())?;
            }
            &Op::Linear { x, w, b } => {
                let (batch, din) = self.value(x).dims2()?;
                let dout = self.value(b).len();
                if let Some(mut gx) = self.buffer(x) {
                    gemm(batch, dout, din, T::one(), MatRef::new(gyd, dout), MatRef::new(self.value(w).data(), dout).t(), T::zero(), &mut gx);
                    self.deposit(grads, x, gx)?;
                }
                if let Some(mut gw) = self.buffer(w) {
                    gemm(din, batch, dout, T::one(), MatRef::new(self.value(x).data(), din).t(), MatRef::new(gyd, dout), T::zero(), &mut gw);
                    self.deposit(grads, w, gw)?;
                }
                if let Some(mut gb) = self.buffer(b) {
                    for row in gyd.chunks_exact(dout) {
                        gb.iter_mut().zip(row).for_each(|(a, &g)| *a += g);
                    }
                    self.deposit(grads, b, gb)?;
                }
            }
            &Op::L1 { pred, target, weight } | &Op::L2 { pred, target, weight } => {
                let squared = matches!(node.op, Op::L2 { .. });
                let p = self.value(pred).data();
                let t = self.value(target).data();
                let w = weight.map(|w| self.value(w).data());
                let denom = match w {
                    Some(w) => w.iter().copied().sum(),
                    None => T::from_usize(p.len()).unwrap(),
                };
                let scale = if denom == T::zero() { T::zero() } else { gyd[0] / denom };
                let two = T::one() + T::one();
                let g = (0..p.len())
                    .map(|k| {
                        let d = p[k] - t[k];
                        // sign(0) = 0 for the l1 subgradient
                        let local = if squared { two * d } else if d > T::zero() { T::one() } else if d < T::zero() { -T::one() } else { T::zero() };
                        local * scale * w.map_or(T::one(), |w| w[k])
                    })
                    .collect();
                self.deposit(grads, pred, g)?;
            }
            Op::CrossEntropy { logits, labels } => {
                let (batch, n_cls) = self.value(*logits).dims2()?;
                let scale = gyd[0] / T::from_usize(batch).unwrap();
                let mut g = Vec::with_capacity(batch * n_cls);
                for (row, &label) in self.value(*logits).data().chunks_exact(n_cls).zip(labels) {
                    let lse = log_sum_exp(row);
                    for (c, &z) in row.iter().enumerate() {
                        let p = (z - lse).exp();
                        let onehot = if c == label { T::one() } else { T::zero() };
                        g.push((p - onehot) * scale);
                    }
                }
                self.deposit(grads, *logits, g)?;
            }
        }
        Ok(())
    }
}

fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let (max, tail) = split_log_sum_exp(row);
    max + tail
}

/// `-log softmax(row)[label]`, written so a dominant correct logit does not
/// cancel to zero.
fn neg_log_softmax<T: Real>(row: &[T], label: usize) -> T {
    let (max, tail) = split_log_sum_exp(row);
    (max - row[label]) + tail
}

/// `(max, ln(1 + sum of the other exp(z - max)))`.
fn split_log_sum_exp<T: Real>(row: &[T]) -> (T, T) {
    let (arg, max) = row
        .iter()
        .copied()
        .enumerate()
        .fold((0, T::neg_infinity()), |best, (i, z)| if z > best.1 { (i, z) } else { best });
    let rest: T = row
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, &z)| (z - max).exp())
        .sum();
    (max, rest.ln_1p())
}
