//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in creation order, so the tape is already a
//! topological order. [`Graph::backward`] walks it once in reverse and adds the
//! result into the persistent gradients of the leaf nodes.

use std::sync::Arc;

use super::kernels::{self, ConvLayout, SkeletalDims};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Joint map shared by pooling and unpooling nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct JointMap {
    pub map: Vec<usize>,
    pub groups: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
    Tanh(Var),
    Reshape(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    IndexSelect { input: Var, axis: usize, indices: Vec<usize> },
    Repeat0 { input: Var, times: usize },
    NormalizeRows(Var),
    QuatMul(Var, Var),
    QuatRotate(Var, Var),
    Conv1d { input: Var, weight: Var, bias: Var, stride: usize, padding: usize },
    SkeletalConv { input: Var, weight: Var, bias: Var, layout: Arc<ConvLayout> },
    Pool { input: Var, map: Arc<JointMap>, stride: usize },
    Unpool { input: Var, map: Arc<JointMap>, factor: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// Persistent accumulator, only populated for leaves.
    grad: Option<Tensor>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `(outer, axis extent, inner)` split of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

enum Broadcast {
    Same,
    LeftScalar,
    RightScalar,
}

fn broadcast(a: &Tensor, b: &Tensor, what: &str) -> Result<Broadcast> {
    if a.shape() == b.shape() {
        Ok(Broadcast::Same)
    } else if a.rank() == 0 {
        Ok(Broadcast::LeftScalar)
    } else if b.rank() == 0 {
        Ok(Broadcast::RightScalar)
    } else {
        Err(Error::ShapeMismatch(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad: false, grad: None });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is accumulated by [`Graph::backward`].
    pub fn param(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad: true, grad: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, `None` before any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.nodes[v.0].grad.take()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    fn binary(&self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = match broadcast(ta, tb, what)? {
            Broadcast::Same => ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect(),
            Broadcast::LeftScalar => tb.data().iter().map(|y| f(ta.item(), *y)).collect(),
            Broadcast::RightScalar => ta.data().iter().map(|x| f(*x, tb.item())).collect(),
        };
        let shape = if ta.rank() == 0 { tb.shape() } else { ta.shape() };
        Tensor::new(shape.to_vec(), data)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a);
        let v = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x * s).collect()).unwrap();
        self.push(v, Op::Scale(a, s), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::ShapeMismatch("mean of an empty tensor".into()));
        }
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        Ok(self.push(v, Op::Mean(a), &[a]))
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(ta, tb, "mse")?;
        if ta.is_empty() {
            return Err(Error::ShapeMismatch("mse of empty tensors".into()));
        }
        let s: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        let v = Tensor::scalar(s / ta.len() as f64);
        Ok(self.push(v, Op::Mse(a, b), &[a, b]))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x.tanh()).collect()).unwrap();
        self.push(v, Op::Tanh(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a), &[a]))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self.value(*inputs.first().ok_or_else(|| Error::ShapeMismatch("concat of nothing".into()))?);
        if axis >= first.rank() {
            return Err(Error::ShapeMismatch(format!("concat axis {axis} on rank {}", first.rank())));
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = 0;
        for &v in inputs {
            let s = self.shape(v);
            let ok = s.len() == shape.len() && s.iter().enumerate().all(|(i, &e)| i == axis || e == shape[i]);
            if !ok {
                return Err(Error::ShapeMismatch(format!("concat: {:?} vs {:?}", s, first.shape())));
            }
            shape[axis] += s[axis];
        }
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Concat { inputs: inputs.to_vec(), axis }, inputs))
    }

    /// Gathers `indices` along `axis` (repeats allowed).
    pub fn index_select(&mut self, a: Var, axis: usize, indices: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if axis >= t.rank() {
            return Err(Error::ShapeMismatch(format!("index_select axis {axis} on rank {}", t.rank())));
        }
        let (outer, extent, inner) = split_axis(t.shape(), axis);
        if let Some(&bad) = indices.iter().find(|&&i| i >= extent) {
            return Err(Error::ShapeMismatch(format!("index {bad} out of range {extent}")));
        }
        let mut data = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices {
                let start = (o * extent + i) * inner;
                data.extend_from_slice(&t.data()[start..start + inner]);
            }
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = indices.len();
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::IndexSelect { input: a, axis, indices: indices.to_vec() }, &[a]))
    }

    /// Channel range `[start, start + len)` of the last axis.
    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let axis = self.value(a).rank().checked_sub(1).ok_or_else(|| Error::ShapeMismatch("slice of scalar".into()))?;
        let idx: Vec<usize> = (start..start + len).collect();
        self.index_select(a, axis, &idx)
    }

    /// Stacks `times` copies along a new leading extent: `[1, ...] -> [times, ...]`.
    pub fn repeat0(&mut self, a: Var, times: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() == 0 || t.shape()[0] != 1 {
            return Err(Error::ShapeMismatch(format!("repeat0 needs leading extent 1, got {:?}", t.shape())));
        }
        let mut shape = t.shape().to_vec();
        shape[0] = times;
        let data = t.data().repeat(times);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Repeat0 { input: a, times }, &[a]))
    }

    /// Divides every last-axis row by its Euclidean norm.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let width = *t.shape().last().ok_or_else(|| Error::ShapeMismatch("normalize of scalar".into()))?;
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(width) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(n > crate::quat::MIN_NORM) {
                return Err(Error::ZeroQuaternion(n));
            }
            row.iter_mut().for_each(|v| *v /= n);
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(value, Op::NormalizeRows(a), &[a]))
    }

    /// Row-wise Hamilton product of `[.., 4]` tensors.
    pub fn quat_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(ta, tb, "quat_mul")?;
        if ta.shape().last() != Some(&4) {
            return Err(Error::ShapeMismatch(format!("quat_mul needs last extent 4, got {:?}", ta.shape())));
        }
        let mut data = Vec::with_capacity(ta.len());
        for (p, q) in ta.data().chunks(4).zip(tb.data().chunks(4)) {
            data.extend_from_slice(&hamilton(p, q));
        }
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, Op::QuatMul(a, b), &[a, b]))
    }

    /// Rotates `[.., 3]` rows of `v` by the matching `[.., 4]` rows of `q`.
    /// Uses the unit-quaternion rotation formula; `q` must be normalized.
    pub fn quat_rotate(&mut self, q: Var, v: Var) -> Result<Var> {
        let (tq, tv) = (self.value(q), self.value(v));
        if tq.shape().last() != Some(&4) || tv.shape().last() != Some(&3) || tq.len() / 4 != tv.len() / 3 {
            return Err(Error::ShapeMismatch(format!("quat_rotate: {:?} and {:?}", tq.shape(), tv.shape())));
        }
        let mut data = Vec::with_capacity(tv.len());
        for (p, x) in tq.data().chunks(4).zip(tv.data().chunks(3)) {
            data.extend_from_slice(&rotate(p, x));
        }
        let value = Tensor::new(tv.shape().to_vec(), data)?;
        Ok(self.push(value, Op::QuatRotate(q, v), &[q, v]))
    }

    /// `input: [T, C_in]`, `weight: [C_out, C_in, K]`, `bias: [C_out]` -> `[T', C_out]`.
    pub fn conv1d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let (&[t_len, c_in], &[c_out, wc, k], &[bc]) = (x.shape(), w.shape(), b.shape()) else {
            return Err(Error::ShapeMismatch(format!(
                "conv1d: input {:?}, weight {:?}, bias {:?}",
                x.shape(),
                w.shape(),
                b.shape()
            )));
        };
        if k % 2 == 0 {
            return Err(Error::InvalidKernel(k));
        }
        if wc != c_in || bc != c_out || t_len == 0 {
            return Err(Error::ShapeMismatch(format!("conv1d: input {:?}, weight {:?}, bias {:?}", x.shape(), w.shape(), b.shape())));
        }
        let t_out = kernels::conv1d_out_len(t_len, k, stride, padding)
            .ok_or_else(|| Error::ShapeMismatch(format!("conv1d: T={t_len} too short for K={k}, padding={padding}")))?;
        let data = kernels::conv1d_forward(x.data(), t_len, c_in, w.data(), b.data(), c_out, k, stride, padding);
        let value = Tensor::new(vec![t_out, c_out], data)?;
        Ok(self.push(value, Op::Conv1d { input, weight, bias, stride, padding }, &[input, weight, bias]))
    }

    /// `input: [T, J, C_in]`, `weight: [blocks, C_out, C_in, K]`, `bias: [J, C_out]`.
    pub fn skeletal_conv(&mut self, input: Var, weight: Var, bias: Var, layout: &Arc<ConvLayout>) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let (&[t_len, joints, c_in], &[blocks, c_out, wc, k], &[bj, bc]) = (x.shape(), w.shape(), b.shape()) else {
            return Err(Error::ShapeMismatch(format!(
                "skeletal_conv: input {:?}, weight {:?}, bias {:?}",
                x.shape(),
                w.shape(),
                b.shape()
            )));
        };
        if k % 2 == 0 {
            return Err(Error::InvalidKernel(k));
        }
        if joints != layout.joints() || blocks != layout.blocks() || bj != joints {
            return Err(Error::AdjacencyMismatch(format!(
                "{} joints / {} blocks in adjacency, input has {joints} joints, weight has {blocks} blocks, bias {bj}",
                layout.joints(),
                layout.blocks()
            )));
        }
        if wc != c_in || bc != c_out {
            return Err(Error::ShapeMismatch(format!("skeletal_conv channels: input {c_in}, weight {wc}->{c_out}, bias {bc}")));
        }
        let dims = SkeletalDims { t_len, c_in, c_out, k };
        let data = kernels::skeletal_conv_forward(x.data(), layout, w.data(), b.data(), &dims);
        let value = Tensor::new(vec![t_len, joints, c_out], data)?;
        Ok(self.push(value, Op::SkeletalConv { input, weight, bias, layout: layout.clone() }, &[input, weight, bias]))
    }

    /// `[T, J, C] -> [T / stride, groups, C]` by averaging.
    pub fn pool(&mut self, input: Var, map: &Arc<JointMap>, stride: usize) -> Result<Var> {
        let x = self.value(input);
        let &[t_len, joints, ch] = x.shape() else {
            return Err(Error::ShapeMismatch(format!("pool needs [T, J, C], got {:?}", x.shape())));
        };
        if joints != map.map.len() {
            return Err(Error::IncompleteMap(format!("map covers {} joints, input has {joints}", map.map.len())));
        }
        if stride == 0 || t_len % stride != 0 {
            return Err(Error::ShapeMismatch(format!("T={t_len} is not divisible by stride {stride}")));
        }
        let data = kernels::pool_forward(x.data(), t_len, &map.map, map.groups, ch, stride);
        let value = Tensor::new(vec![t_len / stride, map.groups, ch], data)?;
        Ok(self.push(value, Op::Pool { input, map: map.clone(), stride }, &[input]))
    }

    /// `[T, groups, C] -> [T * factor, J, C]` by copying.
    pub fn unpool(&mut self, input: Var, map: &Arc<JointMap>, factor: usize) -> Result<Var> {
        let x = self.value(input);
        let &[t_len, groups, ch] = x.shape() else {
            return Err(Error::ShapeMismatch(format!("unpool needs [T, J, C], got {:?}", x.shape())));
        };
        if groups != map.groups {
            return Err(Error::IncompleteMap(format!("map has {} groups, input has {groups}", map.groups)));
        }
        if factor == 0 {
            return Err(Error::ShapeMismatch("unpool factor must be positive".into()));
        }
        let data = kernels::unpool_forward(x.data(), t_len, &map.map, groups, ch, factor);
        let value = Tensor::new(vec![t_len * factor, map.map.len(), ch], data)?;
        Ok(self.push(value, Op::Unpool { input, map: map.clone(), factor }, &[input]))
    }

    /// Reverse pass from a scalar `loss`; leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if !shape.is_empty() {
            return Err(Error::NotScalar(shape.to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                match &mut self.nodes[i].grad {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
                continue;
            }
            for (input, contribution) in self.node_backward(i, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        Ok(())
    }

    fn like(&self, v: Var, data: Vec<f64>) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), data).expect("gradient matches input shape")
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of a broadcast operand given the per-element gradient.
    fn reduce_broadcast(&self, v: Var, per_elem: Vec<f64>) -> Tensor {
        if self.value(v).rank() == 0 && per_elem.len() != 1 {
            Tensor::scalar(per_elem.iter().sum())
        } else {
            self.like(v, per_elem)
        }
    }

    fn broadcast_value(&self, v: Var, n: usize) -> Vec<f64> {
        let t = self.value(v);
        if t.rank() == 0 {
            vec![t.item(); n]
        } else {
            t.data().to_vec()
        }
    }

    fn node_backward(&self, i: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let gd = g.data();
        match &self.nodes[i].op {
            Op::Leaf => vec![],
            &Op::Add(a, b) => vec![
                (a, self.reduce_broadcast(a, gd.to_vec())),
                (b, self.reduce_broadcast(b, gd.to_vec())),
            ],
            &Op::Sub(a, b) => vec![
                (a, self.reduce_broadcast(a, gd.to_vec())),
                (b, self.reduce_broadcast(b, gd.iter().map(|x| -x).collect())),
            ],
            &Op::Mul(a, b) => {
                let n = gd.len();
                let (va, vb) = (self.broadcast_value(a, n), self.broadcast_value(b, n));
                let mut out = Vec::new();
                if self.wants(a) {
                    out.push((a, self.reduce_broadcast(a, gd.iter().zip(&vb).map(|(g, y)| g * y).collect())));
                }
                if self.wants(b) {
                    out.push((b, self.reduce_broadcast(b, gd.iter().zip(&va).map(|(g, x)| g * x).collect())));
                }
                out
            }
            &Op::Scale(a, s) => vec![(a, self.like(a, gd.iter().map(|x| x * s).collect()))],
            &Op::Sum(a) => vec![(a, self.like(a, vec![g.item(); self.value(a).len()]))],
            &Op::Mean(a) => {
                let n = self.value(a).len();
                vec![(a, self.like(a, vec![g.item() / n as f64; n]))]
            }
            &Op::Mse(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let k = 2.0 * g.item() / ta.len() as f64;
                let d: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| k * (x - y)).collect();
                let mut out = Vec::new();
                if self.wants(b) {
                    out.push((b, self.like(b, d.iter().map(|v| -v).collect())));
                }
                out.push((a, self.like(a, d)));
                out
            }
            &Op::Tanh(a) => {
                let y = self.nodes[i].value.data();
                vec![(a, self.like(a, gd.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect()))]
            }
            &Op::Reshape(a) => vec![(a, self.like(a, gd.to_vec()))],
            Op::Concat { inputs, axis } => {
                let shape = self.nodes[i].value.shape();
                let (outer, _, inner) = split_axis(shape, *axis);
                let mut parts: Vec<Vec<f64>> = inputs.iter().map(|v| Vec::with_capacity(self.value(*v).len())).collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (k, v) in inputs.iter().enumerate() {
                        let chunk = self.shape(*v)[*axis] * inner;
                        parts[k].extend_from_slice(&gd[pos..pos + chunk]);
                        pos += chunk;
                    }
                }
                inputs.iter().zip(parts).map(|(v, p)| (*v, self.like(*v, p))).collect()
            }
            Op::IndexSelect { input, axis, indices } => {
                let (outer, extent, inner) = split_axis(self.shape(*input), *axis);
                let mut d = vec![0.0; outer * extent * inner];
                let mut pos = 0;
                for o in 0..outer {
                    for &idx in indices {
                        let start = (o * extent + idx) * inner;
                        for (dst, src) in d[start..start + inner].iter_mut().zip(&gd[pos..pos + inner]) {
                            *dst += src;
                        }
                        pos += inner;
                    }
                }
                vec![(*input, self.like(*input, d))]
            }
            &Op::Repeat0 { input, times } => {
                let n = self.value(input).len();
                let mut d = vec![0.0; n];
                for r in 0..times {
                    for (dst, src) in d.iter_mut().zip(&gd[r * n..(r + 1) * n]) {
                        *dst += src;
                    }
                }
                vec![(input, self.like(input, d))]
            }
            &Op::NormalizeRows(a) => {
                let x = self.value(a);
                let y = self.nodes[i].value.data();
                let width = *x.shape().last().unwrap();
                let mut d = vec![0.0; x.len()];
                for r in 0..x.len() / width {
                    let xs = &x.data()[r * width..(r + 1) * width];
                    let ys = &y[r * width..(r + 1) * width];
                    let gs = &gd[r * width..(r + 1) * width];
                    let n = xs.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let gy: f64 = gs.iter().zip(ys).map(|(g, y)| g * y).sum();
                    for k in 0..width {
                        d[r * width + k] = (gs[k] - ys[k] * gy) / n;
                    }
                }
                vec![(a, self.like(a, d))]
            }
            &Op::QuatMul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let mut da = vec![0.0; ta.len()];
                let mut db = vec![0.0; tb.len()];
                for r in 0..ta.len() / 4 {
                    let (p, q, gr) = (&ta.data()[4 * r..4 * r + 4], &tb.data()[4 * r..4 * r + 4], &gd[4 * r..4 * r + 4]);
                    // d(p*q)/dp^T g = g * conj(q),  d(p*q)/dq^T g = conj(p) * g
                    let qc = [q[0], -q[1], -q[2], -q[3]];
                    let pc = [p[0], -p[1], -p[2], -p[3]];
                    da[4 * r..4 * r + 4].copy_from_slice(&hamilton(gr, &qc));
                    db[4 * r..4 * r + 4].copy_from_slice(&hamilton(&pc, gr));
                }
                vec![(a, self.like(a, da)), (b, self.like(b, db))]
            }
            &Op::QuatRotate(q, v) => {
                let (tq, tv) = (self.value(q), self.value(v));
                let mut dq = vec![0.0; tq.len()];
                let mut dv = vec![0.0; tv.len()];
                for r in 0..tv.len() / 3 {
                    let (p, x, gr) = (&tq.data()[4 * r..4 * r + 4], &tv.data()[3 * r..3 * r + 3], &gd[3 * r..3 * r + 3]);
                    let (gq, gv) = rotate_backward(p, x, gr);
                    dq[4 * r..4 * r + 4].copy_from_slice(&gq);
                    dv[3 * r..3 * r + 3].copy_from_slice(&gv);
                }
                vec![(q, self.like(q, dq)), (v, self.like(v, dv))]
            }
            &Op::Conv1d { input, weight, bias, stride, padding } => {
                let (x, w) = (self.value(input), self.value(weight));
                let (t_len, c_in) = (x.shape()[0], x.shape()[1]);
                let (c_out, k) = (w.shape()[0], w.shape()[2]);
                let (dx, dw, db) = kernels::conv1d_backward(x.data(), t_len, c_in, w.data(), c_out, k, stride, padding, gd);
                vec![(input, self.like(input, dx)), (weight, self.like(weight, dw)), (bias, self.like(bias, db))]
            }
            Op::SkeletalConv { input, weight, bias, layout } => {
                let (x, w) = (self.value(*input), self.value(*weight));
                let dims = SkeletalDims { t_len: x.shape()[0], c_in: x.shape()[2], c_out: w.shape()[1], k: w.shape()[3] };
                let need_dx = self.wants(*input);
                let (dx, dw, db) = kernels::skeletal_conv_backward(x.data(), layout, w.data(), &dims, gd, need_dx);
                let mut out = vec![(*weight, self.like(*weight, dw)), (*bias, self.like(*bias, db))];
                if let Some(dx) = dx {
                    out.push((*input, self.like(*input, dx)));
                }
                out
            }
            Op::Pool { input, map, stride } => {
                let x = self.value(*input);
                let d = kernels::pool_backward(gd, x.shape()[0], &map.map, map.groups, x.shape()[2], *stride);
                vec![(*input, self.like(*input, d))]
            }
            Op::Unpool { input, map, factor } => {
                let x = self.value(*input);
                let d = kernels::unpool_backward(gd, x.shape()[0], &map.map, map.groups, x.shape()[2], *factor);
                vec![(*input, self.like(*input, d))]
            }
        }
    }
}

fn hamilton(a: &[f64], b: &[f64]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// `v + 2w (u x v) + 2 u x (u x v)` with `q = (w, u)`.
fn rotate(q: &[f64], v: &[f64]) -> [f64; 3] {
    let (w, u, v) = (q[0], [q[1], q[2], q[3]], [v[0], v[1], v[2]]);
    let c = cross(u, v);
    let cc = cross(u, c);
    [v[0] + 2.0 * (w * c[0] + cc[0]), v[1] + 2.0 * (w * c[1] + cc[1]), v[2] + 2.0 * (w * c[2] + cc[2])]
}

/// Vector-Jacobian product of [`rotate`] for output gradient `g`.
fn rotate_backward(q: &[f64], v: &[f64], g: &[f64]) -> ([f64; 4], [f64; 3]) {
    let (w, u, v, g) = (q[0], [q[1], q[2], q[3]], [v[0], v[1], v[2]], [g[0], g[1], g[2]]);
    let c = cross(u, v);
    // u x (u x v) = u (u.v) - v (u.u)
    let dw = 2.0 * dot3(g, c);
    // d/du of g.(2w u x v) = 2w (v x g)
    // d/du of g.(2(u (u.v) - v |u|^2)) = 2(g.u) v + 2(u.v) g - 4(g.v) u
    let vg = cross(v, g);
    let (gu, uv, gv) = (dot3(g, u), dot3(u, v), dot3(g, v));
    let du: [f64; 3] = std::array::from_fn(|k| 2.0 * w * vg[k] + 2.0 * gu * v[k] + 2.0 * uv * g[k] - 4.0 * gv * u[k]);
    // d/dv of g.(2w u x v) = 2w (g x u); d/dv of g.(2u(u.v) - 2v|u|^2) = 2(g.u) u - 2|u|^2 g
    let gxu = cross(g, u);
    let uu = dot3(u, u);
    let dv: [f64; 3] = std::array::from_fn(|k| g[k] + 2.0 * w * gxu[k] + 2.0 * gu * u[k] - 2.0 * uu * g[k]);
    ([dw, du[0], du[1], du[2]], dv)
}
