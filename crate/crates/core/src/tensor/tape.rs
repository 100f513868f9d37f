use std::cell::RefCell;

use crate::error::{Error, Result};

use super::Tensor;

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Concat { inputs: Vec<NodeId>, axis: usize },
    Slice { input: NodeId, axis: usize, start: usize },
    Swish(NodeId),
    Conv1d { input: NodeId, kernel: NodeId, bias: NodeId },
    ScatterAdd { input: NodeId, index: Vec<usize> },
    Gather { input: NodeId, index: Vec<usize> },
    Sum(NodeId),
    Mean(NodeId),
    Mse(NodeId, NodeId),
    Transpose(NodeId),
    Reshape(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Swish(_) => "swish",
            Op::Conv1d { .. } => "conv1d",
            Op::ScatterAdd { .. } => "scatter_add",
            Op::Gather { .. } => "gather",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Mse(..) => "mse",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Mse(a, b) => vec![*a, *b],
            Op::Scale(a, _) | Op::Swish(a) | Op::Sum(a) | Op::Mean(a) | Op::Transpose(a) | Op::Reshape(a) => vec![*a],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::Slice { input, .. } | Op::ScatterAdd { input, .. } | Op::Gather { input, .. } => vec![*input],
            Op::Conv1d { input, kernel, bias } => vec![*input, *kernel, *bias],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a computation. Nodes are only ever created from
/// existing nodes, so the insertion order is a topological order.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.shape())
    }
}

/// Structural summary of one tape node, for comparing recordings.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeSummary {
    pub op: &'static str,
    pub inputs: Vec<NodeId>,
    pub value: Tensor,
    pub requires_grad: bool,
}

/// Gradients of a scalar with respect to every node that requires them.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.get_id(var.id)
    }

    pub fn get_id(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of its shape when none flowed to it.
    pub fn get_or_zero(&self, var: Var<'_>) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(&var.shape()))
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

/// `b` broadcasts against `a` when its shape is a suffix of `a`'s.
fn broadcast_ok(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn derived(&self, value: Tensor, op: Op) -> Var<'_> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            op.inputs().iter().any(|&i| nodes[i].requires_grad)
        };
        self.push(value, op, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn summary(&self) -> Vec<NodeSummary> {
        self.nodes
            .borrow()
            .iter()
            .map(|n| NodeSummary {
                op: n.op.name(),
                inputs: n.op.inputs(),
                value: n.value.clone(),
                requires_grad: n.requires_grad,
            })
            .collect()
    }

    /// Reverse sweep from a one-element `loss`. Each node is visited once.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let shape = nodes[loss.id].value.shape().to_vec();
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::NotScalar(shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        if nodes[loss.id].requires_grad {
            grads[loss.id] = Some(vec![1.0]);
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            backprop_node(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| g.map(|g| Tensor::raw(nodes[id].value.shape().to_vec(), g)))
            .collect();
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: NodeId, contribution: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(g) => g.iter_mut().zip(contribution).for_each(|(a, b)| *a += b),
        slot => *slot = Some(contribution),
    }
}

/// Sums a full-shape gradient over the leading dimensions `b` was broadcast along.
fn reduce_broadcast(g: &[f64], b_len: usize) -> Vec<f64> {
    let mut out = vec![0.0; b_len];
    for chunk in g.chunks_exact(b_len) {
        out.iter_mut().zip(chunk).for_each(|(o, v)| *o += v);
    }
    out
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            row.iter_mut().zip(brow).for_each(|(o, &bv)| *o += aip * bv);
        }
    }
    out
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// `(outer, axis_len, inner)` view of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn backprop_node(nodes: &[Node], id: NodeId, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    let val = |i: NodeId| &nodes[i].value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            if nodes[*a].requires_grad {
                let bt = transpose_raw(bv.data(), k, n);
                accumulate(grads, nodes, *a, matmul_raw(g, &bt, m, n, k));
            }
            if nodes[*b].requires_grad {
                let at = transpose_raw(av.data(), m, k);
                accumulate(grads, nodes, *b, matmul_raw(&at, g, k, m, n));
            }
        }
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            accumulate(grads, nodes, *a, g.to_vec());
            if nodes[*b].requires_grad {
                let mut gb = reduce_broadcast(g, val(*b).numel());
                if sign < 0.0 {
                    gb.iter_mut().for_each(|v| *v = -*v);
                }
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            let nb = bv.len();
            if nodes[*a].requires_grad {
                let ga = g.iter().enumerate().map(|(i, gi)| gi * bv[i % nb]).collect();
                accumulate(grads, nodes, *a, ga);
            }
            if nodes[*b].requires_grad {
                let prod: Vec<f64> = g.iter().zip(av).map(|(gi, ai)| gi * ai).collect();
                accumulate(grads, nodes, *b, reduce_broadcast(&prod, nb));
            }
        }
        Op::Scale(a, c) => accumulate(grads, nodes, *a, g.iter().map(|v| v * c).collect()),
        Op::Concat { inputs, axis } => {
            let (outer, total, inner) = split_axis(node.value.shape(), *axis);
            let mut offset = 0;
            for &inp in inputs {
                let len = val(inp).shape()[*axis];
                if nodes[inp].requires_grad {
                    let mut gi = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        gi.extend_from_slice(&g[base..base + len * inner]);
                    }
                    accumulate(grads, nodes, inp, gi);
                }
                offset += len;
            }
        }
        Op::Slice { input, axis, start } => {
            let (outer, len, inner) = split_axis(node.value.shape(), *axis);
            let full = val(*input).shape()[*axis];
            let mut gi = vec![0.0; val(*input).numel()];
            for o in 0..outer {
                let dst = (o * full + start) * inner;
                gi[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            accumulate(grads, nodes, *input, gi);
        }
        Op::Swish(a) => {
            let ga = g
                .iter()
                .zip(val(*a).data())
                .map(|(gi, &x)| {
                    let s = sigmoid(x);
                    gi * s * (1.0 + x * (1.0 - s))
                })
                .collect();
            accumulate(grads, nodes, *a, ga);
        }
        Op::Conv1d { input, kernel, bias } => {
            let (x, w) = (val(*input), val(*kernel));
            let (n, cin, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let (cout, ks) = (w.shape()[0], w.shape()[2]);
            let pad = ks / 2;
            let mut gx = vec![0.0; x.numel()];
            let mut gw = vec![0.0; w.numel()];
            let mut gb = vec![0.0; cout];
            let (xd, wd) = (x.data(), w.data());
            for b in 0..n {
                for co in 0..cout {
                    let grow = &g[(b * cout + co) * len..(b * cout + co + 1) * len];
                    gb[co] += grow.iter().sum::<f64>();
                    for ci in 0..cin {
                        let xrow = &xd[(b * cin + ci) * len..(b * cin + ci + 1) * len];
                        let gxrow = &mut gx[(b * cin + ci) * len..(b * cin + ci + 1) * len];
                        for k in 0..ks {
                            let wi = (co * cin + ci) * ks + k;
                            let lo = pad.saturating_sub(k);
                            let hi = (len + pad).saturating_sub(k).min(len);
                            let mut acc = 0.0;
                            for l in lo..hi {
                                let src = l + k - pad;
                                acc += grow[l] * xrow[src];
                                gxrow[src] += grow[l] * wd[wi];
                            }
                            gw[wi] += acc;
                        }
                    }
                }
            }
            accumulate(grads, nodes, *input, gx);
            accumulate(grads, nodes, *kernel, gw);
            accumulate(grads, nodes, *bias, gb);
        }
        Op::ScatterAdd { input, index } => {
            let width = node.value.shape()[1];
            let mut gi = Vec::with_capacity(index.len() * width);
            for &r in index {
                gi.extend_from_slice(&g[r * width..(r + 1) * width]);
            }
            accumulate(grads, nodes, *input, gi);
        }
        Op::Gather { input, index } => {
            let width = node.value.shape()[1];
            let mut gi = vec![0.0; val(*input).numel()];
            for (e, &r) in index.iter().enumerate() {
                gi[r * width..(r + 1) * width]
                    .iter_mut()
                    .zip(&g[e * width..(e + 1) * width])
                    .for_each(|(a, b)| *a += b);
            }
            accumulate(grads, nodes, *input, gi);
        }
        Op::Sum(a) => accumulate(grads, nodes, *a, vec![g[0]; val(*a).numel()]),
        Op::Mean(a) => {
            let n = val(*a).numel();
            accumulate(grads, nodes, *a, vec![g[0] / n as f64; n]);
        }
        Op::Mse(p, t) => {
            let (pv, tv) = (val(*p).data(), val(*t).data());
            let scale = 2.0 * g[0] / pv.len() as f64;
            let diff: Vec<f64> = pv.iter().zip(tv).map(|(a, b)| scale * (a - b)).collect();
            if nodes[*t].requires_grad {
                accumulate(grads, nodes, *t, diff.iter().map(|v| -v).collect());
            }
            accumulate(grads, nodes, *p, diff);
        }
        Op::Transpose(a) => {
            let s = val(*a).shape();
            accumulate(grads, nodes, *a, transpose_raw(g, s[1], s[0]));
        }
        Op::Reshape(a) => accumulate(grads, nodes, *a, g.to_vec()),
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn check_same_tape(&self, other: &Var<'_>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars belong to different tapes");
    }

    fn with_values<R>(&self, others: &[Var<'_>], f: impl FnOnce(&Tensor, &[&Tensor]) -> R) -> R {
        let nodes = self.tape.nodes.borrow();
        let rest: Vec<&Tensor> = others.iter().map(|o| &nodes[o.id].value).collect();
        f(&nodes[self.id].value, &rest)
    }

    /// `[m, k] x [k, n]`.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.check_same_tape(&other);
        let value = self.with_values(&[other], |a, r| {
            let b = r[0];
            if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(shape_err("matmul", a.shape(), b.shape()));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            Ok(Tensor::raw(vec![m, n], matmul_raw(a.data(), b.data(), m, k, n)))
        })?;
        Ok(self.tape.derived(value, Op::MatMul(self.id, other.id)))
    }

    fn broadcast_binary(self, other: Var<'t>, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check_same_tape(&other);
        self.with_values(&[other], |a, r| {
            let b = r[0];
            if !broadcast_ok(a.shape(), b.shape()) {
                return Err(shape_err(name, a.shape(), b.shape()));
            }
            let nb = b.numel();
            let data = a.data().iter().enumerate().map(|(i, &x)| f(x, b.data()[i % nb])).collect();
            Ok(Tensor::raw(a.shape().to_vec(), data))
        })
    }

    /// Elementwise sum; `other` may omit leading dimensions and is broadcast along them.
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let value = self.broadcast_binary(other, "add", |a, b| a + b)?;
        Ok(self.tape.derived(value, Op::Add(self.id, other.id)))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let value = self.broadcast_binary(other, "sub", |a, b| a - b)?;
        Ok(self.tape.derived(value, Op::Sub(self.id, other.id)))
    }

    /// Elementwise product with the same broadcasting as [`Var::add`].
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let value = self.broadcast_binary(other, "mul", |a, b| a * b)?;
        Ok(self.tape.derived(value, Op::Mul(self.id, other.id)))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let value = self.with_values(&[], |a, _| {
            Tensor::raw(a.shape().to_vec(), a.data().iter().map(|v| v * c).collect())
        });
        self.tape.derived(value, Op::Scale(self.id, c))
    }

    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = *parts.first().ok_or_else(|| Error::ShapeMismatch("concat of nothing".into()))?;
        for p in parts {
            first.check_same_tape(p);
        }
        let value = first.with_values(parts, |a, all| {
            if axis >= a.rank() {
                return Err(Error::ShapeMismatch(format!("concat axis {axis} on rank {}", a.rank())));
            }
            for t in all {
                let ok = t.rank() == a.rank()
                    && t.shape().iter().zip(a.shape()).enumerate().all(|(d, (x, y))| d == axis || x == y);
                if !ok {
                    return Err(shape_err("concat", a.shape(), t.shape()));
                }
            }
            let total: usize = all.iter().map(|t| t.shape()[axis]).sum();
            let (outer, _, inner) = split_axis(a.shape(), axis);
            let mut data = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for t in all {
                    let len = t.shape()[axis] * inner;
                    data.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
                }
            }
            let mut shape = a.shape().to_vec();
            shape[axis] = total;
            Ok(Tensor::raw(shape, data))
        })?;
        let inputs = parts.iter().map(|p| p.id).collect();
        Ok(first.tape.derived(value, Op::Concat { inputs, axis }))
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let value = self.with_values(&[], |a, _| {
            if axis >= a.rank() || start + len > a.shape()[axis] {
                return Err(Error::IndexOutOfBounds {
                    index: start + len,
                    len: a.shape().get(axis).copied().unwrap_or(0),
                });
            }
            let (outer, full, inner) = split_axis(a.shape(), axis);
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * full + start) * inner;
                data.extend_from_slice(&a.data()[base..base + len * inner]);
            }
            let mut shape = a.shape().to_vec();
            shape[axis] = len;
            Ok(Tensor::raw(shape, data))
        })?;
        Ok(self.tape.derived(value, Op::Slice { input: self.id, axis, start }))
    }

    /// `x * sigmoid(x)`.
    pub fn swish(self) -> Var<'t> {
        let value = self.with_values(&[], |a, _| {
            Tensor::raw(a.shape().to_vec(), a.data().iter().map(|&x| x * sigmoid(x)).collect())
        });
        self.tape.derived(value, Op::Swish(self.id))
    }

    /// Stride-1 convolution with zero padding that preserves length.
    /// Input `[batch, c_in, len]`, kernel `[c_out, c_in, k]` with odd `k`, bias `[c_out]`.
    pub fn conv1d(self, kernel: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        self.check_same_tape(&kernel);
        self.check_same_tape(&bias);
        let value = self.with_values(&[kernel, bias], |x, r| {
            let (w, b) = (r[0], r[1]);
            if x.rank() != 3 || w.rank() != 3 || w.shape()[1] != x.shape()[1] || w.shape()[2] % 2 == 0 {
                return Err(shape_err("conv1d", x.shape(), w.shape()));
            }
            if b.shape() != [w.shape()[0]] {
                return Err(shape_err("conv1d bias", w.shape(), b.shape()));
            }
            let (n, cin, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let (cout, ks) = (w.shape()[0], w.shape()[2]);
            let pad = ks / 2;
            let mut out = vec![0.0; n * cout * len];
            for bi in 0..n {
                for co in 0..cout {
                    let orow = &mut out[(bi * cout + co) * len..(bi * cout + co + 1) * len];
                    orow.iter_mut().for_each(|o| *o = b.data()[co]);
                    for ci in 0..cin {
                        let xrow = &x.data()[(bi * cin + ci) * len..(bi * cin + ci + 1) * len];
                        for k in 0..ks {
                            let wv = w.data()[(co * cin + ci) * ks + k];
                            let lo = pad.saturating_sub(k);
                            let hi = (len + pad).saturating_sub(k).min(len);
                            for l in lo..hi {
                                orow[l] += wv * xrow[l + k - pad];
                            }
                        }
                    }
                }
            }
            Ok(Tensor::raw(vec![n, cout, len], out))
        })?;
        Ok(self.tape.derived(value, Op::Conv1d { input: self.id, kernel: kernel.id, bias: bias.id }))
    }

    /// Row `e` of a `[E, D]` input is added into output row `index[e]` of `[rows, D]`.
    pub fn scatter_add(self, index: &[usize], rows: usize) -> Result<Var<'t>> {
        let value = self.with_values(&[], |a, _| {
            if a.rank() != 2 || a.shape()[0] != index.len() {
                return Err(Error::ShapeMismatch(format!(
                    "scatter_add: {} indices for input {:?}",
                    index.len(),
                    a.shape()
                )));
            }
            let width = a.shape()[1];
            let mut out = vec![0.0; rows * width];
            for (e, &r) in index.iter().enumerate() {
                if r >= rows {
                    return Err(Error::IndexOutOfBounds { index: r, len: rows });
                }
                out[r * width..(r + 1) * width]
                    .iter_mut()
                    .zip(&a.data()[e * width..(e + 1) * width])
                    .for_each(|(o, v)| *o += v);
            }
            Ok(Tensor::raw(vec![rows, width], out))
        })?;
        Ok(self.tape.derived(value, Op::ScatterAdd { input: self.id, index: index.to_vec() }))
    }

    /// Output row `e` is input row `index[e]`.
    pub fn gather(self, index: &[usize]) -> Result<Var<'t>> {
        let value = self.with_values(&[], |a, _| {
            if a.rank() != 2 {
                return Err(Error::ShapeMismatch(format!("gather needs a matrix, got {:?}", a.shape())));
            }
            let (rows, width) = (a.shape()[0], a.shape()[1]);
            let mut out = Vec::with_capacity(index.len() * width);
            for &r in index {
                if r >= rows {
                    return Err(Error::IndexOutOfBounds { index: r, len: rows });
                }
                out.extend_from_slice(&a.data()[r * width..(r + 1) * width]);
            }
            Ok(Tensor::raw(vec![index.len(), width], out))
        })?;
        Ok(self.tape.derived(value, Op::Gather { input: self.id, index: index.to_vec() }))
    }

    pub fn sum(self) -> Var<'t> {
        let value = self.with_values(&[], |a, _| Tensor::scalar(a.data().iter().sum()));
        self.tape.derived(value, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let value = self.with_values(&[], |a, _| Tensor::scalar(a.data().iter().sum::<f64>() / a.numel() as f64));
        self.tape.derived(value, Op::Mean(self.id))
    }

    /// Mean squared difference over all elements.
    pub fn mse(self, target: Var<'t>) -> Result<Var<'t>> {
        self.check_same_tape(&target);
        let value = self.with_values(&[target], |p, r| {
            let t = r[0];
            if p.shape() != t.shape() {
                return Err(shape_err("mse", p.shape(), t.shape()));
            }
            let s: f64 = p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum();
            Ok(Tensor::scalar(s / p.numel() as f64))
        })?;
        Ok(self.tape.derived(value, Op::Mse(self.id, target.id)))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let value = self.with_values(&[], |a, _| {
            if a.rank() != 2 {
                return Err(Error::ShapeMismatch(format!("transpose needs a matrix, got {:?}", a.shape())));
            }
            let (m, n) = (a.shape()[0], a.shape()[1]);
            Ok(Tensor::raw(vec![n, m], transpose_raw(a.data(), m, n)))
        })?;
        Ok(self.tape.derived(value, Op::Transpose(self.id)))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let value = self.with_values(&[], |a, _| a.reshape(shape))?;
        Ok(self.tape.derived(value, Op::Reshape(self.id)))
    }

    /// Same value as a fresh leaf; nothing upstream receives gradient through it.
    pub fn detach(self) -> Var<'t> {
        self.tape.constant(self.value())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn square_derivative() {
        let tape = Tape::new();
        let x = tape.param(Tensor::from_vec(vec![3.0]));
        let loss = x.mul(x).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);
        assert_eq!(g.get(loss).unwrap().data(), &[1.0]);
    }

    #[test]
    fn mse_of_self_is_zero() {
        let tape = Tape::new();
        let x = tape.param(t(&[2, 2], &[1.0, -2.0, 0.5, 3.0]));
        let loss = x.mse(x).unwrap();
        assert_eq!(loss.value().item(), Some(0.0));
        let g = tape.backward(loss).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sum_gives_ones() {
        let tape = Tape::new();
        let w = tape.param(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let g = tape.backward(w.sum()).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn least_squares_gradient() {
        // loss = mean((Xw - y)^2), grad = 2 X^T (Xw - y) / n
        let x = [1.0, 2.0, 1.0, -1.0, 1.0, 0.5];
        let y = [3.0, 0.0, 1.0];
        let w0 = [0.5, 2.0];
        let tape = Tape::new();
        let xv = tape.constant(t(&[3, 2], &x));
        let w = tape.param(t(&[2, 1], &w0));
        let yv = tape.constant(t(&[3, 1], &y));
        let loss = xv.matmul(w).unwrap().mse(yv).unwrap();
        let g = tape.backward(loss).unwrap();
        let r: Vec<f64> = (0..3).map(|i| x[2 * i] * w0[0] + x[2 * i + 1] * w0[1] - y[i]).collect();
        let expect: Vec<f64> = (0..2).map(|j| 2.0 * (0..3).map(|i| x[2 * i + j] * r[i]).sum::<f64>() / 3.0).collect();
        for (a, b) in g.get(w).unwrap().data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn detach_blocks_gradient() {
        let tape = Tape::new();
        let w = tape.param(Tensor::from_vec(vec![1.5, -0.5]));
        let f = w.mul(w).unwrap().swish();
        let loss = f.detach().sum();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(w).is_none());
        assert!(!loss.requires_grad());
    }

    #[test]
    fn backward_requires_scalar() {
        let tape = Tape::new();
        let w = tape.param(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(w), Err(Error::NotScalar(_))));
    }

    #[test]
    fn shape_and_index_errors() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(a.matmul(b), Err(Error::ShapeMismatch(_))));
        assert!(a.add(tape.constant(Tensor::zeros(&[2]))).is_err());
        assert!(a.add(tape.constant(Tensor::zeros(&[3]))).is_ok());
        assert!(matches!(a.gather(&[0, 2]), Err(Error::IndexOutOfBounds { index: 2, len: 2 })));
        assert!(matches!(a.scatter_add(&[0, 5], 3), Err(Error::IndexOutOfBounds { .. })));
        assert!(a.scatter_add(&[0], 3).is_err());
        assert!(a.slice(1, 2, 2).is_err());
        assert!(Var::concat(&[a, tape.constant(Tensor::zeros(&[3, 2]))], 1).is_err());
        assert!(a.mse(tape.constant(Tensor::zeros(&[3, 2]))).is_err());
    }

    #[test]
    fn broadcast_add_and_concat_values() {
        let tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.constant(t(&[2], &[10.0, 20.0]));
        assert_eq!(a.add(b).unwrap().value().data(), &[11.0, 22.0, 13.0, 24.0]);
        let c = Var::concat(&[a, tape.constant(t(&[2, 1], &[5.0, 6.0]))], 1).unwrap();
        assert_eq!(c.shape(), vec![2, 3]);
        assert_eq!(c.value().data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let r = Var::concat(&[a, a], 0).unwrap();
        assert_eq!(r.value().data(), &[1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(c.slice(1, 1, 2).unwrap().value().data(), &[2.0, 5.0, 4.0, 6.0]);
        assert_eq!(a.transpose().unwrap().value().data(), &[1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn conv1d_zero_padding() {
        let tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 4], &[1.0, 2.0, 3.0, 4.0]));
        let w = tape.constant(t(&[1, 1, 3], &[1.0, 10.0, 100.0]));
        let b = tape.constant(t(&[1], &[0.5]));
        let y = x.conv1d(w, b).unwrap();
        // y[l] = x[l-1] + 10 x[l] + 100 x[l+1] + 0.5
        assert_eq!(y.value().data(), &[210.5, 321.5, 432.5, 43.5]);
    }
}
