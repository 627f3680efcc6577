//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles in
//! creation order, which is a topological order by construction. A single
//! call to [`Graph::backward`] walks the tape in reverse and accumulates
//! gradients for every leaf that requires them.
//!
//! Elementwise binary operations broadcast with the usual trailing-dimension
//! rules; reductions over an axis remove that axis.

use std::cell::{Cell, Ref, RefCell};
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::dense::Tensor;
use super::params::{Gradients, ParamStore};
use crate::{Error, Result, Scalar};

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, S),
    Offset(usize),
    MatMul(usize, usize),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Softplus(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
    SumAxis(usize, usize),
    MeanAxis(usize, usize),
    LogSumExp(usize, usize),
    Concat(Vec<usize>, usize),
    Slice { input: usize, axis: usize, start: usize },
    Reshape(usize),
    Clamp(usize, S, S),
    Grl(usize, S),
    SelectRows(usize, Vec<usize>),
}

impl<S> Op<S> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::Offset(_) => "offset",
            Op::MatMul(..) => "matmul",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Softplus(_) => "softplus",
            Op::Square(_) => "square",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumAxis(..) => "sum_axis",
            Op::MeanAxis(..) => "mean_axis",
            Op::LogSumExp(..) => "logsumexp",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape(_) => "reshape",
            Op::Clamp(..) => "clamp",
            Op::Grl(..) => "grl",
            Op::SelectRows(..) => "select_rows",
        }
    }
}

struct Node<S> {
    shape: Vec<usize>,
    value: Vec<S>,
    op: Op<S>,
    requires_grad: bool,
    param: Option<usize>,
}

/// Recording of one forward pass.
pub struct Graph<S> {
    nodes: RefCell<Vec<Node<S>>>,
    consumed: Cell<bool>,
    non_finite: Cell<Option<usize>>,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, S> {
    graph: &'g Graph<S>,
    id: usize,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
            non_finite: Cell::new(None),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, value: Vec<S>, op: Op<S>, requires_grad: bool) -> usize {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        if self.non_finite.get().is_none() && !value.iter().all(|x| x.is_finite()) {
            self.non_finite.set(Some(id));
        }
        nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
            param: None,
        });
        id
    }

    fn var(&self, id: usize) -> Var<'_, S> {
        Var { graph: self, id }
    }

    /// A value that takes no gradient.
    pub fn constant(&self, t: &Tensor<S>) -> Var<'_, S> {
        let id = self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false);
        self.var(id)
    }

    pub fn constant_owned(&self, t: Tensor<S>) -> Var<'_, S> {
        let shape = t.shape().to_vec();
        let id = self.push(shape, t.into_data(), Op::Leaf, false);
        self.var(id)
    }

    pub fn scalar(&self, v: S) -> Var<'_, S> {
        let id = self.push(vec![1], vec![v], Op::Leaf, false);
        self.var(id)
    }

    /// A leaf that receives a gradient on backward.
    pub fn variable(&self, t: &Tensor<S>) -> Var<'_, S> {
        let id = self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true);
        self.var(id)
    }

    /// Records every parameter of `store` as a leaf. Frozen parameters are
    /// recorded as constants.
    pub fn bind(&self, store: &ParamStore<S>) -> Bound<'_, S> {
        let vars = store
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let id = self.push(
                    p.value.shape().to_vec(),
                    p.value.data().to_vec(),
                    Op::Leaf,
                    !p.frozen,
                );
                if !p.frozen {
                    self.nodes.borrow_mut()[id].param = Some(i);
                }
                self.var(id)
            })
            .collect();
        Bound { vars }
    }

    /// Records every parameter of `store` as a constant, for inference.
    pub fn bind_constant(&self, store: &ParamStore<S>) -> Bound<'_, S> {
        let vars = store.iter().map(|p| self.constant(&p.value)).collect();
        Bound { vars }
    }

    pub fn concat<'g>(&'g self, parts: &[Var<'g, S>], axis: usize) -> Var<'g, S> {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let nodes = self.nodes.borrow();
        let first = &nodes[parts[0].id].shape;
        assert!(axis < first.len(), "concat axis {axis} out of range for {first:?}");
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut total = 0;
        for p in parts {
            let s = &nodes[p.id].shape;
            assert!(
                s.len() == first.len()
                    && s.iter().zip(first).enumerate().all(|(d, (a, b))| d == axis || a == b),
                "concat shape mismatch: {s:?} vs {first:?} on axis {axis}"
            );
            total += s[axis];
        }
        let mut value = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let n = &nodes[p.id];
                let chunk = n.shape[axis] * inner;
                value.extend_from_slice(&n.value[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let rg = parts.iter().any(|p| nodes[p.id].requires_grad);
        let ids = parts.iter().map(|p| p.id).collect();
        drop(nodes);
        let id = self.push(shape, value, Op::Concat(ids, axis), rg);
        self.var(id)
    }

    /// Runs the single backward pass of this graph from the scalar `loss`.
    pub fn backward(&self, loss: Var<'_, S>) -> Result<Gradients<S>> {
        assert!(std::ptr::eq(loss.graph, self), "loss belongs to another graph");
        if self.consumed.replace(true) {
            return Err(Error::contract("backward already ran on this graph"));
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].shape
            )));
        }
        if let Some(bad) = self.non_finite.get() {
            if bad <= loss.id {
                return Err(Error::Numeric {
                    node: bad,
                    op: nodes[bad].op.name().to_string(),
                });
            }
        }

        let mut grads: Vec<Option<Vec<S>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![S::one()]);
        let mut out = Gradients::default();

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                let t = Tensor::from_parts(node.shape.clone(), g);
                if let Some(p) = node.param {
                    out.set_param(p, t.clone());
                }
                out.by_node.insert(id, t);
                continue;
            }
            for (input, contribution) in local_grads(&nodes, node, &g) {
                if !nodes[input].requires_grad {
                    continue;
                }
                if !contribution.iter().all(|x| x.is_finite()) {
                    return Err(Error::Numeric {
                        node: id,
                        op: node.op.name().to_string(),
                    });
                }
                accumulate(&mut grads[input], contribution);
            }
        }
        Ok(out)
    }

    /// First node whose forward value was non-finite, if any.
    pub fn check_finite(&self) -> Result<()> {
        match self.non_finite.get() {
            None => Ok(()),
            Some(node) => Err(Error::Numeric {
                node,
                op: self.nodes.borrow()[node].op.name().to_string(),
            }),
        }
    }
}

/// Parameters of a [`ParamStore`] recorded on a graph, indexed like the store.
pub struct Bound<'g, S> {
    vars: Vec<Var<'g, S>>,
}

impl<'g, S: Scalar> Bound<'g, S> {
    pub fn get(&self, id: super::ParamId) -> Var<'g, S> {
        self.vars[id.0]
    }
}

fn accumulate<S: Scalar>(slot: &mut Option<Vec<S>>, contribution: Vec<S>) {
    match slot {
        None => *slot = Some(contribution),
        Some(acc) => {
            for (a, c) in acc.iter_mut().zip(contribution) {
                *a += c;
            }
        }
    }
}

/// Broadcast iteration plan of two shapes against their joint output shape.
struct Broadcast {
    out: Vec<usize>,
    sa: Vec<usize>,
    sb: Vec<usize>,
}

fn strides_in(out: &[usize], input: &[usize]) -> Vec<usize> {
    let offset = out.len() - input.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for d in (0..input.len()).rev() {
        if input[d] != 1 || out[d + offset] == 1 {
            strides[d + offset] = acc;
        }
        acc *= input[d];
    }
    strides
}

impl Broadcast {
    fn new(a: &[usize], b: &[usize]) -> Option<Broadcast> {
        let nd = a.len().max(b.len());
        let mut out = vec![0; nd];
        for i in 0..nd {
            let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
            let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
            out[i] = if da == db || db == 1 {
                da
            } else if da == 1 {
                db
            } else {
                return None;
            };
        }
        let sa = strides_in(&out, a);
        let sb = strides_in(&out, b);
        Some(Broadcast { out, sa, sb })
    }

    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let total: usize = self.out.iter().product();
        if total == 0 {
            return;
        }
        let nd = self.out.len();
        let last = self.out[nd - 1];
        let (la, lb) = (self.sa[nd - 1], self.sb[nd - 1]);
        let mut idx = vec![0usize; nd];
        let (mut oa, mut ob, mut o) = (0usize, 0usize, 0usize);
        loop {
            for j in 0..last {
                f(o + j, oa + j * la, ob + j * lb);
            }
            o += last;
            let mut d = nd - 1;
            loop {
                if d == 0 {
                    return;
                }
                d -= 1;
                idx[d] += 1;
                oa += self.sa[d];
                ob += self.sb[d];
                if idx[d] < self.out[d] {
                    break;
                }
                oa -= self.sa[d] * self.out[d];
                ob -= self.sb[d] * self.out[d];
                idx[d] = 0;
            }
        }
    }
}

fn axis_dims(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s: Vec<usize> = shape.iter().enumerate().filter(|&(d, _)| d != axis).map(|(_, &n)| n).collect();
    if s.is_empty() {
        s.push(1);
    }
    s
}

/// Gradient contributions of `node` to each of its inputs.
fn local_grads<S: Scalar>(nodes: &[Node<S>], node: &Node<S>, g: &[S]) -> Vec<(usize, Vec<S>)> {
    let val = |id: usize| -> &[S] { &nodes[id].value };
    let map = |id: usize, f: &dyn Fn(usize, S) -> S| -> Vec<(usize, Vec<S>)> {
        vec![(id, g.iter().enumerate().map(|(i, &gi)| f(i, gi)).collect())]
    };
    match &node.op {
        Op::Leaf => Vec::new(),
        &Op::Add(a, b) | &Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -S::one() } else { S::one() };
            let (ga, gb) = binary_backward(nodes, a, b, g, |gi, _, _| (gi, sign * gi));
            vec![(a, ga), (b, gb)]
        }
        &Op::Mul(a, b) => {
            let (va, vb) = (val(a), val(b));
            let (ga, gb) = binary_backward(nodes, a, b, g, |gi, ia, ib| (gi * vb[ib], gi * va[ia]));
            vec![(a, ga), (b, gb)]
        }
        &Op::Div(a, b) => {
            let (va, vb) = (val(a), val(b));
            let (ga, gb) = binary_backward(nodes, a, b, g, |gi, ia, ib| {
                let inv = S::one() / vb[ib];
                (gi * inv, -gi * va[ia] * inv * inv)
            });
            vec![(a, ga), (b, gb)]
        }
        &Op::Neg(a) => map(a, &|_, gi| -gi),
        &Op::Scale(a, k) => map(a, &|_, gi| gi * k),
        &Op::Offset(a) | &Op::Reshape(a) => vec![(a, g.to_vec())],
        &Op::MatMul(a, b) => {
            let (sa, sb) = (&nodes[a].shape, &nodes[b].shape);
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            let (va, vb) = (val(a), val(b));
            let mut ga = vec![S::zero(); m * k];
            for i in 0..m {
                let grow = &g[i * n..(i + 1) * n];
                for p in 0..k {
                    let brow = &vb[p * n..(p + 1) * n];
                    ga[i * k + p] = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                }
            }
            let mut gb = vec![S::zero(); k * n];
            for i in 0..m {
                let grow = &g[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = va[i * k + p];
                    let out = &mut gb[p * n..(p + 1) * n];
                    for (o, &gj) in out.iter_mut().zip(grow) {
                        *o += aip * gj;
                    }
                }
            }
            vec![(a, ga), (b, gb)]
        }
        &Op::Tanh(a) => {
            let y = &node.value;
            map(a, &|i, gi| gi * (S::one() - y[i] * y[i]))
        }
        &Op::Sigmoid(a) => {
            let y = &node.value;
            map(a, &|i, gi| gi * y[i] * (S::one() - y[i]))
        }
        &Op::Exp(a) => {
            let y = &node.value;
            map(a, &|i, gi| gi * y[i])
        }
        &Op::Log(a) => {
            let x = val(a);
            map(a, &|i, gi| gi / x[i])
        }
        &Op::Softplus(a) => {
            let x = val(a);
            map(a, &|i, gi| gi * sigmoid(x[i]))
        }
        &Op::Square(a) => {
            let x = val(a);
            let two = S::of(2.0);
            map(a, &|i, gi| gi * two * x[i])
        }
        &Op::Sum(a) => vec![(a, vec![g[0]; nodes[a].value.len()])],
        &Op::Mean(a) => {
            let n = nodes[a].value.len();
            vec![(a, vec![g[0] / S::of(n as f64); n])]
        }
        &Op::SumAxis(a, axis) | &Op::MeanAxis(a, axis) => {
            let (outer, len, inner) = axis_dims(&nodes[a].shape, axis);
            let scale = if matches!(node.op, Op::MeanAxis(..)) {
                S::one() / S::of(len as f64)
            } else {
                S::one()
            };
            let mut ga = vec![S::zero(); outer * len * inner];
            for o in 0..outer {
                for l in 0..len {
                    for i in 0..inner {
                        ga[(o * len + l) * inner + i] = g[o * inner + i] * scale;
                    }
                }
            }
            vec![(a, ga)]
        }
        &Op::LogSumExp(a, axis) => {
            let (outer, len, inner) = axis_dims(&nodes[a].shape, axis);
            let x = val(a);
            let y = &node.value;
            let mut ga = vec![S::zero(); outer * len * inner];
            for o in 0..outer {
                for l in 0..len {
                    for i in 0..inner {
                        let k = (o * len + l) * inner + i;
                        ga[k] = g[o * inner + i] * (x[k] - y[o * inner + i]).exp();
                    }
                }
            }
            vec![(a, ga)]
        }
        Op::Concat(ids, axis) => {
            let (outer, _, inner) = axis_dims(&node.shape, *axis);
            let mut parts: Vec<(usize, Vec<S>)> = ids
                .iter()
                .map(|&id| (id, Vec::with_capacity(nodes[id].value.len())))
                .collect();
            let mut off = 0;
            for _ in 0..outer {
                for (id, buf) in parts.iter_mut() {
                    let chunk = nodes[*id].shape[*axis] * inner;
                    buf.extend_from_slice(&g[off..off + chunk]);
                    off += chunk;
                }
            }
            parts
        }
        &Op::Slice { input, axis, start } => {
            let (outer, len, inner) = axis_dims(&nodes[input].shape, axis);
            let take = node.shape[axis];
            let mut ga = vec![S::zero(); outer * len * inner];
            for o in 0..outer {
                let src = &g[o * take * inner..(o + 1) * take * inner];
                let dst = (o * len + start) * inner;
                ga[dst..dst + take * inner].copy_from_slice(src);
            }
            vec![(input, ga)]
        }
        &Op::Clamp(a, lo, hi) => {
            let x = val(a);
            map(a, &|i, gi| if x[i] >= lo && x[i] <= hi { gi } else { S::zero() })
        }
        &Op::Grl(a, lambda) => map(a, &|_, gi| -(lambda * gi)),
        Op::SelectRows(a, rows) => {
            let n = nodes[*a].value.len();
            let width = n / nodes[*a].shape[0];
            let mut ga = vec![S::zero(); n];
            for (k, &r) in rows.iter().enumerate() {
                for j in 0..width {
                    ga[r * width + j] += g[k * width + j];
                }
            }
            vec![(*a, ga)]
        }
    }
}

fn binary_backward<S: Scalar>(
    nodes: &[Node<S>],
    a: usize,
    b: usize,
    g: &[S],
    f: impl Fn(S, usize, usize) -> (S, S),
) -> (Vec<S>, Vec<S>) {
    let (sa, sb) = (&nodes[a].shape, &nodes[b].shape);
    let mut ga = vec![S::zero(); nodes[a].value.len()];
    let mut gb = vec![S::zero(); nodes[b].value.len()];
    if sa == sb {
        for i in 0..g.len() {
            let (x, y) = f(g[i], i, i);
            ga[i] = x;
            gb[i] = y;
        }
    } else {
        let plan = Broadcast::new(sa, sb).expect("shapes validated on forward");
        plan.for_each(|o, ia, ib| {
            let (x, y) = f(g[o], ia, ib);
            ga[ia] += x;
            gb[ib] += y;
        });
    }
    (ga, gb)
}

fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn softplus<S: Scalar>(x: S) -> S {
    x.max(S::zero()) + (-x.abs()).exp().ln_1p()
}

impl<'g, S: Scalar> Var<'g, S> {
    pub fn graph(&self) -> &'g Graph<S> {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    fn node(&self) -> Ref<'g, Node<S>> {
        Ref::map(self.graph.nodes.borrow(), |n| &n[self.id])
    }

    pub fn shape(&self) -> Vec<usize> {
        self.node().shape.clone()
    }

    pub fn value(&self) -> Tensor<S> {
        let n = self.node();
        Tensor::from_parts(n.shape.clone(), n.value.clone())
    }

    /// Value of a single-element var.
    pub fn item(&self) -> S {
        let n = self.node();
        assert_eq!(n.value.len(), 1, "item() on var of shape {:?}", n.shape);
        n.value[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.node().requires_grad
    }

    fn unary(self, op: Op<S>, f: impl Fn(S) -> S) -> Self {
        let (shape, value, rg) = {
            let n = self.node();
            (n.shape.clone(), n.value.iter().map(|&x| f(x)).collect(), n.requires_grad)
        };
        let id = self.graph.push(shape, value, op, rg);
        self.graph.var(id)
    }

    fn binary(self, other: Self, op: Op<S>, f: impl Fn(S, S) -> S) -> Self {
        assert!(std::ptr::eq(self.graph, other.graph), "vars from different graphs");
        let (shape, value, rg) = {
            let nodes = self.graph.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            let rg = a.requires_grad || b.requires_grad;
            if a.shape == b.shape {
                let v = a.value.iter().zip(&b.value).map(|(&x, &y)| f(x, y)).collect();
                (a.shape.clone(), v, rg)
            } else {
                let plan = Broadcast::new(&a.shape, &b.shape).unwrap_or_else(|| {
                    panic!("{}: shapes {:?} and {:?} do not broadcast", op.name(), a.shape, b.shape)
                });
                let mut v = vec![S::zero(); plan.out.iter().product()];
                plan.for_each(|o, ia, ib| v[o] = f(a.value[ia], b.value[ib]));
                (plan.out, v, rg)
            }
        };
        let id = self.graph.push(shape, value, op, rg);
        self.graph.var(id)
    }

    pub fn scale(self, k: S) -> Self {
        self.unary(Op::Scale(self.id, k), |x| x * k)
    }

    pub fn offset(self, c: S) -> Self {
        self.unary(Op::Offset(self.id), |x| x + c)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(self, other: Self) -> Self {
        let (shape, value, rg) = {
            let nodes = self.graph.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            assert!(
                a.shape.len() == 2 && b.shape.len() == 2 && a.shape[1] == b.shape[0],
                "matmul shape mismatch: {:?} x {:?}",
                a.shape,
                b.shape
            );
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
            let mut out = vec![S::zero(); m * n];
            for i in 0..m {
                let row = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = a.value[i * k + p];
                    let brow = &b.value[p * n..(p + 1) * n];
                    for (o, &bv) in row.iter_mut().zip(brow) {
                        *o += aip * bv;
                    }
                }
            }
            (vec![m, n], out, a.requires_grad || b.requires_grad)
        };
        let id = self.graph.push(shape, value, Op::MatMul(self.id, other.id), rg);
        self.graph.var(id)
    }

    pub fn tanh(self) -> Self {
        self.unary(Op::Tanh(self.id), |x| x.tanh())
    }

    pub fn sigmoid(self) -> Self {
        self.unary(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn exp(self) -> Self {
        self.unary(Op::Exp(self.id), |x| x.exp())
    }

    pub fn ln(self) -> Self {
        self.unary(Op::Log(self.id), |x| x.ln())
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(self) -> Self {
        self.unary(Op::Softplus(self.id), softplus)
    }

    pub fn square(self) -> Self {
        self.unary(Op::Square(self.id), |x| x * x)
    }

    pub fn sum(self) -> Self {
        let (v, rg) = {
            let n = self.node();
            (n.value.iter().copied().sum(), n.requires_grad)
        };
        let id = self.graph.push(vec![1], vec![v], Op::Sum(self.id), rg);
        self.graph.var(id)
    }

    pub fn mean(self) -> Self {
        let (v, rg) = {
            let n = self.node();
            let s: S = n.value.iter().copied().sum();
            (s / S::of(n.value.len() as f64), n.requires_grad)
        };
        let id = self.graph.push(vec![1], vec![v], Op::Mean(self.id), rg);
        self.graph.var(id)
    }

    fn reduce_axis(self, axis: usize, op: Op<S>, f: impl Fn(&[S]) -> S) -> Self {
        let (shape, value, rg) = {
            let n = self.node();
            assert!(axis < n.shape.len(), "axis {axis} out of range for {:?}", n.shape);
            let (outer, len, inner) = axis_dims(&n.shape, axis);
            let mut out = Vec::with_capacity(outer * inner);
            let mut lane = vec![S::zero(); len];
            for o in 0..outer {
                for i in 0..inner {
                    for (l, slot) in lane.iter_mut().enumerate() {
                        *slot = n.value[(o * len + l) * inner + i];
                    }
                    out.push(f(&lane));
                }
            }
            (reduced_shape(&n.shape, axis), out, n.requires_grad)
        };
        let id = self.graph.push(shape, value, op, rg);
        self.graph.var(id)
    }

    pub fn sum_axis(self, axis: usize) -> Self {
        self.reduce_axis(axis, Op::SumAxis(self.id, axis), |l| l.iter().copied().sum())
    }

    pub fn mean_axis(self, axis: usize) -> Self {
        self.reduce_axis(axis, Op::MeanAxis(self.id, axis), |l| {
            l.iter().copied().sum::<S>() / S::of(l.len() as f64)
        })
    }

    /// `log Σ exp` along `axis`, shifted by the lane maximum.
    pub fn logsumexp(self, axis: usize) -> Self {
        self.reduce_axis(axis, Op::LogSumExp(self.id, axis), logsumexp_lane)
    }

    pub fn reshape(self, shape: &[usize]) -> Self {
        let (value, rg) = {
            let n = self.node();
            assert_eq!(
                n.value.len(),
                shape.iter().product::<usize>(),
                "cannot reshape {:?} into {shape:?}",
                n.shape
            );
            (n.value.clone(), n.requires_grad)
        };
        let id = self.graph.push(shape.to_vec(), value, Op::Reshape(self.id), rg);
        self.graph.var(id)
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Self {
        let (shape, value, rg) = {
            let n = self.node();
            assert!(
                axis < n.shape.len() && start + len <= n.shape[axis],
                "slice {start}..{} of axis {axis} out of range for {:?}",
                start + len,
                n.shape
            );
            let (outer, full, inner) = axis_dims(&n.shape, axis);
            let mut out = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let src = (o * full + start) * inner;
                out.extend_from_slice(&n.value[src..src + len * inner]);
            }
            let mut shape = n.shape.clone();
            shape[axis] = len;
            (shape, out, n.requires_grad)
        };
        let id = self.graph.push(
            shape,
            value,
            Op::Slice {
                input: self.id,
                axis,
                start,
            },
            rg,
        );
        self.graph.var(id)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(self, lo: S, hi: S) -> Self {
        self.unary(Op::Clamp(self.id, lo, hi), |x| x.max(lo).min(hi))
    }

    /// Gradient reversal: identity forward, `-lambda * upstream` backward.
    pub fn grl(self, lambda: S) -> Result<Self> {
        if !(lambda >= S::zero()) {
            return Err(Error::contract(format!("gradient reversal weight must be >= 0, got {lambda}")));
        }
        Ok(self.unary(Op::Grl(self.id, lambda), |x| x))
    }

    /// Gathers rows along the leading axis.
    pub fn select_rows(self, rows: &[usize]) -> Self {
        let (shape, value, rg) = {
            let n = self.node();
            let width = n.value.len() / n.shape[0];
            let mut out = Vec::with_capacity(rows.len() * width);
            for &r in rows {
                assert!(r < n.shape[0], "row {r} out of range for {:?}", n.shape);
                out.extend_from_slice(&n.value[r * width..(r + 1) * width]);
            }
            let mut shape = n.shape.clone();
            shape[0] = rows.len();
            (shape, out, n.requires_grad)
        };
        let id = self.graph.push(shape, value, Op::SelectRows(self.id, rows.to_vec()), rg);
        self.graph.var(id)
    }
}

pub(crate) fn logsumexp_lane<S: Scalar>(lane: &[S]) -> S {
    let m = lane.iter().copied().fold(S::neg_infinity(), S::max);
    if !m.is_finite() {
        return m;
    }
    m + lane.iter().map(|&x| (x - m).exp()).sum::<S>().ln()
}

impl<'g, S: Scalar> Add for Var<'g, S> {
    type Output = Var<'g, S>;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, Op::Add(self.id, rhs.id), |a, b| a + b)
    }
}

impl<'g, S: Scalar> Sub for Var<'g, S> {
    type Output = Var<'g, S>;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, Op::Sub(self.id, rhs.id), |a, b| a - b)
    }
}

impl<'g, S: Scalar> Mul for Var<'g, S> {
    type Output = Var<'g, S>;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, Op::Mul(self.id, rhs.id), |a, b| a * b)
    }
}

impl<'g, S: Scalar> Div for Var<'g, S> {
    type Output = Var<'g, S>;
    fn div(self, rhs: Self) -> Self {
        self.binary(rhs, Op::Div(self.id, rhs.id), |a, b| a / b)
    }
}

impl<'g, S: Scalar> Neg for Var<'g, S> {
    type Output = Var<'g, S>;
    fn neg(self) -> Self {
        self.unary(Op::Neg(self.id), |x| -x)
    }
}

impl<'g, S: Scalar> Add<S> for Var<'g, S> {
    type Output = Var<'g, S>;
    fn add(self, rhs: S) -> Self {
        self.offset(rhs)
    }
}

impl<'g, S: Scalar> Sub<S> for Var<'g, S> {
    type Output = Var<'g, S>;
    fn sub(self, rhs: S) -> Self {
        self.offset(-rhs)
    }
}

impl<'g, S: Scalar> Mul<S> for Var<'g, S> {
    type Output = Var<'g, S>;
    fn mul(self, rhs: S) -> Self {
        self.scale(rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let g = Graph::new();
        let th = g.variable(&t(&[3], &[1.0, 2.0, 3.0]));
        let grads = g.backward(th.sum()).unwrap();
        assert_eq!(grads.wrt(th).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_sum_gradient() {
        let g = Graph::new();
        let th = g.variable(&t(&[2], &[1.0, -2.0]));
        let grads = g.backward((th * th).sum()).unwrap();
        assert_eq!(grads.wrt(th).unwrap().data(), &[2.0, -4.0]);
    }

    #[test]
    fn logsumexp_of_equal_logits_has_softmax_gradient() {
        let g = Graph::new();
        let th = g.variable(&t(&[2], &[0.0, 0.0]));
        let lse = th.logsumexp(0);
        assert!((lse.item() - std::f64::consts::LN_2).abs() < 1e-15);
        let grads = g.backward(lse).unwrap();
        assert_eq!(grads.wrt(th).unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn logsumexp_values() {
        let g = Graph::<f64>::new();
        let big = g.constant(&t(&[2], &[1000.0, 1000.0])).logsumexp(0).item();
        assert!((big - (1000.0 + std::f64::consts::LN_2)).abs() < 1e-12);
        let small = g.constant(&t(&[2], &[0.0, 3f64.ln()])).logsumexp(0).item();
        // direct summation at small magnitude
        let direct = (1.0f64 + 3.0).ln();
        assert!((small - direct).abs() < 1e-14);
        assert!((small - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn logsumexp_along_axis_of_matrix() {
        let g = Graph::<f64>::new();
        let m = g.constant(&t(&[2, 3], &[0.0, 1.0, 2.0, -1.0, -1.0, -1.0]));
        let rows = m.logsumexp(1).value();
        assert_eq!(rows.shape(), &[2]);
        let direct0 = (1.0f64 + 1f64.exp() + 2f64.exp()).ln();
        assert!((rows.data()[0] - direct0).abs() < 1e-14);
        assert!((rows.data()[1] - (-1.0 + 3f64.ln())).abs() < 1e-14);
        let cols = m.logsumexp(0).value();
        assert_eq!(cols.shape(), &[3]);
    }

    #[test]
    fn second_backward_is_rejected() {
        let g = Graph::new();
        let th = g.variable(&t(&[1], &[1.0]));
        let loss = th.sum();
        g.backward(loss).unwrap();
        assert!(matches!(g.backward(loss), Err(Error::Contract(_))));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let g = Graph::new();
        let th = g.variable(&t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(th), Err(Error::Contract(_))));
    }

    #[test]
    fn nan_names_the_operation() {
        let g = Graph::new();
        let th = g.variable(&t(&[1], &[-1.0]));
        let bad = th.ln();
        let loss = bad.sum();
        match g.backward(loss) {
            Err(Error::Numeric { node, op }) => {
                assert_eq!(node, bad.id());
                assert_eq!(op, "log");
            }
            other => panic!("expected numeric failure, got {other:?}"),
        }
    }

    #[test]
    fn grl_is_identity_forward_and_negates_backward() {
        let g = Graph::new();
        let x = g.variable(&t(&[2], &[1.5, -0.2]));
        let y = x.grl(1.0).unwrap();
        assert_eq!(y.value().data(), &[1.5, -0.2]);
        let loss = (y * g.constant(&t(&[2], &[2.0, 2.0]))).sum();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[-2.0, -2.0]);

        let g = Graph::new();
        let x = g.variable(&t(&[1], &[0.3]));
        let loss = (x.grl(0.0).unwrap() * g.scalar(7.3)).sum();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[0.0]);

        let g = Graph::new();
        let x = g.variable(&t(&[1], &[0.3]));
        assert!(matches!(x.grl(-0.5), Err(Error::Contract(_))));
    }

    #[test]
    fn broadcasting_bias_and_column() {
        let g = Graph::new();
        let m = g.variable(&t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let bias = g.variable(&t(&[3], &[10.0, 20.0, 30.0]));
        let col = g.variable(&t(&[2, 1], &[100.0, 200.0]));
        let y = m + bias + col;
        assert_eq!(y.value().data(), &[111.0, 122.0, 133.0, 214.0, 225.0, 236.0]);
        let grads = g.backward(y.sum()).unwrap();
        assert_eq!(grads.wrt(bias).unwrap().data(), &[2.0, 2.0, 2.0]);
        assert_eq!(grads.wrt(col).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn middle_axis_broadcast() {
        let g = Graph::<f64>::new();
        let a = g.constant(&t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = g.constant(&t(&[1, 3, 2], &[0.0, 0.0, 10.0, 10.0, 20.0, 20.0]));
        let y = (a + b).value();
        assert_eq!(y.shape(), &[2, 3, 2]);
        assert_eq!(
            y.data(),
            &[1.0, 2.0, 11.0, 12.0, 21.0, 22.0, 3.0, 4.0, 13.0, 14.0, 23.0, 24.0]
        );
    }

    #[test]
    fn concat_slice_select() {
        let g = Graph::<f64>::new();
        let a = g.constant(&t(&[2, 1], &[1.0, 2.0]));
        let b = g.constant(&t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let c = g.concat(&[a, b], 1);
        assert_eq!(c.value().data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        assert_eq!(c.slice(1, 1, 2).value().data(), &[3.0, 4.0, 5.0, 6.0]);
        assert_eq!(c.select_rows(&[1, 1]).value().data(), &[2.0, 5.0, 6.0, 2.0, 5.0, 6.0]);
    }

    #[test]
    fn softplus_is_stable() {
        let g = Graph::<f64>::new();
        let v = g.constant(&t(&[3], &[-800.0, 0.0, 800.0])).softplus().value();
        assert!(v.data()[0] >= 0.0 && v.data()[0] < 1e-300);
        assert!((v.data()[1] - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(v.data()[2], 800.0);
    }
}
