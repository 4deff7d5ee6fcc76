//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is an append-only arena of nodes. Every operation on a [`Var`]
//! records a node holding its value, the producing op and its parents. Node
//! ids grow with creation order, so reverse id order is a topological order.
//!
//! [`Graph::grad`] expresses every backward rule with the same differentiable
//! operations used in the forward pass. With `create_graph = true` the
//! returned gradients are themselves graph nodes and can be differentiated
//! again; with `false` recording is switched off while the rules run and the
//! gradients come back as parentless constants.
//!
//! Any operation that produces a NaN or infinity fails immediately with the
//! operation's name.

use std::cell::{Cell, RefCell};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeometry};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, T),
    Shift(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Square(usize),
    Sigmoid(usize),
    LogSigmoid(usize),
    Abs(usize),
    Clamp(usize, T, T),
    /// Broadcast along `axes` of the output shape.
    Expand(usize, Arc<Vec<usize>>),
    /// Sum out `axes` of the input shape.
    SumAxes(usize, Arc<Vec<usize>>),
    Gather(usize, Arc<Vec<usize>>),
    Scatter(usize, Arc<Vec<usize>>),
    Reshape(usize),
    Conv {
        x: usize,
        w: usize,
        stride: usize,
        pad: usize,
    },
    ConvBackInput {
        g: usize,
        w: usize,
        stride: usize,
        pad: usize,
    },
    ConvBackKernel {
        x: usize,
        g: usize,
        stride: usize,
        pad: usize,
    },
}

impl<T> Op<T> {
    fn parents(&self) -> ([usize; 2], usize) {
        use Op::*;
        match *self {
            Leaf => ([0, 0], 0),
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => ([a, b], 2),
            Conv { x, w, .. } => ([x, w], 2),
            ConvBackInput { g, w, .. } => ([g, w], 2),
            ConvBackKernel { x, g, .. } => ([x, g], 2),
            Neg(a)
            | Scale(a, _)
            | Shift(a)
            | Relu(a)
            | Exp(a)
            | Log(a)
            | Sqrt(a)
            | Square(a)
            | Sigmoid(a)
            | LogSigmoid(a)
            | Abs(a)
            | Clamp(a, _, _)
            | Reshape(a) => ([a, 0], 1),
            Expand(a, _) | SumAxes(a, _) | Gather(a, _) | Scatter(a, _) => ([a, 0], 1),
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Arena holding one computation. Drop it to free every node at once.
pub struct Graph<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    recording: Cell<bool>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Scalar> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            recording: Cell::new(true),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// A differentiable input.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    /// A constant input; gradients never flow into it.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub fn scalar(&self, value: T) -> Var<'_, T> {
        self.constant(Tensor::scalar(value))
    }

    fn value(&self, id: usize) -> Tensor<T> {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, name: &'static str) -> Result<Var<'_, T>> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let mut nodes = self.nodes.borrow_mut();
        let (ps, np) = op.parents();
        let requires_grad =
            self.recording.get() && ps[..np].iter().any(|&p| nodes[p].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            graph: self,
            id: nodes.len() - 1,
        })
    }

    /// Runs `f` with recording switched off: every node it creates is a constant.
    pub fn no_grad<R>(&self, f: impl FnOnce() -> R) -> R {
        let prev = self.recording.replace(false);
        let out = f();
        self.recording.set(prev);
        out
    }

    /// Gradients of the one-element `output` with respect to each of `wrt`.
    ///
    /// A `wrt` node that `output` does not depend on gets a zero tensor of its
    /// own shape.
    pub fn grad<'g>(
        &'g self,
        output: Var<'g, T>,
        wrt: &[Var<'g, T>],
        create_graph: bool,
    ) -> Result<Vec<Var<'g, T>>> {
        let end = output.id + 1;
        let start = wrt.iter().map(|v| v.id).min().unwrap_or(end).min(end);
        let depends = {
            let nodes = self.nodes.borrow();
            let out = &nodes[output.id];
            if out.value.numel() != 1 {
                return Err(Error::Grad {
                    op: "grad",
                    detail: format!(
                        "output must hold one element, has shape {:?}",
                        out.value.shape()
                    ),
                });
            }
            for w in wrt {
                if !nodes[w.id].requires_grad {
                    return Err(Error::Grad {
                        op: "grad",
                        detail: format!("node {} does not require grad", w.id),
                    });
                }
            }
            let mut dep = vec![false; end - start];
            for w in wrt {
                if w.id < end {
                    dep[w.id - start] = true;
                }
            }
            for id in start..end {
                let node = &nodes[id];
                if dep[id - start] || !node.requires_grad {
                    continue;
                }
                let (ps, np) = node.op.parents();
                dep[id - start] = ps[..np].iter().any(|&p| p >= start && dep[p - start]);
            }
            dep
        };

        let prev = self.recording.replace(create_graph);
        let result = self.backward_pass(output, start, &depends);
        self.recording.set(prev);
        let grads = result?;

        wrt.iter()
            .map(
                |w| match grads.get(w.id.wrapping_sub(start)).copied().flatten() {
                    Some(g) if w.id < end => Ok(g),
                    _ => Ok(self.constant(Tensor::zeros(w.shape()))),
                },
            )
            .collect()
    }

    fn backward_pass<'g>(
        &'g self,
        output: Var<'g, T>,
        start: usize,
        depends: &[bool],
    ) -> Result<Vec<Option<Var<'g, T>>>> {
        let mut grads: Vec<Option<Var<'g, T>>> = vec![None; output.id + 1 - start];
        if output.id < start || !depends[output.id - start] {
            return Ok(grads);
        }
        grads[output.id - start] = Some(self.constant(Tensor::ones(output.shape())));
        for id in (start..=output.id).rev() {
            if !depends[id - start] {
                continue;
            }
            let Some(g) = grads[id - start] else { continue };
            let op = self.nodes.borrow()[id].op.clone();
            if matches!(op, Op::Leaf) {
                continue;
            }
            let needs = |p: usize| p >= start && depends[p - start];
            for (parent, contrib) in self.rule(id, &op, g, &needs)? {
                let slot = &mut grads[parent - start];
                *slot = Some(match *slot {
                    Some(acc) => acc.add(contrib)?,
                    None => contrib,
                });
            }
        }
        Ok(grads)
    }

    /// Vector-Jacobian products of node `id` for the parents that need them.
    fn rule<'g>(
        &'g self,
        id: usize,
        op: &Op<T>,
        g: Var<'g, T>,
        needs: &dyn Fn(usize) -> bool,
    ) -> Result<Vec<(usize, Var<'g, T>)>> {
        let var = |i: usize| Var { graph: self, id: i };
        let out = var(id);
        let mut res = Vec::with_capacity(2);
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if needs(a) {
                    res.push((a, g));
                }
                if needs(b) {
                    res.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if needs(a) {
                    res.push((a, g));
                }
                if needs(b) {
                    res.push((b, g.neg()?));
                }
            }
            Op::Mul(a, b) => {
                if needs(a) {
                    res.push((a, g.mul(var(b))?));
                }
                if needs(b) {
                    res.push((b, g.mul(var(a))?));
                }
            }
            Op::Div(a, b) => {
                if needs(a) {
                    res.push((a, g.div(var(b))?));
                }
                if needs(b) {
                    res.push((b, g.mul(out)?.div(var(b))?.neg()?));
                }
            }
            Op::Neg(a) => res.push((a, g.neg()?)),
            Op::Scale(a, c) => res.push((a, g.scale_by(c)?)),
            Op::Shift(a) => res.push((a, g)),
            Op::Reshape(a) => res.push((a, g.reshape(self.value(a).shape())?)),
            Op::Relu(a) => {
                let mask = self
                    .value(a)
                    .map(|v| if v > T::zero() { T::one() } else { T::zero() });
                res.push((a, g.mul(self.constant(mask))?));
            }
            Op::Exp(a) => res.push((a, g.mul(out)?)),
            Op::Log(a) => res.push((a, g.div(var(a))?)),
            Op::Sqrt(a) => res.push((a, g.div(out)?.scale(0.5)?)),
            Op::Square(a) => res.push((a, g.mul(var(a))?.scale(2.0)?)),
            Op::Sigmoid(a) => {
                // y (1 - y)
                let slope = out.sub(out.square()?)?;
                res.push((a, g.mul(slope)?));
            }
            Op::LogSigmoid(a) => res.push((a, g.mul(var(a).neg()?.sigmoid()?)?)),
            Op::Abs(a) => {
                let sign = self.value(a).map(|v| {
                    if v > T::zero() {
                        T::one()
                    } else if v < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    }
                });
                res.push((a, g.mul(self.constant(sign))?));
            }
            Op::Clamp(a, lo, hi) => {
                let mask = self.value(a).map(|v| {
                    if v > lo && v < hi {
                        T::one()
                    } else {
                        T::zero()
                    }
                });
                res.push((a, g.mul(self.constant(mask))?));
            }
            Op::Expand(a, ref axes) => res.push((a, g.sum_axes(axes)?)),
            Op::SumAxes(a, ref axes) => {
                let shape = self.value(a).shape().to_vec();
                res.push((a, g.expand(axes, &shape)?));
            }
            Op::Gather(a, ref index) => {
                let shape = self.value(a).shape().to_vec();
                res.push((a, g.scatter(Arc::clone(index), &shape)?));
            }
            Op::Scatter(a, ref index) => {
                let shape = self.value(a).shape().to_vec();
                res.push((a, g.gather(Arc::clone(index), &shape)?));
            }
            Op::Conv { x, w, stride, pad } => {
                if needs(x) {
                    let shape = self.value(x).shape().to_vec();
                    res.push((x, g.conv_back_input(var(w), stride, pad, &shape)?));
                }
                if needs(w) {
                    let shape = self.value(w).shape().to_vec();
                    res.push((w, var(x).conv_back_kernel(g, stride, pad, &shape)?));
                }
            }
            Op::ConvBackInput {
                g: g0,
                w,
                stride,
                pad,
            } => {
                if needs(g0) {
                    res.push((g0, g.conv_raw(var(w), stride, pad)?));
                }
                if needs(w) {
                    let shape = self.value(w).shape().to_vec();
                    res.push((w, g.conv_back_kernel(var(g0), stride, pad, &shape)?));
                }
            }
            Op::ConvBackKernel {
                x,
                g: g0,
                stride,
                pad,
            } => {
                if needs(x) {
                    let shape = self.value(x).shape().to_vec();
                    res.push((x, var(g0).conv_back_input(g, stride, pad, &shape)?));
                }
                if needs(g0) {
                    res.push((g0, var(x).conv_raw(g, stride, pad)?));
                }
            }
        }
        Ok(res)
    }
}

fn reduced_shape(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let kept: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|(i, _)| !axes.contains(i))
        .map(|(_, &d)| d)
        .collect();
    if kept.is_empty() {
        vec![1]
    } else {
        kept
    }
}

/// For each flat index of `shape`, the flat index with `axes` removed.
fn reduced_index_map(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let rank = shape.len();
    // stride in the reduced tensor for each full axis (0 for reduced axes)
    let mut rstride = vec![0usize; rank];
    let mut acc = 1;
    for ax in (0..rank).rev() {
        if !axes.contains(&ax) {
            rstride[ax] = acc;
            acc *= shape[ax];
        }
    }
    let n: usize = shape.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut cur = 0usize;
    for _ in 0..n {
        map.push(cur);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            cur += rstride[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            cur -= rstride[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}

fn check_axes(op: &'static str, shape: &[usize], axes: &[usize]) -> Result<Vec<usize>> {
    let mut sorted = axes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != axes.len() || sorted.iter().any(|&a| a >= shape.len()) {
        return Err(Error::shape(
            op,
            format!("invalid axes {axes:?} for shape {shape:?}"),
        ));
    }
    Ok(sorted)
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor<T> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires(self.id)
    }

    /// Scalar value of a one-element node.
    pub fn item(&self) -> T {
        self.graph.nodes.borrow()[self.id].value.item()
    }

    /// A constant copy of this node's value.
    pub fn detach(&self) -> Var<'g, T> {
        self.graph.constant(self.value())
    }

    fn unary(self, op: Op<T>, name: &'static str, f: impl Fn(T) -> T) -> Result<Self> {
        let v = self.value().map(f);
        self.graph.push(v, op, name)
    }

    /// Aligns shapes for a binary op, expanding a one-element side.
    fn broadcast_pair(self, other: Self, name: &'static str) -> Result<(Self, Self)> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa == sb {
            return Ok((self, other));
        }
        let na: usize = sa.iter().product();
        let nb: usize = sb.iter().product();
        if nb == 1 {
            let axes: Vec<usize> = (0..sa.len()).collect();
            Ok((self, other.reshape(&[1])?.expand(&axes, &sa)?))
        } else if na == 1 {
            let axes: Vec<usize> = (0..sb.len()).collect();
            Ok((self.reshape(&[1])?.expand(&axes, &sb)?, other))
        } else {
            Err(Error::shape(name, format!("{sa:?} vs {sb:?}")))
        }
    }

    fn binary(
        self,
        other: Self,
        name: &'static str,
        make: fn(usize, usize) -> Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Self> {
        let (a, b) = self.broadcast_pair(other, name)?;
        let v = a.value().zip_map(&b.value(), f)?;
        self.graph.push(v, make(a.id, b.id), name)
    }

    pub fn add(self, other: Self) -> Result<Self> {
        self.binary(other, "add", Op::Add, |a, b| a + b)
    }

    pub fn sub(self, other: Self) -> Result<Self> {
        self.binary(other, "sub", Op::Sub, |a, b| a - b)
    }

    pub fn mul(self, other: Self) -> Result<Self> {
        self.binary(other, "mul", Op::Mul, |a, b| a * b)
    }

    pub fn div(self, other: Self) -> Result<Self> {
        self.binary(other, "div", Op::Div, |a, b| a / b)
    }

    pub fn neg(self) -> Result<Self> {
        self.unary(Op::Neg(self.id), "neg", |v| -v)
    }

    pub fn scale(self, c: f64) -> Result<Self> {
        self.scale_by(T::lit(c))
    }

    pub fn scale_by(self, c: T) -> Result<Self> {
        self.unary(Op::Scale(self.id, c), "scale", |v| v * c)
    }

    /// Adds a constant.
    pub fn shift(self, c: f64) -> Result<Self> {
        let c = T::lit(c);
        self.unary(Op::Shift(self.id), "shift", |v| v + c)
    }

    pub fn relu(self) -> Result<Self> {
        self.unary(Op::Relu(self.id), "relu", |v| {
            if v > T::zero() {
                v
            } else {
                T::zero()
            }
        })
    }

    pub fn exp(self) -> Result<Self> {
        self.unary(Op::Exp(self.id), "exp", |v| v.exp())
    }

    pub fn log(self) -> Result<Self> {
        if let Some(bad) = self.value().data().iter().find(|v| **v < T::zero()) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("negative input {bad}"),
            });
        }
        self.unary(Op::Log(self.id), "log", |v| v.ln())
    }

    pub fn sqrt(self) -> Result<Self> {
        if let Some(bad) = self.value().data().iter().find(|v| **v < T::zero()) {
            return Err(Error::Domain {
                op: "sqrt",
                detail: format!("negative input {bad}"),
            });
        }
        self.unary(Op::Sqrt(self.id), "sqrt", |v| v.sqrt())
    }

    pub fn square(self) -> Result<Self> {
        self.unary(Op::Square(self.id), "square", |v| v * v)
    }

    pub fn sigmoid(self) -> Result<Self> {
        self.unary(Op::Sigmoid(self.id), "sigmoid", sigmoid)
    }

    /// `log(sigmoid(x))`, evaluated without underflow.
    pub fn log_sigmoid(self) -> Result<Self> {
        self.unary(Op::LogSigmoid(self.id), "log_sigmoid", |v| {
            // -softplus(-v)
            if v >= T::zero() {
                -(-v).exp().ln_1p()
            } else {
                v - v.exp().ln_1p()
            }
        })
    }

    pub fn abs(self) -> Result<Self> {
        self.unary(Op::Abs(self.id), "abs", |v| v.abs())
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Result<Self> {
        let (lo, hi) = (T::lit(lo), T::lit(hi));
        self.unary(Op::Clamp(self.id, lo, hi), "clamp", |v| v.max(lo).min(hi))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        let v = self.value().reshape(shape.to_vec())?;
        if v.shape() == self.shape().as_slice() {
            return Ok(self);
        }
        self.graph.push(v, Op::Reshape(self.id), "reshape")
    }

    /// Broadcasts along `axes` of `shape`; the input must have `shape` with
    /// those axes removed (or be one-element when all axes are listed).
    pub fn expand(self, axes: &[usize], shape: &[usize]) -> Result<Self> {
        let axes = check_axes("expand", shape, axes)?;
        let src_shape = reduced_shape(shape, &axes);
        let src = self.value();
        if src.shape() != src_shape.as_slice() {
            return Err(Error::shape(
                "expand",
                format!(
                    "source {:?} cannot expand to {shape:?} along {axes:?}",
                    src.shape()
                ),
            ));
        }
        let map = reduced_index_map(shape, &axes);
        let data = src.data();
        let v = Tensor::from_parts(shape.to_vec(), map.iter().map(|&i| data[i]).collect());
        self.graph
            .push(v, Op::Expand(self.id, Arc::new(axes)), "expand")
    }

    /// Sums out `axes`; summing every axis yields a one-element tensor.
    pub fn sum_axes(self, axes: &[usize]) -> Result<Self> {
        let shape = self.shape();
        let axes = check_axes("sum", &shape, axes)?;
        let out_shape = reduced_shape(&shape, &axes);
        let map = reduced_index_map(&shape, &axes);
        let src = self.value();
        let mut out = vec![T::zero(); out_shape.iter().product()];
        for (&dst, &v) in map.iter().zip(src.data()) {
            out[dst] += v;
        }
        self.graph.push(
            Tensor::from_parts(out_shape, out),
            Op::SumAxes(self.id, Arc::new(axes)),
            "sum",
        )
    }

    pub fn sum(self) -> Result<Self> {
        let axes: Vec<usize> = (0..self.shape().len()).collect();
        self.sum_axes(&axes)
    }

    pub fn mean(self) -> Result<Self> {
        let n = self.value().numel();
        self.sum()?.scale(1.0 / n as f64)
    }

    pub fn mean_axes(self, axes: &[usize]) -> Result<Self> {
        let shape = self.shape();
        let axes = check_axes("mean", &shape, axes)?;
        let count: usize = axes.iter().map(|&a| shape[a]).product();
        self.sum_axes(&axes)?.scale(1.0 / count as f64)
    }

    /// Maximum over `axes`; the gradient flows to the first arg-max only.
    pub fn max_axes(self, axes: &[usize]) -> Result<Self> {
        let shape = self.shape();
        let axes = check_axes("max", &shape, axes)?;
        let out_shape = reduced_shape(&shape, &axes);
        let map = reduced_index_map(&shape, &axes);
        let src = self.value();
        let mut best: Vec<Option<usize>> = vec![None; out_shape.iter().product()];
        for (flat, (&dst, &v)) in map.iter().zip(src.data()).enumerate() {
            match best[dst] {
                Some(b) if src.data()[b] >= v => {}
                _ => best[dst] = Some(flat),
            }
        }
        let index: Vec<usize> = best
            .into_iter()
            .map(|b| b.expect("non-empty reduction"))
            .collect();
        self.gather(Arc::new(index), &out_shape)
    }

    pub fn max(self) -> Result<Self> {
        let axes: Vec<usize> = (0..self.shape().len()).collect();
        self.max_axes(&axes)
    }

    /// `out[i] = self[index[i]]` (flat indices), shaped as `shape`.
    pub fn gather(self, index: Arc<Vec<usize>>, shape: &[usize]) -> Result<Self> {
        let src = self.value();
        if shape.iter().product::<usize>() != index.len() || index.iter().any(|&i| i >= src.numel())
        {
            return Err(Error::shape(
                "gather",
                format!("{} indices into {:?}", index.len(), src.shape()),
            ));
        }
        let d = src.data();
        let v = Tensor::from_parts(shape.to_vec(), index.iter().map(|&i| d[i]).collect());
        self.graph.push(v, Op::Gather(self.id, index), "gather")
    }

    /// Zeros of `shape` with `self[i]` added at flat position `index[i]`.
    pub fn scatter(self, index: Arc<Vec<usize>>, shape: &[usize]) -> Result<Self> {
        let src = self.value();
        let n: usize = shape.iter().product();
        if src.numel() != index.len() || index.iter().any(|&i| i >= n) {
            return Err(Error::shape(
                "scatter",
                format!("{} values into {shape:?}", src.numel()),
            ));
        }
        let mut out = vec![T::zero(); n];
        for (&i, &v) in index.iter().zip(src.data()) {
            out[i] += v;
        }
        self.graph.push(
            Tensor::from_parts(shape.to_vec(), out),
            Op::Scatter(self.id, index),
            "scatter",
        )
    }

    fn conv_geometry(
        op: &'static str,
        x: &[usize],
        w: &[usize],
        stride: usize,
        pad: usize,
    ) -> Result<ConvGeometry> {
        if x.len() != 3 {
            return Err(Error::shape(
                op,
                format!("input must be [C_in,H,W], got {x:?}"),
            ));
        }
        if w.len() != 4 {
            return Err(Error::shape(
                op,
                format!("kernel must be [C_out,C_in,kh,kw], got {w:?}"),
            ));
        }
        if x[0] != w[1] {
            return Err(Error::shape(
                op,
                format!(
                    "input channels {} do not match kernel input channels {}",
                    x[0], w[1]
                ),
            ));
        }
        if w[2] % 2 == 0 || w[3] % 2 == 0 {
            return Err(Error::shape(
                op,
                format!("kernel size {}x{} must be odd", w[2], w[3]),
            ));
        }
        if stride == 0 {
            return Err(Error::shape(op, "stride must be positive"));
        }
        if x[1] + 2 * pad < w[2] || x[2] + 2 * pad < w[3] {
            return Err(Error::shape(
                op,
                format!(
                    "kernel {}x{} larger than padded input {}x{}",
                    w[2],
                    w[3],
                    x[1] + 2 * pad,
                    x[2] + 2 * pad
                ),
            ));
        }
        Ok(ConvGeometry {
            in_channels: x[0],
            in_h: x[1],
            in_w: x[2],
            out_channels: w[0],
            kh: w[2],
            kw: w[3],
            stride,
            pad,
        })
    }

    /// Cross-correlation plus per-channel bias.
    pub fn conv2d(self, kernel: Self, bias: Self, stride: usize, pad: usize) -> Result<Self> {
        let out = self.conv_raw(kernel, stride, pad)?;
        let oshape = out.shape();
        if bias.shape() != [oshape[0]] {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "bias shape {:?} does not match {} output channels",
                    bias.shape(),
                    oshape[0]
                ),
            ));
        }
        out.add(bias.expand(&[1, 2], &oshape)?)
    }

    /// Cross-correlation without bias.
    pub fn conv_raw(self, kernel: Self, stride: usize, pad: usize) -> Result<Self> {
        let (x, w) = (self.value(), kernel.value());
        let g = Self::conv_geometry("conv2d", x.shape(), w.shape(), stride, pad)?;
        let out = kernels::conv_forward(x.data(), w.data(), &g);
        self.graph.push(
            Tensor::from_parts(vec![g.out_channels, g.out_h(), g.out_w()], out),
            Op::Conv {
                x: self.id,
                w: kernel.id,
                stride,
                pad,
            },
            "conv2d",
        )
    }

    /// Input-side adjoint of a convolution whose input had `input_shape`.
    pub fn conv_back_input(
        self,
        kernel: Self,
        stride: usize,
        pad: usize,
        input_shape: &[usize],
    ) -> Result<Self> {
        let (gv, w) = (self.value(), kernel.value());
        let g = Self::conv_geometry("conv_back_input", input_shape, w.shape(), stride, pad)?;
        if gv.shape() != [g.out_channels, g.out_h(), g.out_w()] {
            return Err(Error::shape(
                "conv_back_input",
                format!(
                    "gradient {:?} does not match output [{}, {}, {}]",
                    gv.shape(),
                    g.out_channels,
                    g.out_h(),
                    g.out_w()
                ),
            ));
        }
        let out = kernels::conv_back_input(gv.data(), w.data(), &g);
        self.graph.push(
            Tensor::from_parts(input_shape.to_vec(), out),
            Op::ConvBackInput {
                g: self.id,
                w: kernel.id,
                stride,
                pad,
            },
            "conv_back_input",
        )
    }

    /// Kernel-side adjoint: `self` is the convolution input, `grad_out` the output gradient.
    pub fn conv_back_kernel(
        self,
        grad_out: Self,
        stride: usize,
        pad: usize,
        kernel_shape: &[usize],
    ) -> Result<Self> {
        let (x, gv) = (self.value(), grad_out.value());
        let g = Self::conv_geometry("conv_back_kernel", x.shape(), kernel_shape, stride, pad)?;
        if gv.shape() != [g.out_channels, g.out_h(), g.out_w()] {
            return Err(Error::shape(
                "conv_back_kernel",
                format!(
                    "gradient {:?} does not match output [{}, {}, {}]",
                    gv.shape(),
                    g.out_channels,
                    g.out_h(),
                    g.out_w()
                ),
            ));
        }
        let out = kernels::conv_back_kernel(x.data(), gv.data(), &g);
        self.graph.push(
            Tensor::from_parts(kernel_shape.to_vec(), out),
            Op::ConvBackKernel {
                x: self.id,
                g: grad_out.id,
                stride,
                pad,
            },
            "conv_back_kernel",
        )
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
