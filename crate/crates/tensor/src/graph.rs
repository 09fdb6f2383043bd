//! Dynamic computation graph with reverse-mode differentiation.
//!
//! Backward rules are expressed with the same differentiable operations as
//! the forward pass, so calling [`grad`] with `create_graph = true` yields
//! gradients that are themselves graph nodes and can be differentiated
//! again. That is what a gradient-norm penalty on a critic needs.

use std::cell::Cell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Arc;

use crate::kernels::{self, ConvGeom};
use crate::tensor::Tensor;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

/// Disables graph recording on this thread until dropped.
pub struct NoGradGuard {
    prev: bool,
}

pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|c| c.replace(false));
    NoGradGuard { prev }
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|c| c.set(self.prev));
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Neg,
    Scale(f64),
    AddScalar,
    MulConst(Tensor),
    Matmul { ta: bool, tb: bool },
    Transpose,
    Reshape,
    BroadcastTo,
    SumTo,
    Conv2d(ConvGeom),
    ConvInputGrad(ConvGeom),
    ConvWeightGrad(ConvGeom),
    Upsample2,
    SumPool2,
    Gather(Arc<Vec<usize>>),
    ScatterAdd(Arc<Vec<usize>>),
    Narrow { axis: usize, start: usize, full: usize },
    Embed { axis: usize, start: usize, len: usize },
    Tanh,
    Sigmoid,
    Exp,
    Ln,
    Recip,
    Sqrt,
    Square,
    LogSoftmax,
}

struct Node {
    id: u64,
    value: Tensor,
    op: Op,
    parents: Vec<Var>,
    requires_grad: bool,
}

/// A node in the computation graph. Cloning is cheap (reference counted).
#[derive(Clone)]
pub struct Var(Rc<Node>);

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({:?})", self.0.id, self.0.value)
    }
}

impl Var {
    fn leaf(value: Tensor, requires_grad: bool) -> Var {
        Var(Rc::new(Node {
            id: next_id(),
            value,
            op: Op::Leaf,
            parents: Vec::new(),
            requires_grad,
        }))
    }

    /// A value that never receives gradients.
    pub fn constant(value: Tensor) -> Var {
        Self::leaf(value, false)
    }

    /// A leaf that gradients are tracked for.
    pub fn param(value: Tensor) -> Var {
        Self::leaf(value, true)
    }

    fn from_op(value: Tensor, op: Op, parents: Vec<Var>) -> Var {
        let track = grad_enabled() && parents.iter().any(|p| p.0.requires_grad);
        if !track {
            return Self::constant(value);
        }
        Var(Rc::new(Node {
            id: next_id(),
            value,
            op,
            parents,
            requires_grad: true,
        }))
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn detach(&self) -> Var {
        Var::constant(self.0.value.clone())
    }

    pub fn add(&self, other: &Var) -> Var {
        let v = self.value().zip_map(other.value(), |a, b| a + b);
        Var::from_op(v, Op::Add, vec![self.clone(), other.clone()])
    }

    pub fn sub(&self, other: &Var) -> Var {
        let v = self.value().zip_map(other.value(), |a, b| a - b);
        Var::from_op(v, Op::Sub, vec![self.clone(), other.clone()])
    }

    pub fn mul(&self, other: &Var) -> Var {
        let v = self.value().zip_map(other.value(), |a, b| a * b);
        Var::from_op(v, Op::Mul, vec![self.clone(), other.clone()])
    }

    pub fn neg(&self) -> Var {
        Var::from_op(self.value().map(|a| -a), Op::Neg, vec![self.clone()])
    }

    pub fn scale(&self, c: f64) -> Var {
        Var::from_op(self.value().map(|a| a * c), Op::Scale(c), vec![self.clone()])
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        Var::from_op(self.value().map(|a| a + c), Op::AddScalar, vec![self.clone()])
    }

    /// Elementwise product with a constant tensor (masks, dropout).
    pub fn mul_const(&self, mask: &Tensor) -> Var {
        let v = self.value().zip_map(mask, |a, b| a * b);
        Var::from_op(v, Op::MulConst(mask.clone()), vec![self.clone()])
    }

    pub fn matmul(&self, other: &Var) -> Var {
        self.matmul_t(other, false, false)
    }

    /// `op(self) * op(other)` where `op` transposes when its flag is set.
    pub fn matmul_t(&self, other: &Var, ta: bool, tb: bool) -> Var {
        let v = kernels::matmul_t(self.value(), other.value(), ta, tb);
        Var::from_op(v, Op::Matmul { ta, tb }, vec![self.clone(), other.clone()])
    }

    pub fn t(&self) -> Var {
        Var::from_op(kernels::transpose(self.value()), Op::Transpose, vec![self.clone()])
    }

    pub fn reshape(&self, shape: &[usize]) -> Var {
        Var::from_op(self.value().reshape(shape.to_vec()), Op::Reshape, vec![self.clone()])
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Var {
        if self.shape() == shape {
            return self.clone();
        }
        let v = kernels::broadcast_to(self.value(), shape);
        Var::from_op(v, Op::BroadcastTo, vec![self.clone()])
    }

    pub fn sum_to(&self, shape: &[usize]) -> Var {
        if self.shape() == shape {
            return self.clone();
        }
        let v = kernels::sum_to(self.value(), shape);
        Var::from_op(v, Op::SumTo, vec![self.clone()])
    }

    /// Sum of every element, as a one-element tensor.
    pub fn sum(&self) -> Var {
        let ones = vec![1; self.shape().len()];
        self.sum_to(&ones).reshape(&[1])
    }

    pub fn mean(&self) -> Var {
        let n = self.value().numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Adds `other` after broadcasting it to this shape.
    pub fn add_bcast(&self, other: &Var) -> Var {
        self.add(&other.broadcast_to(self.shape()))
    }

    pub fn mul_bcast(&self, other: &Var) -> Var {
        self.mul(&other.broadcast_to(self.shape()))
    }

    pub fn sub_bcast(&self, other: &Var) -> Var {
        self.sub(&other.broadcast_to(self.shape()))
    }

    pub fn conv2d(&self, w: &Var, geom: ConvGeom) -> Var {
        let v = kernels::conv2d(self.value(), w.value(), geom);
        Var::from_op(v, Op::Conv2d(geom), vec![self.clone(), w.clone()])
    }

    fn conv_input_grad(&self, w: &Var, input_hw: (usize, usize), geom: ConvGeom) -> Var {
        let v = kernels::conv2d_input_grad(self.value(), w.value(), input_hw, geom);
        Var::from_op(v, Op::ConvInputGrad(geom), vec![self.clone(), w.clone()])
    }

    fn conv_weight_grad(&self, g: &Var, kernel: usize, geom: ConvGeom) -> Var {
        let v = kernels::conv2d_weight_grad(self.value(), g.value(), kernel, geom);
        Var::from_op(v, Op::ConvWeightGrad(geom), vec![self.clone(), g.clone()])
    }

    pub fn upsample2(&self) -> Var {
        Var::from_op(kernels::upsample2(self.value()), Op::Upsample2, vec![self.clone()])
    }

    pub fn sumpool2(&self) -> Var {
        Var::from_op(kernels::sumpool2(self.value()), Op::SumPool2, vec![self.clone()])
    }

    pub fn maxpool2(&self) -> Var {
        let (v, idx) = kernels::maxpool2(self.value());
        Var::from_op(v, Op::Gather(Arc::new(idx)), vec![self.clone()])
    }

    fn gather(&self, idx: &Arc<Vec<usize>>, out_shape: &[usize]) -> Var {
        let v = kernels::gather(self.value(), idx, out_shape);
        Var::from_op(v, Op::Gather(Arc::clone(idx)), vec![self.clone()])
    }

    fn scatter_add(&self, idx: &Arc<Vec<usize>>, in_shape: &[usize]) -> Var {
        let v = kernels::scatter_add(self.value(), idx, in_shape);
        Var::from_op(v, Op::ScatterAdd(Arc::clone(idx)), vec![self.clone()])
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Var {
        let full = self.shape()[axis];
        if start == 0 && len == full {
            return self.clone();
        }
        let v = kernels::narrow(self.value(), axis, start, len);
        Var::from_op(v, Op::Narrow { axis, start, full }, vec![self.clone()])
    }

    pub fn embed(&self, axis: usize, start: usize, full: usize) -> Var {
        let len = self.shape()[axis];
        if start == 0 && len == full {
            return self.clone();
        }
        let v = kernels::embed(self.value(), axis, start, full);
        Var::from_op(v, Op::Embed { axis, start, len }, vec![self.clone()])
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let full: usize = parts.iter().map(|p| p.shape()[axis]).sum();
        let mut start = 0;
        let mut acc: Option<Var> = None;
        for p in parts {
            let placed = p.embed(axis, start, full);
            start += p.shape()[axis];
            acc = Some(match acc {
                None => placed,
                Some(a) => a.add(&placed),
            });
        }
        acc.expect("non-empty")
    }

    pub fn tanh(&self) -> Var {
        Var::from_op(self.value().map(f64::tanh), Op::Tanh, vec![self.clone()])
    }

    pub fn sigmoid(&self) -> Var {
        let v = self.value().map(|a| 1.0 / (1.0 + (-a).exp()));
        Var::from_op(v, Op::Sigmoid, vec![self.clone()])
    }

    pub fn exp(&self) -> Var {
        Var::from_op(self.value().map(f64::exp), Op::Exp, vec![self.clone()])
    }

    pub fn ln(&self) -> Var {
        Var::from_op(self.value().map(f64::ln), Op::Ln, vec![self.clone()])
    }

    /// `1/x`, defined as 0 where `x == 0`.
    pub fn recip(&self) -> Var {
        let v = self.value().map(|a| if a == 0.0 { 0.0 } else { 1.0 / a });
        Var::from_op(v, Op::Recip, vec![self.clone()])
    }

    /// Square root; the derivative at 0 is taken as 0.
    pub fn sqrt(&self) -> Var {
        Var::from_op(self.value().map(f64::sqrt), Op::Sqrt, vec![self.clone()])
    }

    pub fn square(&self) -> Var {
        Var::from_op(self.value().map(|a| a * a), Op::Square, vec![self.clone()])
    }

    pub fn leaky_relu(&self, alpha: f64) -> Var {
        let mask = self.value().map(|a| if a > 0.0 { 1.0 } else { alpha });
        self.mul_const(&mask)
    }

    pub fn relu(&self) -> Var {
        self.leaky_relu(0.0)
    }

    /// `|x|`; the subgradient at 0 is 0.
    pub fn abs(&self) -> Var {
        let sign = self.value().map(|a| if a > 0.0 { 1.0 } else if a < 0.0 { -1.0 } else { 0.0 });
        self.mul_const(&sign)
    }

    pub fn log_softmax(&self) -> Var {
        Var::from_op(kernels::log_softmax(self.value()), Op::LogSoftmax, vec![self.clone()])
    }
}

fn backward_rule(node: &Node, out: &Var, g: &Var) -> Vec<Var> {
    let p = &node.parents;
    match &node.op {
        Op::Leaf => Vec::new(),
        Op::Add => vec![g.clone(), g.clone()],
        Op::Sub => vec![g.clone(), g.neg()],
        Op::Mul => vec![g.mul(&p[1]), g.mul(&p[0])],
        Op::Neg => vec![g.neg()],
        Op::Scale(c) => vec![g.scale(*c)],
        Op::AddScalar => vec![g.clone()],
        Op::MulConst(m) => vec![g.mul_const(m)],
        Op::Matmul { ta, tb } => {
            let (a, b, ta, tb) = (&p[0], &p[1], *ta, *tb);
            let da = if ta { b.matmul_t(g, tb, true) } else { g.matmul_t(b, false, !tb) };
            let db = if tb { g.matmul_t(a, true, ta) } else { a.matmul_t(g, !ta, false) };
            vec![da, db]
        }
        Op::Transpose => vec![g.t()],
        Op::Reshape => vec![g.reshape(p[0].shape())],
        Op::BroadcastTo => vec![g.sum_to(p[0].shape())],
        Op::SumTo => vec![g.broadcast_to(p[0].shape())],
        Op::Conv2d(geom) => {
            let (x, w) = (&p[0], &p[1]);
            let hw = (x.shape()[2], x.shape()[3]);
            vec![
                g.conv_input_grad(w, hw, *geom),
                x.conv_weight_grad(g, w.shape()[2], *geom),
            ]
        }
        Op::ConvInputGrad(geom) => {
            let (gin, w) = (&p[0], &p[1]);
            vec![g.conv2d(w, *geom), g.conv_weight_grad(gin, w.shape()[2], *geom)]
        }
        Op::ConvWeightGrad(geom) => {
            let (x, gy) = (&p[0], &p[1]);
            let hw = (x.shape()[2], x.shape()[3]);
            vec![gy.conv_input_grad(g, hw, *geom), x.conv2d(g, *geom)]
        }
        Op::Upsample2 => vec![g.sumpool2()],
        Op::SumPool2 => vec![g.upsample2()],
        Op::Gather(idx) => vec![g.scatter_add(idx, p[0].shape())],
        Op::ScatterAdd(idx) => vec![g.gather(idx, p[0].shape())],
        Op::Narrow { axis, start, full } => vec![g.embed(*axis, *start, *full)],
        Op::Embed { axis, start, len } => vec![g.narrow(*axis, *start, *len)],
        Op::Tanh => vec![g.mul(&out.square().neg().add_scalar(1.0))],
        Op::Sigmoid => vec![g.mul(&out.mul(&out.neg().add_scalar(1.0)))],
        Op::Exp => vec![g.mul(out)],
        Op::Ln => vec![g.mul(&p[0].recip())],
        Op::Recip => vec![g.mul(&out.square()).neg()],
        Op::Sqrt => vec![g.mul(&out.recip()).scale(0.5)],
        Op::Square => vec![g.mul(&p[0]).scale(2.0)],
        Op::LogSoftmax => {
            let rows = [out.shape()[0], 1];
            let total = g.sum_to(&rows).broadcast_to(out.shape());
            vec![g.sub(&out.exp().mul(&total))]
        }
    }
}

fn topo_order(root: &Var) -> Vec<Var> {
    let mut order = Vec::new();
    let mut visited = std::collections::HashSet::new();
    let mut stack: Vec<(Var, bool)> = vec![(root.clone(), false)];
    while let Some((v, expanded)) = stack.pop() {
        if expanded {
            order.push(v);
            continue;
        }
        if !v.0.requires_grad || !visited.insert(v.0.id) {
            continue;
        }
        stack.push((v.clone(), true));
        for p in &v.0.parents {
            if p.0.requires_grad && !visited.contains(&p.0.id) {
                stack.push((p.clone(), false));
            }
        }
    }
    order
}

/// Gradients of `sum(output)` with respect to each of `inputs`.
///
/// With `create_graph` the returned values are differentiable graph nodes;
/// otherwise they are constants and no graph is recorded during the pass.
/// Inputs that `output` does not depend on get zero gradients.
pub fn grad(output: &Var, inputs: &[&Var], create_graph: bool) -> Vec<Var> {
    let _guard = if create_graph { None } else { Some(no_grad()) };
    let mut grads: HashMap<u64, Var> = HashMap::new();
    if output.requires_grad() {
        grads.insert(output.0.id, Var::constant(Tensor::ones(output.shape().to_vec())));
    }
    let order = topo_order(output);
    for node_var in order.iter().rev() {
        let node = &node_var.0;
        if matches!(node.op, Op::Leaf) {
            continue;
        }
        let Some(g) = grads.get(&node.id).cloned() else {
            continue;
        };
        let parent_grads = backward_rule(node, node_var, &g);
        for (parent, pg) in node.parents.iter().zip(parent_grads) {
            if !parent.0.requires_grad {
                continue;
            }
            debug_assert_eq!(parent.shape(), pg.shape());
            let merged = match grads.remove(&parent.0.id) {
                Some(existing) => existing.add(&pg),
                None => pg,
            };
            grads.insert(parent.0.id, merged);
        }
    }
    inputs
        .iter()
        .map(|x| {
            grads
                .get(&x.0.id)
                .cloned()
                .unwrap_or_else(|| Var::constant(Tensor::zeros(x.shape().to_vec())))
        })
        .collect()
}
