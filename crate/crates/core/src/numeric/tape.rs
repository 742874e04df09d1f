//! Define-by-run reverse-mode differentiation over [`Tensor2`] values.
//!
//! A [`Tape`] records every operation of one forward pass. Calling
//! [`Tape::backward`] on a scalar node replays the records in reverse creation
//! order and returns the adjoint of every node that depends on a parameter.
//! Parameter gradients are then added into a [`ParamStore`] with
//! [`Gradients::accumulate_into`], which is additive: accumulating twice
//! without zeroing doubles every gradient.

use std::sync::Arc;

use super::param::{ParamId, ParamStore};
use super::tensor::Tensor2;
use crate::error::{Error, Result};

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// An elementwise map whose rule may depend on the element's position.
///
/// Used for reparameterised weights (sign by row) and for per-neuron
/// activation choices (rule by column).
pub trait ElementwiseFn: Send + Sync {
    fn value(&self, row: usize, col: usize, x: f64) -> f64;
    fn derivative(&self, row: usize, col: usize, x: f64) -> f64;
}

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Relu(Var),
    Map(Var, Arc<dyn ElementwiseFn>),
    Embedding { table: Var, indices: Vec<usize> },
    FeatureWise { x: Var, weight: Var, bias: Var },
    Mse { pred: Var, target: Var },
    SumSquares(Var),
}

struct Node {
    value: Tensor2,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor2, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric {
                context: format!("forward value of {} node", op_name(&op)),
            });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor2) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Input,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf holding a snapshot of a parameter value.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Param(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    /// Adds a `1 x m` bias to every row of an `n x m` input.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::dim("add_bias", xv.shape(), bv.shape()));
        }
        let mut out = xv.clone();
        let b = bv.row(0).to_vec();
        for r in 0..out.rows() {
            for (o, bb) in out.row_mut(r).iter_mut().zip(&b) {
                *o += bb;
            }
        }
        let rg = self.needs(x) || self.needs(bias);
        self.push(out, Op::AddBias(x, bias), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v * factor);
        let rg = self.needs(a);
        self.push(out, Op::Scale(a, factor), rg)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor2> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor2::concat_cols(&values)?;
        let rg = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::Concat(parts.to_vec()), rg)
    }

    /// `max(0, x)`; the subgradient at exactly zero is zero.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.needs(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn map(&mut self, x: Var, f: Arc<dyn ElementwiseFn>) -> Result<Var> {
        let xv = self.value(x);
        let mut out = xv.clone();
        let cols = xv.cols();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o = f.value(i / cols, i % cols, *o);
        }
        let rg = self.needs(x);
        self.push(out, Op::Map(x, f), rg)
    }

    /// Row gather from an embedding table. Backward scatter-adds.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::Lookup {
                index: bad,
                rows: t.rows(),
            });
        }
        let out = t.select_rows(indices);
        let rg = self.needs(table);
        self.push(
            out,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
            rg,
        )
    }

    /// Independent width-`k` affine encoders, one per input column:
    /// `out[n, c*k + j] = x[n, c] * w[c, j] + b[c, j]`.
    pub fn feature_wise(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(weight), self.value(bias));
        if wv.rows() != xv.cols() {
            return Err(Error::dim("feature_wise", xv.shape(), wv.shape()));
        }
        if bv.shape() != wv.shape() {
            return Err(Error::dim("feature_wise bias", wv.shape(), bv.shape()));
        }
        let (n, c, k) = (xv.rows(), xv.cols(), wv.cols());
        let mut out = Tensor2::zeros(n, c * k);
        for r in 0..n {
            let row = out.row_mut(r);
            for f in 0..c {
                let xf = xv.get(r, f);
                for j in 0..k {
                    row[f * k + j] = xf * wv.get(f, j) + bv.get(f, j);
                }
            }
        }
        let rg = self.needs(x) || self.needs(weight) || self.needs(bias);
        self.push(out, Op::FeatureWise { x, weight, bias }, rg)
    }

    /// Mean squared error between two equally shaped tensors (a 1x1 result).
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() || p.is_empty() {
            return Err(Error::dim("mse", p.shape(), t.shape()));
        }
        let n = p.len() as f64;
        let loss = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        let rg = self.needs(pred) || self.needs(target);
        self.push(Tensor2::scalar(loss), Op::Mse { pred, target }, rg)
    }

    pub fn sum_squares(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().map(|v| v * v).sum();
        let rg = self.needs(x);
        self.push(Tensor2::scalar(s), Op::SumSquares(x), rg)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::dim("backward", lv.shape(), (1, 1)));
        }
        let mut grads: Vec<Option<Tensor2>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor2::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor2, grads: &mut [Option<Tensor2>]) -> Result<()> {
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    let ga = g.matmul_bt(self.value(*b))?;
                    accumulate(grads, *a, ga)?;
                }
                if self.needs(*b) {
                    let gb = self.value(*a).matmul_at(g)?;
                    accumulate(grads, *b, gb)?;
                }
            }
            Op::AddBias(x, b) => {
                if self.needs(*x) {
                    accumulate(grads, *x, g.clone())?;
                }
                if self.needs(*b) {
                    let mut gb = Tensor2::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in gb.row_mut(0).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(grads, *b, gb)?;
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        accumulate(grads, v, g.clone())?;
                    }
                }
            }
            Op::Scale(a, f) => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.map(|v| v * f))?;
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let width = self.value(p).cols();
                    if self.needs(p) {
                        let mut gp = Tensor2::zeros(g.rows(), width);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + width]);
                        }
                        accumulate(grads, p, gp)?;
                    }
                    offset += width;
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let mut gx = g.clone();
                for (o, &v) in gx.data_mut().iter_mut().zip(xv.data()) {
                    if v <= 0.0 {
                        *o = 0.0;
                    }
                }
                accumulate(grads, *x, gx)?;
            }
            Op::Map(x, f) => {
                let xv = self.value(*x);
                let cols = xv.cols();
                let mut gx = g.clone();
                for (i, (o, &v)) in gx.data_mut().iter_mut().zip(xv.data()).enumerate() {
                    *o *= f.derivative(i / cols, i % cols, v);
                }
                accumulate(grads, *x, gx)?;
            }
            Op::Embedding { table, indices } => {
                let t = self.value(*table);
                let mut gt = Tensor2::zeros(t.rows(), t.cols());
                for (r, &i) in indices.iter().enumerate() {
                    for (o, v) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                accumulate(grads, *table, gt)?;
            }
            Op::FeatureWise { x, weight, bias } => {
                let (xv, wv) = (self.value(*x), self.value(*weight));
                let (n, c, k) = (xv.rows(), xv.cols(), wv.cols());
                let mut gx = Tensor2::zeros(n, c);
                let mut gw = Tensor2::zeros(c, k);
                let mut gb = Tensor2::zeros(c, k);
                for r in 0..n {
                    let grow = g.row(r);
                    for f in 0..c {
                        let xf = xv.get(r, f);
                        let mut acc = 0.0;
                        for j in 0..k {
                            let gv = grow[f * k + j];
                            acc += gv * wv.get(f, j);
                            gw.data_mut()[f * k + j] += gv * xf;
                            gb.data_mut()[f * k + j] += gv;
                        }
                        gx.set(r, f, acc);
                    }
                }
                if self.needs(*x) {
                    accumulate(grads, *x, gx)?;
                }
                if self.needs(*weight) {
                    accumulate(grads, *weight, gw)?;
                }
                if self.needs(*bias) {
                    accumulate(grads, *bias, gb)?;
                }
            }
            Op::Mse { pred, target } => {
                let (p, t) = (self.value(*pred), self.value(*target));
                let scale = 2.0 * g.item() / p.len() as f64;
                let mut gp = p.clone();
                for (o, &tv) in gp.data_mut().iter_mut().zip(t.data()) {
                    *o = scale * (*o - tv);
                }
                if self.needs(*target) {
                    accumulate(grads, *target, gp.map(|v| -v))?;
                }
                if self.needs(*pred) {
                    accumulate(grads, *pred, gp)?;
                }
            }
            Op::SumSquares(x) => {
                let s = 2.0 * g.item();
                accumulate(grads, *x, self.value(*x).map(|v| s * v))?;
            }
        }
        Ok(())
    }

    /// Every parameter referenced by this tape, in creation order.
    pub fn param_leaves(&self) -> impl Iterator<Item = (Var, ParamId)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Param(id) => Some((Var(i), id)),
            _ => None,
        })
    }
}

fn accumulate(grads: &mut [Option<Tensor2>], v: Var, g: Tensor2) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Input => "input",
        Op::Param(_) => "param",
        Op::MatMul(..) => "matmul",
        Op::AddBias(..) => "add_bias",
        Op::Add(..) => "add",
        Op::Scale(..) => "scale",
        Op::Concat(_) => "concat",
        Op::Relu(_) => "relu",
        Op::Map(..) => "map",
        Op::Embedding { .. } => "embedding",
        Op::FeatureWise { .. } => "feature_wise",
        Op::Mse { .. } => "mse",
        Op::SumSquares(_) => "sum_squares",
    }
}

/// Adjoints produced by one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor2>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor2> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adds every parameter-leaf adjoint into the store's gradient buffers.
    pub fn accumulate_into(&self, tape: &Tape, store: &mut ParamStore) -> Result<()> {
        for (var, id) in tape.param_leaves() {
            if let Some(g) = self.wrt(var) {
                store.get_mut(id).grad.add_assign(g)?;
            }
        }
        Ok(())
    }
}
