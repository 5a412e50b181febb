//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation applied to a [`Var`] appends one node to its [`Graph`];
//! nodes are therefore stored in topological order, and [`Graph::backward`]
//! walks them once in reverse. A graph is single-threaded (it uses interior
//! mutability); build one graph per thread when running in parallel.

use std::cell::RefCell;

use super::tensor::{matmul_nt, matmul_raw, matmul_tn, Tensor};
use super::NumericsError;

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Ln(usize),
    Clamp(usize, f64, f64),
    Softmax { x: usize, axis: usize },
    LogSoftmax(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Unfold { x: usize, kernel: usize },
    Row { table: usize, index: usize },
    MeanRows(usize),
    Transpose(usize),
    SliceCols { x: usize, start: usize },
    ConcatCols(Vec<usize>),
    Index { x: usize, i: usize },
    Sum(usize),
    Reshape(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Record of the operations applied during one forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; all zeros if `v` did not influence the loss.
    pub fn get(&self, v: Var<'_>) -> Tensor {
        let shape = self.shapes[v.id].clone();
        match &self.grads[v.id] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Adds an input tensor; it participates in differentiation when
    /// `t.requires_grad()` is set.
    pub fn input(&self, t: Tensor) -> Var<'_> {
        let requires_grad = t.requires_grad();
        self.push(t, Op::Leaf, requires_grad)
    }

    /// Adds a trainable leaf regardless of the tensor's own flag.
    pub fn param(&self, t: Tensor) -> Var<'_> {
        self.push(t.with_grad(true), Op::Leaf, true)
    }

    /// Adds a leaf that never receives a gradient.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push(t.with_grad(false), Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn push_checked(
        &self,
        name: &'static str,
        value: Tensor,
        op: Op,
        requires_grad: bool,
    ) -> Result<Var<'_>, NumericsError> {
        if !value.is_finite() {
            return Err(NumericsError::NonFinite { op: name });
        }
        Ok(self.push(value, op, requires_grad))
    }

    fn shape_of(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id].value.shape().to_vec()
    }

    fn grad_flag(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, NumericsError> {
        let nodes = self.nodes.borrow();
        let n = nodes.len();
        if nodes[loss.id].value.numel() != 1 {
            return Err(NumericsError::NotScalar {
                shape: nodes[loss.id].value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            propagate(&nodes, id, &g, &mut grads);
            if !g.iter().all(|v| v.is_finite()) {
                return Err(NumericsError::NonFinite { op: "backward" });
            }
            grads[id] = Some(g);
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, delta: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(g) => g.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
        slot @ None => *slot = Some(delta),
    }
}

fn accumulate_with(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    id: usize,
    f: impl FnOnce(&mut [f64]),
) {
    if !nodes[id].requires_grad {
        return;
    }
    let slot = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.numel()]);
    f(slot);
}

fn propagate(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    let out = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            let (m, k) = av.dims2().unwrap();
            let (_, n) = bv.dims2().unwrap();
            if nodes[*a].requires_grad {
                accumulate(nodes, grads, *a, matmul_nt(g, bv.data(), m, n, k));
            }
            if nodes[*b].requires_grad {
                accumulate(nodes, grads, *b, matmul_tn(av.data(), g, m, k, n));
            }
        }
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g.to_vec());
            accumulate(nodes, grads, *b, g.to_vec());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, g.to_vec());
            accumulate(nodes, grads, *b, g.iter().map(|v| -v).collect());
        }
        Op::Mul(a, b) => {
            let ad = nodes[*a].value.data();
            let bd = nodes[*b].value.data();
            accumulate(nodes, grads, *a, g.iter().zip(bd).map(|(g, b)| g * b).collect());
            accumulate(nodes, grads, *b, g.iter().zip(ad).map(|(g, a)| g * a).collect());
        }
        Op::AddRow(x, row) => {
            accumulate(nodes, grads, *x, g.to_vec());
            let cols = nodes[*row].value.numel();
            accumulate_with(nodes, grads, *row, |acc| {
                for chunk in g.chunks(cols) {
                    acc.iter_mut().zip(chunk).for_each(|(a, v)| *a += v);
                }
            });
        }
        Op::Scale(x, s) => accumulate(nodes, grads, *x, g.iter().map(|v| v * s).collect()),
        Op::AddScalar(x) | Op::Reshape(x) => accumulate(nodes, grads, *x, g.to_vec()),
        Op::Relu(x) => {
            let xd = nodes[*x].value.data();
            let d = g
                .iter()
                .zip(xd)
                .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                .collect();
            accumulate(nodes, grads, *x, d);
        }
        Op::Tanh(x) => {
            let d = g.iter().zip(out).map(|(g, y)| g * (1.0 - y * y)).collect();
            accumulate(nodes, grads, *x, d);
        }
        Op::Sigmoid(x) => {
            let d = g.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)).collect();
            accumulate(nodes, grads, *x, d);
        }
        Op::Ln(x) => {
            let xd = nodes[*x].value.data();
            accumulate(nodes, grads, *x, g.iter().zip(xd).map(|(g, x)| g / x).collect());
        }
        Op::Clamp(x, lo, hi) => {
            let xd = nodes[*x].value.data();
            let d = g
                .iter()
                .zip(xd)
                .map(|(g, x)| if x < lo || x > hi { 0.0 } else { *g })
                .collect();
            accumulate(nodes, grads, *x, d);
        }
        Op::Softmax { x, axis } => {
            let shape = node.value.shape();
            let (outer, len, inner) = axis_split(shape, *axis);
            let mut d = vec![0.0; g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |k: usize| (o * len + k) * inner + i;
                    let dot: f64 = (0..len).map(|k| g[idx(k)] * out[idx(k)]).sum();
                    for k in 0..len {
                        d[idx(k)] = out[idx(k)] * (g[idx(k)] - dot);
                    }
                }
            }
            accumulate(nodes, grads, *x, d);
        }
        Op::LogSoftmax(x) => {
            let len = *node.value.shape().last().unwrap();
            let mut d = vec![0.0; g.len()];
            for ((dr, gr), yr) in d.chunks_mut(len).zip(g.chunks(len)).zip(out.chunks(len)) {
                let gsum: f64 = gr.iter().sum();
                for k in 0..len {
                    dr[k] = gr[k] - yr[k].exp() * gsum;
                }
            }
            accumulate(nodes, grads, *x, d);
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let cols = nodes[*gain].value.numel();
            let gd = nodes[*gain].value.data();
            accumulate_with(nodes, grads, *gain, |acc| {
                for (gr, xr) in g.chunks(cols).zip(xhat.chunks(cols)) {
                    for k in 0..cols {
                        acc[k] += gr[k] * xr[k];
                    }
                }
            });
            accumulate_with(nodes, grads, *bias, |acc| {
                for gr in g.chunks(cols) {
                    acc.iter_mut().zip(gr).for_each(|(a, v)| *a += v);
                }
            });
            if nodes[*x].requires_grad {
                let nf = cols as f64;
                let mut d = vec![0.0; g.len()];
                for (r, ((dr, gr), xr)) in d
                    .chunks_mut(cols)
                    .zip(g.chunks(cols))
                    .zip(xhat.chunks(cols))
                    .enumerate()
                {
                    let dxhat: Vec<f64> = gr.iter().zip(gd).map(|(g, w)| g * w).collect();
                    let s1: f64 = dxhat.iter().sum();
                    let s2: f64 = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum();
                    for k in 0..cols {
                        dr[k] = inv_std[r] / nf * (nf * dxhat[k] - s1 - xr[k] * s2);
                    }
                }
                accumulate(nodes, grads, *x, d);
            }
        }
        Op::Unfold { x, kernel } => {
            let (t_len, c) = nodes[*x].value.dims2().unwrap();
            let pad = (kernel - 1) / 2;
            let width = kernel * c;
            accumulate_with(nodes, grads, *x, |acc| {
                for t in 0..t_len {
                    for k in 0..*kernel {
                        let src = t as isize + k as isize - pad as isize;
                        if src < 0 || src >= t_len as isize {
                            continue;
                        }
                        let src = src as usize;
                        let gsl = &g[t * width + k * c..t * width + (k + 1) * c];
                        acc[src * c..(src + 1) * c]
                            .iter_mut()
                            .zip(gsl)
                            .for_each(|(a, v)| *a += v);
                    }
                }
            });
        }
        Op::Row { table, index } => {
            let cols = g.len();
            accumulate_with(nodes, grads, *table, |acc| {
                acc[index * cols..(index + 1) * cols]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(a, v)| *a += v);
            });
        }
        Op::MeanRows(x) => {
            let (t_len, _) = nodes[*x].value.dims2().unwrap();
            let inv = 1.0 / t_len as f64;
            accumulate_with(nodes, grads, *x, |acc| {
                for row in acc.chunks_mut(g.len()) {
                    row.iter_mut().zip(g).for_each(|(a, v)| *a += v * inv);
                }
            });
        }
        Op::Transpose(x) => {
            let (r, c) = nodes[*x].value.dims2().unwrap();
            let mut d = vec![0.0; g.len()];
            for i in 0..r {
                for j in 0..c {
                    d[i * c + j] = g[j * r + i];
                }
            }
            accumulate(nodes, grads, *x, d);
        }
        Op::SliceCols { x, start } => {
            let (_, c) = nodes[*x].value.dims2().unwrap();
            let (_, w) = node.value.dims2().unwrap();
            accumulate_with(nodes, grads, *x, |acc| {
                for (arow, grow) in acc.chunks_mut(c).zip(g.chunks(w)) {
                    arow[*start..start + w]
                        .iter_mut()
                        .zip(grow)
                        .for_each(|(a, v)| *a += v);
                }
            });
        }
        Op::ConcatCols(parts) => {
            let (_, total) = node.value.dims2().unwrap();
            let mut offset = 0;
            for &p in parts {
                let (_, w) = nodes[p].value.dims2().unwrap();
                accumulate_with(nodes, grads, p, |acc| {
                    for (arow, grow) in acc.chunks_mut(w).zip(g.chunks(total)) {
                        arow.iter_mut()
                            .zip(&grow[offset..offset + w])
                            .for_each(|(a, v)| *a += v);
                    }
                });
                offset += w;
            }
        }
        Op::Index { x, i } => {
            accumulate_with(nodes, grads, *x, |acc| acc[*i] += g[0]);
        }
        Op::Sum(x) => {
            accumulate_with(nodes, grads, *x, |acc| acc.iter_mut().for_each(|a| *a += g[0]));
        }
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn require_same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<(), NumericsError> {
    if a != b {
        return Err(NumericsError::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        });
    }
    Ok(())
}

fn require_rank2(op: &'static str, shape: &[usize]) -> Result<(usize, usize), NumericsError> {
    match shape {
        [r, c] => Ok((*r, *c)),
        _ => Err(NumericsError::ShapeMismatch {
            op,
            lhs: shape.to_vec(),
            rhs: vec![],
        }),
    }
}

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Tensor {
        self.graph.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.shape_of(self.id)
    }

    /// Value of a single-element node.
    pub fn item(&self) -> f64 {
        self.graph.nodes.borrow()[self.id].value.data()[0]
    }

    fn map(
        self,
        name: &'static str,
        op: Op,
        f: impl Fn(f64) -> f64,
    ) -> Result<Var<'g>, NumericsError> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            let v = &nodes[self.id].value;
            Tensor::new(v.shape().to_vec(), v.data().iter().map(|x| f(*x)).collect())?
        };
        let rg = self.graph.grad_flag(&[self.id]);
        self.graph.push_checked(name, value, op, rg)
    }

    fn zip(
        self,
        other: Var<'g>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'g>, NumericsError> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            let a = &nodes[self.id].value;
            let b = &nodes[other.id].value;
            require_same_shape(name, a.shape(), b.shape())?;
            let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
            Tensor::new(a.shape().to_vec(), data)?
        };
        let rg = self.graph.grad_flag(&[self.id, other.id]);
        self.graph.push_checked(name, value, op, rg)
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(self, other: Var<'g>) -> Result<Var<'g>, NumericsError> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            let a = &nodes[self.id].value;
            let b = &nodes[other.id].value;
            let (m, k) = require_rank2("matmul", a.shape())?;
            let (k2, n) = require_rank2("matmul", b.shape())?;
            if k != k2 {
                return Err(NumericsError::ShapeMismatch {
                    op: "matmul",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            Tensor::matrix(m, n, matmul_raw(a.data(), b.data(), m, k, n))?
        };
        let rg = self.graph.grad_flag(&[self.id, other.id]);
        self.graph
            .push_checked("matmul", value, Op::MatMul(self.id, other.id), rg)
    }

    pub fn add(self, other: Var<'g>) -> Result<Var<'g>, NumericsError> {
        self.zip(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>, NumericsError> {
        self.zip(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>, NumericsError> {
        self.zip(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    /// Adds a per-channel vector to every row of a `T × C` tensor.
    pub fn add_row(self, row: Var<'g>) -> Result<Var<'g>, NumericsError> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            let x = &nodes[self.id].value;
            let r = &nodes[row.id].value;
            let (_, c) = require_rank2("add_row", x.shape())?;
            if r.numel() != c {
                return Err(NumericsError::ShapeMismatch {
                    op: "add_row",
                    lhs: x.shape().to_vec(),
                    rhs: r.shape().to_vec(),
                });
            }
            let mut data = x.data().to_vec();
            for chunk in data.chunks_mut(c) {
                chunk.iter_mut().zip(r.data()).for_each(|(a, b)| *a += b);
            }
            Tensor::new(x.shape().to_vec(), data)?
        };
        let rg = self.graph.grad_flag(&[self.id, row.id]);
        self.graph
            .push_checked("add_row", value, Op::AddRow(self.id, row.id), rg)
    }

    pub fn scale(self, s: f64) -> Result<Var<'g>, NumericsError> {
        self.map("scale", Op::Scale(self.id, s), |x| x * s)
    }

    pub fn add_scalar(self, s: f64) -> Result<Var<'g>, NumericsError> {
        self.map("add_scalar", Op::AddScalar(self.id), |x| x + s)
    }

    pub fn relu(self) -> Result<Var<'g>, NumericsError> {
        self.map("relu", Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn tanh(self) -> Result<Var<'g>, NumericsError> {
        self.map("tanh", Op::Tanh(self.id), f64::tanh)
    }

    pub fn sigmoid(self) -> Result<Var<'g>, NumericsError> {
        self.map("sigmoid", Op::Sigmoid(self.id), stable_sigmoid)
    }

    /// Natural logarithm; non-positive inputs surface as a non-finite error.
    pub fn ln(self) -> Result<Var<'g>, NumericsError> {
        self.map("ln", Op::Ln(self.id), f64::ln)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(self, lo: f64, hi: f64) -> Result<Var<'g>, NumericsError> {
        self.map("clamp", Op::Clamp(self.id, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn softmax(self, axis: usize) -> Result<Var<'g>, NumericsError> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            let x = &nodes[self.id].value;
            if axis >= x.rank() {
                return Err(NumericsError::AxisOutOfRange {
                    axis,
                    rank: x.rank(),
                });
            }
            let (outer, len, inner) = axis_split(x.shape(), axis);
            let xd = x.data();
            let mut data = vec![0.0; xd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |k: usize| (o * len + k) * inner + i;
                    let max = (0..len).map(|k| xd[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for k in 0..len {
                        let e = (xd[idx(k)] - max).exp();
                        data[idx(k)] = e;
                        z += e;
                    }
                    for k in 0..len {
                        data[idx(k)] /= z;
                    }
                }
            }
            Tensor::new(x.shape().to_vec(), data)?
        };
        let rg = self.graph.grad_flag(&[self.id]);
        self.graph
            .push_checked("softmax", value, Op::Softmax { x: self.id, axis }, rg)
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(self) -> Result<Var<'g>, NumericsError> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            let x = &nodes[self.id].value;
            let len = *x.shape().last().ok_or(NumericsError::AxisOutOfRange { axis: 0, rank: 0 })?;
            let mut data = x.data().to_vec();
            for row in data.chunks_mut(len) {
                let lse = log_sum_exp(row);
                row.iter_mut().for_each(|v| *v -= lse);
            }
            Tensor::new(x.shape().to_vec(), data)?
        };
        let rg = self.graph.grad_flag(&[self.id]);
        self.graph
            .push_checked("log_softmax", value, Op::LogSoftmax(self.id), rg)
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(self, gain: Var<'g>, bias: Var<'g>) -> Result<Var<'g>, NumericsError> {
        let (value, xhat, inv_std) = {
            let nodes = self.graph.nodes.borrow();
            let x = &nodes[self.id].value;
            let gv = &nodes[gain.id].value;
            let bv = &nodes[bias.id].value;
            let cols = *x.shape().last().unwrap_or(&0);
            if gv.numel() != cols || bv.numel() != cols || cols == 0 {
                return Err(NumericsError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: x.shape().to_vec(),
                    rhs: gv.shape().to_vec(),
                });
            }
            let mut xhat = Vec::with_capacity(x.numel());
            let mut inv_std = Vec::new();
            let mut data = Vec::with_capacity(x.numel());
            for row in x.data().chunks(cols) {
                let mean = row.iter().sum::<f64>() / cols as f64;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
                let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                inv_std.push(is);
                for k in 0..cols {
                    let h = (row[k] - mean) * is;
                    xhat.push(h);
                    data.push(h * gv.data()[k] + bv.data()[k]);
                }
            }
            (Tensor::new(x.shape().to_vec(), data)?, xhat, inv_std)
        };
        let rg = self.graph.grad_flag(&[self.id, gain.id, bias.id]);
        self.graph.push_checked(
            "layer_norm",
            value,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    /// Sliding-window view for "same"-padded 1-D convolution: `T × C` becomes
    /// `T × (kernel·C)`, zero outside the sequence.
    pub fn unfold(self, kernel: usize) -> Result<Var<'g>, NumericsError> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            let x = &nodes[self.id].value;
            let (t_len, c) = require_rank2("unfold", x.shape())?;
            if kernel == 0 {
                return Err(NumericsError::ShapeMismatch {
                    op: "unfold",
                    lhs: x.shape().to_vec(),
                    rhs: vec![kernel],
                });
            }
            let pad = (kernel - 1) / 2;
            let width = kernel * c;
            let mut data = vec![0.0; t_len * width];
            for t in 0..t_len {
                for k in 0..kernel {
                    let src = t as isize + k as isize - pad as isize;
                    if src < 0 || src >= t_len as isize {
                        continue;
                    }
                    let src = src as usize;
                    data[t * width + k * c..t * width + (k + 1) * c]
                        .copy_from_slice(&x.data()[src * c..(src + 1) * c]);
                }
            }
            Tensor::matrix(t_len, width, data)?
        };
        let rg = self.graph.grad_flag(&[self.id]);
        self.graph.push_checked(
            "unfold",
            value,
            Op::Unfold {
                x: self.id,
                kernel,
            },
            rg,
        )
    }

    /// 1-D convolution over time with "same" padding.
    ///
    /// `weight` is `(kernel·C_in) × C_out`, laid out tap-major to match
    /// [`Var::unfold`]; the time length is preserved.
    pub fn conv1d(
        self,
        weight: Var<'g>,
        bias: Option<Var<'g>>,
        kernel: usize,
    ) -> Result<Var<'g>, NumericsError> {
        let y = self.unfold(kernel)?.matmul(weight)?;
        match bias {
            Some(b) => y.add_row(b),
            None => Ok(y),
        }
    }

    /// Row `index` of a rank-2 lookup table, as a vector.
    pub fn embedding_row(self, index: usize) -> Result<Var<'g>, NumericsError> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            let t = &nodes[self.id].value;
            let (rows, _) = require_rank2("embedding", t.shape())?;
            if index >= rows {
                return Err(NumericsError::IndexOutOfRange { index, len: rows });
            }
            Tensor::vector(t.row(index).to_vec())
        };
        let rg = self.graph.grad_flag(&[self.id]);
        self.graph.push_checked(
            "embedding",
            value,
            Op::Row {
                table: self.id,
                index,
            },
            rg,
        )
    }

    /// Mean over the time (row) axis: `T × C` to a length-`C` vector.
    pub fn mean_over_time(self) -> Result<Var<'g>, NumericsError> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            let x = &nodes[self.id].value;
            let (t_len, c) = require_rank2("mean_over_time", x.shape())?;
            if t_len == 0 {
                return Err(NumericsError::Empty { op: "mean_over_time" });
            }
            let mut data = vec![0.0; c];
            for row in x.data().chunks(c) {
                data.iter_mut().zip(row).for_each(|(a, v)| *a += v);
            }
            data.iter_mut().for_each(|v| *v /= t_len as f64);
            Tensor::vector(data)
        };
        let rg = self.graph.grad_flag(&[self.id]);
        self.graph
            .push_checked("mean_over_time", value, Op::MeanRows(self.id), rg)
    }

    pub fn transpose(self) -> Result<Var<'g>, NumericsError> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            let x = &nodes[self.id].value;
            let (r, c) = require_rank2("transpose", x.shape())?;
            let mut data = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    data[j * r + i] = x.data()[i * c + j];
                }
            }
            Tensor::matrix(c, r, data)?
        };
        let rg = self.graph.grad_flag(&[self.id]);
        self.graph
            .push_checked("transpose", value, Op::Transpose(self.id), rg)
    }

    /// Columns `start..start + width` of a rank-2 tensor.
    pub fn slice_cols(self, start: usize, width: usize) -> Result<Var<'g>, NumericsError> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            let x = &nodes[self.id].value;
            let (r, c) = require_rank2("slice_cols", x.shape())?;
            if start + width > c {
                return Err(NumericsError::IndexOutOfRange {
                    index: start + width,
                    len: c,
                });
            }
            let data = x
                .data()
                .chunks(c)
                .flat_map(|row| row[start..start + width].iter().copied())
                .collect();
            Tensor::matrix(r, width, data)?
        };
        let rg = self.graph.grad_flag(&[self.id]);
        self.graph.push_checked(
            "slice_cols",
            value,
            Op::SliceCols {
                x: self.id,
                start,
            },
            rg,
        )
    }

    /// Column-wise concatenation of rank-2 tensors with equal row counts.
    pub fn concat_cols(parts: &[Var<'g>]) -> Result<Var<'g>, NumericsError> {
        let first = parts.first().ok_or(NumericsError::Empty { op: "concat_cols" })?;
        let graph = first.graph;
        let value = {
            let nodes = graph.nodes.borrow();
            let (rows, _) = require_rank2("concat_cols", nodes[first.id].value.shape())?;
            let mut widths = Vec::with_capacity(parts.len());
            for p in parts {
                let (r, c) = require_rank2("concat_cols", nodes[p.id].value.shape())?;
                if r != rows {
                    return Err(NumericsError::ShapeMismatch {
                        op: "concat_cols",
                        lhs: nodes[first.id].value.shape().to_vec(),
                        rhs: nodes[p.id].value.shape().to_vec(),
                    });
                }
                widths.push(c);
            }
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for (p, w) in parts.iter().zip(&widths) {
                    data.extend_from_slice(&nodes[p.id].value.data()[r * w..(r + 1) * w]);
                }
            }
            Tensor::matrix(rows, total, data)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = graph.grad_flag(&ids);
        graph.push_checked("concat_cols", value, Op::ConcatCols(ids), rg)
    }

    /// Element `i` of the flattened tensor, as a single-element tensor.
    pub fn index(self, i: usize) -> Result<Var<'g>, NumericsError> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            let x = &nodes[self.id].value;
            let v = *x.data().get(i).ok_or(NumericsError::IndexOutOfRange {
                index: i,
                len: x.numel(),
            })?;
            Tensor::scalar(v)
        };
        let rg = self.graph.grad_flag(&[self.id]);
        self.graph
            .push_checked("index", value, Op::Index { x: self.id, i }, rg)
    }

    pub fn sum(self) -> Result<Var<'g>, NumericsError> {
        let value = Tensor::scalar(self.graph.nodes.borrow()[self.id].value.sum());
        let rg = self.graph.grad_flag(&[self.id]);
        self.graph.push_checked("sum", value, Op::Sum(self.id), rg)
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Var<'g>, NumericsError> {
        let value = self.value().reshape(shape)?;
        let rg = self.graph.grad_flag(&[self.id]);
        self.graph
            .push_checked("reshape", value, Op::Reshape(self.id), rg)
    }
}

pub(crate) fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
