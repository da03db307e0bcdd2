//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records nodes in creation order, which is a topological order
//! by construction; [`Graph::backward`] walks the tape once in reverse.
//! Shape mismatches between node operands are programming errors and panic.

use alloc::vec;
use alloc::vec::Vec;

use super::matrix::gemm;
use super::{Gradients, Matrix, Param};
use crate::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct NodeId(usize);

enum Value<'p> {
    Owned(Matrix),
    Borrowed(&'p Matrix),
}

enum Op<'p> {
    Input,
    Param(&'p Param),
    MatMul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Square(NodeId),
    LayerNorm(NodeId, Vec<f64>),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Concat(Vec<NodeId>),
    Slice(NodeId, usize),
    TileMask(NodeId, NodeId),
    StraightThrough(NodeId),
    SumCols(NodeId),
    Mean(NodeId),
}

struct Node<'p> {
    value: Value<'p>,
    op: Op<'p>,
    requires_grad: bool,
}

/// Computation tape. Parameters are borrowed, not copied, for the lifetime
/// of the graph.
#[derive(Default)]
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        match &self.nodes[id.0].value {
            Value::Owned(m) => m,
            Value::Borrowed(m) => m,
        }
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.shape(), (1, 1), "scalar() on non-scalar node");
        v.as_slice()[0]
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Matrix, op: Op<'p>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn any_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i.0].requires_grad)
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Input, false)
    }

    /// Trainable parameter leaf.
    pub fn param(&mut self, p: &'p Param) -> NodeId {
        self.bind(p, true)
    }

    /// Parameter used as a constant (target networks, frozen critics).
    pub fn frozen(&mut self, p: &'p Param) -> NodeId {
        self.bind(p, false)
    }

    pub fn bind(&mut self, p: &'p Param, trainable: bool) -> NodeId {
        self.nodes.push(Node {
            value: Value::Borrowed(p.value()),
            op: if trainable { Op::Param(p) } else { Op::Input },
            requires_grad: trainable,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, x: NodeId, w: NodeId) -> NodeId {
        let out = self.value(x).matmul(self.value(w));
        let rg = self.any_grad(&[x, w]);
        self.push(out, Op::MatMul(x, w), rg)
    }

    /// Adds the `1 x n` row `b` to every row of `x`.
    pub fn add_row(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let (xv, bv) = (self.value(x), self.value(b));
        assert_eq!(bv.shape(), (1, xv.cols()), "add_row expects a 1 x cols row");
        let mut out = xv.clone();
        let row = bv.as_slice();
        for r in 0..out.rows() {
            for (o, v) in out.row_mut(r).iter_mut().zip(row) {
                *o += v;
            }
        }
        let rg = self.any_grad(&[x, b]);
        self.push(out, Op::AddRow(x, b), rg)
    }

    /// Multiplies every row of `x` element-wise by the `1 x n` row `g`.
    pub fn mul_row(&mut self, x: NodeId, g: NodeId) -> NodeId {
        let (xv, gv) = (self.value(x), self.value(g));
        assert_eq!(gv.shape(), (1, xv.cols()), "mul_row expects a 1 x cols row");
        let mut out = xv.clone();
        let row = gv.as_slice();
        for r in 0..out.rows() {
            for (o, v) in out.row_mut(r).iter_mut().zip(row) {
                *o *= v;
            }
        }
        let rg = self.any_grad(&[x, g]);
        self.push(out, Op::MulRow(x, g), rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.any_grad(&[a, b]);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.any_grad(&[a, b]);
        self.push(out, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.any_grad(&[a, b]);
        self.push(out, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        let out = self.value(x).map(|v| v * k);
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Scale(x, k), rg)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(libm::tanh);
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Tanh(x), rg)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(libm::exp);
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Exp(x), rg)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v * v);
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Square(x), rg)
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)`, no affine part.
    pub fn layer_norm(&mut self, x: NodeId, eps: f64) -> NodeId {
        let xv = self.value(x);
        let n = xv.cols() as f64;
        let mut out = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.rows());
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let s = 1.0 / libm::sqrt(var + eps);
            for v in row.iter_mut() {
                *v = (*v - mean) * s;
            }
            inv_std.push(s);
        }
        let rg = self.any_grad(&[x]);
        self.push(out, Op::LayerNorm(x, inv_std), rg)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Softmax(x), rg)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let lse = log_sum_exp(row);
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let rg = self.any_grad(&[x]);
        self.push(out, Op::LogSoftmax(x), rg)
    }

    /// Horizontal concatenation.
    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Matrix::concat_cols(&mats);
        let rg = self.any_grad(parts);
        self.push(out, Op::Concat(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let out = self.value(x).slice_cols(start, len);
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Slice(x, start), rg)
    }

    /// Structured dropout: `out[b, m] = x[b, m] * mask[b, m mod K]` where `K`
    /// is the mask width. With a one-hot mask row selecting `j`, only the
    /// units at indices `m` with `m mod K = j` survive.
    pub fn tile_mask(&mut self, x: NodeId, mask: NodeId) -> NodeId {
        let (xv, mv) = (self.value(x), self.value(mask));
        let k = mv.cols();
        assert!(k > 0 && xv.cols() % k == 0, "tile_mask: width {} not a multiple of K = {k}", xv.cols());
        assert_eq!(xv.rows(), mv.rows(), "tile_mask row mismatch");
        let mut out = xv.clone();
        for r in 0..out.rows() {
            let m = mv.row(r);
            for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                *o *= m[c % k];
            }
        }
        let rg = self.any_grad(&[x, mask]);
        self.push(out, Op::TileMask(x, mask), rg)
    }

    /// Straight-through estimator: the node's value is `hard`, its gradient is
    /// passed unchanged to `soft`.
    pub fn straight_through(&mut self, hard: Matrix, soft: NodeId) -> NodeId {
        assert_eq!(hard.shape(), self.value(soft).shape(), "straight_through shape mismatch");
        let rg = self.any_grad(&[soft]);
        self.push(hard, Op::StraightThrough(soft), rg)
    }

    /// Row sums, `B x n -> B x 1`.
    pub fn sum_cols(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let sums: Vec<f64> = (0..xv.rows()).map(|r| xv.row(r).iter().sum()).collect();
        let out = Matrix::from_vec(xv.rows(), 1, sums);
        let rg = self.any_grad(&[x]);
        self.push(out, Op::SumCols(x), rg)
    }

    /// Mean of all entries, `-> 1 x 1`.
    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let out = Matrix::from_vec(1, 1, vec![xv.sum() / xv.len() as f64]);
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Mean(x), rg)
    }

    /// Reverse pass from the scalar node `loss`.
    ///
    /// Returns `d loss / d param` for every trainable parameter reachable from
    /// `loss`. A non-finite gradient anywhere on the tape is an error.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::shape("backward", "1x1 loss", super::param::shape_str(lv.shape())));
        }
        if !lv.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        let mut out = Gradients::default();
        let mut grads: Vec<Option<Matrix>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if !g.is_finite() {
                return Err(Error::NonFinite("gradient"));
            }
            let y = self.value(NodeId(idx));
            match &node.op {
                Op::Input => {}
                Op::Param(p) => out.add(p.name(), &g),
                &Op::MatMul(x, w) => {
                    if self.requires_grad(x) {
                        self.acc_gemm(&mut grads, x, &g, false, self.value(w), true);
                    }
                    if self.requires_grad(w) {
                        self.acc_gemm(&mut grads, w, self.value(x), true, &g, false);
                    }
                }
                &Op::AddRow(x, b) => {
                    if self.requires_grad(b) {
                        let mut db = Matrix::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (d, v) in db.as_mut_slice().iter_mut().zip(g.row(r)) {
                                *d += v;
                            }
                        }
                        self.acc(&mut grads, b, db);
                    }
                    if self.requires_grad(x) {
                        self.acc(&mut grads, x, g);
                    }
                }
                &Op::MulRow(x, s) => {
                    let xv = self.value(x);
                    let sv = self.value(s).as_slice();
                    if self.requires_grad(s) {
                        let mut ds = Matrix::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for ((d, gv), xv) in ds.as_mut_slice().iter_mut().zip(g.row(r)).zip(xv.row(r)) {
                                *d += gv * xv;
                            }
                        }
                        self.acc(&mut grads, s, ds);
                    }
                    if self.requires_grad(x) {
                        let mut dx = g;
                        for r in 0..dx.rows() {
                            for (d, v) in dx.row_mut(r).iter_mut().zip(sv) {
                                *d *= v;
                            }
                        }
                        self.acc(&mut grads, x, dx);
                    }
                }
                &Op::Add(a, b) => {
                    if self.requires_grad(a) {
                        self.acc(&mut grads, a, g.clone());
                    }
                    if self.requires_grad(b) {
                        self.acc(&mut grads, b, g);
                    }
                }
                &Op::Sub(a, b) => {
                    if self.requires_grad(a) {
                        self.acc(&mut grads, a, g.clone());
                    }
                    if self.requires_grad(b) {
                        self.acc(&mut grads, b, g.map(|v| -v));
                    }
                }
                &Op::Mul(a, b) => {
                    if self.requires_grad(a) {
                        self.acc(&mut grads, a, g.zip_map(self.value(b), |d, v| d * v));
                    }
                    if self.requires_grad(b) {
                        self.acc(&mut grads, b, g.zip_map(self.value(a), |d, v| d * v));
                    }
                }
                &Op::Scale(x, k) => self.acc(&mut grads, x, g.map(|d| d * k)),
                &Op::Relu(x) => self.acc(&mut grads, x, g.zip_map(y, |d, v| if v > 0.0 { d } else { 0.0 })),
                &Op::Tanh(x) => self.acc(&mut grads, x, g.zip_map(y, |d, v| d * (1.0 - v * v))),
                &Op::Exp(x) => self.acc(&mut grads, x, g.zip_map(y, |d, v| d * v)),
                &Op::Square(x) => self.acc(&mut grads, x, g.zip_map(self.value(x), |d, v| 2.0 * d * v)),
                Op::LayerNorm(x, inv_std) => {
                    let n = g.cols() as f64;
                    let mut dx = Matrix::zeros(g.rows(), g.cols());
                    for r in 0..g.rows() {
                        let (gr, yr) = (g.row(r), y.row(r));
                        let mean_g = gr.iter().sum::<f64>() / n;
                        let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                        for ((d, gv), yv) in dx.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *d = inv_std[r] * (gv - mean_g - yv * mean_gy);
                        }
                    }
                    self.acc(&mut grads, *x, dx);
                }
                &Op::Softmax(x) => {
                    let mut dx = g;
                    for r in 0..dx.rows() {
                        let yr = y.row(r);
                        let dot: f64 = dx.row(r).iter().zip(yr).map(|(a, b)| a * b).sum();
                        for (d, yv) in dx.row_mut(r).iter_mut().zip(yr) {
                            *d = yv * (*d - dot);
                        }
                    }
                    self.acc(&mut grads, x, dx);
                }
                &Op::LogSoftmax(x) => {
                    let mut dx = g;
                    for r in 0..dx.rows() {
                        let yr = y.row(r);
                        let total: f64 = dx.row(r).iter().sum();
                        for (d, yv) in dx.row_mut(r).iter_mut().zip(yr) {
                            *d -= libm::exp(*yv) * total;
                        }
                    }
                    self.acc(&mut grads, x, dx);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        if self.requires_grad(p) {
                            self.acc(&mut grads, p, g.slice_cols(offset, w));
                        }
                        offset += w;
                    }
                }
                &Op::Slice(x, start) => {
                    let xv = self.value(x);
                    let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                    for r in 0..g.rows() {
                        dx.row_mut(r)[start..start + g.cols()].copy_from_slice(g.row(r));
                    }
                    self.acc(&mut grads, x, dx);
                }
                &Op::TileMask(x, mask) => {
                    let (xv, mv) = (self.value(x), self.value(mask));
                    let k = mv.cols();
                    if self.requires_grad(mask) {
                        let mut dm = Matrix::zeros(mv.rows(), k);
                        for r in 0..g.rows() {
                            let dmr = dm.row_mut(r);
                            for (c, (gv, xv)) in g.row(r).iter().zip(xv.row(r)).enumerate() {
                                dmr[c % k] += gv * xv;
                            }
                        }
                        self.acc(&mut grads, mask, dm);
                    }
                    if self.requires_grad(x) {
                        let mut dx = g;
                        for r in 0..dx.rows() {
                            let m = mv.row(r);
                            for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                                *d *= m[c % k];
                            }
                        }
                        self.acc(&mut grads, x, dx);
                    }
                }
                &Op::StraightThrough(soft) => self.acc(&mut grads, soft, g),
                &Op::SumCols(x) => {
                    let xv = self.value(x);
                    let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                    for r in 0..xv.rows() {
                        let d = g.get(r, 0);
                        dx.row_mut(r).iter_mut().for_each(|v| *v = d);
                    }
                    self.acc(&mut grads, x, dx);
                }
                &Op::Mean(x) => {
                    let xv = self.value(x);
                    let d = g.get(0, 0) / xv.len() as f64;
                    self.acc(&mut grads, x, Matrix::filled(xv.rows(), xv.cols(), d));
                }
            }
        }
        Ok(out)
    }

    fn acc(&self, grads: &mut [Option<Matrix>], target: NodeId, g: Matrix) {
        if !self.requires_grad(target) {
            return;
        }
        match &mut grads[target.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn acc_gemm(&self, grads: &mut [Option<Matrix>], target: NodeId, a: &Matrix, ta: bool, b: &Matrix, tb: bool) {
        let (rows, cols) = self.value(target).shape();
        match &mut grads[target.0] {
            Some(acc) => gemm(a, ta, b, tb, acc, 1.0),
            slot @ None => {
                let mut m = Matrix::zeros(rows, cols);
                gemm(a, ta, b, tb, &mut m, 0.0);
                *slot = Some(m);
            }
        }
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + libm::log(row.iter().map(|v| libm::exp(v - max)).sum::<f64>())
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
