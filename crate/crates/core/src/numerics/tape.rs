//! Reverse-mode automatic differentiation over `Tensor2` values.
//!
//! A `Tape` records every operation of a forward pass. `backward` walks the
//! record in reverse and accumulates gradients for the parameters that were
//! read through `Tape::param`. Operations panic on shape mismatches; the
//! block-level functions in `blocks` check shapes and return errors first.

use std::borrow::Cow;
use std::collections::HashMap;

use super::params::{Grads, ParamId, ParamStore};
use super::tensor::Tensor2;

/// Probabilities below this are clamped before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Contiguous row range `start..start + len`.
pub type Segment = (usize, usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    OneMinus(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    StackRows(Vec<(Var, usize)>),
    Select(Vec<bool>, Var, Var),
    SoftmaxRows(Var),
    SegmentSoftmax(Var, Vec<Segment>),
    SegmentWeightedSum(Var, Var, Vec<Segment>),
    SmoothL1(Var),
    BlockSum(Var, usize),
    SumAll(Var),
    MinRows(Var),
    Focal {
        probs: Var,
        targets: Vec<usize>,
        gamma: f64,
        alpha: [f64; 3],
    },
}

struct Node<'p> {
    value: Cow<'p, Tensor2>,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node<'p>>,
    param_vars: HashMap<ParamId, Var>,
    clamped: usize,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Elementwise smooth-L1: `0.5 x^2` for `|x| <= 1`, else `|x| - 0.5`.
pub fn smooth_l1_elem(x: f64) -> f64 {
    if x.abs() <= 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() <= 1.0 {
        x
    } else {
        x.signum()
    }
}

/// Softmax of one slice, shifted by its maximum.
pub fn softmax_slice(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Focal term `-alpha (1-p)^gamma ln(max(p, floor))` and its derivative in `p`.
fn focal_value_grad(p: f64, gamma: f64, alpha: f64) -> (f64, f64) {
    let pc = p.max(PROB_FLOOR);
    let ln_p = pc.ln();
    let q = 1.0 - p;
    let f = if gamma == 0.0 { 1.0 } else { q.max(0.0).powf(gamma) };
    let value = -alpha * f * ln_p;
    let df = if gamma == 0.0 || ln_p == 0.0 {
        0.0
    } else {
        -gamma * q.max(0.0).powf(gamma - 1.0)
    };
    let dlog = if p >= PROB_FLOOR { 1.0 / pc } else { 0.0 };
    (value, -alpha * (df * ln_p + f * dlog))
}

pub fn focal_value(p: f64, gamma: f64, alpha: f64) -> f64 {
    focal_value_grad(p, gamma, alpha).0
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            clamped: 0,
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    /// Number of probabilities clamped at `PROB_FLOOR` by focal terms.
    pub fn clamp_events(&self) -> usize {
        self.clamped
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor2, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn constant(&mut self, value: Tensor2) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: Cow::Borrowed(self.params.get(id)),
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(value, Op::Sub(a, b), &[a, b])
    }

    /// Adds the single row of `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert!(vb.rows == 1 && vb.cols == va.cols, "add_row shapes");
        let mut value = va.clone();
        for r in 0..value.rows {
            for (x, y) in value.row_mut(r).iter_mut().zip(&vb.data) {
                *x += y;
            }
        }
        self.push(value, Op::AddRow(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(value, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push(value, Op::Scale(a, s), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| if x >= 0.0 { x } else { slope * x });
        self.push(value, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a), &[a])
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| 1.0 - x);
        self.push(value, Op::OneMinus(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut value = Tensor2::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.rows, rows, "concat_cols row counts");
            for r in 0..rows {
                value.row_mut(r)[offset..offset + v.cols].copy_from_slice(v.row(r));
            }
            offset += v.cols;
        }
        self.push(value, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let va = self.value(a);
        assert!(start <= end && end <= va.cols, "slice_cols range");
        let mut value = Tensor2::zeros(va.rows, end - start);
        for r in 0..va.rows {
            value.row_mut(r).copy_from_slice(&va.row(r)[start..end]);
        }
        self.push(value, Op::SliceCols(a, start), &[a])
    }

    /// Rows picked from arbitrary variables, in order.
    pub fn stack_rows(&mut self, picks: &[(Var, usize)]) -> Var {
        assert!(!picks.is_empty(), "stack_rows needs at least one row");
        let cols = self.value(picks[0].0).cols;
        let mut value = Tensor2::zeros(picks.len(), cols);
        for (i, &(v, r)) in picks.iter().enumerate() {
            let src = self.value(v);
            assert_eq!(src.cols, cols, "stack_rows column counts");
            value.row_mut(i).copy_from_slice(src.row(r));
        }
        let inputs: Vec<Var> = picks.iter().map(|p| p.0).collect();
        self.push(value, Op::StackRows(picks.to_vec()), &inputs)
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let picks: Vec<(Var, usize)> = rows.iter().map(|&r| (a, r)).collect();
        self.stack_rows(&picks)
    }

    /// Row `r` from `a` where `mask[r]`, else from `b`.
    pub fn select_rows(&mut self, mask: &[bool], a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "select_rows shapes");
        assert_eq!(mask.len(), va.rows, "select_rows mask length");
        let mut value = vb.clone();
        for (r, &m) in mask.iter().enumerate() {
            if m {
                value.row_mut(r).copy_from_slice(va.row(r));
            }
        }
        self.push(value, Op::Select(mask.to_vec(), a, b), &[a, b])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut value = Tensor2::zeros(va.rows, va.cols);
        for r in 0..va.rows {
            value.row_mut(r).copy_from_slice(&softmax_slice(va.row(r)));
        }
        self.push(value, Op::SoftmaxRows(a), &[a])
    }

    /// Softmax of a column vector within each segment.
    pub fn segment_softmax(&mut self, a: Var, segments: &[Segment]) -> Var {
        let va = self.value(a);
        assert_eq!(va.cols, 1, "segment_softmax expects a column vector");
        let mut value = Tensor2::zeros(va.rows, 1);
        for &(start, len) in segments {
            if len == 0 {
                continue;
            }
            let sm = softmax_slice(&va.data[start..start + len]);
            value.data[start..start + len].copy_from_slice(&sm);
        }
        self.push(value, Op::SegmentSoftmax(a, segments.to_vec()), &[a])
    }

    /// One output row per segment: `sum_e w[e] * values[e]`. Empty segments
    /// give a zero row.
    pub fn segment_weighted_sum(&mut self, weights: Var, values: Var, segments: &[Segment]) -> Var {
        let (w, v) = (self.value(weights), self.value(values));
        assert_eq!(w.cols, 1, "segment weights must be a column vector");
        assert_eq!(w.rows, v.rows, "segment weights and values rows");
        let mut value = Tensor2::zeros(segments.len(), v.cols);
        for (s, &(start, len)) in segments.iter().enumerate() {
            for e in start..start + len {
                let we = w.data[e];
                for (o, x) in value.row_mut(s).iter_mut().zip(v.row(e)) {
                    *o += we * x;
                }
            }
        }
        self.push(
            value,
            Op::SegmentWeightedSum(weights, values, segments.to_vec()),
            &[weights, values],
        )
    }

    pub fn smooth_l1(&mut self, a: Var) -> Var {
        let value = self.value(a).map(smooth_l1_elem);
        self.push(value, Op::SmoothL1(a), &[a])
    }

    /// Sum of each block of `block_rows` consecutive rows, as a column vector.
    pub fn block_sum(&mut self, a: Var, block_rows: usize) -> Var {
        let va = self.value(a);
        assert!(block_rows > 0 && va.rows.is_multiple_of(block_rows), "block_sum block size");
        let blocks = va.rows / block_rows;
        let mut value = Tensor2::zeros(blocks, 1);
        for b in 0..blocks {
            value.data[b] = va.data[b * block_rows * va.cols..(b + 1) * block_rows * va.cols].iter().sum();
        }
        self.push(value, Op::BlockSum(a, block_rows), &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor2::filled(1, 1, s), Op::SumAll(a), &[a])
    }

    /// Minimum entry of a column vector; the gradient goes to the lowest
    /// index attaining it.
    pub fn min_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        assert!(va.cols == 1 && va.rows > 0, "min_rows expects a non-empty column vector");
        let m = va.data.iter().copied().fold(f64::INFINITY, f64::min);
        self.push(Tensor2::filled(1, 1, m), Op::MinRows(a), &[a])
    }

    /// Mean focal loss over rows of a probability matrix with 3 columns.
    pub fn focal(&mut self, probs: Var, targets: &[usize], gamma: f64, alpha: [f64; 3]) -> Var {
        let vp = self.value(probs);
        assert_eq!(vp.cols, 3, "focal expects 3 classes");
        assert_eq!(vp.rows, targets.len(), "focal target count");
        let mut total = 0.0;
        let mut clamped = 0;
        for (r, &t) in targets.iter().enumerate() {
            let p = vp.get(r, t);
            if p < PROB_FLOOR {
                clamped += 1;
            }
            total += focal_value(p, gamma, alpha[t]);
        }
        self.clamped += clamped;
        let mean = if targets.is_empty() { 0.0 } else { total / targets.len() as f64 };
        let op = Op::Focal {
            probs,
            targets: targets.to_vec(),
            gamma,
            alpha,
        };
        self.push(Tensor2::filled(1, 1, mean), op, &[probs])
    }

    /// Gradients of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor2>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor2::filled(1, 1, 1.0));
        let mut out = self.params.zeros_like();
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads, &mut out);
        }
        out
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn acc(&self, grads: &mut [Option<Tensor2>], v: Var, g: Tensor2) {
        if !self.wants(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn acc_with(&self, grads: &mut [Option<Tensor2>], v: Var, f: impl FnOnce(&mut Tensor2)) {
        if !self.wants(v) {
            return;
        }
        let (r, c) = self.shape(v);
        let slot = grads[v.0].get_or_insert_with(|| Tensor2::zeros(r, c));
        f(slot);
    }

    fn propagate(&self, op: &Op, y: &Tensor2, g: &Tensor2, grads: &mut [Option<Tensor2>], out: &mut Grads) {
        match op {
            Op::Leaf => {}
            Op::Param(id) => out.tensors[id.0].add_assign(g),
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    self.acc(grads, *a, g.matmul_t(self.value(*b)));
                }
                if self.wants(*b) {
                    self.acc(grads, *b, self.value(*a).t_matmul(g));
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.map(|x| -x));
            }
            Op::AddRow(a, b) => {
                self.acc(grads, *a, g.clone());
                if self.wants(*b) {
                    let mut col = Tensor2::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (c, x) in col.data.iter_mut().zip(g.row(r)) {
                            *c += x;
                        }
                    }
                    self.acc(grads, *b, col);
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.acc(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.wants(*b) {
                    self.acc(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::Scale(a, s) => self.acc(grads, *a, g.map(|x| x * s)),
            Op::Relu(a) => {
                let d = g.zip_map(self.value(*a), |gx, x| if x > 0.0 { gx } else { 0.0 });
                self.acc(grads, *a, d);
            }
            Op::LeakyRelu(a, slope) => {
                let d = g.zip_map(self.value(*a), |gx, x| if x >= 0.0 { gx } else { slope * gx });
                self.acc(grads, *a, d);
            }
            Op::Sigmoid(a) => self.acc(grads, *a, g.zip_map(y, |gx, s| gx * s * (1.0 - s))),
            Op::Tanh(a) => self.acc(grads, *a, g.zip_map(y, |gx, t| gx * (1.0 - t * t))),
            Op::OneMinus(a) => self.acc(grads, *a, g.map(|x| -x)),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = self.value(p).cols;
                    if self.wants(p) {
                        let mut d = Tensor2::zeros(g.rows, cols);
                        for r in 0..g.rows {
                            d.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        self.acc(grads, p, d);
                    }
                    offset += cols;
                }
            }
            Op::SliceCols(a, start) => {
                let start = *start;
                self.acc_with(grads, *a, |d| {
                    for r in 0..g.rows {
                        for (x, gx) in d.row_mut(r)[start..start + g.cols].iter_mut().zip(g.row(r)) {
                            *x += gx;
                        }
                    }
                });
            }
            Op::StackRows(picks) => {
                for (i, &(v, r)) in picks.iter().enumerate() {
                    self.acc_with(grads, v, |d| {
                        for (x, gx) in d.row_mut(r).iter_mut().zip(g.row(i)) {
                            *x += gx;
                        }
                    });
                }
            }
            Op::Select(mask, a, b) => {
                for (v, take) in [(*a, true), (*b, false)] {
                    self.acc_with(grads, v, |d| {
                        for (r, &m) in mask.iter().enumerate() {
                            if m == take {
                                for (x, gx) in d.row_mut(r).iter_mut().zip(g.row(r)) {
                                    *x += gx;
                                }
                            }
                        }
                    });
                }
            }
            Op::SoftmaxRows(a) => {
                let mut d = Tensor2::zeros(g.rows, g.cols);
                for r in 0..g.rows {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((x, &yy), &gg) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *x = yy * (gg - dot);
                    }
                }
                self.acc(grads, *a, d);
            }
            Op::SegmentSoftmax(a, segments) => {
                let mut d = Tensor2::zeros(g.rows, 1);
                for &(start, len) in segments {
                    let range = start..start + len;
                    let dot: f64 = y.data[range.clone()].iter().zip(&g.data[range.clone()]).map(|(a, b)| a * b).sum();
                    for e in range {
                        d.data[e] = y.data[e] * (g.data[e] - dot);
                    }
                }
                self.acc(grads, *a, d);
            }
            Op::SegmentWeightedSum(w, v, segments) => {
                let (vw, vv) = (self.value(*w), self.value(*v));
                if self.wants(*w) {
                    let mut dw = Tensor2::zeros(vw.rows, 1);
                    for (s, &(start, len)) in segments.iter().enumerate() {
                        for e in start..start + len {
                            dw.data[e] = g.row(s).iter().zip(vv.row(e)).map(|(a, b)| a * b).sum();
                        }
                    }
                    self.acc(grads, *w, dw);
                }
                if self.wants(*v) {
                    let mut dv = Tensor2::zeros(vv.rows, vv.cols);
                    for (s, &(start, len)) in segments.iter().enumerate() {
                        for e in start..start + len {
                            let we = vw.data[e];
                            for (x, gx) in dv.row_mut(e).iter_mut().zip(g.row(s)) {
                                *x = we * gx;
                            }
                        }
                    }
                    self.acc(grads, *v, dv);
                }
            }
            Op::SmoothL1(a) => {
                let d = g.zip_map(self.value(*a), |gx, x| gx * smooth_l1_grad(x));
                self.acc(grads, *a, d);
            }
            Op::BlockSum(a, block_rows) => {
                let (rows, cols) = self.shape(*a);
                let mut d = Tensor2::zeros(rows, cols);
                for (i, x) in d.data.iter_mut().enumerate() {
                    *x = g.data[i / (block_rows * cols)];
                }
                self.acc(grads, *a, d);
            }
            Op::SumAll(a) => {
                let (rows, cols) = self.shape(*a);
                self.acc(grads, *a, Tensor2::filled(rows, cols, g.data[0]));
            }
            Op::MinRows(a) => {
                let va = self.value(*a);
                let idx = (0..va.rows).find(|&i| va.data[i] == y.data[0]).unwrap_or(0);
                let mut d = Tensor2::zeros(va.rows, 1);
                d.data[idx] = g.data[0];
                self.acc(grads, *a, d);
            }
            Op::Focal {
                probs,
                targets,
                gamma,
                alpha,
            } => {
                let vp = self.value(*probs);
                let mut d = Tensor2::zeros(vp.rows, vp.cols);
                let scale = g.data[0] / targets.len().max(1) as f64;
                for (r, &t) in targets.iter().enumerate() {
                    let (_, dp) = focal_value_grad(vp.get(r, t), *gamma, alpha[t]);
                    d.set(r, t, dp * scale);
                }
                self.acc(grads, *probs, d);
            }
        }
    }
}
