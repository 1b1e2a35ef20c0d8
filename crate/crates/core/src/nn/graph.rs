//! Reverse-mode automatic differentiation over 2-D matrices.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value
//! and enough saved state to run its backward rule. Parameters enter the tape
//! as copies; [`Graph::backward`] returns gradients which are then
//! accumulated into a [`ParamStore`].

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm_into, Mat, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Additive logit used for masked attention positions.
pub const MASK_LOGIT: f64 = -1e9;

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    AddCol(Var, Var),
    Scale(Var, T),
    Relu(Var),
    LeakyRelu(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNorm { a: Var, inv_std: Vec<T> },
    Embed { table: Var, ids: Vec<usize>, frozen: bool },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows { a: Var, start: usize },
    SliceCols { a: Var, start: usize },
    Transpose(Var),
    MeanRows(Var),
    StdRows { a: Var, mean: Vec<T> },
    MeanAll(Var),
    SumAll(Var),
    Conv1d { x: Var, w: Var, k: usize, dilation: usize, pad_left: usize, cols: Mat<T> },
    RepeatCols { a: Var, factor: usize },
    Fused { a: Var, grad: Mat<T> },
}

struct Node<T> {
    value: Mat<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar output with respect to every node on the tape.
pub struct Grads<T> {
    grads: Vec<Option<Mat<T>>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Mat<T>> {
        self.grads[v.0].as_ref()
    }

    /// Adds parameter gradients into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) {
        let params = store.params_mut();
        for &(pid, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                params[pid.0].grad.add_assign(g);
            }
        }
    }
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

    fn push(&mut self, value: Mat<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Mat<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data[0]
    }

    pub fn constant(&mut self, m: Mat<T>) -> Var {
        self.push(m, Op::Leaf, false)
    }

    /// A leaf that receives a gradient but is not a stored parameter.
    pub fn input(&mut self, m: Mat<T>) -> Var {
        self.push(m, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) · op(b)` with optional transposes.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let m = if ta { av.cols } else { av.rows };
        let n = if tb { bv.rows } else { bv.cols };
        let mut out = Mat::zeros(m, n);
        gemm_into(av, ta, bv, tb, &mut out, false);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul { a, b, ta, tb }, ng)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect();
        let out = Mat::from_vec(av.rows, av.cols, data);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!((1, av.cols), rv.shape(), "add_row shape mismatch");
        let mut out = av.clone();
        for r in 0..out.rows {
            for (x, &b) in out.row_mut(r).iter_mut().zip(&rv.data) {
                *x += b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(out, Op::AddRow(a, row), ng)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!((1, av.cols), rv.shape(), "mul_row shape mismatch");
        let mut out = av.clone();
        for r in 0..out.rows {
            for (x, &b) in out.row_mut(r).iter_mut().zip(&rv.data) {
                *x *= b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(out, Op::MulRow(a, row), ng)
    }

    /// Adds a `rows × 1` column to every column of `a`.
    pub fn add_col(&mut self, a: Var, col: Var) -> Var {
        let (av, cv) = (self.value(a), self.value(col));
        assert_eq!((av.rows, 1), cv.shape(), "add_col shape mismatch");
        let mut out = av.clone();
        for r in 0..out.rows {
            let b = cv.data[r];
            out.row_mut(r).iter_mut().for_each(|x| *x += b);
        }
        let ng = self.ng(a) || self.ng(col);
        self.push(out, Op::AddCol(a, col), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::c(s);
        let out = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(T::zero()));
        let ng = self.ng(a);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let s = T::c(slope);
        let out = self.value(a).map(|x| if x > T::zero() { x } else { x * s });
        let ng = self.ng(a);
        self.push(out, Op::LeakyRelu(a, s), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.tanh());
        let ng = self.ng(a);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows {
            softmax_in_place(out.row_mut(r));
        }
        let ng = self.ng(a);
        self.push(out, Op::SoftmaxRows(a), ng)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|x| *x -= lse);
        }
        let ng = self.ng(a);
        self.push(out, Op::LogSoftmaxRows(a), ng)
    }

    /// Per-row standardization without affine terms.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let av = self.value(a);
        let n = T::c(av.cols as f64);
        let mut out = av.clone();
        let mut inv_std = Vec::with_capacity(av.rows);
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
            let is = T::one() / (var + T::c(eps)).sqrt();
            row.iter_mut().for_each(|x| *x = (*x - mean) * is);
            inv_std.push(is);
        }
        let ng = self.ng(a);
        self.push(out, Op::LayerNorm { a, inv_std }, ng)
    }

    /// Gathers rows of `table`. With `frozen`, no gradient flows to the table.
    pub fn embed(&mut self, table: Var, ids: &[usize], frozen: bool) -> Var {
        let tv = self.value(table);
        let mut out = Mat::zeros(ids.len(), tv.cols);
        for (i, &id) in ids.iter().enumerate() {
            assert!(id < tv.rows, "embedding id {id} out of range {}", tv.rows);
            out.row_mut(i).copy_from_slice(tv.row(id));
        }
        let ng = self.ng(table) && !frozen;
        self.push(out, Op::Embed { table, ids: ids.to_vec(), frozen }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows, rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[off..off + pv.cols].copy_from_slice(pv.row(r));
            }
            off += pv.cols;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols, cols, "concat_rows col mismatch");
            data.extend_from_slice(&pv.data);
            rows += pv.rows;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.rows, "slice_rows out of range");
        let out = Mat::from_vec(len, av.cols, av.data[start * av.cols..(start + len) * av.cols].to_vec());
        let ng = self.ng(a);
        self.push(out, Op::SliceRows { a, start }, ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.cols, "slice_cols out of range");
        let mut out = Mat::zeros(av.rows, len);
        for r in 0..av.rows {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..start + len]);
        }
        let ng = self.ng(a);
        self.push(out, Op::SliceCols { a, start }, ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let ng = self.ng(a);
        self.push(out, Op::Transpose(a), ng)
    }

    /// Column means, `1 × cols`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = Mat::zeros(1, av.cols);
        for r in 0..av.rows {
            for (o, &x) in out.data.iter_mut().zip(av.row(r)) {
                *o += x;
            }
        }
        let n = T::c(av.rows.max(1) as f64);
        out.data.iter_mut().for_each(|x| *x = *x / n);
        let ng = self.ng(a);
        self.push(out, Op::MeanRows(a), ng)
    }

    /// Column population standard deviations, `1 × cols`.
    pub fn std_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let n = T::c(av.rows.max(1) as f64);
        let mut mean = vec![T::zero(); av.cols];
        for r in 0..av.rows {
            for (m, &x) in mean.iter_mut().zip(av.row(r)) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / n);
        let mut var = vec![T::zero(); av.cols];
        for r in 0..av.rows {
            for ((v, &m), &x) in var.iter_mut().zip(&mean).zip(av.row(r)) {
                *v += (x - m) * (x - m);
            }
        }
        let out = Mat::from_vec(1, av.cols, var.into_iter().map(|v| (v / n).sqrt()).collect());
        let ng = self.ng(a);
        self.push(out, Op::StdRows { a, mean }, ng)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let out = Mat::scalar(av.sum() / T::c(av.len().max(1) as f64));
        let ng = self.ng(a);
        self.push(out, Op::MeanAll(a), ng)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Mat::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(out, Op::SumAll(a), ng)
    }

    /// Dilated 1-D convolution over a channels-first `c_in × time` input.
    /// `w` is `c_out × (c_in · k)` with tap index fastest.
    pub fn conv1d(&mut self, x: Var, w: Var, k: usize, dilation: usize, pad_left: usize, pad_right: usize) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        let c_in = xv.rows;
        assert_eq!(wv.cols, c_in * k, "conv1d weight does not match {c_in} input channels x {k} taps");
        let span = dilation * (k - 1);
        let t_pad = xv.cols + pad_left + pad_right;
        assert!(t_pad >= span, "conv1d input too short");
        let t_out = t_pad - span;
        let mut cols = Mat::zeros(c_in * k, t_out);
        for c in 0..c_in {
            let xr = xv.row(c);
            for tap in 0..k {
                let row = cols.row_mut(c * k + tap);
                let shift = tap * dilation;
                for (t, o) in row.iter_mut().enumerate() {
                    let src = t + shift;
                    if src >= pad_left && src - pad_left < xr.len() {
                        *o = xr[src - pad_left];
                    }
                }
            }
        }
        let mut out = Mat::zeros(wv.rows, t_out);
        gemm_into(wv, false, &cols, false, &mut out, false);
        let ng = self.ng(x) || self.ng(w);
        self.push(out, Op::Conv1d { x, w, k, dilation, pad_left, cols }, ng)
    }

    /// Nearest-neighbour upsampling along columns.
    pub fn repeat_cols(&mut self, a: Var, factor: usize) -> Var {
        let av = self.value(a);
        let mut out = Mat::zeros(av.rows, av.cols * factor);
        for r in 0..av.rows {
            let src = av.row(r);
            let dst = out.row_mut(r);
            for (j, &x) in src.iter().enumerate() {
                dst[j * factor..(j + 1) * factor].iter_mut().for_each(|o| *o = x);
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::RepeatCols { a, factor }, ng)
    }

    /// Registers a scalar computed outside the tape together with its
    /// gradient with respect to `a`.
    pub fn fused_scalar(&mut self, a: Var, value: T, grad: Mat<T>) -> Var {
        assert_eq!(self.value(a).shape(), grad.shape(), "fused gradient shape");
        let ng = self.ng(a);
        self.push(Mat::scalar(value), Op::Fused { a, grad }, ng)
    }

    /// Backpropagates from a `1 × 1` node.
    pub fn backward(&self, out: Var) -> Grads<T> {
        assert_eq!(self.shape(out), (1, 1), "backward needs a scalar output");
        let n = self.nodes.len();
        let mut grads: Vec<Option<Mat<T>>> = (0..n).map(|_| None).collect();
        grads[out.0] = Some(Mat::scalar(T::one()));
        let mut params = Vec::new();
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            if let Op::Param(pid) = node.op {
                params.push((pid, i));
            }
            grads[i] = Some(g);
        }
        Grads { grads, params }
    }

    fn backward_node(&self, i: usize, g: &Mat<T>, grads: &mut [Option<Mat<T>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let da = acc_slot(grads, *a, av.rows, av.cols);
                    match (ta, tb) {
                        (false, false) => gemm_into(g, false, bv, true, da, true),
                        (false, true) => gemm_into(g, false, bv, false, da, true),
                        (true, false) => gemm_into(bv, false, g, true, da, true),
                        (true, true) => gemm_into(bv, true, g, true, da, true),
                    }
                }
                if self.ng(*b) {
                    let db = acc_slot(grads, *b, bv.rows, bv.cols);
                    match (ta, tb) {
                        (false, false) => gemm_into(av, true, g, false, db, true),
                        (true, false) => gemm_into(av, false, g, false, db, true),
                        (false, true) => gemm_into(g, true, av, false, db, true),
                        (true, true) => gemm_into(g, true, av, true, db, true),
                    }
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g, |_, gi| gi);
                self.acc(grads, *b, g, |_, gi| gi);
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g, |_, gi| gi);
                self.acc(grads, *b, g, |_, gi| -gi);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, g, |j, gi| gi * bv.data[j]);
                self.acc(grads, *b, g, |j, gi| gi * av.data[j]);
            }
            Op::AddRow(a, row) => {
                self.acc(grads, *a, g, |_, gi| gi);
                if self.ng(*row) {
                    let d = acc_slot(grads, *row, 1, g.cols);
                    for r in 0..g.rows {
                        for (o, &x) in d.data.iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                }
            }
            Op::MulRow(a, row) => {
                let (av, rv) = (self.value(*a), self.value(*row));
                let cols = g.cols;
                self.acc(grads, *a, g, |j, gi| gi * rv.data[j % cols]);
                if self.ng(*row) {
                    let d = acc_slot(grads, *row, 1, cols);
                    for r in 0..g.rows {
                        for ((o, &x), &gv) in d.data.iter_mut().zip(av.row(r)).zip(g.row(r)) {
                            *o += x * gv;
                        }
                    }
                }
            }
            Op::AddCol(a, col) => {
                self.acc(grads, *a, g, |_, gi| gi);
                if self.ng(*col) {
                    let d = acc_slot(grads, *col, g.rows, 1);
                    for r in 0..g.rows {
                        d.data[r] += g.row(r).iter().copied().sum::<T>();
                    }
                }
            }
            Op::Scale(a, s) => self.acc(grads, *a, g, |_, gi| gi * *s),
            Op::Relu(a) => {
                let av = self.value(*a);
                self.acc(grads, *a, g, |j, gi| if av.data[j] > T::zero() { gi } else { T::zero() });
            }
            Op::LeakyRelu(a, s) => {
                let av = self.value(*a);
                self.acc(grads, *a, g, |j, gi| if av.data[j] > T::zero() { gi } else { gi * *s });
            }
            Op::Tanh(a) => self.acc(grads, *a, g, |j, gi| gi * (T::one() - y.data[j] * y.data[j])),
            Op::Sigmoid(a) => self.acc(grads, *a, g, |j, gi| gi * y.data[j] * (T::one() - y.data[j])),
            Op::SoftmaxRows(a) => {
                if self.ng(*a) {
                    let d = acc_slot(grads, *a, y.rows, y.cols);
                    for r in 0..y.rows {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for ((o, &p), &q) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o += p * (q - dot);
                        }
                    }
                }
            }
            Op::LogSoftmaxRows(a) => {
                if self.ng(*a) {
                    let d = acc_slot(grads, *a, y.rows, y.cols);
                    for r in 0..y.rows {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let total: T = gr.iter().copied().sum();
                        for ((o, &ly), &q) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o += q - ly.exp() * total;
                        }
                    }
                }
            }
            Op::LayerNorm { a, inv_std } => {
                if self.ng(*a) {
                    let n = T::c(y.cols as f64);
                    let d = acc_slot(grads, *a, y.rows, y.cols);
                    for r in 0..y.rows {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let mg = gr.iter().copied().sum::<T>() / n;
                        let mgy = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum::<T>() / n;
                        for ((o, &yv), &gv) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o += inv_std[r] * (gv - mg - yv * mgy);
                        }
                    }
                }
            }
            Op::Embed { table, ids, frozen } => {
                if !*frozen && self.ng(*table) {
                    let tv = self.value(*table);
                    let d = acc_slot(grads, *table, tv.rows, tv.cols);
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, &x) in d.row_mut(id).iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pc = self.value(p).cols;
                    if self.ng(p) {
                        let d = acc_slot(grads, p, g.rows, pc);
                        for r in 0..g.rows {
                            for (o, &x) in d.row_mut(r).iter_mut().zip(&g.row(r)[off..off + pc]) {
                                *o += x;
                            }
                        }
                    }
                    off += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pr = self.value(p).rows;
                    if self.ng(p) {
                        let d = acc_slot(grads, p, pr, g.cols);
                        for (o, &x) in d.data.iter_mut().zip(&g.data[off * g.cols..(off + pr) * g.cols]) {
                            *o += x;
                        }
                    }
                    off += pr;
                }
            }
            Op::SliceRows { a, start } => {
                if self.ng(*a) {
                    let av = self.value(*a);
                    let d = acc_slot(grads, *a, av.rows, av.cols);
                    for (o, &x) in d.data[start * av.cols..].iter_mut().zip(&g.data) {
                        *o += x;
                    }
                }
            }
            Op::SliceCols { a, start } => {
                if self.ng(*a) {
                    let av = self.value(*a);
                    let d = acc_slot(grads, *a, av.rows, av.cols);
                    for r in 0..g.rows {
                        for (o, &x) in d.row_mut(r)[*start..].iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                if self.ng(*a) {
                    let gt = g.transpose();
                    acc_slot(grads, *a, gt.rows, gt.cols).add_assign(&gt);
                }
            }
            Op::MeanRows(a) => {
                if self.ng(*a) {
                    let av = self.value(*a);
                    let n = T::c(av.rows.max(1) as f64);
                    let d = acc_slot(grads, *a, av.rows, av.cols);
                    for r in 0..d.rows {
                        for (o, &gv) in d.row_mut(r).iter_mut().zip(&g.data) {
                            *o += gv / n;
                        }
                    }
                }
            }
            Op::StdRows { a, mean } => {
                if self.ng(*a) {
                    let av = self.value(*a);
                    let n = T::c(av.rows.max(1) as f64);
                    let d = acc_slot(grads, *a, av.rows, av.cols);
                    for r in 0..av.rows {
                        for (j, (o, &x)) in d.row_mut(r).iter_mut().zip(av.row(r)).enumerate() {
                            let s = y.data[j];
                            if s > T::c(1e-12) {
                                *o += g.data[j] * (x - mean[j]) / (n * s);
                            }
                        }
                    }
                }
            }
            Op::MeanAll(a) => {
                let n = T::c(self.value(*a).len().max(1) as f64);
                let s = g.data[0] / n;
                self.acc_fill(grads, *a, s);
            }
            Op::SumAll(a) => self.acc_fill(grads, *a, g.data[0]),
            Op::Conv1d { x, w, k, dilation, pad_left, cols } => {
                let wv = self.value(*w);
                if self.ng(*w) {
                    let dw = acc_slot(grads, *w, wv.rows, wv.cols);
                    gemm_into(g, false, cols, true, dw, true);
                }
                if self.ng(*x) {
                    let mut dcols = Mat::zeros(cols.rows, cols.cols);
                    gemm_into(wv, true, g, false, &mut dcols, false);
                    let xv = self.value(*x);
                    let dx = acc_slot(grads, *x, xv.rows, xv.cols);
                    let t_in = xv.cols;
                    for c in 0..xv.rows {
                        let dxr = dx.row_mut(c);
                        for tap in 0..*k {
                            let src = dcols.row(c * k + tap);
                            let shift = tap * dilation;
                            for (t, &v) in src.iter().enumerate() {
                                let p = t + shift;
                                if p >= *pad_left && p - pad_left < t_in {
                                    dxr[p - pad_left] += v;
                                }
                            }
                        }
                    }
                }
            }
            Op::RepeatCols { a, factor } => {
                if self.ng(*a) {
                    let av = self.value(*a);
                    let d = acc_slot(grads, *a, av.rows, av.cols);
                    for r in 0..g.rows {
                        let gr = g.row(r);
                        for (j, o) in d.row_mut(r).iter_mut().enumerate() {
                            *o += gr[j * factor..(j + 1) * factor].iter().copied().sum::<T>();
                        }
                    }
                }
            }
            Op::Fused { a, grad } => {
                let s = g.data[0];
                self.acc(grads, *a, grad, |_, gi| gi * s);
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Mat<T>>], a: Var, g: &Mat<T>, f: impl Fn(usize, T) -> T) {
        if !self.ng(a) {
            return;
        }
        let (r, c) = self.shape(a);
        let d = acc_slot(grads, a, r, c);
        for (j, (o, &gi)) in d.data.iter_mut().zip(&g.data).enumerate() {
            *o += f(j, gi);
        }
    }

    fn acc_fill(&self, grads: &mut [Option<Mat<T>>], a: Var, s: T) {
        if !self.ng(a) {
            return;
        }
        let (r, c) = self.shape(a);
        acc_slot(grads, a, r, c).data.iter_mut().for_each(|o| *o += s);
    }
}

fn acc_slot<T: Real>(grads: &mut [Option<Mat<T>>], v: Var, rows: usize, cols: usize) -> &mut Mat<T> {
    grads[v.0].get_or_insert_with(|| Mat::zeros(rows, cols))
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}

pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    row.iter_mut().for_each(|x| *x = *x / s);
}
