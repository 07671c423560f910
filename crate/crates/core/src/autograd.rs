//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its forward
//! value, and [`Graph::backward`] walks the tape in reverse. Graphs are built
//! per sample and discarded after the gradient has been read out.

use std::sync::Arc;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Index of a trainable parameter in a parameter store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Fixed sparse linear operator applied along the row axis:
/// `out[i, :] = Σ_j w_ij · in[j, :]`.
///
/// Resampling, cropping and padding of spatial grids are all expressed this
/// way so they differentiate for free.
#[derive(Clone, Debug)]
pub struct RowMap<T> {
    in_rows: usize,
    out_rows: usize,
    /// Per output row, the `(input row, weight)` taps.
    taps: Vec<Vec<(usize, T)>>,
}

impl<T: Scalar> RowMap<T> {
    pub fn new(in_rows: usize, taps: Vec<Vec<(usize, T)>>) -> Self {
        debug_assert!(taps.iter().flatten().all(|&(j, _)| j < in_rows));
        Self { in_rows, out_rows: taps.len(), taps }
    }

    pub fn in_rows(&self) -> usize {
        self.in_rows
    }

    pub fn out_rows(&self) -> usize {
        self.out_rows
    }

    pub fn taps(&self) -> &[Vec<(usize, T)>] {
        &self.taps
    }

    pub fn apply(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.rows(), self.in_rows, "row map expects {} rows, got {}", self.in_rows, x.rows());
        let c = x.cols();
        let mut out = Tensor::zeros(self.out_rows, c);
        for (i, taps) in self.taps.iter().enumerate() {
            let orow = out.row_mut(i);
            for &(j, w) in taps {
                for (o, &v) in orow.iter_mut().zip(x.row(j)) {
                    *o += w * v;
                }
            }
        }
        out
    }

    fn apply_transpose(&self, g: &Tensor<T>) -> Tensor<T> {
        let c = g.cols();
        let mut out = Tensor::zeros(self.in_rows, c);
        for (i, taps) in self.taps.iter().enumerate() {
            let grow = g.row(i);
            for &(j, w) in taps {
                for (o, &v) in out.row_mut(j).iter_mut().zip(grow) {
                    *o += w * v;
                }
            }
        }
        out
    }
}

const GELU_K: f64 = 1.702;

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    AddScalar(Var, T),
    Transpose(Var),
    QuickGelu(Var),
    Relu(Var),
    Sigmoid(Var),
    LnEps(Var, T),
    SoftmaxRows(Var),
    SoftmaxAll(Var),
    LayerNormRows(Var, T),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    RowMap(Var, Arc<RowMap<T>>),
    DepthToSpace(Var, usize, usize),
    Sum(Var),
    DivScalar(Var, Var),
    Cosine(Var, Var),
    CrossEntropy(Var, usize),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Computation tape.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradients of every parameter leaf that received one, in creation order.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> + '_ {
        self.params.iter().filter_map(move |&(id, v)| self.grads[v.0].as_ref().map(|g| (id, g)))
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input: never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable input that is not a stored parameter.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Trainable parameter leaf.
    pub fn param(&mut self, id: ParamId, t: &Tensor<T>, trainable: bool) -> Var {
        let v = self.push(t.clone(), Op::Leaf, trainable);
        if trainable {
            self.params.push((id, v));
        }
        v
    }

    /// Copy of `v`'s value with the gradient path cut.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let t = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(t, Op::MatMul(a, b), ng)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "elementwise shape mismatch");
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let t = Tensor::from_vec(x.rows(), x.cols(), data);
        let ng = self.ng(a) || self.ng(b);
        self.push(t, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |p, q| p * q, Op::Mul(a, b))
    }

    /// `a[i, :] + r[0, :]` for every row.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let (x, rv) = (self.value(a), self.value(r));
        assert_eq!((1, x.cols()), rv.shape(), "add_row shape mismatch");
        let mut t = x.clone();
        for i in 0..t.rows() {
            for (o, &b) in t.row_mut(i).iter_mut().zip(rv.data()) {
                *o += b;
            }
        }
        let ng = self.ng(a) || self.ng(r);
        self.push(t, Op::AddRow(a, r), ng)
    }

    /// `a[i, :] ⊙ r[0, :]` for every row.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Var {
        let (x, rv) = (self.value(a), self.value(r));
        assert_eq!((1, x.cols()), rv.shape(), "mul_row shape mismatch");
        let mut t = x.clone();
        for i in 0..t.rows() {
            for (o, &b) in t.row_mut(i).iter_mut().zip(rv.data()) {
                *o *= b;
            }
        }
        let ng = self.ng(a) || self.ng(r);
        self.push(t, Op::MulRow(a, r), ng)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let t = self.value(a).map(|v| v * s);
        let ng = self.ng(a);
        self.push(t, Op::Scale(a, s), ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let t = self.value(a).map(|v| v + s);
        let ng = self.ng(a);
        self.push(t, Op::AddScalar(a, s), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a).transpose();
        let ng = self.ng(a);
        self.push(t, Op::Transpose(a), ng)
    }

    /// `x · σ(1.702 x)`.
    pub fn quick_gelu(&mut self, a: Var) -> Var {
        let k = T::lit(GELU_K);
        let t = self.value(a).map(|x| x * sigmoid(k * x));
        let ng = self.ng(a);
        self.push(t, Op::QuickGelu(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.max(T::zero()));
        let ng = self.ng(a);
        self.push(t, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(t, Op::Sigmoid(a), ng)
    }

    /// `ln(x + eps)`.
    pub fn ln_eps(&mut self, a: Var, eps: T) -> Var {
        let t = self.value(a).map(|x| (x + eps).ln());
        let ng = self.ng(a);
        self.push(t, Op::LnEps(a, eps), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut t = x.clone();
        for i in 0..t.rows() {
            softmax_in_place(t.row_mut(i));
        }
        let ng = self.ng(a);
        self.push(t, Op::SoftmaxRows(a), ng)
    }

    /// Softmax over every element jointly.
    pub fn softmax_all(&mut self, a: Var) -> Var {
        let mut t = self.value(a).clone();
        softmax_in_place(t.data_mut());
        let ng = self.ng(a);
        self.push(t, Op::SoftmaxAll(a), ng)
    }

    /// Per-row normalisation to zero mean and unit variance (no affine).
    pub fn layer_norm_rows(&mut self, a: Var, eps: T) -> Var {
        let x = self.value(a);
        let mut t = x.clone();
        for i in 0..t.rows() {
            let (mean, inv) = row_stats(x.row(i), eps);
            for v in t.row_mut(i) {
                *v = (*v - mean) * inv;
            }
        }
        let ng = self.ng(a);
        self.push(t, Op::LayerNormRows(a, eps), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "concat_rows column mismatch");
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut t = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                t.row_mut(r)[off..off + v.cols()].copy_from_slice(v.row(r));
            }
            off += v.cols();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(t, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        let cols = x.cols();
        let t = Tensor::from_vec(len, cols, x.data()[start * cols..(start + len) * cols].to_vec());
        let ng = self.ng(a);
        self.push(t, Op::SliceRows(a, start), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        let mut t = Tensor::zeros(x.rows(), len);
        for r in 0..x.rows() {
            t.row_mut(r).copy_from_slice(&x.row(r)[start..start + len]);
        }
        let ng = self.ng(a);
        self.push(t, Op::SliceCols(a, start), ng)
    }

    pub fn row_map(&mut self, a: Var, map: Arc<RowMap<T>>) -> Var {
        let t = map.apply(self.value(a));
        let ng = self.ng(a);
        self.push(t, Op::RowMap(a, map), ng)
    }

    /// Rearranges `[h·w, 4c]` (column blocks ordered by sub-pixel `(di, dj)`)
    /// into a `[2h·2w, c]` grid, the layout of a stride-2 2×2 transposed
    /// convolution.
    pub fn depth_to_space(&mut self, a: Var, h: usize, w: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.rows(), h * w, "depth_to_space row mismatch");
        assert_eq!(x.cols() % 4, 0, "depth_to_space needs 4c columns");
        let c = x.cols() / 4;
        let mut t = Tensor::zeros(4 * h * w, c);
        for i in 0..h {
            for j in 0..w {
                let src = x.row(i * w + j);
                for di in 0..2 {
                    for dj in 0..2 {
                        let k = di * 2 + dj;
                        let dst = (2 * i + di) * (2 * w) + 2 * j + dj;
                        t.row_mut(dst).copy_from_slice(&src[k * c..(k + 1) * c]);
                    }
                }
            }
        }
        let ng = self.ng(a);
        self.push(t, Op::DepthToSpace(a, h, w), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(t, Op::Sum(a), ng)
    }

    /// `a / s` with `s` a 1×1 node.
    pub fn div_scalar(&mut self, a: Var, s: Var) -> Var {
        let d = self.value(s).item();
        let t = self.value(a).map(|v| v / d);
        let ng = self.ng(a) || self.ng(s);
        self.push(t, Op::DivScalar(a, s), ng)
    }

    /// Cosine similarity of two equally shaped tensors viewed as flat vectors.
    /// Panics on a zero-norm argument; callers validate first.
    pub fn cosine(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.len(), y.len(), "cosine length mismatch");
        let c = crate::tensor::cosine(x.data(), y.data()).expect("cosine of zero vector");
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::scalar(c), Op::Cosine(a, b), ng)
    }

    /// Cross entropy of a `[1, K]` logit row against class `target`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Var {
        let x = self.value(logits);
        assert!(target < x.len(), "cross entropy target out of range");
        let lse = log_sum_exp(x.data());
        let t = Tensor::scalar(lse - x.data()[target]);
        let ng = self.ng(logits);
        self.push(t, Op::CrossEntropy(logits, target), ng)
    }

    /// Reverse sweep from a 1×1 `loss` node.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar loss");
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads, params: self.params.clone() }
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    self.acc(grads, *a, g.matmul_t(bv));
                }
                if self.ng(*b) {
                    self.acc(grads, *b, av.t_matmul(g));
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    self.acc(grads, *a, elementwise(g, bv, |p, q| p * q));
                }
                if self.ng(*b) {
                    self.acc(grads, *b, elementwise(g, av, |p, q| p * q));
                }
            }
            Op::AddRow(a, r) => {
                self.acc(grads, *a, g.clone());
                if self.ng(*r) {
                    self.acc(grads, *r, column_sums(g));
                }
            }
            Op::MulRow(a, r) => {
                let (av, rv) = (self.value(*a), self.value(*r));
                if self.ng(*a) {
                    let mut ga = g.clone();
                    for i in 0..ga.rows() {
                        for (o, &s) in ga.row_mut(i).iter_mut().zip(rv.data()) {
                            *o *= s;
                        }
                    }
                    self.acc(grads, *a, ga);
                }
                if self.ng(*r) {
                    self.acc(grads, *r, column_sums(&elementwise(g, av, |p, q| p * q)));
                }
            }
            Op::Scale(a, s) => self.acc(grads, *a, g.map(|v| v * *s)),
            Op::AddScalar(a, _) => self.acc(grads, *a, g.clone()),
            Op::Transpose(a) => self.acc(grads, *a, g.transpose()),
            Op::QuickGelu(a) => {
                let k = T::lit(GELU_K);
                let dx = elementwise(g, self.value(*a), |gv, x| {
                    let s = sigmoid(k * x);
                    gv * (s + k * x * s * (T::one() - s))
                });
                self.acc(grads, *a, dx);
            }
            Op::Relu(a) => {
                let dx = elementwise(g, self.value(*a), |gv, x| if x > T::zero() { gv } else { T::zero() });
                self.acc(grads, *a, dx);
            }
            Op::Sigmoid(a) => self.acc(grads, *a, elementwise(g, y, |gv, s| gv * s * (T::one() - s))),
            Op::LnEps(a, eps) => {
                let e = *eps;
                self.acc(grads, *a, elementwise(g, self.value(*a), |gv, x| gv / (x + e)));
            }
            Op::SoftmaxRows(a) => {
                let mut dx = g.clone();
                for i in 0..dx.rows() {
                    softmax_backward(dx.row_mut(i), y.row(i));
                }
                self.acc(grads, *a, dx);
            }
            Op::SoftmaxAll(a) => {
                let mut dx = g.clone();
                softmax_backward(dx.data_mut(), y.data());
                self.acc(grads, *a, dx);
            }
            Op::LayerNormRows(a, eps) => {
                let x = self.value(*a);
                let cols = x.cols();
                let n = T::from_usize_lossy(cols);
                let mut dx = Tensor::zeros(x.rows(), cols);
                for i in 0..x.rows() {
                    let (_, inv) = row_stats(x.row(i), *eps);
                    let (gy, yh) = (g.row(i), y.row(i));
                    let mean_g = gy.iter().copied().sum::<T>() / n;
                    let mean_gy = gy.iter().zip(yh).map(|(&p, &q)| p * q).sum::<T>() / n;
                    for ((o, &gv), &yv) in dx.row_mut(i).iter_mut().zip(gy).zip(yh) {
                        *o = inv * (gv - mean_g - yv * mean_gy);
                    }
                }
                self.acc(grads, *a, dx);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let r = self.value(p).rows();
                    if self.ng(p) {
                        let c = g.cols();
                        let t = Tensor::from_vec(r, c, g.data()[off * c..(off + r) * c].to_vec());
                        self.acc(grads, p, t);
                    }
                    off += r;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    if self.ng(p) {
                        let mut t = Tensor::zeros(g.rows(), c);
                        for r in 0..g.rows() {
                            t.row_mut(r).copy_from_slice(&g.row(r)[off..off + c]);
                        }
                        self.acc(grads, p, t);
                    }
                    off += c;
                }
            }
            Op::SliceRows(a, start) => {
                let x = self.value(*a);
                let mut t = Tensor::zeros(x.rows(), x.cols());
                let c = x.cols();
                t.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                self.acc(grads, *a, t);
            }
            Op::SliceCols(a, start) => {
                let x = self.value(*a);
                let mut t = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    t.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                self.acc(grads, *a, t);
            }
            Op::RowMap(a, map) => self.acc(grads, *a, map.apply_transpose(g)),
            Op::DepthToSpace(a, h, w) => {
                let (h, w) = (*h, *w);
                let c = g.cols();
                let mut t = Tensor::zeros(h * w, 4 * c);
                for i in 0..h {
                    for j in 0..w {
                        for di in 0..2 {
                            for dj in 0..2 {
                                let k = di * 2 + dj;
                                let src = (2 * i + di) * (2 * w) + 2 * j + dj;
                                t.row_mut(i * w + j)[k * c..(k + 1) * c].copy_from_slice(g.row(src));
                            }
                        }
                    }
                }
                self.acc(grads, *a, t);
            }
            Op::Sum(a) => {
                let x = self.value(*a);
                self.acc(grads, *a, Tensor::filled(x.rows(), x.cols(), g.item()));
            }
            Op::DivScalar(a, s) => {
                let d = self.value(*s).item();
                let gv = g;
                if self.ng(*a) {
                    self.acc(grads, *a, gv.map(|v| v / d));
                }
                if self.ng(*s) {
                    let x = self.value(*a);
                    let num: T = gv.data().iter().zip(x.data()).map(|(&p, &q)| p * q).sum();
                    self.acc(grads, *s, Tensor::scalar(-num / (d * d)));
                }
            }
            Op::Cosine(a, b) => {
                let (x, z) = (self.value(*a), self.value(*b));
                let c = y.item();
                let gv = g.item();
                let nx = crate::tensor::norm(x.data());
                let nz = crate::tensor::norm(z.data());
                if self.ng(*a) {
                    let t = elementwise(x, z, |xi, zi| gv * (zi / (nx * nz) - c * xi / (nx * nx)));
                    self.acc(grads, *a, t);
                }
                if self.ng(*b) {
                    let t = elementwise(z, x, |zi, xi| gv * (xi / (nx * nz) - c * zi / (nz * nz)));
                    self.acc(grads, *b, t);
                }
            }
            Op::CrossEntropy(a, target) => {
                let x = self.value(*a);
                let mut p = x.clone();
                softmax_in_place(p.data_mut());
                p.data_mut()[*target] -= T::one();
                let gv = g.item();
                self.acc(grads, *a, p.map(|v| v * gv));
            }
        }
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn softmax_in_place<T: Scalar>(xs: &mut [T]) {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in xs.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in xs.iter_mut() {
        *v /= s;
    }
}

pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    m + xs.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
}

fn softmax_backward<T: Scalar>(g: &mut [T], y: &[T]) {
    let dotp: T = g.iter().zip(y).map(|(&a, &b)| a * b).sum();
    for (gv, &yv) in g.iter_mut().zip(y) {
        *gv = yv * (*gv - dotp);
    }
}

fn row_stats<T: Scalar>(row: &[T], eps: T) -> (T, T) {
    let n = T::from_usize_lossy(row.len());
    let mean = row.iter().copied().sum::<T>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, T::one() / (var + eps).sqrt())
}

fn elementwise<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&p, &q)| f(p, q)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data)
}

fn column_sums<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(1, g.cols());
    for i in 0..g.rows() {
        for (o, &v) in out.data_mut().iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    out
}
