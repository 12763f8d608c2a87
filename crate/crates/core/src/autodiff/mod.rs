//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every forward op in execution order. [`Tape::backward`]
//! walks the records in reverse and accumulates gradients into every value
//! that (transitively) depends on a parameter leaf. The propagation operator
//! enters only as a constant, so the graph itself is never differentiated.

mod checkpoint;
mod gradcheck;
mod optim;

use std::sync::Arc;

use rand::Rng;

pub use checkpoint::{read_checkpoint, write_checkpoint, NamedParam};
pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::{Adam, AdamConfig};

use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::tensor::{log_softmax_row, Matrix};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type ElementwiseFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

enum Op {
    Leaf,
    MatMul(Var, Var),
    Spmm(Arc<NormalizedAdjacency>, Var),
    /// `b` may be a single row broadcast over `a`.
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    ConcatCols(Vec<Var>),
    Relu(Var),
    Sigmoid(Var),
    RowSoftmax(Var),
    Abs(Var),
    Dropout(Var, Matrix),
    MaskedNll {
        logits: Var,
        rows: Vec<usize>,
        labels: Vec<usize>,
        weights: Vec<f64>,
        softmax: Matrix,
    },
    SumSq(Var),
    Mean(Var),
    PickRows(Vec<Var>, Vec<usize>),
    GatherRows(Var, Vec<usize>),
    Elementwise(Var, ElementwiseFn),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Spmm(..) => "spmm_const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Affine(..) => "affine",
            Op::ConcatCols(..) => "concat_cols",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::RowSoftmax(..) => "row_softmax",
            Op::Abs(..) => "abs",
            Op::Dropout(..) => "dropout",
            Op::MaskedNll { .. } => "masked_nll",
            Op::SumSq(..) => "sum_sq",
            Op::Mean(..) => "mean",
            Op::PickRows(..) => "pick_rows",
            Op::GatherRows(..) => "gather_rows",
            Op::Elementwise(..) => "elementwise",
        }
    }
}

struct Record {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    records: Vec<Record>,
    first_non_finite: Option<(usize, &'static str)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Stop-gradient copy of `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.records[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.records[v.0].requires_grad
    }

    /// Errors if any recorded op produced a non-finite value, naming the
    /// first one.
    pub fn ensure_finite(&self) -> Result<()> {
        match self.first_non_finite {
            Some((index, op)) => Err(Error::Numerical { op, index }),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        let index = self.records.len();
        if self.first_non_finite.is_none() && !value.is_finite() {
            self.first_non_finite = Some((index, op.name()));
        }
        self.records.push(Record {
            value,
            op,
            requires_grad,
        });
        Var(index)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.requires_grad(v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let rg = self.any_grad(&[a, b]);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn spmm_const(&mut self, adj: &Arc<NormalizedAdjacency>, h: Var) -> Var {
        let value = adj.spmm(self.value(h));
        let rg = self.requires_grad(h);
        self.push(value, Op::Spmm(Arc::clone(adj), h), rg)
    }

    /// `a + b`; a `1 × cols` right operand is broadcast over rows.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let value = if va.shape() == vb.shape() {
            va.zip_map(vb, |x, y| x + y)
        } else {
            assert!(
                vb.rows() == 1 && vb.cols() == va.cols(),
                "add shape mismatch: {:?} + {:?}",
                va.shape(),
                vb.shape()
            );
            let mut out = va.clone();
            for i in 0..out.rows() {
                for (o, &y) in out.row_mut(i).iter_mut().zip(vb.row(0)) {
                    *o += y;
                }
            }
            out
        };
        let rg = self.any_grad(&[a, b]);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.any_grad(&[a, b]);
        self.push(value, Op::Sub(a, b), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.any_grad(&[a, b]);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    /// `s·a + shift`.
    pub fn affine(&mut self, a: Var, s: f64, shift: f64) -> Var {
        let value = self.value(a).map(|x| s * x + shift);
        let rg = self.requires_grad(a);
        self.push(value, Op::Affine(a, s), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, total);
        let mut offset = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.rows(), rows, "concat_cols row mismatch");
            for i in 0..rows {
                out.row_mut(i)[offset..offset + v.cols()].copy_from_slice(v.row(i));
            }
            offset += v.cols();
        }
        let rg = self.any_grad(parts);
        self.push(out, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        let rg = self.requires_grad(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.requires_grad(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let value = crate::tensor::row_softmax(self.value(a));
        let rg = self.requires_grad(a);
        self.push(value, Op::RowSoftmax(a), rg)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        let rg = self.requires_grad(a);
        self.push(value, Op::Abs(a), rg)
    }

    /// Inverted dropout: kept entries are scaled by `1 / (1 - rate)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Var {
        assert!((0.0..1.0).contains(&rate), "dropout rate {rate} not in [0, 1)");
        let keep = 1.0 - rate;
        let (rows, cols) = self.value(a).shape();
        let mask_data: Vec<f64> = (0..rows * cols)
            .map(|_| {
                if rate == 0.0 || rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let mask = Matrix::from_vec(rows, cols, mask_data);
        let value = self.value(a).zip_map(&mask, |x, m| x * m);
        let rg = self.requires_grad(a);
        self.push(value, Op::Dropout(a, mask), rg)
    }

    /// `(1/|rows|) Σ_r w_r · CE(logits_r, labels_r)` over the selected rows.
    /// `weights` defaults to all ones and is treated as a constant.
    pub fn masked_nll(
        &mut self,
        logits: Var,
        labels: &[usize],
        rows: &[usize],
        weights: Option<&[f64]>,
    ) -> Var {
        assert!(!rows.is_empty(), "masked_nll over an empty mask");
        let lv = self.value(logits);
        assert_eq!(lv.rows(), labels.len(), "masked_nll labels length mismatch");
        let weights = match weights {
            Some(w) => {
                assert_eq!(w.len(), rows.len(), "masked_nll weights length mismatch");
                w.to_vec()
            }
            None => vec![1.0; rows.len()],
        };
        let c = lv.cols();
        let mut softmax = Matrix::zeros(rows.len(), c);
        let mut total = 0.0;
        let mut scratch = vec![0.0; c];
        for (r, (&i, &w)) in rows.iter().zip(&weights).enumerate() {
            log_softmax_row(lv.row(i), &mut scratch);
            total += w * -scratch[labels[i]];
            for (s, &ls) in softmax.row_mut(r).iter_mut().zip(&scratch) {
                *s = ls.exp();
            }
        }
        let value = Matrix::scalar(total / rows.len() as f64);
        let rg = self.requires_grad(logits);
        let labels = rows.iter().map(|&i| labels[i]).collect();
        self.push(
            value,
            Op::MaskedNll {
                logits,
                rows: rows.to_vec(),
                labels,
                weights,
                softmax,
            },
            rg,
        )
    }

    pub fn sum_sq(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).as_slice().iter().map(|x| x * x).sum());
        let rg = self.requires_grad(a);
        self.push(value, Op::SumSq(a), rg)
    }

    /// Mean over all entries, as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        assert!(!v.is_empty(), "mean of an empty matrix");
        let value = Matrix::scalar(v.sum() / v.len() as f64);
        let rg = self.requires_grad(a);
        self.push(value, Op::Mean(a), rg)
    }

    /// Row `i` of the result is row `i` of `sources[choice[i]]`.
    pub fn pick_rows(&mut self, sources: &[Var], choice: &[usize]) -> Var {
        assert!(!sources.is_empty());
        let shape = self.value(sources[0]).shape();
        assert_eq!(choice.len(), shape.0, "pick_rows choice length mismatch");
        let mut out = Matrix::zeros(shape.0, shape.1);
        for (i, &s) in choice.iter().enumerate() {
            let src = self.value(sources[s]);
            assert_eq!(src.shape(), shape, "pick_rows source shape mismatch");
            out.row_mut(i).copy_from_slice(src.row(i));
        }
        let rg = self.any_grad(sources);
        self.push(out, Op::PickRows(sources.to_vec(), choice.to_vec()), rg)
    }

    /// Row `r` of the result is row `idx[r]` of `a`; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let v = self.value(a);
        let mut out = Matrix::zeros(idx.len(), v.cols());
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(v.row(i));
        }
        let rg = self.requires_grad(a);
        self.push(out, Op::GatherRows(a, idx.to_vec()), rg)
    }

    /// Elementwise `f` with caller-supplied derivative `df`.
    pub fn elementwise(
        &mut self,
        a: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Var {
        let value = self.value(a).map(f);
        let rg = self.requires_grad(a);
        self.push(value, Op::Elementwise(a, Arc::new(df)), rg)
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        assert_eq!(
            self.value(root).shape(),
            (1, 1),
            "backward root must be a scalar"
        );
        self.ensure_finite()?;
        let mut grads: Vec<Option<Matrix>> = (0..self.records.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let record = &self.records[idx];
            if !record.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(record, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let shapes = self.records.iter().map(|r| r.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, record: &Record, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let mut acc = |v: Var, delta: Matrix| {
            if !self.requires_grad(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &record.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    acc(*a, g.matmul_t(vb));
                }
                if self.requires_grad(*b) {
                    acc(*b, va.t_matmul(g));
                }
            }
            // Â is symmetric, so Âᵀ·g = Â·g.
            Op::Spmm(adj, h) => acc(*h, adj.spmm(g)),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                if self.value(*b).shape() == g.shape() {
                    acc(*b, g.clone());
                } else {
                    let mut col_sums = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (s, &x) in col_sums.row_mut(0).iter_mut().zip(g.row(i)) {
                            *s += x;
                        }
                    }
                    acc(*b, col_sums);
                }
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, g.zip_map(vb, |x, y| x * y));
                acc(*b, g.zip_map(va, |x, y| x * y));
            }
            Op::Affine(a, s) => acc(*a, g.scale(*s)),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    let mut part = Matrix::zeros(g.rows(), cols);
                    for i in 0..g.rows() {
                        part.row_mut(i).copy_from_slice(&g.row(i)[offset..offset + cols]);
                    }
                    offset += cols;
                    acc(p, part);
                }
            }
            Op::Relu(a) => {
                let d = g.zip_map(self.value(*a), |x, v| if v > 0.0 { x } else { 0.0 });
                acc(*a, d);
            }
            Op::Sigmoid(a) => {
                let d = g.zip_map(&record.value, |x, s| x * s * (1.0 - s));
                acc(*a, d);
            }
            Op::RowSoftmax(a) => {
                let s = &record.value;
                let mut d = Matrix::zeros(g.rows(), g.cols());
                for i in 0..g.rows() {
                    let dot: f64 = g.row(i).iter().zip(s.row(i)).map(|(x, y)| x * y).sum();
                    for ((o, &gx), &sx) in d.row_mut(i).iter_mut().zip(g.row(i)).zip(s.row(i)) {
                        *o = sx * (gx - dot);
                    }
                }
                acc(*a, d);
            }
            Op::Abs(a) => {
                let d = g.zip_map(self.value(*a), |x, v| x * sign(v));
                acc(*a, d);
            }
            Op::Dropout(a, mask) => acc(*a, g.zip_map(mask, |x, m| x * m)),
            Op::MaskedNll {
                logits,
                rows,
                labels,
                weights,
                softmax,
            } => {
                let lv = self.value(*logits);
                let scale = g.item() / rows.len() as f64;
                let mut d = Matrix::zeros(lv.rows(), lv.cols());
                for (r, &i) in rows.iter().enumerate() {
                    let w = weights[r] * scale;
                    let out = d.row_mut(i);
                    for (o, &p) in out.iter_mut().zip(softmax.row(r)) {
                        *o += w * p;
                    }
                    out[labels[r]] -= w;
                }
                acc(*logits, d);
            }
            Op::SumSq(a) => {
                let s = 2.0 * g.item();
                acc(*a, self.value(*a).scale(s));
            }
            Op::Mean(a) => {
                let v = self.value(*a);
                acc(*a, Matrix::filled(v.rows(), v.cols(), g.item() / v.len() as f64));
            }
            Op::PickRows(sources, choice) => {
                for (s_idx, &src) in sources.iter().enumerate() {
                    if !self.requires_grad(src) {
                        continue;
                    }
                    let mut part = Matrix::zeros(g.rows(), g.cols());
                    let mut any = false;
                    for (i, &c) in choice.iter().enumerate() {
                        if c == s_idx {
                            part.row_mut(i).copy_from_slice(g.row(i));
                            any = true;
                        }
                    }
                    if any {
                        acc(src, part);
                    }
                }
            }
            Op::GatherRows(a, idx) => {
                let v = self.value(*a);
                let mut d = Matrix::zeros(v.rows(), v.cols());
                for (r, &i) in idx.iter().enumerate() {
                    for (o, &x) in d.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                acc(*a, d);
            }
            Op::Elementwise(a, df) => {
                let d = g.zip_map(self.value(*a), |x, v| x * df(v));
                acc(*a, d);
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradients from one [`Tape::backward`] call.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zero when `v` is unreachable from the root.
    pub fn wrt(&self, v: Var) -> Matrix {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}
