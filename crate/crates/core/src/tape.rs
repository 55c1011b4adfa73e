//! Reverse-mode automatic differentiation over matrices.
//!
//! A [`Tape`] is an append-only list of nodes. Every operation computes its
//! value eagerly, pushes a node recording its inputs, and returns a [`Var`]
//! handle. [`Tape::backward`] walks the list in reverse and accumulates
//! gradients into every node that requires one.
//!
//! ```
//! use glgnn::tape::Tape;
//! use glgnn::tensor::DenseMatrix;
//!
//! let mut tape = Tape::new();
//! let w = tape.param(DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]));
//! let x = tape.constant(DenseMatrix::from_rows(&[[1.0], [-1.0]]));
//! let y = tape.matmul(w, x).unwrap();
//! let loss = tape.sum(y);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(w).unwrap().data(), &[1.0, -1.0, 1.0, -1.0]);
//! ```

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{gemm, DenseMatrix, SparseMatrix};

/// Lower clamp applied to probabilities before taking their logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Spmm {
        s: Arc<SparseMatrix>,
        d: Var,
    },
    SpmmValues {
        pattern: Arc<SparseMatrix>,
        values: Var,
        d: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Square(Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    RowSoftmax(Var),
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    ColMaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    ColSum(Var),
    Sum(Var),
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    EdgeScores {
        pattern: Arc<SparseMatrix>,
        src: Var,
        dst: Var,
    },
    EdgeSoftmax {
        pattern: Arc<SparseMatrix>,
        scores: Var,
    },
    CrossEntropy {
        probs: Var,
        targets: Vec<(usize, usize)>,
    },
    GlobalLocal {
        labels: Var,
        feats: Var,
        targets: Vec<(usize, usize)>,
        cutoff: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: DenseMatrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<DenseMatrix>>,
    backward_done: bool,
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

    /// A trainable leaf.
    pub fn param(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data()[0]
    }

    pub fn grad(&self, v: Var) -> Option<&DenseMatrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of its shape when `v` is not connected to
    /// the loss.
    pub fn grad_or_zeros(&self, v: Var) -> DenseMatrix {
        self.grad(v).cloned().unwrap_or_else(|| {
            let (r, c) = self.shape(v);
            DenseMatrix::zeros(r, c)
        })
    }

    /// Drops all gradient buffers so `backward` may run again.
    pub fn clear_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn push(&mut self, value: DenseMatrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, a: Var, value: DenseMatrix, op: Op) -> Var {
        let rg = self.needs(&[a]);
        self.push(value, op, rg)
    }

    fn binary(&mut self, a: Var, b: Var, value: DenseMatrix, op: Op) -> Var {
        let rg = self.needs(&[a, b]);
        self.push(value, op, rg)
    }

    // ---------------------------------------------------------------- ops

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = gemm(self.value(a), false, self.value(b), false)?;
        Ok(self.binary(a, b, value, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.unary(a, value, Op::Transpose(a))
    }

    /// Constant sparse operator times a dense node.
    pub fn spmm(&mut self, s: Arc<SparseMatrix>, d: Var) -> Result<Var> {
        let value = s.spmm(self.value(d))?;
        Ok(self.unary(d, value, Op::Spmm { s, d }))
    }

    /// Sparse operator whose stored entries are the 1×nnz node `values`,
    /// arranged on the sparsity pattern of `pattern`, times `d`.
    pub fn spmm_values(&mut self, pattern: Arc<SparseMatrix>, values: Var, d: Var) -> Result<Var> {
        let vals = self.value(values);
        if vals.shape() != (1, pattern.nnz()) {
            return Err(Error::dim("spmm_values", (1, pattern.nnz()), vals.shape()));
        }
        let value = pattern.spmm_with_values(vals.data(), self.value(d))?;
        Ok(self.binary(values, d, value, Op::SpmmValues { pattern, values, d }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.binary(a, b, value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.binary(a, b, value, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.binary(a, b, value, Op::Mul(a, b)))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        self.unary(a, value, Op::Square(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        self.unary(a, value, Op::Scale(a, s))
    }

    /// Adds the 1×c row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (am, bm) = (self.value(a), self.value(bias));
        if bm.rows() != 1 || bm.cols() != am.cols() {
            return Err(Error::dim("add_row", am.shape(), bm.shape()));
        }
        let mut value = am.clone();
        let c = value.cols();
        for row in value.data_mut().chunks_mut(c.max(1)) {
            for (x, b) in row.iter_mut().zip(bm.data()) {
                *x += b;
            }
        }
        Ok(self.binary(a, bias, value, Op::AddRow(a, bias)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.unary(a, value, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.unary(a, value, Op::LeakyRelu(a, slope))
    }

    /// Softmax over each row, with the row maximum subtracted first.
    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if m.rows() == 0 || m.cols() == 0 {
            return Err(Error::EmptyInput { op: "row_softmax" });
        }
        let mut value = m.clone();
        let c = value.cols();
        for row in value.data_mut().chunks_mut(c) {
            softmax_in_place(row);
        }
        Ok(self.unary(a, value, Op::RowSoftmax(a)))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (am, bm) = (self.value(a), self.value(b));
        if am.rows() != bm.rows() {
            return Err(Error::dim("concat_cols", am.shape(), bm.shape()));
        }
        let (ca, cb) = (am.cols(), bm.cols());
        let mut data = Vec::with_capacity(am.rows() * (ca + cb));
        for i in 0..am.rows() {
            data.extend_from_slice(am.row(i));
            data.extend_from_slice(bm.row(i));
        }
        let value = DenseMatrix::new(am.rows(), ca + cb, data)?;
        Ok(self.binary(a, b, value, Op::ConcatCols(a, b)))
    }

    /// Stacks nodes with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptyInput { op: "concat_rows" })?;
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            if m.cols() != cols {
                return Err(Error::dim("concat_rows", self.value(first).shape(), m.shape()));
            }
            data.extend_from_slice(m.data());
            rows += m.rows();
        }
        let value = DenseMatrix::new(rows, cols, data)?;
        let rg = self.needs(parts);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Rows `start..start + len` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let m = self.value(a);
        if start + len > m.rows() {
            return Err(Error::dim("slice_rows", m.shape(), (start + len, m.cols())));
        }
        let c = m.cols();
        let value = DenseMatrix::new(len, c, m.data()[start * c..(start + len) * c].to_vec())?;
        Ok(self.unary(a, value, Op::SliceRows(a, start)))
    }

    /// Column-wise maximum (1×cols). The gradient of each column goes to the
    /// lowest row index attaining the maximum.
    pub fn col_max_pool(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if m.rows() == 0 {
            return Err(Error::EmptyInput { op: "col_max_pool" });
        }
        let mut argmax = vec![0usize; m.cols()];
        let mut best = m.row(0).to_vec();
        for i in 1..m.rows() {
            for (j, &v) in m.row(i).iter().enumerate() {
                if v > best[j] {
                    best[j] = v;
                    argmax[j] = i;
                }
            }
        }
        let value = DenseMatrix::new(1, best.len(), best)?;
        Ok(self.unary(a, value, Op::ColMaxPool { input: a, argmax }))
    }

    /// Column sums (1×cols).
    pub fn col_sum(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut sums = vec![0.0; m.cols()];
        for i in 0..m.rows() {
            for (s, v) in sums.iter_mut().zip(m.row(i)) {
                *s += v;
            }
        }
        let value = DenseMatrix::new(1, sums.len(), sums).expect("1×c");
        self.unary(a, value, Op::ColSum(a))
    }

    /// Sum of all entries (1×1).
    pub fn sum(&mut self, a: Var) -> Var {
        let value = DenseMatrix::filled(1, 1, self.value(a).sum());
        self.unary(a, value, Op::Sum(a))
    }

    /// Inverted dropout. Outside training, or with `p == 0`, returns `a`
    /// itself and consumes no randomness.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        check_dropout(p)?;
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let m = self.value(a);
        let mask: Vec<f64> = (0..m.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = m.data().iter().zip(&mask).map(|(x, k)| x * k).collect();
        let value = DenseMatrix::new(m.rows(), m.cols(), data)?;
        Ok(self.unary(a, value, Op::Dropout { input: a, mask }))
    }

    /// Per-entry attention logits: for every stored `(i, j)` of `pattern`,
    /// `src[i] + dst[j]`, laid out as a 1×nnz row. `src` and `dst` are n×1.
    pub fn edge_scores(&mut self, pattern: Arc<SparseMatrix>, src: Var, dst: Var) -> Result<Var> {
        let (s, d) = (self.value(src), self.value(dst));
        if s.shape() != (pattern.rows(), 1) || d.shape() != (pattern.cols(), 1) {
            return Err(Error::dim("edge_scores", s.shape(), d.shape()));
        }
        let mut vals = Vec::with_capacity(pattern.nnz());
        for i in 0..pattern.rows() {
            let (cols, _) = pattern.row(i);
            vals.extend(cols.iter().map(|&j| s.data()[i] + d.data()[j]));
        }
        let value = DenseMatrix::new(1, vals.len(), vals)?;
        Ok(self.binary(src, dst, value, Op::EdgeScores { pattern, src, dst }))
    }

    /// Softmax of a 1×nnz row of entry scores within each row of `pattern`.
    pub fn edge_softmax(&mut self, pattern: Arc<SparseMatrix>, scores: Var) -> Result<Var> {
        let m = self.value(scores);
        if m.shape() != (1, pattern.nnz()) {
            return Err(Error::dim("edge_softmax", (1, pattern.nnz()), m.shape()));
        }
        let mut value = m.clone();
        let offs = pattern.row_offsets();
        for i in 0..pattern.rows() {
            let seg = &mut value.data_mut()[offs[i]..offs[i + 1]];
            if !seg.is_empty() {
                softmax_in_place(seg);
            }
        }
        Ok(self.unary(scores, value, Op::EdgeSoftmax { pattern, scores }))
    }

    /// Mean negative log-probability of the target class over `targets`
    /// (pairs of node index and class).
    pub fn cross_entropy(&mut self, probs: Var, targets: Vec<(usize, usize)>) -> Result<Var> {
        if targets.is_empty() {
            return Err(Error::Contract("cross_entropy over an empty mask".into()));
        }
        let p = self.value(probs);
        check_targets(&targets, p.rows(), p.cols())?;
        let total: f64 = targets.iter().map(|&(i, q)| -p.get(i, q).max(LOG_CLAMP).ln()).sum();
        let value = DenseMatrix::filled(1, 1, total / targets.len() as f64);
        Ok(self.unary(probs, value, Op::CrossEntropy { probs, targets }))
    }

    /// Global-local contrastive loss between label features `labels` (k×c)
    /// and node features `feats` (n×c): own-class squared distances minus
    /// other-class squared distances clamped at `cutoff`, summed over
    /// `targets`.
    pub fn global_local(
        &mut self,
        labels: Var,
        feats: Var,
        targets: Vec<(usize, usize)>,
        cutoff: f64,
    ) -> Result<Var> {
        if targets.is_empty() {
            return Err(Error::Contract("global_local loss over an empty mask".into()));
        }
        let (g, f) = (self.value(labels), self.value(feats));
        if g.cols() != f.cols() {
            return Err(Error::dim("global_local", g.shape(), f.shape()));
        }
        check_targets(&targets, f.rows(), g.rows())?;
        let mut total = 0.0;
        for &(i, y) in &targets {
            for q in 0..g.rows() {
                let d = sq_dist(g.row(q), f.row(i));
                if q == y {
                    total += d;
                } else {
                    total -= d.min(cutoff);
                }
            }
        }
        let value = DenseMatrix::filled(1, 1, total);
        Ok(self.binary(
            labels,
            feats,
            value,
            Op::GlobalLocal {
                labels,
                feats,
                targets,
                cutoff,
            },
        ))
    }

    // ----------------------------------------------------------- backward

    /// Accumulates gradients of the 1×1 node `loss` into every node that
    /// requires one. A second call is rejected until [`Tape::clear_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract("backward already ran on this tape".into()));
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss, got {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(DenseMatrix::filled(1, 1, 1.0));
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            let contributions = self.local_grads(idx, &g)?;
            self.grads[idx] = Some(g);
            for (v, c) in contributions {
                self.accumulate(v, c)?;
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contribution: DenseMatrix) -> Result<()> {
        if !self.nodes[v.0].requires_grad {
            return Ok(());
        }
        match &mut self.grads[v.0] {
            Some(existing) => existing.axpy(1.0, &contribution),
            slot @ None => {
                *slot = Some(contribution);
                Ok(())
            }
        }
    }

    fn local_grads(&self, idx: usize, g: &DenseMatrix) -> Result<Vec<(Var, DenseMatrix)>> {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                if rg(a) {
                    out.push((a, gemm(g, false, val(b), true)?));
                }
                if rg(b) {
                    out.push((b, gemm(val(a), true, g, false)?));
                }
            }
            &Op::Transpose(a) => out.push((a, g.transpose())),
            Op::Spmm { s, d } => out.push((*d, s.transpose_spmm_with_values(s.values(), g)?)),
            Op::SpmmValues { pattern, values, d } => {
                let vals = val(*values);
                if rg(*d) {
                    out.push((*d, pattern.transpose_spmm_with_values(vals.data(), g)?));
                }
                if rg(*values) {
                    let dm = val(*d);
                    let mut gv = Vec::with_capacity(pattern.nnz());
                    for i in 0..pattern.rows() {
                        let (cols, _) = pattern.row(i);
                        for &j in cols {
                            gv.push(dot(g.row(i), dm.row(j)));
                        }
                    }
                    out.push((*values, DenseMatrix::new(1, gv.len(), gv)?));
                }
            }
            &Op::Add(a, b) => {
                out.push((a, g.clone()));
                out.push((b, g.clone()));
            }
            &Op::Sub(a, b) => {
                out.push((a, g.clone()));
                out.push((b, g.scale(-1.0)));
            }
            &Op::Mul(a, b) => {
                if rg(a) {
                    out.push((a, g.zip_map(val(b), "mul", |x, y| x * y)?));
                }
                if rg(b) {
                    out.push((b, g.zip_map(val(a), "mul", |x, y| x * y)?));
                }
            }
            &Op::Square(a) => out.push((a, g.zip_map(val(a), "square", |x, y| 2.0 * x * y)?)),
            &Op::Scale(a, s) => out.push((a, g.scale(s))),
            &Op::AddRow(a, bias) => {
                if rg(bias) {
                    let mut sums = DenseMatrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (s, v) in sums.data_mut().iter_mut().zip(g.row(i)) {
                            *s += v;
                        }
                    }
                    out.push((bias, sums));
                }
                out.push((a, g.clone()));
            }
            &Op::Relu(a) => {
                out.push((a, g.zip_map(val(a), "relu", |gv, x| if x > 0.0 { gv } else { 0.0 })?))
            }
            &Op::LeakyRelu(a, slope) => out.push((
                a,
                g.zip_map(val(a), "leaky_relu", |gv, x| if x > 0.0 { gv } else { slope * gv })?,
            )),
            &Op::RowSoftmax(a) => {
                let y = &node.value;
                let c = y.cols();
                let mut da = DenseMatrix::zeros(y.rows(), c);
                for i in 0..y.rows() {
                    softmax_backward(y.row(i), g.row(i), da.row_mut(i));
                }
                out.push((a, da));
            }
            &Op::ConcatCols(a, b) => {
                let ca = val(a).cols();
                let cb = val(b).cols();
                let mut ga = DenseMatrix::zeros(g.rows(), ca);
                let mut gb = DenseMatrix::zeros(g.rows(), cb);
                for i in 0..g.rows() {
                    ga.row_mut(i).copy_from_slice(&g.row(i)[..ca]);
                    gb.row_mut(i).copy_from_slice(&g.row(i)[ca..]);
                }
                out.push((a, ga));
                out.push((b, gb));
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut start = 0;
                for &p in parts {
                    let r = val(p).rows();
                    let part = DenseMatrix::new(r, c, g.data()[start * c..(start + r) * c].to_vec())?;
                    out.push((p, part));
                    start += r;
                }
            }
            &Op::SliceRows(a, start) => {
                let (r, c) = val(a).shape();
                let mut ga = DenseMatrix::zeros(r, c);
                ga.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                out.push((a, ga));
            }
            Op::ColMaxPool { input, argmax } => {
                let (r, c) = val(*input).shape();
                let mut ga = DenseMatrix::zeros(r, c);
                for (j, &i) in argmax.iter().enumerate() {
                    ga.set(i, j, g.data()[j]);
                }
                out.push((*input, ga));
            }
            &Op::ColSum(a) => {
                let (r, c) = val(a).shape();
                let ga = DenseMatrix::from_fn(r, c, |_, j| g.data()[j]);
                out.push((a, ga));
            }
            &Op::Sum(a) => {
                let (r, c) = val(a).shape();
                out.push((a, DenseMatrix::filled(r, c, g.data()[0])));
            }
            Op::Dropout { input, mask } => {
                let data = g.data().iter().zip(mask).map(|(x, m)| x * m).collect();
                out.push((*input, DenseMatrix::new(g.rows(), g.cols(), data)?));
            }
            Op::EdgeScores { pattern, src, dst } => {
                let mut gs = DenseMatrix::zeros(pattern.rows(), 1);
                let mut gd = DenseMatrix::zeros(pattern.cols(), 1);
                let mut k = 0;
                for i in 0..pattern.rows() {
                    let (cols, _) = pattern.row(i);
                    for &j in cols {
                        gs.data_mut()[i] += g.data()[k];
                        gd.data_mut()[j] += g.data()[k];
                        k += 1;
                    }
                }
                out.push((*src, gs));
                out.push((*dst, gd));
            }
            Op::EdgeSoftmax { pattern, scores } => {
                let y = &node.value;
                let mut ga = DenseMatrix::zeros(1, y.cols());
                let offs = pattern.row_offsets();
                for i in 0..pattern.rows() {
                    let r = offs[i]..offs[i + 1];
                    softmax_backward(
                        &y.data()[r.clone()],
                        &g.data()[r.clone()],
                        &mut ga.data_mut()[r],
                    );
                }
                out.push((*scores, ga));
            }
            Op::CrossEntropy { probs, targets } => {
                let p = val(*probs);
                let mut gp = DenseMatrix::zeros(p.rows(), p.cols());
                let w = g.data()[0] / targets.len() as f64;
                for &(i, q) in targets {
                    let pv = p.get(i, q);
                    if pv > LOG_CLAMP {
                        gp.set(i, q, gp.get(i, q) - w / pv);
                    }
                }
                out.push((*probs, gp));
            }
            Op::GlobalLocal {
                labels,
                feats,
                targets,
                cutoff,
            } => {
                let (gm, fm) = (val(*labels), val(*feats));
                let w = g.data()[0];
                let mut gg = DenseMatrix::zeros(gm.rows(), gm.cols());
                let mut gf = DenseMatrix::zeros(fm.rows(), fm.cols());
                for &(i, y) in targets {
                    for q in 0..gm.rows() {
                        let diff: Vec<f64> = gm.row(q).iter().zip(fm.row(i)).map(|(a, b)| a - b).collect();
                        let coef = if q == y {
                            2.0 * w
                        } else if dot(&diff, &diff) < *cutoff {
                            -2.0 * w
                        } else {
                            continue;
                        };
                        for (o, d) in gg.row_mut(q).iter_mut().zip(&diff) {
                            *o += coef * d;
                        }
                        for (o, d) in gf.row_mut(i).iter_mut().zip(&diff) {
                            *o -= coef * d;
                        }
                    }
                }
                out.push((*labels, gg));
                out.push((*feats, gf));
            }
        }
        Ok(out)
    }
}

pub(crate) fn check_dropout(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
    }
    Ok(())
}

/// Inverted dropout on the stored values of a constant sparse matrix.
pub fn dropout_sparse<R: Rng + ?Sized>(
    s: &SparseMatrix,
    p: f64,
    training: bool,
    rng: &mut R,
) -> Result<SparseMatrix> {
    check_dropout(p)?;
    if !training || p == 0.0 {
        return Ok(s.clone());
    }
    let keep = 1.0 / (1.0 - p);
    Ok(s.map_values(|v| if rng.random::<f64>() < p { 0.0 } else { v * keep }))
}

fn check_targets(targets: &[(usize, usize)], rows: usize, classes: usize) -> Result<()> {
    if let Some(&(i, q)) = targets.iter().find(|&&(i, q)| i >= rows || q >= classes) {
        return Err(Error::Contract(format!(
            "target (node {i}, class {q}) outside {rows} nodes x {classes} classes"
        )));
    }
    Ok(())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

fn softmax_backward(y: &[f64], g: &[f64], out: &mut [f64]) {
    let inner = dot(y, g);
    for ((o, yv), gv) in out.iter_mut().zip(y).zip(g) {
        *o = yv * (gv - inner);
    }
}
