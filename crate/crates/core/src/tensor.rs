//! Dense row-major and CSR sparse matrices of `f64`.
//!
//! These are plain value types. Differentiable use goes through
//! [`crate::tape::Tape`], which stores `DenseMatrix` values and holds
//! `SparseMatrix` operators behind `Arc`.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DenseMatrix {}x{} ", self.rows, self.cols)?;
        if self.data.len() <= 64 {
            f.debug_list()
                .entries(self.data.chunks(self.cols.max(1)))
                .finish()
        } else {
            write!(f, "[..]")
        }
    }
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Contract(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equally long rows. Panics on ragged input; meant
    /// for literals in tests and examples.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.same_shape(other, op)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) -> Result<()> {
        self.same_shape(other, "axpy")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        gemm(self, false, other, false)
    }

    pub(crate) fn same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim(op, self.shape(), other.shape()));
        }
        Ok(())
    }
}

/// `op(a) · op(b)` where `op` optionally transposes. Backed by
/// `matrixmultiply::dgemm`, which is single-threaded and deterministic.
pub(crate) fn gemm(a: &DenseMatrix, ta: bool, b: &DenseMatrix, tb: bool) -> Result<DenseMatrix> {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (k2, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
    if k != k2 {
        return Err(Error::dim("matmul", (m, k), (k2, n)));
    }
    let mut out = DenseMatrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return Ok(out);
    }
    let (rsa, csa) = if ta { (1, a.cols) } else { (a.cols, 1) };
    let (rsb, csb) = if tb { (1, b.cols) } else { (b.cols, 1) };
    // SAFETY: strides describe the row-major buffers of `a`, `b` and `out`
    // under the requested transposition; all three stay borrowed for the call.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa as isize,
            csa as isize,
            b.data.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(out)
}

/// Compressed sparse row matrix. Column indices are strictly increasing
/// within every row.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != rows + 1 || row_offsets[0] != 0 {
            return Err(Error::Contract("CSR row offsets malformed".into()));
        }
        if row_offsets[rows] != col_indices.len() || col_indices.len() != values.len() {
            return Err(Error::Contract("CSR lengths disagree".into()));
        }
        for i in 0..rows {
            let (lo, hi) = (row_offsets[i], row_offsets[i + 1]);
            if lo > hi {
                return Err(Error::Contract("CSR row offsets not monotone".into()));
            }
            let row = &col_indices[lo..hi];
            if row.windows(2).any(|w| w[0] >= w[1]) || row.iter().any(|&j| j >= cols) {
                return Err(Error::Contract(format!(
                    "CSR row {i}: column indices must be strictly increasing and < {cols}"
                )));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("CSR values must be finite".into()));
        }
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_offsets: vec![0; rows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds a CSR matrix from `(row, col, value)` triplets; duplicate
    /// coordinates are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut t: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        if let Some(&(i, j, _)) = t.iter().find(|&&(i, j, _)| i >= rows || j >= cols) {
            return Err(Error::Contract(format!(
                "triplet ({i}, {j}) outside {rows}x{cols}"
            )));
        }
        t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_offsets = vec![0usize; rows + 1];
        let mut col_indices = Vec::with_capacity(t.len());
        let mut values: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in t {
            if last == Some((i, j)) {
                *values.last_mut().expect("previous entry") += v;
                continue;
            }
            last = Some((i, j));
            col_indices.push(j);
            values.push(v);
            row_offsets[i + 1] += 1;
        }
        for i in 0..rows {
            row_offsets[i + 1] += row_offsets[i];
        }
        Self::new(rows, cols, row_offsets, col_indices, values)
    }

    /// Keeps the nonzero entries of a dense matrix.
    pub fn from_dense(d: &DenseMatrix) -> Self {
        let mut row_offsets = Vec::with_capacity(d.rows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for i in 0..d.rows {
            for (j, &v) in d.row(i).iter().enumerate() {
                if v != 0.0 {
                    col_indices.push(j);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Self {
            rows: d.rows,
            cols: d.cols,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out.set(i, j, v);
            }
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    /// Value stored at `(i, j)`, or 0.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |k| vals[k])
    }

    /// Row index of every stored entry, in storage order.
    pub fn entry_rows(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.rows {
            out.extend(std::iter::repeat_n(i, self.row_offsets[i + 1] - self.row_offsets[i]));
        }
        out
    }

    /// Same sparsity pattern with replacement values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.nnz() {
            return Err(Error::dim("with_values", (1, self.nnz()), (1, values.len())));
        }
        Ok(Self {
            values,
            ..self.clone()
        })
    }

    pub fn map_values(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn transpose(&self) -> Self {
        let triplets = (0..self.rows).flat_map(|i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (j, i, v))
        });
        Self::from_triplets(self.cols, self.rows, triplets).expect("transpose of valid CSR")
    }

    /// `self · d`.
    pub fn spmm(&self, d: &DenseMatrix) -> Result<DenseMatrix> {
        self.spmm_with_values(&self.values, d)
    }

    /// `S · d` where `S` has this sparsity pattern but entries `values`.
    pub fn spmm_with_values(&self, values: &[f64], d: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != d.rows() {
            return Err(Error::dim("spmm", self.shape(), d.shape()));
        }
        if values.len() != self.nnz() {
            return Err(Error::dim("spmm", (1, self.nnz()), (1, values.len())));
        }
        let c = d.cols();
        let mut out = DenseMatrix::zeros(self.rows, c);
        for i in 0..self.rows {
            let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
            let dst = &mut out.data[i * c..(i + 1) * c];
            for k in lo..hi {
                let v = values[k];
                let src = d.row(self.col_indices[k]);
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
        Ok(out)
    }

    /// `Sᵀ · g` for `S` with this pattern and entries `values`.
    pub fn transpose_spmm_with_values(&self, values: &[f64], g: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != g.rows() {
            return Err(Error::dim("spmm_t", (self.cols, self.rows), g.shape()));
        }
        let c = g.cols();
        let mut out = DenseMatrix::zeros(self.cols, c);
        for i in 0..self.rows {
            let src = g.row(i);
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                let v = values[k];
                let j = self.col_indices[k];
                let dst = &mut out.data[j * c..(j + 1) * c];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
        Ok(out)
    }
}
