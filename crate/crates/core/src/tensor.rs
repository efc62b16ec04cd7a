//! Minimal dense numeric kernels: row-major f32 matrices with the handful of
//! operations the model forward pass needs. Products accumulate in f64 so
//! results are stable enough for tight cross-platform test tolerances.

use crate::error::{Error, Result};

/// Row-major matrix of 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let n = rows.len();
        let cols = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(n * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Shape("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: n,
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn at(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Copy of the sub-block of columns [start, start+len).
    pub fn col_block(&self, start: usize, len: usize) -> Matrix {
        let mut out = Matrix::zeros(self.rows, len);
        for i in 0..self.rows {
            out.row_mut(i).copy_from_slice(&self.row(i)[start..start + len]);
        }
        out
    }

    /// Append all rows of `other` (same column count).
    pub fn append_rows(&mut self, other: &Matrix) {
        assert_eq!(self.cols, other.cols, "append_rows column mismatch");
        self.data.extend_from_slice(&other.data);
        self.rows += other.rows;
    }

    /// Drop all rows past `keep`, releasing nothing (capacity is reused).
    pub fn truncate_rows(&mut self, keep: usize) {
        if keep < self.rows {
            self.data.truncate(keep * self.cols);
            self.rows = keep;
        }
    }

    /// New matrix keeping the listed rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(idx.len(), self.cols);
        for (dst, &src) in idx.iter().enumerate() {
            out.row_mut(dst).copy_from_slice(self.row(src));
        }
        out
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
    }

    pub fn map_in_place(&mut self, f: impl Fn(f32) -> f32) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }
}

/// `a * b`, accumulating each output entry in f64.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "matmul {}x{} * {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        let mut acc = vec![0.0f64; b.cols];
        for (k, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = b.row(k);
            let avd = av as f64;
            for (j, &bv) in brow.iter().enumerate() {
                acc[j] += avd * bv as f64;
            }
        }
        for (o, v) in orow.iter_mut().zip(acc) {
            *o = v as f32;
        }
    }
    Ok(out)
}

/// `a * b^T`; `b` is indexed by rows, which keeps attention score loops
/// contiguous.
pub fn matmul_transb(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::Shape(format!(
            "matmul_transb {}x{} * ({}x{})^T",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let arow = a.row(i);
        for j in 0..b.rows {
            let brow = b.row(j);
            let mut acc = 0.0f64;
            for k in 0..a.cols {
                acc += arow[k] as f64 * brow[k] as f64;
            }
            out.set(i, j, acc as f32);
        }
    }
    Ok(out)
}

/// Row-wise softmax with max subtraction. `-inf` entries act as masks and
/// map to exactly zero. A row that is entirely `-inf` is an error.
pub fn softmax_rows(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for i in 0..out.rows() {
        softmax_row_in_place(out.row_mut(i)).map_err(|_| Error::DegenerateRow { row: i })?;
    }
    Ok(out)
}

pub(crate) fn softmax_row_in_place(row: &mut [f32]) -> std::result::Result<(), ()> {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if max == f32::NEG_INFINITY {
        return Err(());
    }
    let mut sum = 0.0f64;
    for v in row.iter_mut() {
        if *v == f32::NEG_INFINITY {
            *v = 0.0;
        } else {
            let e = ((*v - max) as f64).exp();
            *v = e as f32;
            sum += e;
        }
    }
    for v in row.iter_mut() {
        *v = (*v as f64 / sum) as f32;
    }
    Ok(())
}

/// Each row divided by its L2 norm plus `eps`. The `eps` guard keeps zero
/// rows at zero.
pub fn l2_normalize_rows(m: &Matrix, eps: f32) -> Matrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        l2_normalize_row_in_place(out.row_mut(i), eps);
    }
    out
}

pub(crate) fn l2_normalize_row_in_place(row: &mut [f32], eps: f32) {
    let norm = row.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt() as f32;
    let denom = norm + eps;
    for v in row.iter_mut() {
        *v /= denom;
    }
}

/// log(exp(a) + exp(b)) without overflow; handles -inf operands.
pub fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Log-softmax of an f32 logit slice, computed in f64.
pub fn log_softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let lse = max
        + logits
            .iter()
            .map(|&v| (v as f64 - max).exp())
            .sum::<f64>()
            .ln();
    logits.iter().map(|&v| v as f64 - lse).collect()
}
