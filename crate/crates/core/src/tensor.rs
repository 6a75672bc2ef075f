//! Dense row-major `f64` matrices and additive attention masks.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Finite stand-in for −∞ in additive masks. Large enough that `exp`
/// underflows to exactly zero after max-subtraction.
pub const NEG_INF: f64 = -1e30;

/// Entries at or below this value are treated as masked.
pub(crate) const MASKED_BELOW: f64 = NEG_INF / 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "matrix",
                lhs: (rows, cols),
                rhs: (data.len(), 1),
            });
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

    /// Builds a matrix from equally long rows. Panics on ragged input.
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

    pub fn row_vector(values: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn column_vector(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    /// Samples entries from N(0, std²).
    pub fn randn<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
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
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
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

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        Ok(matmul_nn(self, other))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self += other`, shapes must agree.
    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scale_in_place(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `a · b`, i-k-j loop order so the inner loop streams contiguous rows.
pub(crate) fn matmul_nn(a: &Matrix, b: &Matrix) -> Matrix {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a.data[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Matrix {
        rows: m,
        cols: n,
        data: out,
    }
}

/// `a · bᵀ`.
pub(crate) fn matmul_nt(a: &Matrix, b: &Matrix) -> Matrix {
    let (m, k, n) = (a.rows, a.cols, b.rows);
    debug_assert_eq!(k, b.cols);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b.data[j * k..(j + 1) * k];
            out[i * n + j] = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    }
    Matrix {
        rows: m,
        cols: n,
        data: out,
    }
}

/// `aᵀ · b`.
pub(crate) fn matmul_tn(a: &Matrix, b: &Matrix) -> Matrix {
    let (k, m, n) = (a.rows, a.cols, b.cols);
    debug_assert_eq!(k, b.rows);
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let a_row = &a.data[p * m..(p + 1) * m];
        let b_row = &b.data[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Matrix {
        rows: m,
        cols: n,
        data: out,
    }
}

/// Additive attention mask whose entries are exactly `0.0` or [`NEG_INF`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdditiveMask {
    entries: Matrix,
}

impl AdditiveMask {
    /// All-open mask.
    pub fn open(rows: usize, cols: usize) -> Self {
        Self {
            entries: Matrix::zeros(rows, cols),
        }
    }

    /// Entry `(i, j)` is open (0) iff `allow(i, j)`.
    pub fn from_fn(rows: usize, cols: usize, allow: impl Fn(usize, usize) -> bool) -> Self {
        let mut entries = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                if !allow(i, j) {
                    entries.set(i, j, NEG_INF);
                }
            }
        }
        Self { entries }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.entries.shape()
    }

    pub fn is_open(&self, i: usize, j: usize) -> bool {
        self.entries.get(i, j) == 0.0
    }

    pub fn is_all_open(&self) -> bool {
        self.entries.data().iter().all(|&v| v == 0.0)
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }
}

/// Row-wise softmax of `scores + Σ masks` with max subtraction. Masked
/// entries come out exactly zero; rows with no open entry are all zero.
pub fn masked_softmax_values(scores: &Matrix, masks: &[&AdditiveMask]) -> Result<Matrix> {
    for mask in masks {
        if mask.shape() != scores.shape() {
            return Err(Error::Shape {
                op: "masked_softmax",
                lhs: scores.shape(),
                rhs: mask.shape(),
            });
        }
    }
    let (rows, cols) = scores.shape();
    let mut out = Matrix::zeros(rows, cols);
    let mut shifted = vec![0.0; cols];
    for i in 0..rows {
        let mut max = f64::NEG_INFINITY;
        for (j, slot) in shifted.iter_mut().enumerate() {
            let mut v = scores.get(i, j);
            for mask in masks {
                v += mask.entries.get(i, j);
            }
            *slot = v;
            if v > MASKED_BELOW && v > max {
                max = v;
            }
        }
        if max == f64::NEG_INFINITY {
            continue;
        }
        let row = out.row_mut(i);
        let mut total = 0.0;
        for (o, &v) in row.iter_mut().zip(&shifted) {
            if v > MASKED_BELOW {
                let e = (v - max).exp();
                *o = e;
                total += e;
            }
        }
        for o in row.iter_mut() {
            *o /= total;
        }
    }
    Ok(out)
}
