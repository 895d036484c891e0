//! Dense row-major `f64` matrices and the layer kernels used by the model zoo.

use std::fmt;

use crate::error::{CkdError, Result};

/// Row-major dense matrix of finite `f64` values.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for row in self.row_iter() {
            writeln!(f, "  {row:?}")?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting bad lengths and non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CkdError::ShapeMismatch {
                context: "Matrix::from_vec",
                expected: format!("{} values for {rows}x{cols}", rows * cols),
                actual: format!("{} values", data.len()),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(CkdError::invalid(format!(
                "non-finite matrix entry at ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(CkdError::ShapeMismatch {
                context: "Matrix::from_rows",
                expected: format!("{cols} columns"),
                actual: format!("{} columns in row {bad}", rows[bad].len()),
            });
        }
        Matrix::from_vec(rows.len(), cols, rows.concat())
    }

    /// Internal constructor for kernel outputs whose shape is known to be right.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(self.rows)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// New matrix made of the given rows, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix::from_raw(indices.len(), self.cols, data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::from_raw(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &Matrix, s: f64) -> Result<()> {
        self.check_same_shape(other, "Matrix::add_scaled")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn check_same_shape(&self, other: &Matrix, context: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(CkdError::ShapeMismatch {
                context,
                expected: format!("{}x{}", self.rows, self.cols),
                actual: format!("{}x{}", other.rows, other.cols),
            });
        }
        Ok(())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Class index per row of a logit batch.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelVector(Vec<usize>);

impl LabelVector {
    pub fn new(labels: Vec<usize>) -> Self {
        LabelVector(labels)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> LabelVector {
        LabelVector(indices.iter().map(|&i| self.0[i]).collect())
    }

    /// Checks that there is one label per row and every label indexes a column.
    pub fn validate_for(&self, logits: &Matrix) -> Result<()> {
        if self.0.len() != logits.rows() {
            return Err(CkdError::ShapeMismatch {
                context: "labels vs logits",
                expected: format!("{} labels", logits.rows()),
                actual: format!("{} labels", self.0.len()),
            });
        }
        if let Some((row, &label)) = self.0.iter().enumerate().find(|(_, &l)| l >= logits.cols()) {
            return Err(CkdError::invalid(format!(
                "label {label} in row {row} out of range for {} classes",
                logits.cols()
            )));
        }
        Ok(())
    }
}

impl From<Vec<usize>> for LabelVector {
    fn from(v: Vec<usize>) -> Self {
        LabelVector(v)
    }
}

impl std::ops::Index<usize> for LabelVector {
    type Output = usize;

    fn index(&self, i: usize) -> &usize {
        &self.0[i]
    }
}

// ---------------------------------------------------------------------------
// Layer kernels
// ---------------------------------------------------------------------------

/// `a (n x k) * b (k x m)`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(CkdError::ShapeMismatch {
            context: "matmul",
            expected: format!("rhs with {} rows", a.cols),
            actual: format!("{}x{}", b.rows, b.cols),
        });
    }
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b.data[p * m..(p + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    Ok(Matrix::from_raw(n, m, out))
}

/// Gradients of `a * b` given the upstream gradient: `(dA, dB) = (dY b^T, a^T dY)`.
pub fn matmul_backward(a: &Matrix, b: &Matrix, upstream: &Matrix) -> Result<(Matrix, Matrix)> {
    if upstream.shape() != (a.rows, b.cols) {
        return Err(CkdError::ShapeMismatch {
            context: "matmul_backward",
            expected: format!("{}x{}", a.rows, b.cols),
            actual: format!("{}x{}", upstream.rows, upstream.cols),
        });
    }
    let da = matmul(upstream, &b.transpose())?;
    let db = matmul(&a.transpose(), upstream)?;
    Ok((da, db))
}

/// Adds `bias` to every row.
pub fn add_bias(x: &Matrix, bias: &[f64]) -> Result<Matrix> {
    if bias.len() != x.cols {
        return Err(CkdError::ShapeMismatch {
            context: "add_bias",
            expected: format!("bias of length {}", x.cols),
            actual: format!("length {}", bias.len()),
        });
    }
    let mut out = x.clone();
    for row in out.data.chunks_exact_mut(x.cols.max(1)) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
    Ok(out)
}

/// Bias gradient: column sums of the upstream gradient.
pub fn add_bias_backward(upstream: &Matrix) -> Vec<f64> {
    let mut grad = vec![0.0; upstream.cols];
    for row in upstream.row_iter() {
        for (g, v) in grad.iter_mut().zip(row) {
            *g += v;
        }
    }
    grad
}

pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| v.max(0.0))
}

/// Passes the upstream gradient where the pre-activation was positive.
pub fn relu_backward(pre_activation: &Matrix, upstream: &Matrix) -> Result<Matrix> {
    pre_activation.check_same_shape(upstream, "relu_backward")?;
    let data = pre_activation
        .data
        .iter()
        .zip(&upstream.data)
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Ok(Matrix::from_raw(upstream.rows, upstream.cols, data))
}
