//! Dense row-major matrices and the handful of BLAS-like kernels the rest of
//! the crate needs.

use std::fmt;

use crate::error::{HieroError, Result};
use crate::par;

/// Row-major dense matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data, validating length and finiteness.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(HieroError::Shape(format!(
                "expected {} values for {rows}x{cols}, got {}",
                rows * cols,
                data.len()
            )));
        }
        let m = DenseMatrix { rows, cols, data };
        m.check_finite()?;
        Ok(m)
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(HieroError::Shape(format!("row {i} has {} columns, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        DenseMatrix { rows, cols, data }
    }

    /// Wraps data without validation. Length must match.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        DenseMatrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
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

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(HieroError::NonFinite { row: i / self.cols.max(1), col: i % self.cols.max(1) }),
            None => Ok(()),
        }
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// Copies the given rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> DenseMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        DenseMatrix::from_raw(indices.len(), self.cols, data)
    }

    /// Copies the first `k` columns.
    pub fn leading_columns(&self, k: usize) -> DenseMatrix {
        DenseMatrix::from_fn(self.rows, k, |r, c| self.get(r, c))
    }

    pub fn scaled(&self, s: f64) -> DenseMatrix {
        DenseMatrix::from_raw(self.rows, self.cols, self.data.iter().map(|v| v * s).collect())
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.same_shape(other, "add")?;
        Ok(DenseMatrix::from_raw(
            self.rows,
            self.cols,
            self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.same_shape(other, "sub")?;
        Ok(DenseMatrix::from_raw(
            self.rows,
            self.cols,
            self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn add_assign(&mut self, other: &DenseMatrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn same_shape(&self, other: &DenseMatrix, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(HieroError::Shape(format!(
                "{op}: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    /// Largest absolute entry-wise difference.
    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// Induced infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows).map(|r| self.row(r).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    pub fn row_norms(&self) -> Vec<f64> {
        (0..self.rows).map(|r| norm(self.row(r))).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    /// `self · other`
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(HieroError::Shape(format!(
                "matmul: {}x{} · {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        gemm(self, false, other, false, &mut out, 0.0);
        Ok(out)
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.cols {
            return Err(HieroError::Shape(format!(
                "matmul_t: {}x{} · ({}x{})ᵀ",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.rows);
        gemm(self, false, other, true, &mut out, 0.0);
        Ok(out)
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows {
            return Err(HieroError::Shape(format!(
                "t_matmul: ({}x{})ᵀ · {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.cols, other.cols);
        gemm(self, true, other, false, &mut out, 0.0);
        Ok(out)
    }

    /// L2-normalizes every row; zero rows are an error.
    pub fn normalized_rows(&self) -> Result<DenseMatrix> {
        let mut out = self.clone();
        for r in 0..self.rows {
            let n = norm(self.row(r));
            if n == 0.0 {
                return Err(HieroError::ZeroNormRow { row: r });
            }
            out.row_mut(r).iter_mut().for_each(|v| *v /= n);
        }
        Ok(out)
    }

    /// Mean of all rows.
    pub fn mean_row(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (a, v) in acc.iter_mut().zip(self.row(r)) {
                *a += v;
            }
        }
        let n = self.rows.max(1) as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

/// `out = op(a) · op(b) + beta · out`, with op the optional transpose.
pub(crate) fn gemm(a: &DenseMatrix, ta: bool, b: &DenseMatrix, tb: bool, out: &mut DenseMatrix, beta: f64) {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let n = if tb { b.rows } else { b.cols };
    debug_assert_eq!(out.shape(), (m, n));
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.data.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if ta { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: strides and dimensions describe the backing slices exactly.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine of the angle between two vectors; errors on a zero vector.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 {
        return Err(HieroError::ZeroNormRow { row: 0 });
    }
    if nb == 0.0 {
        return Err(HieroError::ZeroNormRow { row: 1 });
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Pairwise cosine similarity of the rows of `x`.
///
/// The result is symmetric with a unit diagonal and entries clamped to
/// `[-1, 1]`.
pub fn cosine_similarity_matrix(x: &DenseMatrix) -> Result<DenseMatrix> {
    x.check_finite()?;
    let unit = x.normalized_rows()?;
    let n = x.rows();
    let mut out = DenseMatrix::zeros(n, n);
    par::for_each_chunk_mut(out.data_mut(), n.max(1), |i, row| {
        let ui = unit.row(i);
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = if i == j { 1.0 } else { dot(ui, unit.row(j)).clamp(-1.0, 1.0) };
        }
    });
    // enforce exact symmetry against rounding in the dot products
    for i in 0..n {
        for j in (i + 1)..n {
            let v = out.get(i, j);
            out.set(j, i, v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree_with_naive() {
        let a = DenseMatrix::from_fn(3, 4, |r, c| (r * 4 + c) as f64 * 0.5 - 2.0);
        let b = DenseMatrix::from_fn(4, 2, |r, c| (r as f64 - c as f64) * 0.25);
        let naive = DenseMatrix::from_fn(3, 2, |r, c| (0..4).map(|k| a.get(r, k) * b.get(k, c)).sum());
        assert!(a.matmul(&b).unwrap().max_abs_diff(&naive) < 1e-12);
        assert!(a.matmul_t(&b.transpose()).unwrap().max_abs_diff(&naive) < 1e-12);
        assert!(a.transpose().t_matmul(&b).unwrap().max_abs_diff(&naive) < 1e-12);
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn cosine_matrix_of_orthonormal_rows_is_identity() {
        let x = DenseMatrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let s = cosine_similarity_matrix(&x).unwrap();
        assert!(s.max_abs_diff(&DenseMatrix::identity(3)) < 1e-12);
    }

    #[test]
    fn cosine_matrix_repeated_row_is_all_ones() {
        let x = DenseMatrix::from_rows(&[[0.3, -1.2, 4.0], [0.3, -1.2, 4.0]]).unwrap();
        let s = cosine_similarity_matrix(&x).unwrap();
        for v in s.data() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_matrix_antipodal() {
        let x = DenseMatrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0]]).unwrap();
        let s = cosine_similarity_matrix(&x).unwrap();
        assert_eq!(s.get(0, 1), -1.0);
        assert_eq!(s.get(1, 0), -1.0);
    }

    #[test]
    fn cosine_matrix_names_zero_row() {
        let x = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]).unwrap();
        match cosine_similarity_matrix(&x) {
            Err(HieroError::ZeroNormRow { row }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn from_vec_rejects_bad_input() {
        assert!(DenseMatrix::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(matches!(
            DenseMatrix::from_vec(1, 2, vec![1.0, f64::NAN]),
            Err(HieroError::NonFinite { row: 0, col: 1 })
        ));
    }
}
