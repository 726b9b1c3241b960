//! Dense row-major matrices, a thin SVD computed through the Gram matrix, and
//! a minimum-norm least-squares solver built on it.
//!
//! Every routine here is a pure function of its inputs. Matrix products go
//! through `matrixmultiply`, whose summation order depends only on the shapes,
//! so repeated calls on identical inputs are bit-identical.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{check_dims, HopsError, Result};

/// Relative singular-value cutoff for the pseudo-inverse.
pub const PINV_RELATIVE_CUTOFF: f64 = 1e-12;

/// Dense real matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dims("Matrix::new data length", rows * cols, data.len())?;
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(HopsError::NonFinite {
                context: "Matrix::new",
                index,
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from row slices of equal length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            check_dims("Matrix::from_rows row length", cols, row.len())?;
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
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

    /// Wraps data produced by internal kernels without re-validating it.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Self { rows, cols, data }
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
    pub fn data(&self) -> &[f64] {
        &self.data
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

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        check_dims("Matrix::matmul inner dimension", self.cols, other.rows)?;
        let mut out = vec![0.0; self.rows * other.cols];
        gemm(
            self.rows,
            self.cols,
            other.cols,
            1.0,
            (&self.data, self.cols as isize, 1),
            (&other.data, other.cols as isize, 1),
            0.0,
            &mut out,
        );
        Ok(Matrix::from_raw(self.rows, other.cols, out))
    }

    /// `selfᵀ · other`, without forming the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        check_dims("Matrix::t_matmul row count", self.rows, other.rows)?;
        let mut out = vec![0.0; self.cols * other.cols];
        gemm(
            self.cols,
            self.rows,
            other.cols,
            1.0,
            (&self.data, 1, self.cols as isize),
            (&other.data, other.cols as isize, 1),
            0.0,
            &mut out,
        );
        Ok(Matrix::from_raw(self.cols, other.cols, out))
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        check_dims("Matrix::matmul_t inner dimension", self.cols, other.cols)?;
        let mut out = vec![0.0; self.rows * other.rows];
        gemm(
            self.rows,
            self.cols,
            other.rows,
            1.0,
            (&self.data, self.cols as isize, 1),
            (&other.data, 1, other.cols as isize),
            0.0,
            &mut out,
        );
        Ok(Matrix::from_raw(self.rows, other.rows, out))
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dims("Matrix::matvec vector length", self.cols, v.len())?;
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `selfᵀ · v`.
    pub fn t_matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dims("Matrix::t_matvec vector length", self.rows, v.len())?;
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        Ok(out)
    }

    /// The Gram matrix `selfᵀ · self`, symmetrized.
    pub fn gram(&self) -> Matrix {
        let n = self.cols;
        let mut g = vec![0.0; n * n];
        gemm(
            n,
            self.rows,
            n,
            1.0,
            (&self.data, 1, n as isize),
            (&self.data, n as isize, 1),
            0.0,
            &mut g,
        );
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (g[i * n + j] + g[j * n + i]);
                g[i * n + j] = avg;
                g[j * n + i] = avg;
            }
        }
        Matrix::from_raw(n, n, g)
    }

    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix::from_raw(indices.len(), self.cols, data)
    }

    pub fn select_columns(&self, indices: &[usize]) -> Matrix {
        Matrix::from_fn(self.rows, indices.len(), |i, j| self.get(i, indices[j]))
    }

    /// Copy of `self` with column `j` removed.
    pub fn without_column(&self, j: usize) -> Matrix {
        let keep: Vec<usize> = (0..self.cols).filter(|&c| c != j).collect();
        self.select_columns(&keep)
    }

    /// Linear combination `a·self + b·other`.
    pub fn axpby(&self, a: f64, other: &Matrix, b: f64) -> Result<Matrix> {
        check_dims("Matrix::axpby rows", self.rows, other.rows)?;
        check_dims("Matrix::axpby cols", self.cols, other.cols)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(Matrix::from_raw(self.rows, self.cols, data))
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-major-output GEMM: `c = alpha·A·B + beta·c` with `A` given as
/// `(data, row_stride, col_stride)` of shape m×k and `B` likewise k×n.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: (&[f64], isize, isize),
    b: (&[f64], isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c[..m * n].iter_mut() {
            *v *= beta;
        }
        return;
    }
    let max_index = |rs: isize, cs: isize, r: usize, cl: usize| {
        (r as isize - 1) * rs + (cl as isize - 1) * cs
    };
    assert!((max_index(a.1, a.2, m, k) as usize) < a.0.len());
    assert!((max_index(b.1, b.2, k, n) as usize) < b.0.len());
    // SAFETY: the asserts above keep every strided access of A and B in
    // bounds, and c holds at least m·n elements laid out with strides (n, 1).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Singular values with right (and optionally left) singular vectors.
///
/// `singular_values` has `min(rows, cols)` entries sorted non-increasing.
/// `right_vectors` is `cols × min(rows, cols)` with orthonormal columns.
/// `left_vectors`, when present, is `rows × rank` and covers only singular
/// values above the pseudo-inverse cutoff; the remaining left vectors are
/// never needed for reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    pub singular_values: Vec<f64>,
    pub right_vectors: Matrix,
    pub left_vectors: Option<Matrix>,
}

impl SvdResult {
    /// Number of singular values treated as nonzero.
    pub fn rank(&self) -> usize {
        let cutoff = effective_cutoff(&self.singular_values, self.right_vectors.rows());
        self.singular_values.iter().filter(|&&s| s > cutoff).count()
    }

    /// `U · diag(Σ) · Vᵀ` over the retained rank.
    pub fn reconstruct(&self) -> Option<Matrix> {
        let u = self.left_vectors.as_ref()?;
        let r = u.cols();
        let m = u.rows();
        let n = self.right_vectors.rows();
        let us = Matrix::from_fn(m, r, |i, j| u.get(i, j) * self.singular_values[j]);
        let v = Matrix::from_fn(n, r, |i, j| self.right_vectors.get(i, j));
        us.matmul_t(&v).ok()
    }
}

/// Noise floor below which a Gram-route singular value is indistinguishable
/// from zero. Eigenvalues of `XᵀX` carry absolute error of order
/// `n·ε·σ₁²`, so singular values under `σ₁·sqrt(10·n·ε)` are not resolved.
fn effective_cutoff(singular_values: &[f64], n: usize) -> f64 {
    let s1 = singular_values.first().copied().unwrap_or(0.0);
    let gram_floor = (10.0 * n.max(1) as f64 * f64::EPSILON).sqrt();
    s1 * PINV_RELATIVE_CUTOFF.max(gram_floor)
}

/// Eigen-decomposition of the Gram matrix: returns singular values (all
/// `cols` of them, sorted non-increasing) and the matching right vectors.
fn gram_eigen(x: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = x.cols();
    let gram = x.gram();
    // Row-major symmetric == column-major symmetric.
    let g = DMatrix::from_row_slice(n, n, gram.data());
    let max_iter = 1000 * n.max(1);
    let eig = SymmetricEigen::try_new(g, f64::EPSILON, max_iter).ok_or_else(|| {
        HopsError::NumericalFailure(format!(
            "symmetric eigendecomposition of {n}x{n} Gram matrix did not converge in {max_iter} iterations"
        ))
    })?;
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps the eigen solver's order on exact ties.
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut values = Vec::with_capacity(n);
    let mut v = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let lambda = eig.eigenvalues[src];
        if !lambda.is_finite() {
            return Err(HopsError::NumericalFailure(
                "non-finite eigenvalue in Gram decomposition".into(),
            ));
        }
        values.push(lambda.max(0.0).sqrt());
        // Sign convention: largest-magnitude component positive.
        let column = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for i in 1..n {
            if column[i].abs() > column[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if column[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            v.set(i, col, sign * column[i]);
        }
    }
    Ok((values, v))
}

fn validate_svd_input(x: &Matrix) -> Result<()> {
    if x.rows() == 0 || x.cols() == 0 {
        return Err(HopsError::InvalidParameter(format!(
            "SVD requires a non-empty matrix, got {}x{}",
            x.rows(),
            x.cols()
        )));
    }
    if let Some(index) = x.data().iter().position(|v| !v.is_finite()) {
        return Err(HopsError::NonFinite {
            context: "thin_svd input",
            index,
        });
    }
    Ok(())
}

/// Singular values and right singular vectors only; skips the `m × r` left
/// factor, which is expensive when `m ≫ n`.
pub fn right_singular(x: &Matrix) -> Result<SvdResult> {
    validate_svd_input(x)?;
    let r = x.rows().min(x.cols());
    let (mut values, v) = gram_eigen(x)?;
    values.truncate(r);
    let right = if r == x.cols() {
        v
    } else {
        v.select_columns(&(0..r).collect::<Vec<_>>())
    };
    Ok(SvdResult {
        singular_values: values,
        right_vectors: right,
        left_vectors: None,
    })
}

/// Thin SVD `X = U·diag(Σ)·Vᵀ` via the symmetric eigendecomposition of `XᵀX`.
pub fn thin_svd(x: &Matrix) -> Result<SvdResult> {
    let mut svd = right_singular(x)?;
    let rank = svd.rank();
    let v_r = svd
        .right_vectors
        .select_columns(&(0..rank).collect::<Vec<_>>());
    let mut u = x.matmul(&v_r)?;
    for i in 0..u.rows() {
        for j in 0..rank {
            let val = u.get(i, j) / svd.singular_values[j];
            u.set(i, j, val);
        }
    }
    svd.left_vectors = Some(u);
    Ok(svd)
}

/// Minimum-norm least-squares solution of `A·w ≈ y` through the SVD
/// pseudo-inverse, `w = V·Σ⁺·Uᵀ·y = V·Σ⁻²·Vᵀ·Aᵀ·y` over the retained rank.
pub fn lstsq_minnorm(a: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    check_dims("lstsq_minnorm rhs length", a.rows(), y.len())?;
    if let Some(index) = y.iter().position(|v| !v.is_finite()) {
        return Err(HopsError::NonFinite {
            context: "lstsq_minnorm rhs",
            index,
        });
    }
    let svd = right_singular(a)?;
    let rank = svd.rank();
    let aty = a.t_matvec(y)?;
    let v = &svd.right_vectors;
    let mut w = vec![0.0; a.cols()];
    for j in 0..rank {
        let s2 = svd.singular_values[j] * svd.singular_values[j];
        let proj: f64 = (0..v.rows()).map(|i| v.get(i, j) * aty[i]).sum::<f64>() / s2;
        for (i, wi) in w.iter_mut().enumerate() {
            *wi += v.get(i, j) * proj;
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_and_bad_length() {
        assert!(Matrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn identity_singular_values() {
        let svd = thin_svd(&Matrix::identity(3)).unwrap();
        for s in &svd.singular_values {
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn diagonal_singular_values() {
        let x = Matrix::from_rows(&[[3.0, 0.0], [0.0, 2.0], [0.0, 0.0]]).unwrap();
        let svd = thin_svd(&x).unwrap();
        assert!((svd.singular_values[0] - 3.0).abs() < 1e-14);
        assert!((svd.singular_values[1] - 2.0).abs() < 1e-14);
        let rec = svd.reconstruct().unwrap();
        assert!(rec.axpby(1.0, &x, -1.0).unwrap().frobenius_norm_sq() < 1e-26);
    }

    #[test]
    fn wide_matrix_keeps_min_dimension() {
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.5]]).unwrap();
        let svd = thin_svd(&x).unwrap();
        assert_eq!(svd.singular_values.len(), 2);
        assert_eq!(svd.right_vectors.cols(), 2);
        let rec = svd.reconstruct().unwrap();
        assert!(rec.axpby(1.0, &x, -1.0).unwrap().frobenius_norm_sq() < 1e-20);
    }

    #[test]
    fn empty_matrix_is_an_error() {
        assert!(thin_svd(&Matrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn lstsq_identity() {
        let w = lstsq_minnorm(&Matrix::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        for (a, b) in w.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn lstsq_duplicated_column_splits_weight() {
        // y = 2·c; columns 0 and 1 identical, so the min-norm solution
        // puts weight 1 on each.
        let c = [1.0, 2.0, -1.0, 0.5];
        let a = Matrix::from_fn(4, 2, |i, _| c[i]);
        let y: Vec<f64> = c.iter().map(|v| 2.0 * v).collect();
        let w = lstsq_minnorm(&a, &y).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-12 && (w[1] - 1.0).abs() < 1e-12);
        let fitted = a.matvec(&w).unwrap();
        for (f, t) in fitted.iter().zip(&y) {
            assert!((f - t).abs() < 1e-12);
        }
    }

    #[test]
    fn lstsq_dimension_mismatch() {
        assert!(matches!(
            lstsq_minnorm(&Matrix::identity(3), &[1.0]),
            Err(HopsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn products_agree_with_naive() {
        let a = Matrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 * 0.5 - 1.0);
        let b = Matrix::from_fn(4, 2, |i, j| (i as f64) - (j as f64) * 0.25);
        let c = a.matmul(&b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let naive: f64 = (0..4).map(|k| a.get(i, k) * b.get(k, j)).sum();
                assert!((c.get(i, j) - naive).abs() < 1e-12);
            }
        }
        let at_a = a.t_matmul(&a).unwrap();
        assert_eq!(at_a, a.transpose().matmul(&a).unwrap());
        let g = a.gram();
        assert!(g.axpby(1.0, &at_a, -1.0).unwrap().frobenius_norm_sq() < 1e-24);
        let abt = a.matmul_t(&a).unwrap();
        assert_eq!(abt, a.matmul(&a.transpose()).unwrap());
    }
}
