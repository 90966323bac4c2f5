//! Small dense linear-algebra kernels used by the likelihood evaluators.
//!
//! The covariance blocks handled here are modest (a few hundred rows at
//! most), so plain Cholesky with triangular solves is sufficient and keeps
//! the evaluation bit-deterministic across thread counts.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: Array2<f64>,
}

impl Cholesky {
    /// Factor `a` as `L Lᵀ`. Only the lower triangle of `a` is read.
    pub fn new(a: ArrayView2<'_, f64>) -> Result<Self, LinalgError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(LinalgError::DimensionMismatch(format!(
                "Cholesky needs a square matrix, got {}x{}",
                n,
                a.ncols()
            )));
        }
        let mut l = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let mut d = a[[j, j]];
            for k in 0..j {
                d -= l[[j, k]] * l[[j, k]];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(LinalgError::NotPositiveDefinite { row: j, pivot: d });
            }
            let dj = d.sqrt();
            l[[j, j]] = dj;
            for i in (j + 1)..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / dj;
            }
        }
        Ok(Self { lower: l })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> ArrayView2<'_, f64> {
        self.lower.view()
    }

    /// log |A| = 2 Σ log L_ii.
    pub fn log_det(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim() {
            s += self.lower[[i, i]].ln();
        }
        2.0 * s
    }

    /// Solve `L y = b` in place.
    pub fn solve_lower_inplace(&self, b: &mut [f64]) {
        let n = self.dim();
        debug_assert_eq!(b.len(), n);
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.lower[[i, k]] * b[k];
            }
            b[i] = s / self.lower[[i, i]];
        }
    }

    /// Solve `Lᵀ x = b` in place.
    pub fn solve_upper_inplace(&self, b: &mut [f64]) {
        let n = self.dim();
        debug_assert_eq!(b.len(), n);
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= self.lower[[k, i]] * b[k];
            }
            b[i] = s / self.lower[[i, i]];
        }
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: ArrayView1<'_, f64>) -> Array1<f64> {
        let mut x = b.to_owned();
        self.solve_lower_inplace(x.as_slice_mut().expect("contiguous"));
        self.solve_upper_inplace(x.as_slice_mut().expect("contiguous"));
        x
    }

    /// `xᵀ A⁻¹ x` for a single vector.
    pub fn quad_form(&self, x: ArrayView1<'_, f64>) -> f64 {
        let mut y = x.to_owned();
        self.solve_lower_inplace(y.as_slice_mut().expect("contiguous"));
        y.iter().map(|v| v * v).sum()
    }

    /// `tr(A⁻¹ S)` for a symmetric matrix `S` of matching dimension.
    pub fn trace_solve(&self, s: ArrayView2<'_, f64>) -> f64 {
        let n = self.dim();
        debug_assert_eq!(s.nrows(), n);
        debug_assert_eq!(s.ncols(), n);
        // tr(A⁻¹S) = Σ_j colⱼ(L⁻¹ S L⁻ᵀ) — solve column-wise and read diagonal.
        let mut total = 0.0;
        let mut col = vec![0.0; n];
        for j in 0..n {
            for i in 0..n {
                col[i] = s[[i, j]];
            }
            self.solve_lower_inplace(&mut col);
            self.solve_upper_inplace(&mut col);
            total += col[j];
        }
        total
    }
}

/// Solve a symmetric positive definite tridiagonal-free dense system used by
/// the trend spline: factor once, reuse for many right-hand sides.
pub fn cholesky_solve_many(
    chol: &Cholesky,
    rhs: ArrayView2<'_, f64>,
) -> Result<Array2<f64>, LinalgError> {
    if rhs.nrows() != chol.dim() {
        return Err(LinalgError::DimensionMismatch(format!(
            "rhs has {} rows, factor has dimension {}",
            rhs.nrows(),
            chol.dim()
        )));
    }
    let mut out = rhs.to_owned();
    let n = chol.dim();
    let mut col = vec![0.0; n];
    for j in 0..out.ncols() {
        for i in 0..n {
            col[i] = out[[i, j]];
        }
        chol.solve_lower_inplace(&mut col);
        chol.solve_upper_inplace(&mut col);
        for i in 0..n {
            out[[i, j]] = col[i];
        }
    }
    Ok(out)
}
