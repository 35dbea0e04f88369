//! Thin dense linear-algebra layer over `faer`.
//!
//! Keeps the rest of the crate on plain `Vec<f64>` / [`Mat`] and confines the
//! backend API to this file.

use faer::linalg::solvers::{DenseSolveCore, Llt, Solve};
use faer::Side;

use crate::error::{Error, Result};

pub use faer::Mat;

/// Cholesky factorization `M = L Lᵀ` of a symmetric positive definite matrix.
pub struct Cholesky {
    llt: Llt<f64>,
}

impl std::fmt::Debug for Cholesky {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Cholesky").field("dim", &self.dim()).finish()
    }
}

impl Cholesky {
    pub fn new(m: &Mat<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "cholesky of a {}x{} matrix",
                m.nrows(),
                m.ncols()
            )));
        }
        let llt = m
            .llt(Side::Lower)
            .map_err(|e| Error::NotPositiveDefinite(format!("{e:?}")))?;
        Ok(Self { llt })
    }

    pub fn dim(&self) -> usize {
        self.llt.L().nrows()
    }

    pub fn l(&self) -> faer::MatRef<'_, f64> {
        self.llt.L()
    }

    pub fn log_det(&self) -> f64 {
        let l = self.llt.L();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut rhs = col(b);
        self.llt.solve_in_place(rhs.as_mut());
        rhs.col(0).iter().copied().collect()
    }

    pub fn solve_mat(&self, b: &Mat<f64>) -> Mat<f64> {
        let mut rhs = b.clone();
        self.llt.solve_in_place(rhs.as_mut());
        rhs
    }

    /// `L⁻ᵀ z`; for `z ~ N(0, I)` the result has covariance `M⁻¹`.
    pub fn solve_lt(&self, z: &[f64]) -> Vec<f64> {
        let mut rhs = col(z);
        self.llt
            .L()
            .transpose()
            .solve_upper_triangular_in_place(rhs.as_mut());
        rhs.col(0).iter().copied().collect()
    }

    pub fn inverse(&self) -> Mat<f64> {
        self.llt.inverse()
    }

    /// Ratio of the largest to smallest squared pivot; a cheap lower bound on the condition number.
    pub fn pivot_condition(&self) -> f64 {
        let l = self.llt.L();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
        for i in 0..l.nrows() {
            let d = l[(i, i)] * l[(i, i)];
            lo = lo.min(d);
            hi = hi.max(d);
        }
        hi / lo
    }
}

/// Eigendecomposition of a symmetric matrix: ascending eigenvalues and column eigenvectors.
pub fn sym_eigen(m: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    if m.nrows() == 0 {
        return Ok((Vec::new(), Mat::zeros(0, 0)));
    }
    let evd = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::NoConvergence {
            iterations: 0,
            detail: format!("symmetric eigendecomposition failed: {e:?}"),
        })?;
    let values = evd.S().column_vector().iter().copied().collect();
    Ok((values, evd.U().to_owned()))
}

/// Relative threshold below which eigenvalues count as zero.
pub const EIGEN_RANK_TOL: f64 = 1e-10;

/// Moore–Penrose inverse of a symmetric PSD matrix by eigendecomposition, with its numerical rank.
pub fn pinv_sym(m: &Mat<f64>) -> Result<(Mat<f64>, usize)> {
    let (values, vectors) = sym_eigen(m)?;
    let n = values.len();
    let max = values.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
    let cut = EIGEN_RANK_TOL * max;
    let mut out = Mat::<f64>::zeros(n, n);
    let mut rank = 0;
    for (k, &v) in values.iter().enumerate() {
        if v <= cut {
            continue;
        }
        rank += 1;
        let inv = 1.0 / v;
        for j in 0..n {
            let vj = vectors[(j, k)] * inv;
            if vj == 0.0 {
                continue;
            }
            for i in 0..n {
                out[(i, j)] += vectors[(i, k)] * vj;
            }
        }
    }
    Ok((out, rank))
}

/// Numerical rank of an arbitrary dense matrix (rows as slices) via the Gram matrix spectrum.
pub fn rank_of_rows(rows: &[Vec<f64>]) -> usize {
    if rows.is_empty() {
        return 0;
    }
    let m = rows.len();
    let gram = Mat::<f64>::from_fn(m, m, |i, j| dot(&rows[i], &rows[j]));
    match sym_eigen(&gram) {
        Ok((values, _)) => {
            let max = values.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
            values.iter().filter(|&&v| v > EIGEN_RANK_TOL * max).count()
        }
        Err(_) => 0,
    }
}

pub fn col(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

pub fn mat_vec(m: &Mat<f64>, v: &[f64]) -> Vec<f64> {
    debug_assert_eq!(m.ncols(), v.len());
    let mut out = vec![0.0; m.nrows()];
    for j in 0..m.ncols() {
        let vj = v[j];
        if vj == 0.0 {
            continue;
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o += m[(i, j)] * vj;
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn mat_from_rows(rows: &[Vec<f64>], ncols: usize) -> Mat<f64> {
    Mat::from_fn(rows.len(), ncols, |i, j| rows[i][j])
}
