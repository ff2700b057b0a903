//! Small dense linear-algebra kernel: symmetric matrices, Cholesky with a
//! definite not-positive-definite signal, SPD solves and eigenvalue repair.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

/// Maximum absolute asymmetry accepted when building a [`SymMatrix`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Condition-number estimate above which Newton steps are abandoned.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Errors raised by the linear-algebra kernel.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric: max asymmetry {0:e}")]
    NotSymmetric(f64),
    #[error("matrix contains a non-finite entry at ({0}, {1})")]
    NonFinite(usize, usize),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: matrix {matrix}, vector {vector}")]
    DimensionMismatch { matrix: usize, vector: usize },
}

/// Symmetric matrix with symmetry enforced on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    m: DMatrix<f64>,
}

impl SymMatrix {
    /// Wraps a square matrix, rejecting asymmetry above [`SYMMETRY_TOLERANCE`]
    /// and averaging the two triangles.
    pub fn new(m: DMatrix<f64>) -> Result<Self, LinalgError> {
        if m.nrows() != m.ncols() {
            return Err(LinalgError::NotSquare { rows: m.nrows(), cols: m.ncols() });
        }
        let n = m.nrows();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                if !m[(i, j)].is_finite() {
                    return Err(LinalgError::NonFinite(i, j));
                }
                worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        if worst > SYMMETRY_TOLERANCE {
            return Err(LinalgError::NotSymmetric(worst));
        }
        Ok(Self::symmetrized(m))
    }

    /// Builds from the upper triangle of `f(i, j)`, `i <= j`.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Self { m }
    }

    /// Identity of size `n`.
    pub fn identity(n: usize) -> Self {
        Self { m: DMatrix::identity(n, n) }
    }

    fn symmetrized(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        Self { m: (m + t) * 0.5 }
    }

    /// Matrix dimension.
    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    /// Entry `(i, j)`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    /// Dense view.
    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// Consumes into the dense matrix.
    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.m.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Smallest eigenvalue.
    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(f64::NAN)
    }
}

/// Lower-triangular Cholesky factor `L` with `m = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    l: DMatrix<f64>,
}

impl CholeskyFactor {
    /// The lower factor.
    pub fn lower(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// Solves `m x = rhs`.
    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>, LinalgError> {
        let n = self.l.nrows();
        if rhs.len() != n {
            return Err(LinalgError::DimensionMismatch { matrix: n, vector: rhs.len() });
        }
        let y = self.l.solve_lower_triangular(rhs).ok_or(LinalgError::NotPositiveDefinite)?;
        self.l.transpose().solve_upper_triangular(&y).ok_or(LinalgError::NotPositiveDefinite)
    }

    /// `log det m = 2 Σ log L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// Inverse of `m`.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.l.nrows();
        let linv = self
            .l
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .expect("Cholesky factor has a positive diagonal");
        linv.transpose() * linv
    }

    /// Condition-number estimate `(max L_ii / min L_ii)²`.
    pub fn condition_estimate(&self) -> f64 {
        let d = self.l.diagonal();
        let max = d.iter().copied().fold(0.0_f64, f64::max);
        let min = d.iter().copied().fold(f64::INFINITY, f64::min);
        (max / min).powi(2)
    }
}

/// Cholesky factorization. `Ok(None)` signals a matrix that is not positive
/// definite; non-finite input is an error.
pub fn cholesky(m: &SymMatrix) -> Result<Option<CholeskyFactor>, LinalgError> {
    cholesky_dense(m.as_matrix())
}

/// Cholesky factorization of a dense matrix assumed symmetric; only the lower
/// triangle is read.
pub fn cholesky_dense(m: &DMatrix<f64>) -> Result<Option<CholeskyFactor>, LinalgError> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(LinalgError::NotSquare { rows: n, cols: m.ncols() });
    }
    for j in 0..n {
        for i in j..n {
            if !m[(i, j)].is_finite() {
                return Err(LinalgError::NonFinite(i, j));
            }
        }
    }
    Ok(nalgebra::Cholesky::new(m.clone()).map(|c| CholeskyFactor { l: c.unpack() }))
}

/// Solves `m x = rhs` for symmetric positive definite `m`.
pub fn solve_spd(m: &SymMatrix, rhs: &DVector<f64>) -> Result<DVector<f64>, LinalgError> {
    cholesky(m)?.ok_or(LinalgError::NotPositiveDefinite)?.solve(rhs)
}

/// Raises every eigenvalue below `floor` to `floor`. Returns the repaired
/// matrix and whether any eigenvalue was changed.
pub fn eigen_floor(m: &SymMatrix, floor: f64) -> (SymMatrix, bool) {
    let eig = SymmetricEigen::new(m.as_matrix().clone());
    let mut changed = false;
    let vals = eig.eigenvalues.map(|v| {
        if v < floor {
            changed = true;
            floor
        } else {
            v
        }
    });
    if !changed {
        return (m.clone(), false);
    }
    let q = &eig.eigenvectors;
    let r = q * DMatrix::from_diagonal(&vals) * q.transpose();
    (SymMatrix::symmetrized(r), true)
}
