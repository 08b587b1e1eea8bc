//! Small dense-matrix helpers used by the filters and the dynamics layer.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Force exact symmetry: (M + Mᵀ) / 2.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalue range of a symmetric matrix.
pub fn eigenvalue_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eigs = m.clone().symmetric_eigenvalues();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &e in eigs.iter() {
        lo = lo.min(e);
        hi = hi.max(e);
    }
    (lo, hi)
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    nalgebra::Cholesky::new(symmetrize(m))
        .map(|c| c.inverse())
        .ok_or_else(|| Error::FilterDivergence(format!("{what} is not positive definite")))
}

/// Solve M x = b for symmetric positive-definite M.
pub fn spd_solve(m: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    nalgebra::Cholesky::new(symmetrize(m))
        .map(|c| c.solve(b))
        .ok_or_else(|| Error::FilterDivergence(format!("{what} is not positive definite")))
}

/// Symmetric PSD square root via eigendecomposition.
///
/// Eigenvalues below `1e-12` (relative to the largest) are clamped to zero,
/// so slightly indefinite inputs round down to the nearest PSD matrix.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let floor = 1e-12 * max_ev.max(1.0);
    let sqrt_vals = eig.eigenvalues.map(|v| if v < floor { 0.0 } else { v.sqrt() });
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose()
}

/// True if every entry is finite.
pub fn all_finite_matrix(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// True if every entry is finite.
pub fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}
