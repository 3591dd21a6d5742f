//! Small dense symmetric positive definite helpers.
//!
//! Every matrix in the model is at most `p x p` with `p` the number of
//! non-reference treatments, so these wrap nalgebra's Cholesky rather than
//! anything blocked or sparse.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub type SpdFactor = Cholesky<f64, Dyn>;

pub fn cholesky(m: &DMatrix<f64>, what: &'static str) -> Result<SpdFactor> {
    Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite(what))
}

pub fn log_det(factor: &SpdFactor) -> f64 {
    2.0 * factor.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub fn spd_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let inv = cholesky(m, what)?.inverse();
    Ok(symmetrize(inv))
}

pub fn spd_log_det(m: &DMatrix<f64>, what: &'static str) -> Result<f64> {
    Ok(log_det(&cholesky(m, what)?))
}

pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Symmetric inverse square root `M^{-1/2}` via the eigendecomposition.
pub fn inverse_sqrt(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let eig = symmetrize(m.clone()).symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    if eig.eigenvalues.iter().any(|&l| l <= scale * 1e-14) {
        return Err(Error::NotPositiveDefinite(what));
    }
    let d = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|l| 1.0 / l.sqrt()),
    );
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&d) * v.transpose())
}

/// Equicorrelation matrix with unit diagonal and 0.5 off the diagonal.
pub fn half_correlation(dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(dim, dim, |i, j| if i == j { 1.0 } else { 0.5 })
}
