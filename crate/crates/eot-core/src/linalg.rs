//! Shared dense linear algebra helpers for symmetric matrices.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::EotError;

/// Eigenvalue clamp tolerance for "PSD up to roundoff" inputs.
pub const PSD_CLAMP_TOL: f64 = 1e-12;

/// Symmetrize in place: (M + M^T) / 2.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

/// Principal square root of a symmetric PSD matrix via eigendecomposition.
/// Eigenvalues in [-tol, 0) are clamped to 0; anything more negative is an
/// error.
pub fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>, EotError> {
    sym_eig_fn(m, |l| l.sqrt())
}

/// Inverse square root of a symmetric positive definite matrix.
pub fn sym_inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>, EotError> {
    let eig = checked_eigen(m)?;
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v <= PSD_CLAMP_TOL {
            return Err(EotError::Matrix(format!(
                "matrix not positive definite (eigenvalue {v:.3e})"
            )));
        }
        *v = 1.0 / v.sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&vals) * q.transpose())
}

/// Apply a spectral function to a symmetric PSD matrix.
pub fn sym_eig_fn(
    m: &DMatrix<f64>,
    f: impl Fn(f64) -> f64,
) -> Result<DMatrix<f64>, EotError> {
    let eig = checked_eigen(m)?;
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        *v = f(v.max(0.0));
    }
    let q = &eig.eigenvectors;
    Ok(symmetrize(&(q * DMatrix::from_diagonal(&vals) * q.transpose())))
}

fn checked_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>, EotError> {
    if !m.is_square() {
        return Err(EotError::Matrix(format!(
            "expected square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let sym = symmetrize(m);
    let scale = sym.amax().max(1.0);
    let eig = SymmetricEigen::new(sym);
    if let Some(min) = eig.eigenvalues.iter().cloned().reduce(f64::min) {
        if min < -PSD_CLAMP_TOL * scale.max(1.0) * 10.0 {
            return Err(EotError::Matrix(format!(
                "matrix not PSD (eigenvalue {min:.3e})"
            )));
        }
    }
    Ok(eig)
}
