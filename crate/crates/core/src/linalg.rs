//! Small dense linear-algebra helpers shared by the control and learning
//! layers: matrix exponentials, delay-aware input integrals, and spectral
//! radii.
//!
//! Everything here operates on `nalgebra` dynamic matrices so callers can mix
//! the 6/9-dimensional control blocks with arbitrary test matrices.

use nalgebra::DMatrix;
use thiserror::Error;

/// Errors raised by the dense linear-algebra helpers.
#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    /// The operation requires a square matrix.
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    /// An entry or the scale factor was NaN or infinite.
    #[error("matrix exponential requires finite entries and scale, found a non-finite value")]
    NonFinite,
    /// Matrix dimensions do not agree for the requested product/integral.
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },
}

/// Computes `exp(m * t)` by Padé scaling-and-squaring.
///
/// `t` may be zero (yielding the identity) or negative (yielding the inverse
/// propagator). Rejects non-square matrices and non-finite inputs instead of
/// silently producing NaN blocks.
pub fn matrix_exponential(m: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>, LinalgError> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if !t.is_finite() || m.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    Ok((m * t).exp())
}

/// Computes the delay integral `∫_0^t exp(a s) b ds` exactly.
///
/// Uses the augmented-matrix identity: the top-right block of
/// `exp([[a, b], [0, 0]] t)` equals the integral above. This avoids any
/// quadrature error and handles singular `a` (where the closed form
/// `a⁻¹(e^{at} − I)b` breaks down).
pub fn integrate_exp_input(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    t: f64,
) -> Result<DMatrix<f64>, LinalgError> {
    if a.nrows() != a.ncols() {
        return Err(LinalgError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    if b.nrows() != a.nrows() {
        return Err(LinalgError::DimensionMismatch {
            context: format!(
                "input matrix has {} rows but state dimension is {}",
                b.nrows(),
                a.nrows()
            ),
        });
    }
    let n = a.nrows();
    let m = b.ncols();
    let mut aug = DMatrix::<f64>::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(a);
    aug.view_mut((0, n), (n, m)).copy_from(b);
    let e = matrix_exponential(&aug, t)?;
    Ok(e.view((0, n), (n, m)).into_owned())
}

/// Largest eigenvalue modulus of a square matrix, via the real Schur form.
///
/// Used to certify closed-loop stability (`spectral_radius < 1`) in tests and
/// diagnostics.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64, LinalgError> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    Ok(m
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}
