//! Small dense linear-algebra helpers used throughout the crate.
//!
//! Everything here operates on symmetric matrices via eigendecomposition or
//! Cholesky factors so that inverses, square roots and log-determinants come
//! with a condition estimate instead of silently returning garbage.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Condition-number ceiling beyond which an inverse is refused.
pub const CONDITION_LIMIT: f64 = 1e14;

/// Replace `x` by its symmetric part `(x + x') / 2`.
pub fn symmetrize(x: &mut DMatrix<f64>) {
    let xt = x.transpose();
    *x += xt;
    *x *= 0.5;
}

/// Symmetric part of `x` as a new matrix.
pub fn sym_part(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut y = x.clone();
    symmetrize(&mut y);
    y
}

/// Frobenius norm of the asymmetric part relative to `max(1, ||x||_F)`.
pub fn asymmetry(x: &DMatrix<f64>) -> f64 {
    (x - x.transpose()).norm() / x.norm().max(1.0)
}

/// Error out unless `x` is square and symmetric to `rel_tol`.
pub fn check_symmetric(x: &DMatrix<f64>, rel_tol: f64) -> Result<()> {
    if !x.is_square() {
        return Err(Error::InvalidArgument(format!(
            "expected square matrix, got {}x{}",
            x.nrows(),
            x.ncols()
        )));
    }
    let asym = asymmetry(x);
    if asym > rel_tol {
        return Err(Error::InvalidArgument(format!(
            "matrix not symmetric: relative asymmetry {asym:.3e} exceeds {rel_tol:.3e}"
        )));
    }
    Ok(())
}

/// Eigendecomposition of the symmetric part of `x`: `(values, vectors)`.
pub fn sym_eigen(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let se = sym_part(x).symmetric_eigen();
    (se.eigenvalues, se.eigenvectors)
}

/// Smallest eigenvalue of the symmetric part of `x`.
pub fn lambda_min(x: &DMatrix<f64>) -> f64 {
    let (vals, _) = sym_eigen(x);
    vals.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// `(lambda_min, lambda_max)` of the symmetric part of `x`.
pub fn lambda_extremes(x: &DMatrix<f64>) -> (f64, f64) {
    let (vals, _) = sym_eigen(x);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in vals.iter() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    (lo, hi)
}

/// Inverse of a symmetric (possibly indefinite) matrix with a condition guard.
pub fn sym_inverse(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (vals, vecs) = sym_eigen(x);
    let max_abs = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let min_abs = vals.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if !(max_abs.is_finite()) || min_abs == 0.0 || max_abs / min_abs > CONDITION_LIMIT {
        return Err(Error::NumericalFailure(format!(
            "symmetric inverse refused: condition estimate {:.3e}",
            if min_abs == 0.0 {
                f64::INFINITY
            } else {
                max_abs / min_abs
            }
        )));
    }
    let inv_diag = DMatrix::from_diagonal(&vals.map(|v| 1.0 / v));
    let mut out = &vecs * inv_diag * vecs.transpose();
    symmetrize(&mut out);
    Ok(out)
}

/// Symmetric positive-semidefinite square root by eigendecomposition.
///
/// Eigenvalues are clamped at zero, so slightly indefinite inputs (round-off
/// away from PSD) are accepted; genuinely asymmetric input is rejected.
pub fn sqrtm_spd(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(x, 1e-10)?;
    let (vals, vecs) = sym_eigen(x);
    let root = DMatrix::from_diagonal(&vals.map(|v| v.max(0.0).sqrt()));
    let mut out = &vecs * root * vecs.transpose();
    symmetrize(&mut out);
    Ok(out)
}

/// Inverse symmetric square root of a positive-definite matrix.
pub fn inv_sqrtm_spd(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(x, 1e-10)?;
    let (vals, vecs) = sym_eigen(x);
    let max = vals.iter().cloned().fold(0.0_f64, f64::max);
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 || max / min > CONDITION_LIMIT {
        return Err(Error::NumericalFailure(format!(
            "inverse square root requires a positive-definite matrix (lambda_min = {min:.3e})"
        )));
    }
    let root = DMatrix::from_diagonal(&vals.map(|v| 1.0 / v.sqrt()));
    let mut out = &vecs * root * vecs.transpose();
    symmetrize(&mut out);
    Ok(out)
}

/// General (non-symmetric) inverse via LU with a Frobenius condition estimate.
pub fn lu_inverse(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = x.clone().lu().try_inverse().ok_or_else(|| {
        Error::NumericalFailure("matrix numerically singular in LU inverse".into())
    })?;
    let cond = x.norm() * inv.norm();
    if !cond.is_finite() || cond > CONDITION_LIMIT {
        return Err(Error::NumericalFailure(format!(
            "inverse refused: condition estimate {cond:.3e}"
        )));
    }
    Ok(inv)
}

/// `log det` of a symmetric positive-definite matrix via Cholesky.
pub fn logdet_spd(x: &DMatrix<f64>) -> Result<f64> {
    check_symmetric(x, 1e-10)?;
    let chol = sym_part(x)
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("matrix not positive definite in logdet".into()))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Cholesky factor `L` (lower) of an SPD matrix, for Gaussian sampling.
pub fn cholesky_lower(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(x, 1e-10)?;
    sym_part(x)
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::InvalidArgument("matrix not positive definite in Cholesky".into()))
}

/// True when every entry of `x` is finite.
pub fn all_finite(x: &DMatrix<f64>) -> bool {
    x.iter().all(|v| v.is_finite())
}
