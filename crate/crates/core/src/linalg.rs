//! Small dense helpers shared by the Fisher, power and tracking code.
//!
//! Every inverse of an information or covariance matrix goes through a
//! Cholesky factorisation; a failed factorisation surfaces as
//! [`Error::NotPositiveDefinite`] instead of silently producing garbage.

use nalgebra::{Cholesky, DMatrix, DVector, Matrix4, SymmetricEigen, Vector4};

use crate::error::{Error, Result};

pub type Mat4 = Matrix4<f64>;
pub type Vec4 = Vector4<f64>;

pub fn cholesky4(m: &Mat4, what: &'static str) -> Result<Cholesky<f64, nalgebra::U4>> {
    if !m.iter().all(|x| x.is_finite()) {
        return Err(Error::NotPositiveDefinite(what));
    }
    Cholesky::new(*m).ok_or(Error::NotPositiveDefinite(what))
}

/// Inverse of a symmetric positive-definite 4×4 matrix, symmetrised.
pub fn spd_inverse(m: &Mat4, what: &'static str) -> Result<Mat4> {
    let inv = cholesky4(m, what)?.inverse();
    Ok(symmetrize(&inv))
}

/// `log det` of an SPD matrix from its Cholesky diagonal.
pub fn spd_logdet(m: &Mat4, what: &'static str) -> Result<f64> {
    let chol = cholesky4(m, what)?;
    let l = chol.l_dirty();
    Ok(2.0 * (0..4).map(|i| l[(i, i)].ln()).sum::<f64>())
}

pub fn symmetrize(m: &Mat4) -> Mat4 {
    (m + m.transpose()) * 0.5
}

pub fn is_spd(m: &Mat4) -> bool {
    cholesky4(m, "probe").is_ok()
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub fn l1_norm(v: &DVector<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}
