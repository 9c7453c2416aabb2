//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    m.clone().symmetric_eigenvalues()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(m).iter().copied().fold(f64::INFINITY, f64::min)
}

/// Solves `m x = rhs` for symmetric positive-definite `m`.
pub fn spd_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = m.clone().cholesky().ok_or(Error::SingularDesign {
        min_eigenvalue: min_eigenvalue(m),
        tolerance: 0.0,
    })?;
    Ok(chol.solve(rhs))
}

/// `a^T m^{-1} a` computed by one solve and a dot product.
pub fn inverse_quadratic_form(m: &DMatrix<f64>, a: &[f64]) -> Result<f64> {
    if a.len() != m.nrows() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            actual: a.len(),
        });
    }
    let a = DVector::from_column_slice(a);
    let x = spd_solve(m, &a)?;
    Ok(a.dot(&x))
}

/// `m^{-1/2}` for symmetric positive-definite `m`, via eigendecomposition.
pub fn inverse_sqrt_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    if min <= 1e-14 * max.max(1.0) {
        return Err(Error::SingularDesign {
            min_eigenvalue: min,
            tolerance: 1e-14 * max.max(1.0),
        });
    }
    let scale = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(&eig.eigenvectors * scale * eig.eigenvectors.transpose())
}
