//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Builds an `n x n` matrix from row-major entries.
pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Result<Matrix> {
    if data.len() != rows * cols {
        return Err(Error::DimensionMismatch {
            expected: rows * cols,
            got: data.len(),
        });
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

pub fn to_row_major(m: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn spectral_radius(m: &Matrix) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)].abs();
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Largest real part over the eigenvalues of `m`.
pub fn spectral_abscissa(m: &Matrix) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn is_symmetric(m: &Matrix, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol * m.amax().max(1.0)
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky_lower(m: &Matrix, what: &'static str) -> Result<Matrix> {
    if !is_symmetric(m, 1e-9) {
        return Err(Error::NotPositiveDefinite(what));
    }
    m.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or(Error::NotPositiveDefinite(what))
}

/// Square factor `L` with `L Lᵀ = m` for a symmetric positive semidefinite matrix.
///
/// Falls back to a symmetric eigen-decomposition when the Cholesky factorization
/// fails, so zero and rank-deficient covariances are accepted.
pub fn psd_factor(m: &Matrix, what: &'static str) -> Result<Matrix> {
    if let Ok(l) = cholesky_lower(m, what) {
        return Ok(l);
    }
    if !is_symmetric(m, 1e-9) {
        return Err(Error::NotPositiveDefinite(what));
    }
    let eig = m.clone().symmetric_eigen();
    let scale = m.amax().max(1.0);
    let mut sqrt_vals = Vector::zeros(eig.eigenvalues.len());
    for (i, &v) in eig.eigenvalues.iter().enumerate() {
        if v < -1e-10 * scale {
            return Err(Error::NotPositiveDefinite(what));
        }
        sqrt_vals[i] = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals))
}

/// Rank of `m` from its singular values, relative to the largest one.
pub fn rank(m: &Matrix, rel_tol: f64) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_major_roundtrip() {
        let m = from_row_major(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(m[(1, 0)], 4.0);
        assert_eq!(to_row_major(&m), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(from_row_major(2, 2, &[1.0]).is_err());
    }

    #[test]
    fn psd_factor_accepts_zero_and_rank_deficient() {
        let z = Matrix::zeros(2, 2);
        let l = psd_factor(&z, "zero").unwrap();
        assert_eq!(l.amax(), 0.0);

        let v = Vector::from_vec(vec![1.0, 2.0]);
        let r1 = &v * v.transpose();
        let l = psd_factor(&r1, "rank one").unwrap();
        assert!((&l * l.transpose() - &r1).amax() < 1e-12);

        let neg = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, -1.0]));
        assert!(psd_factor(&neg, "indefinite").is_err());
    }

    #[test]
    fn spectral_radius_of_rotation() {
        let r = from_row_major(2, 2, &[0.0, -0.5, 0.5, 0.0]).unwrap();
        assert!((spectral_radius(&r) - 0.5).abs() < 1e-12);
        assert!(spectral_abscissa(&r).abs() < 1e-12);
    }
}
