//! Dense helpers shared by the numerical modules.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::{Error, Result};

/// Largest absolute difference between `m` and its transpose.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `L` with `L L^T = a` for a symmetric PSD `a`.
///
/// Uses the eigendecomposition so semidefinite input works; eigenvalues
/// down to `-1e-10 max(1, lambda_max)` are clamped to zero.
pub fn psd_factor(a: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::Input(format!("{what} must be square")));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Factorization { what });
    }
    if a.iter().all(|&v| v == 0.0) {
        return Ok(DMatrix::zeros(n, n));
    }
    if is_diagonal(a) {
        let mut l = DMatrix::zeros(n, n);
        for i in 0..n {
            let d = a[(i, i)];
            if d < -1e-10 {
                return Err(Error::NotPsd { what, min_eig: d });
            }
            l[(i, i)] = d.max(0.0).sqrt();
        }
        return Ok(l);
    }
    let eig = SymmetricEigen::new(symmetrize(a));
    let max = eig.eigenvalues.max().max(1.0);
    let min = eig.eigenvalues.min();
    if min < -1e-10 * max {
        return Err(Error::NotPsd { what, min_eig: min });
    }
    let mut l = eig.eigenvectors.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        l.column_mut(j).scale_mut(s);
    }
    Ok(l)
}

pub fn is_diagonal(a: &DMatrix<f64>) -> bool {
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            if i != j && a[(i, j)] != 0.0 {
                return false;
            }
        }
    }
    true
}

/// `x ⊗ I_k`.
pub fn kron_identity(x: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let (r, c) = x.shape();
    let mut out = DMatrix::zeros(r * k, c * k);
    for i in 0..r {
        for j in 0..c {
            let v = x[(i, j)];
            if v != 0.0 {
                for d in 0..k {
                    out[(i * k + d, j * k + d)] = v;
                }
            }
        }
    }
    out
}

/// Relative Frobenius distance `|a - b| / max(|b|, tiny)`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Minimum eigenvalue of a symmetric matrix.
pub fn min_eig(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(symmetrize(a)).eigenvalues.min()
}
