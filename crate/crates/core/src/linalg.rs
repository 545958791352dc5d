//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{CentaurError, Result};

/// Relative threshold on `min |R_ii| / max |R_ii|` below which a thin QR is
/// declared rank deficient.
pub const RANK_TOL: f64 = 1e-12;

/// Thin QR returning only `Q`, with columns flipped so that `diag(R) > 0`.
///
/// With that sign convention the factorization is unique, so an already
/// orthonormal input maps to itself (up to rounding).
pub fn thin_q(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (rows, cols) = a.shape();
    if cols > rows {
        return Err(CentaurError::param(format!(
            "thin QR needs rows >= cols, got {rows}x{cols}"
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(CentaurError::numeric("thin QR input has non-finite entries"));
    }
    let qr = a.clone().qr();
    let r = qr.r();
    let mut q = qr.q();
    let diag: Vec<f64> = (0..cols).map(|i| r[(i, i)]).collect();
    let largest = diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let smallest = diag.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if cols > 0 && (largest == 0.0 || smallest < RANK_TOL * largest) {
        return Err(CentaurError::numeric(format!(
            "rank-deficient matrix in QR (min |R_ii| = {smallest:e}, max |R_ii| = {largest:e})"
        )));
    }
    for (j, d) in diag.iter().enumerate() {
        if *d < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

/// `rows x cols` matrix of i.i.d. standard normals, drawn in row-major order.
pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

pub fn gaussian_vector<R: Rng + ?Sized>(len: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(len, (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Singular values of `a`, sorted descending.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = a.clone().singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    singular_values(a).first().copied().unwrap_or(0.0)
}

/// `‖a^T a - I‖_F`.
pub fn orthonormality_defect(a: &DMatrix<f64>) -> f64 {
    let gram = a.transpose() * a;
    let k = gram.nrows();
    (gram - DMatrix::<f64>::identity(k, k)).norm()
}

pub fn check_finite(a: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CentaurError::input(format!("{what} has non-finite entries")))
    }
}
