//! Subspace geometry: orthonormal bases and the principal-angle distance.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{CentaurError, Result};
use crate::linalg;

/// Tolerance on `‖B^T B - I‖_F` accepted by [`OrthonormalBasis::new`].
pub const ORTHONORMAL_TOL: f64 = 1e-8;
/// Tighter tolerance met by every basis produced by a QR factorization.
pub const QR_ORTHONORMAL_TOL: f64 = 1e-10;
/// Largest rounding overshoot outside `[0, 1]` that is silently clamped.
pub const CLAMP_TOL: f64 = 1e-12;

/// A `d x k` matrix with orthonormal columns (`k <= d`).
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalBasis {
    data: DMatrix<f64>,
}

impl OrthonormalBasis {
    /// Wrap `data` after checking `‖data^T data - I‖_F <= 1e-8`.
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        let (d, k) = data.shape();
        if k == 0 || k > d {
            return Err(CentaurError::param(format!(
                "orthonormal basis needs 1 <= k <= d, got {d}x{k}"
            )));
        }
        linalg::check_finite(&data, "basis")?;
        let defect = linalg::orthonormality_defect(&data);
        if defect > ORTHONORMAL_TOL {
            return Err(CentaurError::input(format!(
                "columns are not orthonormal (defect {defect:e})"
            )));
        }
        Ok(Self { data })
    }

    /// Q-factor (diag(R) > 0) of an arbitrary full-column-rank matrix.
    pub fn from_qr(a: &DMatrix<f64>) -> Result<Self> {
        let q = linalg::thin_q(a)?;
        let defect = linalg::orthonormality_defect(&q);
        if defect > QR_ORTHONORMAL_TOL {
            return Err(CentaurError::numeric(format!(
                "QR output failed orthonormality check (defect {defect:e})"
            )));
        }
        Ok(Self { data: q })
    }

    /// Haar-distributed basis: Q-factor of a `d x k` standard Gaussian matrix.
    pub fn random<R: Rng + ?Sized>(d: usize, k: usize, rng: &mut R) -> Result<Self> {
        if k == 0 || k > d {
            return Err(CentaurError::param(format!(
                "orthonormal basis needs 1 <= k <= d, got {d}x{k}"
            )));
        }
        Self::from_qr(&linalg::gaussian_matrix(d, k, rng))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn dims(&self) -> (usize, usize) {
        self.data.shape()
    }

    pub fn d(&self) -> usize {
        self.data.nrows()
    }

    pub fn k(&self) -> usize {
        self.data.ncols()
    }

    pub fn defect(&self) -> f64 {
        linalg::orthonormality_defect(&self.data)
    }
}

fn check_dims(a: &OrthonormalBasis, b: &OrthonormalBasis) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(CentaurError::param(format!(
            "basis dimension mismatch: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

fn clamp_unit(value: f64, what: &str) -> f64 {
    debug_assert!(
        value >= -CLAMP_TOL && value <= 1.0 + CLAMP_TOL,
        "{what} = {value} overshoots [0, 1] by more than rounding"
    );
    value.clamp(0.0, 1.0)
}

/// Principal-angle distance `‖(I - B B^T) B_ref‖_2`, in `[0, 1]`.
///
/// Evaluated from the `d x k` residual `B_ref - B (B^T B_ref)` rather than
/// `sqrt(1 - s_min^2)`: the two agree, but the square-root route loses all
/// significant digits once the distance drops below ~1e-8.
pub fn principal_angle_dist(b: &OrthonormalBasis, b_ref: &OrthonormalBasis) -> Result<f64> {
    check_dims(b, b_ref)?;
    let overlap = b.matrix().transpose() * b_ref.matrix();
    let residual = b_ref.matrix() - b.matrix() * overlap;
    Ok(clamp_unit(linalg::spectral_norm(&residual), "dist"))
}

/// Smallest singular value of `B1^T B2`, in `[0, 1]`.
pub fn min_singular_overlap(b1: &OrthonormalBasis, b2: &OrthonormalBasis) -> Result<f64> {
    check_dims(b1, b2)?;
    let overlap = b1.matrix().transpose() * b2.matrix();
    let s = linalg::singular_values(&overlap);
    Ok(clamp_unit(s.last().copied().unwrap_or(0.0), "overlap"))
}

/// Upper bound `sqrt(k) * dist` on the Frobenius-norm subspace distance.
pub fn frobenius_dist_bound(b: &OrthonormalBasis, b_ref: &OrthonormalBasis) -> Result<f64> {
    Ok((b.k() as f64).sqrt() * principal_angle_dist(b, b_ref)?)
}

/// Spectrum of a head matrix scaled by `1/sqrt(n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSummary {
    /// Singular values of `W / sqrt(n)`, descending.
    pub singular_values: Vec<f64>,
    pub s_1: f64,
    pub s_k: f64,
    /// `s_1 / s_k`; `f64::INFINITY` when `W` is numerically rank deficient.
    pub kappa: f64,
    /// `max_i ‖W_{i,:}‖_2` (unscaled rows).
    pub max_row_norm: f64,
}

/// Spectral summary of an `n x k` matrix of heads.
pub fn spectral_summary(w: &DMatrix<f64>) -> Result<SpectralSummary> {
    let (n, k) = w.shape();
    if k == 0 || n < k {
        return Err(CentaurError::param(format!(
            "spectral summary needs n >= k >= 1, got {n}x{k}"
        )));
    }
    linalg::check_finite(w, "head matrix")?;
    let scaled = w / (n as f64).sqrt();
    let singular_values = linalg::singular_values(&scaled);
    let s_1 = singular_values[0];
    let s_k = singular_values[k - 1];
    let kappa = if s_1 == 0.0 || s_k < 1e-14 * s_1 {
        f64::INFINITY
    } else {
        s_1 / s_k
    };
    let max_row_norm = w
        .row_iter()
        .map(|r| r.norm())
        .fold(0.0f64, f64::max);
    Ok(SpectralSummary {
        singular_values,
        s_1,
        s_k,
        kappa,
        max_row_norm,
    })
}

/// Linearly interpolated `q`-quantile of `values` (NaNs rejected).
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(CentaurError::param("quantile of an empty sample"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(CentaurError::param(format!("quantile level must lie in [0, 1], got {q}")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(CentaurError::input("quantile of a sample containing NaN"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub fn median(values: &[f64]) -> Result<f64> {
    quantile(values, 0.5)
}
