//! Clipping, the Gaussian mechanism and Poisson client sampling.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{CentaurError, Result};

/// Output of [`clip`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClipResult {
    pub value: DMatrix<f64>,
    pub was_clipped: bool,
    /// Frobenius (Euclidean for vectors) norm of the input.
    pub pre_norm: f64,
}

/// Rescale `x` to norm at most `zeta`: `x * min(1, zeta / ‖x‖)`.
///
/// Vectors are passed as single-column matrices; the norm is Frobenius,
/// which coincides with the Euclidean norm there. `zeta` may be
/// `f64::INFINITY`, in which case nothing is ever clipped.
pub fn clip(x: &DMatrix<f64>, zeta: f64) -> Result<ClipResult> {
    if zeta.is_nan() || zeta <= 0.0 {
        return Err(CentaurError::param(format!(
            "clipping threshold must be positive, got {zeta}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(CentaurError::input("clip input has non-finite entries"));
    }
    let pre_norm = x.norm();
    if pre_norm > zeta {
        let mut value = x * (zeta / pre_norm);
        // Rounding can leave the rescaled norm an ulp above zeta.
        while value.norm() > zeta {
            value *= 1.0 - f64::EPSILON;
        }
        Ok(ClipResult {
            value,
            was_clipped: true,
            pre_norm,
        })
    } else {
        Ok(ClipResult {
            value: x.clone(),
            was_clipped: false,
            pre_norm,
        })
    }
}

/// Clipping threshold and noise multiplier of a Gaussian mechanism.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMechanismParams {
    clip_threshold: f64,
    noise_multiplier: f64,
}

impl GaussianMechanismParams {
    /// `clip_threshold` may be `f64::INFINITY` only for a noiseless mechanism.
    pub fn new(clip_threshold: f64, noise_multiplier: f64) -> Result<Self> {
        if clip_threshold.is_nan() || clip_threshold <= 0.0 {
            return Err(CentaurError::param(format!(
                "clipping threshold must be positive, got {clip_threshold}"
            )));
        }
        if !noise_multiplier.is_finite() || noise_multiplier < 0.0 {
            return Err(CentaurError::param(format!(
                "noise multiplier must be finite and nonnegative, got {noise_multiplier}"
            )));
        }
        if clip_threshold.is_infinite() && noise_multiplier > 0.0 {
            return Err(CentaurError::param(
                "an infinite clipping threshold is only allowed with zero noise",
            ));
        }
        Ok(Self {
            clip_threshold,
            noise_multiplier,
        })
    }

    /// Noiseless mechanism without clipping (plain averaging).
    pub fn non_private() -> Self {
        Self {
            clip_threshold: f64::INFINITY,
            noise_multiplier: 0.0,
        }
    }

    pub fn clip_threshold(&self) -> f64 {
        self.clip_threshold
    }

    pub fn noise_multiplier(&self) -> f64 {
        self.noise_multiplier
    }

    pub fn is_private(&self) -> bool {
        self.noise_multiplier > 0.0
    }
}

/// Result of one Gaussian-mechanism release.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanismOutput {
    pub value: DMatrix<f64>,
    pub clip_count: usize,
}

/// `(1/s) (Σ_i clip(x_i; ζ) + σ ζ W)` with `W` i.i.d. standard normal.
///
/// Inputs are summed in slice order and `W` is drawn in row-major order, so
/// the output is a deterministic function of the inputs and the stream state.
/// No noise is drawn when `σ = 0`.
pub fn gaussian_mechanism<R: Rng + ?Sized>(
    inputs: &[DMatrix<f64>],
    params: &GaussianMechanismParams,
    noise_stream: &mut R,
) -> Result<MechanismOutput> {
    let first = inputs
        .first()
        .ok_or_else(|| CentaurError::param("gaussian mechanism needs at least one input"))?;
    let shape = first.shape();
    let mut sum = DMatrix::<f64>::zeros(shape.0, shape.1);
    let mut clip_count = 0;
    for (idx, x) in inputs.iter().enumerate() {
        if x.shape() != shape {
            return Err(CentaurError::input(format!(
                "input {idx} has shape {:?}, expected {shape:?}",
                x.shape()
            )));
        }
        let clipped = clip(x, params.clip_threshold)?;
        clip_count += usize::from(clipped.was_clipped);
        sum += &clipped.value;
    }
    if params.noise_multiplier > 0.0 {
        let scale = params.noise_multiplier * params.clip_threshold;
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let w: f64 = noise_stream.sample(StandardNormal);
                sum[(r, c)] += scale * w;
            }
        }
    }
    Ok(MechanismOutput {
        value: sum / inputs.len() as f64,
        clip_count,
    })
}

/// Poisson sampling: each of the `n` clients (0-based) joins independently
/// with probability `p`, decided in ascending index order. Sorted output.
pub fn poisson_sample_clients<R: Rng + ?Sized>(
    n: usize,
    p: f64,
    sampling_stream: &mut R,
) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(CentaurError::param(format!(
            "sampling probability must lie in [0, 1], got {p}"
        )));
    }
    let mut chosen = Vec::new();
    for i in 0..n {
        let u: f64 = sampling_stream.random();
        if u < p {
            chosen.push(i);
        }
    }
    Ok(chosen)
}
