//! Initialization: private power-method trials on the second-moment
//! surrogate, and a cross-validation vote among independent trials.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::accountant::{init_rdp_curve, PrivacyLedger, RdpCurve};
use crate::client::sample_subset;
use crate::error::{CentaurError, Result};
use crate::linalg;
use crate::mechanisms::{gaussian_mechanism, GaussianMechanismParams};
use crate::metrics::{min_singular_overlap, OrthonormalBasis};
use crate::stream::{child_stream, derive_stream, Domain, Stream};
use crate::synthetic::{ClientDataset, FrlProblem, GroundTruth};

/// Where the power iteration gets its matrix from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MomentSource {
    /// Fresh per-client mini-batch moments every iteration.
    #[default]
    Sampled,
    /// The population target `A = 2Γ + tr(Γ) I` in place of every client's
    /// moment. Test oracle.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpmConfig {
    pub power_iterations: usize,
    pub gm: GaussianMechanismParams,
    pub mbar0: usize,
    pub trials: usize,
    /// Accuracy targeted by a single trial.
    pub eps_i: f64,
    /// Accuracy promised for the selected candidate.
    pub eps_0: f64,
    pub moments: MomentSource,
}

/// Whether a candidate agreeing with half the pool at level `1 - 2 eps_i²`
/// is guaranteed to lie within `eps_0` of the truth.
pub fn accuracy_pair_is_valid(eps_i: f64, eps_0: f64) -> bool {
    (1.0 - eps_0 * eps_0).sqrt() + 1.0 - (1.0 - eps_i * eps_i).sqrt() + eps_i < 1.0 - 2.0 * eps_i * eps_i
}

impl PpmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.power_iterations == 0 {
            return Err(CentaurError::param("need at least one power iteration"));
        }
        if self.trials == 0 {
            return Err(CentaurError::param("need at least one initialization trial"));
        }
        if self.mbar0 == 0 {
            return Err(CentaurError::param("initializer batch size must be positive"));
        }
        if !(self.eps_i > 0.0 && self.eps_i < 1.0) {
            return Err(CentaurError::param(format!("eps_i must lie in (0, 1), got {}", self.eps_i)));
        }
        if !(self.eps_0 > 0.0 && self.eps_0 < 1.0) {
            return Err(CentaurError::param(format!("eps_0 must lie in (0, 1), got {}", self.eps_0)));
        }
        if !accuracy_pair_is_valid(self.eps_i, self.eps_0) {
            return Err(CentaurError::param(format!(
                "eps_i = {} is too coarse to certify eps_0 = {}",
                self.eps_i, self.eps_0
            )));
        }
        Ok(())
    }
}

/// Power-iteration count `c_L (s_k² + Σ s_j²) / s_k² · log(k d / eps_i)`,
/// rounded up.
pub fn power_iterations_recipe(truth: &GroundTruth, eps_i: f64, c_l: f64) -> Result<usize> {
    if !(c_l > 0.0) || !(eps_i > 0.0 && eps_i < 1.0) {
        return Err(CentaurError::param("need c_L > 0 and eps_i in (0, 1)"));
    }
    let s_k2 = truth.s_k() * truth.s_k();
    let total: f64 = truth.singular_values.iter().map(|s| s * s).sum();
    let l = c_l * (s_k2 + total) / s_k2 * ((truth.k() * truth.d()) as f64 / eps_i).ln();
    Ok(l.ceil().max(1.0) as usize)
}

/// `(1/|S|) Σ_j y_j² x_j (x_j^T X)` without forming the `d x d` moment.
pub fn local_second_moment(data: &ClientDataset, idx: &[usize], x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if idx.is_empty() {
        return Err(CentaurError::param("empty batch"));
    }
    if x.nrows() != data.dim() {
        return Err(CentaurError::param("iterate and inputs disagree on dimension"));
    }
    let batch = data.inputs.select_columns(idx);
    let mut proj = batch.tr_mul(x);
    for (row, &j) in idx.iter().enumerate() {
        let y2 = data.responses[j] * data.responses[j];
        proj.row_mut(row).scale_mut(y2);
    }
    Ok(batch * proj / idx.len() as f64)
}

/// `A = 2Γ + tr(Γ) I` with `Γ = B* V*^T V* B*^T` and `V* = W*/sqrt(n)`.
/// Its top-k eigenspace is the column space of `B*`.
pub fn target_matrix(truth: &GroundTruth) -> DMatrix<f64> {
    let v = &truth.w_star / (truth.n() as f64).sqrt();
    let b = truth.b_star.matrix();
    let gamma = b * (v.transpose() * &v) * b.transpose();
    let tr = gamma.trace();
    let d = truth.d();
    gamma * 2.0 + DMatrix::<f64>::identity(d, d) * tr
}

/// One private power-method trial driven by `stream`.
///
/// `X⁰` comes from the stream, then every iteration draws one child stream
/// per client (in client order) for its mini-batch, and finally the
/// mechanism noise, again from `stream`.
pub fn ppm_trial(problem: &FrlProblem, cfg: &PpmConfig, stream: &mut Stream) -> Result<OrthonormalBasis> {
    cfg.validate()?;
    let truth = &problem.truth;
    let (d, k, n) = (truth.d(), truth.k(), problem.clients.len());
    if cfg.moments == MomentSource::Sampled && problem.clients.iter().any(|c| c.len() < cfg.mbar0) {
        return Err(CentaurError::param(format!(
            "initializer batch {} exceeds the local sample size",
            cfg.mbar0
        )));
    }
    let target = (cfg.moments == MomentSource::Exact).then(|| target_matrix(truth));
    let mut x = OrthonormalBasis::from_qr(&linalg::gaussian_matrix(d, k, stream))?;
    for l in 0..cfg.power_iterations {
        let children: Vec<Stream> = (0..n).map(|_| child_stream(stream)).collect();
        let inputs: Vec<DMatrix<f64>> = match &target {
            Some(a) => {
                let ax = a * x.matrix();
                vec![ax; n]
            }
            None => children
                .into_par_iter()
                .enumerate()
                .map(|(i, mut rng)| {
                    let data = &problem.clients[i];
                    let idx = sample_subset(data.len(), cfg.mbar0, &mut rng)?;
                    local_second_moment(data, &idx, x.matrix())
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let released = gaussian_mechanism(&inputs, &cfg.gm, stream)?;
        x = OrthonormalBasis::from_qr(&released.value)
            .map_err(|e| CentaurError::numeric(format!("power iteration {}: {e}", l + 1)))?;
    }
    Ok(x)
}

/// Smallest index `ĉ` such that at least `⌈T_0/2⌉` candidates `c` (itself
/// included) satisfy `s_min(B_c^T B_ĉ) >= 1 - 2 eps_i²`.
pub fn cross_validate_select(candidates: &[OrthonormalBasis], eps_i: f64) -> Result<usize> {
    let first = candidates
        .first()
        .ok_or_else(|| CentaurError::param("no candidates to select from"))?;
    if candidates.iter().any(|c| c.dims() != first.dims()) {
        return Err(CentaurError::param("candidates differ in shape"));
    }
    let t0 = candidates.len();
    let quorum = t0.div_ceil(2);
    let level = 1.0 - 2.0 * eps_i * eps_i;
    for (hat, b_hat) in candidates.iter().enumerate() {
        let mut votes = 0;
        for b_c in candidates {
            if min_singular_overlap(b_c, b_hat)? >= level {
                votes += 1;
            }
        }
        if votes >= quorum {
            return Ok(hat);
        }
    }
    Err(CentaurError::Selection(format!(
        "no candidate agrees with {quorum} of {t0} at overlap level {level}"
    )))
}

/// Result of [`initialize`].
#[derive(Debug, Clone, PartialEq)]
pub struct InitOutcome {
    pub basis: OrthonormalBasis,
    pub selected: usize,
    pub candidates: Vec<OrthonormalBasis>,
    /// Spend charged to the ledger; `None` when nothing was charged.
    pub charged: Option<RdpCurve>,
}

/// `T_0` independent trials (trial `c` uses the `init_trial` stream `(c, 0)`
/// of `seed`) followed by the cross-validation vote. A private initializer
/// charges `T_0 L` releases to the ledger; the vote is free.
pub fn initialize(
    problem: &FrlProblem,
    cfg: &PpmConfig,
    seed: u64,
    ledger: Option<&mut PrivacyLedger>,
) -> Result<InitOutcome> {
    cfg.validate()?;
    let charged = match (cfg.gm.is_private(), ledger) {
        (true, Some(l)) => {
            let curve = init_rdp_curve(
                l.alphas().to_vec(),
                cfg.trials as u64,
                cfg.power_iterations as u64,
                cfg.gm.noise_multiplier(),
                l.adjacency(),
            )?;
            l.charge_init(&curve)?;
            Some(curve)
        }
        (true, None) => return Err(CentaurError::param("a private initializer needs a privacy ledger")),
        (false, Some(_)) => {
            return Err(CentaurError::param(
                "refusing to account an initializer without noise; drop the ledger",
            ))
        }
        (false, None) => None,
    };
    let candidates = (0..cfg.trials)
        .into_par_iter()
        .map(|c| {
            let mut stream = derive_stream(seed, Domain::InitTrial, c as u64, 0);
            ppm_trial(problem, cfg, &mut stream)
        })
        .collect::<Result<Vec<_>>>()?;
    let selected = cross_validate_select(&candidates, cfg.eps_i)?;
    Ok(InitOutcome {
        basis: candidates[selected].clone(),
        selected,
        candidates,
        charged,
    })
}

/// `B*` with one random column tilted by `arcsin(eps_0)` towards a random
/// direction orthogonal to `B*`; the result lies at distance exactly `eps_0`.
pub fn spectral_oracle_init<R: Rng + ?Sized>(truth: &GroundTruth, eps_0: f64, rng: &mut R) -> Result<OrthonormalBasis> {
    if !(0.0..1.0).contains(&eps_0) {
        return Err(CentaurError::param(format!("eps_0 must lie in [0, 1), got {eps_0}")));
    }
    let b = truth.b_star.matrix();
    let (d, k) = (truth.d(), truth.k());
    if eps_0 == 0.0 {
        return Ok(truth.b_star.clone());
    }
    if d == k {
        return Err(CentaurError::param("B* spans the whole space; nothing to tilt towards"));
    }
    let column = rng.random_range(0..k);
    let mut u = linalg::gaussian_vector(d, rng);
    // Two projection passes keep u orthogonal to B* to working precision.
    for _ in 0..2 {
        let coeffs = b.tr_mul(&u);
        u -= b * coeffs;
    }
    let norm = u.norm();
    if norm == 0.0 {
        return Err(CentaurError::numeric("degenerate complement direction"));
    }
    u /= norm;
    let cos = (1.0 - eps_0 * eps_0).sqrt();
    let mut out = b.clone();
    let tilted = b.column(column) * cos + u * eps_0;
    out.set_column(column, &tilted);
    OrthonormalBasis::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn accuracy_pair_examples() {
        assert!(accuracy_pair_is_valid(0.01, 0.2));
        assert!(!accuracy_pair_is_valid(0.2, 0.2));
    }

    #[test]
    fn zero_targets_give_zero_moment() {
        let data = ClientDataset::new(
            DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 3.0, -1.0, 0.0, 2.0]),
            DVector::zeros(2),
        )
        .unwrap();
        let x = DMatrix::identity(3, 1);
        assert_eq!(local_second_moment(&data, &[0, 1], &x).unwrap(), DMatrix::zeros(3, 1));
    }

    #[test]
    fn hand_evaluated_moment() {
        let data = ClientDataset::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), DVector::from_element(1, 2.0))
            .unwrap();
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let y = local_second_moment(&data, &[0], &x).unwrap();
        assert_eq!(y, DMatrix::from_column_slice(2, 1, &[4.0, 0.0]));
    }

    #[test]
    fn config_validation() {
        let gm = GaussianMechanismParams::non_private();
        let good = PpmConfig {
            power_iterations: 5,
            gm,
            mbar0: 4,
            trials: 3,
            eps_i: 0.01,
            eps_0: 0.2,
            moments: MomentSource::Sampled,
        };
        assert!(good.validate().is_ok());
        assert!(PpmConfig { power_iterations: 0, ..good }.validate().is_err());
        assert!(PpmConfig { trials: 0, ..good }.validate().is_err());
        assert!(PpmConfig { eps_i: 0.3, ..good }.validate().is_err());
    }
}
