//! The server loop: Poisson client sampling, Gaussian-mechanism aggregation
//! of client updates and the representation step.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accountant::{round_curve, PrivacyLedger, RdpCurve};
use crate::client::{general_client_round, lrl_client_round_dense, ClientUpdate, LinearModel, LocalSteps};
use crate::error::{CentaurError, Result};
use crate::linalg;
use crate::mechanisms::{gaussian_mechanism, poisson_sample_clients, GaussianMechanismParams};
use crate::metrics::{self, principal_angle_dist, OrthonormalBasis};
use crate::stream::{derive_seed, derive_stream, Domain};
use crate::synthetic::{FrlProblem, GroundTruth};

/// How the server applies the released direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// `b + η g`.
    Additive,
    /// Q-factor of `B - η G`.
    #[default]
    QrRetraction,
}

/// `b + η g`.
pub fn aggregate_additive(b: &DMatrix<f64>, g: &DMatrix<f64>, eta_g: f64) -> Result<DMatrix<f64>> {
    if b.shape() != g.shape() {
        return Err(CentaurError::input(format!(
            "update shape {:?} does not match parameter shape {:?}",
            g.shape(),
            b.shape()
        )));
    }
    Ok(b + g * eta_g)
}

/// Q-factor of `B - η G` with a positive `R` diagonal.
pub fn aggregate_qr(b: &OrthonormalBasis, g: &DMatrix<f64>, eta_g: f64) -> Result<OrthonormalBasis> {
    if b.matrix().shape() != g.shape() {
        return Err(CentaurError::input(format!(
            "update shape {:?} does not match basis shape {:?}",
            g.shape(),
            b.dims()
        )));
    }
    if eta_g == 0.0 || g.iter().all(|v| *v == 0.0) {
        // The thin QR of an orthonormal matrix with positive R diagonal is
        // the matrix itself; skip the rounding of a refactorization.
        return Ok(b.clone());
    }
    OrthonormalBasis::from_qr(&(b.matrix() - g * eta_g))
}

/// Which client procedure runs each round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClientMode {
    /// Head solve on one batch, representation gradient on a disjoint one.
    Lrl,
    /// Local steps on the linear model; the payload is the local drift.
    General(LocalSteps),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientParams {
    pub mbar: usize,
    pub mode: ClientMode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerConfig {
    pub p_g: f64,
    pub rounds: u64,
    pub eta_g: f64,
    pub gm: GaussianMechanismParams,
    pub aggregation: Aggregation,
    /// Run the clients of a round on the rayon pool.
    pub parallel_clients: bool,
}

impl ServerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_g) {
            return Err(CentaurError::param(format!("p_g must lie in [0, 1], got {}", self.p_g)));
        }
        if !(self.eta_g > 0.0 && self.eta_g.is_finite()) {
            return Err(CentaurError::param(format!("eta_g must be positive, got {}", self.eta_g)));
        }
        Ok(())
    }
}

/// Telemetry of one server round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: u64,
    pub active_clients: usize,
    pub clip_count: usize,
    /// Distance of the post-update state to `B*`.
    pub dist_to_truth: f64,
    /// Frobenius norm of the released direction (0 for an empty round).
    pub grad_norm: f64,
    /// Cumulative (ε, δ)-DP spend after this round, initializer included.
    pub eps_dp_cum: Option<f64>,
    /// Pre-clipping norms of the active clients' payloads, in client order.
    pub pre_clip_norms: Vec<f64>,
    /// Norms of the heads fitted this round, in client order.
    pub head_norms: Vec<f64>,
}

/// Everything a run of the server loop produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub rounds: Vec<RoundRecord>,
    pub initial_dist: f64,
    pub final_state: DMatrix<f64>,
    pub final_dist: f64,
    /// RDP charged per round; `None` for non-private runs.
    pub round_curve: Option<RdpCurve>,
}

impl RunTrace {
    /// `dist` before the first round followed by the per-round values.
    pub fn dist_path(&self) -> Vec<f64> {
        std::iter::once(self.initial_dist)
            .chain(self.rounds.iter().map(|r| r.dist_to_truth))
            .collect()
    }

    pub fn clip_rate(&self) -> f64 {
        let active: usize = self.rounds.iter().map(|r| r.active_clients).sum();
        let clipped: usize = self.rounds.iter().map(|r| r.clip_count).sum();
        if active == 0 {
            0.0
        } else {
            clipped as f64 / active as f64
        }
    }
}

/// Distance from the column space of a parameter matrix to `B*`. Retracted
/// states are measured as they are; additive ones are orthonormalized first.
fn state_dist(state: &DMatrix<f64>, truth: &GroundTruth, aggregation: Aggregation) -> Result<f64> {
    let q = match aggregation {
        Aggregation::QrRetraction => OrthonormalBasis::new(state.clone())?,
        Aggregation::Additive => OrthonormalBasis::new(linalg::thin_q(state)?)?,
    };
    principal_angle_dist(&q, &truth.b_star)
}

/// Run `T_g` rounds from `b0`, with streams keyed by `seed`.
///
/// A private mechanism (σ > 0) needs a ledger and a non-private one must not
/// have one. Every round is charged, including rounds whose Poisson sample
/// came out empty; those leave the state unchanged.
pub fn run_centaur(
    problem: &FrlProblem,
    server: &ServerConfig,
    client: &ClientParams,
    b0: &OrthonormalBasis,
    mut ledger: Option<&mut PrivacyLedger>,
    seed: u64,
) -> Result<RunTrace> {
    server.validate()?;
    let truth = &problem.truth;
    if b0.dims() != truth.b_star.dims() {
        return Err(CentaurError::param(format!(
            "initial basis is {:?}, problem needs {:?}",
            b0.dims(),
            truth.b_star.dims()
        )));
    }
    let round_cost = match (server.gm.is_private(), ledger.as_deref()) {
        (true, Some(l)) => Some(round_curve(
            l.alphas().to_vec(),
            server.p_g,
            server.gm.noise_multiplier(),
            l.adjacency(),
        )?),
        (true, None) => return Err(CentaurError::param("a private run needs a privacy ledger")),
        (false, Some(_)) => {
            return Err(CentaurError::param(
                "refusing to account a run without noise; drop the ledger",
            ))
        }
        (false, None) => None,
    };
    let n = truth.n();
    let mut state = b0.matrix().clone();
    let initial_dist = principal_angle_dist(b0, &truth.b_star)?;
    let mut dist_to_truth = initial_dist;
    let mut records = Vec::with_capacity(server.rounds as usize);

    for t in 0..server.rounds {
        let mut sampling = derive_stream(seed, Domain::Sampling, t, 0);
        let active = poisson_sample_clients(n, server.p_g, &mut sampling)?;

        let run_one = |&i: &usize| -> Result<(ClientUpdate, f64)> {
            let mut rng = derive_stream(seed, Domain::ClientRound, t, i as u64);
            let data = &problem.clients[i];
            match client.mode {
                ClientMode::Lrl => {
                    let (u, head) = lrl_client_round_dense(&state, data, client.mbar, i, t, &mut rng)?;
                    Ok((u, head.norm()))
                }
                ClientMode::General(steps) => {
                    let (u, w) = general_client_round(
                        &state,
                        &LinearModel,
                        data,
                        client.mbar,
                        &steps,
                        i,
                        t,
                        &mut rng,
                    )?;
                    Ok((u, w.norm()))
                }
            }
        };
        let results: Vec<Result<(ClientUpdate, f64)>> = if server.parallel_clients {
            active.par_iter().map(run_one).collect()
        } else {
            active.iter().map(run_one).collect()
        };
        let mut payloads = Vec::with_capacity(active.len());
        let mut pre_clip_norms = Vec::with_capacity(active.len());
        let mut head_norms = Vec::with_capacity(active.len());
        for r in results {
            let (u, head_norm) = r?;
            pre_clip_norms.push(u.pre_clip_norm);
            head_norms.push(head_norm);
            payloads.push(u.payload);
        }

        let (clip_count, grad_norm) = if payloads.is_empty() {
            (0, 0.0)
        } else {
            let mut noise = derive_stream(seed, Domain::MechanismNoise, t, 0);
            let released = gaussian_mechanism(&payloads, &server.gm, &mut noise)?;
            // Gradients are followed downhill, local drifts are followed as is.
            let descent = match client.mode {
                ClientMode::Lrl => released.value.clone(),
                ClientMode::General(_) => -&released.value,
            };
            state = match server.aggregation {
                Aggregation::Additive => aggregate_additive(&state, &(-&descent), server.eta_g)?,
                Aggregation::QrRetraction => {
                    let b = OrthonormalBasis::new(state)?;
                    aggregate_qr(&b, &descent, server.eta_g)
                        .map_err(|e| CentaurError::numeric(format!("round {t}: {e}")))?
                        .into_matrix()
                }
            };
            if state.iter().any(|v| !v.is_finite()) {
                return Err(CentaurError::numeric(format!("round {t}: state became non-finite")));
            }
            dist_to_truth = state_dist(&state, truth, server.aggregation)
                .map_err(|e| CentaurError::numeric(format!("round {t}: {e}")))?;
            (released.clip_count, released.value.norm())
        };

        let eps_dp_cum = match (&round_cost, ledger.as_deref_mut()) {
            (Some(cost), Some(l)) => {
                l.record_round(cost)?;
                Some(l.dp().epsilon)
            }
            _ => None,
        };
        records.push(RoundRecord {
            round: t,
            active_clients: active.len(),
            clip_count,
            dist_to_truth,
            grad_norm,
            eps_dp_cum,
            pre_clip_norms,
            head_norms,
        });
    }

    let final_dist = records.last().map_or(initial_dist, |r| r.dist_to_truth);
    Ok(RunTrace {
        rounds: records,
        initial_dist,
        final_state: state,
        final_dist,
        round_curve: round_cost,
    })
}

/// Universal constants of the step-size and clipping recipe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecipeConstants {
    pub c_zeta: f64,
    pub c_t: f64,
}

impl Default for RecipeConstants {
    fn default() -> Self {
        Self { c_zeta: 1.0, c_t: 1.0 }
    }
}

/// Clipping threshold, step size and round count suggested by the utility
/// analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub zeta_g: f64,
    pub eta_g: f64,
    /// `None` without noise: the error then keeps contracting.
    pub rounds: Option<u64>,
}

/// `ζ_g = c_ζ μ² k s_k² sqrt(d k log n)`, `η_g = 1/(4 s_1²)` and
/// `T_g = c_T κ² log(n / (κ η_g ζ_g σ_g d))`, floored at one round.
///
/// The round count is the number of contractions needed to shrink the
/// initial error to the noise floor `κ η ζ σ d / n`, hence the ratio inside
/// the logarithm is taken floor-over-error.
pub fn theorem_recipe(truth: &GroundTruth, sigma_g: f64, constants: &RecipeConstants) -> Result<Recipe> {
    if !(constants.c_zeta > 0.0 && constants.c_t > 0.0) {
        return Err(CentaurError::param("recipe constants must be positive"));
    }
    if !(sigma_g >= 0.0 && sigma_g.is_finite()) {
        return Err(CentaurError::param(format!("sigma_g must be finite and >= 0, got {sigma_g}")));
    }
    let (d, k, n) = (truth.d() as f64, truth.k() as f64, truth.n() as f64);
    let s_k = truth.s_k();
    let s_1 = truth.s_1();
    let kappa = s_1 / s_k;
    let zeta_g = constants.c_zeta * truth.mu * truth.mu * k * s_k * s_k * (d * k * n.ln()).sqrt();
    let eta_g = 1.0 / (4.0 * s_1 * s_1);
    let rounds = (sigma_g > 0.0).then(|| {
        let floor = kappa * eta_g * zeta_g * sigma_g * d / n;
        let t = constants.c_t * kappa * kappa * (1.0 / floor).ln();
        if t.is_finite() && t > 1.0 {
            t.ceil() as u64
        } else {
            1
        }
    });
    Ok(Recipe { zeta_g, eta_g, rounds })
}

/// Pre-clipping norms of LRL client gradients at a fixed basis: every client
/// runs `repeats` independent rounds. Streams are keyed off `seed` under a
/// label of their own.
pub fn gradient_norm_sample(
    problem: &FrlProblem,
    basis: &OrthonormalBasis,
    mbar: usize,
    repeats: u64,
    seed: u64,
) -> Result<Vec<f64>> {
    let pilot = derive_seed(seed, "gradient-norm-pilot", 0);
    let jobs: Vec<(u64, usize)> = (0..repeats)
        .flat_map(|r| (0..problem.truth.n()).map(move |i| (r, i)))
        .collect();
    jobs.par_iter()
        .map(|&(r, i)| {
            let mut rng = derive_stream(pilot, Domain::ClientRound, r, i as u64);
            let (u, _) = lrl_client_round_dense(basis.matrix(), &problem.clients[i], mbar, i, r, &mut rng)?;
            Ok(u.pre_clip_norm)
        })
        .collect()
}

/// Empirical `q`-quantile of [`gradient_norm_sample`].
pub fn gradient_norm_quantile(
    problem: &FrlProblem,
    basis: &OrthonormalBasis,
    mbar: usize,
    repeats: u64,
    q: f64,
    seed: u64,
) -> Result<f64> {
    metrics::quantile(&gradient_norm_sample(problem, basis, mbar, repeats, seed)?, q)
}
