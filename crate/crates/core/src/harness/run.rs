//! Experiment orchestration: trials, sweeps and constant calibration.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use super::config::{
    set_field, AutoOr, ClientModeName, ExperimentConfig, InitMode, ZetaKeyword, ZetaSpec,
};
use crate::accountant::{calibrate_sigma, default_alpha_grid, PrivacyLedger};
use crate::client::LocalSteps;
use crate::error::{CentaurError, Result};
use crate::mechanisms::GaussianMechanismParams;
use crate::metrics::{median, quantile, OrthonormalBasis};
use crate::ppm::{initialize, power_iterations_recipe, spectral_oracle_init, MomentSource, PpmConfig};
use crate::server::{
    gradient_norm_sample, run_centaur, theorem_recipe, ClientMode, ClientParams, RecipeConstants,
    RoundRecord, ServerConfig,
};
use crate::stream::{derive_seed, derive_stream, Domain};
use crate::synthetic::{gen_problem, FrlProblem};

/// Round count of the `c_T` pilot when `T_g` is `"auto"`.
pub const PILOT_ROUNDS: u64 = 600;
/// Trailing window over which a pilot plateau is measured.
pub const PLATEAU_WINDOW: usize = 50;
/// A pilot has converged once `dist` is within this factor of its plateau.
pub const PLATEAU_SLACK: f64 = 1.1;

/// Values derived from the configuration and the generated problem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub eta_g: f64,
    /// `None` means no clipping.
    pub zeta_g: Option<f64>,
    pub sigma_g: f64,
    #[serde(rename = "T_g")]
    pub rounds: u64,
    /// Power iterations of the initializer, when it runs.
    #[serde(rename = "L")]
    pub power_iterations: Option<usize>,
    pub mbar0: Option<usize>,
    pub s_1: f64,
    pub s_k: f64,
    pub realized_mu: f64,
}

/// Output of one trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialTrace {
    pub trial: usize,
    pub seed: u64,
    #[serde(skip)]
    pub rounds: Vec<RoundRecord>,
    pub initial_dist: f64,
    pub final_dist: f64,
    /// `f64::INFINITY` for a non-private run.
    #[serde(serialize_with = "serialize_eps")]
    pub eps_dp_final: f64,
    pub wall_ms: u64,
    pub config_hash: String,
    pub resolved: Resolved,
    /// Index of the initializer candidate chosen by the vote.
    pub init_selected: Option<usize>,
}

fn serialize_eps<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("inf")
    }
}

impl TrialTrace {
    /// Median `dist` over the last `window` rounds.
    pub fn plateau(&self, window: usize) -> Result<f64> {
        let start = self.rounds.len().saturating_sub(window);
        let tail: Vec<f64> = self.rounds[start..].iter().map(|r| r.dist_to_truth).collect();
        median(&tail)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialTrace>,
}

/// Seed of the `trial`-th repetition. It keys both the problem and every
/// stream of the run.
pub fn trial_seed(cfg: &ExperimentConfig, trial: usize) -> u64 {
    derive_seed(cfg.problem.seed, "trial", trial as u64)
}

pub fn trial_problem(cfg: &ExperimentConfig, trial: usize) -> Result<FrlProblem> {
    let p = &cfg.problem;
    gen_problem(p.d, p.k, p.n, p.m, p.kappa, p.mu, trial_seed(cfg, trial))
}

fn recipe_constants(cfg: &ExperimentConfig) -> RecipeConstants {
    RecipeConstants {
        c_zeta: cfg.constants.c_zeta,
        c_t: cfg.constants.c_t,
    }
}

/// Pre-clipping LRL gradient norms at `bases` spectral-oracle bases at
/// distance `eps0` from `B*`, `repeats` rounds per client each.
pub fn pilot_gradient_norms(
    problem: &FrlProblem,
    mbar: usize,
    eps0: f64,
    bases: u64,
    repeats: u64,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut pooled = Vec::new();
    for b in 0..bases {
        let mut rng = derive_stream(seed, Domain::InitTrial, b, 2);
        let basis = spectral_oracle_init(&problem.truth, eps0, &mut rng)?;
        pooled.extend(gradient_norm_sample(
            problem,
            &basis,
            mbar,
            repeats,
            derive_seed(seed, "zeta-pilot", b),
        )?);
    }
    Ok(pooled)
}

fn resolve(cfg: &ExperimentConfig, problem: &FrlProblem, seed: u64) -> Result<Resolved> {
    let truth = &problem.truth;
    let s = &cfg.server;
    let sigma_g = match (s.sigma_g, s.eps_dp_target) {
        (Some(sigma), _) => sigma,
        (None, Some(eps)) => {
            let rounds = *s.rounds.value().expect("validated: fixed T_g");
            calibrate_sigma(eps, rounds, s.delta)?
        }
        (None, None) => 0.0,
    };
    let recipe = theorem_recipe(truth, sigma_g, &recipe_constants(cfg))?;
    let eta_g = match s.eta_g {
        AutoOr::Value(v) => v,
        AutoOr::Auto(_) => recipe.eta_g,
    };
    let rounds = match s.rounds {
        AutoOr::Value(v) => v,
        AutoOr::Auto(_) => recipe.rounds.expect("validated: auto T_g has noise"),
    };
    let zeta_g = match s.zeta_g {
        ZetaSpec::Value(z) => Some(z),
        ZetaSpec::Keyword(ZetaKeyword::Auto) => Some(recipe.zeta_g),
        ZetaSpec::Keyword(ZetaKeyword::Inf) => None,
        ZetaSpec::Keyword(ZetaKeyword::Quantile) => {
            let k = &cfg.constants;
            let norms = pilot_gradient_norms(
                problem,
                cfg.client.mbar,
                cfg.init.eps0,
                k.pilot_bases,
                k.pilot_repeats,
                seed,
            )?;
            let z = quantile(&norms, k.zeta_quantile)?;
            if !(z > 0.0) {
                return Err(CentaurError::numeric("gradient-norm pilot returned a zero threshold"));
            }
            Some(z)
        }
    };
    let (power_iterations, mbar0) = if cfg.init.mode == InitMode::Ppm {
        let l = match cfg.init.power_iterations {
            AutoOr::Value(l) => l,
            AutoOr::Auto(_) => power_iterations_recipe(truth, cfg.init.eps_i, cfg.constants.c_l)?,
        };
        (Some(l), Some(cfg.init.mbar0.unwrap_or(cfg.problem.m)))
    } else {
        (None, None)
    };
    Ok(Resolved {
        eta_g,
        zeta_g,
        sigma_g,
        rounds,
        power_iterations,
        mbar0,
        s_1: truth.s_1(),
        s_k: truth.s_k(),
        realized_mu: truth.realized_mu(),
    })
}

fn client_params(cfg: &ExperimentConfig) -> Result<ClientParams> {
    let c = &cfg.client;
    let mode = match c.mode {
        ClientModeName::Lrl => ClientMode::Lrl,
        ClientModeName::General => {
            ClientMode::General(LocalSteps::new(c.local_steps, c.eta_l, c.head_epochs, c.head_step)?)
        }
    };
    Ok(ClientParams { mbar: c.mbar, mode })
}

fn main_mechanism(res: &Resolved) -> Result<GaussianMechanismParams> {
    GaussianMechanismParams::new(res.zeta_g.unwrap_or(f64::INFINITY), res.sigma_g)
}

/// Run one trial of `cfg`.
pub fn run_trial(cfg: &ExperimentConfig, trial: usize) -> Result<TrialTrace> {
    let start = Instant::now();
    let seed = trial_seed(cfg, trial);
    let problem = trial_problem(cfg, trial)?;
    let res = resolve(cfg, &problem, seed)?;
    let mut ledger = if cfg.is_private() {
        Some(PrivacyLedger::new(default_alpha_grid(), cfg.server.delta, cfg.server.adjacency)?)
    } else {
        None
    };

    let i = &cfg.init;
    let (b0, init_selected) = match i.mode {
        InitMode::SpectralOracle => {
            let mut rng = derive_stream(seed, Domain::InitTrial, 0, 1);
            (spectral_oracle_init(&problem.truth, i.eps0, &mut rng)?, None)
        }
        InitMode::Random => {
            let mut rng = derive_stream(seed, Domain::InitTrial, 0, 1);
            (OrthonormalBasis::random(cfg.problem.d, cfg.problem.k, &mut rng)?, None)
        }
        InitMode::Ppm => {
            let ppm = PpmConfig {
                power_iterations: res.power_iterations.expect("resolved for ppm"),
                gm: GaussianMechanismParams::new(i.zeta0.unwrap_or(f64::INFINITY), i.sigma0)?,
                mbar0: res.mbar0.expect("resolved for ppm"),
                trials: i.trials,
                eps_i: i.eps_i,
                eps_0: i.eps0,
                moments: MomentSource::Sampled,
            };
            let private = ppm.gm.is_private();
            let out = initialize(&problem, &ppm, seed, ledger.as_mut().filter(|_| private))?;
            (out.basis, Some(out.selected))
        }
    };

    let server = ServerConfig {
        p_g: cfg.server.p_g,
        rounds: res.rounds,
        eta_g: res.eta_g,
        gm: main_mechanism(&res)?,
        aggregation: cfg.server.aggregation,
        parallel_clients: true,
    };
    let trace = run_centaur(&problem, &server, &client_params(cfg)?, &b0, ledger.as_mut(), seed)?;
    let eps_dp_final = ledger.as_ref().map_or(f64::INFINITY, |l| l.dp().epsilon);
    Ok(TrialTrace {
        trial,
        seed,
        rounds: trace.rounds,
        initial_dist: trace.initial_dist,
        final_dist: trace.final_dist,
        eps_dp_final,
        wall_ms: start.elapsed().as_millis() as u64,
        config_hash: cfg.hash(),
        resolved: res,
        init_selected,
    })
}

/// Run every trial of `cfg` on the rayon pool; output is in trial order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let trials = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentOutput {
        config: cfg.clone(),
        trials,
    })
}

/// A swept field and the values it takes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    pub field: String,
    pub values: Vec<Value>,
}

impl SweepSpec {
    /// Parse `field=V1,V2,...`; values are read as JSON, falling back to
    /// plain strings.
    pub fn parse(arg: &str) -> Result<Self> {
        let (field, list) = arg
            .split_once('=')
            .ok_or_else(|| CentaurError::config("--sweep", "expected field=V1,V2,..."))?;
        let field = field.trim();
        if field.is_empty() {
            return Err(CentaurError::config("--sweep", "empty field path"));
        }
        let values = list
            .split(',')
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(|v| serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string())))
            .collect();
        Ok(Self {
            field: field.to_string(),
            values,
        })
    }
}

/// One cell of a sweep. Statistics are over trials; a failed cell carries
/// its error and NaN statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub swept_value: Value,
    pub median_final_dist: f64,
    pub q25: f64,
    pub q75: f64,
    #[serde(serialize_with = "serialize_eps")]
    pub eps_dp: f64,
    pub sigma_g: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub field: String,
    pub rows: Vec<SweepRow>,
}

fn sweep_cell(cfg: &ExperimentConfig, field: &str, value: &Value) -> Result<SweepRow> {
    let mut raw = set_field(cfg, field, value.clone())?;
    let cell = ExperimentConfig::from_value(&mut raw)?;
    let out = run_experiment(&cell)?;
    let finals: Vec<f64> = out.trials.iter().map(|t| t.final_dist).collect();
    let eps: Vec<f64> = out.trials.iter().map(|t| t.eps_dp_final).collect();
    let sigmas: Vec<f64> = out.trials.iter().map(|t| t.resolved.sigma_g).collect();
    Ok(SweepRow {
        swept_value: value.clone(),
        median_final_dist: median(&finals)?,
        q25: quantile(&finals, 0.25)?,
        q75: quantile(&finals, 0.75)?,
        eps_dp: median(&eps)?,
        sigma_g: median(&sigmas)?,
        error: None,
    })
}

/// One experiment per value. The field must exist in `cfg`; cell failures
/// are recorded in their row and the sweep continues.
pub fn run_sweep(cfg: &ExperimentConfig, sweep: &SweepSpec) -> Result<SweepTable> {
    set_field(cfg, &sweep.field, Value::Null)?;
    let rows = sweep
        .values
        .iter()
        .map(|v| {
            sweep_cell(cfg, &sweep.field, v).unwrap_or_else(|e| SweepRow {
                swept_value: v.clone(),
                median_final_dist: f64::NAN,
                q25: f64::NAN,
                q75: f64::NAN,
                eps_dp: f64::NAN,
                sigma_g: f64::NAN,
                error: Some(e.to_string()),
            })
        })
        .collect();
    Ok(SweepTable {
        field: sweep.field.clone(),
        rows,
    })
}

/// Constants measured by [`calibrate_constants`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub c_zeta: f64,
    #[serde(rename = "c_T")]
    pub c_t: f64,
    /// Pooled gradient-norm quantile behind `c_zeta`.
    pub gradient_norm_quantile: f64,
    pub pilot_samples: usize,
    pub pilot_rounds: u64,
    pub pilot_plateau: f64,
    /// First pilot round within the plateau slack.
    pub t_star: u64,
    /// `κ η ζ σ d / n` of the pilot.
    pub predicted_floor: f64,
}

/// `c_ζ` from a gradient-norm pilot near `B*` and `c_T` from a long private
/// pilot run started at distance `eps0`: the smallest constant whose recipe
/// round count reaches the pilot's plateau within 10%.
pub fn calibrate_constants(cfg: &ExperimentConfig) -> Result<Calibration> {
    cfg.validate()?;
    if cfg.client.mode != ClientModeName::Lrl {
        return Err(CentaurError::config("client.mode", "calibration pilots use the lrl client"));
    }
    let seed = trial_seed(cfg, 0);
    let problem = trial_problem(cfg, 0)?;
    let truth = &problem.truth;
    let k = &cfg.constants;
    let norms = pilot_gradient_norms(&problem, cfg.client.mbar, cfg.init.eps0, k.pilot_bases, k.pilot_repeats, seed)?;
    let q = quantile(&norms, k.zeta_quantile)?;
    let (d, kk, n) = (truth.d() as f64, truth.k() as f64, truth.n() as f64);
    let scale = truth.mu * truth.mu * kk * truth.s_k() * truth.s_k() * (d * kk * n.ln()).sqrt();
    let c_zeta = q / scale;
    if !(c_zeta > 0.0 && c_zeta.is_finite()) {
        return Err(CentaurError::numeric(format!("degenerate c_zeta = {c_zeta}")));
    }

    let mut pilot_cfg = cfg.clone();
    pilot_cfg.constants.c_zeta = c_zeta;
    if !pilot_cfg.is_private() {
        return Err(CentaurError::config("server.sigma_g", "the c_T pilot needs noise"));
    }
    let pilot_rounds = match cfg.server.rounds {
        AutoOr::Value(t) => t,
        AutoOr::Auto(_) => PILOT_ROUNDS,
    };
    pilot_cfg.server.rounds = AutoOr::Value(pilot_rounds);
    let mut res = resolve(&pilot_cfg, &problem, seed)?;
    res.rounds = pilot_rounds;
    let window = PLATEAU_WINDOW.min(pilot_rounds as usize / 4);
    if window == 0 {
        return Err(CentaurError::config("server.T_g", "pilot too short to measure a plateau"));
    }
    let mut ledger = PrivacyLedger::new(default_alpha_grid(), cfg.server.delta, cfg.server.adjacency)?;
    let mut rng = derive_stream(seed, Domain::InitTrial, 0, 1);
    let b0 = spectral_oracle_init(truth, cfg.init.eps0, &mut rng)?;
    let server = ServerConfig {
        p_g: cfg.server.p_g,
        rounds: pilot_rounds,
        eta_g: res.eta_g,
        gm: main_mechanism(&res)?,
        aggregation: cfg.server.aggregation,
        parallel_clients: true,
    };
    let trace = run_centaur(&problem, &server, &client_params(cfg)?, &b0, Some(&mut ledger), seed)?;
    let dists = trace.dist_path();
    let plateau = median(&dists[dists.len() - window..])?;
    let t_star = dists
        .iter()
        .position(|&x| x <= PLATEAU_SLACK * plateau)
        .expect("plateau median is attained") as u64;
    if t_star + window as u64 > pilot_rounds {
        return Err(CentaurError::numeric(format!(
            "pilot did not reach its plateau {plateau:e} before the measuring window"
        )));
    }
    let kappa = truth.s_1() / truth.s_k();
    let zeta = res.zeta_g.unwrap_or(f64::INFINITY);
    let floor = kappa * res.eta_g * zeta * res.sigma_g * d / n;
    let log = (1.0 / floor).ln();
    if !(log > 0.0 && log.is_finite()) {
        return Err(CentaurError::numeric(format!(
            "predicted floor {floor:e} leaves no room for contraction"
        )));
    }
    let c_t = (t_star.max(1)) as f64 / (kappa * kappa * log);
    Ok(Calibration {
        c_zeta,
        c_t,
        gradient_norm_quantile: q,
        pilot_samples: norms.len(),
        pilot_rounds,
        pilot_plateau: plateau,
        t_star,
        predicted_floor: floor,
    })
}
