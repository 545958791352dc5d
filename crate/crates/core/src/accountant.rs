//! Rényi-DP accounting for the Gaussian mechanism: per-round spend (with and
//! without Poisson subsampling), composition, conversion to (ε, δ)-DP and
//! noise calibration.
//!
//! Two user-level neighbouring relations are supported. Replacing one user's
//! dataset moves an average of clipped contributions by `2ζ/s`; adding or
//! removing a user moves it by `ζ/s`. With noise standard deviation `σζ/s`
//! a full-participation round therefore costs `2α/σ²` or `α/(2σ²)` RDP
//! respectively.

use serde::{Deserialize, Serialize};

use crate::error::{CentaurError, Result};
use crate::quadrature;

/// Relative accuracy demanded from the subsampled-Gaussian quadrature.
pub const QUADRATURE_REL_TOL: f64 = 1e-12;

/// Neighbouring relation between federated datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adjacency {
    /// One user's whole local dataset is replaced (sensitivity `2ζ/s`).
    #[default]
    ReplaceOneUser,
    /// One user is added or removed (sensitivity `ζ/s`).
    AddRemoveUser,
}

impl Adjacency {
    /// Sensitivity of a clipped average in units of `ζ/s`.
    pub fn sensitivity_factor(self) -> f64 {
        match self {
            Adjacency::ReplaceOneUser => 2.0,
            Adjacency::AddRemoveUser => 1.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Adjacency::ReplaceOneUser => "replace_one_user",
            Adjacency::AddRemoveUser => "add_remove_user",
        }
    }
}

/// Orders 2..=64 plus 128, 256 and 512.
pub fn default_alpha_grid() -> Vec<f64> {
    (2..=64u32)
        .chain([128, 256, 512])
        .map(f64::from)
        .collect()
}

/// RDP spend as a function of the order α, sampled on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpCurve {
    alphas: Vec<f64>,
    epsilons: Vec<f64>,
}

impl RdpCurve {
    pub fn new(alphas: Vec<f64>, epsilons: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() || alphas.len() != epsilons.len() {
            return Err(CentaurError::param(format!(
                "curve needs a nonempty grid with one value per order ({} orders, {} values)",
                alphas.len(),
                epsilons.len()
            )));
        }
        if alphas.iter().any(|a| !(*a > 1.0 && a.is_finite())) {
            return Err(CentaurError::param("every RDP order must be finite and > 1"));
        }
        if alphas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CentaurError::param("RDP orders must be strictly ascending"));
        }
        if epsilons.iter().any(|e| e.is_nan() || *e < 0.0) {
            return Err(CentaurError::param("RDP values must be nonnegative"));
        }
        Ok(Self { alphas, epsilons })
    }

    /// Zero spend on `alphas`.
    pub fn zero(alphas: Vec<f64>) -> Result<Self> {
        let epsilons = vec![0.0; alphas.len()];
        Self::new(alphas, epsilons)
    }

    /// Evaluate `eps_at(α)` on every order of `alphas`.
    pub fn from_fn<F: FnMut(f64) -> Result<f64>>(alphas: Vec<f64>, mut eps_at: F) -> Result<Self> {
        let epsilons = alphas.iter().map(|&a| eps_at(a)).collect::<Result<Vec<_>>>()?;
        Self::new(alphas, epsilons)
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn epsilons(&self) -> &[f64] {
        &self.epsilons
    }

    /// Spend at order `alpha`, if it lies on the grid.
    pub fn epsilon_at(&self, alpha: f64) -> Option<f64> {
        self.alphas
            .iter()
            .position(|&a| a == alpha)
            .map(|i| self.epsilons[i])
    }

    /// Pointwise `factor * self`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            alphas: self.alphas.clone(),
            epsilons: self.epsilons.iter().map(|e| e * factor).collect(),
        }
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(CentaurError::param(format!("delta must lie in (0, 1), got {delta}")))
    }
}

fn check_positive(value: f64, what: &str) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(CentaurError::param(format!("{what} must be positive and finite, got {value}")))
    }
}

/// RDP of the Gaussian mechanism: `α Δ² / (2 s²)`.
pub fn gaussian_rdp(alpha: f64, sensitivity: f64, noise_std: f64) -> Result<f64> {
    if !(alpha > 1.0) {
        return Err(CentaurError::param(format!("RDP order must exceed 1, got {alpha}")));
    }
    check_positive(sensitivity, "sensitivity")?;
    check_positive(noise_std, "noise standard deviation")?;
    Ok(alpha * sensitivity * sensitivity / (2.0 * noise_std * noise_std))
}

/// `log(1 - p + p e^a)` without overflow.
fn log_mixture_ratio(p: f64, a: f64) -> f64 {
    if p >= 1.0 {
        return a;
    }
    let lo = (1.0 - p).ln();
    let hi = p.ln() + a;
    let (big, small) = if lo > hi { (lo, hi) } else { (hi, lo) };
    big + (small - big).exp().ln_1p()
}

fn sigmoid_weight(p: f64, a: f64) -> f64 {
    if p >= 1.0 {
        return 1.0;
    }
    // p e^a / (1 - p + p e^a)
    let z = p.ln() + a - (1.0 - p).ln();
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// RDP of the Poisson-subsampled Gaussian mechanism with unit sensitivity:
/// `R_α(N(0, σ²) ‖ (1-p) N(0, σ²) + p N(1, σ²))`, by adaptive quadrature.
pub fn subsampled_gaussian_rdp(alpha: u32, p: f64, sigma: f64) -> Result<f64> {
    if alpha < 2 {
        return Err(CentaurError::param(format!("RDP order must be an integer >= 2, got {alpha}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(CentaurError::param(format!("sampling probability must lie in [0, 1], got {p}")));
    }
    check_positive(sigma, "noise multiplier")?;
    if p == 0.0 {
        return Ok(0.0);
    }
    let a = f64::from(alpha);
    let var = sigma * sigma;
    let log_norm = -(sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
    // log ν(x) and the log of ν'(x)/ν(x).
    let log_nu = move |x: f64| -x * x / (2.0 * var) + log_norm;
    let exponent = move |x: f64| (2.0 * x - 1.0) / (2.0 * var);
    let log_ratio = move |x: f64| log_mixture_ratio(p, exponent(x));

    // The integrand ν^α ν'^{1-α} = ν · (ν'/ν)^{1-α} is log-concave; its mode
    // solves x = -(α-1) w(x) with w the mixture weight of the shifted component.
    let (mut lo, mut hi) = (-(a - 1.0), 0.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let slope = -mid - (a - 1.0) * sigmoid_weight(p, exponent(mid));
        if slope > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mode = 0.5 * (lo + hi);
    let w = sigmoid_weight(p, exponent(mode));
    let curvature = 1.0 / var + (a - 1.0) * w * (1.0 - w) / (var * var);
    let width = 1.0 / curvature.sqrt();

    let log_e = quadrature::log_integral_real_line(
        |x| log_nu(x) - (a - 1.0) * log_ratio(x),
        mode,
        width,
        QUADRATURE_REL_TOL,
    )?;
    let log_e = if log_e < 0.5 {
        // Small spend: integrate E - 1 = ∫ ν' ((ν/ν')^α - 1) directly so the
        // result keeps its relative accuracy.
        let e_minus_one = quadrature::integral_real_line(
            |x| {
                let r = log_ratio(x);
                (log_nu(x) + r).exp() * (-a * r).exp_m1()
            },
            0.5,
            sigma,
            QUADRATURE_REL_TOL,
        )?;
        e_minus_one.max(0.0).ln_1p()
    } else {
        log_e
    };
    if !log_e.is_finite() {
        return Err(CentaurError::numeric("subsampled Gaussian RDP diverged"));
    }
    Ok((log_e / (a - 1.0)).max(0.0))
}

/// Per-round RDP curve of one Gaussian-mechanism release with noise
/// multiplier `sigma`, Poisson participation `p` and the given adjacency.
pub fn round_curve(alphas: Vec<f64>, p: f64, sigma: f64, adjacency: Adjacency) -> Result<RdpCurve> {
    check_positive(sigma, "noise multiplier")?;
    if !(0.0..=1.0).contains(&p) {
        return Err(CentaurError::param(format!("sampling probability must lie in [0, 1], got {p}")));
    }
    // Sensitivity Δζ/s against noise σζ/s is a unit-sensitivity mechanism
    // with noise multiplier σ/Δ.
    let effective = sigma / adjacency.sensitivity_factor();
    RdpCurve::from_fn(alphas, |alpha| {
        if p >= 1.0 {
            gaussian_rdp(alpha, 1.0, effective)
        } else {
            if alpha.fract() != 0.0 {
                return Err(CentaurError::param(format!(
                    "subsampled accounting needs integer orders, got {alpha}"
                )));
            }
            subsampled_gaussian_rdp(alpha as u32, p, effective)
        }
    })
}

/// Pointwise sum of curves sharing one grid.
pub fn compose(curves: &[RdpCurve]) -> Result<RdpCurve> {
    let first = curves
        .first()
        .ok_or_else(|| CentaurError::param("nothing to compose"))?;
    let mut epsilons = first.epsilons.clone();
    for curve in &curves[1..] {
        if curve.alphas != first.alphas {
            return Err(CentaurError::param("cannot compose curves on different order grids"));
        }
        for (acc, e) in epsilons.iter_mut().zip(&curve.epsilons) {
            *acc += e;
        }
    }
    RdpCurve::new(first.alphas.clone(), epsilons)
}

/// An (ε, δ)-DP statement and the order that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpGuarantee {
    pub epsilon: f64,
    pub delta: f64,
    pub best_alpha: f64,
}

/// `min_α ε(α) + log(1/δ)/(α - 1)` over the curve's grid; ties go to the
/// smallest order.
pub fn rdp_to_dp(curve: &RdpCurve, delta: f64) -> Result<DpGuarantee> {
    check_delta(delta)?;
    let log_inv_delta = -delta.ln();
    let mut best = DpGuarantee {
        epsilon: f64::INFINITY,
        delta,
        best_alpha: curve.alphas[0],
    };
    for (&alpha, &eps) in curve.alphas.iter().zip(&curve.epsilons) {
        let candidate = eps + log_inv_delta / (alpha - 1.0);
        if candidate < best.epsilon {
            best.epsilon = candidate;
            best.best_alpha = alpha;
        }
    }
    Ok(best)
}

/// Closed-form DP budget of the main loop: `2 sqrt(T_g log(1/δ)) / σ_g`.
pub fn centaur_dp_budget(rounds: u64, sigma_g: f64, delta: f64) -> Result<f64> {
    if rounds == 0 {
        return Err(CentaurError::param("number of rounds must be at least 1"));
    }
    check_positive(sigma_g, "noise multiplier")?;
    check_delta(delta)?;
    Ok(2.0 * (rounds as f64 * -delta.ln()).sqrt() / sigma_g)
}

/// The closed-form budget next to the grid-optimized conversion of
/// `T_g` composed full-participation rounds under `adjacency`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetComparison {
    pub closed_form: f64,
    pub grid_optimized: f64,
    pub best_alpha: f64,
    pub adjacency: Adjacency,
}

pub fn compare_dp_budget(
    rounds: u64,
    sigma_g: f64,
    delta: f64,
    adjacency: Adjacency,
    alphas: Vec<f64>,
) -> Result<BudgetComparison> {
    let closed_form = centaur_dp_budget(rounds, sigma_g, delta)?;
    let total = round_curve(alphas, 1.0, sigma_g, adjacency)?.scaled(rounds as f64);
    let dp = rdp_to_dp(&total, delta)?;
    Ok(BudgetComparison {
        closed_form,
        grid_optimized: dp.epsilon,
        best_alpha: dp.best_alpha,
        adjacency,
    })
}

/// Noise multiplier whose closed-form budget over `rounds` equals `eps_target`.
pub fn calibrate_sigma(eps_target: f64, rounds: u64, delta: f64) -> Result<f64> {
    check_positive(eps_target, "target epsilon")?;
    if rounds == 0 {
        return Err(CentaurError::param("number of rounds must be at least 1"));
    }
    check_delta(delta)?;
    Ok(2.0 * (rounds as f64 * -delta.ln()).sqrt() / eps_target)
}

/// RDP spent by the initializer: `T_0` independent trials of `L` Gaussian
/// releases each, with full participation. Selecting among the trials reads
/// only their outputs and costs nothing.
pub fn init_rdp_curve(
    alphas: Vec<f64>,
    trials: u64,
    power_iterations: u64,
    sigma_0: f64,
    adjacency: Adjacency,
) -> Result<RdpCurve> {
    if trials == 0 || power_iterations == 0 {
        return Err(CentaurError::param(
            "initializer needs at least one trial and one power iteration",
        ));
    }
    let per_release = round_curve(alphas, 1.0, sigma_0, adjacency)?;
    Ok(per_release.scaled((trials * power_iterations) as f64))
}

/// Running privacy spend of a simulation: initializer plus main loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    main: RdpCurve,
    init: RdpCurve,
    delta: f64,
    adjacency: Adjacency,
    rounds: u64,
}

impl PrivacyLedger {
    pub fn new(alphas: Vec<f64>, delta: f64, adjacency: Adjacency) -> Result<Self> {
        check_delta(delta)?;
        Ok(Self {
            main: RdpCurve::zero(alphas.clone())?,
            init: RdpCurve::zero(alphas)?,
            delta,
            adjacency,
            rounds: 0,
        })
    }

    pub fn alphas(&self) -> &[f64] {
        self.main.alphas()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn adjacency(&self) -> Adjacency {
        self.adjacency
    }

    /// Number of main-loop rounds charged so far.
    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    pub fn main_curve(&self) -> &RdpCurve {
        &self.main
    }

    pub fn init_curve(&self) -> &RdpCurve {
        &self.init
    }

    /// Charge one main-loop round.
    pub fn record_round(&mut self, curve: &RdpCurve) -> Result<()> {
        self.main = compose(&[self.main.clone(), curve.clone()])?;
        self.rounds += 1;
        Ok(())
    }

    /// Charge initializer spend.
    pub fn charge_init(&mut self, curve: &RdpCurve) -> Result<()> {
        self.init = compose(&[self.init.clone(), curve.clone()])?;
        Ok(())
    }

    /// Pointwise sum of the initializer and main-loop curves.
    pub fn total(&self) -> RdpCurve {
        compose(&[self.main.clone(), self.init.clone()]).expect("ledger curves share a grid")
    }

    pub fn dp(&self) -> DpGuarantee {
        rdp_to_dp(&self.total(), self.delta).expect("ledger delta validated at construction")
    }
}

/// Initializer section of an [`AccountDescriptor`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitDescriptor {
    #[serde(rename = "T0")]
    pub trials: u64,
    #[serde(rename = "L")]
    pub power_iterations: u64,
    pub sigma0: f64,
}

/// Input of the `account` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccountDescriptor {
    #[serde(rename = "T_g")]
    pub rounds: u64,
    pub sigma_g: f64,
    #[serde(default = "one")]
    pub p_g: f64,
    pub delta: f64,
    #[serde(default)]
    pub init: Option<InitDescriptor>,
    #[serde(default)]
    pub adjacency: Adjacency,
}

fn one() -> f64 {
    1.0
}

/// Output of the `account` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountReport {
    pub eps_dp: f64,
    pub best_alpha: f64,
    /// Fraction of the total RDP at `best_alpha` spent by the initializer.
    pub eps_init_dp_share: f64,
    /// `2 sqrt(T_g log(1/δ)) / σ_g`, independent of the adjacency.
    pub closed_form_eps_dp: f64,
    /// Adjacency used for `eps_dp`.
    pub adjacency: Adjacency,
    pub delta: f64,
}

/// Account a full run: `T_g` main-loop rounds plus the optional initializer.
pub fn account(desc: &AccountDescriptor) -> Result<AccountReport> {
    let alphas = default_alpha_grid();
    let mut ledger = PrivacyLedger::new(alphas.clone(), desc.delta, desc.adjacency)?;
    let per_round = round_curve(alphas.clone(), desc.p_g, desc.sigma_g, desc.adjacency)?;
    ledger.main = per_round.scaled(desc.rounds as f64);
    ledger.rounds = desc.rounds;
    if let Some(init) = &desc.init {
        let curve = init_rdp_curve(
            alphas,
            init.trials,
            init.power_iterations,
            init.sigma0,
            desc.adjacency,
        )?;
        ledger.charge_init(&curve)?;
    }
    let dp = ledger.dp();
    let total_at_best = ledger.total().epsilon_at(dp.best_alpha).unwrap_or(0.0);
    let init_at_best = ledger.init.epsilon_at(dp.best_alpha).unwrap_or(0.0);
    let share = if total_at_best > 0.0 {
        init_at_best / total_at_best
    } else {
        0.0
    };
    Ok(AccountReport {
        eps_dp: dp.epsilon,
        best_alpha: dp.best_alpha,
        eps_init_dp_share: share,
        closed_form_eps_dp: centaur_dp_budget(desc.rounds.max(1), desc.sigma_g, desc.delta)?,
        adjacency: desc.adjacency,
        delta: desc.delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_rdp_closed_form() {
        assert_eq!(gaussian_rdp(2.0, 1.0, 1.0).unwrap(), 1.0);
        // 8 * 0.09 / (2 * 1.44)
        assert!((gaussian_rdp(8.0, 0.3, 1.2).unwrap() - 0.25).abs() < 1e-15);
        assert!(gaussian_rdp(2.0, 0.0, 1.0).is_err());
        assert!(gaussian_rdp(2.0, 1.0, -1.0).is_err());
        assert!(gaussian_rdp(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn replace_one_sensitivity_is_scale_free() {
        for (zeta, n) in [(0.1, 10.0), (3.0, 200.0), (50.0, 7.0)] {
            let sigma = 4.0;
            let eps = gaussian_rdp(2.0, 2.0 * zeta / n, sigma * zeta / n).unwrap();
            assert!((eps - 2.0 * 2.0 / (sigma * sigma)).abs() < 1e-14);
        }
    }

    #[test]
    fn subsampled_boundaries() {
        assert_eq!(subsampled_gaussian_rdp(5, 0.0, 1.3).unwrap(), 0.0);
        let v = subsampled_gaussian_rdp(4, 1.0, 2.0).unwrap();
        assert!((v - 0.5).abs() < 1e-9, "{v}");
    }

    #[test]
    fn subsampled_rejects_bad_arguments() {
        assert!(subsampled_gaussian_rdp(1, 0.5, 1.0).is_err());
        assert!(subsampled_gaussian_rdp(2, 1.5, 1.0).is_err());
        assert!(subsampled_gaussian_rdp(2, 0.5, 0.0).is_err());
    }

    #[test]
    fn compose_is_pointwise_sum() {
        let grid = vec![2.0, 4.0];
        let c = RdpCurve::new(grid.clone(), vec![0.5, 1.0]).unwrap();
        assert_eq!(compose(&[c.clone()]).unwrap(), c);
        let tripled = compose(&[c.clone(), c.clone(), c.clone()]).unwrap();
        assert_eq!(tripled.epsilons(), &[1.5, 3.0]);
        let other = RdpCurve::new(vec![2.0, 8.0], vec![0.0, 0.0]).unwrap();
        assert!(compose(&[c, other]).is_err());
    }

    #[test]
    fn rdp_to_dp_single_point() {
        let c = RdpCurve::new(vec![2.0], vec![1.0]).unwrap();
        let dp = rdp_to_dp(&c, 1e-5).unwrap();
        // 1 + ln(1e5), evaluated at 40 digits
        assert!((dp.epsilon - 12.512_925_464_970_228).abs() < 1e-12);
        assert_eq!(dp.best_alpha, 2.0);
    }

    #[test]
    fn rdp_to_dp_zero_spend_prefers_largest_order() {
        let grid = default_alpha_grid();
        let dp = rdp_to_dp(&RdpCurve::zero(grid).unwrap(), 0.5).unwrap();
        assert_eq!(dp.best_alpha, 512.0);
        assert!((dp.epsilon - 2f64.ln() / 511.0).abs() < 1e-15);
    }

    #[test]
    fn rdp_to_dp_brute_force_on_small_grid() {
        let grid = vec![2.0, 4.0, 8.0];
        let eps: Vec<f64> = grid.iter().map(|a| 0.1 * a).collect();
        let c = RdpCurve::new(grid.clone(), eps.clone()).unwrap();
        let dp = rdp_to_dp(&c, 1e-5).unwrap();
        let candidates: Vec<f64> = grid
            .iter()
            .zip(&eps)
            .map(|(a, e)| e + (1e5f64).ln() / (a - 1.0))
            .collect();
        let (idx, best) = candidates
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        assert_eq!(dp.best_alpha, grid[idx]);
        assert_eq!(dp.epsilon, *best);
        assert!(rdp_to_dp(&c, 0.0).is_err());
        assert!(rdp_to_dp(&c, 1.0).is_err());
    }

    #[test]
    fn budget_examples() {
        // 2 sqrt(100 ln 1e5) / 20 = 3.3930702122... (40-digit evaluation)
        let eps = centaur_dp_budget(100, 20.0, 1e-5).unwrap();
        assert!((eps - 3.393_070_212_207_556).abs() < 1e-12);
        let sigma = 3.7;
        let eps = centaur_dp_budget(1, sigma, (-1.0f64).exp()).unwrap();
        assert!((eps - 2.0 / sigma).abs() < 1e-15);
        assert!(centaur_dp_budget(0, 1.0, 0.1).is_err());
    }

    #[test]
    fn calibrate_examples() {
        // 2 sqrt(200 ln 1e5) = 95.9705182437...
        let sigma = calibrate_sigma(1.0, 200, 1e-5).unwrap();
        assert!((sigma - 95.970_518_243_761_62).abs() < 1e-9);
        let unit = 2.0 * (200.0 * (1e5f64).ln()).sqrt();
        assert!((calibrate_sigma(unit, 200, 1e-5).unwrap() - 1.0).abs() < 1e-15);
        let s = calibrate_sigma(0.7, 37, 1e-6).unwrap();
        let back = centaur_dp_budget(37, s, 1e-6).unwrap();
        assert!((back - 0.7).abs() <= 1e-12 * 0.7);
    }

    #[test]
    fn init_curve_examples() {
        let grid = default_alpha_grid();
        let c = init_rdp_curve(grid.clone(), 1, 1, 2.0, Adjacency::ReplaceOneUser).unwrap();
        for (a, e) in c.alphas().iter().zip(c.epsilons()) {
            assert!((e - a / 2.0).abs() < 1e-12);
        }
        assert!(init_rdp_curve(grid.clone(), 0, 1, 2.0, Adjacency::ReplaceOneUser).is_err());
        let single = init_rdp_curve(grid.clone(), 3, 4, 5.0, Adjacency::ReplaceOneUser).unwrap();
        let double = init_rdp_curve(grid, 6, 4, 5.0, Adjacency::ReplaceOneUser).unwrap();
        for (s, d) in single.epsilons().iter().zip(double.epsilons()) {
            assert!((2.0 * s - d).abs() < 1e-12 * d);
        }
    }

    #[test]
    fn ledger_total_is_sum_of_parts() {
        let grid = default_alpha_grid();
        let mut ledger = PrivacyLedger::new(grid.clone(), 1e-5, Adjacency::ReplaceOneUser).unwrap();
        let init = init_rdp_curve(grid.clone(), 2, 3, 10.0, Adjacency::ReplaceOneUser).unwrap();
        ledger.charge_init(&init).unwrap();
        let round = round_curve(grid, 1.0, 20.0, Adjacency::ReplaceOneUser).unwrap();
        for _ in 0..5 {
            ledger.record_round(&round).unwrap();
        }
        assert_eq!(ledger.rounds(), 5);
        let expect = compose(&[init, round.scaled(5.0)]).unwrap();
        for (a, b) in ledger.total().epsilons().iter().zip(expect.epsilons()) {
            assert!((a - b).abs() < 1e-12 * b.max(1.0));
        }
        assert!(PrivacyLedger::new(vec![2.0], 0.0, Adjacency::ReplaceOneUser).is_err());
    }

    #[test]
    fn account_descriptor_parses() {
        let json = r#"{"T_g": 100, "sigma_g": 20.0, "p_g": 1.0, "delta": 1e-5,
                       "init": {"T0": 2, "L": 10, "sigma0": 200.0}}"#;
        let desc: AccountDescriptor = serde_json::from_str(json).unwrap();
        let report = account(&desc).unwrap();
        assert!(report.eps_dp > 0.0 && report.eps_dp.is_finite());
        assert!(report.eps_init_dp_share > 0.0 && report.eps_init_dp_share < 1.0);
        assert!((report.closed_form_eps_dp - 3.393_070_212_207_556).abs() < 1e-12);
    }
}
