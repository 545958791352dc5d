//! JSON experiment configuration.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::accountant::Adjacency;
use crate::error::{CentaurError, Result};
use crate::ppm::accuracy_pair_is_valid;
use crate::server::Aggregation;

/// Default `c_ζ`: the 99.9th-percentile gradient norm at distance 0.2 from
/// `B*`, relative to `μ² k s_k² sqrt(d k log n)`. Median over seeds 1..=5 of
/// `calibrate` at d = 50, k = 3, n = 200, m = 100, m̄ = 50, κ = 2, μ = 3.5.
pub const DEFAULT_C_ZETA: f64 = 0.0086;
/// Default `c_T`, from the same pilots with σ_g = 0.3 over 600 rounds.
pub const DEFAULT_C_T: f64 = 4.4;

/// The literal `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AutoKeyword {
    #[serde(rename = "auto")]
    Auto,
}

/// A number or `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AutoOr<T> {
    Value(T),
    Auto(AutoKeyword),
}

impl<T> AutoOr<T> {
    pub const AUTO: Self = AutoOr::Auto(AutoKeyword::Auto);

    pub fn value(&self) -> Option<&T> {
        match self {
            AutoOr::Value(v) => Some(v),
            AutoOr::Auto(_) => None,
        }
    }
}

impl<T> Default for AutoOr<T> {
    fn default() -> Self {
        Self::AUTO
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZetaKeyword {
    /// Recipe value `c_ζ μ² k s_k² sqrt(d k log n)`.
    Auto,
    /// Empirical quantile of client gradient norms near `B*`.
    Quantile,
    /// No clipping; only allowed without noise.
    Inf,
}

/// Clipping threshold of the main loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ZetaSpec {
    Value(f64),
    Keyword(ZetaKeyword),
}

impl Default for ZetaSpec {
    fn default() -> Self {
        ZetaSpec::Keyword(ZetaKeyword::Auto)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientModeName {
    #[default]
    Lrl,
    General,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Ppm,
    #[default]
    SpectralOracle,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub d: usize,
    pub k: usize,
    pub n: usize,
    pub m: usize,
    pub kappa: f64,
    pub mu: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSection {
    #[serde(default = "one")]
    pub p_g: f64,
    #[serde(rename = "T_g")]
    pub rounds: AutoOr<u64>,
    #[serde(default)]
    pub eta_g: AutoOr<f64>,
    #[serde(default)]
    pub sigma_g: Option<f64>,
    #[serde(default)]
    pub eps_dp_target: Option<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub zeta_g: ZetaSpec,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub adjacency: Adjacency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSection {
    pub mbar: usize,
    #[serde(default)]
    pub mode: ClientModeName,
    #[serde(rename = "T_l", default)]
    pub local_steps: usize,
    #[serde(default)]
    pub eta_l: f64,
    #[serde(default)]
    pub head_epochs: usize,
    #[serde(default)]
    pub head_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    #[serde(default)]
    pub mode: InitMode,
    #[serde(rename = "T0", default = "one_usize")]
    pub trials: usize,
    #[serde(rename = "L", default)]
    pub power_iterations: AutoOr<usize>,
    #[serde(default)]
    pub sigma0: f64,
    /// `None` means no clipping (only without noise).
    #[serde(default)]
    pub zeta0: Option<f64>,
    /// Defaults to the local sample size `m`.
    #[serde(default)]
    pub mbar0: Option<usize>,
    #[serde(default = "default_eps_i")]
    pub eps_i: f64,
    #[serde(default = "default_eps0")]
    pub eps0: f64,
}

impl Default for InitSection {
    fn default() -> Self {
        Self {
            mode: InitMode::default(),
            trials: 1,
            power_iterations: AutoOr::AUTO,
            sigma0: 0.0,
            zeta0: None,
            mbar0: None,
            eps_i: default_eps_i(),
            eps0: default_eps0(),
        }
    }
}

/// Universal constants of the recipes and the clipping pilot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constants {
    #[serde(default = "default_c_zeta")]
    pub c_zeta: f64,
    #[serde(rename = "c_T", default = "default_c_t")]
    pub c_t: f64,
    #[serde(rename = "c_L", default = "one")]
    pub c_l: f64,
    /// Quantile level of the gradient-norm pilot.
    #[serde(default = "default_quantile")]
    pub zeta_quantile: f64,
    /// Number of pilot bases at distance `eps0` from `B*`.
    #[serde(default = "default_pilot_bases")]
    pub pilot_bases: u64,
    /// Rounds per client and pilot basis.
    #[serde(default = "default_pilot_repeats")]
    pub pilot_repeats: u64,
}

impl Default for Constants {
    fn default() -> Self {
        Self {
            c_zeta: DEFAULT_C_ZETA,
            c_t: DEFAULT_C_T,
            c_l: 1.0,
            zeta_quantile: default_quantile(),
            pilot_bases: default_pilot_bases(),
            pilot_repeats: default_pilot_repeats(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub server: ServerSection,
    pub client: ClientSection,
    #[serde(default)]
    pub init: InitSection,
    #[serde(default = "one_usize")]
    pub trials: usize,
    #[serde(default)]
    pub constants: Constants,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

fn default_delta() -> f64 {
    1e-5
}

fn default_eps_i() -> f64 {
    0.01
}

fn default_eps0() -> f64 {
    0.2
}

fn default_c_zeta() -> f64 {
    DEFAULT_C_ZETA
}

fn default_c_t() -> f64 {
    DEFAULT_C_T
}

fn default_quantile() -> f64 {
    0.999
}

fn default_pilot_bases() -> u64 {
    20
}

fn default_pilot_repeats() -> u64 {
    25
}

/// Top-level key of `run.json` holding derived values; ignored on input.
pub const RESOLVED_KEY: &str = "resolved";

fn fail(path: &str, msg: impl Into<String>) -> CentaurError {
    CentaurError::config(path, msg)
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(fail(path, format!("must be a positive number, got {v}")))
    }
}

impl ExperimentConfig {
    /// Parse and validate. A top-level `"resolved"` section, as written to
    /// `run.json`, is skipped.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut value: Value =
            serde_json::from_str(text).map_err(|e| fail("<root>", format!("not valid JSON: {e}")))?;
        Self::from_value(&mut value)
    }

    pub fn from_value(value: &mut Value) -> Result<Self> {
        if let Some(obj) = value.as_object_mut() {
            obj.remove(RESOLVED_KEY);
        }
        let cfg: Self = serde_path_to_error::deserialize(value.clone()).map_err(|e| {
            let path = e.path().to_string();
            fail(if path == "." { "<root>" } else { &path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CentaurError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Hex SHA-256 of the compact JSON encoding.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_value().to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Whether the main loop adds noise.
    pub fn is_private(&self) -> bool {
        self.server.sigma_g.is_some() || self.server.eps_dp_target.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        if p.k == 0 || p.k > p.d || p.k > p.n {
            return Err(fail("problem.k", format!("need 1 <= k <= min(d, n), got k = {}", p.k)));
        }
        if p.m < 2 {
            return Err(fail("problem.m", "need at least two samples per client"));
        }
        if !(p.kappa >= 1.0 && p.kappa.is_finite()) {
            return Err(fail("problem.kappa", format!("must be >= 1, got {}", p.kappa)));
        }
        if p.k == 1 && p.kappa != 1.0 {
            return Err(fail("problem.kappa", "a rank-one problem has kappa = 1"));
        }
        positive("problem.mu", p.mu)?;

        let s = &self.server;
        if !(0.0..=1.0).contains(&s.p_g) {
            return Err(fail("server.p_g", format!("must lie in [0, 1], got {}", s.p_g)));
        }
        if let AutoOr::Value(eta) = s.eta_g {
            positive("server.eta_g", eta)?;
        }
        if !(s.delta > 0.0 && s.delta < 1.0) {
            return Err(fail("server.delta", format!("must lie in (0, 1), got {}", s.delta)));
        }
        match (s.sigma_g, s.eps_dp_target) {
            (Some(_), Some(_)) => {
                return Err(fail("server.eps_dp_target", "set either sigma_g or eps_dp_target, not both"))
            }
            (Some(sigma), None) => positive("server.sigma_g", sigma)?,
            (None, Some(eps)) => {
                positive("server.eps_dp_target", eps)?;
                if s.rounds.value().is_none() {
                    return Err(fail("server.T_g", "calibrating sigma_g to a budget needs a fixed T_g"));
                }
            }
            (None, None) => {
                if s.rounds.value().is_none() {
                    return Err(fail("server.T_g", "\"auto\" needs noise to size the run"));
                }
            }
        }
        match s.zeta_g {
            ZetaSpec::Value(z) => positive("server.zeta_g", z)?,
            ZetaSpec::Keyword(ZetaKeyword::Inf) if self.is_private() => {
                return Err(fail("server.zeta_g", "a private run needs a finite clipping threshold"))
            }
            ZetaSpec::Keyword(ZetaKeyword::Quantile) if self.client.mode != ClientModeName::Lrl => {
                return Err(fail("server.zeta_g", "the gradient-norm pilot needs the lrl client"))
            }
            ZetaSpec::Keyword(_) => {}
        }

        let c = &self.client;
        if c.mbar == 0 {
            return Err(fail("client.mbar", "must be positive"));
        }
        match c.mode {
            ClientModeName::Lrl if 2 * c.mbar > p.m => {
                return Err(fail("client.mbar", format!("two disjoint batches of {} exceed m = {}", c.mbar, p.m)))
            }
            ClientModeName::General if c.mbar > p.m => {
                return Err(fail("client.mbar", format!("batch of {} exceeds m = {}", c.mbar, p.m)))
            }
            ClientModeName::General if c.local_steps > 0 && !(c.eta_l > 0.0 && c.eta_l.is_finite()) => {
                return Err(fail("client.eta_l", "must be positive when T_l > 0"))
            }
            _ => {}
        }

        let i = &self.init;
        if !(i.eps0 > 0.0 && i.eps0 < 1.0) {
            return Err(fail("init.eps0", format!("must lie in (0, 1), got {}", i.eps0)));
        }
        if i.mode == InitMode::Ppm {
            if i.trials == 0 {
                return Err(fail("init.T0", "need at least one trial"));
            }
            if let AutoOr::Value(0) = i.power_iterations {
                return Err(fail("init.L", "need at least one power iteration"));
            }
            if !(i.eps_i > 0.0 && i.eps_i < 1.0) || !accuracy_pair_is_valid(i.eps_i, i.eps0) {
                return Err(fail("init.eps_i", format!("eps_i = {} cannot certify eps0 = {}", i.eps_i, i.eps0)));
            }
            if !(i.sigma0 >= 0.0 && i.sigma0.is_finite()) {
                return Err(fail("init.sigma0", "must be finite and >= 0"));
            }
            match i.zeta0 {
                Some(z) => positive("init.zeta0", z)?,
                None if i.sigma0 > 0.0 => {
                    return Err(fail("init.zeta0", "a private initializer needs a clipping threshold"))
                }
                None => {}
            }
            if self.is_private() && i.sigma0 == 0.0 {
                return Err(fail("init.sigma0", "a private run needs a private initializer"));
            }
            if !self.is_private() && i.sigma0 > 0.0 {
                return Err(fail("init.sigma0", "a non-private run cannot have a noisy initializer"));
            }
            if let Some(mb) = i.mbar0 {
                if mb == 0 || mb > p.m {
                    return Err(fail("init.mbar0", format!("must lie in 1..={}", p.m)));
                }
            }
        }
        if self.trials == 0 {
            return Err(fail("trials", "need at least one trial"));
        }
        let k = &self.constants;
        positive("constants.c_zeta", k.c_zeta)?;
        positive("constants.c_T", k.c_t)?;
        positive("constants.c_L", k.c_l)?;
        if !(k.zeta_quantile > 0.0 && k.zeta_quantile <= 1.0) {
            return Err(fail("constants.zeta_quantile", "must lie in (0, 1]"));
        }
        if k.pilot_bases == 0 || k.pilot_repeats == 0 {
            return Err(fail("constants.pilot_bases", "pilot needs at least one basis and one repeat"));
        }
        Ok(())
    }
}

/// Replace the value at a dotted `path` (e.g. `server.sigma_g`). The field
/// must already exist in the serialized config.
pub fn set_field(cfg: &ExperimentConfig, path: &str, value: Value) -> Result<Value> {
    let mut root = cfg.to_value();
    let mut node = &mut root;
    for part in path.split('.') {
        node = node
            .get_mut(part)
            .ok_or_else(|| fail(path, "no such field"))?;
    }
    *node = value;
    Ok(root)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "problem": {"d": 20, "k": 2, "n": 50, "m": 20, "kappa": 1.5, "mu": 5.0, "seed": 3},
        "server": {"T_g": 10},
        "client": {"mbar": 10}
    }"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.server.p_g, 1.0);
        assert_eq!(cfg.server.eta_g, AutoOr::AUTO);
        assert_eq!(cfg.server.zeta_g, ZetaSpec::Keyword(ZetaKeyword::Auto));
        assert_eq!(cfg.init.mode, InitMode::SpectralOracle);
        assert_eq!(cfg.trials, 1);
        assert!(!cfg.is_private());
    }

    #[test]
    fn errors_name_the_field() {
        let bad = MINIMAL.replace("\"T_g\": 10", "\"T_g\": 10, \"p_g\": 2");
        match ExperimentConfig::from_json(&bad) {
            Err(CentaurError::Config { path, .. }) => assert_eq!(path, "server.p_g"),
            other => panic!("{other:?}"),
        }
        let bad = MINIMAL.replace("\"mbar\": 10", "\"mbar\": \"ten\"");
        match ExperimentConfig::from_json(&bad) {
            Err(CentaurError::Config { path, .. }) => assert_eq!(path, "client.mbar"),
            other => panic!("{other:?}"),
        }
        let bad = MINIMAL.replace("\"mbar\": 10", "\"mbar\": 10, \"bogus\": 1");
        assert!(matches!(ExperimentConfig::from_json(&bad), Err(CentaurError::Config { .. })));
    }

    #[test]
    fn sigma_and_budget_are_exclusive() {
        let bad = MINIMAL.replace("\"T_g\": 10", "\"T_g\": 10, \"sigma_g\": 1, \"eps_dp_target\": 1");
        assert!(ExperimentConfig::from_json(&bad).is_err());
    }

    #[test]
    fn resolved_section_is_ignored() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        let mut v = cfg.to_value();
        v.as_object_mut().unwrap().insert(RESOLVED_KEY.into(), serde_json::json!({"x": 1}));
        assert_eq!(ExperimentConfig::from_json(&v.to_string()).unwrap(), cfg);
    }

    #[test]
    fn set_field_requires_existing_path() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        let v = set_field(&cfg, "server.p_g", serde_json::json!(0.5)).unwrap();
        assert_eq!(v["server"]["p_g"], 0.5);
        assert!(set_field(&cfg, "server.nope", serde_json::json!(1)).is_err());
    }
}
