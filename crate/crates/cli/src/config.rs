//! Flat TOML experiment configuration.

use std::path::PathBuf;

use lowrank_bandit::environments::{
    make_lowrank_theta, make_sparse_theta, reduce_multiarm, reference_pricing_vectors, BilinearEnv, ContextDistribution,
    Environment, PricingEnv,
};
use lowrank_bandit::estimator::{SolverSettings, StepRule};
use lowrank_bandit::{AlgorithmConfig, Lambda0, Perturbation, Space};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Error raised while reading a configuration; always a usage error.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    /// `Θ* = U D Vᵀ` of rank `r`.
    Lowrank,
    /// `s0` non-zeros per row.
    Sparse,
    /// Personalized linear demand with lifted price actions.
    Pricing,
    /// `K` arms with means `means`, constant context.
    Multiarm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    UnitBall,
    Box,
}

/// `lambda0 = "auto"` or a positive number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Lambda0Value {
    Number(f64),
    Word(String),
}

/// Every key is optional at the parsing stage so that a missing key can be
/// reported by name; [`ExperimentConfig::validate`] enforces requirements.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub env: Option<EnvKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_a: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_x: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diag: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s0: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    #[serde(rename = "L")]
    pub targets: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub price_lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub price_upper: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub means: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action_space: Option<SpaceKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub box_lower: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub box_upper: Option<Vec<f64>>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_init: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda0: Option<Lambda0Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exploration_exponent: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<Perturbation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explore: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refit_every: Option<usize>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rel_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_rule: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accelerated: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power_iters_warm: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_point_tol: Option<f64>,

    #[serde(skip_serializing_if = "Option::is_none")]
    #[serde(rename = "T")]
    pub horizon: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

fn missing(key: &str) -> ConfigError {
    ConfigError(format!("missing required key `{key}`"))
}

fn invalid(key: &str, why: impl std::fmt::Display) -> ConfigError {
    ConfigError(format!("invalid value for `{key}`: {why}"))
}

/// Everything a simulation needs, resolved from the configuration.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub algorithm: AlgorithmConfig,
    pub solver: SolverSettings,
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
}

/// A concrete environment for one trial.
pub enum TrialEnv {
    Bilinear(BilinearEnv<f64>),
    Pricing(PricingEnv<f64>),
}

impl TrialEnv {
    pub fn as_env(&self) -> &dyn Environment<f64> {
        match self {
            Self::Bilinear(e) => e,
            Self::Pricing(e) => e,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(format!("config: {}", e.message())))
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    fn need<T: Clone>(v: &Option<T>, key: &str) -> Result<T, ConfigError> {
        v.clone().ok_or_else(|| missing(key))
    }

    pub fn algorithm(&self) -> Result<AlgorithmConfig, ConfigError> {
        let d = AlgorithmConfig::default();
        let lambda0 = match &self.lambda0 {
            None => d.lambda0,
            Some(Lambda0Value::Number(v)) => Lambda0::Fixed(*v),
            Some(Lambda0Value::Word(w)) if w == "auto" => Lambda0::Auto,
            Some(Lambda0Value::Word(w)) => return Err(invalid("lambda0", format!("expected \"auto\" or a number, got {w:?}"))),
        };
        let cfg = AlgorithmConfig {
            t_init: self.t_init.unwrap_or(d.t_init),
            h: self.h.unwrap_or(d.h),
            lambda0,
            exploration_exponent: self.exploration_exponent.unwrap_or(d.exploration_exponent),
            perturbation: self.perturbation.unwrap_or(d.perturbation),
            explore: self.explore.unwrap_or(d.explore),
            seed: self.seed.unwrap_or(d.seed),
            refit_every: self.refit_every.unwrap_or(d.refit_every),
        };
        cfg.validate().map_err(|e| ConfigError(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn solver(&self) -> Result<SolverSettings, ConfigError> {
        let d = SolverSettings::default();
        let step_rule = match self.step_rule.as_deref() {
            None => d.step_rule,
            Some("lipschitz") => StepRule::LipschitzPowerIter,
            Some("backtracking") => StepRule::Backtracking,
            Some(other) => return Err(invalid("step_rule", format!("expected \"lipschitz\" or \"backtracking\", got {other:?}"))),
        };
        let s = SolverSettings {
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            rel_tol: self.rel_tol.unwrap_or(d.rel_tol),
            step_rule,
            accelerated: self.accelerated.unwrap_or(d.accelerated),
            power_iters: self.power_iters.unwrap_or(d.power_iters),
            power_iters_warm: self.power_iters_warm.unwrap_or(d.power_iters_warm),
            fixed_point_tol: self.fixed_point_tol.unwrap_or(d.fixed_point_tol),
        };
        s.validate().map_err(|e| ConfigError(format!("config: {e}")))?;
        Ok(s)
    }

    /// Checks required keys and returns the run parameters. The
    /// environment itself is built per trial by [`ExperimentConfig::build_env`].
    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let env = Self::need(&self.env, "env")?;
        let horizon = Self::need(&self.horizon, "T")?;
        let trials = Self::need(&self.trials, "trials")?;
        if trials == 0 {
            return Err(invalid("trials", "must be ≥ 1"));
        }
        match env {
            EnvKind::Lowrank => {
                Self::need(&self.d_a, "d_a")?;
                Self::need(&self.d_x, "d_x")?;
                Self::need(&self.r, "r")?;
                Self::need(&self.diag, "diag")?;
                Self::need(&self.sigma, "sigma")?;
                Self::need(&self.targets, "L")?;
            }
            EnvKind::Sparse => {
                Self::need(&self.d_a, "d_a")?;
                Self::need(&self.d_x, "d_x")?;
                Self::need(&self.s0, "s0")?;
                Self::need(&self.sigma, "sigma")?;
                Self::need(&self.targets, "L")?;
            }
            EnvKind::Pricing => {
                Self::need(&self.price_upper, "price_upper")?;
                Self::need(&self.sigma, "sigma")?;
            }
            EnvKind::Multiarm => {
                Self::need(&self.means, "means")?;
                Self::need(&self.sigma, "sigma")?;
            }
        }
        let algorithm = self.algorithm()?;
        let solver = self.solver()?;
        if horizon < algorithm.t_init {
            return Err(invalid("T", format!("must be at least t_init = {}", algorithm.t_init)));
        }
        // Surface construction errors now rather than inside a worker.
        self.build_env(algorithm.seed)?;
        Ok(Resolved {
            algorithm: algorithm.clone(),
            solver,
            horizon,
            trials,
            seed: algorithm.seed,
        })
    }

    fn space(&self, d_a: usize) -> Result<Space, ConfigError> {
        match self.action_space.unwrap_or(SpaceKind::UnitBall) {
            SpaceKind::UnitBall => Ok(Space::UnitBall),
            SpaceKind::Box => {
                let lo = Self::need(&self.box_lower, "box_lower")?;
                let hi = Self::need(&self.box_upper, "box_upper")?;
                if lo.len() != d_a || hi.len() != d_a {
                    return Err(invalid("box_lower", format!("box bounds must have length d_a = {d_a}")));
                }
                Space::unit_box(DVector::from_vec(lo), DVector::from_vec(hi)).map_err(|e| invalid("box_lower", e))
            }
        }
    }

    /// Environment for the trial with seed `seed`; `Θ*` is drawn from the
    /// same seed.
    pub fn build_env(&self, seed: u64) -> Result<TrialEnv, ConfigError> {
        let env = Self::need(&self.env, "env")?;
        let sigma = Self::need(&self.sigma, "sigma")?;
        let bilinear = |theta: lowrank_bandit::Theta, l: usize| -> Result<BilinearEnv<f64>, ConfigError> {
            BilinearEnv::new(theta, sigma, l, seed).map_err(|e| invalid("sigma", e))
        };
        Ok(match env {
            EnvKind::Lowrank => {
                let (d_a, d_x, r) = (Self::need(&self.d_a, "d_a")?, Self::need(&self.d_x, "d_x")?, Self::need(&self.r, "r")?);
                let diag = Self::need(&self.diag, "diag")?;
                let theta = make_lowrank_theta(d_a, d_x, r, &diag, seed).map_err(|e| invalid("diag", e))?;
                let e = bilinear(theta, Self::need(&self.targets, "L")?)?;
                TrialEnv::Bilinear(e.with_space(self.space(d_a)?).map_err(|e| invalid("action_space", e))?)
            }
            EnvKind::Sparse => {
                let (d_a, d_x, s0) = (Self::need(&self.d_a, "d_a")?, Self::need(&self.d_x, "d_x")?, Self::need(&self.s0, "s0")?);
                let theta = make_sparse_theta(d_a, d_x, s0, seed).map_err(|e| invalid("s0", e))?;
                let e = bilinear(theta, Self::need(&self.targets, "L")?)?;
                TrialEnv::Bilinear(e.with_space(self.space(d_a)?).map_err(|e| invalid("action_space", e))?)
            }
            EnvKind::Multiarm => {
                let means = Self::need(&self.means, "means")?;
                let (theta, _) = reduce_multiarm(&means).map_err(|e| invalid("means", e))?;
                let e = bilinear(theta, self.targets.unwrap_or(1))?
                    .with_contexts(ContextDistribution::Constant(DVector::from_element(1, 1.0)))
                    .map_err(|e| invalid("means", e))?;
                TrialEnv::Bilinear(e.with_space(self.space(means.len())?).map_err(|e| invalid("action_space", e))?)
            }
            EnvKind::Pricing => {
                let (da, db) = reference_pricing_vectors();
                let alpha = self.alpha.clone().unwrap_or(da);
                let beta = self.beta.clone().unwrap_or(db);
                let lower = self.price_lower.unwrap_or(0.0);
                let upper = Self::need(&self.price_upper, "price_upper")?;
                let e = PricingEnv::new(DVector::from_vec(alpha), DVector::from_vec(beta), sigma, lower, upper, seed)
                    .map_err(|e| invalid("alpha", e))?;
                TrialEnv::Pricing(e)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
env = "lowrank"
d_a = 3
d_x = 4
r = 1
diag = [1.0]
sigma = 0.1
L = 2
T = 30
trials = 2
"#;

    #[test]
    fn parses_and_resolves() {
        let cfg = ExperimentConfig::from_toml(BASE).unwrap();
        let r = cfg.resolve().unwrap();
        assert_eq!(r.horizon, 30);
        assert_eq!(r.algorithm.t_init, 10);
        assert_eq!(r.algorithm.lambda0, Lambda0::Auto);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::from_toml(&format!("{BASE}\nbogus_key = 1\n")).unwrap_err();
        assert!(err.0.contains("bogus_key"), "{err}");
    }

    #[test]
    fn missing_key_is_named() {
        let text = BASE.replace("T = 30\n", "");
        let err = ExperimentConfig::from_toml(&text).unwrap().resolve().unwrap_err();
        assert!(err.0.contains("`T`"), "{err}");
        let text = BASE.replace("sigma = 0.1\n", "");
        let err = ExperimentConfig::from_toml(&text).unwrap().resolve().unwrap_err();
        assert!(err.0.contains("`sigma`"), "{err}");
    }

    #[test]
    fn lambda0_forms() {
        let fixed = ExperimentConfig::from_toml(&format!("{BASE}lambda0 = 0.5\n")).unwrap();
        assert_eq!(fixed.algorithm().unwrap().lambda0, Lambda0::Fixed(0.5));
        let auto = ExperimentConfig::from_toml(&format!("{BASE}lambda0 = \"auto\"\n")).unwrap();
        assert_eq!(auto.algorithm().unwrap().lambda0, Lambda0::Auto);
        let bad = ExperimentConfig::from_toml(&format!("{BASE}lambda0 = \"often\"\n")).unwrap();
        assert!(bad.algorithm().unwrap_err().0.contains("lambda0"));
        let neg = ExperimentConfig::from_toml(&format!("{BASE}lambda0 = -1.0\n")).unwrap();
        assert!(neg.algorithm().is_err());
    }

    #[test]
    fn malformed_inputs_are_errors() {
        for text in ["env = 3", "T = \"many\"", "[[x]]", "env = \"nope\"", "d_a = -2", "= 1"] {
            assert!(ExperimentConfig::from_toml(text).is_err(), "{text}");
        }
    }
}
