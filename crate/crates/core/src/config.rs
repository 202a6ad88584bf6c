//! Experiment configuration.
//!
//! Files are `key = value` lines grouped under `[section]` headers; `#`
//! starts a comment. Every key is addressed as `section.key`, which is also
//! the syntax of command-line overrides (`env.sigma=0.5`). Lists are comma
//! separated. Unknown keys are rejected.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `env.features` | `unit_sphere` | `tabular`, `unit_sphere` or `context_arm` |
//! | `env.arms` | `8` | candidates per round (`unit_sphere`), arms (`context_arm`); tabular uses `d` arms |
//! | `env.beta0` | `e1` | `e1`, `ones` (both scaled to `env.beta_norm`) or `fixed` |
//! | `env.beta_values` | | coefficients when `env.beta0 = fixed` |
//! | `env.beta_norm` | `1` | Euclidean norm of `β₀` for `e1`/`ones` |
//! | `env.sigma` | `1` | noise standard deviation |
//! | `env.noise` | `gaussian` | `gaussian` or `rademacher` |
//! | `policy.kind` | `uniform` | `uniform`, `eps_greedy` or `linucb` |
//! | `policy.epsilon` | `0.1` | exploration probability for `eps_greedy` |
//! | `policy.gamma` | `schedule` | LinUCB bonus: `schedule` (`c·d²(σ√(d+ln ln T)+1)`) or a number |
//! | `policy.gamma_scale` | `1` | the constant `c` of the schedule |
//! | `policy.ridge` | `1` | ridge of the policy's design matrix |
//! | `target.rule` | `aligned` | `aligned` (`ν = β₀/‖β₀‖`), `orthogonal`, `e1` or `fixed` |
//! | `target.nu` | | direction when `target.rule = fixed` |
//! | `experiment.horizons` | required | strictly increasing list of `T` |
//! | `experiment.dims` | | list of `d`; crossed with the horizons |
//! | `experiment.dim_rule` | | `frac:a` (`d = ⌊aT⌋`) or `pow:a` (`d = ⌊T^a⌋`); exclusive with `dims` |
//! | `experiment.replications` | `100` | replications per cell |
//! | `experiment.seed` | `0` | master seed |
//! | `experiment.level` | `0.95` | confidence level |
//! | `estimator.lambda_h` | `holdout` | `holdout`, `1/T`, `d/T`, `1/sqrtT` or a number |
//! | `estimator.lambda_alpha` | `1/T` | same choices |
//! | `estimator.variance` | `empirical_if` | `empirical_if` or `quadratic_form` |
//! | `estimator.compare_ols` | `false` | also run the plug-in OLS estimator |
//! | `diagnostics.enabled` | `true` | compute per-replication diagnostics |
//! | `diagnostics.stabilizer` | `auto` | `linucb`, `oracle`, `none`; `auto` picks `linucb` for LinUCB, else `oracle` when `n_mc > 0` |
//! | `diagnostics.form` | `bonus` | LinUCB stabilizer weight: `bonus` (`γ/√(Td)`) or `quartic_root` (`(Td)^{1/4}/√γ`) |
//! | `diagnostics.lindeberg_eps` | `0.01` | Lindeberg threshold |
//! | `diagnostics.n_mc` | `0` | trajectories for the pooled-design oracle (0 disables it) |
//! | `diagnostics.lan_epsilon` | | local parameter of the LAN statistic; needs `n_mc > 0` |

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::diagnostics::LinUcbForm;
use crate::error::{Error, Result};
use crate::estimators::{EstimatorConfig, LambdaRule, TargetSpec, VarianceMethod};
use crate::features::{ContextLaw, Environment, FeatureKind, FeatureMap, NoiseKind};
use crate::linalg::norm;
use crate::policy::{exploration_schedule, PolicyKind, PolicySpec};

const KNOWN_KEYS: &[&str] = &[
    "env.features",
    "env.arms",
    "env.beta0",
    "env.beta_values",
    "env.beta_norm",
    "env.sigma",
    "env.noise",
    "policy.kind",
    "policy.epsilon",
    "policy.gamma",
    "policy.gamma_scale",
    "policy.ridge",
    "target.rule",
    "target.nu",
    "experiment.horizons",
    "experiment.dims",
    "experiment.dim_rule",
    "experiment.replications",
    "experiment.seed",
    "experiment.level",
    "estimator.lambda_h",
    "estimator.lambda_alpha",
    "estimator.variance",
    "estimator.compare_ols",
    "diagnostics.enabled",
    "diagnostics.stabilizer",
    "diagnostics.form",
    "diagnostics.lindeberg_eps",
    "diagnostics.n_mc",
    "diagnostics.lan_epsilon",
];

/// Raw `section.key → value` pairs, before interpretation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse { line: idx + 1, message };
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(format!("unterminated section header {line:?}")))?
                    .trim();
                if name.is_empty() {
                    return Err(err("empty section name".into()));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, found {line:?}")))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(err("empty key".into()));
            }
            let full = if key.contains('.') || section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            if entries.insert(full.clone(), value.trim().to_string()).is_some() {
                return Err(err(format!("duplicate key {full}")));
            }
        }
        Ok(Self { entries })
    }

    /// Applies one `section.key=value` override.
    pub fn set_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override must be key=value, got {assignment:?}")))?;
        let key = key.trim();
        if !key.contains('.') {
            return Err(Error::Config(format!("override key must be section.key, got {key:?}")));
        }
        self.entries.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Canonical text form: sections and keys sorted.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (key, value) in &self.entries {
            let (section, name) = key.split_once('.').unwrap_or(("", key));
            if section != current {
                if !out.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{section}]");
                current = section;
            }
            let _ = writeln!(out, "{name} = {value}");
        }
        out
    }

    fn check_known(&self) -> Result<()> {
        for key in self.entries.keys() {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown key {key}")));
            }
        }
        Ok(())
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}"))),
        }
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        let Some(v) = self.get(key) else { return Ok(None) };
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("{key}: cannot parse list entry {s:?}")))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureFamily {
    Tabular,
    UnitSphere,
    ContextArm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BetaRule {
    E1,
    Ones,
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TargetRule {
    AlignedWithBeta,
    OrthogonalToBeta,
    /// `ν = e₁`, the first coefficient.
    FirstCoordinate,
    FixedVector(Vec<f64>),
}

impl TargetRule {
    pub fn label(&self) -> &'static str {
        match self {
            TargetRule::AlignedWithBeta => "aligned",
            TargetRule::OrthogonalToBeta => "orthogonal",
            TargetRule::FirstCoordinate => "e1",
            TargetRule::FixedVector(_) => "fixed",
        }
    }

    pub fn resolve(&self, beta0: &[f64]) -> Result<TargetSpec> {
        let label = self.label();
        match self {
            TargetRule::AlignedWithBeta => {
                let b = norm(beta0);
                if !(b > 0.0) {
                    return Err(Error::ZeroSignal);
                }
                TargetSpec::new(beta0.iter().map(|x| x / b).collect(), label)
            }
            TargetRule::OrthogonalToBeta => {
                let d = beta0.len();
                let b = norm(beta0);
                if d < 2 {
                    return Err(Error::Config("an orthogonal target needs d >= 2".into()));
                }
                if !(b > 0.0) {
                    return Err(Error::ZeroSignal);
                }
                // Gram-Schmidt on the coordinate axis least aligned with β₀.
                let e: Vec<f64> = beta0.iter().map(|x| x / b).collect();
                let j = (0..d)
                    .min_by(|&a, &c| e[a].abs().total_cmp(&e[c].abs()))
                    .expect("d >= 2");
                let mut nu: Vec<f64> = e.iter().map(|x| -e[j] * x).collect();
                nu[j] += 1.0;
                let n = norm(&nu);
                TargetSpec::new(nu.iter().map(|x| x / n).collect(), label)
            }
            TargetRule::FirstCoordinate => {
                let mut nu = vec![0.0; beta0.len()];
                nu[0] = 1.0;
                TargetSpec::new(nu, label)
            }
            TargetRule::FixedVector(v) => {
                if v.len() != beta0.len() {
                    return Err(Error::Config(format!(
                        "target.nu has {} entries but d = {}",
                        v.len(),
                        beta0.len()
                    )));
                }
                TargetSpec::new(v.clone(), label)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GammaRule {
    Schedule { scale: f64 },
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DimRule {
    Frac(f64),
    Pow(f64),
}

impl DimRule {
    pub fn apply(&self, horizon: usize) -> usize {
        let t = horizon as f64;
        match *self {
            DimRule::Frac(a) => (a * t).floor() as usize,
            DimRule::Pow(a) => t.powf(a).floor() as usize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StabilizerChoice {
    Auto,
    LinUcb,
    Oracle,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub features: FeatureFamily,
    pub arms: usize,
    pub beta0: BetaRule,
    pub beta_norm: f64,
    pub sigma: f64,
    pub noise: NoiseKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub kind: String,
    pub epsilon: f64,
    pub gamma: GammaRule,
    pub ridge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsConfig {
    pub enabled: bool,
    pub stabilizer: StabilizerChoice,
    pub form: LinUcbForm,
    pub lindeberg_eps: f64,
    pub n_mc: usize,
    pub lan_epsilon: Option<f64>,
}

/// A fully resolved experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    pub target: TargetRule,
    pub horizons: Vec<usize>,
    pub dims: Option<Vec<usize>>,
    pub dim_rule: Option<DimRule>,
    pub replications: usize,
    pub master_seed: u64,
    pub estimator: EstimatorConfig,
    pub compare_ols: bool,
    pub diagnostics: DiagnosticsConfig,
}

/// One `(T, d)` cell of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub id: u64,
    pub horizon: usize,
    pub dim: usize,
}

impl ExperimentConfig {
    pub fn from_text(text: &str, overrides: &[String]) -> Result<(Self, ConfigMap)> {
        let mut map = ConfigMap::parse(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            map.set_override(o)?;
        }
        let cfg = Self::from_map(&map)?;
        Ok((cfg, map))
    }

    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        map.check_known()?;
        let cfg_err = |m: String| Err(Error::Config(m));

        let features = match map.get("env.features").unwrap_or("unit_sphere") {
            "tabular" => FeatureFamily::Tabular,
            "unit_sphere" => FeatureFamily::UnitSphere,
            "context_arm" => FeatureFamily::ContextArm,
            other => return cfg_err(format!("env.features: unknown family {other:?}")),
        };
        let beta0 = match map.get("env.beta0").unwrap_or("e1") {
            "e1" => BetaRule::E1,
            "ones" => BetaRule::Ones,
            "fixed" => BetaRule::Fixed(
                map.list("env.beta_values")?
                    .ok_or_else(|| Error::Config("env.beta0 = fixed needs env.beta_values".into()))?,
            ),
            other => return cfg_err(format!("env.beta0: unknown rule {other:?}")),
        };
        let noise = match map.get("env.noise").unwrap_or("gaussian") {
            "gaussian" => NoiseKind::Gaussian,
            "rademacher" => NoiseKind::BoundedRademacherScaled,
            other => return cfg_err(format!("env.noise: unknown kind {other:?}")),
        };
        let env = EnvConfig {
            features,
            arms: map.parsed("env.arms", 8usize)?,
            beta0,
            beta_norm: map.parsed("env.beta_norm", 1.0)?,
            sigma: map.parsed("env.sigma", 1.0)?,
            noise,
        };
        if !(env.sigma >= 0.0) || !env.sigma.is_finite() {
            return cfg_err("env.sigma must be finite and nonnegative".into());
        }
        if env.arms == 0 {
            return cfg_err("env.arms must be positive".into());
        }

        let kind = map.get("policy.kind").unwrap_or("uniform").to_string();
        if !["uniform", "eps_greedy", "linucb"].contains(&kind.as_str()) {
            return cfg_err(format!("policy.kind: unknown policy {kind:?}"));
        }
        let gamma = match map.get("policy.gamma").unwrap_or("schedule") {
            "schedule" => GammaRule::Schedule {
                scale: map.parsed("policy.gamma_scale", 1.0)?,
            },
            v => GammaRule::Fixed(
                v.parse()
                    .map_err(|_| Error::Config(format!("policy.gamma: cannot parse {v:?}")))?,
            ),
        };
        let policy = PolicyConfig {
            kind,
            epsilon: map.parsed("policy.epsilon", 0.1)?,
            gamma,
            ridge: map.parsed("policy.ridge", 1.0)?,
        };

        let target = match map.get("target.rule").unwrap_or("aligned") {
            "aligned" => TargetRule::AlignedWithBeta,
            "orthogonal" => TargetRule::OrthogonalToBeta,
            "e1" => TargetRule::FirstCoordinate,
            "fixed" => TargetRule::FixedVector(
                map.list("target.nu")?
                    .ok_or_else(|| Error::Config("target.rule = fixed needs target.nu".into()))?,
            ),
            other => return cfg_err(format!("target.rule: unknown rule {other:?}")),
        };

        let horizons: Vec<usize> = map
            .list("experiment.horizons")?
            .ok_or_else(|| Error::Config("experiment.horizons is required".into()))?;
        if horizons.is_empty() || horizons.windows(2).any(|w| w[0] >= w[1]) {
            return cfg_err("experiment.horizons must be nonempty and strictly increasing".into());
        }
        if horizons[0] == 0 {
            return cfg_err("experiment.horizons must be positive".into());
        }
        let dims: Option<Vec<usize>> = map.list("experiment.dims")?;
        let dim_rule = match map.get("experiment.dim_rule") {
            None => None,
            Some(v) => {
                let (kind, a) = v.split_once(':').ok_or_else(|| {
                    Error::Config(format!("experiment.dim_rule: expected frac:a or pow:a, got {v:?}"))
                })?;
                let a: f64 = a
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("experiment.dim_rule: bad exponent in {v:?}")))?;
                Some(match kind.trim() {
                    "frac" => DimRule::Frac(a),
                    "pow" => DimRule::Pow(a),
                    _ => return cfg_err(format!("experiment.dim_rule: unknown rule {v:?}")),
                })
            }
        };
        match (&dims, &dim_rule) {
            (Some(_), Some(_)) => return cfg_err("set only one of experiment.dims and experiment.dim_rule".into()),
            (None, None) => return cfg_err("one of experiment.dims or experiment.dim_rule is required".into()),
            _ => {}
        }
        let replications = map.parsed("experiment.replications", 100usize)?;
        if replications == 0 {
            return cfg_err("experiment.replications must be at least 1".into());
        }
        let level: f64 = map.parsed("experiment.level", 0.95)?;
        if !(level > 0.0 && level < 1.0) {
            return cfg_err("experiment.level must lie in (0, 1)".into());
        }
        let estimator = EstimatorConfig {
            lambda_h: LambdaRule::parse(map.get("estimator.lambda_h").unwrap_or("holdout"))?,
            lambda_alpha: LambdaRule::parse(map.get("estimator.lambda_alpha").unwrap_or("1/T"))?,
            variance: VarianceMethod::parse(map.get("estimator.variance").unwrap_or("empirical_if"))?,
            level,
        };

        let stabilizer = match map.get("diagnostics.stabilizer").unwrap_or("auto") {
            "auto" => StabilizerChoice::Auto,
            "linucb" => StabilizerChoice::LinUcb,
            "oracle" => StabilizerChoice::Oracle,
            "none" => StabilizerChoice::None,
            other => return cfg_err(format!("diagnostics.stabilizer: unknown choice {other:?}")),
        };
        let form = match map.get("diagnostics.form").unwrap_or("bonus") {
            "bonus" => LinUcbForm::Bonus,
            "quartic_root" => LinUcbForm::QuarticRoot,
            other => return cfg_err(format!("diagnostics.form: unknown form {other:?}")),
        };
        let lan_epsilon = match map.get("diagnostics.lan_epsilon") {
            None => None,
            Some(v) => Some(
                v.parse::<f64>()
                    .map_err(|_| Error::Config(format!("diagnostics.lan_epsilon: cannot parse {v:?}")))?,
            ),
        };
        let diagnostics = DiagnosticsConfig {
            enabled: map.parsed("diagnostics.enabled", true)?,
            stabilizer,
            form,
            lindeberg_eps: map.parsed("diagnostics.lindeberg_eps", 0.01)?,
            n_mc: map.parsed("diagnostics.n_mc", 0usize)?,
            lan_epsilon,
        };
        if diagnostics.lan_epsilon.is_some() && diagnostics.n_mc == 0 {
            return cfg_err("diagnostics.lan_epsilon needs diagnostics.n_mc > 0".into());
        }
        if stabilizer == StabilizerChoice::LinUcb && policy.kind != "linucb" {
            return cfg_err("diagnostics.stabilizer = linucb needs policy.kind = linucb".into());
        }
        if stabilizer == StabilizerChoice::Oracle && diagnostics.n_mc == 0 {
            return cfg_err("diagnostics.stabilizer = oracle needs diagnostics.n_mc > 0".into());
        }

        let cfg = Self {
            env,
            policy,
            target,
            horizons,
            dims,
            dim_rule,
            replications,
            master_seed: map.parsed("experiment.seed", 0u64)?,
            estimator,
            compare_ols: map.parsed("estimator.compare_ols", false)?,
            diagnostics,
        };
        cfg.validate_cells()?;
        Ok(cfg)
    }

    /// Grid cells in execution order: horizons outer, dimensions inner.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &horizon in &self.horizons {
            let dims = match (&self.dims, &self.dim_rule) {
                (Some(ds), _) => ds.clone(),
                (None, Some(rule)) => vec![rule.apply(horizon)],
                (None, None) => Vec::new(),
            };
            for dim in dims {
                out.push(Cell {
                    id: out.len() as u64,
                    horizon,
                    dim,
                });
            }
        }
        out
    }

    /// Resolves every cell up front so bad grids fail before any work.
    fn validate_cells(&self) -> Result<()> {
        for cell in self.cells() {
            let env = self.environment(cell.dim)?;
            self.target
                .resolve(&env.beta0)
                .map_err(|e| Error::Config(e.to_string()))?;
            self.policy_spec(cell)?;
        }
        Ok(())
    }

    pub fn beta0(&self, dim: usize) -> Result<Vec<f64>> {
        if dim == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        let b = self.env.beta_norm;
        Ok(match &self.env.beta0 {
            BetaRule::E1 => {
                let mut v = vec![0.0; dim];
                v[0] = b;
                v
            }
            BetaRule::Ones => vec![b / (dim as f64).sqrt(); dim],
            BetaRule::Fixed(v) => {
                if v.len() != dim {
                    return Err(Error::Config(format!(
                        "env.beta_values has {} entries but d = {dim}",
                        v.len()
                    )));
                }
                v.clone()
            }
        })
    }

    pub fn environment(&self, dim: usize) -> Result<Environment> {
        let kind = match self.env.features {
            FeatureFamily::Tabular => FeatureKind::TabularArms { arms: dim },
            FeatureFamily::UnitSphere => FeatureKind::UnitSphereArms {
                dim,
                arms: self.env.arms,
            },
            FeatureFamily::ContextArm => {
                let arms = self.env.arms;
                if !dim.is_multiple_of(arms) {
                    return Err(Error::Config(format!(
                        "context_arm features need d divisible by env.arms ({dim} vs {arms})"
                    )));
                }
                FeatureKind::ContextArmBasis {
                    arms,
                    contexts: ContextLaw::UniformSphere(dim / arms),
                }
            }
        };
        let fm = FeatureMap::new(kind).map_err(|e| Error::Config(e.to_string()))?;
        Environment::new(fm, self.beta0(dim)?, self.env.sigma, self.env.noise).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn policy_spec(&self, cell: Cell) -> Result<PolicySpec> {
        let kind = match self.policy.kind.as_str() {
            "uniform" => PolicyKind::Uniform,
            "eps_greedy" => PolicyKind::EpsilonGreedy {
                epsilon: self.policy.epsilon,
            },
            _ => {
                let gamma = match self.policy.gamma {
                    GammaRule::Fixed(g) => g,
                    GammaRule::Schedule { scale } => {
                        if cell.horizon < 3 {
                            return Err(Error::Config("the LinUCB schedule needs T >= 3".into()));
                        }
                        exploration_schedule(cell.horizon, cell.dim, self.env.sigma, scale)
                    }
                };
                PolicyKind::LinUcb { gamma }
            }
        };
        let spec = PolicySpec {
            kind,
            ridge_reg: self.policy.ridge,
        };
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn stabilizer_choice(&self) -> StabilizerChoice {
        match self.diagnostics.stabilizer {
            StabilizerChoice::Auto if self.policy.kind == "linucb" => StabilizerChoice::LinUcb,
            StabilizerChoice::Auto if self.diagnostics.n_mc > 0 => StabilizerChoice::Oracle,
            StabilizerChoice::Auto => StabilizerChoice::None,
            other => other,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "
# classical mean
[env]
features = tabular
sigma = 1.0

[policy]
kind = uniform

[experiment]
horizons = 400
dims = 1
replications = 20
seed = 7
";

    #[test]
    fn parses_and_resolves() {
        let (cfg, map) = ExperimentConfig::from_text(BASE, &[]).unwrap();
        assert_eq!(cfg.horizons, vec![400]);
        assert_eq!(cfg.cells().len(), 1);
        assert_eq!(cfg.master_seed, 7);
        assert_eq!(map.get("env.features"), Some("tabular"));
        assert_eq!(cfg.estimator, EstimatorConfig::default());
        let env = cfg.environment(1).unwrap();
        assert_eq!(env.beta0, vec![1.0]);
    }

    #[test]
    fn overrides_and_round_trip() {
        let overrides = vec!["env.sigma=0.25".to_string(), "experiment.horizons=10,20".to_string()];
        let (cfg, map) = ExperimentConfig::from_text(BASE, &overrides).unwrap();
        assert_eq!(cfg.env.sigma, 0.25);
        assert_eq!(cfg.horizons, vec![10, 20]);
        let (again, _) = ExperimentConfig::from_text(&map.to_text(), &[]).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn fail_fast() {
        let bad = |o: &str| ExperimentConfig::from_text(BASE, &[o.to_string()]).unwrap_err();
        assert!(matches!(bad("experiment.horizons=20,10"), Error::Config(_)));
        assert!(matches!(bad("experiment.replications=0"), Error::Config(_)));
        assert!(matches!(bad("env.colour=red"), Error::Config(_)));
        assert!(matches!(bad("policy.kind=thompson"), Error::Config(_)));
        assert!(matches!(bad("target.rule=orthogonal"), Error::Config(_))); // d = 1
        assert!(matches!(bad("experiment.dim_rule=frac:0.5"), Error::Config(_))); // both set
        assert!(matches!(bad("diagnostics.lan_epsilon=1"), Error::Config(_)));
        assert!(ExperimentConfig::from_text("[env\nx=1", &[]).is_err());
        assert!(ExperimentConfig::from_text("[env]\njunk", &[]).is_err());
    }

    #[test]
    fn dim_rules() {
        let (cfg, _) = ExperimentConfig::from_text(
            "[env]\nfeatures=unit_sphere\n[experiment]\nhorizons=400,900\ndim_rule=frac:0.5\n",
            &[],
        )
        .unwrap();
        let dims: Vec<usize> = cfg.cells().iter().map(|c| c.dim).collect();
        assert_eq!(dims, vec![200, 450]);
        assert_eq!(DimRule::Pow(0.5).apply(900), 30);
    }

    #[test]
    fn target_rules() {
        let beta = [3.0, 4.0, 0.0];
        let a = TargetRule::AlignedWithBeta.resolve(&beta).unwrap();
        assert!((a.nu[0] - 0.6).abs() < 1e-15 && (a.nu[1] - 0.8).abs() < 1e-15);
        let o = TargetRule::OrthogonalToBeta.resolve(&beta).unwrap();
        assert!(crate::linalg::dot(&o.nu, &beta).abs() < 1e-14);
        assert!((norm(&o.nu) - 1.0).abs() < 1e-14);
        assert!(TargetRule::FixedVector(vec![1.0]).resolve(&beta).is_err());
        let e = TargetRule::FirstCoordinate.resolve(&beta).unwrap();
        assert_eq!(e.value(&beta), 3.0);
    }

    #[test]
    fn linucb_schedule_per_cell() {
        let (cfg, _) = ExperimentConfig::from_text(
            "[policy]\nkind=linucb\ngamma_scale=0.5\n[env]\nsigma=0.2\n[experiment]\nhorizons=100,1000\ndims=4\n",
            &[],
        )
        .unwrap();
        let cells = cfg.cells();
        let g0 = cfg.policy_spec(cells[0]).unwrap().gamma().unwrap();
        let g1 = cfg.policy_spec(cells[1]).unwrap().gamma().unwrap();
        assert!((g0 - exploration_schedule(100, 4, 0.2, 0.5)).abs() < 1e-15);
        assert!(g1 > g0);
        assert_eq!(cfg.stabilizer_choice(), StabilizerChoice::LinUcb);
    }
}
