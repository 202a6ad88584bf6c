//! Ridge nuisance fits, the one-step estimator of `ψ = νᵀβ`, the plug-in
//! OLS baseline and their standard errors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, effective_dimension, norm, quadratic_form, ridge_solve, SymMatrix};
use crate::stats::two_sided_z;
use crate::trajectory::{cross_of_rounds, empirical_cross, empirical_gram, gram_of_rounds, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub nu: Vec<f64>,
    pub label: String,
}

impl TargetSpec {
    pub fn new(nu: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        let n = norm(&nu);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidSpec("target direction must be finite and nonzero".into()));
        }
        Ok(Self {
            nu,
            label: label.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.nu.len()
    }

    /// `ψ = νᵀβ`.
    pub fn value(&self, beta: &[f64]) -> f64 {
        dot(&self.nu, beta)
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if self.nu.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.nu.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeFit {
    pub beta_hat: Vec<f64>,
    pub lambda_h: f64,
    pub gram: SymMatrix,
    pub in_sample_mse: f64,
}

impl RidgeFit {
    pub fn predict(&self, feature: &[f64]) -> f64 {
        dot(&self.beta_hat, feature)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RieszFit {
    /// `w = (Σ̂ + λ_α I)⁻¹ ν`, so that `α̂(z) = wᵀφ(z)`.
    pub weight_vector: Vec<f64>,
    pub lambda_alpha: f64,
    /// `wᵀΣ̂w = ‖α̂‖²` in the empirical norm.
    pub empirical_sq_norm: f64,
}

impl RieszFit {
    pub fn evaluate(&self, feature: &[f64]) -> f64 {
        dot(&self.weight_vector, feature)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum VarianceMethod {
    /// `σ̂ √(wᵀΣ̂w) / √T`.
    QuadraticForm,
    /// `√((1/T²) Σ α̂(Z_t)² (Y_t − ĥ(Z_t))²)`.
    #[default]
    EmpiricalIF,
}

impl VarianceMethod {
    pub fn label(self) -> &'static str {
        match self {
            VarianceMethod::QuadraticForm => "quadratic_form",
            VarianceMethod::EmpiricalIF => "empirical_if",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "quadratic_form" | "QuadraticForm" => Ok(VarianceMethod::QuadraticForm),
            "empirical_if" | "EmpiricalIF" => Ok(VarianceMethod::EmpiricalIF),
            _ => Err(Error::Config(format!("unknown variance method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub seed: u64,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub d: usize,
    pub policy: String,
    pub lambda_h: f64,
    pub lambda_alpha: f64,
    pub psi_hat: f64,
    pub psi_plugin: f64,
    pub correction: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// NaN when the residual degrees of freedom are exhausted and the
    /// chosen variance method does not need it.
    pub sigma_hat: f64,
    pub variance_method: VarianceMethod,
}

pub const CSV_HEADER: &str =
    "seed,T,d,policy,lambda_h,lambda_alpha,psi_hat,psi_plugin,correction,se,ci_low,ci_high,sigma_hat,variance_method";

impl EstimateReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
            self.seed,
            self.horizon,
            self.d,
            self.policy,
            self.lambda_h,
            self.lambda_alpha,
            self.psi_hat,
            self.psi_plugin,
            self.correction,
            self.se,
            self.ci_low,
            self.ci_high,
            self.sigma_hat,
            self.variance_method.label()
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.ci_low <= truth && truth <= self.ci_high
    }
}

/// How a ridge level is chosen from a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LambdaRule {
    Fixed(f64),
    /// `1/T`
    InverseT,
    /// `d/T`
    DimOverT,
    /// `1/√T`
    InverseSqrtT,
    /// Grid `{1/T, d/T, 1/√T}` scored by a causal holdout: fit on the first
    /// half of the rounds, evaluate squared error on the second half.
    Holdout,
}

impl LambdaRule {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "holdout" => Ok(LambdaRule::Holdout),
            "1/T" => Ok(LambdaRule::InverseT),
            "d/T" => Ok(LambdaRule::DimOverT),
            "1/sqrtT" => Ok(LambdaRule::InverseSqrtT),
            other => match other.parse::<f64>() {
                Ok(v) if v >= 0.0 && v.is_finite() => Ok(LambdaRule::Fixed(v)),
                _ => Err(Error::Config(format!(
                    "ridge rule must be holdout, 1/T, d/T, 1/sqrtT or a nonnegative number, got {other:?}"
                ))),
            },
        }
    }

    pub fn label(&self) -> String {
        match self {
            LambdaRule::Fixed(v) => format!("{v}"),
            LambdaRule::InverseT => "1/T".into(),
            LambdaRule::DimOverT => "d/T".into(),
            LambdaRule::InverseSqrtT => "1/sqrtT".into(),
            LambdaRule::Holdout => "holdout".into(),
        }
    }

    /// Resolves the rule to a number for `traj`.
    pub fn resolve(&self, traj: &Trajectory) -> Result<f64> {
        let t = traj.horizon() as f64;
        let d = traj.dim as f64;
        Ok(match *self {
            LambdaRule::Fixed(v) => v,
            LambdaRule::InverseT => 1.0 / t,
            LambdaRule::DimOverT => d / t,
            LambdaRule::InverseSqrtT => 1.0 / t.sqrt(),
            LambdaRule::Holdout => holdout_lambda(traj)?,
        })
    }
}

/// Estimator settings; the defaults are a holdout-chosen `λ_h`,
/// `λ_α = 1/T`, the empirical influence-function standard error and 95%
/// intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub lambda_h: LambdaRule,
    pub lambda_alpha: LambdaRule,
    pub variance: VarianceMethod,
    pub level: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            lambda_h: LambdaRule::Holdout,
            lambda_alpha: LambdaRule::InverseT,
            variance: VarianceMethod::EmpiricalIF,
            level: 0.95,
        }
    }
}

/// Grid search for `λ_h` over `{1/T, d/T, 1/√T}` by causal holdout. Falls
/// back to `1/T` when `T < 4`.
pub fn holdout_lambda(traj: &Trajectory) -> Result<f64> {
    let t = traj.horizon();
    let tf = t as f64;
    let d = traj.dim as f64;
    if t < 4 {
        return Ok(1.0 / tf);
    }
    let split = t / 2;
    let gram = gram_of_rounds(traj, 0..split);
    let cross = cross_of_rounds(traj, 0..split);
    let mut best = (f64::INFINITY, 1.0 / tf);
    for lambda in [1.0 / tf, d / tf, 1.0 / tf.sqrt()] {
        let beta = ridge_solve(&gram, &cross, lambda)?;
        let err: f64 = traj.observations[split..]
            .iter()
            .map(|o| (o.outcome - dot(&beta, &o.feature)).powi(2))
            .sum();
        if err < best.0 {
            best = (err, lambda);
        }
    }
    Ok(best.1)
}

/// `β̂ = (Σ̂ + λ_h I)⁻¹ Σ̂_ZY`.
pub fn fit_outcome_ridge(traj: &Trajectory, lambda_h: f64) -> Result<RidgeFit> {
    fit_outcome_with(traj, empirical_gram(traj), &empirical_cross(traj), lambda_h)
}

fn fit_outcome_with(traj: &Trajectory, gram: SymMatrix, cross: &[f64], lambda_h: f64) -> Result<RidgeFit> {
    let beta_hat = ridge_solve(&gram, cross, lambda_h)?;
    let in_sample_mse = if traj.horizon() == 0 {
        0.0
    } else {
        traj.observations
            .iter()
            .map(|o| (o.outcome - dot(&beta_hat, &o.feature)).powi(2))
            .sum::<f64>()
            / traj.horizon() as f64
    };
    Ok(RidgeFit {
        beta_hat,
        lambda_h,
        gram,
        in_sample_mse,
    })
}

/// `w = (Σ̂ + λ_α I)⁻¹ ν`.
///
/// `λ_α = 0` is accepted for the unregularized comparison and fails with
/// [`Error::SingularSystem`] when `Σ̂` is singular.
pub fn fit_riesz_ridge(traj: &Trajectory, target: &TargetSpec, lambda_alpha: f64) -> Result<RieszFit> {
    fit_riesz_with(&empirical_gram(traj), target, lambda_alpha)
}

pub(crate) fn fit_riesz_with(gram: &SymMatrix, target: &TargetSpec, lambda_alpha: f64) -> Result<RieszFit> {
    target.check_dim(gram.dim())?;
    let weight_vector = ridge_solve(gram, &target.nu, lambda_alpha)?;
    let empirical_sq_norm = quadratic_form(gram, &weight_vector).max(0.0);
    Ok(RieszFit {
        weight_vector,
        lambda_alpha,
        empirical_sq_norm,
    })
}

/// `σ̂² = Σ_t (Y_t − ĥ(Z_t))² / (T − d_eff(λ_h))`, floored at `1e-12`.
/// With `λ_h = 0` the effective dimension is `d`.
pub fn estimate_noise_variance(traj: &Trajectory, fit: &RidgeFit) -> Result<f64> {
    let t = traj.horizon();
    let d_eff = if fit.lambda_h > 0.0 {
        effective_dimension(&fit.gram, fit.lambda_h)
    } else {
        fit.gram.dim() as f64
    };
    let dof = t as f64 - d_eff;
    if !(dof > 0.0) {
        return Err(Error::DegenerateDof {
            horizon: t,
            effective_dim: d_eff,
        });
    }
    let rss = fit.in_sample_mse * t as f64;
    Ok((rss / dof).max(1e-12))
}

/// Standard error of the one-step estimate. `fit` supplies the residuals
/// for [`VarianceMethod::EmpiricalIF`]; `sigma_hat` is used by
/// [`VarianceMethod::QuadraticForm`].
pub fn standard_error(
    traj: &Trajectory,
    riesz: &RieszFit,
    fit: &RidgeFit,
    sigma_hat: f64,
    method: VarianceMethod,
) -> f64 {
    let t = traj.horizon() as f64;
    match method {
        VarianceMethod::QuadraticForm => sigma_hat * riesz.empirical_sq_norm.sqrt() / t.sqrt(),
        VarianceMethod::EmpiricalIF => {
            let s: f64 = traj
                .observations
                .iter()
                .map(|o| {
                    let a = riesz.evaluate(&o.feature);
                    let r = o.outcome - fit.predict(&o.feature);
                    a * a * r * r
                })
                .sum();
            s.sqrt() / t
        }
    }
}

/// One-step estimate at 95% confidence.
pub fn one_step_estimate(
    traj: &Trajectory,
    target: &TargetSpec,
    lambda_h: f64,
    lambda_alpha: f64,
    method: VarianceMethod,
) -> Result<EstimateReport> {
    one_step_estimate_at(traj, target, lambda_h, lambda_alpha, method, 0.95)
}

/// One-step estimate with the ridge levels resolved from `config`.
pub fn one_step_with_config(
    traj: &Trajectory,
    target: &TargetSpec,
    config: &EstimatorConfig,
) -> Result<EstimateReport> {
    let lambda_h = config.lambda_h.resolve(traj)?;
    let lambda_alpha = config.lambda_alpha.resolve(traj)?;
    one_step_estimate_at(traj, target, lambda_h, lambda_alpha, config.variance, config.level)
}

/// `ψ̂ = νᵀβ̂ + (1/T) Σ_t α̂(Z_t)(Y_t − ĥ(Z_t))` with a normal interval at
/// confidence `level`.
pub fn one_step_estimate_at(
    traj: &Trajectory,
    target: &TargetSpec,
    lambda_h: f64,
    lambda_alpha: f64,
    method: VarianceMethod,
    level: f64,
) -> Result<EstimateReport> {
    target.check_dim(traj.dim)?;
    if traj.horizon() == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let gram = empirical_gram(traj);
    let riesz = fit_riesz_with(&gram, target, lambda_alpha)?;
    let fit = fit_outcome_with(traj, gram, &empirical_cross(traj), lambda_h)?;
    let t = traj.horizon() as f64;
    let psi_plugin = target.value(&fit.beta_hat);
    let correction = traj
        .observations
        .iter()
        .map(|o| riesz.evaluate(&o.feature) * (o.outcome - fit.predict(&o.feature)))
        .sum::<f64>()
        / t;
    let sigma_hat = match estimate_noise_variance(traj, &fit) {
        Ok(v) => v.sqrt(),
        Err(e) if method == VarianceMethod::QuadraticForm => return Err(e),
        Err(_) => f64::NAN,
    };
    let se = standard_error(traj, &riesz, &fit, sigma_hat, method);
    Ok(build_report(
        traj,
        lambda_h,
        lambda_alpha,
        psi_plugin,
        correction,
        se,
        sigma_hat,
        method,
        level,
    ))
}

/// Plug-in OLS `νᵀΣ̂⁻¹Σ̂_ZY` with the quadratic-form standard error.
pub fn plugin_ols_estimate(traj: &Trajectory, target: &TargetSpec) -> Result<EstimateReport> {
    target.check_dim(traj.dim)?;
    let gram = empirical_gram(traj);
    let riesz = fit_riesz_with(&gram, target, 0.0)?;
    let fit = fit_outcome_with(traj, gram, &empirical_cross(traj), 0.0)?;
    let sigma_hat = estimate_noise_variance(traj, &fit)?.sqrt();
    let se = standard_error(traj, &riesz, &fit, sigma_hat, VarianceMethod::QuadraticForm);
    Ok(build_report(
        traj,
        0.0,
        0.0,
        target.value(&fit.beta_hat),
        0.0,
        se,
        sigma_hat,
        VarianceMethod::QuadraticForm,
        0.95,
    ))
}

#[allow(clippy::too_many_arguments)]
fn build_report(
    traj: &Trajectory,
    lambda_h: f64,
    lambda_alpha: f64,
    psi_plugin: f64,
    correction: f64,
    se: f64,
    sigma_hat: f64,
    method: VarianceMethod,
    level: f64,
) -> EstimateReport {
    let psi_hat = psi_plugin + correction;
    let half = two_sided_z(level) * se;
    EstimateReport {
        seed: traj.seed,
        horizon: traj.horizon(),
        d: traj.dim,
        policy: traj.policy_label().to_string(),
        lambda_h,
        lambda_alpha,
        psi_hat,
        psi_plugin,
        correction,
        se,
        ci_low: psi_hat - half,
        ci_high: psi_hat + half,
        sigma_hat,
        variance_method: method,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{Environment, FeatureKind, FeatureMap, NoiseKind};
    use crate::policy::PolicySpec;
    use crate::stats::{median, sample_variance};
    use crate::trajectory::generate_trajectory;

    fn scalar_traj(ys: &[f64]) -> Trajectory {
        Trajectory::from_pairs(vec![vec![1.0]; ys.len()], ys.to_vec()).unwrap()
    }

    fn one() -> TargetSpec {
        TargetSpec::new(vec![1.0], "mean").unwrap()
    }

    fn sphere_env(dim: usize, arms: usize, sigma: f64) -> Environment {
        let fm = FeatureMap::new(FeatureKind::UnitSphereArms { dim, arms }).unwrap();
        let beta = (0..dim).map(|i| 1.0 / (1.0 + i as f64)).collect();
        Environment::new(fm, beta, sigma, NoiseKind::Gaussian).unwrap()
    }

    #[test]
    fn ridge_scalar_examples() {
        assert!((fit_outcome_ridge(&scalar_traj(&[1.0, 2.0, 3.0]), 0.0).unwrap().beta_hat[0] - 2.0).abs() < 1e-14);
        let fit = fit_outcome_ridge(&scalar_traj(&[0.0, 2.0]), 1.0).unwrap();
        assert_eq!(fit.gram.get(0, 0), 1.0);
        assert!((fit.beta_hat[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ridge_solves_normal_equations() {
        let traj = generate_trajectory(&sphere_env(6, 3, 1.0), &PolicySpec::linucb(1.5), 300, 8).unwrap();
        for lambda in [0.0, 1e-3, 0.5] {
            let fit = fit_outcome_ridge(&traj, lambda).unwrap();
            let lhs = fit.gram.with_ridge(lambda).mul_vec(&fit.beta_hat);
            let rhs = empirical_cross(&traj);
            for (a, b) in lhs.iter().zip(&rhs) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn noiseless_recovery() {
        let env = sphere_env(4, 3, 0.0);
        let traj = generate_trajectory(&env, &PolicySpec::uniform(), 50, 1).unwrap();
        let fit = fit_outcome_ridge(&traj, 0.0).unwrap();
        for (b, b0) in fit.beta_hat.iter().zip(&env.beta0) {
            assert!((b - b0).abs() < 1e-8);
        }
        let target = TargetSpec::new(vec![0.3, -1.0, 0.0, 2.0], "t").unwrap();
        let rep = one_step_estimate(&traj, &target, 0.0, 0.0, VarianceMethod::EmpiricalIF).unwrap();
        assert!((rep.psi_hat - target.value(&env.beta0)).abs() < 1e-8);
        assert!(estimate_noise_variance(&traj, &fit).unwrap() <= 1e-10);
    }

    #[test]
    fn riesz_examples() {
        let r = fit_riesz_ridge(&scalar_traj(&[3.0, -1.0]), &one(), 1.0).unwrap();
        assert!((r.weight_vector[0] - 0.5).abs() < 1e-15);
        assert!((r.evaluate(&[1.0]) - 0.5).abs() < 1e-15);

        // identity design from the standard basis
        let r2 = std::f64::consts::SQRT_2;
        let feats = vec![vec![r2, 0.0], vec![0.0, r2], vec![-r2, 0.0], vec![0.0, -r2]];
        let traj = Trajectory::from_pairs(feats, vec![0.0; 4]).unwrap();
        let nu = TargetSpec::new(vec![0.7, -3.0], "t").unwrap();
        let lambda = 0.3;
        let r = fit_riesz_ridge(&traj, &nu, lambda).unwrap();
        for (w, v) in r.weight_vector.iter().zip(&nu.nu) {
            assert!((w - v / (1.0 + lambda)).abs() < 1e-14);
        }
    }

    #[test]
    fn riesz_norm_matches_pointwise() {
        let traj = generate_trajectory(&sphere_env(5, 4, 1.0), &PolicySpec::linucb(2.0), 400, 3).unwrap();
        let target = TargetSpec::new(vec![1.0, 0.5, 0.0, -0.2, 0.1], "t").unwrap();
        let r = fit_riesz_ridge(&traj, &target, 1.0 / 400.0).unwrap();
        let pointwise = traj.features().map(|f| r.evaluate(f).powi(2)).sum::<f64>() / 400.0;
        assert!((r.empirical_sq_norm - pointwise).abs() < 1e-10);
    }

    #[test]
    fn one_step_scalar_examples() {
        let ys = [0.3, 1.9, -0.4, 2.2, 1.0];
        let rep = one_step_estimate(&scalar_traj(&ys), &one(), 0.0, 0.0, VarianceMethod::EmpiricalIF).unwrap();
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        assert!((rep.psi_hat - mean).abs() < 1e-14);
        assert!(rep.correction.abs() < 1e-14);

        let rep = one_step_estimate(&scalar_traj(&[0.0, 2.0]), &one(), 1.0, 1.0, VarianceMethod::EmpiricalIF).unwrap();
        assert!((rep.psi_plugin - 0.5).abs() < 1e-15);
        assert!((rep.correction - 0.25).abs() < 1e-15);
        assert!((rep.psi_hat - 0.75).abs() < 1e-15);
        assert_eq!(rep.psi_hat, rep.psi_plugin + rep.correction);
        assert!(rep.ci_low <= rep.psi_hat && rep.psi_hat <= rep.ci_high);
    }

    #[test]
    fn classical_variance_and_se() {
        let ys = [0.3, 1.9, -0.4, 2.2, 1.0, 0.7];
        let traj = scalar_traj(&ys);
        let fit = fit_outcome_ridge(&traj, 0.0).unwrap();
        let s2 = estimate_noise_variance(&traj, &fit).unwrap();
        assert!((s2 - sample_variance(&ys)).abs() < 1e-13);
        let r = fit_riesz_ridge(&traj, &one(), 0.0).unwrap();
        let se = standard_error(&traj, &r, &fit, s2.sqrt(), VarianceMethod::QuadraticForm);
        assert!((se - s2.sqrt() / 6f64.sqrt()).abs() < 1e-14);
        assert_eq!(standard_error(&traj, &r, &fit, 0.0, VarianceMethod::QuadraticForm), 0.0);
    }

    #[test]
    fn ols_errors_and_scalar_case() {
        let rep = plugin_ols_estimate(&scalar_traj(&[1.0, 4.0, 4.0]), &one()).unwrap();
        assert!((rep.psi_hat - 3.0).abs() < 1e-14);
        let traj = Trajectory::from_pairs(vec![vec![1.0, 0.0]; 5], vec![1.0; 5]).unwrap();
        let target = TargetSpec::new(vec![0.0, 1.0], "t").unwrap();
        assert!(matches!(
            plugin_ols_estimate(&traj, &target),
            Err(Error::SingularSystem { .. })
        ));
    }

    #[test]
    fn degenerate_dof() {
        let traj = Trajectory::from_pairs(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![1.0, 2.0]).unwrap();
        let fit = fit_outcome_ridge(&traj, 0.0).unwrap();
        assert!(matches!(
            estimate_noise_variance(&traj, &fit),
            Err(Error::DegenerateDof { .. })
        ));
    }

    #[test]
    fn one_step_equals_ols_without_regularization() {
        let env = sphere_env(5, 6, 1.0);
        let target = TargetSpec::new(vec![0.2, 1.0, -0.5, 0.0, 0.3], "t").unwrap();
        for seed in 0..20 {
            let traj = generate_trajectory(&env, &PolicySpec::linucb(1.0), 200, seed).unwrap();
            let a = one_step_estimate(&traj, &target, 0.0, 0.0, VarianceMethod::QuadraticForm).unwrap();
            let b = plugin_ols_estimate(&traj, &target).unwrap();
            assert!((a.psi_hat - b.psi_hat).abs() <= 1e-8 * (1.0 + b.psi_hat.abs()));
            assert!((a.se - b.se).abs() <= 1e-10 * b.se);
        }
    }

    #[test]
    fn noise_variance_consistency() {
        let env = sphere_env(5, 4, 1.0);
        let mut qf = Vec::new();
        let mut eif = Vec::new();
        let mut sig = Vec::new();
        let target = TargetSpec::new(vec![1.0, 0.0, 0.0, 0.0, 0.0], "t").unwrap();
        for seed in 0..100 {
            let traj = generate_trajectory(&env, &PolicySpec::uniform(), 5000, seed).unwrap();
            let fit = fit_outcome_ridge(&traj, 1.0 / 5000.0).unwrap();
            let s2 = estimate_noise_variance(&traj, &fit).unwrap();
            sig.push(s2);
            let r = fit_riesz_ridge(&traj, &target, 1.0 / 5000.0).unwrap();
            qf.push(standard_error(
                &traj,
                &r,
                &fit,
                s2.sqrt(),
                VarianceMethod::QuadraticForm,
            ));
            eif.push(standard_error(&traj, &r, &fit, s2.sqrt(), VarianceMethod::EmpiricalIF));
        }
        assert!((median(&sig) - 1.0).abs() < 0.05);
        let (mq, me) = (median(&qf), median(&eif));
        assert!((mq - me).abs() / mq < 0.10, "{mq} vs {me}");
    }

    #[test]
    fn double_ridge_scalar_identity() {
        // φ ≡ c gives Σ̂ = c²; the one-step estimate equals the single ridge
        // fit with λ' = λ_h λ_α / (c² + λ_h + λ_α).
        for c in [1.0, 0.5, 2.0] {
            let ys = [0.4, -1.2, 3.3, 0.9];
            let traj = Trajectory::from_pairs(vec![vec![c]; 4], ys.to_vec()).unwrap();
            let s = c * c;
            for lh in [1e-3, 0.1, 1.0, 5.0] {
                for la in [1e-3, 0.2, 1.0, 3.0] {
                    let rep = one_step_estimate(&traj, &one(), lh, la, VarianceMethod::EmpiricalIF).unwrap();
                    let lp = lh * la / (s + lh + la);
                    let plug = fit_outcome_ridge(&traj, lp).unwrap().beta_hat[0];
                    assert!((rep.psi_hat - plug).abs() < 1e-12, "c={c} lh={lh} la={la}");
                }
            }
        }
    }

    #[test]
    fn holdout_picks_grid_member() {
        let traj = generate_trajectory(&sphere_env(4, 3, 1.0), &PolicySpec::uniform(), 200, 2).unwrap();
        let l = holdout_lambda(&traj).unwrap();
        assert!([1.0 / 200.0, 4.0 / 200.0, 1.0 / 200f64.sqrt()].contains(&l));
        assert_eq!(holdout_lambda(&scalar_traj(&[1.0, 2.0, 3.0])).unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn csv_and_json_shape() {
        let rep = one_step_estimate(
            &scalar_traj(&[0.0, 2.0, 1.0]),
            &one(),
            0.5,
            0.5,
            VarianceMethod::EmpiricalIF,
        )
        .unwrap();
        assert_eq!(rep.csv_row().split(',').count(), CSV_HEADER.split(',').count());
        let v: serde_json::Value = serde_json::from_str(&rep.to_json()).unwrap();
        assert_eq!(v["T"], 3);
        assert_eq!(v["variance_method"], "EmpiricalIF");
        assert!(LambdaRule::parse("-1").is_err());
        assert_eq!(LambdaRule::parse("d/T").unwrap(), LambdaRule::DimOverT);
    }
}
