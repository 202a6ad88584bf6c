//! Stability and regularity diagnostics for adaptively collected data.
//!
//! Everything here is simulation-side: the true `β₀` and noise scale `σ`
//! are passed in explicitly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{fit_outcome_ridge, fit_riesz_with, RidgeFit, TargetSpec};
use crate::linalg::{
    dot, norm, quadratic_form, ridge_solve, sub, sym_eigendecomposition, Cholesky, SymMatrix, DEFAULT_RANK_TOL,
};
use crate::stats::{median, normal_pdf, normal_sf};
use crate::trajectory::{empirical_gram, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StabilizerSource {
    LinUcbFormula,
    OracleSigmaBar,
    UserSupplied,
}

/// Which off-signal weight the LinUCB stabilizer uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LinUcbForm {
    /// `P⋆ + γ/√(Td) · P⊥`, consistent with the closed form of `σ̃²`.
    #[default]
    Bonus,
    /// `P⋆ + (Td)^{1/4} γ^{-1/2} · P⊥`. This is the square root of the
    /// inverse weight of `Bonus` and is kept only for comparison.
    QuarticRoot,
}

/// A deterministic positive definite `Σ̃_T` against which `Σ̂_T` is compared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilizerMatrix {
    pub sigma_tilde_mat: SymMatrix,
    pub source: StabilizerSource,
    pub form: Option<LinUcbForm>,
}

impl StabilizerMatrix {
    pub fn new(mat: SymMatrix, source: StabilizerSource) -> Result<Self> {
        Cholesky::new(&mat)?;
        Ok(Self {
            sigma_tilde_mat: mat,
            source,
            form: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.sigma_tilde_mat.dim()
    }

    /// `Σ̃⁻¹ b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        Cholesky::new(&self.sigma_tilde_mat)
            .expect("stabilizer is positive definite by construction")
            .solve(b)
    }

    /// Free-text caveat carried into reports.
    pub fn note(&self) -> &'static str {
        match self.form {
            Some(LinUcbForm::QuarticRoot) => {
                "linucb quartic-root weight (Td)^(1/4)/sqrt(gamma); inconsistent with sigma_tilde closed form"
            }
            Some(LinUcbForm::Bonus) => "linucb weight gamma/sqrt(Td)",
            None => "",
        }
    }
}

/// `Σ̃ = P⋆ + (γ/√(Td)) P⊥` with `P⋆` the projector onto `β₀`.
pub fn linucb_target_matrix(beta0: &[f64], horizon: usize, dim: usize, gamma: f64) -> Result<StabilizerMatrix> {
    linucb_target_matrix_with(beta0, horizon, dim, gamma, LinUcbForm::Bonus)
}

pub fn linucb_target_matrix_with(
    beta0: &[f64],
    horizon: usize,
    dim: usize,
    gamma: f64,
    form: LinUcbForm,
) -> Result<StabilizerMatrix> {
    if beta0.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: beta0.len(),
        });
    }
    if horizon < 1 || dim < 2 || !(gamma > 0.0) {
        return Err(Error::InvalidSpec(
            "stabilizer needs T >= 1, d >= 2 and gamma > 0".into(),
        ));
    }
    let b = norm(beta0);
    if !(b > 0.0) {
        return Err(Error::ZeroSignal);
    }
    let td = horizon as f64 * dim as f64;
    let perp = match form {
        LinUcbForm::Bonus => gamma / td.sqrt(),
        LinUcbForm::QuarticRoot => td.powf(0.25) / gamma.sqrt(),
    };
    let e1: Vec<f64> = beta0.iter().map(|x| x / b).collect();
    // P⋆ + w P⊥ = w I + (1 − w) e₁e₁ᵀ
    let mut mat = SymMatrix::identity(dim).scaled(perp);
    mat.add_outer(&e1, 1.0 - perp);
    let mut stab = StabilizerMatrix::new(mat, StabilizerSource::LinUcbFormula)?;
    stab.form = Some(form);
    Ok(stab)
}

/// `σ̃ = σ √(νᵀΣ̃⁻¹ν)`.
pub fn sigma_tilde(target: &TargetSpec, stab: &StabilizerMatrix, sigma: f64) -> f64 {
    sigma * dot(&target.nu, &stab.solve(&target.nu)).max(0.0).sqrt()
}

/// `σ̄ = σ √(νᵀΣ̄†ν)`; fails when `ν` leaves the range of `Σ̄` by more than
/// `1e-6·‖ν‖`.
pub fn sigma_bar(target: &TargetSpec, sigma_bar_gram: &SymMatrix, sigma: f64) -> Result<f64> {
    let weights = riesz_weights_pooled(target, sigma_bar_gram)?;
    Ok(sigma * dot(&target.nu, &weights).max(0.0).sqrt())
}

/// `Σ̄†ν`, the weight vector of the pooled Riesz representer
/// `ᾱ(z) = νᵀΣ̄†φ(z)`, with the range check of [`sigma_bar`].
pub fn riesz_weights_pooled(target: &TargetSpec, sigma_bar_gram: &SymMatrix) -> Result<Vec<f64>> {
    if target.dim() != sigma_bar_gram.dim() {
        return Err(Error::DimensionMismatch {
            expected: sigma_bar_gram.dim(),
            got: target.dim(),
        });
    }
    let eig = sym_eigendecomposition(sigma_bar_gram)?;
    let cut = DEFAULT_RANK_TOL * eig.max_value().max(0.0);
    let projected = eig.apply_spectral(&target.nu, cut, |_| 1.0);
    let outside = norm(&sub(&target.nu, &projected));
    if !(outside <= 1e-6 * norm(&target.nu)) {
        return Err(Error::IdentificationFailure { outside });
    }
    Ok(eig.apply_spectral(&target.nu, cut, |l| 1.0 / l))
}

/// `(σ²/σ̃²) νᵀΣ̃⁻¹(Σ̂ − Σ̃)Σ̃⁻¹ν`.
pub fn directional_stability_stat(traj: &Trajectory, target: &TargetSpec, stab: &StabilizerMatrix, sigma: f64) -> f64 {
    directional_stability_from_gram(&empirical_gram(traj), target, stab, sigma)
}

pub fn directional_stability_from_gram(
    gram: &SymMatrix,
    target: &TargetSpec,
    stab: &StabilizerMatrix,
    sigma: f64,
) -> f64 {
    let u = stab.solve(&target.nu);
    let st2 = sigma_tilde(target, stab, sigma).powi(2);
    let diff = gram.sub(&stab.sigma_tilde_mat);
    sigma * sigma / st2 * quadratic_form(&diff, &u)
}

/// The same statistic against the pooled design:
/// `νᵀΣ̄†(Σ̂ − Σ̄)Σ̄†ν / νᵀΣ̄†ν`.
pub fn directional_stability_pooled(gram: &SymMatrix, target: &TargetSpec, sigma_bar_gram: &SymMatrix) -> Result<f64> {
    let u = riesz_weights_pooled(target, sigma_bar_gram)?;
    let scale = dot(&target.nu, &u);
    Ok(quadratic_form(&gram.sub(sigma_bar_gram), &u) / scale)
}

/// `‖α̂ − α̃‖` in the empirical norm, `α̂` the ridge Riesz fit and
/// `α̃(z) = νᵀΣ̃⁻¹φ(z)`. The normalized form divides by `√(νᵀΣ̃⁻¹ν)`, which
/// is `σ̃` at unit noise and makes the ratio free of units.
pub fn riesz_stability_distance(
    traj: &Trajectory,
    target: &TargetSpec,
    lambda_alpha: f64,
    stab: &StabilizerMatrix,
    normalize: bool,
) -> Result<f64> {
    riesz_distance_from_gram(&empirical_gram(traj), target, lambda_alpha, stab, normalize)
}

pub fn riesz_distance_from_gram(
    gram: &SymMatrix,
    target: &TargetSpec,
    lambda_alpha: f64,
    stab: &StabilizerMatrix,
    normalize: bool,
) -> Result<f64> {
    let w_hat = fit_riesz_with(gram, target, lambda_alpha)?.weight_vector;
    let w_tilde = stab.solve(&target.nu);
    let dist = quadratic_form(gram, &sub(&w_hat, &w_tilde)).max(0.0).sqrt();
    Ok(if normalize {
        dist / sigma_tilde(target, stab, 1.0)
    } else {
        dist
    })
}

/// `√((β̂ − β₀)ᵀΣ̂(β̂ − β₀))`.
pub fn outcome_l2_error(fit: &RidgeFit, beta0: &[f64]) -> f64 {
    quadratic_form(&fit.gram, &sub(&fit.beta_hat, beta0)).max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemainderBreakdown {
    pub riesz_err: f64,
    pub outcome_err: f64,
    /// `(w_α̂ − w_α̃)ᵀΣ̂(β̂ − β₀)`; bounded by `riesz_err · outcome_err`.
    pub cross_term: f64,
    /// `|(1/T) νᵀ(Σ̂ + λ_α I)⁻¹(β̂ − β₀)|`.
    pub bias_term: f64,
    pub r_total: f64,
    /// `σ̃/√T`.
    pub threshold: f64,
}

impl RemainderBreakdown {
    pub fn recombine(riesz_err: f64, outcome_err: f64, bias_term: f64, horizon: usize) -> f64 {
        riesz_err * (outcome_err + 1.0 / (horizon as f64).sqrt()) + bias_term
    }

    pub fn ratio(&self) -> f64 {
        self.r_total / self.threshold
    }
}

#[allow(clippy::too_many_arguments)]
pub fn von_mises_remainder(
    traj: &Trajectory,
    target: &TargetSpec,
    lambda_h: f64,
    lambda_alpha: f64,
    stab: &StabilizerMatrix,
    beta0: &[f64],
    sigma: f64,
) -> Result<RemainderBreakdown> {
    let fit = fit_outcome_ridge(traj, lambda_h)?;
    remainder_from_fit(traj.horizon(), &fit, target, lambda_alpha, stab, beta0, sigma)
}

fn remainder_from_fit(
    horizon: usize,
    fit: &RidgeFit,
    target: &TargetSpec,
    lambda_alpha: f64,
    stab: &StabilizerMatrix,
    beta0: &[f64],
    sigma: f64,
) -> Result<RemainderBreakdown> {
    let gram = &fit.gram;
    let w_hat = fit_riesz_with(gram, target, lambda_alpha)?.weight_vector;
    let w_tilde = stab.solve(&target.nu);
    let dw = sub(&w_hat, &w_tilde);
    let db = sub(&fit.beta_hat, beta0);
    let riesz_err = quadratic_form(gram, &dw).max(0.0).sqrt();
    let outcome_err = quadratic_form(gram, &db).max(0.0).sqrt();
    let cross_term = dot(&dw, &gram.mul_vec(&db));
    let t = horizon as f64;
    let bias_term = (dot(&w_hat, &db) / t).abs();
    Ok(RemainderBreakdown {
        riesz_err,
        outcome_err,
        cross_term,
        bias_term,
        r_total: RemainderBreakdown::recombine(riesz_err, outcome_err, bias_term, horizon),
        threshold: sigma_tilde(target, stab, sigma) / t.sqrt(),
    })
}

/// `g(u) = E[ε² 1{|ε| > uσ}]/σ² = 2uφ(u) + 2(1 − Φ(u))` for Gaussian noise.
pub fn truncated_second_moment(u: f64) -> f64 {
    let u = u.abs();
    2.0 * u * normal_pdf(u) + 2.0 * normal_sf(u)
}

/// Conditional Lindeberg sum for Gaussian noise:
/// `Σ_t α̃(Z_t)²σ²/(Tσ̃²) · g(c_t/σ)` with `c_t = √(eps·T·σ̃²)/|α̃(Z_t)|`.
pub fn lindeberg_stat(traj: &Trajectory, target: &TargetSpec, stab: &StabilizerMatrix, sigma: f64, eps: f64) -> f64 {
    let u = stab.solve(&target.nu);
    let st2 = sigma_tilde(target, stab, sigma).powi(2);
    let t = traj.horizon() as f64;
    if !(st2 > 0.0) {
        return 0.0;
    }
    let level = (eps.max(0.0) * t * st2).sqrt();
    traj.features()
        .map(|f| {
            let a = dot(&u, f);
            if a == 0.0 {
                return 0.0;
            }
            let c = level / a.abs();
            a * a * sigma * sigma / (t * st2) * truncated_second_moment(c / sigma)
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnisotropyReport {
    /// `min(‖v − e₁‖, ‖v + e₁‖)` for the top eigenvector `v` of `TΣ̂`.
    pub top_alignment: f64,
    pub bulk_ratio_min: f64,
    pub bulk_ratio_median: f64,
    pub bulk_ratio_max: f64,
    /// `|Tr(TΣ̂) − T|`.
    pub trace_check: f64,
}

/// Spectral shape of `TΣ̂` after a LinUCB run with unit-norm features:
/// top-eigenvector alignment with `β₀`, bulk eigenvalues relative to
/// `√(2γ²T/(d+1))` and the trace identity.
pub fn eigen_anisotropy_report(traj: &Trajectory, beta0: &[f64], gamma: f64) -> Result<AnisotropyReport> {
    const UNIT_TOL: f64 = 1e-9;
    let d = traj.dim;
    if beta0.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: beta0.len(),
        });
    }
    if d < 2 {
        return Err(Error::InvalidSpec("anisotropy needs d >= 2".into()));
    }
    let b = norm(beta0);
    if !(b > 0.0) {
        return Err(Error::ZeroSignal);
    }
    for obs in &traj.observations {
        let n = norm(&obs.feature);
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::NotUnitNorm {
                round: obs.round,
                norm: n,
            });
        }
    }
    let t = traj.horizon() as f64;
    let lambda_hat = empirical_gram(traj).scaled(t);
    let eig = sym_eigendecomposition(&lambda_hat)?;
    let e1: Vec<f64> = beta0.iter().map(|x| x / b).collect();
    let v = &eig.vectors[0];
    let minus = norm(&sub(v, &e1));
    let plus = norm(&v.iter().zip(&e1).map(|(a, c)| a + c).collect::<Vec<_>>());
    let scale = (2.0 * gamma * gamma * t / (d as f64 + 1.0)).sqrt();
    let ratios: Vec<f64> = eig.values[1..].iter().map(|l| l / scale).collect();
    Ok(AnisotropyReport {
        top_alignment: minus.min(plus),
        bulk_ratio_min: ratios.iter().copied().fold(f64::INFINITY, f64::min),
        bulk_ratio_median: median(&ratios),
        bulk_ratio_max: ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        trace_check: (lambda_hat.trace() - t).abs(),
    })
}

/// `d(γ⁸/T)^{(d+1)/(d−1)} + d^{1/4}/√γ`, the bulk-eigenvalue error scale of
/// the large-exploration regime; reported for annotation only.
pub fn epsilon_bulk(dim: usize, horizon: usize, gamma: f64) -> f64 {
    let d = dim as f64;
    let exponent = (d + 1.0) / (d - 1.0);
    d * (gamma.powi(8) / horizon as f64).powf(exponent) + d.powf(0.25) / gamma.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LanStatistic {
    pub value: f64,
    /// Rounds where `1 + (η/2T) ᾱ r` was not positive.
    pub nonpositive_factors: usize,
}

/// Log-likelihood ratio of the least favourable perturbation at local
/// parameter `epsilon`:
/// `Σ_t [2 log|1 + (η/2T) ᾱ(Z_t) r_t| − log(1 + η²σ̄²/(4T²))]`, with
/// `η = ε√T/σ̄`, `r_t = Y_t − φ(Z_t)ᵀβ₀` and `ᾱ(z) = wᵀφ(z)`.
pub fn lan_log_likelihood_ratio(
    traj: &Trajectory,
    sigma_bar: f64,
    alpha_bar_weights: &[f64],
    beta0: &[f64],
    epsilon: f64,
) -> LanStatistic {
    let t = traj.horizon() as f64;
    let eta = epsilon * t.sqrt() / sigma_bar;
    let norm_term = (eta * eta * sigma_bar * sigma_bar / (4.0 * t * t)).ln_1p();
    let mut value = 0.0;
    let mut nonpositive_factors = 0;
    for obs in &traj.observations {
        let r = obs.outcome - dot(&obs.feature, beta0);
        let x = eta / (2.0 * t) * dot(alpha_bar_weights, &obs.feature) * r;
        if 1.0 + x <= 0.0 {
            nonpositive_factors += 1;
        }
        value += 2.0 * x.ln_1p_abs() - norm_term;
    }
    LanStatistic {
        value,
        nonpositive_factors,
    }
}

/// Score `Δ_T = (√T/σ̄)(1/T) Σ_t ᾱ(Z_t) r_t`.
pub fn lan_score(traj: &Trajectory, sigma_bar: f64, alpha_bar_weights: &[f64], beta0: &[f64]) -> f64 {
    let t = traj.horizon() as f64;
    let s: f64 = traj
        .observations
        .iter()
        .map(|o| dot(alpha_bar_weights, &o.feature) * (o.outcome - dot(&o.feature, beta0)))
        .sum();
    s / t.sqrt() / sigma_bar
}

trait Log1pAbs {
    fn ln_1p_abs(self) -> f64;
}

impl Log1pAbs for f64 {
    /// `log|1 + x|`, accurate for small `x`.
    fn ln_1p_abs(self) -> f64 {
        if self > -1.0 {
            self.ln_1p()
        } else {
            (1.0 + self).abs().ln()
        }
    }
}

/// One replication's diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub seed: u64,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub d: usize,
    pub policy: String,
    pub gamma: f64,
    pub ds_stat: f64,
    /// Statistic against the pooled design, when an oracle is supplied.
    pub ds_stat_pooled: Option<f64>,
    pub riesz_dist: f64,
    pub riesz_dist_normalized: f64,
    pub lindeberg: f64,
    pub remainder: RemainderBreakdown,
    pub sigma_tilde: f64,
    pub sigma_bar_mc: Option<f64>,
    pub stabilizer_note: String,
}

pub const STABILITY_CSV_HEADER: &str = "seed,T,d,policy,gamma,ds_stat,ds_stat_pooled,riesz_dist,riesz_dist_normalized,lindeberg,riesz_err,outcome_err,cross_term,bias_term,r_total,threshold,sigma_tilde,sigma_bar_mc";

impl StabilityReport {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:e}"));
        let r = &self.remainder;
        format!(
            "{},{},{},{},{:e},{:e},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
            self.seed,
            self.horizon,
            self.d,
            self.policy,
            self.gamma,
            self.ds_stat,
            opt(self.ds_stat_pooled),
            self.riesz_dist,
            self.riesz_dist_normalized,
            self.lindeberg,
            r.riesz_err,
            r.outcome_err,
            r.cross_term,
            r.bias_term,
            r.r_total,
            r.threshold,
            self.sigma_tilde,
            opt(self.sigma_bar_mc)
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn is_finite(&self) -> bool {
        let r = &self.remainder;
        [
            self.ds_stat,
            self.riesz_dist,
            self.riesz_dist_normalized,
            self.lindeberg,
            r.riesz_err,
            r.outcome_err,
            r.cross_term,
            r.bias_term,
            r.r_total,
            r.threshold,
            self.sigma_tilde,
        ]
        .iter()
        .all(|x| x.is_finite())
    }
}

/// Inputs shared by all replications of a diagnostics run.
#[derive(Debug, Clone)]
pub struct DiagnosticsContext<'a> {
    pub target: &'a TargetSpec,
    pub stab: &'a StabilizerMatrix,
    pub beta0: &'a [f64],
    pub sigma: f64,
    pub lindeberg_eps: f64,
    pub gamma: f64,
    /// Pooled design oracle, if available.
    pub sigma_bar_gram: Option<&'a SymMatrix>,
}

/// Computes every per-trajectory diagnostic in one pass over `Σ̂`.
pub fn stability_report(
    traj: &Trajectory,
    ctx: &DiagnosticsContext<'_>,
    lambda_h: f64,
    lambda_alpha: f64,
) -> Result<StabilityReport> {
    let fit = fit_outcome_ridge(traj, lambda_h)?;
    let gram = &fit.gram;
    let remainder = remainder_from_fit(
        traj.horizon(),
        &fit,
        ctx.target,
        lambda_alpha,
        ctx.stab,
        ctx.beta0,
        ctx.sigma,
    )?;
    let (ds_stat_pooled, sigma_bar_mc) = match ctx.sigma_bar_gram {
        Some(sb) => (
            Some(directional_stability_pooled(gram, ctx.target, sb)?),
            Some(sigma_bar(ctx.target, sb, ctx.sigma)?),
        ),
        None => (None, None),
    };
    Ok(StabilityReport {
        seed: traj.seed,
        horizon: traj.horizon(),
        d: traj.dim,
        policy: traj.policy_label().to_string(),
        gamma: ctx.gamma,
        ds_stat: directional_stability_from_gram(gram, ctx.target, ctx.stab, ctx.sigma),
        ds_stat_pooled,
        riesz_dist: remainder.riesz_err,
        riesz_dist_normalized: remainder.riesz_err / sigma_tilde(ctx.target, ctx.stab, 1.0),
        lindeberg: lindeberg_stat(traj, ctx.target, ctx.stab, ctx.sigma, ctx.lindeberg_eps),
        remainder,
        sigma_tilde: sigma_tilde(ctx.target, ctx.stab, ctx.sigma),
        sigma_bar_mc,
        stabilizer_note: ctx.stab.note().to_string(),
    })
}

/// Weight vector of the empirical-design Riesz fit; convenience for
/// callers that only need `α̂`.
pub fn riesz_weights_empirical(traj: &Trajectory, target: &TargetSpec, lambda_alpha: f64) -> Result<Vec<f64>> {
    ridge_solve(&empirical_gram(traj), &target.nu, lambda_alpha)
}
