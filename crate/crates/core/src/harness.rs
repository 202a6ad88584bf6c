//! Replication-parallel Monte Carlo engine.
//!
//! Every `(cell, replication)` pair gets its own seed from
//! [`derive_seed`], and results are collected in replication order, so the
//! output does not depend on the number of workers.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Cell, ExperimentConfig, StabilizerChoice};
use crate::diagnostics::{
    eigen_anisotropy_report, epsilon_bulk, lan_log_likelihood_ratio, lan_score, linucb_target_matrix_with,
    riesz_weights_pooled, sigma_bar, sigma_tilde, stability_report, DiagnosticsContext, StabilizerMatrix,
    StabilizerSource,
};
use crate::error::{Error, Result};
use crate::estimators::{one_step_with_config, plugin_ols_estimate, TargetSpec};
use crate::features::Environment;
use crate::linalg::SymMatrix;
use crate::policy::PolicySpec;
use crate::rng::derive_seed;
use crate::stats::{ks_normality, mean, median, sample_variance};
use crate::trajectory::{empirical_gram, fmt_real, generate_trajectory, oracle_seed, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub workers: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { workers: 1 }
    }
}

impl RunOptions {
    pub fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
    }
}

/// Short reason code for a failed computation.
pub fn reason_code(err: &Error) -> &'static str {
    match err {
        Error::SingularSystem { .. } | Error::NotPositiveDefinite => "singular",
        Error::DegenerateDof { .. } => "degenerate_dof",
        Error::IdentificationFailure { .. } => "identification",
        Error::NotUnitNorm { .. } => "not_unit_norm",
        Error::NonConvergence { .. } => "nonconvergence",
        _ => "error",
    }
}

/// One replication's results. Optional fields are empty in CSV output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub seed: u64,
    pub rep: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub d: usize,
    pub policy: String,
    pub gamma: Option<f64>,
    pub target_rule: String,
    pub truth: f64,
    pub status: String,
    pub lambda_h: Option<f64>,
    pub lambda_alpha: Option<f64>,
    pub psi_hat: Option<f64>,
    pub psi_plugin: Option<f64>,
    pub correction: Option<f64>,
    pub se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub sigma_hat: Option<f64>,
    pub ols_status: Option<String>,
    pub ols_psi: Option<f64>,
    pub ols_se: Option<f64>,
    pub diag_status: Option<String>,
    pub ds_stat: Option<f64>,
    pub ds_stat_pooled: Option<f64>,
    pub riesz_dist: Option<f64>,
    pub riesz_dist_normalized: Option<f64>,
    pub lindeberg: Option<f64>,
    pub riesz_err: Option<f64>,
    pub outcome_err: Option<f64>,
    pub cross_term: Option<f64>,
    pub bias_term: Option<f64>,
    pub r_total: Option<f64>,
    pub threshold: Option<f64>,
    pub sigma_tilde: Option<f64>,
    pub sigma_bar: Option<f64>,
    pub top_alignment: Option<f64>,
    pub bulk_ratio_median: Option<f64>,
    pub trace_check: Option<f64>,
    pub lan_stat: Option<f64>,
    pub lan_score: Option<f64>,
    /// `√T · D*_T = (1/√T) Σ ᾱ(Z_t)(Y_t − h(Z_t))`.
    pub canonical_gradient: Option<f64>,
}

pub const RECORD_COLUMNS: &[&str] = &[
    "seed",
    "rep",
    "T",
    "d",
    "policy",
    "gamma",
    "target_rule",
    "truth",
    "status",
    "lambda_h",
    "lambda_alpha",
    "psi_hat",
    "psi_plugin",
    "correction",
    "se",
    "ci_low",
    "ci_high",
    "sigma_hat",
    "ols_status",
    "ols_psi",
    "ols_se",
    "diag_status",
    "ds_stat",
    "ds_stat_pooled",
    "riesz_dist",
    "riesz_dist_normalized",
    "lindeberg",
    "riesz_err",
    "outcome_err",
    "cross_term",
    "bias_term",
    "r_total",
    "threshold",
    "sigma_tilde",
    "sigma_bar",
    "top_alignment",
    "bulk_ratio_median",
    "trace_check",
    "lan_stat",
    "lan_score",
    "canonical_gradient",
];

fn opt(v: Option<f64>) -> String {
    v.map(fmt_real).unwrap_or_default()
}

impl Record {
    fn new(cell: &CellContext, rep: usize, seed: u64) -> Self {
        Self {
            seed,
            rep,
            horizon: cell.cell.horizon,
            d: cell.cell.dim,
            policy: cell.policy.label().to_string(),
            gamma: cell.policy.gamma(),
            target_rule: cell.target.label.clone(),
            truth: cell.truth,
            status: "ok".into(),
            lambda_h: None,
            lambda_alpha: None,
            psi_hat: None,
            psi_plugin: None,
            correction: None,
            se: None,
            ci_low: None,
            ci_high: None,
            sigma_hat: None,
            ols_status: None,
            ols_psi: None,
            ols_se: None,
            diag_status: None,
            ds_stat: None,
            ds_stat_pooled: None,
            riesz_dist: None,
            riesz_dist_normalized: None,
            lindeberg: None,
            riesz_err: None,
            outcome_err: None,
            cross_term: None,
            bias_term: None,
            r_total: None,
            threshold: None,
            sigma_tilde: cell.sigma_tilde,
            sigma_bar: cell.sigma_bar,
            top_alignment: None,
            bulk_ratio_median: None,
            trace_check: None,
            lan_stat: None,
            lan_score: None,
            canonical_gradient: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn csv_header() -> String {
        RECORD_COLUMNS.join(",")
    }

    pub fn csv_row(&self) -> String {
        let text = |v: &Option<String>| v.clone().unwrap_or_default();
        [
            self.seed.to_string(),
            self.rep.to_string(),
            self.horizon.to_string(),
            self.d.to_string(),
            self.policy.clone(),
            opt(self.gamma),
            self.target_rule.clone(),
            fmt_real(self.truth),
            self.status.clone(),
            opt(self.lambda_h),
            opt(self.lambda_alpha),
            opt(self.psi_hat),
            opt(self.psi_plugin),
            opt(self.correction),
            opt(self.se),
            opt(self.ci_low),
            opt(self.ci_high),
            opt(self.sigma_hat),
            text(&self.ols_status),
            opt(self.ols_psi),
            opt(self.ols_se),
            text(&self.diag_status),
            opt(self.ds_stat),
            opt(self.ds_stat_pooled),
            opt(self.riesz_dist),
            opt(self.riesz_dist_normalized),
            opt(self.lindeberg),
            opt(self.riesz_err),
            opt(self.outcome_err),
            opt(self.cross_term),
            opt(self.bias_term),
            opt(self.r_total),
            opt(self.threshold),
            opt(self.sigma_tilde),
            opt(self.sigma_bar),
            opt(self.top_alignment),
            opt(self.bulk_ratio_median),
            opt(self.trace_check),
            opt(self.lan_stat),
            opt(self.lan_score),
            opt(self.canonical_gradient),
        ]
        .join(",")
    }
}

/// Per-cell quantities shared by all replications.
#[derive(Debug, Clone)]
pub struct CellContext {
    pub cell: Cell,
    pub env: Environment,
    pub policy: PolicySpec,
    pub target: TargetSpec,
    pub truth: f64,
    pub stab: Option<StabilizerMatrix>,
    pub sigma_bar_gram: Option<SymMatrix>,
    pub sigma_bar: Option<f64>,
    pub alpha_bar: Option<Vec<f64>>,
    pub sigma_tilde: Option<f64>,
}

/// Seed of replication `rep` in `cell`.
pub fn replication_seed(master: u64, cell: &Cell, rep: usize) -> u64 {
    derive_seed(master, cell.id, rep as u64)
}

/// Base seed of the pooled-design oracle for `cell`, disjoint from the
/// replication streams.
pub fn oracle_base_seed(master: u64, cell: &Cell) -> u64 {
    derive_seed(master, cell.id | (1 << 63), 0)
}

/// [`crate::trajectory::pooled_design_oracle`] spread over a worker pool;
/// the per-trajectory matrices are summed in replication order, so the
/// result is bit-identical to the sequential version.
pub fn pooled_design_oracle_par(
    env: &Environment,
    policy: &PolicySpec,
    horizon: usize,
    n_mc: usize,
    seed: u64,
    pool: &rayon::ThreadPool,
) -> Result<SymMatrix> {
    if n_mc == 0 {
        return Err(Error::InvalidSpec("n_mc must be at least 1".into()));
    }
    let grams: Vec<Result<SymMatrix>> = pool.install(|| {
        (0..n_mc)
            .into_par_iter()
            .map(|rep| generate_trajectory(env, policy, horizon, oracle_seed(seed, rep)).map(|t| empirical_gram(&t)))
            .collect()
    });
    let mut acc = SymMatrix::zeros(env.dim());
    for g in grams {
        acc.axpy(1.0, &g?);
    }
    Ok(acc.scaled(1.0 / n_mc as f64))
}

pub fn build_cell_context(cfg: &ExperimentConfig, cell: Cell, pool: &rayon::ThreadPool) -> Result<CellContext> {
    let env = cfg.environment(cell.dim)?;
    let policy = cfg.policy_spec(cell)?;
    let target = cfg.target.resolve(&env.beta0)?;
    let truth = target.value(&env.beta0);
    let diag = &cfg.diagnostics;
    let sigma_bar_gram = if diag.n_mc > 0 {
        Some(pooled_design_oracle_par(
            &env,
            &policy,
            cell.horizon,
            diag.n_mc,
            oracle_base_seed(cfg.master_seed, &cell),
            pool,
        )?)
    } else {
        None
    };
    let (sigma_bar_v, alpha_bar) = match &sigma_bar_gram {
        Some(g) => match riesz_weights_pooled(&target, g) {
            Ok(w) => (Some(sigma_bar(&target, g, env.sigma)?), Some(w)),
            Err(_) => (None, None),
        },
        None => (None, None),
    };
    let stab = match cfg.stabilizer_choice() {
        StabilizerChoice::LinUcb if cell.dim >= 2 => policy
            .gamma()
            .filter(|g| *g > 0.0)
            .map(|g| linucb_target_matrix_with(&env.beta0, cell.horizon, cell.dim, g, diag.form))
            .transpose()?,
        StabilizerChoice::Oracle => sigma_bar_gram
            .as_ref()
            .and_then(|g| StabilizerMatrix::new(g.clone(), StabilizerSource::OracleSigmaBar).ok()),
        _ => None,
    };
    let sigma_tilde_v = stab.as_ref().map(|s| sigma_tilde(&target, s, env.sigma));
    Ok(CellContext {
        cell,
        env,
        policy,
        target,
        truth,
        stab,
        sigma_bar_gram,
        sigma_bar: sigma_bar_v,
        alpha_bar,
        sigma_tilde: sigma_tilde_v,
    })
}

fn run_replication(cfg: &ExperimentConfig, ctx: &CellContext, rep: usize) -> Record {
    let seed = replication_seed(cfg.master_seed, &ctx.cell, rep);
    let mut rec = Record::new(ctx, rep, seed);
    let traj = match generate_trajectory(&ctx.env, &ctx.policy, ctx.cell.horizon, seed) {
        Ok(t) => t,
        Err(e) => {
            rec.status = reason_code(&e).into();
            return rec;
        }
    };
    fill_record(cfg, ctx, &traj, &mut rec);
    rec
}

fn fill_record(cfg: &ExperimentConfig, ctx: &CellContext, traj: &Trajectory, rec: &mut Record) {
    let est = cfg
        .estimator
        .lambda_h
        .resolve(traj)
        .and_then(|lh| Ok((lh, cfg.estimator.lambda_alpha.resolve(traj)?)))
        .and_then(|(lh, la)| {
            let fixed = crate::estimators::EstimatorConfig {
                lambda_h: crate::estimators::LambdaRule::Fixed(lh),
                lambda_alpha: crate::estimators::LambdaRule::Fixed(la),
                ..cfg.estimator
            };
            one_step_with_config(traj, &ctx.target, &fixed)
        });
    match est {
        Ok(r) => {
            rec.lambda_h = Some(r.lambda_h);
            rec.lambda_alpha = Some(r.lambda_alpha);
            rec.psi_hat = Some(r.psi_hat);
            rec.psi_plugin = Some(r.psi_plugin);
            rec.correction = Some(r.correction);
            rec.se = Some(r.se);
            rec.ci_low = Some(r.ci_low);
            rec.ci_high = Some(r.ci_high);
            rec.sigma_hat = Some(r.sigma_hat);
        }
        Err(e) => rec.status = reason_code(&e).into(),
    }
    if cfg.compare_ols {
        match plugin_ols_estimate(traj, &ctx.target) {
            Ok(r) => {
                rec.ols_status = Some("ok".into());
                rec.ols_psi = Some(r.psi_hat);
                rec.ols_se = Some(r.se);
            }
            Err(e) => rec.ols_status = Some(reason_code(&e).into()),
        }
    }
    if !cfg.diagnostics.enabled {
        return;
    }
    let mut diag_status = "ok";
    if let (Some(stab), Some(lh), Some(la)) = (&ctx.stab, rec.lambda_h, rec.lambda_alpha) {
        let dctx = DiagnosticsContext {
            target: &ctx.target,
            stab,
            beta0: &ctx.env.beta0,
            sigma: ctx.env.sigma,
            lindeberg_eps: cfg.diagnostics.lindeberg_eps,
            gamma: ctx.policy.gamma().unwrap_or(f64::NAN),
            sigma_bar_gram: ctx.sigma_bar_gram.as_ref(),
        };
        match stability_report(traj, &dctx, lh, la) {
            Ok(s) => {
                rec.ds_stat = Some(s.ds_stat);
                rec.ds_stat_pooled = s.ds_stat_pooled;
                rec.riesz_dist = Some(s.riesz_dist);
                rec.riesz_dist_normalized = Some(s.riesz_dist_normalized);
                rec.lindeberg = Some(s.lindeberg);
                rec.riesz_err = Some(s.remainder.riesz_err);
                rec.outcome_err = Some(s.remainder.outcome_err);
                rec.cross_term = Some(s.remainder.cross_term);
                rec.bias_term = Some(s.remainder.bias_term);
                rec.r_total = Some(s.remainder.r_total);
                rec.threshold = Some(s.remainder.threshold);
                if !s.is_finite() {
                    diag_status = "nonfinite";
                }
            }
            Err(e) => diag_status = reason_code(&e),
        }
    }
    if let Some(gamma) = ctx.policy.gamma() {
        if ctx.cell.dim >= 2 && ctx.env.feature_map.unit_norm() {
            match eigen_anisotropy_report(traj, &ctx.env.beta0, gamma) {
                Ok(a) => {
                    rec.top_alignment = Some(a.top_alignment);
                    rec.bulk_ratio_median = Some(a.bulk_ratio_median);
                    rec.trace_check = Some(a.trace_check);
                }
                Err(e) => diag_status = reason_code(&e),
            }
        }
    }
    if let (Some(sb), Some(w)) = (ctx.sigma_bar, &ctx.alpha_bar) {
        let score = lan_score(traj, sb, w, &ctx.env.beta0);
        rec.lan_score = Some(score);
        rec.canonical_gradient = Some(sb * score);
        if let Some(eps) = cfg.diagnostics.lan_epsilon {
            rec.lan_stat = Some(lan_log_likelihood_ratio(traj, sb, w, &ctx.env.beta0, eps).value);
        }
    } else if ctx.sigma_bar_gram.is_some() {
        diag_status = "identification";
    }
    rec.diag_status = Some(diag_status.into());
}

/// Summary of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub d: usize,
    pub policy: String,
    pub target_rule: String,
    pub gamma: f64,
    pub truth: f64,
    pub replications: usize,
    pub n_failed: usize,
    pub n_covered: usize,
    pub coverage: f64,
    pub mean_ci_width: f64,
    pub rmse: f64,
    pub bias: f64,
    pub ks_stat: f64,
    pub ks_pvalue: f64,
    pub median_ds_stat: f64,
    pub median_abs_ds_stat: f64,
    pub median_riesz_dist_norm: f64,
    pub median_remainder_ratio: f64,
    pub median_lindeberg: f64,
    pub median_top_alignment: f64,
    pub median_bulk_ratio: f64,
    pub max_trace_check: f64,
    pub sigma_tilde: f64,
    pub sigma_bar: f64,
    pub epsilon_bulk: f64,
    pub ols_rmse: f64,
    pub ols_coverage: f64,
    pub ols_n_failed: usize,
    pub paired_win_fraction: f64,
    pub lan_mean: f64,
    pub lan_variance: f64,
    pub canonical_variance: f64,
}

pub const SUMMARY_COLUMNS: &[&str] = &[
    "T",
    "d",
    "policy",
    "target_rule",
    "gamma",
    "truth",
    "replications",
    "n_failed",
    "n_covered",
    "coverage",
    "mean_ci_width",
    "rmse",
    "bias",
    "ks_stat",
    "ks_pvalue",
    "median_ds_stat",
    "median_abs_ds_stat",
    "median_riesz_dist_norm",
    "median_remainder_ratio",
    "median_lindeberg",
    "median_top_alignment",
    "median_bulk_ratio",
    "max_trace_check",
    "sigma_tilde",
    "sigma_bar",
    "epsilon_bulk",
    "ols_rmse",
    "ols_coverage",
    "ols_n_failed",
    "paired_win_fraction",
    "lan_mean",
    "lan_variance",
    "canonical_variance",
];

impl CoverageRow {
    pub fn csv_header() -> String {
        SUMMARY_COLUMNS.join(",")
    }

    pub fn csv_row(&self) -> String {
        let f = |x: f64| fmt_real(x);
        [
            self.horizon.to_string(),
            self.d.to_string(),
            self.policy.clone(),
            self.target_rule.clone(),
            f(self.gamma),
            f(self.truth),
            self.replications.to_string(),
            self.n_failed.to_string(),
            self.n_covered.to_string(),
            f(self.coverage),
            f(self.mean_ci_width),
            f(self.rmse),
            f(self.bias),
            f(self.ks_stat),
            f(self.ks_pvalue),
            f(self.median_ds_stat),
            f(self.median_abs_ds_stat),
            f(self.median_riesz_dist_norm),
            f(self.median_remainder_ratio),
            f(self.median_lindeberg),
            f(self.median_top_alignment),
            f(self.median_bulk_ratio),
            f(self.max_trace_check),
            f(self.sigma_tilde),
            f(self.sigma_bar),
            f(self.epsilon_bulk),
            f(self.ols_rmse),
            f(self.ols_coverage),
            self.ols_n_failed.to_string(),
            f(self.paired_win_fraction),
            f(self.lan_mean),
            f(self.lan_variance),
            f(self.canonical_variance),
        ]
        .join(",")
    }
}

fn collect(records: &[&Record], field: impl Fn(&Record) -> Option<f64>) -> Vec<f64> {
    records
        .iter()
        .filter_map(|r| field(r))
        .filter(|x| x.is_finite())
        .collect()
}

fn mean_or_nan(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        mean(v)
    }
}

fn var_or_nan(v: &[f64]) -> f64 {
    if v.len() < 2 {
        f64::NAN
    } else {
        sample_variance(v)
    }
}

/// Aggregates the records of one cell. Failed replications are counted in
/// `n_failed` and excluded from every other statistic.
///
/// # Panics
/// If `records` is empty.
pub fn coverage_summary(records: &[Record]) -> CoverageRow {
    let first = records.first().expect("coverage_summary needs records");
    let truth = first.truth;
    let ok: Vec<&Record> = records.iter().filter(|r| r.is_ok()).collect();
    let n_failed = records.len() - ok.len();
    let n_covered = ok
        .iter()
        .filter(|r| matches!((r.ci_low, r.ci_high), (Some(lo), Some(hi)) if lo <= truth && truth <= hi))
        .count();
    let errors = collect(&ok, |r| r.psi_hat.map(|p| p - truth));
    let widths = collect(&ok, |r| Some(r.ci_high? - r.ci_low?));
    let z: Vec<f64> = collect(&ok, |r| {
        let se = r.se?;
        let psi = r.psi_hat?;
        (se > 0.0).then(|| (psi - truth) / se)
    });
    let ks = ks_normality(&z).ok();

    let ols_ok: Vec<&Record> = records
        .iter()
        .filter(|r| r.ols_status.as_deref() == Some("ok"))
        .collect();
    let ols_n_failed = records
        .iter()
        .filter(|r| r.ols_status.as_deref().is_some_and(|s| s != "ok"))
        .count();
    let ols_errors = collect(&ols_ok, |r| r.ols_psi.map(|p| p - truth));
    let z95 = crate::stats::two_sided_z(0.95);
    let ols_covered = ols_ok
        .iter()
        .filter(|r| matches!((r.ols_psi, r.ols_se), (Some(p), Some(s)) if (p - truth).abs() <= z95 * s))
        .count();
    let pairs: Vec<bool> = ok
        .iter()
        .filter_map(|r| {
            let a = (r.psi_hat? - truth).abs();
            let b = (r.ols_psi? - truth).abs();
            Some(a < b)
        })
        .collect();

    let rms = |e: &[f64]| {
        if e.is_empty() {
            f64::NAN
        } else {
            (e.iter().map(|x| x * x).sum::<f64>() / e.len() as f64).sqrt()
        }
    };
    let gamma = first.gamma.unwrap_or(f64::NAN);
    CoverageRow {
        horizon: first.horizon,
        d: first.d,
        policy: first.policy.clone(),
        target_rule: first.target_rule.clone(),
        gamma,
        truth,
        replications: records.len(),
        n_failed,
        n_covered,
        coverage: if ok.is_empty() {
            f64::NAN
        } else {
            n_covered as f64 / ok.len() as f64
        },
        mean_ci_width: mean_or_nan(&widths),
        rmse: rms(&errors),
        bias: mean_or_nan(&errors),
        ks_stat: ks.map_or(f64::NAN, |k| k.statistic),
        ks_pvalue: ks.map_or(f64::NAN, |k| k.pvalue),
        median_ds_stat: median(&collect(&ok, |r| r.ds_stat)),
        median_abs_ds_stat: median(&collect(&ok, |r| r.ds_stat.map(f64::abs))),
        median_riesz_dist_norm: median(&collect(&ok, |r| r.riesz_dist_normalized)),
        median_remainder_ratio: median(&collect(&ok, |r| Some(r.r_total? / r.threshold?))),
        median_lindeberg: median(&collect(&ok, |r| r.lindeberg)),
        median_top_alignment: median(&collect(&ok, |r| r.top_alignment)),
        median_bulk_ratio: median(&collect(&ok, |r| r.bulk_ratio_median)),
        max_trace_check: collect(&ok, |r| r.trace_check).into_iter().fold(f64::NAN, f64::max),
        sigma_tilde: first.sigma_tilde.unwrap_or(f64::NAN),
        sigma_bar: first.sigma_bar.unwrap_or(f64::NAN),
        epsilon_bulk: match first.gamma {
            Some(g) if first.d >= 2 && g > 0.0 => epsilon_bulk(first.d, first.horizon, g),
            _ => f64::NAN,
        },
        ols_rmse: rms(&ols_errors),
        ols_coverage: if ols_ok.is_empty() {
            f64::NAN
        } else {
            ols_covered as f64 / ols_ok.len() as f64
        },
        ols_n_failed,
        paired_win_fraction: if pairs.is_empty() {
            f64::NAN
        } else {
            pairs.iter().filter(|w| **w).count() as f64 / pairs.len() as f64
        },
        lan_mean: mean_or_nan(&collect(records.iter().collect::<Vec<_>>().as_slice(), |r| r.lan_stat)),
        lan_variance: var_or_nan(&collect(records.iter().collect::<Vec<_>>().as_slice(), |r| r.lan_stat)),
        canonical_variance: var_or_nan(&collect(records.iter().collect::<Vec<_>>().as_slice(), |r| {
            r.canonical_gradient
        })),
    }
}

/// Replications processed per parallel batch; bounds the records in flight.
const BATCH: usize = 256;

/// Runs the grid, handing every record to `sink` in `(cell, rep)` order.
pub fn run_experiment_streaming(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    mut sink: impl FnMut(&Record) -> Result<()>,
) -> Result<Vec<CoverageRow>> {
    let pool = opts.pool()?;
    let mut rows = Vec::new();
    for cell in cfg.cells() {
        let ctx = build_cell_context(cfg, cell, &pool)?;
        let mut cell_records = Vec::with_capacity(cfg.replications);
        let mut start = 0;
        while start < cfg.replications {
            let end = (start + BATCH).min(cfg.replications);
            let batch: Vec<Record> = pool.install(|| {
                (start..end)
                    .into_par_iter()
                    .map(|rep| run_replication(cfg, &ctx, rep))
                    .collect()
            });
            for r in &batch {
                sink(r)?;
            }
            cell_records.extend(batch);
            start = end;
        }
        rows.push(coverage_summary(&cell_records));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub rows: Vec<CoverageRow>,
    pub records: Vec<Record>,
}

/// Runs the grid and keeps all records in memory.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentOutput> {
    let mut records = Vec::new();
    let rows = run_experiment_streaming(cfg, opts, |r| {
        records.push(r.clone());
        Ok(())
    })?;
    Ok(ExperimentOutput { rows, records })
}

/// Runs the grid writing `records.csv`, `summary.csv` and `summary.json`
/// into `dir`.
pub fn run_experiment_to_dir(cfg: &ExperimentConfig, opts: &RunOptions, dir: &Path) -> Result<Vec<CoverageRow>> {
    fs::create_dir_all(dir)?;
    let mut records = std::io::BufWriter::new(fs::File::create(dir.join("records.csv"))?);
    writeln!(records, "{}", Record::csv_header())?;
    let rows = run_experiment_streaming(cfg, opts, |r| {
        writeln!(records, "{}", r.csv_row())?;
        Ok(())
    })?;
    records.flush()?;
    write_summary(dir, &rows)?;
    Ok(rows)
}

pub fn write_summary(dir: &Path, rows: &[CoverageRow]) -> Result<()> {
    let mut csv = String::new();
    let _ = writeln!(csv, "{}", CoverageRow::csv_header());
    for r in rows {
        let _ = writeln!(csv, "{}", r.csv_row());
    }
    fs::write(dir.join("summary.csv"), csv)?;
    let json =
        serde_json::to_string_pretty(&serde_json::json!({ "cells": rows })).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(dir.join("summary.json"), json + "\n")?;
    Ok(())
}

/// Paired comparison of the one-step and plug-in OLS estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub d: usize,
    pub one_step_rmse: f64,
    pub one_step_coverage: f64,
    pub one_step_n_failed: usize,
    pub ols_rmse: f64,
    pub ols_coverage: f64,
    pub ols_n_failed: usize,
    /// `ols_rmse / one_step_rmse`.
    pub rmse_ratio: f64,
    /// Share of pairs (both estimators succeeded) in which the one-step
    /// error is strictly smaller in absolute value.
    pub paired_win_fraction: f64,
}

/// Runs one-step and OLS on the same trajectories.
pub fn compare_estimators(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<ComparisonRow>> {
    let mut cfg = cfg.clone();
    cfg.compare_ols = true;
    cfg.diagnostics.enabled = false;
    cfg.diagnostics.n_mc = 0;
    cfg.diagnostics.lan_epsilon = None;
    let rows = run_experiment_streaming(&cfg, opts, |_| Ok(()))?;
    Ok(rows
        .into_iter()
        .map(|r| ComparisonRow {
            horizon: r.horizon,
            d: r.d,
            one_step_rmse: r.rmse,
            one_step_coverage: r.coverage,
            one_step_n_failed: r.n_failed,
            ols_rmse: r.ols_rmse,
            ols_coverage: r.ols_coverage,
            ols_n_failed: r.ols_n_failed,
            rmse_ratio: r.ols_rmse / r.rmse,
            paired_win_fraction: r.paired_win_fraction,
        })
        .collect())
}

/// Distribution of the LAN statistic in one cell against its limit
/// `N(−ε²/2, ε²)`, plus the finite-difference score check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanReport {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub d: usize,
    pub epsilon: f64,
    pub replications: usize,
    pub mean: f64,
    pub variance: f64,
    pub mc_se_mean: f64,
    pub expected_mean: f64,
    pub expected_variance: f64,
    /// `|mean − expected_mean| / mc_se_mean`.
    pub mean_z: f64,
    /// `|variance / expected_variance − 1|`.
    pub variance_rel_err: f64,
    pub sigma_bar: f64,
    /// Sample variance of `√T · D*_T`, to compare with `σ̄²`.
    pub canonical_variance: f64,
    pub canonical_target: f64,
    pub fd_checked: usize,
    pub fd_passed: usize,
    pub nonpositive_factors: usize,
}

/// Central finite difference of the LAN statistic at `ε = ±h` versus the
/// score; passes at relative error `1e-4`.
pub fn lan_score_fd_check(traj: &Trajectory, sigma_bar: f64, alpha_bar: &[f64], beta0: &[f64]) -> bool {
    let h = 1e-4;
    let up = lan_log_likelihood_ratio(traj, sigma_bar, alpha_bar, beta0, h).value;
    let down = lan_log_likelihood_ratio(traj, sigma_bar, alpha_bar, beta0, -h).value;
    let fd = (up - down) / (2.0 * h);
    let score = lan_score(traj, sigma_bar, alpha_bar, beta0);
    (fd - score).abs() <= 1e-4 * score.abs().max(1e-3)
}

pub const FD_CHECKS: usize = 50;

/// Statistic, canonical gradient, nonpositive factors, finite-difference verdict.
type LanDraw = (f64, f64, usize, Option<bool>);

pub fn lan_check(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<LanReport>> {
    let epsilon = cfg
        .diagnostics
        .lan_epsilon
        .ok_or_else(|| Error::Config("lan-check needs diagnostics.lan_epsilon".into()))?;
    let pool = opts.pool()?;
    let mut reports = Vec::new();
    for cell in cfg.cells() {
        let ctx = build_cell_context(cfg, cell, &pool)?;
        let (Some(sb), Some(w)) = (ctx.sigma_bar, ctx.alpha_bar.clone()) else {
            return Err(Error::IdentificationFailure { outside: f64::NAN });
        };
        let beta0 = ctx.env.beta0.clone();
        let results: Vec<Result<LanDraw>> = pool.install(|| {
            (0..cfg.replications)
                .into_par_iter()
                .map(|rep| {
                    let seed = replication_seed(cfg.master_seed, &cell, rep);
                    let traj = generate_trajectory(&ctx.env, &ctx.policy, cell.horizon, seed)?;
                    let stat = lan_log_likelihood_ratio(&traj, sb, &w, &beta0, epsilon);
                    let grad = sb * lan_score(&traj, sb, &w, &beta0);
                    let fd = (rep < FD_CHECKS).then(|| lan_score_fd_check(&traj, sb, &w, &beta0));
                    Ok((stat.value, grad, stat.nonpositive_factors, fd))
                })
                .collect()
        });
        let results = results.into_iter().collect::<Result<Vec<_>>>()?;
        let stats: Vec<f64> = results.iter().map(|r| r.0).collect();
        let grads: Vec<f64> = results.iter().map(|r| r.1).collect();
        let n = stats.len() as f64;
        let m = mean(&stats);
        let v = var_or_nan(&stats);
        let se = (v / n).sqrt();
        let expected_mean = -epsilon * epsilon / 2.0;
        let expected_variance = epsilon * epsilon;
        reports.push(LanReport {
            horizon: cell.horizon,
            d: cell.dim,
            epsilon,
            replications: cfg.replications,
            mean: m,
            variance: v,
            mc_se_mean: se,
            expected_mean,
            expected_variance,
            mean_z: (m - expected_mean).abs() / se,
            variance_rel_err: (v / expected_variance - 1.0).abs(),
            sigma_bar: sb,
            canonical_variance: var_or_nan(&grads),
            canonical_target: sb * sb,
            fd_checked: results.iter().filter(|r| r.3.is_some()).count(),
            fd_passed: results.iter().filter(|r| r.3 == Some(true)).count(),
            nonpositive_factors: results.iter().map(|r| r.2).sum(),
        });
    }
    Ok(reports)
}

/// Trajectories of every replication of `cell`, in replication order.
pub fn simulate_cell(cfg: &ExperimentConfig, cell: Cell, pool: &rayon::ThreadPool) -> Result<Vec<Trajectory>> {
    let env = cfg.environment(cell.dim)?;
    let policy = cfg.policy_spec(cell)?;
    pool.install(|| {
        (0..cfg.replications)
            .into_par_iter()
            .map(|rep| {
                generate_trajectory(
                    &env,
                    &policy,
                    cell.horizon,
                    replication_seed(cfg.master_seed, &cell, rep),
                )
            })
            .collect()
    })
}

/// Ground truth of one cell, written by `simulate` and read by `estimate`
/// and `diagnose`. `config` is the canonical configuration text, from which
/// the environment, policy and oracle can be rebuilt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTruth {
    pub cell: Cell,
    pub beta0: Vec<f64>,
    pub sigma: f64,
    pub nu: Vec<f64>,
    pub target_rule: String,
    pub psi: f64,
    pub gamma: Option<f64>,
    pub config: String,
}

impl CellTruth {
    pub fn new(cfg: &ExperimentConfig, config_text: &str, cell: Cell) -> Result<Self> {
        let env = cfg.environment(cell.dim)?;
        let target = cfg.target.resolve(&env.beta0)?;
        let policy = cfg.policy_spec(cell)?;
        Ok(Self {
            cell,
            psi: target.value(&env.beta0),
            beta0: env.beta0,
            sigma: env.sigma,
            nu: target.nu,
            target_rule: target.label,
            gamma: policy.gamma(),
            config: config_text.to_string(),
        })
    }

    pub fn target(&self) -> Result<TargetSpec> {
        TargetSpec::new(self.nu.clone(), self.target_rule.clone())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))?;
        fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: format!("truth file {}: {e}", path.display()),
        })
    }
}

/// Reproduction manifest written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub master_seed: Option<u64>,
    pub workers: usize,
    pub overrides: Vec<String>,
    pub inputs: Vec<String>,
    /// Resolved configuration in canonical text form.
    pub config: Option<String>,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))?;
        fs::write(dir.join("manifest.json"), json + "\n")?;
        Ok(())
    }
}
