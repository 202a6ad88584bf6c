//! `adaptive-lab` command-line driver.
//!
//! Exit codes: 0 on success, 2 on configuration or usage errors, 3 on data
//! errors (unreadable trajectories, singular designs, failed estimates).

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaptive_lab::config::{Cell, ExperimentConfig};
use adaptive_lab::diagnostics::{stability_report, DiagnosticsContext, STABILITY_CSV_HEADER};
use adaptive_lab::estimators::{
    one_step_with_config, plugin_ols_estimate, EstimatorConfig, LambdaRule, TargetSpec, VarianceMethod, CSV_HEADER,
};
use adaptive_lab::harness::{
    build_cell_context, lan_check, run_experiment_to_dir, simulate_cell, CellTruth, Manifest, RunOptions,
};
use adaptive_lab::trajectory::Trajectory;
use adaptive_lab::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "adaptive-lab",
    version,
    about = "Simulation and one-step estimation under adaptive bandit designs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, `section.key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out", global = true)]
    out: PathBuf,
    /// Worker threads for Monte Carlo replications.
    #[arg(long, env = "ADAPTIVE_LAB_WORKERS", default_value_t = 1, global = true)]
    workers: usize,
    /// Master seed; shorthand for `--set experiment.seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, short, global = true, conflicts_with = "verbose")]
    quiet: bool,
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate trajectories and per-cell truth files.
    Simulate,
    /// Run the one-step estimator on stored trajectories.
    Estimate {
        #[arg(required = true)]
        trajectories: Vec<PathBuf>,
        #[command(flatten)]
        est: EstimatorArgs,
        /// Target direction as comma-separated coefficients; defaults to the truth file's.
        #[arg(long)]
        nu: Option<String>,
        /// Also run the plug-in OLS estimator.
        #[arg(long)]
        compare_ols: bool,
    },
    /// Compute stability diagnostics for stored trajectories.
    Diagnose {
        #[arg(required = true)]
        trajectories: Vec<PathBuf>,
        #[command(flatten)]
        est: EstimatorArgs,
        /// Stabilizer: `linucb`, `oracle` or `auto`.
        #[arg(long)]
        stabilizer: Option<String>,
    },
    /// Run the Monte Carlo grid and write coverage summaries.
    Coverage,
    /// Compare the LAN statistic with its normal limit.
    LanCheck,
}

#[derive(Debug, Args)]
struct EstimatorArgs {
    /// Truth file written by `simulate`.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// `holdout`, `1/T`, `d/T`, `1/sqrtT` or a number.
    #[arg(long)]
    lambda_h: Option<String>,
    #[arg(long)]
    lambda_alpha: Option<String>,
    /// `empirical_if` or `quadratic_form`.
    #[arg(long)]
    variance: Option<String>,
    #[arg(long)]
    level: Option<f64>,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("adaptive-lab: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    let c = &cli.common;
    let opts = RunOptions {
        workers: c.workers.max(1),
    };
    match &cli.command {
        Command::Simulate => simulate(c, &opts),
        Command::Coverage => coverage(c, &opts),
        Command::LanCheck => lan(c, &opts),
        Command::Estimate {
            trajectories,
            est,
            nu,
            compare_ols,
        } => estimate(c, trajectories, est, nu.as_deref(), *compare_ols),
        Command::Diagnose {
            trajectories,
            est,
            stabilizer,
        } => diagnose(c, &opts, trajectories, est, stabilizer.as_deref()),
    }
}

fn overrides(c: &Common) -> Vec<String> {
    let mut o = c.overrides.clone();
    if let Some(seed) = c.seed {
        o.push(format!("experiment.seed={seed}"));
    }
    o
}

/// Parses `--config` with overrides; returns the config and its canonical text.
fn load_config(c: &Common) -> Result<(ExperimentConfig, String), Error> {
    let path = c
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("this subcommand needs --config".into()))?;
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let (cfg, map) = ExperimentConfig::from_text(&text, &overrides(c))?;
    Ok((cfg, map.to_text()))
}

fn manifest(c: &Common, subcommand: &str, seed: Option<u64>, config: Option<String>, inputs: &[PathBuf]) -> Manifest {
    Manifest {
        tool: "adaptive-lab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: subcommand.into(),
        master_seed: seed,
        workers: c.workers.max(1),
        overrides: overrides(c),
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        config,
    }
}

fn cell_stem(cell: &Cell) -> String {
    format!("cell{}_T{}_d{}", cell.id, cell.horizon, cell.dim)
}

fn simulate(c: &Common, opts: &RunOptions) -> Result<(), Error> {
    let (cfg, text) = load_config(c)?;
    let pool = opts.pool()?;
    let traj_dir = c.out.join("trajectories");
    fs::create_dir_all(&traj_dir)?;
    let mut count = 0;
    for cell in cfg.cells() {
        let stem = cell_stem(&cell);
        CellTruth::new(&cfg, &text, cell)?.write(&c.out.join(format!("truth_{stem}.json")))?;
        for (rep, traj) in simulate_cell(&cfg, cell, &pool)?.into_iter().enumerate() {
            let path = traj_dir.join(format!("{stem}_rep{rep:05}.traj"));
            traj.write_to(std::io::BufWriter::new(fs::File::create(path)?))?;
            count += 1;
        }
        if c.verbose {
            eprintln!("{stem}: {} trajectories", cfg.replications);
        }
    }
    manifest(c, "simulate", Some(cfg.master_seed), Some(text), &[]).write(&c.out)?;
    if !c.quiet {
        println!("wrote {count} trajectories to {}", traj_dir.display());
    }
    Ok(())
}

fn read_trajectory(path: &Path) -> Result<Trajectory, Error> {
    let file = fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Trajectory::read_from(BufReader::new(file)).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

fn read_truth(path: &Path) -> Result<CellTruth, Error> {
    CellTruth::read(path).map_err(|e| Error::Config(e.to_string()))
}

fn estimator_config(c: &Common, truth: Option<&CellTruth>, args: &EstimatorArgs) -> Result<EstimatorConfig, Error> {
    let mut est = match (truth, &c.config) {
        (Some(t), _) => ExperimentConfig::from_text(&t.config, &overrides(c))?.0.estimator,
        (None, Some(_)) => load_config(c)?.0.estimator,
        (None, None) => EstimatorConfig::default(),
    };
    let cfg_err = |e: Error| Error::Config(e.to_string());
    if let Some(s) = &args.lambda_h {
        est.lambda_h = LambdaRule::parse(s).map_err(cfg_err)?;
    }
    if let Some(s) = &args.lambda_alpha {
        est.lambda_alpha = LambdaRule::parse(s).map_err(cfg_err)?;
    }
    if let Some(s) = &args.variance {
        est.variance = VarianceMethod::parse(s).map_err(cfg_err)?;
    }
    if let Some(level) = args.level {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Config(format!("--level must lie in (0, 1), got {level}")));
        }
        est.level = level;
    }
    Ok(est)
}

fn estimate(
    c: &Common,
    files: &[PathBuf],
    args: &EstimatorArgs,
    nu: Option<&str>,
    compare_ols: bool,
) -> Result<(), Error> {
    let truth = args.truth.as_deref().map(read_truth).transpose()?;
    let est = estimator_config(c, truth.as_ref(), args)?;
    let target = match (nu, &truth) {
        (Some(s), _) => {
            let v = s
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Error::Config(format!("--nu: {e}")))?;
            TargetSpec::new(v, "fixed").map_err(|e| Error::Config(e.to_string()))?
        }
        (None, Some(t)) => t.target().map_err(|e| Error::Config(e.to_string()))?,
        (None, None) => return Err(Error::Config("estimate needs --nu or --truth".into())),
    };
    fs::create_dir_all(&c.out)?;
    let mut csv = format!("{CSV_HEADER}\n");
    let mut ols_csv = format!("{CSV_HEADER}\n");
    let mut reports = Vec::new();
    let mut first_err = None;
    for path in files {
        let result = read_trajectory(path).and_then(|traj| {
            let report = one_step_with_config(&traj, &target, &est)?;
            let ols = compare_ols.then(|| plugin_ols_estimate(&traj, &target));
            Ok((report, ols))
        });
        match result {
            Ok((report, ols)) => {
                csv.push_str(&report.csv_row());
                csv.push('\n');
                if let Some(ols) = ols {
                    match ols {
                        Ok(r) => {
                            ols_csv.push_str(&r.csv_row());
                            ols_csv.push('\n');
                        }
                        Err(e) => eprintln!("{}: ols: {e}", path.display()),
                    }
                }
                if c.verbose {
                    eprintln!("{}: psi_hat {:e} se {:e}", path.display(), report.psi_hat, report.se);
                }
                reports.push(report);
            }
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                first_err.get_or_insert(e);
            }
        }
    }
    fs::write(c.out.join("estimates.csv"), csv)?;
    let json = serde_json::to_string_pretty(&reports).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(c.out.join("estimates.json"), json + "\n")?;
    if compare_ols {
        fs::write(c.out.join("ols.csv"), ols_csv)?;
    }
    let mut inputs = files.to_vec();
    inputs.extend(args.truth.iter().cloned());
    manifest(c, "estimate", None, truth.map(|t| t.config), &inputs).write(&c.out)?;
    if !c.quiet {
        println!("{} of {} trajectories estimated", reports.len(), files.len());
    }
    first_err.map_or(Ok(()), Err)
}

fn diagnose(
    c: &Common,
    opts: &RunOptions,
    files: &[PathBuf],
    args: &EstimatorArgs,
    stabilizer: Option<&str>,
) -> Result<(), Error> {
    let truth_path = args
        .truth
        .as_ref()
        .ok_or_else(|| Error::Config("diagnose needs --truth".into()))?;
    let truth = read_truth(truth_path)?;
    let mut ov = overrides(c);
    if let Some(s) = stabilizer {
        ov.push(format!("diagnostics.stabilizer={s}"));
    }
    let (cfg, map) = ExperimentConfig::from_text(&truth.config, &ov)?;
    let est = estimator_config(c, Some(&truth), args)?;
    let pool = opts.pool()?;
    let ctx = build_cell_context(&cfg, truth.cell, &pool)?;
    let stab = ctx.stab.as_ref().ok_or_else(|| {
        Error::Config(
            "no stabilizer available; use --stabilizer linucb or --stabilizer oracle with diagnostics.n_mc > 0".into(),
        )
    })?;
    let dctx = DiagnosticsContext {
        target: &ctx.target,
        stab,
        beta0: &ctx.env.beta0,
        sigma: ctx.env.sigma,
        lindeberg_eps: cfg.diagnostics.lindeberg_eps,
        gamma: ctx.policy.gamma().unwrap_or(f64::NAN),
        sigma_bar_gram: ctx.sigma_bar_gram.as_ref(),
    };
    fs::create_dir_all(&c.out)?;
    let mut csv = format!("{STABILITY_CSV_HEADER}\n");
    let mut reports = Vec::new();
    let mut first_err = None;
    for path in files {
        let result = read_trajectory(path).and_then(|traj| {
            if traj.dim != truth.cell.dim {
                return Err(Error::DimensionMismatch {
                    expected: truth.cell.dim,
                    got: traj.dim,
                });
            }
            let lh = est.lambda_h.resolve(&traj)?;
            let la = est.lambda_alpha.resolve(&traj)?;
            stability_report(&traj, &dctx, lh, la)
        });
        match result {
            Ok(r) => {
                csv.push_str(&r.csv_row());
                csv.push('\n');
                reports.push(r);
            }
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                first_err.get_or_insert(e);
            }
        }
    }
    fs::write(c.out.join("stability.csv"), csv)?;
    let json = serde_json::to_string_pretty(&reports).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(c.out.join("stability.json"), json + "\n")?;
    let mut inputs = files.to_vec();
    inputs.push(truth_path.clone());
    manifest(c, "diagnose", Some(cfg.master_seed), Some(map.to_text()), &inputs).write(&c.out)?;
    if !c.quiet {
        println!("{} of {} trajectories diagnosed", reports.len(), files.len());
    }
    first_err.map_or(Ok(()), Err)
}

fn coverage(c: &Common, opts: &RunOptions) -> Result<(), Error> {
    let (cfg, text) = load_config(c)?;
    let rows = run_experiment_to_dir(&cfg, opts, &c.out)?;
    manifest(c, "coverage", Some(cfg.master_seed), Some(text), &[]).write(&c.out)?;
    if !c.quiet {
        println!(
            "{:>8} {:>6} {:>10} {:>9} {:>12} {:>12}",
            "T", "d", "policy", "coverage", "rmse", "ks_pvalue"
        );
        for r in &rows {
            println!(
                "{:>8} {:>6} {:>10} {:>9.4} {:>12.4e} {:>12.4}",
                r.horizon, r.d, r.policy, r.coverage, r.rmse, r.ks_pvalue
            );
        }
    }
    Ok(())
}

fn lan(c: &Common, opts: &RunOptions) -> Result<(), Error> {
    let (cfg, text) = load_config(c)?;
    if cfg.diagnostics.n_mc == 0 {
        return Err(Error::Config("lan-check needs diagnostics.n_mc > 0".into()));
    }
    let reports = lan_check(&cfg, opts)?;
    fs::create_dir_all(&c.out)?;
    let json = serde_json::to_string_pretty(&reports).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(c.out.join("lan.json"), json + "\n")?;
    manifest(c, "lan-check", Some(cfg.master_seed), Some(text), &[]).write(&c.out)?;
    if !c.quiet {
        for r in &reports {
            println!(
                "T={} d={} eps={}: mean {:.4} (limit {:.4}, mc se {:.4}), variance {:.4} (limit {:.4}), score fd {}/{}",
                r.horizon,
                r.d,
                r.epsilon,
                r.mean,
                r.expected_mean,
                r.mc_se_mean,
                r.variance,
                r.expected_variance,
                r.fd_passed,
                r.fd_checked
            );
        }
    }
    Ok(())
}
