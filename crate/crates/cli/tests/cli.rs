use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use adaptive_lab::config::ExperimentConfig;
use adaptive_lab::harness::{run_experiment, RunOptions};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_adaptive-lab"));
    c.env_remove("ADAPTIVE_LAB_WORKERS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn write_cfg(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("exp.cfg");
    fs::write(&p, text).unwrap();
    p
}

fn csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    (
        header,
        lines.map(|l| l.split(',').map(String::from).collect()).collect(),
    )
}

fn field(header: &[String], row: &[String], name: &str) -> f64 {
    row[header.iter().position(|h| h == name).unwrap()].parse().unwrap()
}

fn sorted_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn coverage_on_bundled_mean_config() {
    let out = tempfile::tempdir().unwrap();
    let cfg = repo_file("configs/mean_d1.cfg");
    let o = run(&[
        "coverage",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
        "--quiet",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (h, rows) = csv(&out.path().join("summary.csv"));
    assert_eq!(rows.len(), 1);
    let cov = field(&h, &rows[0], "coverage");
    assert!((0.93..=0.97).contains(&cov), "coverage {cov}");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "coverage");
    assert_eq!(manifest["master_seed"], 20240601);
    assert!(manifest["config"].as_str().unwrap().contains("horizons = 400"));
}

#[test]
fn noiseless_trajectory_estimates_truth() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "[env]\nfeatures=unit_sphere\nbeta0=ones\nsigma=0\n[experiment]\nhorizons=30\ndims=4\nreplications=1\n",
    );
    let sim = dir.path().join("sim");
    let o = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        sim.to_str().unwrap(),
        "-q",
    ]);
    assert!(o.status.success());
    let traj = sorted_files(&sim.join("trajectories"))[0].clone();
    let truth = sim.join("truth_cell0_T30_d4.json");
    let est = dir.path().join("est");
    let o = run(&[
        "estimate",
        traj.to_str().unwrap(),
        "--truth",
        truth.to_str().unwrap(),
        "--lambda-h",
        "0",
        "--lambda-alpha",
        "0",
        "--out",
        est.to_str().unwrap(),
        "-q",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (h, rows) = csv(&est.join("estimates.csv"));
    let truth_json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&truth).unwrap()).unwrap();
    let psi = truth_json["psi"].as_f64().unwrap();
    assert!((field(&h, &rows[0], "psi_hat") - psi).abs() < 1e-8);
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "[policy]\nkind=linucb\ngamma=1\n[experiment]\nhorizons=25\ndims=3\nreplications=3\nseed=4\n",
    );
    let mut contents = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = run(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "-q",
        ]);
        assert!(o.status.success());
        let files = sorted_files(&out.join("trajectories"));
        assert_eq!(files.len(), 3);
        contents.push(files.iter().map(|f| fs::read(f).unwrap()).collect::<Vec<_>>());
    }
    assert_eq!(contents[0], contents[1]);
}

/// The file boundary is lossless: estimates from stored trajectories equal
/// the in-process harness records bit for bit.
#[test]
fn file_round_trip_matches_in_process() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[env]\nfeatures=unit_sphere\narms=5\nsigma=0.7\n[policy]\nkind=linucb\ngamma=2\n\
                [experiment]\nhorizons=60\ndims=3\nreplications=4\nseed=11\n[diagnostics]\nenabled=false\n";
    let cfg_path = write_cfg(dir.path(), text);
    let sim = dir.path().join("sim");
    assert!(run(&[
        "simulate",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        sim.to_str().unwrap(),
        "-q"
    ])
    .status
    .success());
    let files = sorted_files(&sim.join("trajectories"));
    let truth = sim.join("truth_cell0_T60_d3.json");
    let est = dir.path().join("est");
    let mut args = vec!["estimate".to_string()];
    args.extend(files.iter().map(|f| f.display().to_string()));
    args.extend([
        "--truth".into(),
        truth.display().to_string(),
        "--out".into(),
        est.display().to_string(),
        "-q".into(),
    ]);
    let o = bin().args(&args).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let (h, rows) = csv(&est.join("estimates.csv"));
    let cfg = ExperimentConfig::from_text(text, &[]).unwrap().0;
    let records = run_experiment(&cfg, &RunOptions::default()).unwrap().records;
    assert_eq!(rows.len(), records.len());
    for (row, rec) in rows.iter().zip(&records) {
        assert_eq!(field(&h, row, "psi_hat"), rec.psi_hat.unwrap());
        assert_eq!(field(&h, row, "se"), rec.se.unwrap());
        assert_eq!(field(&h, row, "lambda_h"), rec.lambda_h.unwrap());
    }
}

#[test]
fn diagnose_matches_in_process() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[env]\nfeatures=unit_sphere\narms=6\n[policy]\nkind=linucb\ngamma=3\n\
                [experiment]\nhorizons=80\ndims=4\nreplications=3\nseed=2\n";
    let cfg_path = write_cfg(dir.path(), text);
    let sim = dir.path().join("sim");
    assert!(run(&[
        "simulate",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        sim.to_str().unwrap(),
        "-q"
    ])
    .status
    .success());
    let files = sorted_files(&sim.join("trajectories"));
    let out = dir.path().join("diag");
    let mut args = vec!["diagnose".to_string()];
    args.extend(files.iter().map(|f| f.display().to_string()));
    let truth = sim.join("truth_cell0_T80_d4.json");
    args.extend([
        "--truth".into(),
        truth.display().to_string(),
        "--out".into(),
        out.display().to_string(),
        "-q".into(),
    ]);
    let o = bin().args(&args).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (h, rows) = csv(&out.join("stability.csv"));
    let cfg = ExperimentConfig::from_text(text, &[]).unwrap().0;
    let records = run_experiment(&cfg, &RunOptions::default()).unwrap().records;
    for (row, rec) in rows.iter().zip(&records) {
        assert_eq!(field(&h, row, "ds_stat"), rec.ds_stat.unwrap());
        assert_eq!(field(&h, row, "r_total"), rec.r_total.unwrap());
    }
    assert!(fs::metadata(out.join("manifest.json")).is_ok());
}

#[test]
fn lan_check_reports_limits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "[env]\narms=3\n[experiment]\nhorizons=100\ndims=2\nreplications=50\n[diagnostics]\nn_mc=20\nlan_epsilon=1\n",
    );
    let out = dir.path().join("lan");
    let o = run(&[
        "lan-check",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("limit -0.5000"), "{stdout}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("lan.json")).unwrap()).unwrap();
    assert_eq!(json[0]["fd_passed"], 50);
}

#[test]
fn overrides_and_seed_are_echoed() {
    let out = tempfile::tempdir().unwrap();
    let cfg = repo_file("configs/mean_d1.cfg");
    let o = run(&[
        "coverage",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "experiment.replications=20",
        "--seed",
        "99",
        "--workers",
        "2",
        "--out",
        out.path().to_str().unwrap(),
        "-q",
    ]);
    assert!(o.status.success());
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["master_seed"], 99);
    assert_eq!(m["workers"], 2);
    assert_eq!(m["overrides"][0], "experiment.replications=20");
    assert!(m["config"].as_str().unwrap().contains("replications = 20"));
}

#[test]
fn workers_from_environment() {
    let out = tempfile::tempdir().unwrap();
    let cfg = repo_file("configs/mean_d1.cfg");
    let o = bin()
        .env("ADAPTIVE_LAB_WORKERS", "3")
        .args([
            "coverage",
            "--config",
            cfg.to_str().unwrap(),
            "--set",
            "experiment.replications=10",
        ])
        .args(["--out", out.path().to_str().unwrap(), "-q"])
        .output()
        .unwrap();
    assert!(o.status.success());
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["workers"], 3);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    let bad = write_cfg(dir.path(), "[env]\nunknown_key=1\n[experiment]\nhorizons=10\n");
    assert_eq!(
        run(&["coverage", "--config", bad.to_str().unwrap(), "--out", out])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(run(&["coverage", "--out", out]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    let good = write_cfg(dir.path(), "[experiment]\nhorizons=10\n");
    assert_eq!(
        run(&[
            "coverage",
            "--config",
            good.to_str().unwrap(),
            "--set",
            "env.sigma=-1",
            "--out",
            out
        ])
        .status
        .code(),
        Some(2)
    );

    let corrupt = dir.path().join("bad.traj");
    fs::write(&corrupt, "not a trajectory\n").unwrap();
    let o = run(&["estimate", corrupt.to_str().unwrap(), "--nu", "1,0", "--out", out]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(
        run(&["estimate", corrupt.to_str().unwrap(), "--out", out])
            .status
            .code(),
        Some(2)
    );
}
