use adaptive_lab::config::ExperimentConfig;
use adaptive_lab::diagnostics::eigen_anisotropy_report;
use adaptive_lab::harness::replication_seed;
use adaptive_lab::stats::median;
use adaptive_lab::trajectory::generate_trajectory;

/// Bulk eigenvalues of `TΣ̂` under LinUCB with the scheduled bonus sit near
/// `√(2γ²T/(d+1))`. The schedule constant keeps `γ√(d/T)` well below one;
/// with constant 1 at `d = 8` the bonus exceeds `√T` and LinUCB explores
/// almost uniformly.
#[test]
fn bulk_eigenvalues_at_d8() {
    let text = "[env]\nfeatures=unit_sphere\narms=16\n[policy]\nkind=linucb\ngamma_scale=0.15\n\
                [experiment]\nhorizons=32000\ndims=8\nreplications=100\nseed=8\n";
    let cfg = ExperimentConfig::from_text(text, &[]).unwrap().0;
    let cell = cfg.cells()[0];
    let gamma = cfg.policy_spec(cell).unwrap().gamma().unwrap();
    let beta0 = cfg.beta0(8).unwrap();
    let env = cfg.environment(8).unwrap();
    let policy = cfg.policy_spec(cell).unwrap();
    let ratios: Vec<f64> = (0..cfg.replications)
        .map(|rep| {
            let seed = replication_seed(cfg.master_seed, &cell, rep);
            let traj = generate_trajectory(&env, &policy, cell.horizon, seed).unwrap();
            eigen_anisotropy_report(&traj, &beta0, gamma).unwrap().bulk_ratio_median
        })
        .collect();
    let m = median(&ratios);
    assert!((0.5..=2.0).contains(&m), "median bulk ratio {m}");
    assert!(gamma * (8.0 / 32000f64).sqrt() < 0.7);
}
