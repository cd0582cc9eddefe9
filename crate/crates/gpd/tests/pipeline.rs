//! Full experiment-driver runs: synthetic data through fitting, prediction,
//! and metrics, checking calibration quality and sparse/exact agreement.

use gpd::experiment::{run_experiment, sweep_inducing, ExperimentConfig};

fn pairs(entries: &[(&str, &str)]) -> Vec<(String, String)> {
    entries
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

#[test]
fn synthetic_sinusoid_run_is_well_calibrated() {
    let dir = tempfile::tempdir().unwrap();
    // Modest inducing set: on dense 1D label noise, exact marginal
    // likelihood at the smallest pseudo-count rewards near-interpolation,
    // while the collapsed bound's trace penalty keeps the fit smooth.
    let config = ExperimentConfig::from_pairs(&pairs(&[
        ("dataset", "synth:sinusoid:500"),
        ("method", "gpd"),
        ("inducing", "20"),
        ("replicates", "3"),
        ("mc_samples", "500"),
        ("seed", "7"),
        ("restarts", "1"),
        ("max_iters", "40"),
        ("out", dir.path().to_str().unwrap()),
    ]))
    .unwrap();
    let record = run_experiment(&config).unwrap();
    let reports = record.successes();
    assert_eq!(reports.len(), 3, "all replicates should succeed");
    let mean_ece =
        reports.iter().map(|m| m.report.ece).sum::<f64>() / reports.len() as f64;
    assert!(mean_ece < 0.15, "mean ECE {mean_ece} too high");
    // Ground-truth MSE is recorded for synthetic binary data and should be
    // small for a smooth sinusoid probability curve.
    for m in &reports {
        let mse = m.mse_to_truth.expect("synthetic runs record MSE to truth");
        assert!(mse < 0.08, "replicate {} MSE to truth {mse}", m.replicate);
    }
}

#[test]
fn sparse_with_all_inducing_points_matches_the_exact_run() {
    let dir = tempfile::tempdir().unwrap();
    let base = [
        ("dataset", "synth:sinusoid:80"),
        ("method", "gpd"),
        ("alpha_eps", "0.01"),
        ("replicates", "1"),
        ("mc_samples", "400"),
        ("seed", "11"),
        ("restarts", "1"),
        ("max_iters", "50"),
    ];
    let mut exact_pairs = pairs(&base);
    exact_pairs.push(("out".into(), dir.path().join("exact").to_str().unwrap().into()));
    let exact_cfg = ExperimentConfig::from_pairs(&exact_pairs).unwrap();
    let exact = run_experiment(&exact_cfg).unwrap();
    let exact_error = exact.successes()[0].report.error_rate;

    let mut sweep_pairs = pairs(&base);
    sweep_pairs.push(("out".into(), dir.path().join("sweep").to_str().unwrap().into()));
    let sweep_cfg = ExperimentConfig::from_pairs(&sweep_pairs).unwrap();
    // 40 training points (half of 80 go to test), so m = 40 means Z = X.
    let rows = sweep_inducing(&sweep_cfg, &[40]).unwrap();
    assert_eq!(rows.len(), 1);
    let diff = (rows[0].error_rate - exact_error).abs();
    assert!(
        diff < 1e-9,
        "m = n sweep error {} vs exact {exact_error}",
        rows[0].error_rate
    );
}
