//! End-to-end checks across modules: residual model from a batch, output
//! files, aggregate curves and config round-trips.

use std::fs;

use gpcal::acquisition::{CandidatePool, Strategy};
use gpcal::arm::{realize, true_residual, MeasurementModel};
use gpcal::gp::OptimizerSettings;
use gpcal::harness::output::aggregate_curves;
use gpcal::harness::{emit_outputs, run_experiment, Experiment, ExperimentConfig, OutputDir};
use gpcal::residual::{holdout_error, ResidualModel};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn batch_fit_corrects_planar_arm() {
    let cfg = ExperimentConfig::for_robot("planar2", vec![Strategy::Random], 1, vec![0]);
    let exp = Experiment::new(cfg).unwrap();
    let spec = exp.config.perturbation_spec(&exp.robot, None);
    let arm = realize(&exp.nominal, &spec, 5, MeasurementModel::noiseless()).unwrap();
    let configs = CandidatePool::latin_hypercube(exp.nominal.joint_limits(), 60, 2).unwrap();
    let obs: Vec<_> = configs
        .points()
        .iter()
        .map(|q| (q.clone(), true_residual(&arm, &exp.nominal, q).unwrap()))
        .collect();
    let model = ResidualModel::from_observations(
        exp.nominal.clone(),
        exp.config.gp.hyper(2),
        obs,
        Some(&OptimizerSettings::default()),
    )
    .unwrap();
    let report = holdout_error(&model, &arm, &exp.holdout).unwrap();
    assert!(report.mean_cal < 0.05 * report.mean_uncal, "{} vs {}", report.mean_cal, report.mean_uncal);
}

#[test]
fn output_files_have_expected_shape() {
    let cfg = ExperimentConfig::for_robot("planar2", vec![Strategy::GpUcb, Strategy::Random], 30, vec![0, 1, 2]);
    let exp = Experiment::new(cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = OutputDir::new(dir.path());
    let outcome = run_experiment(&exp, Some(&out)).unwrap();
    assert!(outcome.failures.is_empty());
    emit_outputs(&outcome.records, &out).unwrap();

    let curve = fs::read_to_string(dir.path().join("curves/gp-ucb_seed0.csv")).unwrap();
    let lines: Vec<&str> = curve.lines().collect();
    assert_eq!(lines[0], "t,q1,q2,err_norm,best_so_far");
    assert_eq!(lines.len(), 31);
    let holdout = fs::read_to_string(dir.path().join("holdout/random_seed2.csv")).unwrap();
    let lines: Vec<&str> = holdout.lines().collect();
    assert_eq!(lines[0], "idx,q1,q2,err_uncal,err_cal,eq_w,eq_x,eq_y,eq_z,ep_x,ep_y,ep_z");
    assert_eq!(lines.len(), 51);
    let json = fs::read_to_string(dir.path().join("runs/gp-ucb_seed1.json")).unwrap();
    let value: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(value["schema_version"], 1);
    assert_eq!(value["config_hash"], exp.config_hash);
    assert!(dir.path().join("aggregate.csv").exists());
    assert!(dir.path().join("summary.csv").exists());
    assert!(!dir.path().join("failures.json").exists());

    // Aggregates are pointwise medians of the per-run curves.
    for point in aggregate_curves(&outcome.records) {
        let direct = median(
            outcome
                .records
                .iter()
                .filter(|r| r.strategy == point.strategy)
                .map(|r| r.rows[point.t - 1].err_norm)
                .collect(),
        );
        assert_eq!(point.err[0], direct);
    }
}

#[test]
fn shipped_configs_load() {
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    let mut n = 0;
    for entry in fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        let cfg = gpcal::harness::load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        Experiment::new(cfg).unwrap();
        n += 1;
    }
    assert!(n >= 4);
}
