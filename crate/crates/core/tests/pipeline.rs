//! Small end-to-end runs of the harness commands.

use std::fs;

use kmpc_core::harness::{cmd_control, cmd_evaluate, cmd_generate, cmd_train, rmse_from_log, ExperimentConfig};
use kmpc_core::koopman::load_model;
use kmpc_core::{Split, Variant};

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk();
    cfg.data.samples = 500;
    cfg.training.epochs = 4;
    cfg.training.horizon = 6;
    cfg.control.horizon = 6;
    cfg.control.steps = 24;
    cfg
}

#[test]
fn generate_train_evaluate_control() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let data_dir = tmp.path().join("data");
    let gen = cmd_generate(&cfg, &data_dir).unwrap();
    assert_eq!(gen.split_lengths.iter().sum::<usize>(), 500);
    assert_eq!(gen.channels.len(), 12);
    let header = fs::read_to_string(data_dir.join("train.csv")).unwrap();
    assert!(header.starts_with("# kmpc generate\n# input-hash: sha256:"));
    assert!(header.contains("#   samples = 500"));

    let out = tmp.path().join("train");
    let dkoia = cmd_train(&cfg, Some(&data_dir), Variant::Dkoia, 3, &out).unwrap();
    let dko = cmd_train(&cfg, Some(&data_dir), Variant::Dko, 3, &out).unwrap();
    assert_eq!(dkoia.epochs, 4);
    assert_eq!(dko.epochs, 4);
    let (model, meta) = load_model(&dkoia.model_path).unwrap();
    assert_eq!(model.variant, Variant::Dkoia);
    assert!(meta["provenance"]["input_hash"]
        .as_str()
        .unwrap()
        .starts_with("sha256:"));

    let rows = cmd_evaluate(&dkoia.model_path, &data_dir, 6, &tmp.path().join("eval")).unwrap();
    let test = rows.iter().find(|r| r.split == Split::Test).unwrap();
    assert_eq!(test.error, dkoia.test_error);

    let control = cmd_control(&cfg, &dko.model_path, 2, &tmp.path().join("ctl")).unwrap();
    let m = &control.metrics;
    assert_eq!(m.bound_violations, 0);
    assert!(m.static_error.is_finite() && m.overall_error >= m.static_error);

    // The report is reproducible from the emitted log alone.
    let plant = cfg.plant_model().unwrap();
    let (x_s, _) = cfg.set_point(&plant).unwrap();
    let (dko_model, _) = load_model(&dko.model_path).unwrap();
    let log = fs::File::open(&control.log_path).unwrap();
    let rmse = rmse_from_log(log, x_s.as_slice(), &dko_model.normalizer.state.std).unwrap();
    assert_eq!(rmse.len(), cfg.control.steps + 1);
    let overall: f64 = rmse.iter().sum();
    assert!((overall - m.overall_error).abs() <= 1e-12 * overall.max(1.0));
}

#[test]
fn zero_epochs_keeps_the_initial_model() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.training.epochs = 0;
    let report = cmd_train(&cfg, None, Variant::Dko, 1, tmp.path()).unwrap();
    assert_eq!(report.epochs, 0);
    assert_eq!(report.best_epoch, None);
    let history = fs::read_to_string(&report.history_path).unwrap();
    assert_eq!(history.lines().filter(|l| !l.starts_with('#')).count(), 1);
}

#[test]
fn evaluation_horizon_longer_than_split_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let data_dir = tmp.path().join("data");
    cmd_generate(&cfg, &data_dir).unwrap();
    let mut zero = cfg.clone();
    zero.training.epochs = 0;
    let report = cmd_train(&zero, Some(&data_dir), Variant::Dko, 1, tmp.path()).unwrap();
    let err = cmd_evaluate(&report.model_path, &data_dir, 10_000, tmp.path()).unwrap_err();
    assert_eq!(err.kind(), kmpc_core::ErrorKind::Config);
}
