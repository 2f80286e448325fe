//! The five pipeline commands. Each writes its artifacts under an output
//! directory and returns a summary for the caller to print.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::dataset::{read_dataset, write_dataset, Split, TrajectoryDataset};
use crate::koopman::{evaluate, load_model, save_model, train, KoopmanModel, TrainingOutcome, Variant};
use crate::linalg::Vector;
use crate::mpc::{run_closed_loop, ClosedLoopLog};
use crate::plant::reactor_separator::{INPUT_NAMES, STATE_NAMES};
use crate::plant::{generate_excitation, simulate, zero_disturbances, PlantModel, Trajectory};
use crate::{Error, Result};

use super::config::ExperimentConfig;
use super::metrics::{run_metrics, RunMetrics};
use super::provenance::Provenance;

const VARIANTS: [Variant; 2] = [Variant::Dkoia, Variant::Dko];

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Write `preamble` followed by CSV rows.
fn write_csv(path: &Path, preamble: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    out.write_all(preamble.as_bytes()).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_closed_loop(path: &Path, preamble: &str, log: &ClosedLoopLog) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    out.write_all(preamble.as_bytes()).map_err(|e| Error::io(path, e))?;
    log.write_csv(out, 0.0)
}

fn f(v: f64) -> String {
    format!("{v:?}")
}

fn strings<const N: usize>(items: [&str; N]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

// --- generate ---------------------------------------------------------------

/// Simulate the configured excitation experiment.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<TrajectoryDataset> {
    let plant = cfg.plant_model()?;
    let len = cfg.data.samples;
    let inputs = generate_excitation(&cfg.data.excitation, &plant, len)?;
    let disturbances = zero_disturbances(&plant, len);
    let x0 = match &cfg.data.initial_state {
        Some(x) => Vector::from_column_slice(x),
        None => cfg.set_point(&plant)?.0,
    };
    let mut states = simulate(
        &plant,
        &x0,
        &inputs,
        &disturbances,
        cfg.plant.dt,
        cfg.data.process_noise.as_ref(),
    )?;
    states.pop();
    let trajectory = Trajectory {
        dt: cfg.plant.dt,
        t0: 0.0,
        states,
        inputs,
        disturbances,
    };
    TrajectoryDataset::new(trajectory, cfg.split_ranges()?, cfg.data.excitation.seed)
}

#[derive(Debug, Clone)]
pub struct GenerateReport {
    pub dir: PathBuf,
    /// `(channel, min, max, mean)` over the whole trajectory.
    pub channels: Vec<(String, f64, f64, f64)>,
    pub split_lengths: [usize; 3],
}

pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<GenerateReport> {
    let dataset = build_dataset(cfg)?;
    let prov = Provenance::new("generate", cfg.to_toml(), &borrow(&parameter_input(cfg)?));
    write_dataset(&dataset, out, prov.to_json(), &prov.preamble())?;
    let traj = &dataset.trajectory;
    let mut channels = Vec::new();
    let mut summarize = |name: &str, values: Vec<f64>| {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        channels.push((name.to_string(), min, max, mean));
    };
    for (i, name) in STATE_NAMES.iter().enumerate() {
        summarize(name, traj.states.iter().map(|x| x[i]).collect());
    }
    for (i, name) in INPUT_NAMES.iter().enumerate() {
        summarize(name, traj.inputs.iter().map(|u| u[i]).collect());
    }
    Ok(GenerateReport {
        dir: out.to_path_buf(),
        channels,
        split_lengths: Split::ALL.map(|s| dataset.split_len(s)),
    })
}

type Files = Vec<(String, Vec<u8>)>;

/// The plant parameter file, when one is configured.
fn parameter_input(cfg: &ExperimentConfig) -> Result<Files> {
    match &cfg.plant.parameter_file {
        Some(path) => Ok(vec![("parameters".into(), read_bytes(path)?)]),
        None => Ok(Vec::new()),
    }
}

fn dataset_inputs(dir: &Path) -> Result<Files> {
    ["dataset.json", "train.csv", "validation.csv", "test.csv"]
        .iter()
        .map(|name| Ok((name.to_string(), read_bytes(&dir.join(name))?)))
        .collect()
}

fn borrow(files: &[(String, Vec<u8>)]) -> Vec<(&str, &[u8])> {
    files.iter().map(|(n, b)| (n.as_str(), b.as_slice())).collect()
}

// --- train ------------------------------------------------------------------

/// Train one variant with the config's hyperparameters and `seed`.
pub fn train_variant(
    cfg: &ExperimentConfig,
    dataset: &TrajectoryDataset,
    variant: Variant,
    seed: u64,
) -> Result<TrainingOutcome> {
    let tc = crate::koopman::TrainingConfig {
        seed,
        ..cfg.training.clone()
    };
    train(variant, &cfg.model, dataset, &tc)
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model_path: PathBuf,
    pub history_path: PathBuf,
    pub best_epoch: Option<usize>,
    pub epochs: usize,
    pub final_validation_loss: Option<f64>,
    pub test_error: f64,
}

fn history_rows(outcome: &TrainingOutcome) -> Vec<Vec<String>> {
    outcome
        .history
        .iter()
        .map(|r| vec![r.epoch.to_string(), f(r.train_loss), f(r.validation_loss)])
        .collect()
}

/// Train on the dataset in `dataset_dir`, or on a freshly generated one.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    dataset_dir: Option<&Path>,
    variant: Variant,
    seed: u64,
    out: &Path,
) -> Result<TrainReport> {
    create_dir(out)?;
    let (dataset, mut files) = match dataset_dir {
        Some(dir) => (read_dataset(dir)?, dataset_inputs(dir)?),
        None => (build_dataset(cfg)?, Vec::new()),
    };
    files.extend(parameter_input(cfg)?);
    let settings = format!("variant = \"{variant}\"\nseed = {seed}\n{}", cfg.to_toml());
    let prov = Provenance::new("train", settings, &borrow(&files));

    let outcome = train_variant(cfg, &dataset, variant, seed)?;
    let test_error = evaluate(&outcome.model, &dataset, Split::Test, cfg.training.horizon)?;
    let model_path = out.join(format!("model_{variant}.json"));
    let meta = json!({
        "provenance": prov.to_json(),
        "best_epoch": outcome.best_epoch,
        "test_error": test_error,
    });
    save_model(&outcome.model, &model_path, meta)?;
    let history_path = out.join(format!("loss_{variant}.csv"));
    write_csv(
        &history_path,
        &prov.preamble(),
        &strings(["epoch", "train_loss", "validation_loss"]),
        &history_rows(&outcome),
    )?;
    Ok(TrainReport {
        model_path,
        history_path,
        best_epoch: outcome.best_epoch,
        epochs: outcome.history.len(),
        final_validation_loss: outcome.history.last().map(|r| r.validation_loss),
        test_error,
    })
}

// --- evaluate ---------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRow {
    pub split: Split,
    pub horizon: usize,
    pub error: f64,
}

/// Per-split prediction errors written to `evaluation.csv`.
pub fn cmd_evaluate(model_path: &Path, dataset_dir: &Path, horizon: usize, out: &Path) -> Result<Vec<EvaluationRow>> {
    create_dir(out)?;
    let (model, _) = load_model(model_path)?;
    let dataset = read_dataset(dataset_dir)?;
    let mut files = vec![("model".to_string(), read_bytes(model_path)?)];
    files.extend(dataset_inputs(dataset_dir)?);
    let prov = Provenance::new(
        "evaluate",
        format!("horizon = {horizon}\nvariant = \"{}\"\n", model.variant),
        &borrow(&files),
    );
    let rows = Split::ALL
        .iter()
        .map(|&split| {
            Ok(EvaluationRow {
                split,
                horizon,
                error: evaluate(&model, &dataset, split, horizon)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_csv(
        &out.join("evaluation.csv"),
        &prov.preamble(),
        &strings(["split", "horizon", "variant", "error"]),
        &rows
            .iter()
            .map(|r| {
                vec![
                    r.split.to_string(),
                    r.horizon.to_string(),
                    model.variant.to_string(),
                    f(r.error),
                ]
            })
            .collect::<Vec<_>>(),
    )?;
    Ok(rows)
}

// --- control ----------------------------------------------------------------

/// Plant state after `settle_steps` periods from `x_s` under a constant input
/// drawn from `[low · u_s, high · u_s]` with the seeded generator.
pub fn initial_state(cfg: &ExperimentConfig, plant: &PlantModel, seed: u64) -> Result<Vector> {
    let (x_s, u_s) = cfg.set_point(plant)?;
    let init = &cfg.control.initial_state;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let u = Vector::from_fn(u_s.len(), |i, _| {
        let lo = (init.low * u_s[i]).clamp(plant.input_lower()[i], plant.input_upper()[i]);
        let hi = (init.high * u_s[i]).clamp(plant.input_lower()[i], plant.input_upper()[i]);
        if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    });
    let steps = init.settle_steps;
    let states = simulate(
        plant,
        &x_s,
        &vec![u; steps],
        &zero_disturbances(plant, steps),
        cfg.plant.dt,
        None,
    )?;
    Ok(states.last().expect("non-empty").clone())
}

/// One closed-loop run of `model` from the initial state of `seed`.
pub fn run_control(
    cfg: &ExperimentConfig,
    plant: &PlantModel,
    model: &KoopmanModel,
    seed: u64,
) -> Result<(ClosedLoopLog, RunMetrics)> {
    let problem = cfg.mpc_problem(model.clone(), plant)?;
    let x0 = initial_state(cfg, plant, seed)?;
    let steps = cfg.control.steps;
    let disturbances = zero_disturbances(plant, steps + cfg.control.horizon);
    let noise = cfg.control.process_noise.as_ref();
    let log = run_closed_loop(&problem, plant, &x0, &disturbances, steps, cfg.plant.dt, noise)?;
    let metrics = run_metrics(&log, plant.input_lower(), plant.input_upper(), cfg.static_window());
    Ok((log, metrics))
}

#[derive(Debug, Clone)]
pub struct ControlReport {
    pub log_path: PathBuf,
    pub metrics_path: PathBuf,
    pub metrics: RunMetrics,
}

const METRIC_HEADER: [&str; 7] = [
    "overall_error",
    "static_error",
    "max_rmse",
    "final_rmse",
    "bound_violations",
    "qp_max_iter_steps",
    "qp_iterations",
];

fn metric_fields(m: &RunMetrics) -> Vec<String> {
    vec![
        f(m.overall_error),
        f(m.static_error),
        f(m.max_rmse),
        f(m.final_rmse),
        m.bound_violations.to_string(),
        m.qp_max_iter_steps.to_string(),
        m.qp_iterations.to_string(),
    ]
}

pub fn cmd_control(cfg: &ExperimentConfig, model_path: &Path, seed: u64, out: &Path) -> Result<ControlReport> {
    create_dir(out)?;
    let (model, _) = load_model(model_path)?;
    let plant = cfg.plant_model()?;
    let mut files = vec![("model".to_string(), read_bytes(model_path)?)];
    files.extend(parameter_input(cfg)?);
    let prov = Provenance::new(
        "control",
        format!("seed = {seed}\nvariant = \"{}\"\n{}", model.variant, cfg.to_toml()),
        &borrow(&files),
    );
    let (log, metrics) = run_control(cfg, &plant, &model, seed)?;
    let log_path = out.join(format!("closed_loop_{}_seed{seed}.csv", model.variant));
    write_closed_loop(&log_path, &prov.preamble(), &log)?;
    let metrics_path = out.join(format!("control_metrics_{}_seed{seed}.csv", model.variant));
    let mut header = strings(["variant", "seed", "static_window"]);
    header.extend(strings(METRIC_HEADER));
    let mut row = vec![
        model.variant.to_string(),
        seed.to_string(),
        cfg.static_window().to_string(),
    ];
    row.extend(metric_fields(&metrics));
    write_csv(&metrics_path, &prov.preamble(), &header, &[row])?;
    Ok(ControlReport {
        log_path,
        metrics_path,
        metrics,
    })
}

// --- compare ----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub seed: u64,
    pub variant: Variant,
    pub test_error: f64,
    pub best_epoch: Option<usize>,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub metrics_path: PathBuf,
    pub summary_path: PathBuf,
}

impl CompareReport {
    pub fn row(&self, seed: u64, variant: Variant) -> Option<&CompareRow> {
        self.rows.iter().find(|r| r.seed == seed && r.variant == variant)
    }

    /// Mean of `metric` over the seeds of `variant`.
    pub fn mean(&self, variant: Variant, metric: impl Fn(&CompareRow) -> f64) -> f64 {
        let values: Vec<f64> = self.rows.iter().filter(|r| r.variant == variant).map(metric).collect();
        values.iter().sum::<f64>() / values.len() as f64
    }

    /// Seeds where DKOIA's `metric` is strictly below DKO's.
    pub fn dkoia_wins(&self, metric: impl Fn(&CompareRow) -> f64) -> usize {
        self.seeds()
            .iter()
            .filter(|&&s| match (self.row(s, Variant::Dkoia), self.row(s, Variant::Dko)) {
                (Some(a), Some(b)) => metric(a) < metric(b),
                _ => false,
            })
            .count()
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut seeds: Vec<u64> = self.rows.iter().map(|r| r.seed).collect();
        seeds.dedup();
        seeds
    }
}

struct SeedResult {
    seed: u64,
    variant: Variant,
    outcome: TrainingOutcome,
    test_error: f64,
    log: ClosedLoopLog,
    metrics: RunMetrics,
}

fn compare_one(
    cfg: &ExperimentConfig,
    plant: &PlantModel,
    dataset: &TrajectoryDataset,
    seed: u64,
    variant: Variant,
) -> Result<SeedResult> {
    let outcome = train_variant(cfg, dataset, variant, seed)?;
    let test_error = evaluate(&outcome.model, dataset, Split::Test, cfg.training.horizon)?;
    let (log, metrics) = run_control(cfg, plant, &outcome.model, seed)?;
    log::info!(
        "seed {seed} {variant}: test error {test_error:.4e}, static error {:.4e}",
        metrics.static_error
    );
    Ok(SeedResult {
        seed,
        variant,
        outcome,
        test_error,
        log,
        metrics,
    })
}

/// Paired sweep over `compare.seeds`: one shared dataset; per seed, both
/// variants are trained with that seed and run closed loop from that seed's
/// initial state. `workers > 1` runs jobs on parallel threads; the outputs
/// do not depend on the worker count.
pub fn cmd_compare(cfg: &ExperimentConfig, out: &Path, workers: usize) -> Result<CompareReport> {
    create_dir(out)?;
    let plant = cfg.plant_model()?;
    let dataset_dir = out.join("dataset");
    let params = parameter_input(cfg)?;
    let gen_prov = Provenance::new("generate", cfg.to_toml(), &borrow(&params));
    let dataset = build_dataset(cfg)?;
    write_dataset(&dataset, &dataset_dir, gen_prov.to_json(), &gen_prov.preamble())?;
    let prov = Provenance::new("compare", cfg.to_toml(), &borrow(&params));

    let jobs: Vec<(u64, Variant)> = cfg
        .compare
        .seeds
        .iter()
        .flat_map(|&s| VARIANTS.map(|v| (s, v)))
        .collect();
    let results: Mutex<Vec<Option<Result<SeedResult>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, jobs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(seed, variant)) = jobs.get(i) else { break };
                let result = compare_one(cfg, &plant, &dataset, seed, variant);
                results.lock().expect("result lock")[i] = Some(result);
            });
        }
    });
    let results: Vec<SeedResult> = results
        .into_inner()
        .expect("result lock")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<Result<_>>()?;

    let models_dir = out.join("models");
    create_dir(&models_dir)?;
    let preamble = prov.preamble();
    let mut rows = Vec::with_capacity(results.len());
    for r in &results {
        let tag = format!("{}_seed{}", r.variant, r.seed);
        save_model(
            &r.outcome.model,
            &models_dir.join(format!("model_{tag}.json")),
            json!({ "provenance": prov.to_json(), "seed": r.seed, "best_epoch": r.outcome.best_epoch }),
        )?;
        write_csv(
            &out.join(format!("loss_{tag}.csv")),
            &preamble,
            &strings(["epoch", "train_loss", "validation_loss"]),
            &history_rows(&r.outcome),
        )?;
        write_closed_loop(&out.join(format!("closed_loop_{tag}.csv")), &preamble, &r.log)?;
        rows.push(CompareRow {
            seed: r.seed,
            variant: r.variant,
            test_error: r.test_error,
            best_epoch: r.outcome.best_epoch,
            metrics: r.metrics.clone(),
        });
    }

    let mut header = strings(["seed", "variant", "test_error", "best_epoch"]);
    header.extend(strings(METRIC_HEADER));
    let mut table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![
                r.seed.to_string(),
                r.variant.to_string(),
                f(r.test_error),
                r.best_epoch.map_or(String::new(), |e| e.to_string()),
            ];
            row.extend(metric_fields(&r.metrics));
            row
        })
        .collect();
    let report = CompareReport {
        rows,
        metrics_path: out.join("metrics.csv"),
        summary_path: out.join("summary.csv"),
    };
    for variant in VARIANTS {
        let mean = |m: fn(&CompareRow) -> f64| f(report.mean(variant, m));
        table.push(vec![
            "mean".into(),
            variant.to_string(),
            mean(|r| r.test_error),
            String::new(),
            mean(|r| r.metrics.overall_error),
            mean(|r| r.metrics.static_error),
            mean(|r| r.metrics.max_rmse),
            mean(|r| r.metrics.final_rmse),
            mean(|r| r.metrics.bound_violations as f64),
            mean(|r| r.metrics.qp_max_iter_steps as f64),
            mean(|r| r.metrics.qp_iterations as f64),
        ]);
    }
    write_csv(&report.metrics_path, &preamble, &header, &table)?;

    let pairs = report.seeds().len();
    let summary: Vec<Vec<String>> = [
        ("test_error", (|r: &CompareRow| r.test_error) as fn(&CompareRow) -> f64),
        ("overall_error", |r| r.metrics.overall_error),
        ("static_error", |r| r.metrics.static_error),
    ]
    .iter()
    .map(|(name, metric)| {
        vec![
            name.to_string(),
            f(report.mean(Variant::Dkoia, metric)),
            f(report.mean(Variant::Dko, metric)),
            report.dkoia_wins(metric).to_string(),
            pairs.to_string(),
        ]
    })
    .collect();
    write_csv(
        &report.summary_path,
        &preamble,
        &strings(["metric", "dkoia_mean", "dko_mean", "dkoia_better", "pairs"]),
        &summary,
    )?;
    Ok(report)
}
