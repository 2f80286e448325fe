//! Experiment pipeline: data generation, training, evaluation, closed-loop
//! control and paired DKOIA/DKO comparisons.

mod commands;
mod config;
mod metrics;
mod provenance;

pub use commands::{
    build_dataset, cmd_compare, cmd_control, cmd_evaluate, cmd_generate, cmd_train, initial_state, run_control,
    train_variant, CompareReport, CompareRow, ControlReport, EvaluationRow, GenerateReport, TrainReport,
};
pub use config::{
    CompareConfig, ControlConfig, DataConfig, ExperimentConfig, InitialStateConfig, PlantConfig, PlantKind, Weights,
};
pub use metrics::{bound_violations, rmse_from_log, run_metrics, tracking_errors, RunMetrics};
pub use provenance::{content_hash, Provenance};
