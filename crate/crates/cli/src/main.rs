//! `kmpc`: data generation, Koopman model training, evaluation and
//! closed-loop MPC experiments on the reactor-separator process.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kmpc_core::harness::{self, ExperimentConfig};
use kmpc_core::{Error, ErrorKind, Variant};

/// Exit codes: 0 success, 2 configuration or usage error, 3 numerical
/// failure, 4 I/O failure.
fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Numerical => 3,
        ErrorKind::Io => 4,
    }
}

#[derive(Parser)]
#[command(
    name = "kmpc",
    version,
    about = "Deep Koopman modeling and iterative convex MPC experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). The built-in desk preset when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory. Defaults to the config's `output_dir`, else `runs/<name>`.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the excitation experiment and write the split dataset.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train one model variant.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_variant, default_value = "dkoia")]
        variant: Variant,
        /// Training seed; the config's `training.seed` when omitted.
        #[arg(long)]
        seed: Option<u64>,
        /// Dataset directory from `generate`; generated in memory when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Multi-step prediction error of a model on every dataset split.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Prediction horizon.
        #[arg(long, default_value_t = 20)]
        horizon: usize,
        #[arg(long, short, default_value = ".")]
        out: PathBuf,
    },
    /// Closed-loop run of the iterative MPC on the simulated plant.
    Control {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Selects the initial state; the config's `control.seed` when omitted.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Paired DKOIA / DKO training and control over the config's seeds.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Run only this seed instead of `compare.seeds`.
        #[arg(long)]
        seed: Option<u64>,
        /// Parallel worker threads.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// One worker, every run single-threaded.
        #[arg(long)]
        reproducible: bool,
    },
}

type Metric = fn(&harness::CompareRow) -> f64;

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load_config(common: &Common) -> kmpc_core::Result<(ExperimentConfig, PathBuf)> {
    let cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::desk(),
    };
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| Path::new("runs").join(&cfg.name));
    Ok((cfg, out))
}

fn run(cli: Cli) -> kmpc_core::Result<()> {
    match cli.command {
        Command::Generate { common } => {
            let (cfg, out) = load_config(&common)?;
            let report = harness::cmd_generate(&cfg, &out)?;
            let [a, b, c] = report.split_lengths;
            println!("dataset written to {}", report.dir.display());
            println!("splits: train {a}, validation {b}, test {c}");
            println!("{:<8} {:>14} {:>14} {:>14}", "channel", "min", "max", "mean");
            for (name, min, max, mean) in &report.channels {
                println!("{name:<8} {min:>14.6e} {max:>14.6e} {mean:>14.6e}");
            }
        }
        Command::Train {
            common,
            variant,
            seed,
            dataset,
        } => {
            let (cfg, out) = load_config(&common)?;
            let seed = seed.unwrap_or(cfg.training.seed);
            let report = harness::cmd_train(&cfg, dataset.as_deref(), variant, seed, &out)?;
            println!("model written to {}", report.model_path.display());
            println!("loss history written to {}", report.history_path.display());
            match (report.best_epoch, report.final_validation_loss) {
                (Some(e), Some(v)) => println!(
                    "{} epochs, best epoch {e}, final validation loss {v:.6e}",
                    report.epochs
                ),
                _ => println!("no training epochs run"),
            }
            println!("test error (H = {}): {:.6e}", cfg.training.horizon, report.test_error);
        }
        Command::Evaluate {
            model,
            dataset,
            horizon,
            out,
        } => {
            let rows = harness::cmd_evaluate(&model, &dataset, horizon, &out)?;
            for row in rows {
                println!(
                    "{:<10} H = {:<4} error {:.6e}",
                    row.split.to_string(),
                    row.horizon,
                    row.error
                );
            }
        }
        Command::Control { common, model, seed } => {
            let (cfg, out) = load_config(&common)?;
            let seed = seed.unwrap_or(cfg.control.seed);
            let report = harness::cmd_control(&cfg, &model, seed, &out)?;
            let m = &report.metrics;
            println!("closed-loop log written to {}", report.log_path.display());
            println!("overall error {:.6e}", m.overall_error);
            println!("static error  {:.6e}", m.static_error);
            println!("final RMSE    {:.6e}", m.final_rmse);
            println!("input bound violations {}", m.bound_violations);
            if m.qp_max_iter_steps > 0 {
                println!("QP hit its iteration limit at {} steps", m.qp_max_iter_steps);
            }
        }
        Command::Compare {
            common,
            seed,
            workers,
            reproducible,
        } => {
            let (mut cfg, out) = load_config(&common)?;
            if let Some(seed) = seed {
                cfg.compare.seeds = vec![seed];
            }
            let workers = if reproducible { 1 } else { workers.max(1) };
            let report = harness::cmd_compare(&cfg, &out, workers)?;
            let pairs = report.seeds().len();
            println!(
                "{:<16} {:>14} {:>14} {:>12}",
                "metric", "dkoia mean", "dko mean", "dkoia better"
            );
            let metrics: [(&str, Metric); 3] = [
                ("test_error", |r| r.test_error),
                ("overall_error", |r| r.metrics.overall_error),
                ("static_error", |r| r.metrics.static_error),
            ];
            for (name, metric) in metrics {
                println!(
                    "{name:<16} {:>14.6e} {:>14.6e} {:>9}/{pairs}",
                    report.mean(Variant::Dkoia, metric),
                    report.mean(Variant::Dko, metric),
                    report.dkoia_wins(metric),
                );
            }
            println!("tables written to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
