//! Declarative experiment configuration (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::SplitRanges;
use crate::koopman::{Architecture, KoopmanModel, TrainingConfig, Variant};
use crate::linalg::{diag, Matrix, Vector};
use crate::mpc::{MpcProblem, StateBounds};
use crate::plant::reactor_separator::{DATA_INITIAL_STATE, NOMINAL_INPUT, NOMINAL_STEADY_STATE};
use crate::plant::{
    relax_to_steady_state, ExcitationConfig, ExcitationKind, PlantModel, ProcessNoiseConfig, ReactorSeparator,
    ReactorSeparatorParams,
};
use crate::qp::SolveOptions;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Where commands write by default; not part of the embedded config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub plant: PlantConfig,
    pub data: DataConfig,
    pub model: Architecture,
    pub training: TrainingConfig,
    pub control: ControlConfig,
    pub compare: CompareConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    ReactorSeparator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub kind: PlantKind,
    /// Parameter file; the built-in set when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter_file: Option<PathBuf>,
    /// Sampling period in hours.
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<f64>>,
    /// `[train, validation, test]` sample counts; 9:1:2 proportions when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub splits: Option<[usize; 3]>,
    pub excitation: ExcitationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process_noise: Option<ProcessNoiseConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    /// Diagonal of `Q` (normalized states).
    pub q: Vec<f64>,
    /// Diagonal of `R` (normalized inputs).
    pub r: Vec<f64>,
}

/// Closed-loop runs start from the plant state reached after `settle_steps`
/// periods from the set-point under a constant input drawn uniformly from
/// `[low · u_s, high · u_s]` (clipped to the bounds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialStateConfig {
    pub low: f64,
    pub high: f64,
    pub settle_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub horizon: usize,
    pub max_iterations: usize,
    pub steps: usize,
    /// Trailing samples averaged for the static error; `steps / 6` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_tolerance: Option<f64>,
    pub seed: u64,
    pub qp: SolveOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub set_point_state: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub set_point_input: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process_noise: Option<ProcessNoiseConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_bounds: Option<StateBounds>,
    pub initial_state: InitialStateConfig,
    pub dkoia: Weights,
    pub dko: Weights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub seeds: Vec<u64>,
}

fn reactor_data(samples: usize) -> DataConfig {
    DataConfig {
        samples,
        initial_state: Some(DATA_INITIAL_STATE.to_vec()),
        splits: None,
        excitation: ExcitationConfig {
            kind: ExcitationKind::StepHold,
            hold_steps: 20,
            noise_std: vec![3.25e4, 1.12e4, 3.25e4],
            seed: 7,
        },
        process_noise: Some(ProcessNoiseConfig::uniform_clip([0.01, 0.01, 0.5].repeat(3), 5.0, 8)),
    }
}

fn reactor_control(horizon: usize) -> ControlConfig {
    ControlConfig {
        horizon,
        max_iterations: 2,
        steps: 300,
        static_window: None,
        stop_tolerance: None,
        seed: 0,
        qp: SolveOptions::default(),
        set_point_state: None,
        set_point_input: None,
        process_noise: None,
        state_bounds: None,
        initial_state: InitialStateConfig {
            low: 0.5,
            high: 1.5,
            settle_steps: 50,
        },
        dkoia: Weights {
            q: vec![1.5, 0.1, 3.3, 2.4, 0.4, 1.5, 1.5, 0.1, 3.3],
            r: vec![0.002, 0.002, 0.0001],
        },
        dko: Weights {
            q: vec![1.7, 0.2, 1.3, 1.7, 0.2, 0.5, 1.9, 0.2, 2.1],
            r: vec![0.01, 0.005, 0.001],
        },
    }
}

impl ExperimentConfig {
    /// 3000 samples, `H = 20`, `N = 20`; minutes on one core.
    pub fn desk() -> Self {
        Self {
            name: "reactor-separator-desk".into(),
            output_dir: None,
            plant: PlantConfig {
                kind: PlantKind::ReactorSeparator,
                parameter_file: None,
                dt: 0.005,
            },
            data: reactor_data(3000),
            model: Architecture::reactor_separator(),
            training: TrainingConfig {
                horizon: 20,
                epochs: 400,
                batch_size: 128,
                learning_rate: 1e-3,
                l2: 0.1,
                seed: 1,
            },
            control: reactor_control(20),
            compare: CompareConfig {
                seeds: (1..=10).collect(),
            },
        }
    }

    /// 12000 samples, `H = 40`, 400 epochs, `N = 40`.
    pub fn full() -> Self {
        let mut cfg = Self::desk();
        cfg.name = "reactor-separator-full".into();
        cfg.data = reactor_data(12000);
        cfg.training.horizon = 40;
        cfg.control = reactor_control(40);
        cfg
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load and validate; a relative `plant.parameter_file` is resolved
    /// against the config file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text)?;
        if let (Some(file), Some(dir)) = (&cfg.plant.parameter_file, path.parent()) {
            if file.is_relative() {
                cfg.plant.parameter_file = Some(dir.join(file));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// TOML of everything that determines results (no output location).
    pub fn to_toml(&self) -> String {
        let embedded = Self {
            output_dir: None,
            ..self.clone()
        };
        toml::to_string(&embedded).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |path: &str, msg: String| Err(Error::Config(format!("{path}: {msg}")));
        if !(self.plant.dt.is_finite() && self.plant.dt > 0.0) {
            return fail("plant.dt", format!("must be positive, got {}", self.plant.dt));
        }
        if let Some(file) = &self.plant.parameter_file {
            if !file.exists() {
                return fail("plant.parameter_file", format!("{} does not exist", file.display()));
            }
        }
        let (n, m) = (9, 3);
        if self.data.samples < 2 {
            return fail("data.samples", "need at least two samples".into());
        }
        if let Some(x0) = &self.data.initial_state {
            if x0.len() != n {
                return fail("data.initial_state", format!("expected {n} entries, got {}", x0.len()));
            }
        }
        if let Some([a, b, c]) = self.data.splits {
            if a + b + c > self.data.samples {
                return fail(
                    "data.splits",
                    format!("{a} + {b} + {c} exceeds {} samples", self.data.samples),
                );
            }
        }
        if self.data.excitation.noise_std.len() != m {
            return fail("data.excitation.noise_std", format!("expected {m} entries"));
        }
        if let Some(noise) = &self.data.process_noise {
            if noise.std.len() != n || noise.clip_abs.len() != n {
                return fail(
                    "data.process_noise",
                    format!("expected {n} entries in std and clip_abs"),
                );
            }
        }
        if self.model.lifted_dim == 0 {
            return fail("model.lifted_dim", "must be positive".into());
        }
        if self.model.phi_dim == 0 {
            return fail("model.phi_dim", "must be positive".into());
        }
        self.training
            .validate()
            .map_err(|e| Error::Config(format!("training: {e}")))?;
        if self.training.epochs == 0 {
            log::warn!("training.epochs = 0: models stay at their initialization");
        }
        let c = &self.control;
        if c.horizon == 0 {
            return fail("control.horizon", "must be positive".into());
        }
        if c.max_iterations == 0 {
            return fail("control.max_iterations", "must be positive".into());
        }
        if c.steps == 0 {
            return fail("control.steps", "must be positive".into());
        }
        if let Some(w) = c.static_window {
            if w == 0 || w > c.steps + 1 {
                return fail("control.static_window", format!("must be in 1..={}", c.steps + 1));
            }
        }
        if !(c.initial_state.low <= c.initial_state.high && c.initial_state.low >= 0.0) {
            return fail("control.initial_state", "need 0 <= low <= high".into());
        }
        for (path, w) in [("control.dkoia", &c.dkoia), ("control.dko", &c.dko)] {
            if w.q.len() != n || w.q.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return fail(&format!("{path}.q"), format!("expected {n} positive entries"));
            }
            if w.r.len() != m || w.r.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return fail(&format!("{path}.r"), format!("expected {m} non-negative entries"));
            }
        }
        for (path, v, len) in [
            ("control.set_point_state", &c.set_point_state, n),
            ("control.set_point_input", &c.set_point_input, m),
        ] {
            if let Some(v) = v {
                if v.len() != len {
                    return fail(path, format!("expected {len} entries, got {}", v.len()));
                }
            }
        }
        if self.compare.seeds.is_empty() {
            return fail("compare.seeds", "need at least one seed".into());
        }
        Ok(())
    }

    pub fn plant_model(&self) -> Result<PlantModel> {
        let params = match &self.plant.parameter_file {
            Some(path) => ReactorSeparatorParams::from_file(path)?,
            None => ReactorSeparatorParams::builtin(),
        };
        Ok(ReactorSeparator::new(params).into_plant())
    }

    pub fn split_ranges(&self) -> Result<SplitRanges> {
        let total = self.data.samples;
        match self.data.splits {
            Some([a, b, c]) => SplitRanges::from_counts(a, b, c, total),
            None => SplitRanges::proportional(total),
        }
    }

    /// `(x_s, u_s)`. Without an explicit state set-point the built-in plant
    /// uses its recorded steady state; a custom parameter file is relaxed to
    /// its steady state under `u_s`.
    pub fn set_point(&self, plant: &PlantModel) -> Result<(Vector, Vector)> {
        let c = &self.control;
        let u_s = Vector::from_column_slice(c.set_point_input.as_deref().unwrap_or(&NOMINAL_INPUT));
        let x_s = match (&c.set_point_state, &self.plant.parameter_file, &c.set_point_input) {
            (Some(x), _, _) => Vector::from_column_slice(x),
            (None, None, None) => Vector::from_column_slice(&NOMINAL_STEADY_STATE),
            _ => relax_to_steady_state(
                plant,
                &Vector::from_column_slice(&DATA_INITIAL_STATE),
                &u_s,
                &Vector::zeros(plant.disturbance_dim()),
                self.plant.dt,
                1e-12,
                200_000,
            )?,
        };
        Ok((x_s, u_s))
    }

    pub fn weights(&self, variant: Variant) -> (Matrix, Matrix) {
        let w = match variant {
            Variant::Dkoia => &self.control.dkoia,
            Variant::Dko => &self.control.dko,
        };
        (diag(&w.q), diag(&w.r))
    }

    pub fn mpc_problem(&self, model: KoopmanModel, plant: &PlantModel) -> Result<MpcProblem> {
        let (x_s, u_s) = self.set_point(plant)?;
        let (q, r) = self.weights(model.variant);
        let c = &self.control;
        let mut problem = MpcProblem::new(
            model,
            q,
            r,
            c.horizon,
            x_s,
            u_s,
            plant.input_lower().clone(),
            plant.input_upper().clone(),
        )?;
        problem.max_iterations = c.max_iterations;
        problem.stop_tolerance = c.stop_tolerance;
        problem.state_bounds = c.state_bounds.clone();
        problem.qp = c.qp;
        problem.validate()?;
        Ok(problem)
    }

    pub fn static_window(&self) -> usize {
        self.control.static_window.unwrap_or((self.control.steps / 6).max(1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shipped(name: &str) -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
    }

    #[test]
    fn toml_round_trip() {
        for cfg in [ExperimentConfig::desk(), ExperimentConfig::full()] {
            let text = cfg.to_toml();
            assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        }
        let mut cfg = ExperimentConfig::desk();
        cfg.control.stop_tolerance = Some(1e-3);
        cfg.control.static_window = Some(10);
        cfg.data.splits = Some([100, 20, 30]);
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn output_dir_is_not_embedded() {
        let mut cfg = ExperimentConfig::desk();
        cfg.output_dir = Some("runs/a".into());
        assert!(!cfg.to_toml().contains("runs/a"));
        assert_eq!(cfg.to_toml(), ExperimentConfig::desk().to_toml());
    }

    #[test]
    fn shipped_configs_match_presets() {
        assert_eq!(
            ExperimentConfig::from_file(&shipped("desk.toml")).unwrap(),
            ExperimentConfig::desk()
        );
        assert_eq!(
            ExperimentConfig::from_file(&shipped("full.toml")).unwrap(),
            ExperimentConfig::full()
        );
    }

    #[test]
    fn errors_name_the_field() {
        let mut cfg = ExperimentConfig::desk();
        cfg.control.dko.q.pop();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("control.dko.q"), "{err}");

        let text = ExperimentConfig::desk()
            .to_toml()
            .replace("[compare]", "[compare]\nbogus = 1");
        assert!(ExperimentConfig::from_toml(&text).is_err());

        let mut cfg = ExperimentConfig::desk();
        cfg.data.splits = Some([3000, 1, 0]);
        assert!(cfg.validate().unwrap_err().to_string().contains("data.splits"));
    }

    #[test]
    fn static_window_default() {
        let cfg = ExperimentConfig::desk();
        assert_eq!(cfg.static_window(), 50);
    }
}
