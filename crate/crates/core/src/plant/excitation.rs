//! Excitation signals for open-loop data collection.
//!
//! Both kinds produce `u_k = ū_k + ε_u` where the mean level `ū_k` is held for
//! `hold_steps` samples and `ε_u ~ N(0, σ_u)` is drawn fresh every sample.
//! The noisy sample is clipped to the plant's input bounds.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::PlantModel;
use crate::linalg::Vector;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExcitationKind {
    /// Uniform draws within the input bounds.
    StepHold,
    /// `ū_k = A sin(ω k + φ) + B` with ω redrawn from `[omega_min, omega_max]`
    /// at the start of each hold block. A random phase is drawn when `phase`
    /// is absent.
    SineWave {
        amplitude: Vec<f64>,
        bias: Vec<f64>,
        omega_min: f64,
        omega_max: f64,
        #[serde(default)]
        phase: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcitationConfig {
    #[serde(flatten)]
    pub kind: ExcitationKind,
    pub hold_steps: usize,
    pub noise_std: Vec<f64>,
    pub seed: u64,
}

/// Generated inputs together with the pre-noise mean levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Excitation {
    pub levels: Vec<Vector>,
    pub inputs: Vec<Vector>,
}

impl ExcitationConfig {
    fn validate(&self, model: &PlantModel) -> Result<()> {
        let m = model.input_dim();
        if self.hold_steps == 0 {
            return Err(Error::Config("excitation hold_steps must be positive".into()));
        }
        if self.noise_std.len() != m {
            return Err(Error::shape("excitation noise_std", m, self.noise_std.len()));
        }
        if self.noise_std.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config(
                "excitation noise_std must be finite and non-negative".into(),
            ));
        }
        if let ExcitationKind::SineWave {
            amplitude,
            bias,
            omega_min,
            omega_max,
            phase,
        } = &self.kind
        {
            if amplitude.len() != m || bias.len() != m {
                return Err(Error::shape(
                    "sine excitation amplitude/bias",
                    m,
                    format!("{}/{}", amplitude.len(), bias.len()),
                ));
            }
            if let Some(phase) = phase {
                if phase.len() != m {
                    return Err(Error::shape("sine excitation phase", m, phase.len()));
                }
            }
            if !(omega_min.is_finite() && omega_max.is_finite()) {
                return Err(Error::Config("sine excitation frequencies must be finite".into()));
            }
            let (lo, hi) = (model.input_lower(), model.input_upper());
            for i in 0..m {
                let a = amplitude[i].abs();
                if bias[i] - a < lo[i] || bias[i] + a > hi[i] {
                    return Err(Error::Config(format!(
                        "sine excitation channel {i}: bias {} ± amplitude {} leaves [{}, {}]",
                        bias[i], a, lo[i], hi[i]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Generate `length` input vectors for `model`.
pub fn generate_excitation(cfg: &ExcitationConfig, model: &PlantModel, length: usize) -> Result<Vec<Vector>> {
    Ok(generate_excitation_with_levels(cfg, model, length)?.inputs)
}

/// As [`generate_excitation`], also returning the mean level behind each sample.
pub fn generate_excitation_with_levels(
    cfg: &ExcitationConfig,
    model: &PlantModel,
    length: usize,
) -> Result<Excitation> {
    if length == 0 {
        return Err(Error::Config("excitation length must be positive".into()));
    }
    cfg.validate(model)?;
    let m = model.input_dim();
    let (lo, hi) = (model.input_lower(), model.input_upper());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise: Vec<Option<Normal<f64>>> = cfg
        .noise_std
        .iter()
        .map(|&s| (s > 0.0).then(|| Normal::new(0.0, s).expect("validated std")))
        .collect();

    let phase: Vec<f64> = match &cfg.kind {
        ExcitationKind::SineWave { phase: Some(p), .. } => p.clone(),
        ExcitationKind::SineWave { phase: None, .. } => (0..m).map(|_| rng.random_range(0.0..TAU)).collect(),
        ExcitationKind::StepHold => Vec::new(),
    };

    let mut levels = Vec::with_capacity(length);
    let mut inputs = Vec::with_capacity(length);
    let mut level = Vector::zeros(m);
    let mut omega = vec![0.0; m];
    for k in 0..length {
        let new_block = k % cfg.hold_steps == 0;
        match &cfg.kind {
            ExcitationKind::StepHold => {
                if new_block {
                    level = Vector::from_fn(m, |i, _| uniform(&mut rng, lo[i], hi[i]));
                }
            }
            ExcitationKind::SineWave {
                amplitude,
                bias,
                omega_min,
                omega_max,
                ..
            } => {
                if new_block {
                    let (w_lo, w_hi) = (omega_min.min(*omega_max), omega_min.max(*omega_max));
                    for w in omega.iter_mut() {
                        *w = uniform(&mut rng, w_lo, w_hi);
                    }
                    // The level is evaluated at the block start and held.
                    level = Vector::from_fn(m, |i, _| {
                        amplitude[i] * (omega[i] * k as f64 + phase[i]).sin() + bias[i]
                    });
                }
            }
        }
        let sample = Vector::from_fn(m, |i, _| {
            let eps = noise[i].map_or(0.0, |d| d.sample(&mut rng));
            (level[i] + eps).clamp(lo[i], hi[i])
        });
        levels.push(level.clone());
        inputs.push(sample);
    }
    Ok(Excitation { levels, inputs })
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}
