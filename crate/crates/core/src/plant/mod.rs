//! Continuous-time process models and their discrete-time simulation.
//!
//! A [`PlantModel`] wraps a right-hand side `ẋ = f(x, u, p)` together with its
//! dimensions and input bounds. Sampling is done by classical RK4 with a fixed
//! number of substeps per sampling period, so every simulation is a pure
//! function of its arguments and, when process noise is enabled, the seed.

mod excitation;
mod params;
pub mod reactor_separator;
mod trajectory;

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::linalg::{first_non_finite, Vector};
use crate::{Error, Result};

pub use excitation::{
    generate_excitation, generate_excitation_with_levels, Excitation, ExcitationConfig, ExcitationKind,
};
pub use params::ParameterSet;
pub use reactor_separator::{ReactorSeparator, ReactorSeparatorParams};
pub use trajectory::{read_trajectory_csv, trajectory_header, write_trajectory_csv, Trajectory};

/// RK4 substeps per sampling period.
pub const DEFAULT_SUBSTEPS: usize = 10;

/// Right-hand side of `ẋ = f(x, u, p)`. Implementations write the derivative
/// into `dx`, which has the state dimension.
pub trait Dynamics: Send + Sync {
    fn rhs(&self, x: &[f64], u: &[f64], p: &[f64], dx: &mut [f64]);
}

impl<F> Dynamics for F
where
    F: Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync,
{
    fn rhs(&self, x: &[f64], u: &[f64], p: &[f64], dx: &mut [f64]) {
        self(x, u, p, dx)
    }
}

/// A continuous-time nonlinear process with box-bounded inputs.
#[derive(Clone)]
pub struct PlantModel {
    state_dim: usize,
    input_dim: usize,
    disturbance_dim: usize,
    dynamics: Arc<dyn Dynamics>,
    input_lower: Vector,
    input_upper: Vector,
    parameter_set_name: String,
}

impl fmt::Debug for PlantModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlantModel")
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("disturbance_dim", &self.disturbance_dim)
            .field("input_lower", &self.input_lower.as_slice())
            .field("input_upper", &self.input_upper.as_slice())
            .field("parameter_set_name", &self.parameter_set_name)
            .finish()
    }
}

impl PlantModel {
    pub fn new(
        state_dim: usize,
        input_dim: usize,
        disturbance_dim: usize,
        dynamics: impl Dynamics + 'static,
        input_lower: Vector,
        input_upper: Vector,
        parameter_set_name: impl Into<String>,
    ) -> Result<Self> {
        if state_dim == 0 || input_dim == 0 {
            return Err(Error::Config(
                "plant state and input dimensions must be positive".into(),
            ));
        }
        if input_lower.len() != input_dim || input_upper.len() != input_dim {
            return Err(Error::shape(
                "plant input bounds",
                input_dim,
                format!("{}/{}", input_lower.len(), input_upper.len()),
            ));
        }
        if let Some(i) = (0..input_dim).find(|&i| input_lower[i].partial_cmp(&input_upper[i]).is_none_or(|o| o.is_gt()))
        {
            return Err(Error::Config(format!(
                "input bound {i}: lower {} exceeds upper {}",
                input_lower[i], input_upper[i]
            )));
        }
        Ok(Self {
            state_dim,
            input_dim,
            disturbance_dim,
            dynamics: Arc::new(dynamics),
            input_lower,
            input_upper,
            parameter_set_name: parameter_set_name.into(),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn disturbance_dim(&self) -> usize {
        self.disturbance_dim
    }

    pub fn input_lower(&self) -> &Vector {
        &self.input_lower
    }

    pub fn input_upper(&self) -> &Vector {
        &self.input_upper
    }

    pub fn parameter_set_name(&self) -> &str {
        &self.parameter_set_name
    }

    pub fn rhs(&self, x: &Vector, u: &Vector, p: &Vector) -> Vector {
        let mut dx = Vector::zeros(self.state_dim);
        self.dynamics
            .rhs(x.as_slice(), u.as_slice(), p.as_slice(), dx.as_mut_slice());
        dx
    }

    /// Clamp an input vector into the box bounds.
    pub fn clip_input(&self, u: &Vector) -> Vector {
        Vector::from_fn(self.input_dim, |i, _| {
            u[i].clamp(self.input_lower[i], self.input_upper[i])
        })
    }

    fn check_dims(&self, x: &Vector, u: &Vector, p: &Vector) -> Result<()> {
        if x.len() != self.state_dim {
            return Err(Error::shape("plant state", self.state_dim, x.len()));
        }
        if u.len() != self.input_dim {
            return Err(Error::shape("plant input", self.input_dim, u.len()));
        }
        if p.len() != self.disturbance_dim {
            return Err(Error::shape("plant disturbance", self.disturbance_dim, p.len()));
        }
        Ok(())
    }
}

/// Additive process noise `ε ~ N(0, diag(std²))`, clipped per channel.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProcessNoiseConfig {
    pub std: Vec<f64>,
    pub clip_abs: Vec<f64>,
    pub seed: u64,
}

impl ProcessNoiseConfig {
    /// Noise with the same clip bound on every channel.
    pub fn uniform_clip(std: Vec<f64>, clip_abs: f64, seed: u64) -> Self {
        let clip_abs = vec![clip_abs; std.len()];
        Self { std, clip_abs, seed }
    }

    pub(crate) fn validate(&self, state_dim: usize) -> Result<()> {
        if self.std.len() != state_dim || self.clip_abs.len() != state_dim {
            return Err(Error::shape(
                "process noise config",
                state_dim,
                format!("std {} / clip {}", self.std.len(), self.clip_abs.len()),
            ));
        }
        if self.std.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config(
                "process noise std must be finite and non-negative".into(),
            ));
        }
        if self.clip_abs.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::Config(
                "process noise clip bound must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Seeded generator of clipped process-noise vectors.
pub struct ProcessNoise {
    channels: Vec<Option<Normal<f64>>>,
    clip_abs: Vec<f64>,
    rng: ChaCha8Rng,
}

impl ProcessNoise {
    pub fn new(cfg: &ProcessNoiseConfig, state_dim: usize) -> Result<Self> {
        cfg.validate(state_dim)?;
        let channels = cfg
            .std
            .iter()
            .map(|&s| (s > 0.0).then(|| Normal::new(0.0, s).expect("validated std")))
            .collect();
        Ok(Self {
            channels,
            clip_abs: cfg.clip_abs.clone(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        })
    }

    pub fn sample(&mut self) -> Vector {
        let values: Vec<f64> = self
            .channels
            .iter()
            .zip(&self.clip_abs)
            .map(|(dist, &clip)| match dist {
                Some(d) => d.sample(&mut self.rng).clamp(-clip, clip),
                None => 0.0,
            })
            .collect();
        Vector::from_vec(values)
    }
}

/// One sampling period of RK4 with `substeps` equal internal steps.
pub fn integrate_step_with(
    model: &PlantModel,
    x: &Vector,
    u: &Vector,
    p: &Vector,
    dt: f64,
    substeps: usize,
) -> Result<Vector> {
    model.check_dims(x, u, p)?;
    if !(dt.is_finite() && dt > 0.0) || substeps == 0 {
        return Err(Error::Config(format!(
            "invalid sampling period {dt} or substep count {substeps}"
        )));
    }
    if let Some(channel) = first_non_finite(x.as_slice())
        .or_else(|| first_non_finite(u.as_slice()))
        .or_else(|| first_non_finite(p.as_slice()))
    {
        return Err(Error::IntegrationDiverged { step: None, channel });
    }

    let n = model.state_dim;
    let h = dt / substeps as f64;
    let (u, p) = (u.as_slice(), p.as_slice());
    let mut state = x.as_slice().to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    for _ in 0..substeps {
        model.dynamics.rhs(&state, u, p, &mut k1);
        for i in 0..n {
            tmp[i] = state[i] + 0.5 * h * k1[i];
        }
        model.dynamics.rhs(&tmp, u, p, &mut k2);
        for i in 0..n {
            tmp[i] = state[i] + 0.5 * h * k2[i];
        }
        model.dynamics.rhs(&tmp, u, p, &mut k3);
        for i in 0..n {
            tmp[i] = state[i] + h * k3[i];
        }
        model.dynamics.rhs(&tmp, u, p, &mut k4);
        for i in 0..n {
            state[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    if let Some(channel) = first_non_finite(&state) {
        return Err(Error::IntegrationDiverged { step: None, channel });
    }
    Ok(Vector::from_vec(state))
}

/// One sampling period with the default [`DEFAULT_SUBSTEPS`].
pub fn integrate_step(model: &PlantModel, x: &Vector, u: &Vector, p: &Vector, dt: f64) -> Result<Vector> {
    integrate_step_with(model, x, u, p, dt, DEFAULT_SUBSTEPS)
}

/// Simulate `inputs.len()` sampling periods from `x0`; returns `L + 1` states.
pub fn simulate(
    model: &PlantModel,
    x0: &Vector,
    inputs: &[Vector],
    disturbances: &[Vector],
    dt: f64,
    noise: Option<&ProcessNoiseConfig>,
) -> Result<Vec<Vector>> {
    if inputs.len() != disturbances.len() {
        return Err(Error::shape(
            "simulate input/disturbance sequences",
            inputs.len(),
            disturbances.len(),
        ));
    }
    if x0.len() != model.state_dim {
        return Err(Error::shape("initial state", model.state_dim, x0.len()));
    }
    let mut noise = noise.map(|cfg| ProcessNoise::new(cfg, model.state_dim)).transpose()?;

    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(x0.clone());
    for (k, (u, p)) in inputs.iter().zip(disturbances).enumerate() {
        let current = states.last().expect("non-empty");
        let mut next = integrate_step(model, current, u, p, dt).map_err(|e| match e {
            Error::IntegrationDiverged { channel, .. } => Error::IntegrationDiverged { step: Some(k), channel },
            other => other,
        })?;
        if let Some(noise) = noise.as_mut() {
            next += noise.sample();
        }
        states.push(next);
    }
    Ok(states)
}

/// Empty disturbance vectors for plants with `p = 0`, or zeros otherwise.
pub fn zero_disturbances(model: &PlantModel, len: usize) -> Vec<Vector> {
    vec![Vector::zeros(model.disturbance_dim); len]
}

/// Integrate with constant inputs until the per-period change falls below
/// `tol` in every channel, or `max_periods` is exhausted.
pub fn relax_to_steady_state(
    model: &PlantModel,
    x0: &Vector,
    u: &Vector,
    p: &Vector,
    dt: f64,
    tol: f64,
    max_periods: usize,
) -> Result<Vector> {
    let mut x = x0.clone();
    for k in 0..max_periods {
        let next = integrate_step(model, &x, u, p, dt).map_err(|e| match e {
            Error::IntegrationDiverged { channel, .. } => Error::IntegrationDiverged { step: Some(k), channel },
            other => other,
        })?;
        let change = (&next - &x).amax();
        x = next;
        if change < tol {
            return Ok(x);
        }
    }
    Err(Error::Config(format!(
        "no steady state within {max_periods} sampling periods"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay() -> PlantModel {
        PlantModel::new(
            1,
            1,
            0,
            |x: &[f64], _u: &[f64], _p: &[f64], dx: &mut [f64]| dx[0] = -x[0],
            Vector::from_element(1, -1.0),
            Vector::from_element(1, 1.0),
            "decay",
        )
        .unwrap()
    }

    fn v(values: &[f64]) -> Vector {
        Vector::from_column_slice(values)
    }

    #[test]
    fn scalar_decay_matches_exponential() {
        let plant = decay();
        let x = integrate_step(&plant, &v(&[1.0]), &v(&[0.0]), &v(&[]), 0.1).unwrap();
        assert!((x[0] - (-0.1f64).exp()).abs() < 1e-9);
        assert!((x[0] - 0.904837418).abs() < 1e-9);
    }

    #[test]
    fn rk4_converges_at_fourth_order() {
        let plant = decay();
        let exact = (-0.1f64).exp();
        let err = |substeps| {
            let x = integrate_step_with(&plant, &v(&[1.0]), &v(&[0.0]), &v(&[]), 0.1, substeps).unwrap();
            (x[0] - exact).abs()
        };
        for substeps in [1, 2, 4] {
            let ratio = err(substeps) / err(2 * substeps);
            assert!((14.0..=18.0).contains(&ratio), "ratio {ratio} at {substeps}");
        }
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let plant = decay();
        let x = integrate_step(&plant, &v(&[0.0]), &v(&[0.3]), &v(&[]), 5.0).unwrap();
        assert!(x[0].abs() < 1e-12);
    }

    #[test]
    fn divergence_names_channel() {
        let plant = PlantModel::new(
            2,
            1,
            0,
            |x: &[f64], _u: &[f64], _p: &[f64], dx: &mut [f64]| {
                dx[0] = 0.0;
                dx[1] = x[1] * x[1] * 1e300;
            },
            v(&[0.0]),
            v(&[1.0]),
            "blowup",
        )
        .unwrap();
        let err = integrate_step(&plant, &v(&[1.0, 1e10]), &v(&[0.0]), &v(&[]), 1.0).unwrap_err();
        assert!(matches!(err, Error::IntegrationDiverged { channel: 1, .. }));

        let err = simulate(&plant, &v(&[1.0, 1e10]), &[v(&[0.0])], &[v(&[])], 1.0, None).unwrap_err();
        assert!(matches!(
            err,
            Error::IntegrationDiverged {
                step: Some(0),
                channel: 1
            }
        ));
    }

    #[test]
    fn empty_horizon_returns_initial_state() {
        let plant = decay();
        let states = simulate(&plant, &v(&[0.7]), &[], &[], 0.1, None).unwrap();
        assert_eq!(states, vec![v(&[0.7])]);
    }

    #[test]
    fn zero_noise_matches_noise_free() {
        let plant = decay();
        let inputs = vec![v(&[0.0]); 20];
        let dist = zero_disturbances(&plant, 20);
        let clean = simulate(&plant, &v(&[1.0]), &inputs, &dist, 0.1, None).unwrap();
        let cfg = ProcessNoiseConfig::uniform_clip(vec![0.0], 5.0, 3);
        let noisy = simulate(&plant, &v(&[1.0]), &inputs, &dist, 0.1, Some(&cfg)).unwrap();
        assert_eq!(clean, noisy);
    }

    #[test]
    fn noise_is_clipped_and_reproducible() {
        let cfg = ProcessNoiseConfig::uniform_clip(vec![10.0, 0.1], 5.0, 11);
        let mut a = ProcessNoise::new(&cfg, 2).unwrap();
        let mut b = ProcessNoise::new(&cfg, 2).unwrap();
        let mut clipped = 0;
        for _ in 0..2000 {
            let s = a.sample();
            assert_eq!(s, b.sample());
            assert!(s.iter().all(|e| e.abs() <= 5.0));
            if s[0].abs() == 5.0 {
                clipped += 1;
            }
        }
        assert!(clipped > 0);
    }

    #[test]
    fn rejects_inverted_bounds() {
        let err = PlantModel::new(
            1,
            1,
            0,
            |_: &[f64], _: &[f64], _: &[f64], _: &mut [f64]| {},
            v(&[1.0]),
            v(&[0.0]),
            "bad",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let plant = decay();
        let err = integrate_step(&plant, &v(&[1.0, 2.0]), &v(&[0.0]), &v(&[]), 0.1).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }
}
