//! Iterative convex MPC on a lifted model.
//!
//! At every time step the controller runs up to `l_max` iterations. Iteration
//! `l` rolls the full model out along the previous input sequence, freezes
//! `d_j = B_p p_j + B_φ φ(C ẑ_j, u_j, p_j)` along that rollout, and solves the
//! resulting box QP. The cost and bounds live in normalized units; the
//! applied input is denormalized and clamped to the raw bounds.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::koopman::KoopmanModel;
use crate::linalg::{all_finite, Matrix, Vector};
use crate::plant::{integrate_step, PlantModel, ProcessNoise, ProcessNoiseConfig};
use crate::qp::{condense, CondenseInput, QpStatus, SolveOptions, StatePenalty};
use crate::{Error, Result};

/// Soft state bounds in raw units, penalized by `weight · violation²` in
/// normalized units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct MpcProblem {
    pub model: KoopmanModel,
    /// Weight on normalized state errors (`n × n`).
    pub q: Matrix,
    /// Weight on normalized input deviations (`m × m`).
    pub r: Matrix,
    pub horizon: usize,
    pub max_iterations: usize,
    /// Raw-unit set-points.
    pub x_s: Vector,
    pub u_s: Vector,
    pub input_lower: Vector,
    pub input_upper: Vector,
    pub state_bounds: Option<StateBounds>,
    /// Stop once `‖u^{[l]} − u^{[l−1]}‖₂` (normalized) falls below this.
    pub stop_tolerance: Option<f64>,
    pub qp: SolveOptions,
}

impl MpcProblem {
    /// Problem with the given weights, `l_max = 2`, no state bounds and no
    /// early stopping.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: KoopmanModel,
        q: Matrix,
        r: Matrix,
        horizon: usize,
        x_s: Vector,
        u_s: Vector,
        input_lower: Vector,
        input_upper: Vector,
    ) -> Result<Self> {
        let problem = Self {
            model,
            q,
            r,
            horizon,
            max_iterations: 2,
            x_s,
            u_s,
            input_lower,
            input_upper,
            state_bounds: None,
            stop_tolerance: None,
            qp: SolveOptions::default(),
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn validate(&self) -> Result<()> {
        let model = &self.model;
        model.validate()?;
        let (n, m) = (model.state_dim(), model.input_dim());
        for (what, actual, expected) in [
            ("Q rows", self.q.nrows(), n),
            ("Q cols", self.q.ncols(), n),
            ("R rows", self.r.nrows(), m),
            ("R cols", self.r.ncols(), m),
            ("x_s", self.x_s.len(), n),
            ("u_s", self.u_s.len(), m),
            ("input lower bound", self.input_lower.len(), m),
            ("input upper bound", self.input_upper.len(), m),
        ] {
            if actual != expected {
                return Err(Error::shape(what, expected, actual));
            }
        }
        if self.horizon == 0 || self.max_iterations == 0 {
            return Err(Error::Config("control horizon and l_max must be positive".into()));
        }
        let sym = |m: &Matrix| (m - m.transpose()).amax() <= 1e-12 * m.amax().max(1.0);
        if !sym(&self.q) || self.q.clone().cholesky().is_none() {
            return Err(Error::Config("Q must be symmetric positive definite".into()));
        }
        if !sym(&self.r) || self.r.clone().symmetric_eigenvalues().min() < -1e-12 {
            return Err(Error::Config("R must be symmetric positive semidefinite".into()));
        }
        if !all_finite(self.x_s.as_slice()) || !all_finite(self.u_s.as_slice()) {
            return Err(Error::Config("set-points must be finite".into()));
        }
        if let Some(i) = (0..m).find(|&i| {
            self.input_lower[i]
                .partial_cmp(&self.input_upper[i])
                .is_none_or(|o| o.is_gt())
        }) {
            return Err(Error::Config(format!("input bounds inverted on channel {i}")));
        }
        if let Some(b) = &self.state_bounds {
            if b.lower.len() != n || b.upper.len() != n {
                return Err(Error::shape(
                    "state bounds",
                    n,
                    format!("{}/{}", b.lower.len(), b.upper.len()),
                ));
            }
            if !(b.weight >= 0.0 && b.weight.is_finite()) {
                return Err(Error::Config("state penalty weight must be non-negative".into()));
            }
        }
        if let Some(tol) = self.stop_tolerance {
            if tol.is_nan() || tol < 0.0 {
                return Err(Error::Config("stop tolerance must be non-negative".into()));
            }
        }
        Ok(())
    }

    fn normalized_bounds(&self) -> (Vector, Vector) {
        let norm = &self.model.normalizer;
        (
            norm.normalize_input(&self.input_lower),
            norm.normalize_input(&self.input_upper),
        )
    }

    fn clip_raw(&self, u: &Vector) -> Vector {
        Vector::from_fn(u.len(), |i, _| u[i].clamp(self.input_lower[i], self.input_upper[i]))
    }
}

/// Warm-start memory between time steps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ControllerState {
    /// Final input sequence of the previous step, raw units.
    pub previous: Option<Vec<Vector>>,
    pub k: usize,
}

/// Shift the stored sequence by one and repeat its last entry; `u_s` clipped
/// to the bounds when nothing is stored.
pub fn warm_start(problem: &MpcProblem, state: &ControllerState) -> Vec<Vector> {
    let n = problem.horizon;
    match &state.previous {
        Some(prev) if !prev.is_empty() => {
            let last = prev.last().expect("non-empty");
            (0..n).map(|j| prev.get(j + 1).unwrap_or(last).clone()).collect()
        }
        _ => vec![problem.clip_raw(&problem.u_s); n],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// Optimized input sequence, raw units.
    pub inputs: Vec<Vector>,
    /// Lifted states `ẑ_{0..N}` of the frozen affine model under `inputs`.
    pub lifted: Vec<Vector>,
    pub objective: f64,
    pub qp_iterations: usize,
    pub qp_status: QpStatus,
    /// `‖u^{[l]} − u^{[l−1]}‖₂` in normalized units.
    pub distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTrace {
    pub iterations: Vec<IterationRecord>,
}

impl IterationTrace {
    pub fn qp_iterations(&self) -> usize {
        self.iterations.iter().map(|r| r.qp_iterations).sum()
    }

    pub fn hit_max_iter(&self) -> bool {
        self.iterations.iter().any(|r| r.qp_status == QpStatus::MaxIter)
    }
}

fn stack(seq: &[Vector], dim: usize) -> Vector {
    let mut out = Vector::zeros(seq.len() * dim);
    for (j, v) in seq.iter().enumerate() {
        out.rows_mut(j * dim, dim).copy_from(v);
    }
    out
}

fn unstack(v: &Vector, dim: usize) -> Vec<Vector> {
    (0..v.len() / dim).map(|j| v.rows(j * dim, dim).into_owned()).collect()
}

/// One convexified solve around `previous` (raw units). The QP starts from
/// `qp_start`, or from `previous` when `None`.
pub fn iterate_once(
    problem: &MpcProblem,
    x: &Vector,
    forecast: &[Vector],
    previous: &[Vector],
    qp_start: Option<&[Vector]>,
) -> Result<IterationRecord> {
    let model = &problem.model;
    let norm = &model.normalizer;
    let (n, m, horizon) = (model.state_dim(), model.input_dim(), problem.horizon);
    if x.len() != n {
        return Err(Error::shape("state", n, x.len()));
    }
    if forecast.len() < horizon {
        return Err(Error::shape("disturbance forecast length", horizon, forecast.len()));
    }
    if previous.len() != horizon {
        return Err(Error::shape("previous input sequence", horizon, previous.len()));
    }
    if let Some(j) = forecast[..horizon]
        .iter()
        .position(|p| p.len() != model.disturbance_dim())
    {
        return Err(Error::shape(
            format!("forecast p_{j}"),
            model.disturbance_dim(),
            forecast[j].len(),
        ));
    }

    let u_prev: Vec<Vector> = previous.iter().map(|u| norm.normalize_input(u)).collect();
    let p_n: Vec<Vector> = forecast[..horizon]
        .iter()
        .map(|p| norm.normalize_disturbance(p))
        .collect();
    let z0 = model.lift(x)?;

    // Previous-iterate rollout through the full model, freezing the offsets.
    let mut offsets = Vec::with_capacity(horizon);
    let mut z = z0.clone();
    for j in 0..horizon {
        let x_hat = model.decode_normalized(&z);
        let phi = model.phi_normalized(&x_hat, &u_prev[j], &p_n[j])?;
        let d = &model.b_p * &p_n[j] + &model.b_phi * phi;
        z = &model.a * &z + &model.b_u * &u_prev[j] + &d;
        if !all_finite(z.as_slice()) {
            return Err(Error::Control {
                step: j,
                message: "prediction along the previous iterate diverged".into(),
            });
        }
        offsets.push(d);
    }

    let x_s = norm.normalize_state(&problem.x_s);
    let u_s = norm.normalize_input(&problem.u_s);
    let (lower, upper) = problem.normalized_bounds();
    let penalty = problem.state_bounds.as_ref().map(|b| {
        let lo = norm.normalize_state(&Vector::from_column_slice(&b.lower));
        let hi = norm.normalize_state(&Vector::from_column_slice(&b.upper));
        let mut active = Vec::new();
        // Bounds violated along the previous iterate become quadratic penalties.
        let mut z = z0.clone();
        for j in 0..horizon {
            z = &model.a * &z + &model.b_u * &u_prev[j] + &offsets[j];
            let y = model.decode_normalized(&z);
            for i in 0..n {
                if y[i] < lo[i] {
                    active.push((j, i, lo[i]));
                } else if y[i] > hi[i] {
                    active.push((j, i, hi[i]));
                }
            }
        }
        StatePenalty {
            weight: b.weight,
            active,
        }
    });
    let condensed = condense(
        model,
        &CondenseInput {
            z0: &z0,
            offsets: &offsets,
            q: &problem.q,
            r: &problem.r,
            x_s: &x_s,
            u_s: &u_s,
            lower: &lower,
            upper: &upper,
            penalty: penalty.as_ref(),
        },
    )?;
    let start = match qp_start {
        Some(seq) if seq.len() != horizon => return Err(Error::shape("QP start sequence", horizon, seq.len())),
        Some(seq) => stack(&seq.iter().map(|u| norm.normalize_input(u)).collect::<Vec<_>>(), m),
        None => stack(&u_prev, m),
    };
    let solution = condensed.problem.solve(Some(&start), &problem.qp)?;
    let u_new = unstack(&solution.u, m);

    let mut lifted = Vec::with_capacity(horizon + 1);
    lifted.push(z0);
    for j in 0..horizon {
        let next = &model.a * &lifted[j] + &model.b_u * &u_new[j] + &offsets[j];
        lifted.push(next);
    }
    let distance = (&solution.u - stack(&u_prev, m)).norm();
    Ok(IterationRecord {
        inputs: u_new
            .iter()
            .map(|u| problem.clip_raw(&norm.denormalize_input(u)))
            .collect(),
        lifted,
        objective: solution.objective,
        qp_iterations: solution.iterations,
        qp_status: solution.status,
        distance,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    /// First input of the final sequence, raw units, within bounds.
    pub applied: Vector,
    pub trace: IterationTrace,
}

/// Run up to `l_max` iterations from the warm start, store the final
/// sequence and return its first element.
pub fn control_step(
    problem: &MpcProblem,
    state: &mut ControllerState,
    x: &Vector,
    forecast: &[Vector],
) -> Result<ControlOutput> {
    let initial = warm_start(problem, state);
    let mut current = initial.clone();
    let mut trace = IterationTrace::default();
    for _ in 0..problem.max_iterations {
        let record = iterate_once(problem, x, forecast, &current, Some(&initial)).map_err(|e| match e {
            Error::Control { message, .. } => Error::Control { step: state.k, message },
            Error::RolloutDiverged { .. } => Error::Control {
                step: state.k,
                message: "lifted prediction diverged".into(),
            },
            other => other,
        })?;
        current = record.inputs.clone();
        let distance = record.distance;
        trace.iterations.push(record);
        if problem.stop_tolerance.is_some_and(|tol| distance < tol) {
            break;
        }
    }
    let applied = current[0].clone();
    state.previous = Some(current);
    state.k += 1;
    Ok(ControlOutput { applied, trace })
}

/// Everything recorded during a closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopLog {
    pub dt: f64,
    /// `steps + 1` plant states.
    pub states: Vec<Vector>,
    /// `steps` applied inputs.
    pub inputs: Vec<Vector>,
    /// Disturbances acting at each step.
    pub disturbances: Vec<Vector>,
    /// Normalized RMSE to `x_s` of every logged state.
    pub rmse: Vec<f64>,
    pub qp_iterations: Vec<usize>,
    pub mpc_iterations: Vec<usize>,
    pub traces: Vec<IterationTrace>,
}

/// `sqrt(mean_i ((x_i − x_s,i) / σ_i)²)` with the model's training statistics.
pub fn normalized_rmse(model: &KoopmanModel, x: &Vector, x_s: &Vector) -> f64 {
    let std = &model.normalizer.state.std;
    let sum: f64 = (0..x.len()).map(|i| ((x[i] - x_s[i]) / std[i]).powi(2)).sum();
    (sum / x.len() as f64).sqrt()
}

/// Alternate [`control_step`] with one plant sampling period for `steps`
/// steps. `disturbances` must cover `steps + N − 1` samples so the last
/// forecast is complete.
pub fn run_closed_loop(
    problem: &MpcProblem,
    plant: &PlantModel,
    x0: &Vector,
    disturbances: &[Vector],
    steps: usize,
    dt: f64,
    noise: Option<&ProcessNoiseConfig>,
) -> Result<ClosedLoopLog> {
    problem.validate()?;
    let model = &problem.model;
    if plant.state_dim() != model.state_dim()
        || plant.input_dim() != model.input_dim()
        || plant.disturbance_dim() != model.disturbance_dim()
    {
        return Err(Error::shape(
            "plant/model dimensions",
            format!(
                "({},{},{})",
                model.state_dim(),
                model.input_dim(),
                model.disturbance_dim()
            ),
            format!(
                "({},{},{})",
                plant.state_dim(),
                plant.input_dim(),
                plant.disturbance_dim()
            ),
        ));
    }
    let needed = steps + problem.horizon.saturating_sub(1);
    if disturbances.len() < needed {
        return Err(Error::shape(
            "closed-loop disturbance trajectory",
            needed,
            disturbances.len(),
        ));
    }
    let mut noise = noise.map(|c| ProcessNoise::new(c, plant.state_dim())).transpose()?;

    let mut state = ControllerState::default();
    let mut x = x0.clone();
    let mut log = ClosedLoopLog {
        dt,
        states: vec![x.clone()],
        inputs: Vec::with_capacity(steps),
        disturbances: disturbances[..steps].to_vec(),
        rmse: vec![normalized_rmse(model, &x, &problem.x_s)],
        qp_iterations: Vec::with_capacity(steps),
        mpc_iterations: Vec::with_capacity(steps),
        traces: Vec::with_capacity(steps),
    };
    for k in 0..steps {
        let out = control_step(problem, &mut state, &x, &disturbances[k..])?;
        x = integrate_step(plant, &x, &out.applied, &disturbances[k], dt).map_err(|e| match e {
            Error::IntegrationDiverged { channel, .. } => Error::IntegrationDiverged { step: Some(k), channel },
            other => other,
        })?;
        if let Some(noise) = noise.as_mut() {
            x += noise.sample();
        }
        log.rmse.push(normalized_rmse(model, &x, &problem.x_s));
        log.states.push(x.clone());
        log.inputs.push(out.applied);
        log.qp_iterations.push(out.trace.qp_iterations());
        log.mpc_iterations.push(out.trace.iterations.len());
        log.traces.push(out.trace);
    }
    Ok(log)
}

impl ClosedLoopLog {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    /// Rows `k = 0..=steps`; the final row has empty input and iteration
    /// fields since no input is applied at the last state.
    pub fn write_csv<W: Write>(&self, writer: W, t0: f64) -> Result<()> {
        let n = self.states[0].len();
        let m = self.inputs.first().map_or(0, |u| u.len());
        let p = self.disturbances.first().map_or(0, |d| d.len());
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["k".to_string(), "t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        header.extend((1..=p).map(|i| format!("p{i}")));
        header.extend(["rmse_k", "qp_iters", "mpc_iters"].map(String::from));
        w.write_record(&header)?;
        for k in 0..self.states.len() {
            let mut row = vec![k.to_string(), format!("{:?}", t0 + k as f64 * self.dt)];
            row.extend(self.states[k].iter().map(|v| format!("{v:?}")));
            match self.inputs.get(k) {
                Some(u) => row.extend(u.iter().map(|v| format!("{v:?}"))),
                None => row.extend(std::iter::repeat_n(String::new(), m)),
            }
            match self.disturbances.get(k) {
                Some(d) => row.extend(d.iter().map(|v| format!("{v:?}"))),
                None => row.extend(std::iter::repeat_n(String::new(), p)),
            }
            row.push(format!("{:?}", self.rmse[k]));
            row.push(self.qp_iterations.get(k).map_or(String::new(), |v| v.to_string()));
            row.push(self.mpc_iterations.get(k).map_or(String::new(), |v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("closed-loop log", e))
    }
}
