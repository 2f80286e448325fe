//! Box-constrained convex quadratic programs from condensed MPC problems.
//!
//! The solver is a monotone accelerated projected gradient method (MFISTA)
//! with function-value restart and a backtracked Lipschitz estimate.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::koopman::KoopmanModel;
use crate::linalg::{all_finite, is_symmetric, Matrix, Vector};
use crate::{Error, Result};

/// `min ½ Uᵀ H U + gᵀ U + c` subject to `lower ≤ U ≤ upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: Matrix,
    pub linear: Vector,
    pub constant: f64,
    pub lower: Vector,
    pub upper: Vector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Converged,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u: Vector,
    pub objective: f64,
    pub iterations: usize,
    pub status: QpStatus,
    /// Objective of the monotone iterate, starting with the initial point.
    /// Later entries are accumulated from exact per-step decreases, so the
    /// sequence is non-increasing even below round-off of `objective`.
    pub objective_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveOptions {
    /// Bound on `‖U − Π(U − ∇f(U))‖∞`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 20_000,
        }
    }
}

const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-8;

impl QpProblem {
    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.hessian.nrows() != n || self.hessian.ncols() != n {
            return Err(Error::shape(
                "QP Hessian",
                format!("{n}x{n}"),
                format!("{}x{}", self.hessian.nrows(), self.hessian.ncols()),
            ));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::shape(
                "QP bounds",
                n,
                format!("{}/{}", self.lower.len(), self.upper.len()),
            ));
        }
        if !all_finite(self.hessian.as_slice()) || !all_finite(self.linear.as_slice()) || !self.constant.is_finite() {
            return Err(Error::Config("QP data must be finite".into()));
        }
        if let Some(i) = (0..n).find(|&i| self.lower[i].partial_cmp(&self.upper[i]).is_none_or(|o| o.is_gt())) {
            return Err(Error::Config(format!(
                "QP bounds inverted at {i}: {} > {}",
                self.lower[i], self.upper[i]
            )));
        }
        let scale = self.hessian.amax().max(1.0);
        if !is_symmetric(&self.hessian, SYMMETRY_TOL * scale) {
            return Err(Error::Config("QP Hessian is not symmetric".into()));
        }
        if n > 0 {
            let min_eig = self.hessian.clone().symmetric_eigenvalues().min();
            if min_eig < -PSD_TOL * scale {
                return Err(Error::Config(format!(
                    "QP Hessian is not PSD (min eigenvalue {min_eig:e})"
                )));
            }
        }
        Ok(())
    }

    pub fn objective(&self, u: &Vector) -> f64 {
        0.5 * u.dot(&(&self.hessian * u)) + self.linear.dot(u) + self.constant
    }

    pub fn gradient(&self, u: &Vector) -> Vector {
        &self.hessian * u + &self.linear
    }

    pub fn project(&self, u: &Vector) -> Vector {
        Vector::from_fn(u.len(), |i, _| u[i].clamp(self.lower[i], self.upper[i]))
    }

    /// `‖U − Π(U − ∇f(U))‖∞`; zero exactly at the box-constrained optimum.
    pub fn projected_gradient_residual(&self, u: &Vector) -> f64 {
        let step = u - self.gradient(u);
        (u - self.project(&step)).amax()
    }

    /// Solve from `warm_start` (projected onto the box) or from the box
    /// projection of zero.
    pub fn solve(&self, warm_start: Option<&Vector>, options: &SolveOptions) -> Result<QpSolution> {
        self.validate()?;
        let n = self.dim();
        let start = match warm_start {
            Some(w) if w.len() != n => return Err(Error::shape("QP warm start", n, w.len())),
            Some(w) if !all_finite(w.as_slice()) => return Err(Error::Config("QP warm start is not finite".into())),
            Some(w) => self.project(w),
            None => self.project(&Vector::zeros(n)),
        };

        let mut x = start;
        let mut fx = self.objective(&x);
        let mut grad_x = self.gradient(&x);
        let mut history = vec![fx];
        if n == 0 || self.residual_with(&x, &grad_x) < options.tol {
            return Ok(self.finish(x, 0, QpStatus::Converged, history));
        }

        let mut lipschitz = power_iteration(&self.hessian).max(f64::MIN_POSITIVE) * 1.01;
        let mut y = x.clone();
        let mut t: f64 = 1.0;
        for iter in 1..=options.max_iter {
            let grad_y = self.gradient(&y);
            let z = loop {
                let candidate = self.project(&(&y - &grad_y / lipschitz));
                let diff = &candidate - &y;
                // f(c) − f(y) minus its quadratic upper model, evaluated from the step
                let excess = 0.5 * diff.dot(&(&self.hessian * &diff)) - 0.5 * lipschitz * diff.norm_squared();
                if excess <= 0.0 || lipschitz > 1e300 {
                    break candidate;
                }
                lipschitz *= 2.0;
            };
            // f(z) − f(x) from the step itself; the difference of two
            // objective values loses all precision near the optimum.
            let step = &z - &x;
            let decrease = step.dot(&(&grad_x + &self.hessian * &step * 0.5));
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            if decrease <= 0.0 {
                let x_prev = std::mem::replace(&mut x, z);
                fx += decrease;
                grad_x = self.gradient(&x);
                y = &x + (&x - &x_prev) * ((t - 1.0) / t_next);
                t = t_next;
            } else {
                // restart from the monotone iterate
                y = x.clone();
                t = 1.0;
            }
            history.push(fx);
            if self.residual_with(&x, &grad_x) < options.tol {
                return Ok(self.finish(x, iter, QpStatus::Converged, history));
            }
        }
        Ok(self.finish(x, options.max_iter, QpStatus::MaxIter, history))
    }

    fn residual_with(&self, u: &Vector, grad: &Vector) -> f64 {
        (u - self.project(&(u - grad))).amax()
    }

    fn finish(&self, u: Vector, iterations: usize, status: QpStatus, objective_history: Vec<f64>) -> QpSolution {
        QpSolution {
            objective: self.objective(&u),
            u,
            iterations,
            status,
            objective_history,
        }
    }

    /// Write `hessian.csv`, `vectors.csv` (`linear,lower,upper`) and
    /// `constant.csv` into `dir` for cross-checking with other solvers.
    pub fn dump_csv(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let n = self.dim();
        let mut w = csv::Writer::from_path(dir.join("hessian.csv"))?;
        for i in 0..n {
            w.write_record((0..n).map(|j| format!("{:e}", self.hessian[(i, j)])))?;
        }
        w.flush().map_err(|e| Error::io(dir.join("hessian.csv"), e))?;
        let mut w = csv::Writer::from_path(dir.join("vectors.csv"))?;
        w.write_record(["linear", "lower", "upper"])?;
        for i in 0..n {
            w.write_record([
                format!("{:e}", self.linear[i]),
                format!("{:e}", self.lower[i]),
                format!("{:e}", self.upper[i]),
            ])?;
        }
        w.flush().map_err(|e| Error::io(dir.join("vectors.csv"), e))?;
        fs::write(dir.join("constant.csv"), format!("constant\n{:e}\n", self.constant))
            .map_err(|e| Error::io(dir.join("constant.csv"), e))
    }
}

/// Largest eigenvalue estimate of a symmetric PSD matrix.
fn power_iteration(m: &Matrix) -> f64 {
    let n = m.nrows();
    let mut v = Vector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut estimate = 0.0;
    for _ in 0..100 {
        let w = m * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return m.amax() * n as f64;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - estimate).abs() <= 1e-6 * next.abs() {
            return next.max(norm);
        }
        estimate = next;
    }
    estimate
}

/// Quadratic penalty on predicted state-bound violations:
/// `weight · (y − bound)²` for every listed `(step, channel, bound)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StatePenalty {
    pub weight: f64,
    /// `(j, i, bound)`: step `j` (predicted state `ẑ_{j+1}`), channel `i`,
    /// bound in normalized units.
    pub active: Vec<(usize, usize, f64)>,
}

/// Normalized-unit data for one condensation.
#[derive(Debug, Clone, Copy)]
pub struct CondenseInput<'a> {
    pub z0: &'a Vector,
    /// Per-step lifted offsets `d_j = B_p p_j + B_φ φ(…)`; their count is `N`.
    pub offsets: &'a [Vector],
    pub q: &'a Matrix,
    pub r: &'a Matrix,
    pub x_s: &'a Vector,
    pub u_s: &'a Vector,
    /// Per-step input bounds (`m` entries, repeated over the horizon).
    pub lower: &'a Vector,
    pub upper: &'a Vector,
    pub penalty: Option<&'a StatePenalty>,
}

/// A condensed QP plus the affine prediction map it was built from.
#[derive(Debug, Clone)]
pub struct Condensed {
    pub problem: QpProblem,
    /// Free response: stacked `C ẑ_{1..N}` with `U = 0` (`nN`).
    pub free_output: Vector,
    /// Stacked input-to-output map (`nN × mN`).
    pub output_map: Matrix,
}

/// Eliminate the lifted states of
/// `ẑ_{j+1} = A ẑ_j + B_u u_j + d_j`, `j = 0..N−1`, from
/// `Σ_{j=1..N} ‖C ẑ_j − x_s‖²_Q + Σ_{j=0..N−1} ‖u_j − u_s‖²_R`.
pub fn condense(model: &KoopmanModel, input: &CondenseInput<'_>) -> Result<Condensed> {
    let (n, m, lifted) = (model.state_dim(), model.input_dim(), model.lifted_dim());
    let horizon = input.offsets.len();
    if horizon == 0 {
        return Err(Error::Config("control horizon must be positive".into()));
    }
    let checks = [
        ("z0", input.z0.len(), lifted),
        ("x_s", input.x_s.len(), n),
        ("u_s", input.u_s.len(), m),
        ("input lower bound", input.lower.len(), m),
        ("input upper bound", input.upper.len(), m),
        ("Q rows", input.q.nrows(), n),
        ("Q cols", input.q.ncols(), n),
        ("R rows", input.r.nrows(), m),
        ("R cols", input.r.ncols(), m),
    ];
    for (what, actual, expected) in checks {
        if actual != expected {
            return Err(Error::shape(what, expected, actual));
        }
    }
    if let Some(j) = input.offsets.iter().position(|d| d.len() != lifted) {
        return Err(Error::shape(format!("offset d_{j}"), lifted, input.offsets[j].len()));
    }

    // Markov blocks C A^k B_u and the free response.
    let mut markov = Vec::with_capacity(horizon);
    let mut a_pow_b = model.b_u.clone();
    for _ in 0..horizon {
        markov.push(&model.c * &a_pow_b);
        a_pow_b = &model.a * &a_pow_b;
    }
    let mut free_output = Vector::zeros(n * horizon);
    let mut z = input.z0.clone();
    for (j, d) in input.offsets.iter().enumerate() {
        z = &model.a * &z + d;
        free_output.rows_mut(j * n, n).copy_from(&(&model.c * &z));
    }
    let mut output_map = Matrix::zeros(n * horizon, m * horizon);
    for i in 0..horizon {
        for j in 0..=i {
            output_map.view_mut((i * n, j * m), (n, m)).copy_from(&markov[i - j]);
        }
    }

    // Stacked weights and targets.
    let mut weight = Matrix::zeros(n * horizon, n * horizon);
    let mut target = Vector::zeros(n * horizon);
    for i in 0..horizon {
        weight.view_mut((i * n, i * n), (n, n)).copy_from(input.q);
        target.rows_mut(i * n, n).copy_from(input.x_s);
    }
    let residual = &free_output - &target;
    let weighted = &weight * &residual;
    let mut hessian = output_map.transpose() * &weight * &output_map;
    let mut linear = output_map.transpose() * &weighted;
    let mut constant = residual.dot(&weighted);

    if let Some(penalty) = input.penalty {
        for &(j, i, bound) in &penalty.active {
            if j >= horizon || i >= n {
                return Err(Error::shape(
                    "state penalty index",
                    format!("<({horizon},{n})"),
                    format!("({j},{i})"),
                ));
            }
            let row = output_map.row(j * n + i).transpose();
            let offset = free_output[j * n + i] - bound;
            hessian += &row * row.transpose() * penalty.weight;
            linear += &row * (penalty.weight * offset);
            constant += penalty.weight * offset * offset;
        }
    }

    for k in 0..horizon {
        let mut block = hessian.view_mut((k * m, k * m), (m, m));
        block += input.r;
        let ru = input.r * input.u_s;
        let mut seg = linear.rows_mut(k * m, m);
        seg -= &ru;
        constant += input.u_s.dot(&ru);
    }
    hessian *= 2.0;
    linear *= 2.0;
    // Exact symmetry for the solver's checks.
    let hessian = (&hessian + hessian.transpose()) * 0.5;

    let mut lower = Vector::zeros(m * horizon);
    let mut upper = Vector::zeros(m * horizon);
    for k in 0..horizon {
        lower.rows_mut(k * m, m).copy_from(input.lower);
        upper.rows_mut(k * m, m).copy_from(input.upper);
    }
    Ok(Condensed {
        problem: QpProblem {
            hessian,
            linear,
            constant,
            lower,
            upper,
        },
        free_output,
        output_map,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(h: f64, g: f64, lo: f64, hi: f64) -> QpProblem {
        QpProblem {
            hessian: Matrix::from_element(1, 1, h),
            linear: Vector::from_element(1, g),
            constant: 0.0,
            lower: Vector::from_element(1, lo),
            upper: Vector::from_element(1, hi),
        }
    }

    fn random_problem(rng: &mut ChaCha8Rng, n: usize) -> QpProblem {
        let m = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let hessian = &m * m.transpose() + Matrix::identity(n, n) * 0.1;
        let linear = Vector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let lower = Vector::from_fn(n, |_, _| rng.random_range(-1.5..0.0));
        let upper = Vector::from_fn(n, |i, _| lower[i] + rng.random_range(0.1..2.0));
        QpProblem {
            hessian,
            linear,
            constant: 0.5,
            lower,
            upper,
        }
    }

    #[test]
    fn interior_optimum() {
        let mut p = scalar(2.0, 0.0, -1.0, 1.0);
        p.constant = 3.0;
        let sol = p.solve(None, &SolveOptions::default()).unwrap();
        assert_eq!(sol.u[0], 0.0);
        assert_eq!(sol.objective, 3.0);
        assert_eq!(sol.status, QpStatus::Converged);
    }

    #[test]
    fn clipped_optimum() {
        let p = scalar(2.0, -6.0, -1.0, 1.0);
        let sol = p.solve(None, &SolveOptions::default()).unwrap();
        assert_eq!(sol.u[0], 1.0);
        assert_eq!(sol.status, QpStatus::Converged);
    }

    #[test]
    fn objective_is_monotone_and_solution_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let p = random_problem(&mut rng, 10);
            let sol = p.solve(None, &SolveOptions::default()).unwrap();
            assert_eq!(sol.status, QpStatus::Converged);
            assert!(sol.objective_history.windows(2).all(|w| w[1] <= w[0]));
            for i in 0..10 {
                assert!(p.lower[i] <= sol.u[i] && sol.u[i] <= p.upper[i]);
            }
            assert!(p.projected_gradient_residual(&sol.u) < 1e-8);
        }
    }

    #[test]
    fn warm_start_at_optimum_converges_immediately() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_problem(&mut rng, 8);
        let sol = p.solve(None, &SolveOptions::default()).unwrap();
        let again = p.solve(Some(&sol.u), &SolveOptions::default()).unwrap();
        assert!(again.iterations <= 2);
        assert_eq!(again.status, QpStatus::Converged);
    }

    #[test]
    fn max_iter_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_problem(&mut rng, 12);
        let sol = p.solve(None, &SolveOptions { tol: 0.0, max_iter: 5 }).unwrap();
        assert_eq!(sol.status, QpStatus::MaxIter);
        assert_eq!(sol.iterations, 5);
        assert_eq!(sol.objective_history.len(), 6);
    }

    #[test]
    fn validation_errors() {
        let mut p = scalar(2.0, 0.0, 1.0, -1.0);
        assert!(matches!(p.validate(), Err(Error::Config(_))));
        p = scalar(-1.0, 0.0, -1.0, 1.0);
        assert!(p.validate().is_err());
        let mut q = random_problem(&mut ChaCha8Rng::seed_from_u64(4), 3);
        q.hessian[(0, 1)] += 1e-3;
        assert!(q.validate().is_err());
        let q = random_problem(&mut ChaCha8Rng::seed_from_u64(4), 3);
        assert!(matches!(
            q.solve(Some(&Vector::zeros(2)), &SolveOptions::default()),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn empty_problem() {
        let p = QpProblem {
            hessian: Matrix::zeros(0, 0),
            linear: Vector::zeros(0),
            constant: 1.5,
            lower: Vector::zeros(0),
            upper: Vector::zeros(0),
        };
        let sol = p.solve(None, &SolveOptions::default()).unwrap();
        assert_eq!(sol.objective, 1.5);
    }

    #[test]
    fn dump_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = random_problem(&mut ChaCha8Rng::seed_from_u64(5), 4);
        p.dump_csv(dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("hessian.csv")).unwrap();
        assert_eq!(text.lines().count(), 4);
        let vec = fs::read_to_string(dir.path().join("vectors.csv")).unwrap();
        assert_eq!(vec.lines().next().unwrap(), "linear,lower,upper");
    }

    fn linear_model(n: usize, m: usize, lifted: usize, seed: u64) -> KoopmanModel {
        use crate::dataset::Normalizer;
        use crate::koopman::{Architecture, Variant};
        let arch = Architecture {
            lifted_dim: lifted,
            phi_dim: 0,
            psi_hidden: vec![],
            phi_hidden: vec![],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = KoopmanModel::initialize(Variant::Dko, &arch, Normalizer::identity(n, m, 0), &mut rng).unwrap();
        model.a = Matrix::from_fn(lifted, lifted, |_, _| rng.random_range(-0.5..0.5));
        model.b_u = Matrix::from_fn(lifted, m, |_, _| rng.random_range(-1.0..1.0));
        model.c = Matrix::from_fn(n, lifted, |_, _| rng.random_range(-1.0..1.0));
        model
    }

    #[test]
    fn scalar_condensation_by_hand() {
        let mut model = linear_model(1, 1, 1, 0);
        model.a[(0, 0)] = 1.0;
        model.b_u[(0, 0)] = 1.0;
        model.c[(0, 0)] = 1.0;
        let one = Vector::from_element(1, 1.0);
        let zero = Vector::zeros(1);
        let q = Matrix::identity(1, 1);
        let r = Matrix::zeros(1, 1);
        let offsets = [zero.clone()];
        let bound = Vector::from_element(1, 10.0);
        let input = CondenseInput {
            z0: &one,
            offsets: &offsets,
            q: &q,
            r: &r,
            x_s: &zero,
            u_s: &zero,
            lower: &-&bound,
            upper: &bound,
            penalty: None,
        };
        let c = condense(&model, &input).unwrap();
        assert_eq!(c.problem.hessian[(0, 0)], 2.0);
        assert_eq!(c.problem.linear[0], 2.0);
        assert_eq!(c.problem.constant, 1.0);
    }

    /// Cost evaluated by stepping the lifted recursion directly.
    fn rollout_cost(model: &KoopmanModel, input: &CondenseInput<'_>, u: &Vector) -> f64 {
        let m = model.input_dim();
        let mut z = input.z0.clone();
        let mut cost = 0.0;
        for (j, d) in input.offsets.iter().enumerate() {
            let uj = u.rows(j * m, m).into_owned();
            z = &model.a * &z + &model.b_u * &uj + d;
            let e = &model.c * &z - input.x_s;
            let du = &uj - input.u_s;
            cost += e.dot(&(input.q * &e)) + du.dot(&(input.r * &du));
            if let Some(p) = input.penalty {
                for &(step, i, bound) in &p.active {
                    if step == j {
                        let y = (&model.c * &z)[i];
                        cost += p.weight * (y - bound).powi(2);
                    }
                }
            }
        }
        cost
    }

    #[test]
    fn condensed_cost_matches_rollout() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..5 {
            let (n, m, lifted, horizon) = (2, 2, 4, 5);
            let model = linear_model(n, m, lifted, trial);
            let z0 = Vector::from_fn(lifted, |_, _| rng.random_range(-1.0..1.0));
            let offsets: Vec<Vector> = (0..horizon)
                .map(|_| Vector::from_fn(lifted, |_, _| rng.random_range(-0.3..0.3)))
                .collect();
            let mq = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let q = &mq * mq.transpose() + Matrix::identity(n, n);
            let r = Matrix::from_diagonal(&Vector::from_fn(m, |_, _| rng.random_range(0.01..1.0)));
            let x_s = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let u_s = Vector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
            let bound = Vector::from_element(m, 2.0);
            let penalty = StatePenalty {
                weight: 3.0,
                active: vec![(1, 0, 0.5), (4, 1, -0.2)],
            };
            let input = CondenseInput {
                z0: &z0,
                offsets: &offsets,
                q: &q,
                r: &r,
                x_s: &x_s,
                u_s: &u_s,
                lower: &-&bound,
                upper: &bound,
                penalty: Some(&penalty),
            };
            let c = condense(&model, &input).unwrap();
            c.problem.validate().unwrap();
            for _ in 0..20 {
                let u = Vector::from_fn(m * horizon, |_, _| rng.random_range(-2.0..2.0));
                let direct = rollout_cost(&model, &input, &u);
                let condensed = c.problem.objective(&u);
                assert!(
                    (direct - condensed).abs() < 1e-9 * direct.max(1.0),
                    "{direct} vs {condensed}"
                );
            }
        }
    }

    #[test]
    fn heavy_input_weight_pins_set_point() {
        let model = linear_model(2, 2, 3, 9);
        let z0 = Vector::from_element(3, 0.7);
        let offsets = vec![Vector::zeros(3); 4];
        let q = Matrix::identity(2, 2);
        let r = Matrix::identity(2, 2) * 1e8;
        let x_s = Vector::zeros(2);
        let u_s = Vector::from_vec(vec![0.3, 5.0]);
        let (lo, hi) = (Vector::from_element(2, -1.0), Vector::from_element(2, 1.0));
        let input = CondenseInput {
            z0: &z0,
            offsets: &offsets,
            q: &q,
            r: &r,
            x_s: &x_s,
            u_s: &u_s,
            lower: &lo,
            upper: &hi,
            penalty: None,
        };
        let c = condense(&model, &input).unwrap();
        let sol = c.problem.solve(None, &SolveOptions::default()).unwrap();
        for k in 0..4 {
            assert!((sol.u[2 * k] - 0.3).abs() < 1e-6);
            assert_eq!(sol.u[2 * k + 1], 1.0);
        }
    }

    #[test]
    fn condense_rejects_bad_shapes() {
        let model = linear_model(2, 1, 3, 1);
        let z0 = Vector::zeros(2);
        let offsets = vec![Vector::zeros(3)];
        let q = Matrix::identity(2, 2);
        let r = Matrix::identity(1, 1);
        let x_s = Vector::zeros(2);
        let u = Vector::zeros(1);
        let input = CondenseInput {
            z0: &z0,
            offsets: &offsets,
            q: &q,
            r: &r,
            x_s: &x_s,
            u_s: &u,
            lower: &u,
            upper: &u,
            penalty: None,
        };
        assert!(matches!(condense(&model, &input), Err(Error::Shape { .. })));
    }
}
