use proptest::prelude::*;

use kmpc_core::dataset::{make_windows, SplitRanges};
use kmpc_core::mpc::{control_step, warm_start};
use kmpc_core::plant::reactor_separator::{NOMINAL_INPUT, NOMINAL_STEADY_STATE};
use kmpc_core::plant::{
    generate_excitation, integrate_step, simulate, ExcitationConfig, ExcitationKind, ProcessNoiseConfig,
    ReactorSeparator, Trajectory,
};
use kmpc_core::qp::{QpStatus, SolveOptions};
use kmpc_core::{
    Architecture, ControllerState, KoopmanModel, Matrix, MpcProblem, Normalizer, QpProblem, Split, TrajectoryDataset,
    Variant, Vector,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_qp(seed: u64, n: usize) -> QpProblem {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let m = Matrix::from_fn(n, n, |_, _| r.random_range(-1.0..1.0));
    let scale = 10f64.powf(r.random_range(-2.0..2.0));
    let hessian = (&m * m.transpose() + Matrix::identity(n, n) * 1e-3) * scale;
    let lower = Vector::from_fn(n, |_, _| r.random_range(-3.0..0.5));
    QpProblem {
        upper: Vector::from_fn(n, |i, _| lower[i] + r.random_range(0.0..2.0)),
        linear: Vector::from_fn(n, |_, _| r.random_range(-5.0..5.0) * scale),
        constant: 0.0,
        hessian,
        lower,
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn qp_solutions_are_feasible_certified_and_monotone(seed in any::<u64>(), n in 1usize..30) {
        let qp = random_qp(seed, n);
        let options = SolveOptions::default();
        let sol = qp.solve(None, &options).unwrap();
        for i in 0..n {
            prop_assert!(sol.u[i] >= qp.lower[i] && sol.u[i] <= qp.upper[i]);
        }
        if sol.status == QpStatus::Converged {
            prop_assert!(qp.projected_gradient_residual(&sol.u) < options.tol);
        }
        for w in sol.objective_history.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        // Restarting from the optimum certifies almost immediately.
        let again = qp.solve(Some(&sol.u), &options).unwrap();
        prop_assert!(again.iterations <= 2);
    }

    #[test]
    fn excitation_stays_in_bounds(seed in any::<u64>(), hold in 1usize..40, noise in 0.0f64..3e6) {
        let plant = ReactorSeparator::nominal_plant();
        let cfg = ExcitationConfig {
            kind: ExcitationKind::StepHold,
            hold_steps: hold,
            noise_std: vec![noise; 3],
            seed,
        };
        for u in generate_excitation(&cfg, &plant, 300).unwrap() {
            for i in 0..3 {
                prop_assert!(u[i] >= plant.input_lower()[i] && u[i] <= plant.input_upper()[i]);
            }
        }
    }

    #[test]
    fn process_noise_respects_clip(
        seed in any::<u64>(),
        frac_std in 0.0f64..0.05,
        temp_std in 0.0f64..20.0,
        frac_clip in 0.0f64..0.02,
        temp_clip in 0.0f64..5.0,
    ) {
        let plant = ReactorSeparator::nominal_plant();
        let noise = ProcessNoiseConfig {
            std: [frac_std, frac_std, temp_std].repeat(3),
            clip_abs: [frac_clip, frac_clip, temp_clip].repeat(3),
            seed,
        };
        let inputs = vec![Vector::from_column_slice(&NOMINAL_INPUT); 20];
        let dist = vec![Vector::zeros(0); 20];
        let x0 = Vector::from_column_slice(&NOMINAL_STEADY_STATE);
        let xs = simulate(&plant, &x0, &inputs, &dist, 0.005, Some(&noise)).unwrap();
        for k in 0..20 {
            let clean = integrate_step(&plant, &xs[k], &inputs[k], &dist[k], 0.005).unwrap();
            for i in 0..9 {
                prop_assert!((xs[k + 1][i] - clean[i]).abs() <= noise.clip_abs[i] * (1.0 + 1e-12) + 1e-12);
            }
        }
    }

    #[test]
    fn windows_cover_every_admissible_start_once(len in 20usize..200, horizon in 1usize..12) {
        let traj = Trajectory {
            dt: 1.0,
            t0: 0.0,
            states: (0..len).map(|k| Vector::from_element(1, k as f64)).collect(),
            inputs: vec![Vector::zeros(1); len],
            disturbances: vec![Vector::zeros(0); len],
        };
        let splits = SplitRanges::proportional(len).unwrap();
        let ds = TrajectoryDataset::new(traj, splits.clone(), 0).unwrap();
        for split in Split::ALL {
            let range = splits.range(split);
            let starts: Vec<usize> = match make_windows(&ds, split, horizon) {
                Ok(w) => w.iter().map(|w| w.start).collect(),
                Err(_) => {
                    prop_assert!(range.len() <= horizon);
                    continue;
                }
            };
            let expected: Vec<usize> = (range.start..range.end - horizon).collect();
            prop_assert_eq!(starts, expected);
        }
    }

    #[test]
    fn mpc_inputs_feasible_and_warm_start_shifts(seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let arch = Architecture { lifted_dim: 4, phi_dim: 2, psi_hidden: vec![5], phi_hidden: vec![4] };
        let mut model = KoopmanModel::initialize(Variant::Dkoia, &arch, Normalizer::identity(2, 2, 0), &mut r).unwrap();
        model.a = Matrix::from_fn(4, 4, |i, j| if i == j { 0.9 } else { r.random_range(-0.2..0.2) });
        model.b_phi.iter_mut().for_each(|v| *v *= 5.0);
        let problem = MpcProblem::new(
            model,
            Matrix::identity(2, 2),
            Matrix::identity(2, 2) * 0.01,
            5,
            Vector::from_vec(vec![0.3, -0.2]),
            Vector::zeros(2),
            Vector::from_vec(vec![-0.5, -1.0]),
            Vector::from_vec(vec![0.5, 0.2]),
        )
        .unwrap();
        let mut state = ControllerState::default();
        let forecast = vec![Vector::zeros(0); 5];
        for _ in 0..10 {
            let x = Vector::from_fn(2, |_, _| r.random_range(-3.0..3.0));
            let previous = state.previous.clone();
            let guess = warm_start(&problem, &state);
            if let Some(prev) = previous {
                prop_assert_eq!(&guess[..4], &prev[1..]);
                prop_assert_eq!(&guess[4], &prev[4]);
            }
            let out = control_step(&problem, &mut state, &x, &forecast).unwrap();
            prop_assert!(out.trace.iterations.len() <= problem.max_iterations);
            for i in 0..2 {
                prop_assert!(out.applied[i] >= problem.input_lower[i] && out.applied[i] <= problem.input_upper[i]);
            }
            let stored = state.previous.as_ref().unwrap();
            prop_assert_eq!(stored.len(), 5);
        }
    }
}
