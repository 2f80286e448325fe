use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kmpc_core::dataset::{fit_normalizer, make_windows, NormalizedData};
use kmpc_core::harness::{build_dataset, ExperimentConfig};
use kmpc_core::koopman::BatchRollout;
use kmpc_core::plant::reactor_separator::{NOMINAL_INPUT, NOMINAL_STEADY_STATE};
use kmpc_core::plant::{integrate_step, ReactorSeparator};
use kmpc_core::qp::SolveOptions;
use kmpc_core::{KoopmanModel, QpProblem, Split, Variant};

fn rk4_step(c: &mut Criterion) {
    let plant = ReactorSeparator::nominal_plant();
    let x = DVector::from_column_slice(&NOMINAL_STEADY_STATE);
    let u = DVector::from_column_slice(&NOMINAL_INPUT);
    let p = DVector::zeros(plant.disturbance_dim());
    c.bench_function("rk4_sampling_period", |b| {
        b.iter(|| integrate_step(&plant, &x, &u, &p, 0.005).unwrap())
    });
}

/// A random strongly convex box QP the size of a 20-step, 3-input horizon.
fn random_qp(dim: usize, rng: &mut impl Rng) -> QpProblem {
    let m = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
    let hessian = &m * m.transpose() + DMatrix::identity(dim, dim) * 0.1;
    QpProblem {
        hessian,
        linear: DVector::from_fn(dim, |_, _| rng.random_range(-5.0..5.0)),
        constant: 0.0,
        lower: DVector::from_element(dim, -1.0),
        upper: DVector::from_element(dim, 1.0),
    }
}

fn qp_solve(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let problem = random_qp(60, &mut rng);
    let options = SolveOptions::default();
    c.bench_function("qp_solve_60", |b| b.iter(|| problem.solve(None, &options).unwrap()));
}

fn loss_gradient(c: &mut Criterion) {
    let mut cfg = ExperimentConfig::desk();
    cfg.data.samples = 600;
    let dataset = build_dataset(&cfg).unwrap();
    let normalizer = fit_normalizer(&dataset).unwrap();
    let data = NormalizedData::new(&dataset, &normalizer).unwrap();
    let windows = make_windows(&dataset, Split::Train, cfg.training.horizon).unwrap();
    let refs: Vec<_> = windows.iter().take(cfg.training.batch_size).collect();
    let batch = BatchRollout::gather(&data, &refs).unwrap();
    let mut group = c.benchmark_group("loss_and_gradient_h20_b128");
    for variant in [Variant::Dkoia, Variant::Dko] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = KoopmanModel::initialize(variant, &cfg.model, normalizer.clone(), &mut rng).unwrap();
        group.bench_function(variant.name(), |b| {
            b.iter(|| model.loss_and_gradient(&batch, cfg.training.l2).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, rk4_step, qp_solve, loss_gradient);
criterion_main!(benches);
