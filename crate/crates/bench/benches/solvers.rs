use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use iktrack_core::harness::{generate_stream, TrajectorySpec};
use iktrack_core::{
    decompose_pairwise, generate_human_chain, solve_pairwise, solve_whole_body, step, BaumgarteConfig, GainConfig,
    HumanDofs, InstantaneousConfig, QpSolver, SolverState,
};

const DT: f64 = 0.01;

fn tracking(c: &mut Criterion) {
    let model = generate_human_chain(HumanDofs::D66, 0);
    let stream = generate_stream(&model, &TrajectorySpec::running(2.0, DT, 0.3, 1)).unwrap();
    let gains = GainConfig::defaults(&model, DT).unwrap();
    let baumgarte = BaumgarteConfig::new(BaumgarteConfig::DEFAULT_RHO, DT).unwrap();
    let qp = QpSolver::default();

    // Warm the state up to the middle of the stream so every method starts
    // from a tracked configuration.
    let mid = stream.samples.len() / 2;
    let mut state = SolverState::initial(&model, &stream.samples[0], DT);
    for s in &stream.samples[..mid] {
        state = step(&state, s, &model, &gains, &baumgarte, &qp).unwrap().0;
    }
    let sample = &stream.samples[mid];

    let mut group = c.benchmark_group("human66");
    group.bench_function("dynamical_step", |b| {
        b.iter_batched(
            || state.clone(),
            |s| step(&s, black_box(sample), &model, &gains, &baumgarte, &qp).unwrap(),
            BatchSize::SmallInput,
        )
    });
    let cfg = InstantaneousConfig::default();
    let q_prev = stream.truth[mid - 1].0.clone();
    group.bench_function("whole_body_solve", |b| {
        b.iter(|| solve_whole_body(&model, black_box(sample), &q_prev, &cfg).unwrap())
    });
    let subs = decompose_pairwise(&model).unwrap();
    group.bench_function("pairwise_solve", |b| {
        b.iter(|| solve_pairwise(&model, &subs, black_box(sample), &q_prev, &cfg).unwrap())
    });
    group.finish();
}

fn kinematics(c: &mut Criterion) {
    let model = generate_human_chain(HumanDofs::D66, 0);
    let q = generate_stream(&model, &TrajectorySpec::walking(0.1, DT, 0.3, 2))
        .unwrap()
        .truth[5]
        .0
        .clone();
    c.bench_function("human66/stacked_jacobian", |b| {
        b.iter(|| model.stacked_jacobian(black_box(&q)).unwrap())
    });
}

criterion_group!(benches, tracking, kinematics);
criterion_main!(benches);
