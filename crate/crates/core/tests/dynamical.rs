use std::time::Instant;

use iktrack_core::dynamical::{self, DynamicalError, GainConfig, SolverState, TargetSample};
use iktrack_core::harness::{generate_stream, TrajectorySpec};
use iktrack_core::kinematics::{generate_human_chain, Configuration, HumanDofs, KinematicModel, Velocity};
use iktrack_core::qp::QpSolver;
use iktrack_core::so3::{BaumgarteConfig, Rotation};
use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DT: f64 = 0.01;

fn baumgarte() -> BaumgarteConfig {
    BaumgarteConfig::new(BaumgarteConfig::DEFAULT_RHO, DT).unwrap()
}

fn random_config(model: &KinematicModel, seed: u64, spread: f64) -> Configuration {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Configuration {
        base_pos: Vector3::new(0.0, 0.0, 1.0),
        base_rot: Rotation::from_rpy(0.1, -0.2, 0.4),
        s: DVector::from_fn(model.dofs(), |_, _| rng.gen_range(-spread..spread)),
    }
}

#[test]
fn self_consistent_sample_is_a_fixed_point() {
    let model = generate_human_chain(HumanDofs::D66, 1);
    let q = random_config(&model, 1, 1.0);
    let sample = TargetSample::from_state(&model, &q, &Velocity::zero(66), DT).unwrap();
    let gains = GainConfig::defaults(&model, DT).unwrap();
    let (next, report) = dynamical::step(
        &SolverState::new(q.clone(), 0.0),
        &sample,
        &model,
        &gains,
        &baumgarte(),
        &QpSolver::default(),
    )
    .unwrap();
    assert!(next.nu.to_vector().amax() <= 1e-8);
    assert!((&next.q.s - &q.s).amax() <= 1e-8);
    assert!((next.q.base_rot.matrix() - q.base_rot.matrix()).amax() <= 1e-8);
    assert!(report.residual_r.amax() <= 1e-12);
}

#[test]
fn velocity_residual_vanishes_for_generating_state() {
    let model = generate_human_chain(HumanDofs::D66, 2);
    let q = random_config(&model, 2, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let nu = Velocity::from_vector(&DVector::from_fn(72, |_, _| rng.gen_range(-1.0..1.0)));
    let sample = TargetSample::from_state(&model, &q, &nu, 0.0).unwrap();
    let u = dynamical::velocity_residual(&model, &q, &nu, &sample).unwrap();
    assert!(u.amax() <= 1e-10);
}

#[test]
fn position_residual_follows_discrete_decay() {
    let model = generate_human_chain(HumanDofs::D66, 4);
    let q0 = Configuration::zero(66);
    let mut target = TargetSample::from_state(&model, &q0, &Velocity::zero(66), 0.0).unwrap();
    let offset = Vector3::new(0.1, -0.3, 0.2);
    target.positions[0] += offset;
    let gains = GainConfig::defaults(&model, DT).unwrap();
    let qp = QpSolver::default();
    let mut state = SolverState::new(q0, -DT);
    let mut prev = offset.norm();
    for m in 1..=50 {
        target.t = state.t + DT;
        state = dynamical::step(&state, &target, &model, &gains, &baumgarte(), &qp)
            .unwrap()
            .0;
        let r = (target.positions[0] - state.q.base_pos).norm();
        let closed_form = offset.norm() * (1.0 - dynamical::DEFAULT_GAIN * DT).powi(m);
        assert!(r <= prev);
        assert!((r - closed_form).abs() <= 0.01 * closed_form);
        prev = r;
    }
}

#[test]
fn orientation_decays_monotonically_from_many_angles() {
    let model = generate_human_chain(HumanDofs::D66, 5)
        .with_targets(vec![0], vec![0])
        .unwrap();
    let gains = GainConfig::defaults(&model, DT).unwrap();
    let qp = QpSolver::default();
    for (i, theta0) in [0.2, 1.0, 2.0, 2.9, std::f64::consts::PI - 0.1].into_iter().enumerate() {
        let q0 = Configuration::zero(66);
        let mut target = TargetSample::from_state(&model, &q0, &Velocity::zero(66), 0.0).unwrap();
        let axis = Vector3::new(1.0, -1.0, 0.5 * i as f64).normalize();
        target.rotations[0] = Rotation::from_axis_angle(&axis, theta0);
        let mut state = SolverState::new(q0, -DT);
        let mut prev = theta0;
        for _ in 0..1500 {
            target.t = state.t + DT;
            state = dynamical::step(&state, &target, &model, &gains, &baumgarte(), &qp)
                .unwrap()
                .0;
            let theta = state.q.base_rot.angle_to(&target.rotations[0]);
            assert!(theta <= prev + 1e-12, "θ₀ = {theta0}: {theta} > {prev}");
            prev = theta;
        }
        assert!(prev < 1e-3, "θ₀ = {theta0}: ended at {prev}");
    }
}

#[test]
fn limits_contain_the_joints_and_bound_their_speed() {
    let model = generate_human_chain(HumanDofs::D48, 6);
    let stream = generate_stream(&model.without_limits(), &TrajectorySpec::running(5.0, DT, 0.9, 6)).unwrap();
    let gains = GainConfig::defaults(&model, DT).unwrap();
    let out = dynamical::track(
        &stream.samples,
        None,
        &model,
        &gains,
        &baumgarte(),
        &QpSolver::default(),
    );
    assert!(out.is_complete());
    let c = model.constraints();
    let mut prev = DVector::<f64>::zeros(48);
    for (q, _, _) in &out.steps {
        assert!(c.max_violation(&q.s) <= 1e-3);
        for (j, joint) in model.joints().iter().enumerate() {
            if let Some(v) = joint.vel_limit {
                assert!((q.s[j] - prev[j]).abs() <= DT * v + 1e-9);
            }
        }
        prev = q.s.clone();
    }
}

#[test]
fn orthonormality_is_maintained_while_tracking() {
    let model = generate_human_chain(HumanDofs::D66, 7);
    let stream = generate_stream(&model, &TrajectorySpec::running(5.0, DT, 0.3, 7)).unwrap();
    let gains = GainConfig::defaults(&model, DT).unwrap();
    let out = dynamical::track(
        &stream.samples,
        None,
        &model,
        &gains,
        &baumgarte(),
        &QpSolver::default(),
    );
    assert!(out.is_complete());
    for (q, _, _) in &out.steps {
        let m = q.base_rot.matrix();
        assert!((m.transpose() * m - nalgebra::Matrix3::identity()).norm() <= 1e-6);
    }
}

#[test]
fn track_edge_cases() {
    let model = generate_human_chain(HumanDofs::D66, 8);
    let gains = GainConfig::defaults(&model, DT).unwrap();
    let qp = QpSolver::default();
    let out = dynamical::track(&[], None, &model, &gains, &baumgarte(), &qp);
    assert!(out.steps.is_empty() && out.is_complete());

    let q0 = random_config(&model, 8, 0.5);
    let samples: Vec<_> = (1..=20)
        .map(|k| TargetSample::from_state(&model, &q0, &Velocity::zero(66), k as f64 * DT).unwrap())
        .collect();
    let out = dynamical::track(
        &samples,
        Some(SolverState::new(q0.clone(), 0.0)),
        &model,
        &gains,
        &baumgarte(),
        &qp,
    );
    assert!(out.is_complete());
    for (q, _, _) in &out.steps {
        assert!((&q.s - &q0.s).amax() <= 1e-8);
    }
}

#[test]
fn rate_contract_violation_aborts_with_partial_output() {
    let model = generate_human_chain(HumanDofs::D66, 9);
    let q0 = Configuration::zero(66);
    let mut samples: Vec<_> = (1..=5)
        .map(|k| TargetSample::from_state(&model, &q0, &Velocity::zero(66), k as f64 * DT).unwrap())
        .collect();
    samples[3].t += 0.5 * DT;
    let gains = GainConfig::defaults(&model, DT).unwrap();
    let out = dynamical::track(
        &samples,
        Some(SolverState::new(q0, 0.0)),
        &model,
        &gains,
        &baumgarte(),
        &QpSolver::default(),
    );
    assert_eq!(out.steps.len(), 3);
    assert!(matches!(out.error, Some((3, DynamicalError::StaleSample { .. }))));
}

#[test]
fn gain_guard_rejects_large_gains() {
    let model = generate_human_chain(HumanDofs::D66, 0);
    assert!(GainConfig::uniform(&model, 100.0, 10.0, DT).is_ok());
    assert!(matches!(
        GainConfig::uniform(&model, 101.0, 10.0, DT),
        Err(DynamicalError::InvalidGains(_))
    ));
    assert!(GainConfig::uniform(&model, 0.0, 10.0, DT).is_err());
}

#[test]
fn step_cost_is_consistent() {
    let model = generate_human_chain(HumanDofs::D66, 10);
    let spec = TrajectorySpec::walking(100.0, DT, 0.3, 10);
    let stream = generate_stream(&model, &spec).unwrap();
    let gains = GainConfig::defaults(&model, DT).unwrap();
    let qp = QpSolver::default();
    let mut state = SolverState::initial(&model, &stream.samples[0], DT);
    let mut times = Vec::with_capacity(stream.samples.len());
    for s in &stream.samples {
        let start = Instant::now();
        state = dynamical::step(&state, s, &model, &gains, &baumgarte(), &qp).unwrap().0;
        times.push(start.elapsed().as_secs_f64());
    }
    assert_eq!(times.len(), 10_000);
    // Scheduler preemption produces isolated spikes unrelated to the solver,
    // so the top 1% is dropped before measuring the spread.
    times.sort_by(f64::total_cmp);
    times.truncate(9_900);
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / times.len() as f64;
    let cv = var.sqrt() / mean;
    assert!(cv <= 0.25, "coefficient of variation {cv}");
}
