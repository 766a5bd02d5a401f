mod common;

use iktrack_core::qp::{self, kkt_residuals, LeastSquaresQp, QpSolver, QpStatus};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_feasible(rng: &mut ChaCha8Rng, d: usize, k: usize) -> LeastSquaresQp {
    let m = d + rng.gen_range(0..3);
    let jac = DMatrix::from_fn(m, d, |_, _| rng.gen_range(-2.0..2.0));
    let target = DVector::from_fn(m, |_, _| rng.gen_range(-3.0..3.0));
    let g_mat = DMatrix::from_fn(k, d, |_, _| rng.gen_range(-1.0..1.0));
    let x0 = DVector::from_fn(d, |_, _| rng.gen_range(-0.5..0.5));
    let g_vec = &g_mat * x0 + DVector::from_fn(k, |_, _| rng.gen_range(0.0..0.3));
    LeastSquaresQp::new(jac, target, g_mat, g_vec, 1e-6).unwrap()
}

#[test]
fn matches_active_set_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let d = rng.gen_range(1..=4);
        let k = rng.gen_range(0..=4);
        let p = random_feasible(&mut rng, d, k);
        let sol = QpSolver::default().solve(&p, None).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        let oracle = common::enumerate_qp(&p).unwrap();
        assert!((&sol.x - oracle).amax() < 1e-6);
    }
}

#[test]
fn solutions_satisfy_kkt() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let d = rng.gen_range(2..=10);
        let k = rng.gen_range(1..=12);
        let p = random_feasible(&mut rng, d, k);
        let sol = qp::solve(&p, 1e-10, 500).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        let kkt = kkt_residuals(&p, &sol.x, &sol.multipliers);
        assert!(kkt.primal <= 1e-9, "{kkt:?}");
        assert!(kkt.stationarity <= 1e-8, "{kkt:?}");
        assert!(kkt.complementarity <= 1e-8, "{kkt:?}");
        assert!(kkt.dual_min >= -1e-10, "{kkt:?}");
    }
}

#[test]
fn warm_start_gives_same_answer_in_fewer_iterations() {
    // A box-bounded problem whose unconstrained minimum lies outside the box.
    let d = 12;
    let jac = DMatrix::identity(d, d);
    let target = DVector::from_fn(d, |i, _| if i % 2 == 0 { 2.0 } else { -2.0 });
    let mut g_mat = DMatrix::zeros(2 * d, d);
    for i in 0..d {
        g_mat[(2 * i, i)] = 1.0;
        g_mat[(2 * i + 1, i)] = -1.0;
    }
    let g_vec = DVector::from_element(2 * d, 1.0);
    let p = LeastSquaresQp::new(jac, target, g_mat, g_vec, 0.0).unwrap();
    let solver = QpSolver::default();
    let cold = solver.solve(&p, None).unwrap();
    let warm = solver.solve(&p, Some(&cold.working_set)).unwrap();
    assert!((&cold.x - &warm.x).amax() < 1e-12);
    assert!(warm.iterations < cold.iterations);
    assert_eq!(cold.active_set.len(), d);
}

#[test]
fn infeasible_constraints_are_reported() {
    let g_mat = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
    let g_vec = DVector::from_row_slice(&[-1.0, -1.0]);
    let p = LeastSquaresQp::new(DMatrix::identity(1, 1), DVector::zeros(1), g_mat, g_vec, 0.0).unwrap();
    assert_eq!(
        QpSolver::default().solve(&p, None).unwrap().status,
        QpStatus::Infeasible
    );
}

#[test]
fn unconstrained_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let d = rng.gen_range(1..=20);
        let m = d + rng.gen_range(0..5);
        let jac = DMatrix::from_fn(m, d, |_, _| rng.gen_range(-1.0..1.0));
        let t = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        let x = qp::solve_unconstrained(&jac, &t, 1e-6).unwrap();
        assert!((x - common::normal_equations(&jac, &t, 1e-6)).amax() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn constrained_objective_never_beats_unconstrained(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_feasible(&mut rng, 3, 3);
        let sol = QpSolver::default().solve(&p, None).unwrap();
        let free = qp::solve_unconstrained(&p.jac, &p.target, p.damping).unwrap();
        let unc = LeastSquaresQp::unconstrained(p.jac.clone(), p.target.clone(), p.damping).unwrap();
        prop_assert!(sol.objective >= unc.objective(&free) - 1e-10);
    }
}
