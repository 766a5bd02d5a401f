//! Levenberg–Marquardt with linear inequality constraints on the step.
//!
//! Each iteration solves the damped Gauss–Newton subproblem
//! `min ½‖r − J δ‖² + ½μ‖δ‖²  s.t.  G δ ≤ g` with the QP solver, so iterates
//! that start feasible stay feasible. Only steps that lower `‖r‖` are
//! accepted, which makes the error sequence monotone.

use nalgebra::{DMatrix, DVector};

use crate::qp::{LeastSquaresQp, QpError, QpSettings, QpSolver, QpStatus};

/// A nonlinear least-squares problem in residual form `r(x)`, where
/// `J = ∂h/∂x` so that `r(x ⊕ δ) ≈ r(x) − J δ`.
pub(crate) trait Problem {
    type Point: Clone;

    fn residual(&self, x: &Self::Point) -> DVector<f64>;
    fn residual_and_jacobian(&self, x: &Self::Point) -> (DVector<f64>, DMatrix<f64>);
    fn retract(&self, x: &Self::Point, delta: &DVector<f64>) -> Self::Point;
    /// Step constraints `G δ ≤ g` at `x`. Zero rows when unconstrained.
    fn step_constraints(&self, x: &Self::Point) -> (DMatrix<f64>, DVector<f64>);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmStatus {
    /// Error at or below the stopping tolerance.
    Converged,
    /// No damping level produced a decrease.
    Stalled,
    /// Iteration cap reached; the best iterate is returned.
    MaxIterations,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LmSettings {
    pub stop_tol: f64,
    pub max_iters: usize,
    pub lambda0: f64,
}

pub(crate) struct LmResult<P> {
    pub x: P,
    pub error: f64,
    pub iterations: usize,
    pub status: LmStatus,
}

const LAMBDA_UP: f64 = 4.0;
const LAMBDA_DOWN: f64 = 3.0;
const LAMBDA_MIN: f64 = 1e-12;
const LAMBDA_MAX: f64 = 1e10;

pub(crate) fn qp_settings() -> QpSettings {
    QpSettings {
        tol: 1e-11,
        ..QpSettings::default()
    }
}

pub(crate) fn minimize<P: Problem>(problem: &P, x0: P::Point, s: LmSettings) -> Result<LmResult<P::Point>, QpError> {
    let qp = QpSolver::new(qp_settings());
    let mut x = x0;
    let (mut r, mut jac) = problem.residual_and_jacobian(&x);
    let mut err = r.norm();
    let mut lambda = s.lambda0;
    let mut iterations = 0;
    let mut working: Vec<usize> = Vec::new();

    while err > s.stop_tol {
        if iterations >= s.max_iters {
            return Ok(LmResult {
                x,
                error: err,
                iterations,
                status: LmStatus::MaxIterations,
            });
        }
        iterations += 1;
        let (g_mat, g_vec) = problem.step_constraints(&x);
        let mut accepted = false;
        while lambda <= LAMBDA_MAX {
            let sub = LeastSquaresQp::new(jac.clone(), r.clone(), g_mat.clone(), g_vec.clone(), lambda)?;
            let sol = qp.solve(&sub, Some(&working))?;
            if sol.status == QpStatus::Solved {
                let candidate = problem.retract(&x, &sol.x);
                let r_new = problem.residual(&candidate);
                let e_new = r_new.norm();
                if e_new < err {
                    x = candidate;
                    working = sol.working_set;
                    (r, jac) = problem.residual_and_jacobian(&x);
                    err = r.norm();
                    lambda = (lambda / LAMBDA_DOWN).max(LAMBDA_MIN);
                    accepted = true;
                    break;
                }
            }
            lambda *= LAMBDA_UP;
        }
        if !accepted {
            return Ok(LmResult {
                x,
                error: err,
                iterations,
                status: LmStatus::Stalled,
            });
        }
    }
    Ok(LmResult {
        x,
        error: err,
        iterations,
        status: LmStatus::Converged,
    })
}

/// Smallest-norm correction `δ` with `G δ ≤ g`, used to move an infeasible
/// starting point onto the feasible set.
pub(crate) fn feasibility_correction(
    g_mat: &DMatrix<f64>,
    g_vec: &DVector<f64>,
) -> Result<Option<DVector<f64>>, QpError> {
    let d = g_mat.ncols();
    let p = LeastSquaresQp::new(
        DMatrix::zeros(0, d),
        DVector::zeros(0),
        g_mat.clone(),
        g_vec.clone(),
        1.0,
    )?;
    let sol = QpSolver::new(qp_settings()).solve(&p, None)?;
    Ok((sol.status == QpStatus::Solved).then_some(sol.x))
}
