//! Dynamical inverse kinematics: one velocity-level QP per target sample.
//!
//! Each step feeds the pose residual back into the target velocity,
//! `v* = v + K r(q_{k−1}, x_k)`, solves
//!
//! ```text
//!     minimize    ½‖v* − J(q_{k−1}) ν‖² + ½λ‖ν‖²
//!     subject to  [0 | A] ν ≤ tanh(K_g (b^q − A s)) ∘ b^ν
//! ```
//!
//! and integrates the result: forward Euler for the base position and the
//! joints, the Baumgarte-stabilized flow for the base rotation.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector3};
use thiserror::Error;

use crate::kinematics::{Configuration, KinematicModel, LinkPoses, ModelError, StackedPose, Velocity, BASE_DOFS};
use crate::qp::{LeastSquaresQp, QpError, QpSolver, QpStatus, DEFAULT_DAMPING};
use crate::so3::{self, AngularVelocity, BaumgarteConfig, Rotation, So3Error};

/// Tolerance on the fixed-rate contract `t_k − t_{k−1} = Δt`.
pub const RATE_TOL: f64 = 1e-9;
/// Slack below which a constraint row counts as active.
pub const ACTIVE_TOL: f64 = 1e-6;
pub const DEFAULT_GAIN: f64 = 2.0;
pub const DEFAULT_LIMIT_GAIN: f64 = 10.0;
pub const DEFAULT_B_NU: f64 = 1e3;
pub const DEFAULT_DT: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicalError {
    #[error("sample at t = {got} does not follow the previous one by dt (expected t = {expected})")]
    StaleSample { expected: f64, got: f64 },
    #[error("sample does not match the model: {0}")]
    SampleMismatch(String),
    #[error("invalid gains: {0}")]
    InvalidGains(String),
    #[error("QP finished with status {0:?}")]
    QpFailed(QpStatus),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    So3(#[from] So3Error),
}

/// Stacked targets `x(t)` and `v(t)` at one instant, in the model's target
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSample {
    pub t: f64,
    pub positions: Vec<Vector3<f64>>,
    pub rotations: Vec<Rotation>,
    pub lin_vels: Vec<Vector3<f64>>,
    pub ang_vels: Vec<Vector3<f64>>,
}

impl TargetSample {
    /// The sample that `(q, ν)` produces exactly: stacked FK and `J(q)·ν`.
    pub fn from_state(model: &KinematicModel, q: &Configuration, nu: &Velocity, t: f64) -> Result<Self, ModelError> {
        let poses = model.link_poses(q)?;
        let x = model.stacked_pose_from(&poses);
        let mut jac = DMatrix::zeros(model.target_dim(), model.velocity_dim());
        model.stacked_jacobian_into(&poses, &mut jac);
        let v = jac * nu.to_vector();
        let np = x.positions.len();
        let block = |i: usize| Vector3::new(v[3 * i], v[3 * i + 1], v[3 * i + 2]);
        Ok(Self {
            t,
            lin_vels: (0..np).map(block).collect(),
            ang_vels: (0..x.rotations.len()).map(|j| block(np + j)).collect(),
            positions: x.positions,
            rotations: x.rotations,
        })
    }

    /// Checks the target counts against the model.
    pub fn check(&self, model: &KinematicModel) -> Result<(), DynamicalError> {
        let np = model.position_targets().len();
        let no = model.orientation_targets().len();
        if self.positions.len() != np || self.lin_vels.len() != np {
            return Err(DynamicalError::SampleMismatch(format!(
                "model declares {np} position targets, sample has {} positions and {} linear velocities",
                self.positions.len(),
                self.lin_vels.len()
            )));
        }
        if self.rotations.len() != no || self.ang_vels.len() != no {
            return Err(DynamicalError::SampleMismatch(format!(
                "model declares {no} orientation targets, sample has {} rotations and {} angular velocities",
                self.rotations.len(),
                self.ang_vels.len()
            )));
        }
        Ok(())
    }

    /// Stacked `v(t)`: linear velocities then angular velocities.
    pub fn velocity_vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            3 * (self.lin_vels.len() + self.ang_vels.len()),
            self.lin_vels
                .iter()
                .chain(self.ang_vels.iter())
                .flat_map(|v| v.iter().copied()),
        )
    }
}

/// Feedback gains of the dynamical scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct GainConfig {
    /// Diagonal of `K`, one entry per stacked residual row.
    pub k: DVector<f64>,
    /// Diagonal of `K_g`, one entry per constraint row.
    pub k_g: DVector<f64>,
    /// Stand-in for unbounded `b^ν` entries.
    pub b_nu_default: f64,
    /// QP damping `λ`.
    pub damping: f64,
    /// Sample period the gains were validated against.
    pub dt: f64,
}

impl GainConfig {
    /// Validates positivity and the stability guard `max K · Δt ≤ 1`.
    pub fn new(
        k: DVector<f64>,
        k_g: DVector<f64>,
        b_nu_default: f64,
        damping: f64,
        dt: f64,
    ) -> Result<Self, DynamicalError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(DynamicalError::InvalidGains(format!("dt must be positive, got {dt}")));
        }
        if let Some(bad) = k.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
            return Err(DynamicalError::InvalidGains(format!(
                "K entries must be positive, got {bad}"
            )));
        }
        if let Some(bad) = k_g.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
            return Err(DynamicalError::InvalidGains(format!(
                "K_g entries must be positive, got {bad}"
            )));
        }
        if !(b_nu_default > 0.0 && b_nu_default.is_finite()) {
            return Err(DynamicalError::InvalidGains(format!(
                "b_nu_default must be positive, got {b_nu_default}"
            )));
        }
        if !(damping >= 0.0 && damping.is_finite()) {
            return Err(DynamicalError::InvalidGains(format!(
                "damping must be non-negative, got {damping}"
            )));
        }
        let k_max = k.iter().copied().fold(0.0, f64::max);
        if k_max * dt > 1.0 + 1e-12 {
            return Err(DynamicalError::InvalidGains(format!(
                "K·dt = {} exceeds 1 (K = {k_max}, dt = {dt})",
                k_max * dt
            )));
        }
        Ok(Self::unchecked(k, k_g, b_nu_default, damping, dt))
    }

    /// Same gain on every residual row and every constraint row.
    pub fn uniform(model: &KinematicModel, k: f64, k_g: f64, dt: f64) -> Result<Self, DynamicalError> {
        Self::new(
            DVector::from_element(model.target_dim(), k),
            DVector::from_element(model.constraints().rows(), k_g),
            DEFAULT_B_NU,
            DEFAULT_DAMPING,
            dt,
        )
    }

    /// Default gains (`K = 2`, `K_g = 10`) at `dt`.
    pub fn defaults(model: &KinematicModel, dt: f64) -> Result<Self, DynamicalError> {
        Self::uniform(model, DEFAULT_GAIN, DEFAULT_LIMIT_GAIN, dt)
    }

    /// Skips every check. Meant for experiments outside the stable range,
    /// such as `K = 0` or `K·Δt > 1`.
    pub fn unchecked(k: DVector<f64>, k_g: DVector<f64>, b_nu_default: f64, damping: f64, dt: f64) -> Self {
        Self {
            k,
            k_g,
            b_nu_default,
            damping,
            dt,
        }
    }

    /// Uniform gains without checks.
    pub fn uniform_unchecked(model: &KinematicModel, k: f64, k_g: f64, dt: f64) -> Self {
        Self::unchecked(
            DVector::from_element(model.target_dim(), k),
            DVector::from_element(model.constraints().rows(), k_g),
            DEFAULT_B_NU,
            DEFAULT_DAMPING,
            dt,
        )
    }

    fn check(&self, model: &KinematicModel) -> Result<(), DynamicalError> {
        if self.k.len() != model.target_dim() || self.k_g.len() != model.constraints().rows() {
            return Err(DynamicalError::InvalidGains(format!(
                "expected {} K entries and {} K_g entries, got {} and {}",
                model.target_dim(),
                model.constraints().rows(),
                self.k.len(),
                self.k_g.len()
            )));
        }
        Ok(())
    }
}

/// Tracker state `(q(t_k), ν(t_k))` plus warm-start data.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub q: Configuration,
    pub nu: Velocity,
    /// Timestamp of the last consumed sample.
    pub t: f64,
    pub last_active_set: Vec<usize>,
    pub step_index: u64,
}

impl SolverState {
    pub fn new(q: Configuration, t: f64) -> Self {
        let n = q.s.len();
        Self {
            q,
            nu: Velocity::zero(n),
            t,
            last_active_set: Vec::new(),
            step_index: 0,
        }
    }

    /// Zero joints and identity base placed at the base's position target
    /// (or the origin without one), timed one period before `first`.
    pub fn initial(model: &KinematicModel, first: &TargetSample, dt: f64) -> Self {
        let mut q = Configuration::zero(model.dofs());
        if let Some(i) = model.position_targets().iter().position(|&l| l == model.base_link()) {
            if let Some(p) = first.positions.get(i) {
                q.base_pos = *p;
            }
        }
        Self::new(q, first.t - dt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// `r(q_{k−1}, x_k)`.
    pub residual_r: DVector<f64>,
    /// `v_k − J(q_{k−1}) ν_{k−1}`.
    pub residual_u: DVector<f64>,
    pub qp_status: QpStatus,
    pub qp_iterations: usize,
    /// Seconds spent inside `step`.
    pub step_wall_time: f64,
    /// One flag per constraint row: the velocity bound is attained.
    pub constraint_active: Vec<bool>,
}

fn residual_from(x: &StackedPose, sample: &TargetSample) -> DVector<f64> {
    let np = x.positions.len();
    let mut r = DVector::zeros(3 * (np + x.rotations.len()));
    for (i, (p, h)) in sample.positions.iter().zip(&x.positions).enumerate() {
        r.fixed_rows_mut::<3>(3 * i).copy_from(&(p - h));
    }
    for (j, (tgt, est)) in sample.rotations.iter().zip(&x.rotations).enumerate() {
        r.fixed_rows_mut::<3>(3 * (np + j))
            .copy_from(&so3::orientation_residual_inertial(est, tgt));
    }
    r
}

/// Stacked pose residual: `p − h^p(q)` for positions, the inertial-frame
/// orientation error `sk(R · ĥ^o(q)ᵀ)ᵛ` for rotations.
pub fn pose_residual(
    model: &KinematicModel,
    q: &Configuration,
    sample: &TargetSample,
) -> Result<DVector<f64>, DynamicalError> {
    sample.check(model)?;
    let x = model.stacked_forward_kinematics(q)?;
    Ok(residual_from(&x, sample))
}

/// `v(t) − J(q) ν`.
pub fn velocity_residual(
    model: &KinematicModel,
    q: &Configuration,
    nu: &Velocity,
    sample: &TargetSample,
) -> Result<DVector<f64>, DynamicalError> {
    sample.check(model)?;
    let jac = model.stacked_jacobian(q)?;
    Ok(sample.velocity_vector() - jac * nu.to_vector())
}

/// `v* = v + K ∘ r`.
pub fn corrected_velocity(sample: &TargetSample, r: &DVector<f64>, gains: &GainConfig) -> DVector<f64> {
    sample.velocity_vector() + gains.k.component_mul(r)
}

/// `G = [0 | A]` and `g = tanh(K_g (b^q − A s)) ∘ b^ν`.
///
/// Rows without a position bound use `tanh(·) = 1`; rows without a
/// velocity bound use `gains.b_nu_default`.
pub fn build_limit_constraints(
    model: &KinematicModel,
    q: &Configuration,
    gains: &GainConfig,
) -> (DMatrix<f64>, DVector<f64>) {
    let c = model.constraints();
    let n = model.dofs();
    let rows = c.rows();
    let mut g_mat = DMatrix::zeros(rows, n + BASE_DOFS);
    g_mat.view_mut((0, BASE_DOFS), (rows, n)).copy_from(&c.a);
    let a_s = &c.a * &q.s;
    let g_vec = DVector::from_iterator(
        rows,
        (0..rows).map(|i| {
            let shape = match c.b_q[i] {
                Some(b) => (gains.k_g[i] * (b - a_s[i])).tanh(),
                None => 1.0,
            };
            shape * c.b_nu[i].unwrap_or(gains.b_nu_default)
        }),
    );
    (g_mat, g_vec)
}

/// One tracking step: a single stacked-Jacobian evaluation, a single QP
/// solve, and the state update.
pub fn step(
    state: &SolverState,
    sample: &TargetSample,
    model: &KinematicModel,
    gains: &GainConfig,
    baumgarte: &BaumgarteConfig,
    qp: &QpSolver,
) -> Result<(SolverState, StepReport), DynamicalError> {
    let start = Instant::now();
    let dt = baumgarte.dt();
    let expected = state.t + dt;
    if !((sample.t - expected).abs() <= RATE_TOL) {
        return Err(DynamicalError::StaleSample {
            expected,
            got: sample.t,
        });
    }
    sample.check(model)?;
    gains.check(model)?;

    let mut poses = LinkPoses::new(model);
    model.link_poses_into(&state.q, &mut poses)?;
    let mut jac = DMatrix::zeros(model.target_dim(), model.velocity_dim());
    model.stacked_jacobian_into(&poses, &mut jac);
    let r = residual_from(&model.stacked_pose_from(&poses), sample);
    let v = sample.velocity_vector();
    let u = &v - &jac * state.nu.to_vector();
    let v_star = v + gains.k.component_mul(&r);

    let (g_mat, g_vec) = build_limit_constraints(model, &state.q, gains);
    let problem = LeastSquaresQp::new(jac, v_star, g_mat, g_vec, gains.damping)?;
    let sol = qp.solve(&problem, Some(&state.last_active_set))?;
    if sol.status != QpStatus::Solved {
        return Err(DynamicalError::QpFailed(sol.status));
    }
    let slack = &problem.g_vec - &problem.g_mat * &sol.x;
    let constraint_active = slack.iter().map(|s| s.abs() <= ACTIVE_TOL).collect();

    let nu = Velocity::from_vector(&sol.x);
    let omega = AngularVelocity::new(nu.base_ang)?;
    let rot = so3::baumgarte_step_exp(state.q.base_rot.matrix(), &omega, baumgarte)?;
    let q = Configuration {
        base_pos: state.q.base_pos + nu.base_lin * dt,
        base_rot: Rotation::from_integrated(rot)?,
        s: &state.q.s + &nu.s_dot * dt,
    };

    let report = StepReport {
        residual_r: r,
        residual_u: u,
        qp_status: sol.status,
        qp_iterations: sol.iterations,
        step_wall_time: start.elapsed().as_secs_f64(),
        constraint_active,
    };
    let next = SolverState {
        q,
        nu,
        t: sample.t,
        last_active_set: sol.working_set,
        step_index: state.step_index + 1,
    };
    Ok((next, report))
}

/// Output of [`track`]. `error` holds the index of the failing sample and
/// the cause when the run aborted early; `steps` then has the partial
/// results.
#[derive(Debug, Clone)]
pub struct TrackOutput {
    pub steps: Vec<(Configuration, Velocity, StepReport)>,
    pub error: Option<(usize, DynamicalError)>,
}

impl TrackOutput {
    pub fn is_complete(&self) -> bool {
        self.error.is_none()
    }
}

/// Folds [`step`] over a fixed-rate stream. Without an initial state the
/// tracker starts from [`SolverState::initial`].
pub fn track(
    stream: &[TargetSample],
    initial: Option<SolverState>,
    model: &KinematicModel,
    gains: &GainConfig,
    baumgarte: &BaumgarteConfig,
    qp: &QpSolver,
) -> TrackOutput {
    let mut out = TrackOutput {
        steps: Vec::with_capacity(stream.len()),
        error: None,
    };
    let Some(first) = stream.first() else {
        return out;
    };
    let mut state = initial.unwrap_or_else(|| SolverState::initial(model, first, baumgarte.dt()));
    for (k, sample) in stream.iter().enumerate() {
        match step(&state, sample, model, gains, baumgarte, qp) {
            Ok((next, report)) => {
                out.steps.push((next.q.clone(), next.nu.clone(), report));
                state = next;
            }
            Err(e) => {
                out.error = Some((k, e));
                break;
            }
        }
    }
    out
}
