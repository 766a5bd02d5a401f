//! Instantaneous-optimization baselines: every sample is solved to
//! convergence from the previous solution.
//!
//! [`solve_whole_body`] fits the whole configuration to the stacked pose
//! targets with Levenberg–Marquardt. [`solve_pairwise`] cuts the tree at the
//! orientation targets and solves each piece on its own. Either pose stage
//! can be followed by [`solve_velocity`] to recover `ν`.

mod lm;
mod pairwise;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamical::{pose_residual, TargetSample};
use crate::kinematics::{Configuration, KinematicModel, ModelError, Velocity, BASE_DOFS};
use crate::qp::{LeastSquaresQp, QpError, QpSolver, QpStatus, DEFAULT_DAMPING};
use crate::so3::Rotation;

pub use lm::LmStatus;
pub use pairwise::{decompose_pairwise, solve_pairwise, solve_subsystem, PairwiseResult, Subsystem, SubsystemReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InstantaneousError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("sample does not match the model: {0}")]
    SampleMismatch(String),
    #[error("cannot decompose model: {0}")]
    Decomposition(String),
    #[error("joint limits admit no configuration")]
    InfeasibleLimits,
    #[error("velocity QP finished with status {0:?}")]
    QpFailed(QpStatus),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<crate::dynamical::DynamicalError> for InstantaneousError {
    fn from(e: crate::dynamical::DynamicalError) -> Self {
        match e {
            crate::dynamical::DynamicalError::Model(m) => InstantaneousError::Model(m),
            other => InstantaneousError::SampleMismatch(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstantaneousConfig {
    /// Weight per target block (position targets, then orientation
    /// targets). `None` weights every block by 1.
    pub k_r: Option<Vec<f64>>,
    /// Stop when the weighted pose error `‖K_r r‖₂` falls to this value.
    pub stop_tol: f64,
    pub max_iters: usize,
    pub lm_lambda0: f64,
}

impl Default for InstantaneousConfig {
    fn default() -> Self {
        Self {
            k_r: None,
            stop_tol: 1e-4,
            max_iters: 50,
            lm_lambda0: 1e-3,
        }
    }
}

impl InstantaneousConfig {
    pub fn validate(&self, model: &KinematicModel) -> Result<(), InstantaneousError> {
        if !(self.stop_tol > 0.0) {
            return Err(InstantaneousError::InvalidConfig(format!(
                "stop_tol must be positive, got {}",
                self.stop_tol
            )));
        }
        if !(self.lm_lambda0 > 0.0) {
            return Err(InstantaneousError::InvalidConfig(format!(
                "lm_lambda0 must be positive, got {}",
                self.lm_lambda0
            )));
        }
        if let Some(k) = &self.k_r {
            let blocks = model.position_targets().len() + model.orientation_targets().len();
            if k.len() != blocks {
                return Err(InstantaneousError::InvalidConfig(format!(
                    "K_r has {} entries, model has {blocks} target blocks",
                    k.len()
                )));
            }
            if let Some(bad) = k.iter().find(|&&w| !(w > 0.0 && w.is_finite())) {
                return Err(InstantaneousError::InvalidConfig(format!(
                    "K_r entries must be positive, got {bad}"
                )));
            }
        }
        Ok(())
    }

    /// Row weights, each block weight repeated three times.
    fn row_weights(&self, model: &KinematicModel) -> DVector<f64> {
        let blocks = model.position_targets().len() + model.orientation_targets().len();
        DVector::from_fn(3 * blocks, |i, _| self.k_r.as_ref().map_or(1.0, |k| k[i / 3]))
    }

    fn lm(&self) -> lm::LmSettings {
        lm::LmSettings {
            stop_tol: self.stop_tol,
            max_iters: self.max_iters,
            lambda0: self.lm_lambda0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WholeBodyResult {
    pub q: Configuration,
    pub iterations: usize,
    /// Final weighted pose error `‖K_r r‖₂`.
    pub error: f64,
    pub status: LmStatus,
}

struct WholeBody<'a> {
    model: &'a KinematicModel,
    sample: &'a TargetSample,
    weights: DVector<f64>,
    /// Bounded constraint rows: `(row index, b^q)`.
    bounded: Vec<(usize, f64)>,
}

impl<'a> WholeBody<'a> {
    fn new(model: &'a KinematicModel, sample: &'a TargetSample, cfg: &InstantaneousConfig) -> Self {
        let c = model.constraints();
        Self {
            model,
            sample,
            weights: cfg.row_weights(model),
            bounded: (0..c.rows()).filter_map(|i| c.b_q[i].map(|b| (i, b))).collect(),
        }
    }

    /// `[0 | A_b] δ ≤ b^q − A_b s` over the bounded rows.
    fn joint_constraints(&self, s: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let a = &self.model.constraints().a;
        let n = self.model.dofs();
        let mut g_mat = DMatrix::zeros(self.bounded.len(), n + BASE_DOFS);
        let mut g_vec = DVector::zeros(self.bounded.len());
        for (k, &(i, b)) in self.bounded.iter().enumerate() {
            g_mat.view_mut((k, BASE_DOFS), (1, n)).copy_from(&a.row(i));
            g_vec[k] = b - a.row(i).dot(&s.transpose());
        }
        (g_mat, g_vec)
    }
}

impl lm::Problem for WholeBody<'_> {
    type Point = Configuration;

    fn residual(&self, q: &Configuration) -> DVector<f64> {
        let r = pose_residual(self.model, q, self.sample).expect("sample checked before solving");
        r.component_mul(&self.weights)
    }

    fn residual_and_jacobian(&self, q: &Configuration) -> (DVector<f64>, DMatrix<f64>) {
        let mut jac = self
            .model
            .stacked_jacobian(q)
            .expect("configuration checked before solving");
        for (i, w) in self.weights.iter().enumerate() {
            jac.row_mut(i).scale_mut(*w);
        }
        (self.residual(q), jac)
    }

    fn retract(&self, q: &Configuration, d: &DVector<f64>) -> Configuration {
        let n = self.model.dofs();
        let dphi = d.fixed_rows::<3>(3).into_owned();
        Configuration {
            base_pos: q.base_pos + d.fixed_rows::<3>(0),
            base_rot: Rotation::exp(&dphi) * q.base_rot,
            s: &q.s + d.rows(BASE_DOFS, n),
        }
    }

    fn step_constraints(&self, q: &Configuration) -> (DMatrix<f64>, DVector<f64>) {
        self.joint_constraints(&q.s)
    }
}

/// Moves `s` to the nearest point satisfying the bounded joint constraints.
fn make_feasible(model: &KinematicModel, s: &DVector<f64>) -> Result<DVector<f64>, InstantaneousError> {
    let c = model.constraints();
    if c.is_empty() || c.max_violation(s) <= 0.0 {
        return Ok(s.clone());
    }
    let bounded: Vec<usize> = (0..c.rows()).filter(|&i| c.b_q[i].is_some()).collect();
    let mut g_mat = DMatrix::zeros(bounded.len(), s.len());
    let mut g_vec = DVector::zeros(bounded.len());
    for (k, &i) in bounded.iter().enumerate() {
        g_mat.row_mut(k).copy_from(&c.a.row(i));
        g_vec[k] = c.b_q[i].expect("bounded row") - c.a.row(i).dot(&s.transpose());
    }
    let delta = lm::feasibility_correction(&g_mat, &g_vec)?.ok_or(InstantaneousError::InfeasibleLimits)?;
    Ok(s + delta)
}

/// Fits the full configuration to `sample`, starting at `q_init`, subject
/// to `A s ≤ b^q`.
pub fn solve_whole_body(
    model: &KinematicModel,
    sample: &TargetSample,
    q_init: &Configuration,
    cfg: &InstantaneousConfig,
) -> Result<WholeBodyResult, InstantaneousError> {
    cfg.validate(model)?;
    sample.check(model)?;
    if q_init.s.len() != model.dofs() {
        return Err(ModelError::DimensionMismatch {
            expected: model.dofs(),
            got: q_init.s.len(),
        }
        .into());
    }
    let mut q0 = q_init.clone();
    q0.s = make_feasible(model, &q0.s)?;
    let problem = WholeBody::new(model, sample, cfg);
    let res = lm::minimize(&problem, q0, cfg.lm())?;
    Ok(WholeBodyResult {
        q: res.x,
        iterations: res.iterations,
        error: res.error,
        status: res.status,
    })
}

/// Velocity stage shared by the baselines:
/// `min ½‖v − J(q) ν‖² + ½λ‖ν‖²  s.t.  [0 | A] ν ≤ b^ν` over rows with a
/// velocity bound.
pub fn solve_velocity(
    model: &KinematicModel,
    q: &Configuration,
    sample: &TargetSample,
    damping: f64,
) -> Result<Velocity, InstantaneousError> {
    sample.check(model)?;
    let jac = model.stacked_jacobian(q)?;
    let c = model.constraints();
    let rows: Vec<usize> = (0..c.rows()).filter(|&i| c.b_nu[i].is_some()).collect();
    let n = model.dofs();
    let mut g_mat = DMatrix::zeros(rows.len(), n + BASE_DOFS);
    let mut g_vec = DVector::zeros(rows.len());
    for (k, &i) in rows.iter().enumerate() {
        g_mat.view_mut((k, BASE_DOFS), (1, n)).copy_from(&c.a.row(i));
        g_vec[k] = c.b_nu[i].expect("bounded row");
    }
    let p = LeastSquaresQp::new(jac, sample.velocity_vector(), g_mat, g_vec, damping)?;
    let sol = QpSolver::default().solve(&p, None)?;
    if sol.status != QpStatus::Solved {
        return Err(InstantaneousError::QpFailed(sol.status));
    }
    Ok(Velocity::from_vector(&sol.x))
}

/// [`solve_velocity`] with the default damping.
pub fn solve_velocity_default(
    model: &KinematicModel,
    q: &Configuration,
    sample: &TargetSample,
) -> Result<Velocity, InstantaneousError> {
    solve_velocity(model, q, sample, DEFAULT_DAMPING)
}
