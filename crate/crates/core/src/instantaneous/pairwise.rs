//! Pair-wise decomposition: the tree is cut at every orientation-target
//! link, and the joints between two consecutive targets form a subsystem
//! that only sees the relative pose of its two targets.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rayon::prelude::*;

use super::{lm, InstantaneousConfig, InstantaneousError, LmStatus};
use crate::dynamical::TargetSample;
use crate::kinematics::{Configuration, KinematicModel, ModelError};
use crate::so3::{self, Rotation};

/// Joints between a root target frame and a tip target frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subsystem {
    /// Joint indices from the root side to the tip.
    pub joint_indices: Vec<usize>,
    pub root_frame: usize,
    pub tip_frame: usize,
    /// Position of root and tip in the model's orientation-target list.
    root_target: usize,
    tip_target: usize,
    /// Positions of root and tip in the position-target list, when both
    /// carry one.
    position_pair: Option<(usize, usize)>,
    /// Constraint rows that only involve this subsystem's joints.
    constraint_rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemReport {
    pub root_frame: usize,
    pub tip_frame: usize,
    pub iterations: usize,
    /// Final weighted relative-pose error.
    pub error: f64,
    pub status: LmStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseResult {
    pub q: Configuration,
    pub reports: Vec<SubsystemReport>,
}

impl PairwiseResult {
    pub fn iterations(&self) -> usize {
        self.reports.iter().map(|r| r.iterations).max().unwrap_or(0)
    }

    pub fn all_converged(&self) -> bool {
        self.reports.iter().all(|r| r.status == LmStatus::Converged)
    }
}

/// Splits the model into subsystems, one per non-base orientation target.
pub fn decompose_pairwise(model: &KinematicModel) -> Result<Vec<Subsystem>, InstantaneousError> {
    let base = model.base_link();
    let ori = model.orientation_targets();
    let pos = model.position_targets();
    if !ori.contains(&base) || !pos.contains(&base) {
        return Err(InstantaneousError::Decomposition(
            "the base link needs both a position and an orientation target".into(),
        ));
    }
    let ori_index = |l: usize| ori.iter().position(|&o| o == l);
    let pos_index = |l: usize| pos.iter().position(|&p| p == l);

    let mut owner: Vec<Option<usize>> = vec![None; model.dofs()];
    let mut subsystems = Vec::new();
    for (tip_target, &tip) in ori.iter().enumerate() {
        if tip == base || ori[..tip_target].contains(&tip) {
            continue;
        }
        let mut joints = Vec::new();
        let mut link = tip;
        let root = loop {
            let j = model.parent_joint(link).expect("non-base links have a parent joint");
            joints.push(j);
            link = model.joints()[j].parent_link;
            if ori_index(link).is_some() {
                break link;
            }
        };
        joints.reverse();
        for &j in &joints {
            if let Some(other) = owner[j] {
                return Err(InstantaneousError::Decomposition(format!(
                    "joint '{}' lies between targets '{}' and '{}'",
                    model.joints()[j].name,
                    model.links()[subsystems_tip(&subsystems, other)].name,
                    model.links()[tip].name
                )));
            }
            owner[j] = Some(subsystems.len());
        }
        let position_pair = match (pos_index(root), pos_index(tip)) {
            (Some(a), Some(b)) => Some((a, b)),
            _ => None,
        };
        subsystems.push(Subsystem {
            joint_indices: joints,
            root_frame: root,
            tip_frame: tip,
            root_target: ori_index(root).expect("root is a target"),
            tip_target,
            position_pair,
            constraint_rows: Vec::new(),
        });
    }

    if let Some(j) = owner.iter().position(|o| o.is_none()) {
        return Err(InstantaneousError::Decomposition(format!(
            "joint '{}' lies between no pair of targets",
            model.joints()[j].name
        )));
    }

    let c = model.constraints();
    for i in 0..c.rows() {
        let mut owners = (0..model.dofs())
            .filter(|&j| c.a[(i, j)] != 0.0)
            .map(|j| owner[j].expect("covered"));
        let Some(first) = owners.next() else { continue };
        if owners.any(|o| o != first) {
            return Err(InstantaneousError::Decomposition(format!(
                "constraint row {i} couples joints of different subsystems"
            )));
        }
        subsystems[first].constraint_rows.push(i);
    }
    Ok(subsystems)
}

fn subsystems_tip(subsystems: &[Subsystem], i: usize) -> usize {
    subsystems[i].tip_frame
}

struct Relative<'a> {
    model: &'a KinematicModel,
    sub: &'a Subsystem,
    /// Full joint vector; only the subsystem's entries change.
    s_full: DVector<f64>,
    target_rot: Rotation,
    target_pos: Option<Vector3<f64>>,
    weight: f64,
}

impl Relative<'_> {
    fn config(&self, s_sub: &DVector<f64>) -> Configuration {
        let mut q = Configuration::zero(self.model.dofs());
        q.s.copy_from(&self.s_full);
        for (k, &j) in self.sub.joint_indices.iter().enumerate() {
            q.s[j] = s_sub[k];
        }
        q
    }

    /// Residual and Jacobian expressed in the root frame.
    fn eval(&self, s_sub: &DVector<f64>, with_jacobian: bool) -> (DVector<f64>, Option<DMatrix<f64>>) {
        let poses = self.model.link_poses(&self.config(s_sub)).expect("dimensions checked");
        let (root, tip) = (self.sub.root_frame, self.sub.tip_frame);
        let rc_t: Matrix3<f64> = poses.link_rot[root].transpose();
        let rel_rot = Rotation::from_matrix_unchecked(rc_t * poses.link_rot[tip]);
        let rel_pos = rc_t * (poses.link_pos[tip] - poses.link_pos[root]);
        let rows = if self.target_pos.is_some() { 6 } else { 3 };
        let mut r = DVector::zeros(rows);
        let mut off = 0;
        if let Some(p) = self.target_pos {
            r.fixed_rows_mut::<3>(0).copy_from(&(p - rel_pos));
            off = 3;
        }
        r.fixed_rows_mut::<3>(off)
            .copy_from(&so3::orientation_residual_inertial(&rel_rot, &self.target_rot));
        r *= self.weight;

        let jac = with_jacobian.then(|| {
            let mut jac = DMatrix::zeros(rows, self.sub.joint_indices.len());
            for (k, &j) in self.sub.joint_indices.iter().enumerate() {
                let axis = poses.joint_axis[j];
                if self.target_pos.is_some() {
                    let lin = rc_t * axis.cross(&(poses.link_pos[tip] - poses.joint_pos[j]));
                    jac.fixed_view_mut::<3, 1>(0, k).copy_from(&lin);
                }
                jac.fixed_view_mut::<3, 1>(off, k).copy_from(&(rc_t * axis));
            }
            jac * self.weight
        });
        (r, jac)
    }
}

impl lm::Problem for Relative<'_> {
    type Point = DVector<f64>;

    fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        self.eval(x, false).0
    }

    fn residual_and_jacobian(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let (r, j) = self.eval(x, true);
        (r, j.expect("requested"))
    }

    fn retract(&self, x: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        x + d
    }

    fn step_constraints(&self, x: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let c = self.model.constraints();
        let bounded: Vec<(usize, f64)> = self
            .sub
            .constraint_rows
            .iter()
            .filter_map(|&i| c.b_q[i].map(|b| (i, b)))
            .collect();
        let n = self.sub.joint_indices.len();
        let mut g_mat = DMatrix::zeros(bounded.len(), n);
        let mut g_vec = DVector::zeros(bounded.len());
        for (row, &(i, b)) in bounded.iter().enumerate() {
            let mut lhs = 0.0;
            for (k, &j) in self.sub.joint_indices.iter().enumerate() {
                g_mat[(row, k)] = c.a[(i, j)];
                lhs += c.a[(i, j)] * x[k];
            }
            g_vec[row] = b - lhs;
        }
        (g_mat, g_vec)
    }
}

/// Solves one subsystem on its relative-pose residual. Returns the
/// subsystem's joint values in `joint_indices` order.
pub fn solve_subsystem(
    model: &KinematicModel,
    sub: &Subsystem,
    sample: &TargetSample,
    q_init: &Configuration,
    cfg: &InstantaneousConfig,
) -> Result<(DVector<f64>, SubsystemReport), InstantaneousError> {
    let rc = &sample.rotations[sub.root_target];
    let target_rot =
        Rotation::from_matrix_unchecked(rc.matrix().transpose() * sample.rotations[sub.tip_target].matrix());
    let target_pos = sub
        .position_pair
        .map(|(a, b)| rc.matrix().transpose() * (sample.positions[b] - sample.positions[a]));
    let np = model.position_targets().len();
    let weight = cfg.k_r.as_ref().map_or(1.0, |k| k[np + sub.tip_target]);
    let problem = Relative {
        model,
        sub,
        s_full: q_init.s.clone(),
        target_rot,
        target_pos,
        weight,
    };
    let mut x0 = DVector::from_iterator(sub.joint_indices.len(), sub.joint_indices.iter().map(|&j| q_init.s[j]));
    let (g_mat, g_vec) = lm::Problem::step_constraints(&problem, &x0);
    if g_vec.iter().any(|&v| v < 0.0) {
        let delta = lm::feasibility_correction(&g_mat, &g_vec)?.ok_or(InstantaneousError::InfeasibleLimits)?;
        x0 += delta;
    }
    let res = lm::minimize(&problem, x0, cfg.lm())?;
    Ok((
        res.x,
        SubsystemReport {
            root_frame: sub.root_frame,
            tip_frame: sub.tip_frame,
            iterations: res.iterations,
            error: res.error,
            status: res.status,
        },
    ))
}

/// Pair-wise solve: the base pose is copied from its targets and the
/// subsystems are solved in parallel, then merged in declaration order.
pub fn solve_pairwise(
    model: &KinematicModel,
    subsystems: &[Subsystem],
    sample: &TargetSample,
    q_init: &Configuration,
    cfg: &InstantaneousConfig,
) -> Result<PairwiseResult, InstantaneousError> {
    cfg.validate(model)?;
    sample.check(model)?;
    if q_init.s.len() != model.dofs() {
        return Err(ModelError::DimensionMismatch {
            expected: model.dofs(),
            got: q_init.s.len(),
        }
        .into());
    }
    let base = model.base_link();
    let pi = model.position_targets().iter().position(|&l| l == base);
    let oi = model.orientation_targets().iter().position(|&l| l == base);
    let (Some(pi), Some(oi)) = (pi, oi) else {
        return Err(InstantaneousError::Decomposition(
            "the base link needs both a position and an orientation target".into(),
        ));
    };

    let solved: Vec<_> = subsystems
        .par_iter()
        .map(|sub| solve_subsystem(model, sub, sample, q_init, cfg))
        .collect::<Result<_, _>>()?;

    let mut q = Configuration {
        base_pos: sample.positions[pi],
        base_rot: sample.rotations[oi],
        s: q_init.s.clone(),
    };
    let mut reports = Vec::with_capacity(solved.len());
    for (sub, (x, report)) in subsystems.iter().zip(solved) {
        for (k, &j) in sub.joint_indices.iter().enumerate() {
            q.s[j] = x[k];
        }
        reports.push(report);
    }
    Ok(PairwiseResult { q, reports })
}
