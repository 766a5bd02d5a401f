//! Floating-base kinematic trees.
//!
//! A [`KinematicModel`] is an immutable tree of links connected by
//! single-DoF revolute joints, rooted at a free-floating base link. The
//! configuration is `q = (p_B, R_B, s)` and the velocity
//! `ν = (ṗ_B, ω_B, ṡ)`, with linear velocities of frame origins and angular
//! velocities expressed in the inertial frame. Every Jacobian in this crate
//! uses that column ordering.

mod file;
mod human;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use thiserror::Error;

use crate::so3::{self, Rotation};

pub use file::{load_model, load_model_file, serialize_model};
pub use human::{generate_human_chain, HumanDofs, HUMAN_SEGMENTS};

/// Number of base coordinates in `ν`: linear then angular velocity.
pub const BASE_DOFS: usize = 6;

const AXIS_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("validation failed ({rule}): {detail}")]
    Validation { rule: &'static str, detail: String },
    #[error("unknown frame `{0}`")]
    UnknownFrame(String),
    #[error("configuration has {got} joints, model has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("i/o error: {0}")]
    Io(String),
}

impl ModelError {
    fn validation(rule: &'static str, detail: impl Into<String>) -> Self {
        ModelError::Validation {
            rule,
            detail: detail.into(),
        }
    }

    /// Name of the violated rule for validation errors.
    pub fn rule(&self) -> Option<&'static str> {
        match self {
            ModelError::Validation { rule, .. } => Some(rule),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub name: String,
    /// Zero-dimension connector used to chain the revolute joints of a
    /// multi-DoF anatomical joint.
    pub is_dummy: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    /// Unit rotation axis in the joint frame.
    pub axis: Vector3<f64>,
    pub parent_link: usize,
    pub child_link: usize,
    /// Joint frame origin in the parent link frame (m).
    pub origin_xyz: Vector3<f64>,
    /// Joint frame orientation w.r.t. the parent link as roll-pitch-yaw (rad).
    pub origin_rpy: Vector3<f64>,
    pub origin_rotation: Rotation,
    /// `(lower, upper)` position limits (rad); `None` when unbounded.
    pub pos_limits: Option<(f64, f64)>,
    /// Symmetric velocity limit (rad/s); `None` when unbounded.
    pub vel_limit: Option<f64>,
}

impl Joint {
    pub fn revolute(
        name: impl Into<String>,
        parent_link: usize,
        child_link: usize,
        axis: Vector3<f64>,
        origin_xyz: Vector3<f64>,
        origin_rpy: Vector3<f64>,
    ) -> Self {
        Self {
            name: name.into(),
            axis,
            parent_link,
            child_link,
            origin_xyz,
            origin_rpy,
            origin_rotation: Rotation::from_rpy(origin_rpy.x, origin_rpy.y, origin_rpy.z),
            pos_limits: None,
            vel_limit: None,
        }
    }

    pub fn with_limits(mut self, pos: Option<(f64, f64)>, vel: Option<f64>) -> Self {
        self.pos_limits = pos;
        self.vel_limit = vel;
        self
    }
}

/// A user-declared linear inequality `row · s ≤ b_q` over the joint vector,
/// with its velocity counterpart `row · ṡ ≤ b_nu`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledConstraint {
    pub row: Vec<f64>,
    pub b_q: Option<f64>,
    pub b_nu: Option<f64>,
}

/// The stacked joint constraint system `A s ≤ b^q`, `A ṡ ≤ b^ν`.
///
/// Rows come from bounded joints first (upper then lower limit for each
/// joint, in joint order) followed by the coupled rows. `None` marks an
/// unbounded entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub a: DMatrix<f64>,
    pub b_q: Vec<Option<f64>>,
    pub b_nu: Vec<Option<f64>>,
}

impl ConstraintSet {
    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.a.nrows() == 0
    }

    /// Largest violation `max_i (A_i s − b^q_i)` over bounded rows, or
    /// `-inf` when no row is bounded.
    pub fn max_violation(&self, s: &DVector<f64>) -> f64 {
        let as_ = &self.a * s;
        self.b_q
            .iter()
            .zip(as_.iter())
            .filter_map(|(b, v)| b.map(|b| v - b))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Model configuration `q = (p_B, R_B, s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    pub base_pos: Vector3<f64>,
    pub base_rot: Rotation,
    pub s: DVector<f64>,
}

impl Configuration {
    /// Identity base at the origin with all joints at zero.
    pub fn zero(n: usize) -> Self {
        Self {
            base_pos: Vector3::zeros(),
            base_rot: Rotation::identity(),
            s: DVector::zeros(n),
        }
    }
}

/// Model velocity `ν = (ṗ_B, ω_B, ṡ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity {
    pub base_lin: Vector3<f64>,
    pub base_ang: Vector3<f64>,
    pub s_dot: DVector<f64>,
}

impl Velocity {
    pub fn zero(n: usize) -> Self {
        Self {
            base_lin: Vector3::zeros(),
            base_ang: Vector3::zeros(),
            s_dot: DVector::zeros(n),
        }
    }

    /// Flattens to `(base_lin, base_ang, ṡ)`.
    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.s_dot.len();
        let mut v = DVector::zeros(n + BASE_DOFS);
        v.fixed_rows_mut::<3>(0).copy_from(&self.base_lin);
        v.fixed_rows_mut::<3>(3).copy_from(&self.base_ang);
        v.rows_mut(BASE_DOFS, n).copy_from(&self.s_dot);
        v
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        let n = v.len() - BASE_DOFS;
        Self {
            base_lin: v.fixed_rows::<3>(0).into_owned(),
            base_ang: v.fixed_rows::<3>(3).into_owned(),
            s_dot: v.rows(BASE_DOFS, n).into_owned(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.base_lin.iter().all(|x| x.is_finite())
            && self.base_ang.iter().all(|x| x.is_finite())
            && self.s_dot.iter().all(|x| x.is_finite())
    }
}

/// World poses of every link and joint frame for one configuration.
#[derive(Debug, Clone)]
pub struct LinkPoses {
    pub link_pos: Vec<Vector3<f64>>,
    pub link_rot: Vec<Matrix3<f64>>,
    pub joint_pos: Vec<Vector3<f64>>,
    pub joint_axis: Vec<Vector3<f64>>,
}

impl LinkPoses {
    pub fn new(model: &KinematicModel) -> Self {
        Self {
            link_pos: vec![Vector3::zeros(); model.links.len()],
            link_rot: vec![Matrix3::identity(); model.links.len()],
            joint_pos: vec![Vector3::zeros(); model.joints.len()],
            joint_axis: vec![Vector3::zeros(); model.joints.len()],
        }
    }

    pub fn rotation(&self, link: usize) -> Rotation {
        // Products of rotations and the (Baumgarte-maintained) base
        // orientation; orthonormal to the base's tolerance.
        Rotation::from_matrix_unchecked(self.link_rot[link])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicModel {
    links: Vec<Link>,
    joints: Vec<Joint>,
    base: usize,
    position_targets: Vec<usize>,
    orientation_targets: Vec<usize>,
    coupled: Vec<CoupledConstraint>,
    constraints: ConstraintSet,
    parent_joint: Vec<Option<usize>>,
    topo_order: Vec<usize>,
    link_path: Vec<Vec<usize>>,
}

impl KinematicModel {
    /// Builds and validates a model.
    pub fn new(
        links: Vec<Link>,
        joints: Vec<Joint>,
        base: usize,
        position_targets: Vec<usize>,
        orientation_targets: Vec<usize>,
        coupled: Vec<CoupledConstraint>,
    ) -> Result<Self, ModelError> {
        let nl = links.len();
        if base >= nl {
            return Err(ModelError::validation("unknown base link", format!("index {base}")));
        }
        let mut seen = std::collections::HashSet::new();
        for l in &links {
            if !seen.insert(l.name.as_str()) {
                return Err(ModelError::validation("duplicate link", l.name.clone()));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for j in &joints {
            if !seen.insert(j.name.as_str()) {
                return Err(ModelError::validation("duplicate joint", j.name.clone()));
            }
        }

        let mut parent_joint = vec![None; nl];
        for (ji, j) in joints.iter().enumerate() {
            if j.parent_link >= nl || j.child_link >= nl {
                return Err(ModelError::validation("unknown link", j.name.clone()));
            }
            if j.child_link == base {
                return Err(ModelError::validation(
                    "base has parent",
                    format!("joint {} has the base link as child", j.name),
                ));
            }
            if parent_joint[j.child_link].replace(ji).is_some() {
                return Err(ModelError::validation(
                    "multiple parents",
                    links[j.child_link].name.clone(),
                ));
            }
            if ((j.axis.norm() - 1.0).abs() > AXIS_TOL) || !j.axis.iter().all(|v| v.is_finite()) {
                return Err(ModelError::validation("non-unit axis", j.name.clone()));
            }
            let finite = j.origin_xyz.iter().chain(j.origin_rpy.iter()).all(|v| v.is_finite());
            if !finite {
                return Err(ModelError::validation("non-finite origin", j.name.clone()));
            }
            if let Some((lo, hi)) = j.pos_limits {
                if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                    return Err(ModelError::validation("invalid position limits", j.name.clone()));
                }
            }
            if let Some(v) = j.vel_limit {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(ModelError::validation("invalid velocity limit", j.name.clone()));
                }
            }
        }

        // Breadth-first traversal from the base; every link must be reached.
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); nl];
        for (ji, j) in joints.iter().enumerate() {
            children[j.parent_link].push(ji);
        }
        let mut topo_order = Vec::with_capacity(joints.len());
        let mut link_path: Vec<Vec<usize>> = vec![Vec::new(); nl];
        let mut reached = vec![false; nl];
        reached[base] = true;
        let mut queue = std::collections::VecDeque::from([base]);
        while let Some(l) = queue.pop_front() {
            for &ji in &children[l] {
                let c = joints[ji].child_link;
                if reached[c] {
                    return Err(ModelError::validation("cycle", links[c].name.clone()));
                }
                reached[c] = true;
                let mut path = link_path[l].clone();
                path.push(ji);
                link_path[c] = path;
                topo_order.push(ji);
                queue.push_back(c);
            }
        }
        if let Some(l) = reached.iter().position(|r| !r) {
            return Err(ModelError::validation(
                "disconnected link",
                format!(
                    "{} is not reachable from the base (cycle or missing joint)",
                    links[l].name
                ),
            ));
        }

        for &t in position_targets.iter().chain(orientation_targets.iter()) {
            if t >= nl {
                return Err(ModelError::validation("unknown target frame", format!("index {t}")));
            }
        }

        let n = joints.len();
        for (i, c) in coupled.iter().enumerate() {
            if c.row.len() != n {
                return Err(ModelError::validation(
                    "constraint dimension",
                    format!("row {i} has {} entries, model has {n} joints", c.row.len()),
                ));
            }
            let finite = c.row.iter().all(|v| v.is_finite())
                && c.b_q.is_none_or(f64::is_finite)
                && c.b_nu.is_none_or(|v| v.is_finite() && v >= 0.0);
            if !finite {
                return Err(ModelError::validation("non-finite constraint", format!("row {i}")));
            }
        }
        let constraints = build_constraint_set(&joints, &coupled);

        Ok(Self {
            links,
            joints,
            base,
            position_targets,
            orientation_targets,
            coupled,
            constraints,
            parent_joint,
            topo_order,
            link_path,
        })
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    /// Number of joints `n`.
    pub fn dofs(&self) -> usize {
        self.joints.len()
    }

    /// Dimension of `ν`, `n + 6`.
    pub fn velocity_dim(&self) -> usize {
        self.joints.len() + BASE_DOFS
    }

    pub fn base_link(&self) -> usize {
        self.base
    }

    pub fn position_targets(&self) -> &[usize] {
        &self.position_targets
    }

    pub fn orientation_targets(&self) -> &[usize] {
        &self.orientation_targets
    }

    /// Rows of the stacked pose residual, `3(n_p + n_o)`.
    pub fn target_dim(&self) -> usize {
        3 * (self.position_targets.len() + self.orientation_targets.len())
    }

    pub fn coupled_constraints(&self) -> &[CoupledConstraint] {
        &self.coupled
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    /// Joint whose child is `link`, `None` for the base.
    pub fn parent_joint(&self, link: usize) -> Option<usize> {
        self.parent_joint[link]
    }

    /// Joints from the base to `link`, root first.
    pub fn path_to(&self, link: usize) -> &[usize] {
        &self.link_path[link]
    }

    pub fn physical_link_count(&self) -> usize {
        self.links.iter().filter(|l| !l.is_dummy).count()
    }

    pub fn link_index(&self, name: &str) -> Result<usize, ModelError> {
        self.links
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| ModelError::UnknownFrame(name.to_owned()))
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Copy of the model with every position/velocity limit and coupled
    /// constraint removed.
    pub fn without_limits(&self) -> KinematicModel {
        let joints = self.joints.iter().cloned().map(|j| j.with_limits(None, None)).collect();
        KinematicModel::new(
            self.links.clone(),
            joints,
            self.base,
            self.position_targets.clone(),
            self.orientation_targets.clone(),
            Vec::new(),
        )
        .expect("removing limits keeps a valid model")
    }

    /// Copy of the model with different target frame lists.
    pub fn with_targets(
        &self,
        position_targets: Vec<usize>,
        orientation_targets: Vec<usize>,
    ) -> Result<KinematicModel, ModelError> {
        KinematicModel::new(
            self.links.clone(),
            self.joints.clone(),
            self.base,
            position_targets,
            orientation_targets,
            self.coupled.clone(),
        )
    }

    fn check_config(&self, q: &Configuration) -> Result<(), ModelError> {
        if q.s.len() != self.joints.len() {
            return Err(ModelError::DimensionMismatch {
                expected: self.joints.len(),
                got: q.s.len(),
            });
        }
        Ok(())
    }

    /// World poses of all links in one pass over the tree.
    pub fn link_poses(&self, q: &Configuration) -> Result<LinkPoses, ModelError> {
        let mut poses = LinkPoses::new(self);
        self.link_poses_into(q, &mut poses)?;
        Ok(poses)
    }

    pub fn link_poses_into(&self, q: &Configuration, out: &mut LinkPoses) -> Result<(), ModelError> {
        self.check_config(q)?;
        out.link_pos[self.base] = q.base_pos;
        out.link_rot[self.base] = *q.base_rot.matrix();
        for &ji in &self.topo_order {
            let j = &self.joints[ji];
            let parent_rot = out.link_rot[j.parent_link];
            let parent_pos = out.link_pos[j.parent_link];
            let frame_rot = parent_rot * j.origin_rotation.matrix();
            let frame_pos = parent_pos + parent_rot * j.origin_xyz;
            out.joint_pos[ji] = frame_pos;
            out.joint_axis[ji] = frame_rot * j.axis;
            out.link_pos[j.child_link] = frame_pos;
            out.link_rot[j.child_link] = frame_rot * axis_rotation(&j.axis, q.s[ji]);
        }
        Ok(())
    }

    /// Pose of the named frame w.r.t. the inertial frame.
    pub fn forward_kinematics(&self, q: &Configuration, frame: &str) -> Result<(Vector3<f64>, Rotation), ModelError> {
        let link = self.link_index(frame)?;
        let poses = self.link_poses(q)?;
        Ok((poses.link_pos[link], poses.rotation(link)))
    }

    /// The 6×(n+6) Jacobian of the named frame: linear rows then angular rows.
    pub fn jacobian(&self, q: &Configuration, frame: &str) -> Result<DMatrix<f64>, ModelError> {
        let link = self.link_index(frame)?;
        let poses = self.link_poses(q)?;
        let mut jac = DMatrix::zeros(6, self.velocity_dim());
        self.write_linear_jacobian(&poses, link, &mut jac, 0);
        self.write_angular_jacobian(&poses, link, &mut jac, 3);
        Ok(jac)
    }

    fn write_linear_jacobian(&self, poses: &LinkPoses, link: usize, jac: &mut DMatrix<f64>, row: usize) {
        let p = poses.link_pos[link];
        let rel = p - poses.link_pos[self.base];
        for i in 0..3 {
            jac[(row + i, i)] = 1.0;
        }
        let s = -so3::skew(&rel);
        for i in 0..3 {
            for k in 0..3 {
                jac[(row + i, 3 + k)] = s[(i, k)];
            }
        }
        for &ji in &self.link_path[link] {
            let col = poses.joint_axis[ji].cross(&(p - poses.joint_pos[ji]));
            for i in 0..3 {
                jac[(row + i, BASE_DOFS + ji)] = col[i];
            }
        }
    }

    fn write_angular_jacobian(&self, poses: &LinkPoses, link: usize, jac: &mut DMatrix<f64>, row: usize) {
        for i in 0..3 {
            jac[(row + i, 3 + i)] = 1.0;
        }
        for &ji in &self.link_path[link] {
            let a = poses.joint_axis[ji];
            for i in 0..3 {
                jac[(row + i, BASE_DOFS + ji)] = a[i];
            }
        }
    }

    /// Stacked poses `x̂`: positions of the position targets, then
    /// rotations of the orientation targets.
    pub fn stacked_forward_kinematics(&self, q: &Configuration) -> Result<StackedPose, ModelError> {
        let poses = self.link_poses(q)?;
        Ok(self.stacked_pose_from(&poses))
    }

    pub fn stacked_pose_from(&self, poses: &LinkPoses) -> StackedPose {
        StackedPose {
            positions: self.position_targets.iter().map(|&l| poses.link_pos[l]).collect(),
            rotations: self.orientation_targets.iter().map(|&l| poses.rotation(l)).collect(),
        }
    }

    /// Stacked Jacobian, `(3n_p + 3n_o) × (n+6)`.
    pub fn stacked_jacobian(&self, q: &Configuration) -> Result<DMatrix<f64>, ModelError> {
        let poses = self.link_poses(q)?;
        let mut jac = DMatrix::zeros(self.target_dim(), self.velocity_dim());
        self.stacked_jacobian_into(&poses, &mut jac);
        Ok(jac)
    }

    /// Writes the stacked Jacobian into a preallocated matrix.
    pub fn stacked_jacobian_into(&self, poses: &LinkPoses, jac: &mut DMatrix<f64>) {
        debug_assert_eq!(jac.shape(), (self.target_dim(), self.velocity_dim()));
        jac.fill(0.0);
        let mut row = 0;
        for &l in &self.position_targets {
            self.write_linear_jacobian(poses, l, jac, row);
            row += 3;
        }
        for &l in &self.orientation_targets {
            self.write_angular_jacobian(poses, l, jac, row);
            row += 3;
        }
    }
}

/// Stacked target-frame poses in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedPose {
    pub positions: Vec<Vector3<f64>>,
    pub rotations: Vec<Rotation>,
}

/// Rotation of `angle` about the unit vector `axis`.
pub(crate) fn axis_rotation(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    let k = so3::skew(axis);
    Matrix3::identity() + k * s + k * k * (1.0 - c)
}

fn build_constraint_set(joints: &[Joint], coupled: &[CoupledConstraint]) -> ConstraintSet {
    let n = joints.len();
    let mut rows: Vec<(Vec<f64>, Option<f64>, Option<f64>)> = Vec::new();
    for (ji, j) in joints.iter().enumerate() {
        if j.pos_limits.is_none() && j.vel_limit.is_none() {
            continue;
        }
        let mut up = vec![0.0; n];
        up[ji] = 1.0;
        let mut down = vec![0.0; n];
        down[ji] = -1.0;
        let (upper, lower) = match j.pos_limits {
            Some((lo, hi)) => (Some(hi), Some(-lo)),
            None => (None, None),
        };
        rows.push((up, upper, j.vel_limit));
        rows.push((down, lower, j.vel_limit));
    }
    for c in coupled {
        rows.push((c.row.clone(), c.b_q, c.b_nu));
    }
    let m = rows.len();
    let mut a = DMatrix::zeros(m, n);
    let mut b_q = Vec::with_capacity(m);
    let mut b_nu = Vec::with_capacity(m);
    for (i, (row, bq, bn)) in rows.into_iter().enumerate() {
        for (k, v) in row.into_iter().enumerate() {
            a[(i, k)] = v;
        }
        b_q.push(bq);
        b_nu.push(bn);
    }
    ConstraintSet { a, b_q, b_nu }
}
