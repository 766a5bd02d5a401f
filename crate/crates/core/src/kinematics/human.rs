//! Procedural human chains with 23 physical segments.
//!
//! Segment lengths follow standard anthropometric proportions for a 1.75 m
//! stature, jittered by up to ±3% from the seed. Multi-DoF anatomical joints
//! are chains of revolute joints connected by zero-length dummy links. Link
//! frames use x forward, y left, z up; the zero configuration stands upright
//! with the arms hanging down.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CoupledConstraint, Joint, KinematicModel, Link};

/// The 23 physical segments, base first.
pub const HUMAN_SEGMENTS: [&str; 23] = [
    "Pelvis",
    "L5",
    "L3",
    "T12",
    "T8",
    "Neck",
    "Head",
    "RightShoulder",
    "RightUpperArm",
    "RightForeArm",
    "RightHand",
    "LeftShoulder",
    "LeftUpperArm",
    "LeftForeArm",
    "LeftHand",
    "RightUpperLeg",
    "RightLowerLeg",
    "RightFoot",
    "RightToe",
    "LeftUpperLeg",
    "LeftLowerLeg",
    "LeftFoot",
    "LeftToe",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HumanDofs {
    /// Spherical joints everywhere, no limits.
    D66,
    /// Anatomically reduced joints with position and velocity limits.
    D48,
}

impl HumanDofs {
    pub fn from_count(n: usize) -> Option<Self> {
        match n {
            66 => Some(HumanDofs::D66),
            48 => Some(HumanDofs::D48),
            _ => None,
        }
    }

    pub fn count(self) -> usize {
        match self {
            HumanDofs::D66 => 66,
            HumanDofs::D48 => 48,
        }
    }
}

/// Joint velocity limit of the bounded variant (rad/s).
pub const HUMAN48_VEL_LIMIT: f64 = 8.0;

#[derive(Clone, Copy)]
enum Ax {
    X,
    Y,
    Z,
}

impl Ax {
    fn vector(self) -> Vector3<f64> {
        match self {
            Ax::X => Vector3::x(),
            Ax::Y => Vector3::y(),
            Ax::Z => Vector3::z(),
        }
    }

    fn suffix(self) -> &'static str {
        match self {
            Ax::X => "rotx",
            Ax::Y => "roty",
            Ax::Z => "rotz",
        }
    }
}

struct Connection {
    parent: &'static str,
    child: &'static str,
    offset: [f64; 3],
    /// Reduced joint with limits, used by the 48-DoF variant.
    reduced: &'static [(Ax, f64, f64)],
}

const SPHERICAL: [Ax; 3] = [Ax::Z, Ax::X, Ax::Y];

macro_rules! conn {
    ($p:expr, $c:expr, [$x:expr, $y:expr, $z:expr], $r:expr) => {
        Connection {
            parent: $p,
            child: $c,
            offset: [$x, $y, $z],
            reduced: $r,
        }
    };
}

const CONNECTIONS: [Connection; 22] = [
    conn!(
        "Pelvis",
        "L5",
        [0.0, 0.0, 0.10],
        &[(Ax::Z, -0.5, 0.5), (Ax::X, -0.4, 0.4), (Ax::Y, -0.5, 0.8)]
    ),
    conn!(
        "L5",
        "L3",
        [0.0, 0.0, 0.10],
        &[(Ax::Z, -0.3, 0.3), (Ax::X, -0.3, 0.3), (Ax::Y, -0.3, 0.5)]
    ),
    conn!(
        "L3",
        "T12",
        [0.0, 0.0, 0.10],
        &[(Ax::Z, -0.3, 0.3), (Ax::X, -0.3, 0.3), (Ax::Y, -0.3, 0.5)]
    ),
    conn!("T12", "T8", [0.0, 0.0, 0.10], &[(Ax::X, -0.3, 0.3), (Ax::Y, -0.3, 0.5)]),
    conn!(
        "T8",
        "Neck",
        [0.0, 0.0, 0.20],
        &[(Ax::Z, -0.8, 0.8), (Ax::X, -0.6, 0.6), (Ax::Y, -0.6, 0.8)]
    ),
    conn!(
        "Neck",
        "Head",
        [0.0, 0.0, 0.10],
        &[(Ax::X, -0.4, 0.4), (Ax::Y, -0.4, 0.6)]
    ),
    conn!(
        "T8",
        "RightShoulder",
        [0.0, -0.03, 0.15],
        &[(Ax::Z, -0.3, 0.3), (Ax::X, -0.3, 0.3)]
    ),
    conn!(
        "RightShoulder",
        "RightUpperArm",
        [0.0, -0.15, 0.0],
        &[(Ax::Z, -1.6, 1.6), (Ax::X, -1.6, 1.6), (Ax::Y, -2.5, 1.0)]
    ),
    conn!(
        "RightUpperArm",
        "RightForeArm",
        [0.0, 0.0, -0.30],
        &[(Ax::Y, -2.4, 0.1), (Ax::Z, -1.4, 1.4)]
    ),
    conn!(
        "RightForeArm",
        "RightHand",
        [0.0, 0.0, -0.25],
        &[(Ax::X, -0.5, 0.5), (Ax::Y, -1.0, 1.0)]
    ),
    conn!(
        "T8",
        "LeftShoulder",
        [0.0, 0.03, 0.15],
        &[(Ax::Z, -0.3, 0.3), (Ax::X, -0.3, 0.3)]
    ),
    conn!(
        "LeftShoulder",
        "LeftUpperArm",
        [0.0, 0.15, 0.0],
        &[(Ax::Z, -1.6, 1.6), (Ax::X, -1.6, 1.6), (Ax::Y, -2.5, 1.0)]
    ),
    conn!(
        "LeftUpperArm",
        "LeftForeArm",
        [0.0, 0.0, -0.30],
        &[(Ax::Y, -2.4, 0.1), (Ax::Z, -1.4, 1.4)]
    ),
    conn!(
        "LeftForeArm",
        "LeftHand",
        [0.0, 0.0, -0.25],
        &[(Ax::X, -0.5, 0.5), (Ax::Y, -1.0, 1.0)]
    ),
    conn!(
        "Pelvis",
        "RightUpperLeg",
        [0.0, -0.09, -0.05],
        &[(Ax::Z, -0.7, 0.7), (Ax::X, -0.7, 0.7), (Ax::Y, -2.0, 0.5)]
    ),
    conn!(
        "RightUpperLeg",
        "RightLowerLeg",
        [0.0, 0.0, -0.43],
        &[(Ax::Y, -0.1, 2.3)]
    ),
    conn!(
        "RightLowerLeg",
        "RightFoot",
        [0.0, 0.0, -0.43],
        &[(Ax::X, -0.4, 0.4), (Ax::Y, -0.8, 0.5)]
    ),
    conn!("RightFoot", "RightToe", [0.15, 0.0, -0.07], &[(Ax::Y, -0.5, 0.8)]),
    conn!(
        "Pelvis",
        "LeftUpperLeg",
        [0.0, 0.09, -0.05],
        &[(Ax::Z, -0.7, 0.7), (Ax::X, -0.7, 0.7), (Ax::Y, -2.0, 0.5)]
    ),
    conn!("LeftUpperLeg", "LeftLowerLeg", [0.0, 0.0, -0.43], &[(Ax::Y, -0.1, 2.3)]),
    conn!(
        "LeftLowerLeg",
        "LeftFoot",
        [0.0, 0.0, -0.43],
        &[(Ax::X, -0.4, 0.4), (Ax::Y, -0.8, 0.5)]
    ),
    conn!("LeftFoot", "LeftToe", [0.15, 0.0, -0.07], &[(Ax::Y, -0.5, 0.8)]),
];

/// Builds the 66- or 48-DoF human chain. Deterministic in `seed`.
///
/// The 48-DoF variant also carries one coupled row limiting the sum of the
/// first two right-shoulder joint angles.
pub fn generate_human_chain(dofs: HumanDofs, seed: u64) -> KinematicModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut links = vec![Link {
        name: HUMAN_SEGMENTS[0].to_owned(),
        is_dummy: false,
    }];
    let mut joints = Vec::new();
    let mut index = std::collections::HashMap::from([(HUMAN_SEGMENTS[0], 0usize)]);

    for c in &CONNECTIONS {
        let scale = 1.0 + rng.gen_range(-0.03..=0.03);
        let offset = Vector3::from(c.offset) * scale;
        let axes: Vec<(Ax, Option<(f64, f64)>)> = match dofs {
            HumanDofs::D66 => SPHERICAL.iter().map(|&a| (a, None)).collect(),
            HumanDofs::D48 => c.reduced.iter().map(|&(a, lo, hi)| (a, Some((lo, hi)))).collect(),
        };
        let mut parent = index[c.parent];
        for (k, &(ax, limits)) in axes.iter().enumerate() {
            let last = k + 1 == axes.len();
            let child_name = if last {
                c.child.to_owned()
            } else {
                format!("{}_dummy{}", c.child, k + 1)
            };
            links.push(Link {
                name: child_name,
                is_dummy: !last,
            });
            let child = links.len() - 1;
            let origin = if k == 0 { offset } else { Vector3::zeros() };
            let vel = limits.map(|_| HUMAN48_VEL_LIMIT);
            joints.push(
                Joint::revolute(
                    format!("{}_{}", c.child, ax.suffix()),
                    parent,
                    child,
                    ax.vector(),
                    origin,
                    Vector3::zeros(),
                )
                .with_limits(limits, vel),
            );
            parent = child;
        }
        index.insert(c.child, parent);
    }

    let targets: Vec<usize> = HUMAN_SEGMENTS.iter().map(|s| index[s]).collect();
    let coupled = match dofs {
        HumanDofs::D66 => Vec::new(),
        HumanDofs::D48 => {
            let mut row = vec![0.0; joints.len()];
            let first = joints
                .iter()
                .position(|j| j.name.starts_with("RightUpperArm_"))
                .expect("shoulder joints exist");
            row[first] = 1.0;
            row[first + 1] = 1.0;
            vec![CoupledConstraint {
                row,
                b_q: Some(2.4),
                b_nu: Some(HUMAN48_VEL_LIMIT),
            }]
        }
    };

    KinematicModel::new(links, joints, 0, vec![0], targets, coupled).expect("generated human chain is valid")
}
