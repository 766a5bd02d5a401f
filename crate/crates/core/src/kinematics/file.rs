//! JSON model documents.
//!
//! ```text
//! { "links": [{"name": "pelvis"}, {"name": "d0", "dummy": true}, ...],
//!   "joints": [{"name": "j0", "parent": "pelvis", "child": "d0",
//!               "axis": [0, 0, 1], "origin": {"xyz": [0, 0, 0.1], "rpy": [0, 0, 0]},
//!               "pos_limits": [-1.0, 1.0], "vel_limit": 8.0}, ...],
//!   "base_link": "pelvis",
//!   "position_targets": ["pelvis"],
//!   "orientation_targets": ["pelvis", ...],
//!   "constraints": {"A": [[...]], "b_q": [0.5, null], "b_nu": [null, 2.0]} }
//! ```
//!
//! Unknown keys are rejected. `null` bounds are unbounded.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{CoupledConstraint, Joint, KinematicModel, Link, ModelError};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    links: Vec<LinkDoc>,
    joints: Vec<JointDoc>,
    base_link: String,
    position_targets: Vec<String>,
    orientation_targets: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    constraints: Option<ConstraintsDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkDoc {
    name: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    dummy: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointDoc {
    name: String,
    parent: String,
    child: String,
    axis: [f64; 3],
    origin: OriginDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pos_limits: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vel_limit: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OriginDoc {
    xyz: [f64; 3],
    rpy: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstraintsDoc {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    b_q: Vec<Option<f64>>,
    b_nu: Vec<Option<f64>>,
}

/// Parses and validates a model document.
pub fn load_model(text: &str) -> Result<KinematicModel, ModelError> {
    let doc: ModelDoc = serde_json::from_str(text).map_err(|e| ModelError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    from_doc(doc)
}

pub fn load_model_file(path: impl AsRef<Path>) -> Result<KinematicModel, ModelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
    load_model(&text)
}

fn from_doc(doc: ModelDoc) -> Result<KinematicModel, ModelError> {
    let links: Vec<Link> = doc
        .links
        .into_iter()
        .map(|l| Link {
            name: l.name,
            is_dummy: l.dummy,
        })
        .collect();
    // Duplicates are reported by KinematicModel::new; the first occurrence
    // wins here.
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, l) in links.iter().enumerate() {
        index.entry(l.name.as_str()).or_insert(i);
    }
    let lookup = |name: &str, what: &'static str| {
        index.get(name).copied().ok_or_else(|| ModelError::Validation {
            rule: what,
            detail: name.to_owned(),
        })
    };

    let base = lookup(&doc.base_link, "unknown base link")?;
    let mut joints = Vec::with_capacity(doc.joints.len());
    for j in doc.joints {
        let parent = lookup(&j.parent, "unknown link")?;
        let child = lookup(&j.child, "unknown link")?;
        let joint = Joint::revolute(
            j.name,
            parent,
            child,
            Vector3::from(j.axis),
            Vector3::from(j.origin.xyz),
            Vector3::from(j.origin.rpy),
        )
        .with_limits(j.pos_limits.map(|[lo, hi]| (lo, hi)), j.vel_limit);
        joints.push(joint);
    }
    let position_targets = doc
        .position_targets
        .iter()
        .map(|n| lookup(n, "unknown target frame"))
        .collect::<Result<Vec<_>, _>>()?;
    let orientation_targets = doc
        .orientation_targets
        .iter()
        .map(|n| lookup(n, "unknown target frame"))
        .collect::<Result<Vec<_>, _>>()?;

    let coupled = match doc.constraints {
        None => Vec::new(),
        Some(c) => {
            if c.a.len() != c.b_q.len() || c.a.len() != c.b_nu.len() {
                return Err(ModelError::Validation {
                    rule: "constraint dimension",
                    detail: format!("A has {} rows, b_q {}, b_nu {}", c.a.len(), c.b_q.len(), c.b_nu.len()),
                });
            }
            c.a.into_iter()
                .zip(c.b_q)
                .zip(c.b_nu)
                .map(|((row, b_q), b_nu)| CoupledConstraint { row, b_q, b_nu })
                .collect()
        }
    };

    KinematicModel::new(links, joints, base, position_targets, orientation_targets, coupled)
}

/// Serializes a model to the document format; `load_model` inverts it.
pub fn serialize_model(model: &KinematicModel) -> String {
    let name = |i: usize| model.links()[i].name.clone();
    let doc = ModelDoc {
        links: model
            .links()
            .iter()
            .map(|l| LinkDoc {
                name: l.name.clone(),
                dummy: l.is_dummy,
            })
            .collect(),
        joints: model
            .joints()
            .iter()
            .map(|j| JointDoc {
                name: j.name.clone(),
                parent: name(j.parent_link),
                child: name(j.child_link),
                axis: j.axis.into(),
                origin: OriginDoc {
                    xyz: j.origin_xyz.into(),
                    rpy: j.origin_rpy.into(),
                },
                pos_limits: j.pos_limits.map(|(lo, hi)| [lo, hi]),
                vel_limit: j.vel_limit,
            })
            .collect(),
        base_link: name(model.base_link()),
        position_targets: model.position_targets().iter().map(|&i| name(i)).collect(),
        orientation_targets: model.orientation_targets().iter().map(|&i| name(i)).collect(),
        constraints: if model.coupled_constraints().is_empty() {
            None
        } else {
            let c = model.coupled_constraints();
            Some(ConstraintsDoc {
                a: c.iter().map(|r| r.row.clone()).collect(),
                b_q: c.iter().map(|r| r.b_q).collect(),
                b_nu: c.iter().map(|r| r.b_nu).collect(),
            })
        },
    };
    serde_json::to_string_pretty(&doc).expect("model documents always serialize")
}
