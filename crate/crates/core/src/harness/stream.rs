//! Newline-delimited JSON target streams, one sample per line:
//!
//! ```text
//! {"t": 0.01, "p": [[x, y, z], …], "R": [[r00, r01, …, r22], …], "v": [[…], …], "w": [[…], …]}
//! ```
//!
//! Rotations are row-major. Floats are written in shortest round-trip form,
//! so saving and loading reproduces every bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamical::TargetSample;
use crate::kinematics::KinematicModel;
use crate::so3::Rotation;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("stream does not match the model: {0}")]
    SchemaMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    t: f64,
    p: Vec<[f64; 3]>,
    #[serde(rename = "R")]
    r: Vec<[f64; 9]>,
    v: Vec<[f64; 3]>,
    w: Vec<[f64; 3]>,
}

fn to_record(s: &TargetSample) -> Record {
    Record {
        t: s.t,
        p: s.positions.iter().map(|p| (*p).into()).collect(),
        r: s.rotations
            .iter()
            .map(|r| {
                let m = r.matrix();
                std::array::from_fn(|k| m[(k / 3, k % 3)])
            })
            .collect(),
        v: s.lin_vels.iter().map(|v| (*v).into()).collect(),
        w: s.ang_vels.iter().map(|w| (*w).into()).collect(),
    }
}

fn from_record(r: Record, line: usize) -> Result<TargetSample, StreamError> {
    let err = |message: String| StreamError::Parse { line, message };
    if r.p.len() != r.v.len() {
        return Err(err(format!(
            "{} positions but {} linear velocities",
            r.p.len(),
            r.v.len()
        )));
    }
    if r.r.len() != r.w.len() {
        return Err(err(format!(
            "{} rotations but {} angular velocities",
            r.r.len(),
            r.w.len()
        )));
    }
    let rotations =
        r.r.iter()
            .enumerate()
            .map(|(i, m)| Rotation::new(Matrix3::from_row_slice(m)).map_err(|e| err(format!("rotation {i}: {e}"))))
            .collect::<Result<_, _>>()?;
    Ok(TargetSample {
        t: r.t,
        positions: r.p.into_iter().map(Vector3::from).collect(),
        rotations,
        lin_vels: r.v.into_iter().map(Vector3::from).collect(),
        ang_vels: r.w.into_iter().map(Vector3::from).collect(),
    })
}

pub fn write_stream(mut out: impl Write, samples: &[TargetSample]) -> Result<(), StreamError> {
    for s in samples {
        serde_json::to_writer(&mut out, &to_record(s)).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_stream(path: impl AsRef<Path>, samples: &[TargetSample]) -> Result<(), StreamError> {
    write_stream(BufWriter::new(File::create(path)?), samples)
}

/// Reads a stream; blank lines are skipped. Errors carry the 1-based line.
pub fn read_stream(input: impl Read) -> Result<Vec<TargetSample>, StreamError> {
    let mut samples = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line_no = i + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&text).map_err(|e| StreamError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        samples.push(from_record(rec, line_no)?);
    }
    Ok(samples)
}

pub fn load_stream(path: impl AsRef<Path>) -> Result<Vec<TargetSample>, StreamError> {
    read_stream(File::open(path)?)
}

/// Checks every sample's target counts against the model.
pub fn check_stream(model: &KinematicModel, samples: &[TargetSample]) -> Result<(), StreamError> {
    let np = model.position_targets().len();
    let no = model.orientation_targets().len();
    for (k, s) in samples.iter().enumerate() {
        if s.positions.len() != np || s.rotations.len() != no {
            return Err(StreamError::SchemaMismatch(format!(
                "sample {k} has {} positions and {} rotations; the model expects {np} position targets and {no} orientation targets",
                s.positions.len(),
                s.rotations.len()
            )));
        }
    }
    Ok(())
}
