//! Tracking-error metrics and robust summary statistics.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dynamical::TargetSample;
use crate::kinematics::{Configuration, KinematicModel, Velocity};
use crate::so3::Rotation;

use super::HarnessError;

/// Seconds dropped from the start of a run before computing statistics.
pub const DEFAULT_TRANSIENT_DISCARD: f64 = 2.0;

/// `1 − cos θ` between two rotations, i.e. `tr(I − R̂ᵀR)/2`.
pub fn trace_error(estimate: &Rotation, target: &Rotation) -> f64 {
    let tr = (estimate.matrix().transpose() * target.matrix()).trace();
    (3.0 - tr) / 2.0
}

/// Mean of [`trace_error`] over paired frames; 0 with no frames. Ranges over
/// `[0, 2]`.
pub fn mnte_from(estimates: &[Rotation], targets: &[Rotation]) -> f64 {
    if estimates.is_empty() {
        return 0.0;
    }
    let sum: f64 = estimates.iter().zip(targets).map(|(e, t)| trace_error(e, t)).sum();
    sum / estimates.len() as f64
}

/// `sqrt((1/n_o) Σ ‖ω − ω̂‖² / 3)`; 0 with no frames.
pub fn rmse_from(estimates: &[Vector3<f64>], targets: &[Vector3<f64>]) -> f64 {
    if estimates.is_empty() {
        return 0.0;
    }
    let sum: f64 = estimates
        .iter()
        .zip(targets)
        .map(|(e, t)| (t - e).norm_squared() / 3.0)
        .sum();
    (sum / estimates.len() as f64).sqrt()
}

/// Mean normalized trace error of the orientation targets at `q`.
pub fn mnte(model: &KinematicModel, q: &Configuration, sample: &TargetSample) -> Result<f64, HarnessError> {
    check(model, sample)?;
    let x = model.stacked_forward_kinematics(q)?;
    Ok(mnte_from(&x.rotations, &sample.rotations))
}

/// Angular-velocity RMSE of the orientation targets, with `ω̂ = J^a(q) ν`.
pub fn rmse_angvel(
    model: &KinematicModel,
    q: &Configuration,
    nu: &Velocity,
    sample: &TargetSample,
) -> Result<f64, HarnessError> {
    check(model, sample)?;
    Ok(rmse_from(
        &estimated_angular_velocities(model, q, nu)?,
        &sample.ang_vels,
    ))
}

/// Both metrics from one kinematics pass.
pub fn sample_metrics(
    model: &KinematicModel,
    q: &Configuration,
    nu: &Velocity,
    sample: &TargetSample,
) -> Result<(f64, f64), HarnessError> {
    check(model, sample)?;
    let poses = model.link_poses(q)?;
    let x = model.stacked_pose_from(&poses);
    let w = angular_rows(model, &poses, nu);
    Ok((
        mnte_from(&x.rotations, &sample.rotations),
        rmse_from(&w, &sample.ang_vels),
    ))
}

fn check(model: &KinematicModel, sample: &TargetSample) -> Result<(), HarnessError> {
    sample
        .check(model)
        .map_err(|e| HarnessError::SchemaMismatch(e.to_string()))
}

fn estimated_angular_velocities(
    model: &KinematicModel,
    q: &Configuration,
    nu: &Velocity,
) -> Result<Vec<Vector3<f64>>, HarnessError> {
    let poses = model.link_poses(q)?;
    Ok(angular_rows(model, &poses, nu))
}

fn angular_rows(model: &KinematicModel, poses: &crate::kinematics::LinkPoses, nu: &Velocity) -> Vec<Vector3<f64>> {
    // ω̂ of a frame is the base rate plus the rates of the joints on its path.
    model
        .orientation_targets()
        .iter()
        .map(|&l| {
            model
                .path_to(l)
                .iter()
                .fold(nu.base_ang, |w, &j| w + poses.joint_axis[j] * nu.s_dot[j])
        })
        .collect()
}

/// Distribution summary of one series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

impl SeriesStats {
    /// Statistics of `values`; every field is NaN for an empty series.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                count: 0,
                mean: f64::NAN,
                median: f64::NAN,
                p95: f64::NAN,
                q1: f64::NAN,
                q3: f64::NAN,
                min: f64::NAN,
                max: f64::NAN,
            };
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            count: values.len(),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            median: percentile_sorted(&sorted, 50.0),
            p95: percentile_sorted(&sorted, 95.0),
            q1: percentile_sorted(&sorted, 25.0),
            q3: percentile_sorted(&sorted, 75.0),
            min: sorted[0],
            max: sorted[sorted.len() - 1],
        }
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Percentile of sorted data with linear interpolation between closest
/// ranks.
pub fn percentile_sorted(sorted: &[f64], pct: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let rank = pct / 100.0 * (n - 1) as f64;
            let lo = rank.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let frac = rank - lo as f64;
            sorted[lo] + (sorted[hi] - sorted[lo]) * frac
        }
    }
}

/// Per-step metric series of one run plus their steady-state statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub times: Vec<f64>,
    pub mnte: Vec<f64>,
    pub rmse_angvel: Vec<f64>,
    /// Seconds per solve call.
    pub step_time: Vec<f64>,
    pub transient_discard: f64,
    pub mnte_stats: SeriesStats,
    pub rmse_stats: SeriesStats,
    pub time_stats: SeriesStats,
}

impl MetricsSummary {
    pub fn new(
        times: Vec<f64>,
        mnte: Vec<f64>,
        rmse_angvel: Vec<f64>,
        step_time: Vec<f64>,
        transient_discard: f64,
    ) -> Self {
        assert!(
            times.len() == mnte.len() && mnte.len() == rmse_angvel.len() && mnte.len() == step_time.len(),
            "metric series lengths differ"
        );
        let from = steady_state_start(&times, transient_discard);
        Self {
            mnte_stats: SeriesStats::of(&mnte[from..]),
            rmse_stats: SeriesStats::of(&rmse_angvel[from..]),
            time_stats: SeriesStats::of(&step_time[from..]),
            times,
            mnte,
            rmse_angvel,
            step_time,
            transient_discard,
        }
    }

    /// Index of the first sample inside the steady-state window.
    pub fn steady_state_start(&self) -> usize {
        steady_state_start(&self.times, self.transient_discard)
    }
}

/// First index whose time is at least `discard` seconds after the first
/// sample.
pub fn steady_state_start(times: &[f64], discard: f64) -> usize {
    let Some(&t0) = times.first() else { return 0 };
    times
        .iter()
        .position(|&t| t - t0 >= discard - 1e-9)
        .unwrap_or(times.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_3;

    #[test]
    fn trace_error_examples() {
        let i = Rotation::identity();
        assert_eq!(trace_error(&i, &i), 0.0);
        assert_relative_eq!(trace_error(&i, &Rotation::rot_x(FRAC_PI_3)), 0.5, epsilon = 1e-15);
        assert_relative_eq!(
            trace_error(&i, &Rotation::rot_y(std::f64::consts::FRAC_PI_2)),
            1.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn rmse_examples() {
        let z = [Vector3::zeros()];
        assert_eq!(rmse_from(&z, &z), 0.0);
        assert_relative_eq!(rmse_from(&z, &[Vector3::new(1.0, 1.0, 1.0)]), 1.0);
        assert_relative_eq!(rmse_from(&z, &[Vector3::new(2.0, 0.0, 0.0)]), (4.0f64 / 3.0).sqrt());
    }

    #[test]
    fn percentiles() {
        let s = SeriesStats::of(&[5.0, 1.0, 3.0, 2.0, 4.0]);
        assert_eq!(s.median, 3.0);
        assert_eq!(s.q1, 2.0);
        assert_eq!(s.q3, 4.0);
        assert_relative_eq!(s.p95, 4.8);
        assert_eq!(s.iqr(), 2.0);
        assert!(SeriesStats::of(&[]).median.is_nan());
    }

    #[test]
    fn transient_window() {
        let times: Vec<f64> = (0..500).map(|k| 1.0 + k as f64 * 0.01).collect();
        assert_eq!(steady_state_start(&times, 2.0), 200);
        assert_eq!(steady_state_start(&times, 0.0), 0);
        assert_eq!(steady_state_start(&times, 10.0), 500);
    }
}
