//! Synthetic ground-truth motion and the target streams it produces.
//!
//! Joints follow band-limited sums of sinusoids around a center inside
//! their limits; the base drifts along a smooth curve. Samples are the exact
//! forward kinematics and `J(q)·ν` of the ground truth, so a perfect tracker
//! has zero error.

use std::f64::consts::TAU;

use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::dynamical::TargetSample;
use crate::kinematics::{Configuration, KinematicModel, Velocity};
use crate::so3::Rotation;

/// Fraction of each joint range kept clear at both ends.
pub const LIMIT_MARGIN: f64 = 0.05;
const BASE_HEIGHT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    /// A fixed random pose held for the whole duration.
    StaticPose,
    /// One sinusoid per coordinate.
    Sinusoidal,
    /// A sum of several sinusoids per coordinate.
    RandomSmooth,
}

/// Optional zero-mean Gaussian noise added to the samples (not to the
/// ground truth).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default)]
    pub position_std: f64,
    #[serde(default)]
    pub rotation_std: f64,
    #[serde(default)]
    pub velocity_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    /// Seconds.
    pub duration: f64,
    /// Seconds between samples.
    pub dt: f64,
    /// Largest joint excursion from its center (rad).
    pub amplitude: f64,
    /// Frequency band in Hz, `[low, high]`.
    pub freq_band: [f64; 2],
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
}

impl TrajectorySpec {
    pub fn static_pose(duration: f64, dt: f64, amplitude: f64, seed: u64) -> Self {
        Self {
            kind: TrajectoryKind::StaticPose,
            duration,
            dt,
            amplitude,
            freq_band: [0.0, 0.0],
            seed,
            noise: None,
        }
    }

    /// Walking-like motion, 0.5–1.5 Hz.
    pub fn walking(duration: f64, dt: f64, amplitude: f64, seed: u64) -> Self {
        Self {
            kind: TrajectoryKind::RandomSmooth,
            duration,
            dt,
            amplitude,
            freq_band: [0.5, 1.5],
            seed,
            noise: None,
        }
    }

    /// Running-like motion, 1.5–3 Hz.
    pub fn running(duration: f64, dt: f64, amplitude: f64, seed: u64) -> Self {
        Self {
            freq_band: [1.5, 3.0],
            ..Self::walking(duration, dt, amplitude, seed)
        }
    }

    /// Number of samples, at `t = 0, dt, …`.
    pub fn steps(&self) -> usize {
        (self.duration / self.dt + 1e-9).floor() as usize
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidSpec(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.duration >= self.dt && self.duration.is_finite()) {
            return bad(format!("duration {} must be at least dt {}", self.duration, self.dt));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return bad(format!("amplitude must be non-negative, got {}", self.amplitude));
        }
        let [lo, hi] = self.freq_band;
        if self.kind != TrajectoryKind::StaticPose && !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("invalid frequency band [{lo}, {hi}]"));
        }
        if let Some(n) = self.noise {
            if [n.position_std, n.rotation_std, n.velocity_std]
                .iter()
                .any(|v| !(*v >= 0.0 && v.is_finite()))
            {
                return bad("noise standard deviations must be non-negative".into());
            }
        }
        Ok(())
    }
}

/// Ground truth `(q_k, ν_k)` and the matching samples.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedStream {
    pub truth: Vec<(Configuration, Velocity)>,
    pub samples: Vec<TargetSample>,
}

/// `Σ a sin(2π f t + φ)` and its derivative.
#[derive(Debug, Clone)]
struct Wave {
    terms: Vec<(f64, f64, f64)>,
}

impl Wave {
    fn random(rng: &mut ChaCha8Rng, kind: TrajectoryKind, amplitude: f64, band: [f64; 2]) -> Self {
        let n = match kind {
            TrajectoryKind::StaticPose => return Self { terms: Vec::new() },
            TrajectoryKind::Sinusoidal => 1,
            TrajectoryKind::RandomSmooth => 4,
        };
        let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
        let total: f64 = weights.iter().sum();
        let terms = weights
            .into_iter()
            .map(|w| {
                let f = if band[1] > band[0] {
                    rng.gen_range(band[0]..=band[1])
                } else {
                    band[0]
                };
                (amplitude * w / total, f, rng.gen_range(0.0..TAU))
            })
            .collect();
        Self { terms }
    }

    fn value(&self, t: f64) -> f64 {
        self.terms.iter().map(|&(a, f, p)| a * (TAU * f * t + p).sin()).sum()
    }

    fn rate(&self, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|&(a, f, p)| a * TAU * f * (TAU * f * t + p).cos())
            .sum()
    }
}

/// Joint centers: 0 clamped into the range shrunk by the margin and the
/// amplitude.
fn joint_centers(model: &KinematicModel, amplitude: f64) -> Result<DVector<f64>, HarnessError> {
    let mut c = DVector::zeros(model.dofs());
    for (j, joint) in model.joints().iter().enumerate() {
        if let Some((lo, hi)) = joint.pos_limits {
            let m = LIMIT_MARGIN * (hi - lo);
            let (a, b) = (lo + m + amplitude, hi - m - amplitude);
            if a > b {
                return Err(HarnessError::SpecInfeasible(format!(
                    "amplitude {amplitude} does not fit joint '{}' with range [{lo}, {hi}]",
                    joint.name
                )));
            }
            c[j] = 0.0f64.clamp(a, b);
        }
    }
    Ok(c)
}

/// Generates ground truth and samples for `spec`. Deterministic in
/// `spec.seed`.
pub fn generate_stream(model: &KinematicModel, spec: &TrajectorySpec) -> Result<GeneratedStream, HarnessError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = model.dofs();
    let amp = spec.amplitude;
    let centers = joint_centers(model, amp)?;
    let is_static = spec.kind == TrajectoryKind::StaticPose;

    let static_s: DVector<f64> = DVector::from_fn(n, |j, _| centers[j] + rng.gen_range(-1.0..=1.0) * amp);
    let joint_waves: Vec<Wave> = (0..n)
        .map(|_| Wave::random(&mut rng, spec.kind, amp, spec.freq_band))
        .collect();
    let base_waves: Vec<Wave> = (0..3)
        .map(|_| Wave::random(&mut rng, spec.kind, 0.1 * amp, spec.freq_band))
        .collect();
    let yaw = Wave::random(&mut rng, spec.kind, amp, spec.freq_band);
    let roll = Wave::random(&mut rng, spec.kind, 0.5 * amp, spec.freq_band);
    let (yaw0, roll0) = (rng.gen_range(-1.0..=1.0) * amp, rng.gen_range(-1.0..=1.0) * 0.5 * amp);

    let steps = spec.steps();
    let mut truth = Vec::with_capacity(steps);
    let mut samples = Vec::with_capacity(steps);
    let c = model.constraints();
    for k in 0..steps {
        let t = k as f64 * spec.dt;
        let (q, nu) = if is_static {
            let q = Configuration {
                base_pos: Vector3::new(0.0, 0.0, BASE_HEIGHT),
                base_rot: Rotation::rot_z(yaw0) * Rotation::rot_x(roll0),
                s: static_s.clone(),
            };
            (q, Velocity::zero(n))
        } else {
            let (psi, phi) = (yaw.value(t), roll.value(t));
            let (psi_dot, phi_dot) = (yaw.rate(t), roll.rate(t));
            let rz = Rotation::rot_z(psi);
            let q = Configuration {
                base_pos: Vector3::new(
                    base_waves[0].value(t),
                    base_waves[1].value(t),
                    BASE_HEIGHT + base_waves[2].value(t),
                ),
                base_rot: rz * Rotation::rot_x(phi),
                s: DVector::from_fn(n, |j, _| centers[j] + joint_waves[j].value(t)),
            };
            let nu = Velocity {
                base_lin: Vector3::new(base_waves[0].rate(t), base_waves[1].rate(t), base_waves[2].rate(t)),
                base_ang: Vector3::z() * psi_dot + rz.apply(&Vector3::x()) * phi_dot,
                s_dot: DVector::from_fn(n, |j, _| joint_waves[j].rate(t)),
            };
            (q, nu)
        };
        if !c.is_empty() && c.max_violation(&q.s) > 0.0 {
            return Err(HarnessError::SpecInfeasible(format!(
                "trajectory violates a joint constraint at t = {t}"
            )));
        }
        samples.push(TargetSample::from_state(model, &q, &nu, t)?);
        truth.push((q, nu));
    }

    if let Some(noise) = spec.noise {
        add_noise(&mut samples, &noise, &mut rng);
    }
    Ok(GeneratedStream { truth, samples })
}

fn add_noise(samples: &mut [TargetSample], noise: &NoiseSpec, rng: &mut ChaCha8Rng) {
    let normal = |std: f64| Normal::new(0.0, std).expect("validated standard deviation");
    let (np, nr, nv) = (
        normal(noise.position_std),
        normal(noise.rotation_std),
        normal(noise.velocity_std),
    );
    let draw = |d: &Normal<f64>, rng: &mut ChaCha8Rng| Vector3::new(d.sample(rng), d.sample(rng), d.sample(rng));
    for s in samples {
        for p in &mut s.positions {
            *p += draw(&np, rng);
        }
        for r in &mut s.rotations {
            *r = &Rotation::exp(&draw(&nr, rng)) * r;
        }
        for v in s.lin_vels.iter_mut().chain(s.ang_vels.iter_mut()) {
            *v += draw(&nv, rng);
        }
    }
}
