//! Rotation-matrix algebra on SO(3).
//!
//! Orientations are kept as plain 3×3 matrices rather than quaternions. The
//! distance between two orientations is `sk(R̂ᵀ R)ᵛ`, which equals `sin θ · n`
//! for a relative rotation of angle `θ` about the unit axis `n`, and the base
//! orientation is integrated with a Baumgarte correction term that pulls the
//! numerical solution back towards orthonormality.

use nalgebra::{Matrix3, Vector3, SVD};
use thiserror::Error;

/// Orthonormality tolerance for [`Rotation::new`].
pub const ROTATION_TOL: f64 = 1e-9;

/// Orthonormality tolerance accepted for integrator output, see
/// [`Rotation::from_integrated`].
pub const INTEGRATED_ROTATION_TOL: f64 = 1e-6;

const SKEW_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum So3Error {
    #[error("matrix is not a rotation: orthonormality error {error:.3e}, det {det:.6}")]
    NotARotation { error: f64, det: f64 },
    #[error("matrix is not skew-symmetric: |A + Aᵀ| = {0:.3e}")]
    NotSkewSymmetric(f64),
    #[error("singular matrix (det = {0:.3e})")]
    SingularMatrix(f64),
    #[error("degenerate matrix: smallest singular value {0:.3e}")]
    DegenerateMatrix(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid Baumgarte configuration: rho = {rho}, dt = {dt}")]
    InvalidBaumgarte { rho: f64, dt: f64 },
}

/// An element of SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    /// Checked constructor: `‖mᵀm − I‖_F ≤ 1e−9` and `det m > 0`.
    pub fn new(m: Matrix3<f64>) -> Result<Self, So3Error> {
        Self::with_tolerance(m, ROTATION_TOL)
    }

    /// Accepts the output of the Baumgarte integrator, whose orthonormality
    /// is maintained to [`INTEGRATED_ROTATION_TOL`] rather than machine
    /// precision.
    pub fn from_integrated(m: DriftingRotation) -> Result<Self, So3Error> {
        Self::with_tolerance(m.0, INTEGRATED_ROTATION_TOL)
    }

    fn with_tolerance(m: Matrix3<f64>, tol: f64) -> Result<Self, So3Error> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(So3Error::NonFinite("rotation"));
        }
        let error = orthonormality_error(&m);
        let det = m.determinant();
        if error > tol || det <= 0.0 {
            return Err(So3Error::NotARotation { error, det });
        }
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Wraps a matrix known to be a rotation (e.g. a product of rotations)
    /// without checking it.
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.normalize();
        Self::exp(&(n * angle))
    }

    /// Exponential map `exp(S(v))` (Rodrigues' formula).
    pub fn exp(v: &Vector3<f64>) -> Self {
        Self(*nalgebra::Rotation3::new(*v).matrix())
    }

    /// `R = Rz(yaw) · Ry(pitch) · Rx(roll)`.
    pub fn from_rpy(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self(*nalgebra::Rotation3::from_euler_angles(roll, pitch, yaw).matrix())
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::x(), angle)
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::y(), angle)
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::z(), angle)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Matrix3<f64> {
        self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Relative rotation angle to `other`, in `[0, π]`.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        let rel = self.0.transpose() * other.0;
        let c = (rel.trace() - 1.0) / 2.0;
        // atan2 keeps full precision near 0 and π, where acos does not.
        vee_unchecked(&sk(&rel)).norm().atan2(c)
    }

    /// Rotates a vector.
    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl std::ops::Mul<&Rotation> for &Rotation {
    type Output = Rotation;

    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

/// An integrator state that is only approximately orthonormal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftingRotation(pub Matrix3<f64>);

impl DriftingRotation {
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.0)
    }
}

impl From<Rotation> for DriftingRotation {
    fn from(r: Rotation) -> Self {
        Self(r.0)
    }
}

/// Angular velocity expressed in the inertial frame (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AngularVelocity(Vector3<f64>);

impl AngularVelocity {
    pub fn new(w: Vector3<f64>) -> Result<Self, So3Error> {
        if w.iter().all(|v| v.is_finite()) {
            Ok(Self(w))
        } else {
            Err(So3Error::NonFinite("angular velocity"))
        }
    }

    pub fn zero() -> Self {
        Self(Vector3::zeros())
    }

    pub fn vector(&self) -> &Vector3<f64> {
        &self.0
    }
}

/// Gain and time step of the Baumgarte-stabilized integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaumgarteConfig {
    rho: f64,
    dt: f64,
}

impl BaumgarteConfig {
    pub const DEFAULT_RHO: f64 = 10.0;

    pub fn new(rho: f64, dt: f64) -> Result<Self, So3Error> {
        if rho > 0.0 && dt > 0.0 && rho.is_finite() && dt.is_finite() {
            Ok(Self { rho, dt })
        } else {
            Err(So3Error::InvalidBaumgarte { rho, dt })
        }
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }
}

impl Default for BaumgarteConfig {
    fn default() -> Self {
        Self {
            rho: Self::DEFAULT_RHO,
            dt: 0.01,
        }
    }
}

/// `‖mᵀm − I‖_F`.
pub fn orthonormality_error(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).norm()
}

/// The matrix `S(v)` with `S(v) u = v × u`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`].
pub fn vee(a: &Matrix3<f64>) -> Result<Vector3<f64>, So3Error> {
    let asym = (a + a.transpose()).norm();
    if asym > SKEW_TOL {
        return Err(So3Error::NotSkewSymmetric(asym));
    }
    Ok(vee_unchecked(a))
}

fn vee_unchecked(a: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(a[(2, 1)], a[(0, 2)], a[(1, 0)])
}

/// Skew-symmetric part `(A − Aᵀ)/2`.
pub fn sk(a: &Matrix3<f64>) -> Matrix3<f64> {
    (a - a.transpose()) * 0.5
}

/// `sk(estimateᵀ · target)ᵛ`, the orientation error expressed in the frame
/// of `estimate`.
///
/// For a relative rotation of angle `θ` about `n` this is `sin θ · n`, so it
/// vanishes both at `θ = 0` and at the antipodal `θ = π`.
pub fn orientation_residual(estimate: &Rotation, target: &Rotation) -> Vector3<f64> {
    vee_unchecked(&sk(&(estimate.0.transpose() * target.0)))
}

/// The same error as [`orientation_residual`] expressed in the inertial
/// frame: `sk(target · estimateᵀ)ᵛ = estimate · sk(estimateᵀ · target)ᵛ`.
///
/// This is the vector to feed back through inertial-frame angular
/// velocities.
pub fn orientation_residual_inertial(estimate: &Rotation, target: &Rotation) -> Vector3<f64> {
    vee_unchecked(&sk(&(target.0 * estimate.0.transpose())))
}

/// Baumgarte correction `A = (ρ/2)((RᵀR)⁻¹ − I)`.
pub fn baumgarte_correction(r: &Matrix3<f64>, rho: f64) -> Result<Matrix3<f64>, So3Error> {
    let gram = r.transpose() * r;
    let det = gram.determinant();
    if !(det.abs() > 1e-12) {
        return Err(So3Error::SingularMatrix(det));
    }
    let inv = gram.try_inverse().ok_or(So3Error::SingularMatrix(det))?;
    Ok((inv - Matrix3::identity()) * (rho / 2.0))
}

/// Rate `Ṙ = S(ω) R + R A` for an inertial-frame angular velocity `ω`.
///
/// For orthonormal `R` this is `R (S(Rᵀω) + A)`.
pub fn baumgarte_rate(r: &Matrix3<f64>, omega: &AngularVelocity, rho: f64) -> Result<Matrix3<f64>, So3Error> {
    let a = baumgarte_correction(r, rho)?;
    Ok(skew(&omega.0) * r + r * a)
}

/// One explicit Euler step `R + Δt · Ṙ` of the stabilized dynamics.
pub fn baumgarte_step(
    r_prev: &Matrix3<f64>,
    omega: &AngularVelocity,
    cfg: &BaumgarteConfig,
) -> Result<DriftingRotation, So3Error> {
    let rate = baumgarte_rate(r_prev, omega, cfg.rho)?;
    Ok(DriftingRotation(r_prev + rate * cfg.dt))
}

/// One step of the integrator used inside the tracking loop.
///
/// The angular-velocity part is advanced with the exact exponential
/// `exp(Δt S(ω)) R`, which preserves orthonormality, and the Baumgarte term
/// is added with an explicit Euler step, `+ Δt R A`. Both steps share the
/// rate of [`baumgarte_rate`] to first order in `Δt`.
pub fn baumgarte_step_exp(
    r_prev: &Matrix3<f64>,
    omega: &AngularVelocity,
    cfg: &BaumgarteConfig,
) -> Result<DriftingRotation, So3Error> {
    let a = baumgarte_correction(r_prev, cfg.rho)?;
    let flow = Rotation::exp(&(omega.0 * cfg.dt));
    Ok(DriftingRotation(flow.0 * r_prev + r_prev * a * cfg.dt))
}

/// Nearest rotation in Frobenius norm (the orthogonal polar factor).
///
/// Used for diagnostics and final output only; the tracking loop relies on
/// the Baumgarte term instead.
pub fn project_to_so3(a: &Matrix3<f64>) -> Result<Rotation, So3Error> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(So3Error::NonFinite("matrix"));
    }
    let det = a.determinant();
    if det <= 0.0 {
        return Err(So3Error::DegenerateMatrix(det));
    }
    let svd = SVD::new(*a, true, true);
    let smin = svd.singular_values.min();
    if smin <= 1e-12 * svd.singular_values.max().max(1.0) {
        return Err(So3Error::DegenerateMatrix(smin));
    }
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    Ok(Rotation(u * v_t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn skew_examples() {
        assert_eq!(skew(&Vector3::zeros()), Matrix3::zeros());
        assert_eq!(
            skew(&Vector3::new(0.0, 0.0, 1.0)),
            Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        );
        // (2·6 − 3·5, 3·4 − 1·6, 1·5 − 2·4)
        let got = skew(&Vector3::new(1.0, 2.0, 3.0)) * Vector3::new(4.0, 5.0, 6.0);
        assert_eq!(got, Vector3::new(-3.0, 6.0, -3.0));
    }

    #[test]
    fn vee_examples() {
        assert_eq!(vee(&Matrix3::zeros()).unwrap(), Vector3::zeros());
        let v = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(vee(&skew(&v)).unwrap(), v);
        let a = Matrix3::new(0.0, -5.0, 2.0, 5.0, 0.0, -1.0, -2.0, 1.0, 0.0);
        assert_eq!(vee(&a).unwrap(), Vector3::new(1.0, 2.0, 5.0));
    }

    #[test]
    fn vee_rejects_non_skew() {
        assert!(matches!(vee(&Matrix3::identity()), Err(So3Error::NotSkewSymmetric(_))));
    }

    #[test]
    fn sk_examples() {
        assert_eq!(sk(&Matrix3::identity()), Matrix3::zeros());
        let sym = Matrix3::new(1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0);
        assert_eq!(sk(&sym), Matrix3::zeros());
        let theta: f64 = 0.7;
        let got = sk(Rotation::rot_z(theta).matrix());
        assert_relative_eq!(got, skew(&Vector3::new(0.0, 0.0, theta.sin())), epsilon = 1e-15);
    }

    #[test]
    fn residual_examples() {
        let r = Rotation::from_rpy(0.3, -0.2, 1.1);
        assert_eq!(orientation_residual(&r, &r), Vector3::zeros());
        let got = orientation_residual(&Rotation::identity(), &Rotation::rot_z(FRAC_PI_2));
        assert_relative_eq!(got, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
        // Antipodal rotation: maximal error, zero residual.
        let got = orientation_residual(&Rotation::identity(), &Rotation::rot_z(PI));
        assert_relative_eq!(got, Vector3::zeros(), epsilon = 1e-15);
    }

    #[test]
    fn inertial_residual_is_rotated_body_residual() {
        let est = Rotation::from_rpy(0.4, 0.9, -1.3);
        let tgt = Rotation::from_rpy(-0.2, 0.1, 2.0);
        let body = orientation_residual(&est, &tgt);
        let inertial = orientation_residual_inertial(&est, &tgt);
        assert_relative_eq!(inertial, est.apply(&body), epsilon = 1e-14);
    }

    #[test]
    fn baumgarte_examples() {
        let cfg = BaumgarteConfig::new(10.0, 0.01).unwrap();
        let out = baumgarte_step(&Matrix3::identity(), &AngularVelocity::zero(), &cfg).unwrap();
        assert_eq!(out.0, Matrix3::identity());

        let a = baumgarte_correction(&(Matrix3::identity() * 1.1), 2.0).unwrap();
        assert_relative_eq!(a, Matrix3::identity() * (1.0 / 1.21 - 1.0), epsilon = 1e-15);
        assert_relative_eq!(a[(0, 0)], -0.17355, epsilon = 1e-5);

        let w = AngularVelocity::new(Vector3::new(0.0, 0.0, 1.0)).unwrap();
        let out = baumgarte_step(&Matrix3::identity(), &w, &cfg).unwrap();
        assert_relative_eq!(
            out.0,
            Matrix3::identity() + skew(&Vector3::new(0.0, 0.0, 1.0)) * 0.01,
            epsilon = 1e-15
        );
    }

    #[test]
    fn baumgarte_correction_vanishes_on_rotations() {
        let r = Rotation::from_rpy(0.1, 0.2, 0.3);
        let a = baumgarte_correction(r.matrix(), 10.0).unwrap();
        assert!(a.norm() < 1e-14);
    }

    #[test]
    fn baumgarte_rejects_singular() {
        let cfg = BaumgarteConfig::default();
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0);
        assert!(matches!(
            baumgarte_step(&m, &AngularVelocity::zero(), &cfg),
            Err(So3Error::SingularMatrix(_))
        ));
    }

    #[test]
    fn baumgarte_config_validation() {
        assert!(BaumgarteConfig::new(0.0, 0.01).is_err());
        assert!(BaumgarteConfig::new(10.0, -0.01).is_err());
        assert!(BaumgarteConfig::new(10.0, 0.01).is_ok());
    }

    #[test]
    fn rotation_constructor_checks() {
        assert!(Rotation::new(Matrix3::identity() * 1.1).is_err());
        assert!(Rotation::new(-Matrix3::identity()).is_err());
        assert!(Rotation::new(*Rotation::from_rpy(1.0, 2.0, 3.0).matrix()).is_ok());
    }

    #[test]
    fn projection_examples() {
        let r = Rotation::from_rpy(0.5, -0.4, 2.0);
        assert_relative_eq!(project_to_so3(r.matrix()).unwrap().0, r.0, epsilon = 1e-14);
        assert_relative_eq!(project_to_so3(&(r.0 * 1.1)).unwrap().0, r.0, epsilon = 1e-14);
        assert!(project_to_so3(&Matrix3::zeros()).is_err());
    }

    #[test]
    fn exp_integrator_preserves_orthonormality() {
        let cfg = BaumgarteConfig::new(10.0, 0.01).unwrap();
        let mut r = Matrix3::identity();
        for k in 0..10_000 {
            let t = k as f64 * 0.01;
            let w = Vector3::new((1.3 * t).sin(), (0.7 * t).cos(), 0.5 * (2.1 * t).sin()) * 2.0;
            r = baumgarte_step_exp(&r, &AngularVelocity::new(w).unwrap(), &cfg)
                .unwrap()
                .0;
            assert!(orthonormality_error(&r) < 1e-12);
        }
    }

    #[test]
    fn exp_integrator_follows_constant_rate() {
        // Constant inertial rate about z for 1 s reaches R_z(1).
        let cfg = BaumgarteConfig::new(10.0, 0.01).unwrap();
        let w = AngularVelocity::new(Vector3::new(0.0, 0.0, 1.0)).unwrap();
        let mut r = *Rotation::rot_x(0.3).matrix();
        for _ in 0..100 {
            r = baumgarte_step_exp(&r, &w, &cfg).unwrap().0;
        }
        let expected = Rotation::rot_z(1.0) * Rotation::rot_x(0.3);
        assert_relative_eq!(r, expected.0, epsilon = 1e-12);
    }

    #[test]
    fn euler_drift_scales_with_rate_squared() {
        // Forward Euler leaves a steady orthonormality error of order
        // √2·dt·|ω|²/ρ, which the exponential integrator does not have.
        let cfg = BaumgarteConfig::new(10.0, 0.01).unwrap();
        let w = AngularVelocity::new(Vector3::new(0.0, 0.0, 1.0)).unwrap();
        let mut r = Matrix3::identity();
        for _ in 0..5_000 {
            r = baumgarte_step(&r, &w, &cfg).unwrap().0;
        }
        let err = orthonormality_error(&r);
        let predicted = 2f64.sqrt() * cfg.dt() / cfg.rho();
        assert!(err > 0.5 * predicted && err < 2.0 * predicted, "{err} vs {predicted}");
    }

    fn unit_vector() -> impl Strategy<Value = Vector3<f64>> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("non-degenerate", |(x, y, z)| x * x + y * y + z * z > 1e-2)
            .prop_map(|(x, y, z)| Vector3::new(x, y, z).normalize())
    }

    proptest! {
        #[test]
        fn residual_is_sine_times_axis(n in unit_vector(), theta in -3.1..3.1f64) {
            let got = orientation_residual(&Rotation::identity(), &Rotation::from_axis_angle(&n, theta));
            prop_assert!((got - n * theta.sin()).amax() < 1e-12);
        }

        #[test]
        fn vee_skew_round_trip(x in -10.0..10.0f64, y in -10.0..10.0f64, z in -10.0..10.0f64) {
            let v = Vector3::new(x, y, z);
            prop_assert_eq!(vee(&skew(&v)).unwrap(), v);
            let s = skew(&v);
            prop_assert_eq!(skew(&vee(&s).unwrap()), s);
        }

        #[test]
        fn baumgarte_contracts(
            roll in -3.0..3.0f64, pitch in -1.5..1.5f64, yaw in -3.0..3.0f64,
            scale in 0.5..2.0f64, rho in 0.1..50.0f64, frac in 0.01..1.0f64,
        ) {
            prop_assume!((scale - 1.0).abs() > 1e-6);
            // rho·dt ranges over (0, 0.5]
            let dt = 0.5 * frac / rho;
            let cfg = BaumgarteConfig::new(rho, dt).unwrap();
            let r = Rotation::from_rpy(roll, pitch, yaw).0 * scale;
            let next = baumgarte_step(&r, &AngularVelocity::zero(), &cfg).unwrap();
            prop_assert!(next.orthonormality_error() < orthonormality_error(&r));
        }

        #[test]
        fn projection_is_orthonormal(m in proptest::array::uniform9(-2.0..2.0f64)) {
            let a = Matrix3::from_row_slice(&m);
            prop_assume!(a.determinant() > 1e-3);
            let r = project_to_so3(&a).unwrap();
            prop_assert!(orthonormality_error(r.matrix()) < 1e-12);
            prop_assert!(r.matrix().determinant() > 0.0);
        }
    }
}
