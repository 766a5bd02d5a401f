//! Dense, inequality-constrained damped least squares.
//!
//! Solves
//!
//! ```text
//!     minimize    ½‖t − J x‖² + ½λ‖x‖²
//!     subject to  G x ≤ g
//! ```
//!
//! with the Goldfarb–Idnani dual active-set method on the Hessian
//! `H = JᵀJ + λI`. The method starts from the unconstrained minimizer, so it
//! needs no feasible starting point, and it proves infeasibility when a
//! violated constraint cannot be satisfied. A working set from a previous
//! solve can be supplied as a warm start.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

/// Damping used by the tracking loop when none is given.
pub const DEFAULT_DAMPING: f64 = 1e-6;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_ACTIVE_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("damping must be non-negative, got {0}")]
    NegativeDamping(f64),
    #[error("JᵀJ + λI is not positive definite")]
    NotPositiveDefinite,
    #[error("least-squares matrix is rank deficient and undamped")]
    RankDeficient,
    #[error("non-finite problem data")]
    NonFinite,
}

/// `min ½‖target − J x‖² + ½λ‖x‖²  s.t.  G x ≤ g`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquaresQp {
    pub jac: DMatrix<f64>,
    pub target: DVector<f64>,
    pub g_mat: DMatrix<f64>,
    pub g_vec: DVector<f64>,
    pub damping: f64,
}

impl LeastSquaresQp {
    pub fn new(
        jac: DMatrix<f64>,
        target: DVector<f64>,
        g_mat: DMatrix<f64>,
        g_vec: DVector<f64>,
        damping: f64,
    ) -> Result<Self, QpError> {
        let p = Self {
            jac,
            target,
            g_mat,
            g_vec,
            damping,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn unconstrained(jac: DMatrix<f64>, target: DVector<f64>, damping: f64) -> Result<Self, QpError> {
        let d = jac.ncols();
        Self::new(jac, target, DMatrix::zeros(0, d), DVector::zeros(0), damping)
    }

    pub fn dim(&self) -> usize {
        self.jac.ncols()
    }

    pub fn num_constraints(&self) -> usize {
        self.g_mat.nrows()
    }

    fn validate(&self) -> Result<(), QpError> {
        if self.jac.nrows() != self.target.len() {
            return Err(QpError::DimensionMismatch(format!(
                "J has {} rows, target has {}",
                self.jac.nrows(),
                self.target.len()
            )));
        }
        if self.g_mat.nrows() != self.g_vec.len() || self.g_mat.ncols() != self.jac.ncols() {
            return Err(QpError::DimensionMismatch(format!(
                "G is {}×{}, g has {} rows, J has {} columns",
                self.g_mat.nrows(),
                self.g_mat.ncols(),
                self.g_vec.len(),
                self.jac.ncols()
            )));
        }
        if !(self.damping >= 0.0) {
            return Err(QpError::NegativeDamping(self.damping));
        }
        let finite = self
            .jac
            .iter()
            .chain(self.target.iter())
            .chain(self.g_mat.iter())
            .all(|v| v.is_finite())
            && self.g_vec.iter().all(|v| v.is_finite())
            && self.damping.is_finite();
        if !finite {
            return Err(QpError::NonFinite);
        }
        Ok(())
    }

    /// `½‖target − J x‖² + ½λ‖x‖²`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (&self.target - &self.jac * x).norm_squared() + 0.5 * self.damping * x.norm_squared()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIterations,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Constraints with slack `g_i − G_i x ≤ active_tol`.
    pub active_set: Vec<usize>,
    /// The solver's final working set, suitable as the next warm start.
    pub working_set: Vec<usize>,
    /// Lagrange multipliers, zero outside the working set.
    pub multipliers: DVector<f64>,
    pub iterations: usize,
    pub status: QpStatus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub tol: f64,
    /// `None` means `10·(d + k)`.
    pub max_iter: Option<usize>,
    pub active_tol: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: None,
            active_tol: DEFAULT_ACTIVE_TOL,
        }
    }
}

/// Reusable solver handle. Holds no state between solves besides its
/// settings, so one handle per thread is enough.
#[derive(Debug, Clone, Default)]
pub struct QpSolver {
    pub settings: QpSettings,
}

/// Solves with default settings apart from `tol` and `max_iter`.
pub fn solve(p: &LeastSquaresQp, tol: f64, max_iter: usize) -> Result<QpSolution, QpError> {
    QpSolver::new(QpSettings {
        tol,
        max_iter: Some(max_iter),
        ..QpSettings::default()
    })
    .solve(p, None)
}

/// `(JᵀJ + λI)⁻¹ Jᵀ target` through a QR factorization of `[J; √λ I]`.
pub fn solve_unconstrained(jac: &DMatrix<f64>, target: &DVector<f64>, damping: f64) -> Result<DVector<f64>, QpError> {
    if jac.nrows() != target.len() {
        return Err(QpError::DimensionMismatch(format!(
            "J has {} rows, target has {}",
            jac.nrows(),
            target.len()
        )));
    }
    if !(damping >= 0.0) {
        return Err(QpError::NegativeDamping(damping));
    }
    let (m, d) = jac.shape();
    let (a, b) = if damping > 0.0 {
        let mut a = DMatrix::zeros(m + d, d);
        a.rows_mut(0, m).copy_from(jac);
        a.rows_mut(m, d).fill_diagonal(damping.sqrt());
        let mut b = DVector::zeros(m + d);
        b.rows_mut(0, m).copy_from(target);
        (a, b)
    } else {
        if m < d {
            return Err(QpError::RankDeficient);
        }
        (jac.clone(), target.clone())
    };
    let qr = a.qr();
    let r = qr.r();
    let diag_max = r.diagonal().amax();
    if d > 0 && (r.diagonal().iter().any(|v| v.abs() <= 1e-12 * diag_max.max(1e-300)) || diag_max == 0.0) {
        return Err(QpError::RankDeficient);
    }
    let qtb = qr.q().transpose() * b;
    r.solve_upper_triangular(&qtb).ok_or(QpError::RankDeficient)
}

/// KKT residuals of a candidate `(x, μ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    /// `max(G x − g)`, or 0 without constraints.
    pub primal: f64,
    /// `‖(JᵀJ + λI)x − Jᵀt + Gᵀμ‖_∞`.
    pub stationarity: f64,
    /// `max |μ_i (G_i x − g_i)|`.
    pub complementarity: f64,
    /// `min μ_i`, or 0 without constraints.
    pub dual_min: f64,
}

pub fn kkt_residuals(p: &LeastSquaresQp, x: &DVector<f64>, mu: &DVector<f64>) -> KktResiduals {
    let grad = p.jac.transpose() * (&p.jac * x - &p.target) + x * p.damping + p.g_mat.transpose() * mu;
    let slack = &p.g_mat * x - &p.g_vec;
    KktResiduals {
        primal: slack.iter().copied().fold(0.0, f64::max),
        stationarity: grad.amax(),
        complementarity: slack
            .iter()
            .zip(mu.iter())
            .map(|(s, m)| (s * m).abs())
            .fold(0.0, f64::max),
        dual_min: mu.iter().copied().fold(0.0, f64::min),
    }
}

/// Factorized problem data shared by all iterations of one solve.
struct Factored<'a> {
    p: &'a LeastSquaresQp,
    chol: Cholesky<f64, Dyn>,
    /// `L⁻¹ Gᵀ`, one column per constraint.
    w: DMatrix<f64>,
    x_unc: DVector<f64>,
}

impl<'a> Factored<'a> {
    fn new(p: &'a LeastSquaresQp) -> Result<Self, QpError> {
        let d = p.dim();
        let mut h = p.jac.transpose() * &p.jac;
        for i in 0..d {
            h[(i, i)] += p.damping;
        }
        let scale = h.diagonal().amax();
        let chol = Cholesky::new(h).ok_or(QpError::NotPositiveDefinite)?;
        // Cholesky succeeds on exactly singular matrices with round-off pivots.
        if d > 0 && chol.l_dirty().diagonal().iter().any(|&l| l * l <= 1e-14 * scale) {
            return Err(QpError::NotPositiveDefinite);
        }
        let rhs = p.jac.transpose() * &p.target;
        let x_unc = chol.solve(&rhs);
        let w = chol
            .l_dirty()
            .solve_lower_triangular(&p.g_mat.transpose())
            .ok_or(QpError::NotPositiveDefinite)?;
        Ok(Self { p, chol, w, x_unc })
    }

    /// `L⁻ᵀ v`.
    fn back(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol
            .l_dirty()
            .tr_solve_lower_triangular(v)
            .expect("cholesky factor has a non-zero diagonal")
    }

    fn gram(&self, set: &[usize]) -> DMatrix<f64> {
        let a = set.len();
        let mut m = DMatrix::zeros(a, a);
        for (i, &ci) in set.iter().enumerate() {
            for (j, &cj) in set.iter().enumerate().skip(i) {
                let v = self.w.column(ci).dot(&self.w.column(cj));
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    fn row_dot(&self, i: usize, x: &DVector<f64>) -> f64 {
        self.p.g_mat.row(i).transpose().dot(x)
    }

    /// Minimizer with the constraints in `set` held as equalities, and its
    /// multipliers. `None` when the set is linearly dependent.
    fn equality_solve(&self, set: &[usize]) -> Option<(DVector<f64>, DVector<f64>)> {
        if set.is_empty() {
            return Some((self.x_unc.clone(), DVector::zeros(0)));
        }
        let gram = Cholesky::new(self.gram(set))?;
        let resid = DVector::from_iterator(
            set.len(),
            set.iter().map(|&i| self.row_dot(i, &self.x_unc) - self.p.g_vec[i]),
        );
        let mu = gram.solve(&resid);
        let mut wmu = DVector::zeros(self.p.dim());
        for (k, &i) in set.iter().enumerate() {
            wmu.axpy(mu[k], &self.w.column(i), 1.0);
        }
        let x = &self.x_unc - self.back(&wmu);
        Some((x, mu))
    }
}

impl QpSolver {
    pub fn new(settings: QpSettings) -> Self {
        Self { settings }
    }

    /// Solves `p`, optionally warm-started from a previous working set.
    pub fn solve(&self, p: &LeastSquaresQp, warm_start: Option<&[usize]>) -> Result<QpSolution, QpError> {
        p.validate()?;
        let d = p.dim();
        let k = p.num_constraints();
        let tol = self.settings.tol;
        let max_iter = self.settings.max_iter.unwrap_or(10 * (d + k)).max(1);
        let f = Factored::new(p)?;

        let (mut x, mut active, mut mu) = self.initial_point(&f, warm_start);
        let mut iterations = 0;
        let mut status = QpStatus::Solved;

        'outer: loop {
            // Most violated constraint outside the working set.
            let mut worst: Option<(usize, f64)> = None;
            for i in 0..k {
                if active.contains(&i) {
                    continue;
                }
                let v = f.row_dot(i, &x) - p.g_vec[i];
                if v > tol && worst.is_none_or(|(_, w)| v > w) {
                    worst = Some((i, v));
                }
            }
            let Some((cp, _)) = worst else { break };
            let mut mu_p = 0.0;

            loop {
                if iterations >= max_iter {
                    status = QpStatus::MaxIterations;
                    break 'outer;
                }
                iterations += 1;

                // Direction that raises μ_p while keeping the working set tight:
                // r = −M⁻¹ W_Aᵀ W_p,  z = −L⁻ᵀ (W_p + W_A r).
                let wp = f.w.column(cp).into_owned();
                let r = if active.is_empty() {
                    DVector::zeros(0)
                } else {
                    let gram = Cholesky::new(f.gram(&active)).ok_or(QpError::NotPositiveDefinite)?;
                    let u = DVector::from_iterator(active.len(), active.iter().map(|&i| f.w.column(i).dot(&wp)));
                    -gram.solve(&u)
                };
                let mut comb = wp.clone();
                for (j, &i) in active.iter().enumerate() {
                    comb.axpy(r[j], &f.w.column(i), 1.0);
                }
                let curvature = wp.dot(&comb);

                // Largest dual step before some working multiplier hits zero.
                let mut block: Option<(usize, f64)> = None;
                for (j, &rj) in r.iter().enumerate() {
                    if rj < 0.0 {
                        let t = -mu[j] / rj;
                        if block.is_none_or(|(_, b)| t < b) {
                            block = Some((j, t));
                        }
                    }
                }

                let dependent = curvature <= 1e-12 * wp.norm_squared().max(f64::MIN_POSITIVE);
                if dependent {
                    let Some((l, t)) = block else {
                        status = QpStatus::Infeasible;
                        break 'outer;
                    };
                    for (j, m) in mu.iter_mut().enumerate() {
                        *m += t * r[j];
                    }
                    mu_p += t;
                    active.remove(l);
                    mu.remove(l);
                    continue;
                }

                let z = -f.back(&comb);
                let violation = f.row_dot(cp, &x) - p.g_vec[cp];
                let t_full = violation / curvature;
                match block {
                    Some((l, t)) if t < t_full => {
                        x.axpy(t, &z, 1.0);
                        for (j, m) in mu.iter_mut().enumerate() {
                            *m += t * r[j];
                        }
                        mu_p += t;
                        active.remove(l);
                        mu.remove(l);
                    }
                    _ => {
                        x.axpy(t_full, &z, 1.0);
                        for (j, m) in mu.iter_mut().enumerate() {
                            *m += t_full * r[j];
                        }
                        mu_p += t_full;
                        active.push(cp);
                        mu.push(mu_p);
                        break;
                    }
                }
            }
        }

        let mut multipliers = DVector::zeros(k);
        for (j, &i) in active.iter().enumerate() {
            multipliers[i] = mu[j];
        }
        let active_set = (0..k)
            .filter(|&i| p.g_vec[i] - f.row_dot(i, &x) <= self.settings.active_tol)
            .collect();
        Ok(QpSolution {
            objective: p.objective(&x),
            x: DVector::from_vec(x.as_slice().to_vec()),
            active_set,
            working_set: active,
            multipliers,
            iterations,
            status,
        })
    }

    /// Dual-feasible starting point: the unconstrained minimizer, or the
    /// equality-constrained minimizer on the warm-start set after dropping
    /// constraints with negative multipliers.
    fn initial_point(&self, f: &Factored, warm_start: Option<&[usize]>) -> (DVector<f64>, Vec<usize>, Vec<f64>) {
        let k = f.p.num_constraints();
        let mut set: Vec<usize> = Vec::new();
        for &i in warm_start.unwrap_or(&[]) {
            if i < k && !set.contains(&i) {
                set.push(i);
            }
        }
        while !set.is_empty() {
            let Some((x, mu)) = f.equality_solve(&set) else {
                break;
            };
            let (imin, mmin) = mu
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (i, &m)| if m < acc.1 { (i, m) } else { acc });
            if mmin >= 0.0 {
                return (x, set, mu.iter().copied().collect());
            }
            set.remove(imin);
        }
        (f.x_unc.clone(), Vec::new(), Vec::new())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn m(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, v)
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn scalar_least_squares() {
        let p = LeastSquaresQp::unconstrained(m(1, 1, &[1.0]), v(&[1.0]), 0.0).unwrap();
        let s = solve(&p, DEFAULT_TOL, 100).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        assert_relative_eq!(s.x[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn clipped_scalar() {
        let p = LeastSquaresQp::new(m(1, 1, &[1.0]), v(&[1.0]), m(1, 1, &[1.0]), v(&[0.5]), 0.0).unwrap();
        let s = solve(&p, DEFAULT_TOL, 100).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        assert_relative_eq!(s.x[0], 0.5, epsilon = 1e-15);
        assert_eq!(s.active_set, vec![0]);
        assert_relative_eq!(s.multipliers[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn half_space_projection() {
        // min ½|x − (1,1)|² s.t. x₀ + x₁ ≤ 1: KKT gives x = (1,1) − μ(1,1)
        // with 2 − 2μ = 1, so μ = ½ and x = (½, ½).
        let p = LeastSquaresQp::new(
            DMatrix::identity(2, 2),
            v(&[1.0, 1.0]),
            m(1, 2, &[1.0, 1.0]),
            v(&[1.0]),
            0.0,
        )
        .unwrap();
        let s = solve(&p, DEFAULT_TOL, 100).unwrap();
        assert_relative_eq!(s.x, v(&[0.5, 0.5]), epsilon = 1e-14);
        assert_relative_eq!(s.multipliers[0], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn unconstrained_examples() {
        let j = m(2, 2, &[2.0, 1.0, 0.0, 3.0]);
        let t = v(&[1.0, 2.0]);
        let x = solve_unconstrained(&j, &t, 0.0).unwrap();
        assert_relative_eq!(x, j.clone().try_inverse().unwrap() * &t, epsilon = 1e-14);

        // Normal equations: 2x = 1 + 3.
        let x = solve_unconstrained(&m(2, 1, &[1.0, 1.0]), &v(&[1.0, 3.0]), 0.0).unwrap();
        assert_relative_eq!(x[0], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn rank_deficient_without_damping() {
        let j = m(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(
            solve_unconstrained(&j, &v(&[1.0, 1.0]), 0.0),
            Err(QpError::RankDeficient)
        );
        assert!(solve_unconstrained(&j, &v(&[1.0, 1.0]), 1e-6).is_ok());
        let p = LeastSquaresQp::unconstrained(j, v(&[1.0, 1.0]), 0.0).unwrap();
        assert_eq!(solve(&p, DEFAULT_TOL, 10), Err(QpError::NotPositiveDefinite));
    }

    #[test]
    fn detects_infeasibility() {
        // x ≤ −1 and −x ≤ −1 (x ≥ 1) cannot both hold.
        let p = LeastSquaresQp::new(
            m(1, 1, &[1.0]),
            v(&[0.0]),
            m(2, 1, &[1.0, -1.0]),
            v(&[-1.0, -1.0]),
            1e-6,
        )
        .unwrap();
        let s = solve(&p, DEFAULT_TOL, 100).unwrap();
        assert_eq!(s.status, QpStatus::Infeasible);
    }

    #[test]
    fn iteration_cap_is_flagged() {
        let p = LeastSquaresQp::new(
            DMatrix::identity(3, 3),
            v(&[1.0, 1.0, 1.0]),
            DMatrix::identity(3, 3),
            v(&[0.0, 0.0, 0.0]),
            0.0,
        )
        .unwrap();
        let s = solve(&p, DEFAULT_TOL, 2).unwrap();
        assert_eq!(s.status, QpStatus::MaxIterations);
        let s = solve(&p, DEFAULT_TOL, 10).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        assert_eq!(s.iterations, 3);
    }

    #[test]
    fn warm_start_reproduces_cold_solution() {
        let p = LeastSquaresQp::new(
            m(3, 2, &[1.0, 0.2, 0.1, 1.0, 0.5, 0.5]),
            v(&[2.0, 1.5, -0.5]),
            m(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]),
            v(&[0.6, 0.5, 1.0]),
            1e-6,
        )
        .unwrap();
        let solver = QpSolver::default();
        let cold = solver.solve(&p, None).unwrap();
        let warm = solver.solve(&p, Some(&cold.working_set)).unwrap();
        assert_eq!(warm.status, QpStatus::Solved);
        assert_relative_eq!(warm.x, cold.x, epsilon = 1e-12);
        assert!(warm.iterations <= cold.iterations);
        // A nonsensical warm start must not change the answer either.
        let odd = solver.solve(&p, Some(&[2, 2, 7, 0])).unwrap();
        assert_relative_eq!(odd.x, cold.x, epsilon = 1e-12);
    }

    #[test]
    fn dimension_checks() {
        assert!(LeastSquaresQp::new(m(1, 2, &[1.0, 1.0]), v(&[1.0, 2.0]), m(0, 2, &[]), v(&[]), 0.0).is_err());
        assert!(LeastSquaresQp::new(m(1, 2, &[1.0, 1.0]), v(&[1.0]), m(1, 1, &[1.0]), v(&[1.0]), 0.0).is_err());
        assert_eq!(
            LeastSquaresQp::unconstrained(m(1, 1, &[1.0]), v(&[1.0]), -1.0),
            Err(QpError::NegativeDamping(-1.0))
        );
    }
}
