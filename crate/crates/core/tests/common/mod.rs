//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use iktrack_core::kinematics::{Configuration, KinematicModel};
use iktrack_core::so3::Rotation;
use iktrack_core::LeastSquaresQp;
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

/// Rodrigues rotation written out from scratch.
pub fn rodrigues(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let (x, y, z) = (axis.x, axis.y, axis.z);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    Matrix3::new(
        t * x * x + c,
        t * x * y - s * z,
        t * x * z + s * y,
        t * x * y + s * z,
        t * y * y + c,
        t * y * z - s * x,
        t * x * z - s * y,
        t * y * z + s * x,
        t * z * z + c,
    )
}

fn rpy(r: &Vector3<f64>) -> Matrix3<f64> {
    rodrigues(&Vector3::z(), r.z) * rodrigues(&Vector3::y(), r.y) * rodrigues(&Vector3::x(), r.x)
}

/// World pose of `link` by recursing up the parent chain.
pub fn naive_pose(model: &KinematicModel, q: &Configuration, link: usize) -> (Vector3<f64>, Matrix3<f64>) {
    match model.parent_joint(link) {
        None => (q.base_pos, *q.base_rot.matrix()),
        Some(j) => {
            let joint = &model.joints()[j];
            let (p, r) = naive_pose(model, q, joint.parent_link);
            let frame = r * rpy(&joint.origin_rpy);
            (p + r * joint.origin_xyz, frame * rodrigues(&joint.axis, q.s[j]))
        }
    }
}

/// Stacked pose by the naive recursion: positions then rotations.
pub fn naive_stacked(model: &KinematicModel, q: &Configuration) -> (Vec<Vector3<f64>>, Vec<Matrix3<f64>>) {
    (
        model
            .position_targets()
            .iter()
            .map(|&l| naive_pose(model, q, l).0)
            .collect(),
        model
            .orientation_targets()
            .iter()
            .map(|&l| naive_pose(model, q, l).1)
            .collect(),
    )
}

/// Configuration displaced by `h` along velocity coordinate `i`, with the
/// base rotation perturbed in the inertial frame.
pub fn displaced(q: &Configuration, i: usize, h: f64) -> Configuration {
    let mut out = q.clone();
    match i {
        0..=2 => out.base_pos[i] += h,
        3..=5 => {
            let mut axis = Vector3::zeros();
            axis[i - 3] = 1.0;
            out.base_rot = Rotation::new(rodrigues(&axis, h) * q.base_rot.matrix()).unwrap();
        }
        _ => out.s[i - 6] += h,
    }
    out
}

/// Central finite-difference stacked Jacobian built on the naive FK.
pub fn fd_jacobian(model: &KinematicModel, q: &Configuration, h: f64) -> DMatrix<f64> {
    let (p0, r0) = naive_stacked(model, q);
    let rows = 3 * (p0.len() + r0.len());
    let cols = model.velocity_dim();
    let mut jac = DMatrix::zeros(rows, cols);
    for i in 0..cols {
        let (pp, rp) = naive_stacked(model, &displaced(q, i, h));
        let (pm, rm) = naive_stacked(model, &displaced(q, i, -h));
        for k in 0..p0.len() {
            let d = (pp[k] - pm[k]) / (2.0 * h);
            jac.fixed_view_mut::<3, 1>(3 * k, i).copy_from(&d);
        }
        for k in 0..r0.len() {
            let rdot = (rp[k] - rm[k]) / (2.0 * h);
            let w = rdot * r0[k].transpose();
            let v = Vector3::new(w[(2, 1)] - w[(1, 2)], w[(0, 2)] - w[(2, 0)], w[(1, 0)] - w[(0, 1)]) * 0.5;
            jac.fixed_view_mut::<3, 1>(3 * (p0.len() + k), i).copy_from(&v);
        }
    }
    jac
}

/// Exact QP solution by enumerating every candidate active set and keeping
/// the best KKT-feasible one. Only for tiny problems.
pub fn enumerate_qp(p: &LeastSquaresQp) -> Option<DVector<f64>> {
    let d = p.jac.ncols();
    let k = p.g_mat.nrows();
    let mut h = p.jac.transpose() * &p.jac;
    for i in 0..d {
        h[(i, i)] += p.damping;
    }
    let c = p.jac.transpose() * &p.target;
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << k) {
        let set: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let a = set.len();
        let mut kkt = DMatrix::zeros(d + a, d + a);
        kkt.view_mut((0, 0), (d, d)).copy_from(&h);
        let mut rhs = DVector::zeros(d + a);
        rhs.rows_mut(0, d).copy_from(&c);
        for (r, &i) in set.iter().enumerate() {
            for j in 0..d {
                kkt[(d + r, j)] = p.g_mat[(i, j)];
                kkt[(j, d + r)] = p.g_mat[(i, j)];
            }
            rhs[d + r] = p.g_vec[i];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let x = sol.rows(0, d).into_owned();
        let mu = sol.rows(d, a).into_owned();
        let feasible = (0..k).all(|i| p.g_mat.row(i).transpose().dot(&x) <= p.g_vec[i] + 1e-9);
        if !feasible || mu.iter().any(|&m| m < -1e-9) {
            continue;
        }
        let obj = p.objective(&x);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, x));
        }
    }
    best.map(|(_, x)| x)
}

/// Damped normal equations solved by LU.
pub fn normal_equations(jac: &DMatrix<f64>, t: &DVector<f64>, damping: f64) -> DVector<f64> {
    let d = jac.ncols();
    let h = jac.transpose() * jac + DMatrix::identity(d, d) * damping;
    h.lu().solve(&(jac.transpose() * t)).expect("non-singular")
}
