//! Rotation helpers and Featherstone-style spatial algebra.
//!
//! Spatial vectors are stored `[angular; linear]`. Motion transforms follow
//! the usual `X = [E 0; -E rx E]` layout where `E` rotates parent
//! coordinates into child coordinates and `r` is the child origin expressed
//! in the parent frame.

use nalgebra::{Matrix3, Matrix6, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type SVec = Vector6<f64>;
pub type SMat = Matrix6<f64>;

/// Rodrigues exponential of an axis-angle vector.
pub fn exp_so3(r: &Vec3) -> Mat3 {
    UnitQuaternion::from_scaled_axis(*r).to_rotation_matrix().into_inner()
}

/// Principal logarithm, returned with norm in `[0, pi]`.
pub fn log_so3(m: &Mat3) -> Vec3 {
    let rot = nalgebra::Rotation3::from_matrix_unchecked(*m);
    UnitQuaternion::from_rotation_matrix(&rot).scaled_axis()
}

/// Series coefficients of the exponential-map Jacobians.
///
/// `a = (1 - cos t)/t^2`, `b = (t - sin t)/t^3` and their derivatives
/// divided by `t`, i.e. `da = a'(t)/t`, `db = b'(t)/t`.
struct ExpCoeffs {
    a: f64,
    b: f64,
    da: f64,
    db: f64,
}

fn exp_coeffs(phi: f64) -> ExpCoeffs {
    let p2 = phi * phi;
    let (a, b) = if phi < 1e-2 {
        (
            0.5 - p2 / 24.0 + p2 * p2 / 720.0,
            1.0 / 6.0 - p2 / 120.0 + p2 * p2 / 5040.0,
        )
    } else {
        ((1.0 - phi.cos()) / p2, (phi - phi.sin()) / (p2 * phi))
    };
    let (da, db) = if phi < 0.1 {
        (
            -1.0 / 12.0 + p2 / 180.0 - p2 * p2 / 6720.0,
            -1.0 / 60.0 + p2 / 1260.0 - p2 * p2 / 60480.0,
        )
    } else {
        let (s, c) = phi.sin_cos();
        (
            (phi * s - 2.0 * (1.0 - c)) / (p2 * p2),
            ((1.0 - c) * phi - 3.0 * (phi - s)) / (p2 * p2 * phi),
        )
    };
    ExpCoeffs { a, b, da, db }
}

/// Right Jacobian: body angular velocity `w = J_r(r) r_dot` for `R = exp(r)`.
pub fn right_jacobian(r: &Vec3) -> Mat3 {
    let k = exp_coeffs(r.norm());
    let s = r.cross_matrix();
    Mat3::identity() - s * k.a + s * s * k.b
}

/// Left Jacobian: world angular velocity `w = J_l(r) r_dot`.
pub fn left_jacobian(r: &Vec3) -> Mat3 {
    right_jacobian(&-r)
}

/// Time derivative of `J_r(r(t))` along `r_dot`.
pub fn right_jacobian_dot(r: &Vec3, r_dot: &Vec3) -> Mat3 {
    let k = exp_coeffs(r.norm());
    let s = r.cross_matrix();
    let u = r_dot.cross_matrix();
    let rd = r.dot(r_dot);
    -s * (k.da * rd) - u * k.a + s * s * (k.db * rd) + (u * s + s * u) * k.b
}

/// Rigid transform mapping child coordinates into parent coordinates:
/// `x_parent = rot * x_child + trans`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rot: Mat3,
    pub trans: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rot: Mat3::identity(),
            trans: Vec3::zeros(),
        }
    }

    pub fn new(rot: Mat3, trans: Vec3) -> Self {
        Self { rot, trans }
    }

    pub fn from_axis_angle(r: &Vec3, trans: Vec3) -> Self {
        Self {
            rot: exp_so3(r),
            trans,
        }
    }

    /// `self * other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rot: self.rot * other.rot,
            trans: self.rot * other.trans + self.trans,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rot.transpose();
        Pose {
            rot: rt,
            trans: -(rt * self.trans),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rot * p + self.trans
    }

    pub fn apply_inverse(&self, p: &Vec3) -> Vec3 {
        self.rot.transpose() * (p - self.trans)
    }

    /// Motion transform taking parent-frame spatial vectors into this
    /// pose's (child) frame.
    pub fn child_xform(&self) -> Xform {
        Xform {
            e: self.rot.transpose(),
            r: self.trans,
        }
    }
}

/// Plücker transform `X = [E 0; -E rx E]`.
#[derive(Debug, Clone, Copy)]
pub struct Xform {
    pub e: Mat3,
    pub r: Vec3,
}

impl Xform {
    pub fn apply_motion(&self, m: &SVec) -> SVec {
        let w = m.fixed_rows::<3>(0).into_owned();
        let v = m.fixed_rows::<3>(3).into_owned();
        let w2 = self.e * w;
        let v2 = self.e * (v - self.r.cross(&w));
        join(&w2, &v2)
    }

    /// `X^T f`: carries a force from the child frame back into the parent.
    pub fn transpose_apply_force(&self, f: &SVec) -> SVec {
        let n = f.fixed_rows::<3>(0).into_owned();
        let lin = f.fixed_rows::<3>(3).into_owned();
        let et = self.e.transpose();
        let lin2 = et * lin;
        let n2 = et * n + self.r.cross(&lin2);
        join(&n2, &lin2)
    }

    pub fn to_matrix(&self) -> SMat {
        let mut x = SMat::zeros();
        let erx = -(self.e * self.r.cross_matrix());
        x.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.e);
        x.fixed_view_mut::<3, 3>(3, 0).copy_from(&erx);
        x.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.e);
        x
    }
}

pub fn join(a: &Vec3, b: &Vec3) -> SVec {
    SVec::new(a.x, a.y, a.z, b.x, b.y, b.z)
}

pub fn angular(v: &SVec) -> Vec3 {
    v.fixed_rows::<3>(0).into_owned()
}

pub fn linear(v: &SVec) -> Vec3 {
    v.fixed_rows::<3>(3).into_owned()
}

/// Motion cross product `v x m`.
pub fn cross_motion(v: &SVec, m: &SVec) -> SVec {
    let (w, vl) = (angular(v), linear(v));
    let (mw, ml) = (angular(m), linear(m));
    join(&w.cross(&mw), &(w.cross(&ml) + vl.cross(&mw)))
}

/// Force cross product `v x* f`.
pub fn cross_force(v: &SVec, f: &SVec) -> SVec {
    let (w, vl) = (angular(v), linear(v));
    let (n, fl) = (angular(f), linear(f));
    join(&(w.cross(&n) + vl.cross(&fl)), &w.cross(&fl))
}

/// Spatial inertia of a rigid body about its frame origin.
pub fn spatial_inertia(mass: f64, com: &Vec3, inertia_com: &Mat3) -> SMat {
    let cx = com.cross_matrix();
    let mut i = SMat::zeros();
    let top_left = inertia_com + cx * cx.transpose() * mass;
    i.fixed_view_mut::<3, 3>(0, 0).copy_from(&top_left);
    i.fixed_view_mut::<3, 3>(0, 3).copy_from(&(cx * mass));
    i.fixed_view_mut::<3, 3>(3, 0).copy_from(&(cx.transpose() * mass));
    i.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(Mat3::identity() * mass));
    i
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_right_jacobian(r: &Vec3) -> Mat3 {
        // w_body from R^T dR/dr_i, column by column.
        let h = 1e-6;
        let r0 = exp_so3(r);
        let mut j = Mat3::zeros();
        for i in 0..3 {
            let mut e = Vec3::zeros();
            e[i] = h;
            let dr = (exp_so3(&(r + e)) - exp_so3(&(r - e))) / (2.0 * h);
            let w = r0.transpose() * dr;
            j.set_column(i, &Vec3::new(w[(2, 1)], w[(0, 2)], w[(1, 0)]));
        }
        j
    }

    #[test]
    fn right_jacobian_matches_finite_differences() {
        for r in [
            Vec3::new(0.3, -0.2, 0.9),
            Vec3::new(1e-4, 2e-4, -1e-4),
            Vec3::new(0.05, 0.0, 0.02),
            Vec3::new(2.5, 1.0, -0.4),
            Vec3::zeros(),
        ] {
            let diff = (right_jacobian(&r) - fd_right_jacobian(&r)).abs().max();
            assert!(diff < 1e-8, "r = {r:?}: {diff}");
        }
    }

    #[test]
    fn right_jacobian_dot_matches_finite_differences() {
        let h = 1e-6;
        for (r, u) in [
            (Vec3::new(0.3, -0.2, 0.9), Vec3::new(1.0, 0.5, -2.0)),
            (Vec3::new(0.01, 0.03, -0.02), Vec3::new(-0.3, 0.2, 0.7)),
            (Vec3::new(1e-5, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)),
            (Vec3::new(0.08, 0.05, 0.0), Vec3::new(0.4, -1.1, 0.3)),
            (Vec3::new(2.9, 0.2, 0.1), Vec3::new(0.4, -1.1, 0.3)),
        ] {
            let fd = (right_jacobian(&(r + u * h)) - right_jacobian(&(r - u * h))) / (2.0 * h);
            let diff = (right_jacobian_dot(&r, &u) - fd).abs().max();
            assert!(diff < 1e-8, "r = {r:?}: {diff}");
        }
    }

    #[test]
    fn log_inverts_exp() {
        for r in [
            Vec3::new(0.3, -0.2, 0.9),
            Vec3::new(1e-9, 0.0, 0.0),
            Vec3::new(0.0, 3.1, 0.0),
        ] {
            assert!((log_so3(&exp_so3(&r)) - r).norm() < 1e-12);
        }
    }

    #[test]
    fn xform_matrix_agrees_with_apply() {
        let pose = Pose::from_axis_angle(&Vec3::new(0.2, 0.4, -0.3), Vec3::new(0.5, -1.0, 2.0));
        let x = pose.child_xform();
        let m = SVec::new(0.1, -0.2, 0.3, 1.0, 2.0, -0.5);
        assert!((x.to_matrix() * m - x.apply_motion(&m)).norm() < 1e-14);
        assert!((x.to_matrix().transpose() * m - x.transpose_apply_force(&m)).norm() < 1e-14);
    }
}
