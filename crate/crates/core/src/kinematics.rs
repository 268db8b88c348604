//! Forward kinematics, point Jacobians and trajectory differencing.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use nalgebra::{DVector, Matrix3xX};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::{JointKind, KinematicTree};
use crate::spatial::{
    exp_so3, join, log_so3, right_jacobian, right_jacobian_dot, Pose, SVec, Vec3,
};

/// Generalized coordinates: axis-angle radians and metres.
pub type Configuration = DVector<f64>;

fn triple(q: &[f64], at: usize) -> Vec3 {
    Vec3::new(q[at], q[at + 1], q[at + 2])
}

/// Pose of the joint's child frame relative to the joint frame.
pub(crate) fn joint_motion(kind: &JointKind, qj: &[f64]) -> Pose {
    match kind {
        JointKind::Revolute { axis } => Pose::new(exp_so3(&(axis * qj[0])), Vec3::zeros()),
        JointKind::Spherical => Pose::new(exp_so3(&triple(qj, 0)), Vec3::zeros()),
        JointKind::Free => Pose::new(exp_so3(&triple(qj, 0)), triple(qj, 3)),
    }
}

/// Columns of `S(q)`: joint-rate to child-frame twist `[w; v]`.
pub(crate) fn motion_subspace(kind: &JointKind, qj: &[f64]) -> Vec<SVec> {
    match kind {
        JointKind::Revolute { axis } => vec![join(axis, &Vec3::zeros())],
        JointKind::Spherical => {
            let jr = right_jacobian(&triple(qj, 0));
            (0..3)
                .map(|c| join(&jr.column(c).into_owned(), &Vec3::zeros()))
                .collect()
        }
        JointKind::Free => {
            let r = triple(qj, 0);
            let jr = right_jacobian(&r);
            let rt = exp_so3(&r).transpose();
            let mut cols: Vec<SVec> = (0..3)
                .map(|c| join(&jr.column(c).into_owned(), &Vec3::zeros()))
                .collect();
            cols.extend((0..3).map(|c| join(&Vec3::zeros(), &rt.column(c).into_owned())));
            cols
        }
    }
}

/// `S_dot(q, q_dot) * q_dot`, the velocity-product term of the joint
/// acceleration in the child frame.
pub(crate) fn subspace_bias(kind: &JointKind, qj: &[f64], qdj: &[f64]) -> SVec {
    match kind {
        JointKind::Revolute { .. } => SVec::zeros(),
        JointKind::Spherical => {
            let (r, rd) = (triple(qj, 0), triple(qdj, 0));
            join(&(right_jacobian_dot(&r, &rd) * rd), &Vec3::zeros())
        }
        JointKind::Free => {
            let (r, rd) = (triple(qj, 0), triple(qdj, 0));
            let w = right_jacobian(&r) * rd;
            let v = exp_so3(&r).transpose() * triple(qdj, 3);
            join(&(right_jacobian_dot(&r, &rd) * rd), &(-w.cross(&v)))
        }
    }
}

/// World pose of every link frame.
pub fn forward_kinematics(tree: &KinematicTree, q: &[f64]) -> Result<Vec<Pose>> {
    tree.check_config("forward_kinematics", q.len())?;
    let mut poses: Vec<Pose> = Vec::with_capacity(tree.num_links());
    for (i, joint) in tree.joints().iter().enumerate() {
        let off = tree.q_offset(i);
        let local = joint
            .origin
            .compose(&joint_motion(&joint.kind, &q[off..off + joint.kind.dof()]));
        let world = match joint.parent {
            Some(p) => poses[p].compose(&local),
            None => local,
        };
        poses.push(world);
    }
    Ok(poses)
}

fn check_body(tree: &KinematicTree, body: usize) -> Result<()> {
    if body < tree.num_links() {
        Ok(())
    } else {
        Err(Error::UnknownBody(format!("link index {body}")))
    }
}

/// World position of a point fixed in `body` at `offset`.
pub fn point_position(tree: &KinematicTree, q: &[f64], body: usize, offset: &Vec3) -> Result<Vec3> {
    check_body(tree, body)?;
    let poses = forward_kinematics(tree, q)?;
    Ok(poses[body].apply(offset))
}

/// `3 x n` Jacobian with `p_dot = J q_dot` for parameter rates `q_dot`.
pub fn point_jacobian(
    tree: &KinematicTree,
    q: &[f64],
    body: usize,
    offset: &Vec3,
) -> Result<Matrix3xX<f64>> {
    check_body(tree, body)?;
    let poses = forward_kinematics(tree, q)?;
    Ok(point_jacobian_with_poses(tree, q, &poses, body, offset))
}

pub(crate) fn point_jacobian_with_poses(
    tree: &KinematicTree,
    q: &[f64],
    poses: &[Pose],
    body: usize,
    offset: &Vec3,
) -> Matrix3xX<f64> {
    let p = poses[body].apply(offset);
    let mut jac = Matrix3xX::zeros(tree.dof());
    for link in tree.ancestry(body) {
        let joint = &tree.joints()[link];
        let off = tree.q_offset(link);
        let pose = &poses[link];
        let lever = p - pose.trans;
        for (c, s) in motion_subspace(&joint.kind, &q[off..off + joint.kind.dof()])
            .iter()
            .enumerate()
        {
            let w = pose.rot * s.fixed_rows::<3>(0);
            let v = pose.rot * s.fixed_rows::<3>(3);
            jac.set_column(off + c, &(v + w.cross(&lever)));
        }
    }
    jac
}

/// Role of a candidate contact point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactRole {
    /// Touches the static scene.
    Scene,
    /// Touches the moving object (hand contacts).
    Object,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactPoint {
    pub body: usize,
    pub offset: Vec3,
    pub role: ContactRole,
}

/// Candidate contact points on the articulated body.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContactPointSet {
    pub points: Vec<ContactPoint>,
}

impl ContactPointSet {
    pub fn new(tree: &KinematicTree, points: Vec<ContactPoint>) -> Result<Self> {
        for p in &points {
            check_body(tree, p.body)?;
        }
        Ok(Self { points })
    }

    pub fn scene(&self) -> impl Iterator<Item = &ContactPoint> {
        self.points.iter().filter(|p| p.role == ContactRole::Scene)
    }

    pub fn object(&self) -> impl Iterator<Item = &ContactPoint> {
        self.points.iter().filter(|p| p.role == ContactRole::Object)
    }

    pub fn scene_count(&self) -> usize {
        self.scene().count()
    }

    pub fn object_count(&self) -> usize {
        self.object().count()
    }
}

/// Time-stamped configuration sequence with optional derived rates.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dt: f64,
    frames: Vec<Configuration>,
    rotation_blocks: Vec<usize>,
    velocities: Option<Vec<Configuration>>,
    accelerations: Option<Vec<Configuration>>,
}

impl Trajectory {
    pub fn new(dt: f64, frames: Vec<Configuration>) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Domain(format!("dt must be positive, got {dt}")));
        }
        if let Some(first) = frames.first() {
            let n = first.len();
            for f in &frames {
                check_len("trajectory frame", n, f.len())?;
                if f.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Domain("non-finite configuration entry".into()));
                }
            }
        }
        Ok(Self {
            dt,
            frames,
            rotation_blocks: Vec::new(),
            velocities: None,
            accelerations: None,
        })
    }

    /// Marks `[i, i+3)` blocks as axis-angle so differencing unwraps them.
    pub fn with_rotation_blocks(mut self, blocks: Vec<usize>) -> Self {
        self.rotation_blocks = blocks;
        self
    }

    /// Trajectory for `tree`, validating the frame width.
    pub fn for_tree(tree: &KinematicTree, dt: f64, frames: Vec<Configuration>) -> Result<Self> {
        for f in &frames {
            tree.check_config("trajectory frame", f.len())?;
        }
        Ok(Self::new(dt, frames)?.with_rotation_blocks(tree.rotation_blocks()))
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames.first().map_or(0, |f| f.len())
    }

    pub fn frames(&self) -> &[Configuration] {
        &self.frames
    }

    pub fn rotation_blocks(&self) -> &[usize] {
        &self.rotation_blocks
    }

    pub fn velocities(&self) -> Option<&[Configuration]> {
        self.velocities.as_deref()
    }

    pub fn accelerations(&self) -> Option<&[Configuration]> {
        self.accelerations.as_deref()
    }

    /// Returns a copy with `q_dot` and `q_ddot` populated. Rotation blocks
    /// are replaced by their lifted representation so that rates and
    /// coordinates stay paired (`J_r` must be evaluated where `r_dot` was
    /// measured).
    pub fn differentiate(&self) -> Result<Trajectory> {
        if self.frames.len() < 3 {
            return Err(Error::TooShort {
                frames: self.frames.len(),
                required: 3,
            });
        }
        let lifted = self.unwrapped_frames();
        let (vel, acc) = central_differences(&lifted, self.dt);
        Ok(Trajectory {
            dt: self.dt,
            frames: lifted,
            rotation_blocks: self.rotation_blocks.clone(),
            velocities: Some(vel),
            accelerations: Some(acc),
        })
    }

    /// Frames with each rotation block wrapped into the radius-pi ball and
    /// then lifted to the representation closest to the previous frame.
    pub fn unwrapped_frames(&self) -> Vec<Configuration> {
        let mut out = self.frames.clone();
        for &b in &self.rotation_blocks {
            let mut prev: Option<Vec3> = None;
            for frame in out.iter_mut() {
                let r = wrap_axis_angle(&triple(frame.as_slice(), b));
                let lifted = match prev {
                    Some(p) => lift_axis_angle(&r, &p),
                    None => r,
                };
                frame.as_mut_slice()[b..b + 3].copy_from_slice(lifted.as_slice());
                prev = Some(lifted);
            }
        }
        out
    }
}

/// Equivalent axis-angle vector with norm at most pi.
pub fn wrap_axis_angle(r: &Vec3) -> Vec3 {
    if r.norm() <= PI {
        *r
    } else {
        log_so3(&exp_so3(r))
    }
}

/// Among the equivalent vectors `(|r| + 2 pi k) r_hat`, the one closest to
/// `reference`.
pub fn lift_axis_angle(r: &Vec3, reference: &Vec3) -> Vec3 {
    let phi = r.norm();
    if phi < 1e-12 {
        // Identity: `2 pi k` along the reference axis are all equivalent.
        let rn = reference.norm();
        if rn < PI {
            return *r;
        }
        let axis = reference / rn;
        let k = (rn / (2.0 * PI)).round();
        return axis * (2.0 * PI * k);
    }
    let axis = r / phi;
    (-2..=2)
        .map(|k| axis * (phi + 2.0 * PI * k as f64))
        .min_by(|a, b| {
            (a - reference)
                .norm()
                .total_cmp(&(b - reference).norm())
        })
        .expect("non-empty candidate set")
}

/// Second-order finite differences of a sampled sequence: central in the
/// interior, one-sided at the ends. Requires at least three samples.
pub fn central_differences<T>(x: &[T], dt: f64) -> (Vec<T>, Vec<T>)
where
    T: Clone + Add<Output = T> + Sub<Output = T> + Mul<f64, Output = T>,
{
    let n = x.len();
    assert!(n >= 3, "central_differences needs at least three samples");
    let c = |i: usize| x[i].clone();
    let inv2 = 1.0 / (2.0 * dt);
    let invsq = 1.0 / (dt * dt);
    let mut vel = Vec::with_capacity(n);
    let mut acc = Vec::with_capacity(n);
    for t in 0..n {
        let v = if t == 0 {
            (c(1) * 4.0 - c(0) * 3.0 - c(2)) * inv2
        } else if t == n - 1 {
            (c(n - 1) * 3.0 - c(n - 2) * 4.0 + c(n - 3)) * inv2
        } else {
            (c(t + 1) - c(t - 1)) * inv2
        };
        let a = if t == 0 {
            if n >= 4 {
                (c(0) * 2.0 - c(1) * 5.0 + c(2) * 4.0 - c(3)) * invsq
            } else {
                (c(0) - c(1) * 2.0 + c(2)) * invsq
            }
        } else if t == n - 1 {
            if n >= 4 {
                (c(n - 1) * 2.0 - c(n - 2) * 5.0 + c(n - 3) * 4.0 - c(n - 4)) * invsq
            } else {
                (c(n - 1) - c(n - 2) * 2.0 + c(n - 3)) * invsq
            }
        } else {
            (c(t + 1) - c(t) * 2.0 + c(t - 1)) * invsq
        };
        vel.push(v);
        acc.push(a);
    }
    (vel, acc)
}
