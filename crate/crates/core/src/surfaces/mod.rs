//! Queryable contact geometry: nearest point, outward normal, signed
//! distance and surface-point velocity for static and object-attached
//! surfaces.

mod bvh;
mod mesh;
mod voxel;

use std::sync::Arc;

pub use mesh::{Feature, TriMesh, BRUTE_FORCE_LIMIT};
pub use voxel::VoxelGrid;

use crate::error::{Error, Result};
use crate::kinematics::Trajectory;
use crate::spatial::{exp_so3, right_jacobian, Pose, Vec3};

const UNIT_TOL: f64 = 1e-9;

/// Result of a nearest-point query, all in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceQuery {
    pub x: Vec3,
    /// Outward unit normal at `x`.
    pub n: Vec3,
    /// Positive outside.
    pub signed_distance: f64,
    pub x_velocity: Vec3,
}

/// Geometry in its own frame.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Half-space boundary through `point` with outward `normal`.
    Plane { point: Vec3, normal: Vec3 },
    Sphere { center: Vec3, radius: f64 },
    /// Axis-aligned box centred on the frame origin.
    Box { half_extents: Vec3 },
    Mesh(Arc<TriMesh>),
}

/// Closest point in the shape frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalQuery {
    pub x: Vec3,
    pub n: Vec3,
    pub signed_distance: f64,
}

impl Shape {
    pub fn plane(point: Vec3, normal: Vec3) -> Result<Self> {
        let norm = normal.norm();
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::Norm(norm));
        }
        Ok(Shape::Plane { point, normal })
    }

    pub fn sphere(center: Vec3, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Domain(format!("sphere radius must be > 0, got {radius}")));
        }
        Ok(Shape::Sphere { center, radius })
    }

    pub fn cuboid(half_extents: Vec3) -> Result<Self> {
        if half_extents.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::Domain(format!(
                "box half extents must be > 0, got {half_extents:?}"
            )));
        }
        Ok(Shape::Box { half_extents })
    }

    pub fn query(&self, p: &Vec3) -> Result<LocalQuery> {
        match self {
            Shape::Plane { point, normal } => {
                let d = (p - point).dot(normal);
                Ok(LocalQuery {
                    x: p - normal * d,
                    n: *normal,
                    signed_distance: d,
                })
            }
            Shape::Sphere { center, radius } => {
                let rel = p - center;
                let r = rel.norm();
                let n = if r > 0.0 { rel / r } else { Vec3::x() };
                Ok(LocalQuery {
                    x: center + n * *radius,
                    n,
                    signed_distance: r - radius,
                })
            }
            Shape::Box { half_extents } => Ok(box_query(half_extents, p)),
            Shape::Mesh(mesh) => mesh.nearest(p),
        }
    }
}

fn box_query(h: &Vec3, p: &Vec3) -> LocalQuery {
    let inside = (0..3).all(|i| p[i].abs() <= h[i]);
    if inside {
        // Nearest face: smallest slack; ties resolve to the lowest axis.
        let (axis, slack) = (0..3)
            .map(|i| (i, h[i] - p[i].abs()))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
        let sign = if p[axis] >= 0.0 { 1.0 } else { -1.0 };
        let mut x = *p;
        x[axis] = sign * h[axis];
        let mut n = Vec3::zeros();
        n[axis] = sign;
        LocalQuery {
            x,
            n,
            signed_distance: -slack,
        }
    } else {
        let x = Vec3::from_fn(|i, _| p[i].clamp(-h[i], h[i]));
        let diff = p - x;
        let d = diff.norm();
        LocalQuery {
            x,
            n: diff / d,
            signed_distance: d,
        }
    }
}

/// Where a surface lives.
#[derive(Debug, Clone, PartialEq)]
pub enum Attachment {
    /// World frame, motionless.
    Static,
    /// Bound to a rigid object's pose trajectory (`[axis-angle, translation]`
    /// per frame, with rates populated).
    Dynamic(Arc<Trajectory>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub shape: Shape,
    pub attachment: Attachment,
}

impl Surface {
    pub fn fixed(shape: Shape) -> Self {
        Self {
            shape,
            attachment: Attachment::Static,
        }
    }

    /// Attaches `shape` to an object pose trajectory, differentiating it if
    /// rates are missing.
    pub fn attached(shape: Shape, poses: &Trajectory) -> Result<Self> {
        crate::error::check_len("object pose width", 6, poses.width())?;
        let track = if poses.velocities().is_some() {
            poses.clone()
        } else {
            poses.clone().with_rotation_blocks(vec![0]).differentiate()?
        };
        Ok(Self {
            shape,
            attachment: Attachment::Dynamic(Arc::new(track)),
        })
    }

    /// Body-to-world pose at frame `t` (identity for static surfaces).
    pub fn pose(&self, t: usize) -> Result<Pose> {
        match &self.attachment {
            Attachment::Static => Ok(Pose::identity()),
            Attachment::Dynamic(track) => {
                let q = track.frames().get(t).ok_or(Error::MissingPose(t))?;
                Ok(object_pose(q.as_slice()))
            }
        }
    }

    /// Nearest surface point to world point `p` at frame `t`.
    pub fn nearest(&self, p: &Vec3, t: usize) -> Result<SurfaceQuery> {
        let pose = self.pose(t)?;
        let local = self.shape.query(&pose.apply_inverse(p))?;
        let x = pose.apply(&local.x);
        Ok(SurfaceQuery {
            x,
            n: pose.rot * local.n,
            signed_distance: local.signed_distance,
            x_velocity: self.surface_velocity(&x, t)?,
        })
    }

    /// Velocity of the surface material point at world position `x`.
    pub fn surface_velocity(&self, x: &Vec3, t: usize) -> Result<Vec3> {
        match &self.attachment {
            Attachment::Static => Ok(Vec3::zeros()),
            Attachment::Dynamic(track) => {
                let q = track.frames().get(t).ok_or(Error::MissingPose(t))?;
                let qd = track
                    .velocities()
                    .and_then(|v| v.get(t))
                    .ok_or(Error::MissingPose(t))?;
                let (v, w) = object_twist(q.as_slice(), qd.as_slice());
                Ok(v + w.cross(&(x - Vec3::new(q[3], q[4], q[5]))))
            }
        }
    }
}

/// Nearest point on `shape` placed at `pose` and moving with world twist
/// `(v, w)` of its origin.
pub fn query_at_pose(shape: &Shape, pose: &Pose, twist: (Vec3, Vec3), p: &Vec3) -> Result<SurfaceQuery> {
    let local = shape.query(&pose.apply_inverse(p))?;
    let x = pose.apply(&local.x);
    Ok(SurfaceQuery {
        x,
        n: pose.rot * local.n,
        signed_distance: local.signed_distance,
        x_velocity: twist.0 + twist.1.cross(&(x - pose.trans)),
    })
}

/// Pose of a free body from `[axis-angle, translation]`.
pub fn object_pose(q: &[f64]) -> Pose {
    Pose::new(
        exp_so3(&Vec3::new(q[0], q[1], q[2])),
        Vec3::new(q[3], q[4], q[5]),
    )
}

/// World linear velocity of the origin and world angular velocity.
pub fn object_twist(q: &[f64], qd: &[f64]) -> (Vec3, Vec3) {
    let r = Vec3::new(q[0], q[1], q[2]);
    let w_body = right_jacobian(&r) * Vec3::new(qd[0], qd[1], qd[2]);
    (Vec3::new(qd[3], qd[4], qd[5]), exp_so3(&r) * w_body)
}

/// Query against a union of surfaces: the one with the smallest signed
/// distance wins (penetrated surfaces first).
pub fn nearest_of(surfaces: &[Surface], p: &Vec3, t: usize) -> Result<SurfaceQuery> {
    let mut best: Option<SurfaceQuery> = None;
    for s in surfaces {
        let q = s.nearest(p, t)?;
        if best.is_none_or(|b| q.signed_distance < b.signed_distance) {
            best = Some(q);
        }
    }
    best.ok_or(Error::EmptySurface)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn plane_projection() {
        let s = Surface::fixed(Shape::plane(Vec3::zeros(), Vec3::z()).unwrap());
        let q = s.nearest(&Vec3::new(0.3, -0.2, 0.5), 0).unwrap();
        assert_eq!(q.x, Vec3::new(0.3, -0.2, 0.0));
        assert_eq!(q.n, Vec3::z());
        assert_eq!(q.signed_distance, 0.5);
        assert_eq!(q.x_velocity, Vec3::zeros());
        assert!(Shape::plane(Vec3::zeros(), Vec3::new(0.0, 0.0, 1.1)).is_err());
    }

    #[test]
    fn sphere_query() {
        let s = Surface::fixed(Shape::sphere(Vec3::zeros(), 1.0).unwrap());
        let q = s.nearest(&Vec3::new(2.0, 0.0, 0.0), 0).unwrap();
        assert_eq!(q.x, Vec3::x());
        assert_eq!(q.n, Vec3::x());
        assert_eq!(q.signed_distance, 1.0);
    }

    #[test]
    fn box_inside_and_outside() {
        let b = Shape::cuboid(Vec3::new(1.0, 2.0, 3.0)).unwrap();
        let q = b.query(&Vec3::new(0.9, 0.0, 0.0)).unwrap();
        assert!((q.signed_distance + 0.1).abs() < 1e-15);
        assert_eq!(q.n, Vec3::x());
        let q = b.query(&Vec3::new(2.0, 3.0, 0.0)).unwrap();
        assert_eq!(q.x, Vec3::new(1.0, 2.0, 0.0));
        assert!((q.signed_distance - 2f64.sqrt()).abs() < 1e-15);
    }

    fn spinning_track(dt: f64) -> Trajectory {
        let frames: Vec<_> = (0..5)
            .map(|t| DVector::from_vec(vec![0.0, 0.0, 2.0 * t as f64 * dt, 0.0, 0.0, 0.0]))
            .collect();
        Trajectory::new(dt, frames).unwrap().with_rotation_blocks(vec![0])
    }

    #[test]
    fn spinning_object_surface_velocity() {
        let s = Surface::attached(Shape::sphere(Vec3::zeros(), 0.5).unwrap(), &spinning_track(0.01))
            .unwrap();
        // at frame 0 the body frame equals the world frame
        let v = s.surface_velocity(&Vec3::new(0.5, 0.0, 0.0), 0).unwrap();
        assert!((v - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn translating_object_moves_every_point() {
        let dt = 0.02;
        let frames: Vec<_> = (0..4)
            .map(|t| DVector::from_vec(vec![0.0, 0.0, 0.0, t as f64 * dt, 0.0, 0.0]))
            .collect();
        let track = Trajectory::new(dt, frames).unwrap();
        let s = Surface::attached(Shape::cuboid(Vec3::new(0.1, 0.1, 0.1)).unwrap(), &track).unwrap();
        for x in [Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.0, -0.1, 0.05)] {
            let v = s.surface_velocity(&x, 2).unwrap();
            assert!((v - Vec3::x()).norm() < 1e-12);
        }
        assert!(matches!(s.nearest(&Vec3::zeros(), 10), Err(Error::MissingPose(10))));
    }

    #[test]
    fn dynamic_query_matches_body_frame_query() {
        let dt = 0.01;
        let frames: Vec<_> = (0..4)
            .map(|t| {
                let s = t as f64;
                DVector::from_vec(vec![0.3 + 0.1 * s, -0.2, 0.4, 1.0 + s * 0.01, 0.5, -0.3])
            })
            .collect();
        let track = Trajectory::new(dt, frames).unwrap();
        let shape = Shape::cuboid(Vec3::new(0.2, 0.3, 0.1)).unwrap();
        let s = Surface::attached(shape.clone(), &track).unwrap();
        let pose = s.pose(1).unwrap();
        let p = Vec3::new(1.3, 0.2, 0.0);
        let world = s.nearest(&p, 1).unwrap();
        let local = shape.query(&pose.apply_inverse(&p)).unwrap();
        assert!((world.x - pose.apply(&local.x)).norm() < 1e-12);
        assert!((world.n - pose.rot * local.n).norm() < 1e-12);
        assert!((world.signed_distance - local.signed_distance).abs() < 1e-12);
    }

    #[test]
    fn union_prefers_penetrated_surface() {
        let floor = Surface::fixed(Shape::plane(Vec3::zeros(), Vec3::z()).unwrap());
        let wall = Surface::fixed(Shape::plane(Vec3::new(1.0, 0.0, 0.0), -Vec3::x()).unwrap());
        let q = nearest_of(&[floor, wall], &Vec3::new(1.05, 0.0, 0.5), 0).unwrap();
        assert!((q.signed_distance + 0.05).abs() < 1e-15);
        assert!(matches!(nearest_of(&[], &Vec3::zeros(), 0), Err(Error::EmptySurface)));
    }
}
