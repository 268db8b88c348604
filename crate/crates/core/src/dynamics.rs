//! Rigid-body dynamics (RNEA, CRBA) and the coupled Euler-Lagrange
//! residuals of the human tree and the held object.

use nalgebra::{DMatrix, DVector, Matrix3x6, Matrix3xX, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contact::{
    CoefficientTensor, Coefficients, ContactMode, ContactModelConfig, ContactPointState,
    ForceBasis, TangentialDriver,
};
use crate::error::{check_len, Error, Result};
use crate::kinematics::{
    joint_motion, motion_subspace, point_jacobian_with_poses, subspace_bias, ContactPoint,
    ContactPointSet, ContactRole, Trajectory,
};
use crate::model::{KinematicTree, RigidObjectModel};
use crate::spatial::{
    angular, cross_force, cross_motion, join, linear, spatial_inertia, Pose, SMat, SVec, Vec3,
    Xform,
};
use crate::surfaces::{nearest_of, Attachment, Surface};

/// Standard gravity, m/s^2.
pub fn standard_gravity() -> Vec3 {
    Vec3::new(0.0, 0.0, -9.81)
}

/// `M`, `C`, `G` at one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsTerms {
    pub mass: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub gravity: DVector<f64>,
}

/// Per-link kinematic quantities from one forward sweep.
struct Sweep {
    xforms: Vec<Xform>,
    poses: Vec<Pose>,
    subspaces: Vec<Vec<SVec>>,
    /// Body-frame spatial velocity and acceleration (acceleration includes
    /// the fictitious `-g` base acceleration when gravity is requested).
    vel: Vec<SVec>,
    acc: Vec<SVec>,
}

fn check_state(tree: &KinematicTree, q: &[f64], qd: &[f64], qdd: &[f64]) -> Result<()> {
    tree.check_config("q", q.len())?;
    tree.check_config("q_dot", qd.len())?;
    tree.check_config("q_ddot", qdd.len())
}

fn sweep(tree: &KinematicTree, q: &[f64], qd: &[f64], qdd: &[f64], gravity: &Vec3) -> Sweep {
    let n = tree.num_links();
    let mut s = Sweep {
        xforms: Vec::with_capacity(n),
        poses: Vec::with_capacity(n),
        subspaces: Vec::with_capacity(n),
        vel: Vec::with_capacity(n),
        acc: Vec::with_capacity(n),
    };
    let base_acc = join(&Vec3::zeros(), &-gravity);
    for (i, joint) in tree.joints().iter().enumerate() {
        let off = tree.q_offset(i);
        let d = joint.kind.dof();
        let (qj, qdj, qddj) = (&q[off..off + d], &qd[off..off + d], &qdd[off..off + d]);
        let local = joint.origin.compose(&joint_motion(&joint.kind, qj));
        let x = local.child_xform();
        let cols = motion_subspace(&joint.kind, qj);
        let mut v_j = SVec::zeros();
        let mut a_j = subspace_bias(&joint.kind, qj, qdj);
        for (c, col) in cols.iter().enumerate() {
            v_j += col * qdj[c];
            a_j += col * qddj[c];
        }
        let (v_p, a_p, pose) = match joint.parent {
            Some(p) => (s.vel[p], s.acc[p], s.poses[p].compose(&local)),
            None => (SVec::zeros(), base_acc, local),
        };
        let v = x.apply_motion(&v_p) + v_j;
        let a = x.apply_motion(&a_p) + a_j + cross_motion(&v, &v_j);
        s.xforms.push(x);
        s.poses.push(pose);
        s.subspaces.push(cols);
        s.vel.push(v);
        s.acc.push(a);
    }
    s
}

fn link_inertias(tree: &KinematicTree) -> Vec<SMat> {
    tree.links()
        .iter()
        .map(|l| spatial_inertia(l.mass, &l.com_offset, &l.inertia))
        .collect()
}

/// Generalized forces `M q_ddot + C + G` by recursive Newton-Euler.
pub fn inverse_dynamics(
    tree: &KinematicTree,
    q: &[f64],
    qd: &[f64],
    qdd: &[f64],
    gravity: &Vec3,
) -> Result<DVector<f64>> {
    check_state(tree, q, qd, qdd)?;
    if gravity.iter().any(|g| !g.is_finite()) {
        return Err(Error::Domain("gravity must be finite".into()));
    }
    let s = sweep(tree, q, qd, qdd, gravity);
    let inertias = link_inertias(tree);
    let mut forces: Vec<SVec> = (0..tree.num_links())
        .map(|i| inertias[i] * s.acc[i] + cross_force(&s.vel[i], &(inertias[i] * s.vel[i])))
        .collect();
    let mut tau = DVector::zeros(tree.dof());
    for i in (0..tree.num_links()).rev() {
        let off = tree.q_offset(i);
        for (c, col) in s.subspaces[i].iter().enumerate() {
            tau[off + c] = col.dot(&forces[i]);
        }
        if let Some(p) = tree.parent(i) {
            let back = s.xforms[i].transpose_apply_force(&forces[i]);
            forces[p] += back;
        }
    }
    Ok(tau)
}

/// Joint-space mass matrix by composite-rigid-body aggregation.
pub fn mass_matrix(tree: &KinematicTree, q: &[f64]) -> Result<DMatrix<f64>> {
    tree.check_config("q", q.len())?;
    let zeros = vec![0.0; tree.dof()];
    let s = sweep(tree, q, &zeros, &zeros, &Vec3::zeros());
    let xmats: Vec<SMat> = s.xforms.iter().map(Xform::to_matrix).collect();
    let mut composite = link_inertias(tree);
    for i in (0..tree.num_links()).rev() {
        if let Some(p) = tree.parent(i) {
            let add = xmats[i].transpose() * composite[i] * xmats[i];
            composite[p] += add;
        }
    }
    let n = tree.dof();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..tree.num_links() {
        let oi = tree.q_offset(i);
        for (ci, si) in s.subspaces[i].iter().enumerate() {
            let mut f = composite[i] * si;
            for (cj, sj) in s.subspaces[i].iter().enumerate() {
                m[(oi + ci, oi + cj)] = sj.dot(&f);
            }
            let mut j = i;
            while let Some(p) = tree.parent(j) {
                f = xmats[j].transpose() * f;
                j = p;
                let oj = tree.q_offset(j);
                for (cj, sj) in s.subspaces[j].iter().enumerate() {
                    let v = sj.dot(&f);
                    m[(oi + ci, oj + cj)] = v;
                    m[(oj + cj, oi + ci)] = v;
                }
            }
        }
    }
    Ok(m)
}

/// `(C, G)`: velocity-product and gravity loads.
pub fn bias_and_gravity(
    tree: &KinematicTree,
    q: &[f64],
    qd: &[f64],
    gravity: &Vec3,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let zeros = vec![0.0; tree.dof()];
    let c = inverse_dynamics(tree, q, qd, &zeros, &Vec3::zeros())?;
    let g = inverse_dynamics(tree, q, &zeros, &zeros, gravity)?;
    Ok((c, g))
}

pub fn dynamics_terms(
    tree: &KinematicTree,
    q: &[f64],
    qd: &[f64],
    gravity: &Vec3,
) -> Result<DynamicsTerms> {
    let (bias, grav) = bias_and_gravity(tree, q, qd, gravity)?;
    Ok(DynamicsTerms {
        mass: mass_matrix(tree, q)?,
        bias,
        gravity: grav,
    })
}

/// World position, velocity and classical acceleration of body points.
pub fn point_motion(
    tree: &KinematicTree,
    q: &[f64],
    qd: &[f64],
    qdd: &[f64],
    points: &[(usize, Vec3)],
) -> Result<Vec<(Vec3, Vec3, Vec3)>> {
    check_state(tree, q, qd, qdd)?;
    let s = sweep(tree, q, qd, qdd, &Vec3::zeros());
    points
        .iter()
        .map(|&(body, offset)| {
            if body >= tree.num_links() {
                return Err(Error::UnknownBody(format!("link index {body}")));
            }
            let (v, a) = (s.vel[body], s.acc[body]);
            let (w, vl) = (angular(&v), linear(&v));
            let (wd, al) = (angular(&a), linear(&a));
            let pose = &s.poses[body];
            let vel = vl + w.cross(&offset);
            let acc = al + wd.cross(&offset) + w.cross(&vel);
            Ok((pose.apply(&offset), pose.rot * vel, pose.rot * acc))
        })
        .collect()
}

/// Dimension check for contact Jacobian/force pairs.
fn apply_contacts(
    out: &mut DVector<f64>,
    contacts: &[(Matrix3xX<f64>, Vec3)],
    sign: f64,
) -> Result<()> {
    for (j, lambda) in contacts {
        check_len("contact Jacobian columns", out.len(), j.ncols())?;
        *out += j.transpose() * lambda * sign;
    }
    Ok(())
}

/// Per-frame kinematic state of the human.
#[derive(Debug, Clone, Copy)]
pub struct FrameState<'a> {
    pub q: &'a [f64],
    pub qd: &'a [f64],
    pub qdd: &'a [f64],
}

/// `M q_ddot + C + G - tau - sum J_hs^T l_s - sum J_ho^T l_o`.
pub fn human_residual(
    tree: &KinematicTree,
    state: FrameState<'_>,
    tau: &[f64],
    scene_contacts: &[(Matrix3xX<f64>, Vec3)],
    object_contacts: &[(Matrix3xX<f64>, Vec3)],
    gravity: &Vec3,
) -> Result<DVector<f64>> {
    tree.check_config("tau", tau.len())?;
    let mut r = inverse_dynamics(tree, state.q, state.qd, state.qdd, gravity)?;
    r -= DVector::from_column_slice(tau);
    apply_contacts(&mut r, scene_contacts, -1.0)?;
    apply_contacts(&mut r, object_contacts, -1.0)?;
    Ok(r)
}

/// `M_o q_ddot_o + C_o + G_o + sum J_o^T l_o`, with the forces `l_o` the
/// same vectors that act on the human.
pub fn object_residual(
    obj: &RigidObjectModel,
    state: FrameState<'_>,
    hand_contacts: &[(Matrix3x6<f64>, Vec3)],
    gravity: &Vec3,
) -> Result<Vector6<f64>> {
    let r = inverse_dynamics(obj.as_tree(), state.q, state.qd, state.qdd, gravity)?;
    let mut r = Vector6::from_column_slice(r.as_slice());
    for (j, lambda) in hand_contacts {
        r += j.transpose() * lambda;
    }
    Ok(r)
}

/// Object `3 x 6` point Jacobian at body-frame point `x_local`.
pub fn object_point_jacobian(q_o: &[f64], x_local: &Vec3) -> Matrix3x6<f64> {
    let tree = object_tree();
    let poses = [crate::surfaces::object_pose(q_o)];
    let j = point_jacobian_with_poses(tree, q_o, &poses, 0, x_local);
    Matrix3x6::from_column_slice(j.as_slice())
}

fn object_tree() -> &'static KinematicTree {
    use std::sync::OnceLock;
    static TREE: OnceLock<KinematicTree> = OnceLock::new();
    TREE.get_or_init(|| {
        KinematicTree::single_body("object", 1.0, crate::spatial::Mat3::identity(), Vec3::zeros())
            .expect("unit body is valid")
    })
}

/// Residual of every frame plus the L1 loss value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub human: Vec<DVector<f64>>,
    /// Empty vectors when no object is present.
    pub object: Vec<DVector<f64>>,
    pub human_l1: Vec<f64>,
    pub object_l1: Vec<f64>,
    pub aggregate: f64,
}

impl ResidualReport {
    pub fn from_frames(frames: Vec<(DVector<f64>, Option<Vector6<f64>>)>) -> Self {
        let mut report = ResidualReport {
            human: Vec::with_capacity(frames.len()),
            object: Vec::with_capacity(frames.len()),
            human_l1: Vec::with_capacity(frames.len()),
            object_l1: Vec::with_capacity(frames.len()),
            aggregate: 0.0,
        };
        for (h, o) in frames {
            let o = o.map_or_else(|| DVector::zeros(0), |o| DVector::from_column_slice(o.as_slice()));
            report.human_l1.push(h.lp_norm(1));
            report.object_l1.push(o.lp_norm(1));
            report.human.push(h);
            report.object.push(o);
        }
        report.aggregate = report.human_l1.iter().sum::<f64>() + report.object_l1.iter().sum::<f64>();
        report
    }

    pub fn frame_l1(&self, t: usize) -> f64 {
        self.human_l1[t] + self.object_l1[t]
    }
}

/// A rigid object bound to the surface that carries its pose trajectory.
#[derive(Debug, Clone)]
pub struct HeldObject {
    pub model: RigidObjectModel,
    pub surface: Surface,
}

impl HeldObject {
    pub fn new(model: RigidObjectModel, surface: Surface) -> Result<Self> {
        match surface.attachment {
            Attachment::Dynamic(_) => Ok(Self { model, surface }),
            Attachment::Static => Err(Error::Domain(
                "object surface must be attached to a pose trajectory".into(),
            )),
        }
    }

    pub fn track(&self) -> &Trajectory {
        match &self.surface.attachment {
            Attachment::Dynamic(t) => t,
            Attachment::Static => unreachable!("checked in HeldObject::new"),
        }
    }

    fn state(&self, t: usize) -> Result<FrameState<'_>> {
        frame_state(self.track(), t)
    }
}

fn frame_state(track: &Trajectory, t: usize) -> Result<FrameState<'_>> {
    let q = track.frames().get(t).ok_or(Error::MissingPose(t))?;
    let qd = track.velocities().ok_or(Error::TooShort { frames: track.len(), required: 3 })?;
    let qdd = track.accelerations().ok_or(Error::TooShort { frames: track.len(), required: 3 })?;
    Ok(FrameState {
        q: q.as_slice(),
        qd: qd[t].as_slice(),
        qdd: qdd[t].as_slice(),
    })
}

/// Everything the coupled residual needs besides torques and coefficients.
#[derive(Debug, Clone)]
pub struct CoupledSystem {
    pub tree: KinematicTree,
    /// Differentiated human trajectory.
    pub human: Trajectory,
    pub object: Option<HeldObject>,
    pub scene: Vec<Surface>,
    pub points: ContactPointSet,
    pub config: ContactModelConfig,
    pub gravity: Vec3,
}

/// One candidate contact at one frame, with the force linear in the
/// coefficients up to `|k|`.
#[derive(Debug, Clone)]
pub struct ContactTerm {
    pub role: ContactRole,
    pub state: ContactPointState,
    pub basis: ForceBasis,
    pub human_jacobian: Matrix3xX<f64>,
    pub object_jacobian: Option<Matrix3x6<f64>>,
}

/// Coefficient-independent pieces of one frame's residual.
#[derive(Debug, Clone)]
pub struct FrameTerms {
    /// `M q_ddot + C + G` of the human.
    pub human_unforced: DVector<f64>,
    pub object_unforced: Option<Vector6<f64>>,
    pub contacts: Vec<ContactTerm>,
}

impl FrameTerms {
    /// Contact forces on the human, one per point.
    pub fn forces(&self, coeffs: &[Coefficients]) -> Vec<Vec3> {
        self.contacts
            .iter()
            .zip(coeffs)
            .map(|(c, k)| c.basis.force(k))
            .collect()
    }

    pub fn residual(&self, tau: &[f64], coeffs: &[Coefficients]) -> (DVector<f64>, Option<Vector6<f64>>) {
        let mut rh = &self.human_unforced - DVector::from_column_slice(tau);
        let mut ro = self.object_unforced;
        for (term, lambda) in self.contacts.iter().zip(self.forces(coeffs)) {
            rh -= term.human_jacobian.transpose() * lambda;
            if let (Some(r), Some(jo)) = (ro.as_mut(), term.object_jacobian) {
                *r += jo.transpose() * lambda;
            }
        }
        (rh, ro)
    }
}

impl CoupledSystem {
    /// Builds the system, differentiating `human` (which must have at
    /// least three frames) and checking frame alignment with the object.
    pub fn new(
        tree: KinematicTree,
        human: &Trajectory,
        object: Option<HeldObject>,
        scene: Vec<Surface>,
        points: ContactPointSet,
        config: ContactModelConfig,
    ) -> Result<Self> {
        config.validate()?;
        tree.check_config("human trajectory", human.width())?;
        let human = human
            .clone()
            .with_rotation_blocks(tree.rotation_blocks())
            .differentiate()?;
        if let Some(obj) = &object {
            check_len("object frames", human.len(), obj.track().len())?;
        }
        if points.scene_count() > 0 && scene.is_empty() {
            return Err(Error::EmptySurface);
        }
        if points.object_count() > 0 && object.is_none() {
            return Err(Error::Domain("object contact points without an object".into()));
        }
        for p in &points.points {
            if p.body >= tree.num_links() {
                return Err(Error::UnknownBody(format!("link index {}", p.body)));
            }
        }
        Ok(Self {
            tree,
            human,
            object,
            scene,
            points,
            config,
            gravity: standard_gravity(),
        })
    }

    pub fn frames(&self) -> usize {
        self.human.len()
    }

    pub fn dof(&self) -> usize {
        self.tree.dof()
    }

    pub fn human_state(&self, t: usize) -> Result<FrameState<'_>> {
        frame_state(&self.human, t)
    }

    pub fn frame_terms(&self, t: usize) -> Result<FrameTerms> {
        let hs = self.human_state(t)?;
        let human_unforced = inverse_dynamics(&self.tree, hs.q, hs.qd, hs.qdd, &self.gravity)?;
        let object_state = match &self.object {
            Some(o) => Some(o.state(t)?),
            None => None,
        };
        let object_unforced = match (&self.object, object_state) {
            (Some(o), Some(s)) => Some(Vector6::from_column_slice(
                inverse_dynamics(o.model.as_tree(), s.q, s.qd, s.qdd, &self.gravity)?.as_slice(),
            )),
            _ => None,
        };
        let poses = crate::kinematics::forward_kinematics(&self.tree, hs.q)?;
        let anchors: Vec<(usize, Vec3)> = self.points.points.iter().map(|p| (p.body, p.offset)).collect();
        let motion = point_motion(&self.tree, hs.q, hs.qd, hs.qdd, &anchors)?;
        let mut contacts = Vec::with_capacity(self.points.points.len());
        for (cp, (p, p_dot, p_ddot)) in self.points.points.iter().zip(motion) {
            contacts.push(self.contact_term(t, hs, &poses, cp, p, p_dot, p_ddot, object_state)?);
        }
        Ok(FrameTerms {
            human_unforced,
            object_unforced,
            contacts,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn contact_term(
        &self,
        t: usize,
        hs: FrameState<'_>,
        poses: &[Pose],
        cp: &ContactPoint,
        p: Vec3,
        p_dot: Vec3,
        p_ddot: Vec3,
        object_state: Option<FrameState<'_>>,
    ) -> Result<ContactTerm> {
        let human_jacobian = point_jacobian_with_poses(&self.tree, hs.q, poses, cp.body, &cp.offset);
        let (query, driver, mode, object_jacobian) = match cp.role {
            ContactRole::Scene => (
                nearest_of(&self.scene, &p, t)?,
                TangentialDriver::PointAcceleration(p_ddot),
                ContactMode::StaticScene,
                None,
            ),
            ContactRole::Object => {
                let obj = self.object.as_ref().expect("checked in CoupledSystem::new");
                let os = object_state.expect("object present");
                let query = obj.surface.nearest(&p, t)?;
                let x_local = obj.surface.pose(t)?.apply_inverse(&query.x);
                let accel = Vec3::new(os.qdd[3], os.qdd[4], os.qdd[5]);
                (
                    query,
                    TangentialDriver::ObjectAcceleration {
                        accel,
                        gravity: self.gravity,
                    },
                    ContactMode::MovingObject,
                    Some(object_point_jacobian(os.q, &x_local)),
                )
            }
        };
        let state = ContactPointState {
            p,
            p_dot,
            query,
            driver,
        };
        Ok(ContactTerm {
            role: cp.role,
            basis: ForceBasis::new(&state, &self.config, mode)?,
            state,
            human_jacobian,
            object_jacobian,
        })
    }

    /// Frame terms for every frame, computed in parallel, in frame order.
    pub fn all_frame_terms(&self) -> Result<Vec<FrameTerms>> {
        (0..self.frames())
            .into_par_iter()
            .map(|t| self.frame_terms(t))
            .collect()
    }
}

/// Coupled human/object residual over the whole trajectory.
pub fn coupled_residual(
    system: &CoupledSystem,
    tau: &[DVector<f64>],
    coeffs: &CoefficientTensor,
) -> Result<ResidualReport> {
    let terms = system.all_frame_terms()?;
    residual_from_terms(system, &terms, tau, coeffs)
}

pub fn residual_from_terms(
    system: &CoupledSystem,
    terms: &[FrameTerms],
    tau: &[DVector<f64>],
    coeffs: &CoefficientTensor,
) -> Result<ResidualReport> {
    check_len("torque frames", system.frames(), tau.len())?;
    check_len("coefficient frames", system.frames(), coeffs.frames())?;
    check_len("coefficient points", system.points.points.len(), coeffs.points())?;
    for t in tau {
        system.tree.check_config("tau", t.len())?;
    }
    let frames = terms
        .par_iter()
        .enumerate()
        .map(|(t, ft)| {
            let c: Vec<Coefficients> = (0..coeffs.points()).map(|k| coeffs.get(t, k)).collect();
            ft.residual(tau[t].as_slice(), &c)
        })
        .collect();
    Ok(ResidualReport::from_frames(frames))
}

/// Indices of root DOFs, which a human cannot actuate directly.
pub fn root_dofs(tree: &KinematicTree) -> std::ops::Range<usize> {
    0..tree.joints()[0].kind.dof()
}

/// `1` for actuated DOFs, `0` for the root when `actuate_root` is false.
pub fn actuation_mask(tree: &KinematicTree, actuate_root: bool) -> DVector<f64> {
    let mut m = DVector::from_element(tree.dof(), 1.0);
    if !actuate_root {
        for i in root_dofs(tree) {
            m[i] = 0.0;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{box_inertia, random_tree, JointKind, KinematicTree};
    use crate::spatial::Mat3;
    use crate::surfaces::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
    }

    /// Fixed-root pendulum: revolute about y, 1 kg point mass 1 m below.
    pub(crate) fn pendulum() -> KinematicTree {
        crate::model::pendulum_tree(1.0, 1.0).unwrap()
    }

    fn pendulum_state(theta: f64) -> Vec<f64> {
        let mut q = vec![0.0; 7];
        q[6] = theta;
        q
    }

    #[test]
    fn point_mass_statics() {
        let tree = KinematicTree::single_body("b", 1.0, Mat3::zeros(), Vec3::zeros()).unwrap();
        let z = [0.0; 6];
        let tau = inverse_dynamics(&tree, &z, &z, &z, &standard_gravity()).unwrap();
        assert!((tau.rows(3, 3) - DVector::from_vec(vec![0.0, 0.0, 9.81])).norm() < 1e-12);
        assert!(tau.rows(0, 3).norm() < 1e-12);
    }

    #[test]
    fn pendulum_statics_and_inertia() {
        let tree = pendulum();
        let z = vec![0.0; 7];
        let g = standard_gravity();
        let hang = inverse_dynamics(&tree, &pendulum_state(0.0), &z, &z, &g).unwrap();
        assert!(hang[6].abs() < 1e-12);
        let side = inverse_dynamics(&tree, &pendulum_state(std::f64::consts::FRAC_PI_2), &z, &z, &g).unwrap();
        assert!((side[6].abs() - 9.81).abs() < 1e-12);
        let m = mass_matrix(&tree, &pendulum_state(0.3)).unwrap();
        assert!((m[(6, 6)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pendulum_centripetal_load() {
        // Spinning at w about y at angle th: the root must supply the
        // centripetal force m l w^2 toward the pivot; the joint sees none.
        let tree = pendulum();
        let (th, w) = (0.4_f64, 3.0);
        let mut qd = vec![0.0; 7];
        qd[6] = w;
        let (c, _) = bias_and_gravity(&tree, &pendulum_state(th), &qd, &Vec3::zeros()).unwrap();
        assert!(c[6].abs() < 1e-12);
        // bob at (-sin th, 0, -cos th) for a +y rotation of (0, 0, -1)
        let bob = Vec3::new(-th.sin(), 0.0, -th.cos());
        let expected = -bob * w * w;
        assert!((Vec3::new(c[3], c[4], c[5]) - expected).norm() < 1e-12);
    }

    #[test]
    fn free_particle_mass_block() {
        let tree = KinematicTree::single_body("b", 2.0, Mat3::zeros(), Vec3::zeros()).unwrap();
        let m = mass_matrix(&tree, &[0.3, -0.1, 0.2, 1.0, 2.0, 3.0]).unwrap();
        assert!((m.view((3, 3), (3, 3)) - DMatrix::identity(3, 3) * 2.0).norm() < 1e-12);
    }

    #[test]
    fn crba_matches_rnea_on_random_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for bodies in [1, 3, 8] {
            let tree = random_tree(&mut rng, bodies);
            let n = tree.dof();
            let q = random_vec(&mut rng, n, 1.2);
            let qd = random_vec(&mut rng, n, 2.0);
            let qdd = random_vec(&mut rng, n, 2.0);
            let g = standard_gravity();
            let id = inverse_dynamics(&tree, &q, &qd, &qdd, &g).unwrap();
            let terms = dynamics_terms(&tree, &q, &qd, &g).unwrap();
            let rebuilt = &terms.mass * DVector::from_vec(qdd) + &terms.bias + &terms.gravity;
            let scale = id.norm().max(1.0);
            assert!((rebuilt - id).norm() <= 1e-8 * scale);
            let m = &terms.mass;
            assert!((m - m.transpose()).norm() <= 1e-9 * m.norm());
            assert!(m.clone().cholesky().is_some());
        }
    }

    #[test]
    fn humanoid_crba_matches_rnea() {
        let tree = crate::model::humanoid_24();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = tree.dof();
        let q = random_vec(&mut rng, n, 0.8);
        let qd = random_vec(&mut rng, n, 1.0);
        let qdd = random_vec(&mut rng, n, 1.0);
        let g = standard_gravity();
        let id = inverse_dynamics(&tree, &q, &qd, &qdd, &g).unwrap();
        let terms = dynamics_terms(&tree, &q, &qd, &g).unwrap();
        let rebuilt = &terms.mass * DVector::from_vec(qdd) + &terms.bias + &terms.gravity;
        assert!((rebuilt - &id).norm() <= 1e-8 * id.norm().max(1.0));
    }

    #[test]
    fn point_motion_matches_jacobian_and_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tree = random_tree(&mut rng, 4);
        let n = tree.dof();
        let q = DVector::from_vec(random_vec(&mut rng, n, 1.0));
        let qd = DVector::from_vec(random_vec(&mut rng, n, 1.0));
        let qdd = DVector::from_vec(random_vec(&mut rng, n, 1.0));
        let body = tree.num_links() - 1;
        let offset = Vec3::new(0.1, -0.2, 0.05);
        let pm = |q: &DVector<f64>, qd: &DVector<f64>| {
            point_motion(&tree, q.as_slice(), qd.as_slice(), qdd.as_slice(), &[(body, offset)]).unwrap()[0]
        };
        let (_, v, a) = pm(&q, &qd);
        let jac = crate::kinematics::point_jacobian(&tree, q.as_slice(), body, &offset).unwrap();
        assert!((v - &jac * &qd).norm() < 1e-12);
        // d/dt of velocity along (qd, qdd)
        let h = 1e-6;
        let (_, vp, _) = pm(&(&q + &qd * h), &(&qd + &qdd * h));
        let (_, vm, _) = pm(&(&q - &qd * h), &(&qd - &qdd * h));
        assert!((a - (vp - vm) / (2.0 * h)).norm() < 1e-6);
    }

    #[test]
    fn block_on_plane_residuals() {
        let tree = KinematicTree::single_body("block", 1.0, box_inertia(1.0, Vec3::repeat(0.05)).unwrap(), Vec3::zeros())
            .unwrap();
        let z = [0.0; 6];
        let state = FrameState { q: &z, qd: &z, qdd: &z };
        let g = standard_gravity();
        let j = crate::kinematics::point_jacobian(&tree, &z, 0, &Vec3::zeros()).unwrap();
        let r = human_residual(&tree, state, &z, &[(j.clone(), Vec3::new(0.0, 0.0, 9.81))], &[], &g).unwrap();
        assert!(r.norm() < 1e-12);
        let r = human_residual(&tree, state, &z, &[(j, Vec3::zeros())], &[], &g).unwrap();
        assert!((r.lp_norm(1) - 9.81).abs() < 1e-12);
        // free fall is ballistic-consistent
        let fall = [0.0, 0.0, 0.0, 0.0, 0.0, -9.81];
        let r = human_residual(&tree, FrameState { q: &z, qd: &z, qdd: &fall }, &z, &[], &[], &g).unwrap();
        assert!(r.norm() < 1e-12);
    }

    #[test]
    fn held_object_residuals() {
        let obj = RigidObjectModel::new(
            2.0,
            box_inertia(2.0, Vec3::repeat(0.08)).unwrap(),
            Shape::cuboid(Vec3::repeat(0.08)).unwrap(),
        )
        .unwrap();
        let z = [0.0; 6];
        let state = FrameState { q: &z, qd: &z, qdd: &z };
        let g = standard_gravity();
        let jo = object_point_jacobian(&z, &Vec3::zeros());
        // the hand pushes up on the object: the force on the human is -that
        let on_human = Vec3::new(0.0, 0.0, -19.62);
        let r = object_residual(&obj, state, &[(jo, on_human)], &g).unwrap();
        assert!(r.norm() < 1e-12);
        let r = object_residual(&obj, state, &[(jo, on_human * 0.5)], &g).unwrap();
        assert!((r.lp_norm(1) - 9.81).abs() < 1e-12);
        let fall = [0.0, 0.0, 0.0, 0.0, 0.0, -9.81];
        let r = object_residual(&obj, FrameState { q: &z, qd: &z, qdd: &fall }, &[], &g).unwrap();
        assert!(r.norm() < 1e-12);
    }

    #[test]
    fn third_law_sign_flip() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let tree = random_tree(&mut rng, 3);
        let n = tree.dof();
        let q = random_vec(&mut rng, n, 1.0);
        let qd = random_vec(&mut rng, n, 1.0);
        let qdd = random_vec(&mut rng, n, 1.0);
        let tau = random_vec(&mut rng, n, 1.0);
        let g = standard_gravity();
        let st = FrameState { q: &q, qd: &qd, qdd: &qdd };
        let jh = crate::kinematics::point_jacobian(&tree, &q, 2, &Vec3::new(0.1, 0.0, 0.0)).unwrap();
        let delta = Vec3::new(0.3, -1.2, 0.7);
        let base = human_residual(&tree, st, &tau, &[], &[], &g).unwrap();
        let pushed = human_residual(&tree, st, &tau, &[], &[(jh.clone(), delta)], &g).unwrap();
        assert!((&pushed - &base + jh.transpose() * delta).norm() < 1e-12);

        let obj = RigidObjectModel::new(1.0, Mat3::identity() * 0.01, Shape::sphere(Vec3::zeros(), 0.1).unwrap()).unwrap();
        let qo = random_vec(&mut rng, 6, 1.0);
        let so = FrameState { q: &qo, qd: &qo, qdd: &qo };
        let jo = object_point_jacobian(&qo, &Vec3::new(0.0, 0.1, 0.0));
        let ob = object_residual(&obj, so, &[], &g).unwrap();
        let op = object_residual(&obj, so, &[(jo, delta)], &g).unwrap();
        let om = object_residual(&obj, so, &[(jo, -delta)], &g).unwrap();
        assert!((op - ob - jo.transpose() * delta).norm() < 1e-12);
        assert!((om - ob + jo.transpose() * delta).norm() < 1e-12);
    }

    #[test]
    fn root_mask_zeroes_free_root() {
        let tree = pendulum();
        let m = actuation_mask(&tree, false);
        assert_eq!(m.as_slice(), &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(matches!(tree.joints()[0].kind, JointKind::Free));
    }
}
