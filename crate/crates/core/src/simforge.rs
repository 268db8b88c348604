//! Forward simulation of simple bodies under the contact model, producing
//! trajectories with known forces and torques.

use nalgebra::{DMatrix, DVector, Matrix3x6, Matrix3xX, Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::contact::{
    contact_force_parts, gate, static_friction, CoefficientTensor,
    Coefficients, ContactMode, ContactModelConfig, ContactPointState, TangentialDriver,
};
use crate::dynamics::{
    inverse_dynamics, mass_matrix, object_point_jacobian, standard_gravity, CoupledSystem,
    HeldObject, ResidualReport,
};
use crate::error::{check_len, Error, Result};
use crate::kinematics::{
    forward_kinematics, point_jacobian_with_poses, ContactPoint, ContactPointSet, ContactRole,
    Trajectory,
};
use crate::model::{
    box_inertia, build_tree, pendulum_tree, JointDescription, JointKindDescription,
    KinematicTree, LinkDescription, ModelDescription, OriginDescription, RigidObjectModel,
};
use crate::solver::SolveProblem;
use crate::spatial::{Mat3, Vec3};
use crate::surfaces::{nearest_of, object_pose, object_twist, query_at_pose, Shape, Surface};

/// Largest admissible time step, s.
pub const MAX_DT: f64 = 0.01;
/// State norm treated as a blow-up.
pub const BLOWUP_NORM: f64 = 1e6;

/// Time law of a prescribed coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Hold(f64),
    /// Rest-to-rest quintic from `from` to `to` over `[start, start + duration]`.
    Quintic {
        from: f64,
        to: f64,
        start: f64,
        duration: f64,
    },
}

impl Profile {
    /// `(q, q_dot, q_ddot)` at time `t`.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        match *self {
            Profile::Hold(v) => (v, 0.0, 0.0),
            Profile::Quintic {
                from,
                to,
                start,
                duration,
            } => {
                let u = ((t - start) / duration).clamp(0.0, 1.0);
                let inside = t > start && t < start + duration;
                let span = to - from;
                let s = u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
                let (ds, dds) = if inside {
                    (
                        30.0 * u * u * (1.0 - u) * (1.0 - u),
                        60.0 * u * (1.0 - 3.0 * u + 2.0 * u * u),
                    )
                } else {
                    (0.0, 0.0)
                };
                (
                    from + span * s,
                    span * ds / duration,
                    span * dds / (duration * duration),
                )
            }
        }
    }
}

/// Free rigid object in a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub model: RigidObjectModel,
    pub q0: DVector<f64>,
    pub qd0: DVector<f64>,
}

/// A simulation setup with planted coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub name: String,
    pub tree: KinematicTree,
    pub object: Option<SceneObject>,
    /// Static surfaces.
    pub surfaces: Vec<Surface>,
    pub points: ContactPointSet,
    pub config: ContactModelConfig,
    /// Planted coefficients shared by every point and frame.
    pub coefficients: Coefficients,
    pub q0: DVector<f64>,
    pub qd0: DVector<f64>,
    /// Coordinates driven by a time law instead of integrated.
    pub prescribed: Vec<(usize, Profile)>,
    pub dt: f64,
    pub steps: usize,
    pub gravity: Vec3,
    /// Whether analysis should let the root carry torque (it does when the
    /// root is driven).
    pub actuate_root: bool,
    /// Round-trip constant `c`: per-frame `|r|_1 <= c dt force_scale`.
    pub residual_constant: f64,
    /// Force scale `m g` of the scene, N.
    pub force_scale: f64,
}

/// One frame of the energy ledger, J. Work terms are cumulative.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub kinetic: f64,
    pub gravitational: f64,
    /// Elastic energy stored in the contact springs (minus their work).
    pub spring: f64,
    pub damping_dissipation: f64,
    pub friction_dissipation: f64,
    pub actuation_work: f64,
    /// `dt^2/2 a^T M a` of the step that reached this frame.
    pub step_budget: f64,
    /// Friction work of the step that reached this frame (never positive).
    pub step_friction_work: f64,
}

/// Everything a simulation produced; all per-frame vectors have
/// `steps + 1` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationLog {
    pub dt: f64,
    pub human: Vec<DVector<f64>>,
    pub object: Option<Vec<DVector<f64>>>,
    /// Contact force on the human body, per frame and point, N.
    pub forces: Vec<Vec<Vec3>>,
    /// Generalized forces that realise the prescribed motion (zero on
    /// integrated coordinates).
    pub tau: Vec<DVector<f64>>,
    pub energy: Vec<EnergyRecord>,
}

impl SimulationLog {
    pub fn frames(&self) -> usize {
        self.human.len()
    }

    pub fn human_trajectory(&self, tree: &KinematicTree) -> Result<Trajectory> {
        Trajectory::for_tree(tree, self.dt, self.human.clone())
    }

    pub fn object_trajectory(&self) -> Option<Result<Trajectory>> {
        self.object
            .as_ref()
            .map(|o| Ok(Trajectory::new(self.dt, o.clone())?.with_rotation_blocks(vec![0])))
    }
}

struct ContactEval {
    gate: f64,
    spring: Vec3,
    damper: Vec3,
    kinetic: Vec3,
    /// Friction parts are already gated.
    static_friction: Vec3,
    human_jacobian: Matrix3xX<f64>,
    object_jacobian: Option<Matrix3x6<f64>>,
    normal: Vec3,
}

impl ContactEval {
    fn total(&self) -> Vec3 {
        (self.spring + self.damper) * self.gate + self.kinetic + self.static_friction
    }
}

struct StepEval {
    qdd: DVector<f64>,
    qdd_o: Option<Vector6<f64>>,
    contacts: Vec<ContactEval>,
    tau: DVector<f64>,
}

/// Cached per-step dynamics used by both passes.
struct Partition<'a> {
    free: &'a [usize],
    fixed: &'a [usize],
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= MAX_DT) {
            return Err(Error::Domain(format!("dt must lie in (0, {MAX_DT}], got {}", self.dt)));
        }
        self.config.validate()?;
        self.coefficients.validate()?;
        self.tree.check_config("initial q", self.q0.len())?;
        self.tree.check_config("initial q_dot", self.qd0.len())?;
        for (i, _) in &self.prescribed {
            if *i >= self.tree.dof() {
                return Err(Error::Dimension {
                    context: "prescribed coordinate",
                    expected: self.tree.dof(),
                    actual: *i,
                });
            }
        }
        if let Some(o) = &self.object {
            check_len("object q0", 6, o.q0.len())?;
            check_len("object q_dot0", 6, o.qd0.len())?;
        }
        if self.points.scene_count() > 0 && self.surfaces.is_empty() {
            return Err(Error::EmptySurface);
        }
        if self.points.object_count() > 0 && self.object.is_none() {
            return Err(Error::Domain("object contact points without an object".into()));
        }
        Ok(())
    }

    /// Same scene with a different step, keeping the simulated duration.
    pub fn with_dt(mut self, dt: f64) -> Self {
        let duration = self.dt * self.steps as f64;
        self.steps = (duration / dt).round() as usize;
        self.dt = dt;
        self
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.steps as f64
    }

    fn profiles(&self) -> Vec<Option<Profile>> {
        let mut p = vec![None; self.tree.dof()];
        for (i, prof) in &self.prescribed {
            p[*i] = Some(*prof);
        }
        p
    }

    fn unforced_accelerations(
        &self,
        part: &Partition<'_>,
        m: &DMatrix<f64>,
        bias: &DVector<f64>,
        gen_force: &DVector<f64>,
        qdd_p: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let mut qdd = qdd_p.clone();
        if part.free.is_empty() {
            return Ok(qdd);
        }
        let nf = part.free.len();
        let mff = DMatrix::from_fn(nf, nf, |a, b| m[(part.free[a], part.free[b])]);
        let rhs = DVector::from_fn(nf, |a, _| {
            let i = part.free[a];
            let coupling: f64 = part.fixed.iter().map(|&j| m[(i, j)] * qdd_p[j]).sum();
            gen_force[i] - bias[i] - coupling
        });
        let chol = mff
            .cholesky()
            .ok_or_else(|| Error::Domain("mass matrix is not positive definite".into()))?;
        let sol = chol.solve(&rhs);
        for (a, &i) in part.free.iter().enumerate() {
            qdd[i] = sol[a];
        }
        Ok(qdd)
    }

    #[allow(clippy::too_many_arguments)]
    fn evaluate(
        &self,
        part: &Partition<'_>,
        q: &DVector<f64>,
        v: &DVector<f64>,
        qdd_p: &DVector<f64>,
        v_next_p: &DVector<f64>,
        obj: Option<(&DVector<f64>, &DVector<f64>)>,
    ) -> Result<StepEval> {
        let n = self.tree.dof();
        let g = self.gravity;
        let poses = forward_kinematics(&self.tree, q.as_slice())?;
        let m = mass_matrix(&self.tree, q.as_slice())?;
        let bias = inverse_dynamics(&self.tree, q.as_slice(), v.as_slice(), &vec![0.0; n], &g)?;
        let object_dyn = match (&self.object, obj) {
            (Some(o), Some((qo, vo))) => {
                let t = o.model.as_tree();
                let mo = mass_matrix(t, qo.as_slice())?;
                let bo = inverse_dynamics(t, qo.as_slice(), vo.as_slice(), &[0.0; 6], &g)?;
                Some((
                    Matrix6::from_column_slice(mo.as_slice()),
                    Vector6::from_column_slice(bo.as_slice()),
                    object_pose(qo.as_slice()),
                    object_twist(qo.as_slice(), vo.as_slice()),
                    qo,
                ))
            }
            _ => None,
        };

        let mut normal_only = self.coefficients;
        normal_only.static_gain = 0.0;
        normal_only.kinetic = 0.0;
        let mut contacts = Vec::with_capacity(self.points.points.len());
        let mut caps = Vec::with_capacity(self.points.points.len());
        for cp in &self.points.points {
            let human_jacobian = point_jacobian_with_poses(&self.tree, q.as_slice(), &poses, cp.body, &cp.offset);
            let p = poses[cp.body].apply(&cp.offset);
            let p_dot = &human_jacobian * v;
            let (query, object_jacobian) = match cp.role {
                ContactRole::Scene => (nearest_of(&self.surfaces, &p, 0)?, None),
                ContactRole::Object => {
                    let (_, _, pose, twist, qo) = object_dyn.as_ref().expect("validated");
                    let query = query_at_pose(&self.object.as_ref().expect("validated").model.geometry, pose, *twist, &p)?;
                    let x_local = pose.apply_inverse(&query.x);
                    (query, Some(object_point_jacobian(qo.as_slice(), &x_local)))
                }
            };
            let driver = TangentialDriver::PointAcceleration(Vec3::zeros());
            let state = ContactPointState { p, p_dot, query, driver };
            let parts = contact_force_parts(&state, &normal_only, &self.config, ContactMode::StaticScene)?;
            let kinetic_cap = parts.gate * self.coefficients.kinetic * (parts.spring + parts.damper).norm();
            let static_cap = if self.coefficients.static_gain > 0.0 {
                let t = query.n.cross(&Vec3::x());
                let t = if t.norm() > 0.5 { t } else { query.n.cross(&Vec3::y()) };
                parts.gate * static_friction(&state, self.coefficients.static_gain, Some(t.normalize()), &self.config)?.norm()
            } else {
                0.0
            };
            caps.push((kinetic_cap, static_cap));
            contacts.push(ContactEval {
                gate: parts.gate,
                spring: parts.spring,
                damper: parts.damper,
                kinetic: Vec3::zeros(),
                static_friction: Vec3::zeros(),
                human_jacobian,
                object_jacobian,
                normal: query.n,
            });
        }

        let accelerations = |contacts: &[ContactEval]| -> Result<(DVector<f64>, Option<Vector6<f64>>)> {
            let mut gen = DVector::zeros(n);
            let mut gen_o = Vector6::zeros();
            for c in contacts {
                let lambda = c.total();
                gen += c.human_jacobian.transpose() * lambda;
                if let Some(jo) = c.object_jacobian {
                    gen_o -= jo.transpose() * lambda;
                }
            }
            let qdd = self.unforced_accelerations(part, &m, &bias, &gen, qdd_p)?;
            let qdd_o = match &object_dyn {
                Some((mo, bo, ..)) => Some(
                    mo.cholesky()
                        .ok_or_else(|| Error::Domain("object mass matrix is singular".into()))?
                        .solve(&(gen_o - bo)),
                ),
                None => None,
            };
            Ok((qdd, qdd_o))
        };

        let (mut qdd, mut qdd_o) = accelerations(&contacts)?;
        if caps.iter().any(|(k, s)| k + s > 0.0) {
            let mut v_trial = v + &qdd * self.dt;
            for &i in part.fixed {
                v_trial[i] = v_next_p[i];
            }
            let vo_trial = match (obj, qdd_o) {
                (Some((_, vo)), Some(a)) => Some(Vector6::from_column_slice(vo.as_slice()) + a * self.dt),
                _ => None,
            };
            let m_o = object_dyn.as_ref().map(|o| o.0);
            let friction = self.solve_friction(part, &m, m_o.as_ref(), &v_trial, vo_trial.as_ref(), &contacts, &caps)?;
            for ((c, f), (kc, sc)) in contacts.iter_mut().zip(friction).zip(&caps) {
                let share = if kc + sc > 0.0 { kc / (kc + sc) } else { 0.0 };
                c.kinetic = f * share;
                c.static_friction = f * (1.0 - share);
            }
            (qdd, qdd_o) = accelerations(&contacts)?;
        }

        // Generalized forces that realise the prescribed coordinates.
        let mut gen = DVector::zeros(n);
        for c in &contacts {
            gen += c.human_jacobian.transpose() * c.total();
        }
        let full = &m * &qdd + &bias - gen;
        let mut tau = DVector::zeros(n);
        for &i in part.fixed {
            tau[i] = full[i];
        }
        Ok(StepEval {
            qdd,
            qdd_o,
            contacts,
            tau,
        })
    }

    /// Tangential forces evaluated at the post-step slip `u`:
    /// `f_i = -a_i u_i / max(|u_i|, eps)` with `u = u_trial + dt W f`,
    /// solved by damped Newton. `a_i` sums the kinetic cap `mu |k|` and
    /// the static cap, both gated.
    #[allow(clippy::too_many_arguments)]
    fn solve_friction(
        &self,
        part: &Partition<'_>,
        m: &DMatrix<f64>,
        m_o: Option<&Matrix6<f64>>,
        v_trial: &DVector<f64>,
        vo_trial: Option<&Vector6<f64>>,
        contacts: &[ContactEval],
        caps: &[(f64, f64)],
    ) -> Result<Vec<Vec3>> {
        let c = contacts.len();
        let nf = part.free.len();
        let dt = self.dt;
        let eps = self.config.eps;
        let mut jf = DMatrix::zeros(3 * c, nf);
        let mut jo = DMatrix::zeros(3 * c, 6);
        let mut u0 = DVector::zeros(3 * c);
        for (i, ct) in contacts.iter().enumerate() {
            for r in 0..3 {
                for (a, &col) in part.free.iter().enumerate() {
                    jf[(3 * i + r, a)] = ct.human_jacobian[(r, col)];
                }
            }
            let mut slip = &ct.human_jacobian * v_trial;
            if let Some(j) = ct.object_jacobian {
                jo.view_mut((3 * i, 0), (3, 6)).copy_from(&j);
                if let Some(vo) = vo_trial {
                    slip -= j * vo;
                }
            }
            u0.rows_mut(3 * i, 3).copy_from(&slip);
        }
        // Delassus operator; the object receives -f, which adds to the slip.
        let mut w = DMatrix::zeros(3 * c, 3 * c);
        if nf > 0 {
            let mff = DMatrix::from_fn(nf, nf, |a, b| m[(part.free[a], part.free[b])]);
            let chol = mff
                .cholesky()
                .ok_or_else(|| Error::Domain("mass matrix is not positive definite".into()))?;
            w += &jf * chol.solve(&jf.transpose());
        }
        if let Some(mo) = m_o {
            let inv = mo
                .try_inverse()
                .ok_or_else(|| Error::Domain("object mass matrix is singular".into()))?;
            let inv = DMatrix::from_column_slice(6, 6, inv.as_slice());
            w += &jo * inv * jo.transpose();
        }

        let law = |f: &DVector<f64>| -> (DVector<f64>, DMatrix<f64>) {
            let u = &u0 + &w * f * dt;
            let mut phi = DVector::zeros(3 * c);
            let mut d = DMatrix::zeros(3 * c, 3 * c);
            for (i, ct) in contacts.iter().enumerate() {
                let a = caps[i].0 + caps[i].1;
                if a == 0.0 {
                    continue;
                }
                let n = ct.normal;
                let proj = Mat3::identity() - n * n.transpose();
                let ut = proj * u.fixed_rows::<3>(3 * i);
                let speed = ut.norm();
                let scale = a / speed.max(eps);
                phi.fixed_rows_mut::<3>(3 * i).copy_from(&(ut * scale));
                let mut block = proj * scale;
                if speed > eps {
                    let hat = ut / speed;
                    block -= hat * hat.transpose() * scale;
                }
                d.view_mut((3 * i, 3 * i), (3, 3)).copy_from(&block);
            }
            (phi, d)
        };

        let total_cap: f64 = caps.iter().map(|(k, s)| k + s).sum();
        let tol = 1e-12 * (1.0 + total_cap);
        let mut f = DVector::zeros(3 * c);
        let (phi, mut d) = law(&f);
        let mut res = &f + phi;
        for _ in 0..50 {
            if res.norm() <= tol {
                break;
            }
            let jac = DMatrix::identity(3 * c, 3 * c) + &d * &w * dt;
            let Some(step) = jac.lu().solve(&(-&res)) else {
                break;
            };
            let mut t = 1.0;
            let mut improved = false;
            for _ in 0..30 {
                let trial = &f + &step * t;
                let (phi, dt_) = law(&trial);
                let r = &trial + phi;
                if r.norm() < res.norm() {
                    f = trial;
                    res = r;
                    d = dt_;
                    improved = true;
                    break;
                }
                t *= 0.5;
            }
            if !improved {
                break;
            }
        }
        Ok((0..c).map(|i| Vec3::from(f.fixed_rows::<3>(3 * i))).collect())
    }

    fn kinetic_energy(&self, q: &DVector<f64>, v: &DVector<f64>, obj: Option<(&DVector<f64>, &DVector<f64>)>) -> Result<f64> {
        let m = mass_matrix(&self.tree, q.as_slice())?;
        let mut ke = 0.5 * v.dot(&(&m * v));
        if let (Some(o), Some((qo, vo))) = (&self.object, obj) {
            let mo = mass_matrix(o.model.as_tree(), qo.as_slice())?;
            ke += 0.5 * vo.dot(&(&mo * vo));
        }
        Ok(ke)
    }

    fn potential_energy(&self, q: &DVector<f64>, obj: Option<&DVector<f64>>) -> Result<f64> {
        let poses = forward_kinematics(&self.tree, q.as_slice())?;
        let mut pe = 0.0;
        for (link, pose) in self.tree.links().iter().zip(&poses) {
            pe -= link.mass * self.gravity.dot(&pose.apply(&link.com_offset));
        }
        if let (Some(o), Some(qo)) = (&self.object, obj) {
            pe -= o.model.mass * self.gravity.dot(&Vec3::new(qo[3], qo[4], qo[5]));
        }
        Ok(pe)
    }

    /// Integrates the scene with semi-implicit Euler.
    pub fn simulate(&self) -> Result<SimulationLog> {
        self.validate()?;
        let n = self.tree.dof();
        let dt = self.dt;
        let profiles = self.profiles();
        let free: Vec<usize> = (0..n).filter(|i| profiles[*i].is_none()).collect();
        let fixed: Vec<usize> = (0..n).filter(|i| profiles[*i].is_some()).collect();
        let part = Partition {
            free: &free,
            fixed: &fixed,
        };
        let prescribed_at = |t: f64| {
            let mut q = DVector::zeros(n);
            let mut v = DVector::zeros(n);
            let mut a = DVector::zeros(n);
            for (i, p) in profiles.iter().enumerate() {
                if let Some(p) = p {
                    let (x, xd, xdd) = p.eval(t);
                    q[i] = x;
                    v[i] = xd;
                    a[i] = xdd;
                }
            }
            (q, v, a)
        };

        let mut q = self.q0.clone();
        let mut v = self.qd0.clone();
        {
            let (qp, vp, _) = prescribed_at(0.0);
            for &i in &fixed {
                q[i] = qp[i];
                v[i] = vp[i];
            }
        }
        let (mut qo, mut vo) = match &self.object {
            Some(o) => (o.q0.clone(), o.qd0.clone()),
            None => (DVector::zeros(0), DVector::zeros(0)),
        };
        let has_obj = self.object.is_some();
        let obj_ref = |qo: &DVector<f64>, vo: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>)> {
            has_obj.then(|| (qo.clone(), vo.clone()))
        };

        let mut log = SimulationLog {
            dt,
            human: Vec::with_capacity(self.steps + 1),
            object: has_obj.then(Vec::new),
            forces: Vec::with_capacity(self.steps + 1),
            tau: Vec::with_capacity(self.steps + 1),
            energy: Vec::with_capacity(self.steps + 1),
        };
        let mut record = EnergyRecord {
            kinetic: self.kinetic_energy(&q, &v, obj_ref(&qo, &vo).as_ref().map(|(a, b)| (a, b)))?,
            gravitational: self.potential_energy(&q, has_obj.then_some(&qo))?,
            ..EnergyRecord::default()
        };

        for k in 0..=self.steps {
            let t = k as f64 * dt;
            let (_, _, qdd_p) = prescribed_at(t);
            let (q_next_p, v_next_p, _) = prescribed_at(t + dt);
            let o = obj_ref(&qo, &vo);
            let eval = self.evaluate(&part, &q, &v, &qdd_p, &v_next_p, o.as_ref().map(|(a, b)| (a, b)))?;

            log.human.push(q.clone());
            if let Some(obj_log) = log.object.as_mut() {
                obj_log.push(qo.clone());
            }
            log.forces.push(eval.contacts.iter().map(ContactEval::total).collect());
            log.tau.push(eval.tau.clone());
            log.energy.push(record);
            if k == self.steps {
                break;
            }

            let v_old = v.clone();
            let vo_old = vo.clone();
            for &i in &free {
                v[i] += dt * eval.qdd[i];
                q[i] += dt * v[i];
            }
            for &i in &fixed {
                q[i] = q_next_p[i];
                v[i] = v_next_p[i];
            }
            if let Some(a) = eval.qdd_o {
                for i in 0..6 {
                    vo[i] += dt * a[i];
                    qo[i] += dt * vo[i];
                }
            }
            let norm = q.norm() + v.norm() + qo.norm() + vo.norm();
            if !norm.is_finite() || norm > BLOWUP_NORM {
                return Err(Error::Blowup { step: k, norm });
            }

            // Works over the step, using post-step velocities.
            let (mut w_spring, mut w_damper, mut w_fric) = (0.0, 0.0, 0.0);
            for c in &eval.contacts {
                let mut rel = &c.human_jacobian * &v;
                if let Some(jo) = c.object_jacobian {
                    rel -= jo * Vector6::from_column_slice(vo.as_slice());
                }
                w_spring += dt * (c.spring * c.gate).dot(&rel);
                w_damper += dt * (c.damper * c.gate).dot(&rel);
                w_fric += dt * (c.kinetic + c.static_friction).dot(&rel);
            }
            let w_act = dt * eval.tau.dot(&v);
            // Second-order remainders: the step itself and the change of M
            // and G across it.
            let q_old = &log.human[k];
            let zeros = vec![0.0; n];
            let m = mass_matrix(&self.tree, q_old.as_slice())?;
            let m_new = mass_matrix(&self.tree, q.as_slice())?;
            let g_old = inverse_dynamics(&self.tree, q_old.as_slice(), &zeros, &zeros, &self.gravity)?;
            let g_new = inverse_dynamics(&self.tree, q.as_slice(), &zeros, &zeros, &self.gravity)?;
            let a = (&v - &v_old) / dt;
            let mut budget = 0.5 * dt * dt * a.dot(&(&m * &a))
                + 0.5 * (g_new - &g_old).dot(&(&q - q_old)).abs()
                + 0.5 * v.dot(&((m_new - &m) * &v)).abs()
                // prescribed coordinates follow the time law, not the step
                + dt * v.dot(&(&m * (&a - &eval.qdd))).abs()
                + g_old.dot(&(&q - q_old - &v * dt)).abs();
            if let Some(o) = &self.object {
                let qo_old = &log.object.as_ref().expect("object log")[k];
                let mo = mass_matrix(o.model.as_tree(), qo_old.as_slice())?;
                let mo_new = mass_matrix(o.model.as_tree(), qo.as_slice())?;
                let ao = (&vo - &vo_old) / dt;
                budget += 0.5 * dt * dt * ao.dot(&(&mo * &ao)) + 0.5 * vo.dot(&((mo_new - &mo) * &vo)).abs();
            }
            record = EnergyRecord {
                kinetic: self.kinetic_energy(&q, &v, obj_ref(&qo, &vo).as_ref().map(|(a, b)| (a, b)))?,
                gravitational: self.potential_energy(&q, has_obj.then_some(&qo))?,
                spring: record.spring - w_spring,
                damping_dissipation: record.damping_dissipation - w_damper,
                friction_dissipation: record.friction_dissipation - w_fric,
                actuation_work: record.actuation_work + w_act,
                step_budget: budget,
                step_friction_work: w_fric,
            };
        }
        Ok(log)
    }

    /// Analysis view of a simulation: differentiated trajectories, the
    /// same surfaces, points and configuration.
    pub fn coupled_system(&self, log: &SimulationLog) -> Result<CoupledSystem> {
        let human = log.human_trajectory(&self.tree)?;
        let object = match (&self.object, log.object_trajectory()) {
            (Some(o), Some(track)) => {
                let surface = Surface::attached(o.model.geometry.clone(), &track?)?;
                Some(HeldObject::new(o.model.clone(), surface)?)
            }
            _ => None,
        };
        let mut system = CoupledSystem::new(
            self.tree.clone(),
            &human,
            object,
            self.surfaces.clone(),
            self.points.clone(),
            self.config,
        )?;
        system.gravity = self.gravity;
        Ok(system)
    }

    pub fn planted_coefficients(&self, log: &SimulationLog) -> CoefficientTensor {
        CoefficientTensor::constant(log.frames(), self.points.points.len(), self.coefficients)
    }

    /// Solver problem over a simulated trajectory.
    pub fn solve_problem(&self, log: &SimulationLog) -> Result<SolveProblem> {
        let mut problem = SolveProblem::new(self.coupled_system(log)?);
        problem.actuate_root = self.actuate_root;
        Ok(problem)
    }

    /// Residual of the planted torques and coefficients on the logged
    /// trajectory, with the scene's first-order bound.
    pub fn round_trip(&self, log: &SimulationLog) -> Result<RoundTrip> {
        let system = self.coupled_system(log)?;
        let report = crate::dynamics::coupled_residual(&system, &log.tau, &self.planted_coefficients(log))?;
        let max_frame_l1 = (0..log.frames()).map(|t| report.frame_l1(t)).fold(0.0, f64::max);
        Ok(RoundTrip {
            bound: self.residual_constant * log.dt * self.force_scale,
            max_frame_l1,
            report,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrip {
    pub report: ResidualReport,
    pub max_frame_l1: f64,
    /// `c dt (m g)`.
    pub bound: f64,
}

impl RoundTrip {
    pub fn within_bound(&self) -> bool {
        self.max_frame_l1 <= self.bound
    }
}

/// Per-step energy balance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyAudit {
    /// `Delta(KE + PE_grav + PE_spring) + Delta(dissipation) - Delta(actuation)`
    /// for each step.
    pub balances: Vec<f64>,
    pub budgets: Vec<f64>,
    /// Steps whose imbalance exceeds twice the step budget.
    pub flagged: Vec<usize>,
    pub max_abs_balance: f64,
    /// Largest per-step friction work (should not be positive).
    pub max_friction_work: f64,
}

/// Checks the energy ledger of a log step by step.
pub fn energy_audit(log: &SimulationLog) -> EnergyAudit {
    let total = |e: &EnergyRecord| {
        e.kinetic + e.gravitational + e.spring + e.damping_dissipation + e.friction_dissipation
            - e.actuation_work
    };
    let mut audit = EnergyAudit {
        balances: Vec::new(),
        budgets: Vec::new(),
        flagged: Vec::new(),
        max_abs_balance: 0.0,
        max_friction_work: f64::NEG_INFINITY,
    };
    for (k, w) in log.energy.windows(2).enumerate() {
        let bal = total(&w[1]) - total(&w[0]);
        let budget = w[1].step_budget;
        let scale = 1e-9 * (1.0 + w[1].kinetic.abs() + w[1].gravitational.abs());
        if bal.abs() > 2.0 * budget + scale {
            audit.flagged.push(k);
        }
        audit.max_abs_balance = audit.max_abs_balance.max(bal.abs());
        audit.max_friction_work = audit.max_friction_work.max(w[1].step_friction_work);
        audit.balances.push(bal);
        audit.budgets.push(budget);
    }
    if audit.balances.is_empty() {
        audit.max_friction_work = 0.0;
    }
    audit
}

fn rows(m: &Mat3) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

/// Separation `s` at which `points` springs of stiffness `kappa` carry
/// `load` N in total (gate included), by bisection.
pub fn equilibrium_separation(config: &ContactModelConfig, kappa: f64, load: f64, points: usize) -> f64 {
    let per_point = load / points as f64;
    let n = Vec3::z();
    let force = |s: f64| gate(&(n * s), &n, config).expect("unit normal") * kappa * (config.d0 - s);
    let (mut lo, mut hi) = (-config.d1, config.d0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if force(mid) > per_point {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

const BLOCK_HALF: f64 = 0.05;

fn block_tree(mass: f64, half: f64) -> Result<KinematicTree> {
    KinematicTree::single_body("block", mass, box_inertia(mass, Vec3::repeat(half))?, Vec3::zeros())
}

fn bottom_corners(tree: &KinematicTree, half: f64, role: ContactRole) -> Result<ContactPointSet> {
    let pts = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
        .iter()
        .map(|(x, y)| ContactPoint {
            body: 0,
            offset: Vec3::new(x * half, y * half, -half),
            role,
        })
        .collect();
    ContactPointSet::new(tree, pts)
}

/// 1 kg cube dropped from 5 cm onto the plane `z = 0`; settles where the
/// four corner springs carry 9.81 N.
pub fn rest() -> Result<Scene> {
    let tree = block_tree(1.0, BLOCK_HALF)?;
    let points = bottom_corners(&tree, BLOCK_HALF, ContactRole::Scene)?;
    let mut q0 = DVector::zeros(6);
    q0[5] = BLOCK_HALF + 0.05;
    Ok(Scene {
        name: "rest".into(),
        tree,
        object: None,
        surfaces: vec![Surface::fixed(Shape::plane(Vec3::zeros(), Vec3::z())?)],
        points,
        config: ContactModelConfig::default(),
        coefficients: Coefficients::new(5e3, 200.0, 0.0, 0.6),
        q0,
        qd0: DVector::zeros(6),
        prescribed: Vec::new(),
        dt: 1e-3,
        steps: 1500,
        gravity: standard_gravity(),
        actuate_root: false,
        residual_constant: 250.0,
        force_scale: 9.81,
    })
}

/// 1 kg cube resting on a plane tilted by `theta` about `y`, released from
/// its spring equilibrium.
pub fn incline(theta: f64, mu: f64, rho: f64) -> Result<Scene> {
    let tree = block_tree(1.0, BLOCK_HALF)?;
    let points = bottom_corners(&tree, BLOCK_HALF, ContactRole::Scene)?;
    let config = ContactModelConfig::default();
    let kappa = 5e3;
    let normal = Vec3::new(-theta.sin(), 0.0, theta.cos());
    let s = equilibrium_separation(&config, kappa, 9.81 * theta.cos(), 4);
    let centre = normal * (BLOCK_HALF + s);
    let q0 = DVector::from_vec(vec![0.0, -theta, 0.0, centre.x, centre.y, centre.z]);
    Ok(Scene {
        name: "incline".into(),
        tree,
        object: None,
        surfaces: vec![Surface::fixed(Shape::plane(Vec3::zeros(), normal)?)],
        points,
        config,
        coefficients: Coefficients::new(kappa, 200.0, rho, mu),
        q0,
        qd0: DVector::zeros(6),
        prescribed: Vec::new(),
        dt: 1e-3,
        steps: 2000,
        gravity: standard_gravity(),
        actuate_root: false,
        residual_constant: 100.0,
        force_scale: 9.81,
    })
}

/// 1 kg point mass on a 1 m rod about `y`, released from 0.5 rad; the
/// root is held fixed.
pub fn pendulum() -> Result<Scene> {
    let tree = pendulum_tree(1.0, 1.0)?;
    let mut q0 = DVector::zeros(7);
    q0[6] = 0.5;
    Ok(Scene {
        name: "pendulum".into(),
        points: ContactPointSet::new(&tree, Vec::new())?,
        tree,
        object: None,
        surfaces: Vec::new(),
        config: ContactModelConfig::default(),
        coefficients: Coefficients::new(0.0, 0.0, 0.0, 0.0),
        q0,
        qd0: DVector::zeros(7),
        prescribed: (0..6).map(|i| (i, Profile::Hold(0.0))).collect(),
        dt: 1e-3,
        steps: 2000,
        gravity: standard_gravity(),
        actuate_root: true,
        residual_constant: 1.0,
        force_scale: 9.81,
    })
}

/// Base height of the carry arm, m.
const CARRY_BASE: f64 = 1.0;
const CARRY_BOX_HALF: f64 = 0.08;
const CARRY_BOX_MASS: f64 = 2.0;

fn carry_tree() -> Result<KinematicTree> {
    let link = |name: &str, mass: f64, half: Vec3, com: [f64; 3]| -> Result<LinkDescription> {
        Ok(LinkDescription {
            name: name.into(),
            mass,
            inertia: rows(&box_inertia(mass, half)?),
            com,
        })
    };
    let revolute = |name: &str, parent: &str, child: &str, at: [f64; 3]| JointDescription {
        name: name.into(),
        kind: JointKindDescription::Revolute { axis: [0.0, 1.0, 0.0] },
        parent: Some(parent.into()),
        child: child.into(),
        origin: OriginDescription {
            rotation: [0.0; 3],
            translation: at,
        },
    };
    build_tree(&ModelDescription {
        version: 1,
        links: vec![
            link("base", 2.0, Vec3::new(0.1, 0.1, 0.1), [0.0; 3])?,
            link("upper", 1.5, Vec3::new(0.15, 0.04, 0.04), [0.15, 0.0, 0.0])?,
            link("hand", 0.5, Vec3::new(0.1, 0.05, 0.02), [0.1, 0.0, 0.0])?,
        ],
        joints: vec![
            JointDescription {
                name: "root".into(),
                kind: JointKindDescription::Free,
                parent: None,
                child: "base".into(),
                origin: OriginDescription::default(),
            },
            revolute("shoulder", "base", "upper", [0.0; 3]),
            revolute("elbow", "upper", "hand", [0.3, 0.0, 0.0]),
        ],
    })
}

/// Two-link arm on a lifted base holding a 2 kg box on four hand points:
/// hold 0.4 s, lift 0.15 m over 0.8 s, hold 0.8 s. Every arm coordinate
/// is prescribed; the box is free.
pub fn carry() -> Result<Scene> {
    let tree = carry_tree()?;
    let config = ContactModelConfig::default();
    let kappa = 1e4;
    let hand = tree.link_index("hand")?;
    let points = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
        .iter()
        .map(|(x, y)| ContactPoint {
            body: hand,
            offset: Vec3::new(0.1 + 0.05 * x, 0.05 * y, 0.02),
            role: ContactRole::Object,
        })
        .collect();
    let points = ContactPointSet::new(&tree, points)?;
    let s = equilibrium_separation(&config, kappa, CARRY_BOX_MASS * 9.81, 4);
    let mut q0 = DVector::zeros(tree.dof());
    q0[5] = CARRY_BASE;
    // hand frame sits at the elbow, 0.3 m along x from the base
    let q_o = DVector::from_vec(vec![
        0.0,
        0.0,
        0.0,
        0.4,
        0.0,
        CARRY_BASE + 0.02 + s + CARRY_BOX_HALF,
    ]);
    let model = RigidObjectModel::new(
        CARRY_BOX_MASS,
        box_inertia(CARRY_BOX_MASS, Vec3::repeat(CARRY_BOX_HALF))?,
        Shape::cuboid(Vec3::repeat(CARRY_BOX_HALF))?,
    )?;
    let mut prescribed: Vec<(usize, Profile)> = (0..tree.dof())
        .map(|i| (i, Profile::Hold(q0[i])))
        .collect();
    prescribed[5].1 = Profile::Quintic {
        from: CARRY_BASE,
        to: CARRY_BASE + 0.15,
        start: 0.4,
        duration: 0.8,
    };
    Ok(Scene {
        name: "carry".into(),
        qd0: DVector::zeros(tree.dof()),
        tree,
        object: Some(SceneObject {
            model,
            q0: q_o,
            qd0: DVector::zeros(6),
        }),
        surfaces: Vec::new(),
        points,
        config,
        coefficients: Coefficients::new(kappa, 300.0, 0.0, 0.8),
        q0,
        prescribed,
        dt: 1e-3,
        steps: 2000,
        gravity: standard_gravity(),
        actuate_root: true,
        residual_constant: 100.0,
        force_scale: CARRY_BOX_MASS * 9.81,
    })
}

/// Preset names accepted by [`preset`].
pub const PRESETS: [&str; 4] = ["rest", "incline", "pendulum", "carry"];

/// Default incline angle, rad.
pub fn incline_angle() -> f64 {
    10f64.to_radians()
}

/// Incline with enough friction to hold: mu = 0.6, rho = 500. The
/// simulator applies static friction as a capped stick force, so this
/// variant does not round-trip through the residual.
pub fn incline_hold() -> Result<Scene> {
    let mut s = incline(incline_angle(), 0.6, 500.0)?;
    s.name = "incline-hold".into();
    Ok(s)
}

/// Builds a named preset. `incline` is 10 degrees with mu = 0.05,
/// rho = 0, which slides.
pub fn preset(name: &str) -> Result<Scene> {
    match name {
        "rest" => rest(),
        "incline" => incline(incline_angle(), 0.05, 0.0),
        "pendulum" => pendulum(),
        "carry" => carry(),
        other => Err(Error::Domain(format!(
            "unknown preset `{other}` (expected one of {})",
            PRESETS.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quintic_profile_endpoints() {
        let p = Profile::Quintic {
            from: 1.0,
            to: 1.15,
            start: 0.4,
            duration: 0.8,
        };
        assert_eq!(p.eval(0.0), (1.0, 0.0, 0.0));
        let (q, qd, _) = p.eval(1.2);
        assert!((q - 1.15).abs() < 1e-12 && qd.abs() < 1e-12);
        let (q, qd, qdd) = p.eval(0.8);
        assert!((q - 1.075).abs() < 1e-12);
        assert!((qd - 0.15 * 1.875 / 0.8).abs() < 1e-12);
        assert!(qdd.abs() < 1e-12);
    }

    #[test]
    fn zero_gravity_free_flight_is_linear() {
        let mut scene = rest().unwrap();
        scene.gravity = Vec3::zeros();
        scene.points = ContactPointSet::new(&scene.tree, Vec::new()).unwrap();
        scene.qd0 = DVector::from_vec(vec![0.0, 0.0, 0.0, 0.3, -0.2, 0.1]);
        scene.steps = 100;
        let log = scene.simulate().unwrap();
        let last = log.human.last().unwrap();
        let expected = &scene.q0 + &scene.qd0 * (100.0 * scene.dt);
        assert!((last - expected).norm() < 1e-12);
    }

    #[test]
    fn rest_settles_on_weight() {
        let scene = rest().unwrap();
        let log = scene.simulate().unwrap();
        for frame in 1000..log.frames() {
            let total: Vec3 = log.forces[frame].iter().sum();
            assert!((total.z - 9.81).abs() < 0.02 * 9.81, "frame {frame}: {total:?}");
        }
        let s = equilibrium_separation(&scene.config, 5e3, 9.81, 4);
        let z = log.human.last().unwrap()[5] - BLOCK_HALF;
        assert!((z - s).abs() < 1e-4, "{z} vs {s}");
    }

    #[test]
    fn rejects_bad_dt_and_names() {
        let mut s = rest().unwrap();
        s.dt = 0.02;
        assert!(s.simulate().is_err());
        assert!(preset("bogus").is_err());
    }

    #[test]
    fn blowup_is_reported() {
        let mut s = rest().unwrap();
        s.coefficients = Coefficients::new(1e9, 0.0, 0.0, 0.0);
        s.q0[5] = BLOCK_HALF + 0.005;
        s.dt = 0.01;
        s.steps = 150;
        let r = s.simulate();
        assert!(matches!(r, Err(Error::Blowup { .. })), "{:?}", r.map(|l| l.human.last().cloned()));
    }
}
