use contactdyn::contact::{
    contact_force, contact_force_parts, gate, position_lipschitz, Coefficients, ContactMode,
    ContactModelConfig, ContactPointState, TangentialDriver,
};
use contactdyn::dynamics::{inverse_dynamics, mass_matrix, standard_gravity};
use contactdyn::kinematics::Trajectory;
use contactdyn::metrics::{collision_percentage, contact_prf, foot_sliding, pose_errors, prf_from_labels};
use contactdyn::model::{random_tree, KinematicTree};
use contactdyn::spatial::{exp_so3, log_so3, Vec3};
use contactdyn::surfaces::{Shape, Surface, SurfaceQuery};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-range..range).prop_map(Vec3::from)
}

fn random_state(rng: &mut ChaCha8Rng, tree: &KinematicTree) -> Vec<f64> {
    (0..tree.dof()).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn plane_state(p: Vec3, p_dot: Vec3, accel: Vec3) -> ContactPointState {
    ContactPointState {
        p,
        p_dot,
        query: SurfaceQuery {
            x: Vec3::new(p.x, p.y, 0.0),
            n: Vec3::z(),
            signed_distance: p.z,
            x_velocity: Vec3::zeros(),
        },
        driver: TangentialDriver::PointAcceleration(accel),
    }
}

fn coeffs() -> impl Strategy<Value = Coefficients> {
    (0.0..1e4f64, 0.0..500.0f64, 0.0..500.0f64, 0.0..1.5f64)
        .prop_map(|(k, d, r, m)| Coefficients::new(k, d, r, m))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn inverse_dynamics_matches_mass_matrix_form(seed in any::<u64>(), bodies in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = random_tree(&mut rng, bodies);
        let q = random_state(&mut rng, &tree);
        let qd = random_state(&mut rng, &tree);
        let qdd = random_state(&mut rng, &tree);
        let g = standard_gravity();
        let zero = vec![0.0; tree.dof()];
        let m = mass_matrix(&tree, &q).unwrap();
        let bias = inverse_dynamics(&tree, &q, &qd, &zero, &g).unwrap();
        let id = inverse_dynamics(&tree, &q, &qd, &qdd, &g).unwrap();
        let lhs = &m * DVector::from_vec(qdd) + bias;
        prop_assert!((&lhs - &id).norm() <= 1e-8 * (1.0 + id.norm()));
        prop_assert!((&m - m.transpose()).amax() <= 1e-9 * (1.0 + m.amax()));
        prop_assert!(m.cholesky().is_some());
    }

    #[test]
    fn rotation_log_inverts_exp(r in vec3(3.0)) {
        prop_assume!(r.norm() < std::f64::consts::PI - 1e-3);
        prop_assert!((log_so3(&exp_so3(&r)) - r).norm() < 1e-9);
    }

    #[test]
    fn gate_stays_strictly_inside_unit_interval(p in vec3(0.2)) {
        let g = gate(&p, &Vec3::z(), &ContactModelConfig::default()).unwrap();
        prop_assert!(g > 0.0 && g < 1.0, "{g}");
    }

    #[test]
    fn friction_opposes_slip_and_stays_tangent(
        p in vec3(0.03), v in vec3(2.0), a in vec3(5.0), c in coeffs()
    ) {
        let config = ContactModelConfig::default();
        let state = plane_state(p, v, a);
        let parts = contact_force_parts(&state, &c, &config, ContactMode::StaticScene).unwrap();
        let slip = Vec3::new(v.x, v.y, 0.0);
        prop_assert!(parts.kinetic_friction.dot(&slip) <= 0.0);
        let scale = 1.0 + parts.kinetic_friction.norm() + parts.static_friction.norm();
        prop_assert!(parts.kinetic_friction.z.abs() <= 1e-9 * scale);
        prop_assert!(parts.static_friction.z.abs() <= 1e-9 * scale);
    }

    #[test]
    fn force_is_lipschitz_in_position(
        p in vec3(0.03), v in vec3(1.0), a in vec3(5.0), dp in vec3(1.0), c in coeffs()
    ) {
        let config = ContactModelConfig::default();
        let h = 1e-6;
        let step = if dp.norm() > 1e-9 { dp.normalize() * h } else { Vec3::x() * h };
        let base = plane_state(p, v, a);
        let moved = plane_state(p + step, v, a);
        let f0 = contact_force(&base, &c, &config, ContactMode::StaticScene).unwrap();
        let f1 = contact_force(&moved, &c, &config, ContactMode::StaticScene).unwrap();
        let bound = position_lipschitz(&base, &c, &config, h).unwrap();
        prop_assert!((f1 - f0).norm() <= bound * h * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn zero_coefficients_give_zero_force(p in vec3(0.05), v in vec3(2.0), a in vec3(5.0)) {
        let f = contact_force(
            &plane_state(p, v, a),
            &Coefficients::new(0.0, 0.0, 0.0, 0.0),
            &ContactModelConfig::default(),
            ContactMode::StaticScene,
        )
        .unwrap();
        prop_assert_eq!(f, Vec3::zeros());
    }

    #[test]
    fn precision_is_recall_with_roles_swapped(labels in prop::collection::vec(any::<(bool, bool)>(), 1..40)) {
        let (a, b): (Vec<bool>, Vec<bool>) = labels.into_iter().unzip();
        let ab = prf_from_labels(&a, &b).unwrap();
        let ba = prf_from_labels(&b, &a).unwrap();
        prop_assert_eq!(ab.precision, ba.recall);
        prop_assert_eq!(ab.f1, ba.f1);
        prop_assert!((0.0..=1.0).contains(&ab.f1));
    }
}

fn block() -> KinematicTree {
    KinematicTree::single_body("b", 1.0, contactdyn::spatial::Mat3::identity(), Vec3::zeros()).unwrap()
}

fn moving_traj(seed: u64, frames: usize) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = (0..frames)
        .map(|_| DVector::from_fn(6, |i, _| if i < 3 { rng.gen_range(-0.5..0.5) } else { rng.gen_range(-0.3..0.3) }))
        .collect();
    Trajectory::new(0.05, q).unwrap()
}

/// Applies a yaw and translation to every frame of a single-body trajectory.
fn transform(traj: &Trajectory, yaw: f64, shift: Vec3) -> Trajectory {
    let rz = exp_so3(&Vec3::new(0.0, 0.0, yaw));
    let frames = traj
        .frames()
        .iter()
        .map(|q| {
            let r = log_so3(&(rz * exp_so3(&Vec3::new(q[0], q[1], q[2]))));
            let t = rz * Vec3::new(q[3], q[4], q[5]) + shift;
            DVector::from_vec(vec![r.x, r.y, r.z, t.x, t.y, t.z])
        })
        .collect();
    Trajectory::new(traj.dt(), frames).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn metrics_ignore_a_shared_rigid_motion(seed in any::<u64>(), yaw in -3.0..3.0f64, shift in vec3(1.0)) {
        let tree = block();
        let shift = Vec3::new(shift.x, shift.y, 0.0);
        let pred = moving_traj(seed, 8);
        let gt = moving_traj(seed ^ 0x5555, 8);
        let samples = [(0, Vec3::new(0.1, 0.0, 0.0)), (0, Vec3::new(0.0, -0.1, 0.05))];
        let object = |yaw: f64, shift: Vec3| {
            let rz = exp_so3(&Vec3::new(0.0, 0.0, yaw));
            let c = rz * Vec3::new(0.05, 0.02, 0.0) + shift;
            let r = log_so3(&rz);
            let q = DVector::from_vec(vec![r.x, r.y, r.z, c.x, c.y, c.z]);
            let track = Trajectory::new(0.05, vec![q; 8]).unwrap();
            Surface::attached(Shape::cuboid(Vec3::new(0.2, 0.15, 0.1)).unwrap(), &track).unwrap()
        };
        let (o0, o1) = (object(0.0, Vec3::zeros()), object(yaw, shift));
        let (p1, g1) = (transform(&pred, yaw, shift), transform(&gt, yaw, shift));

        let e0 = pose_errors(&pred, &gt, &tree, &[0], &samples).unwrap();
        let e1 = pose_errors(&p1, &g1, &tree, &[0], &samples).unwrap();
        prop_assert!((e0.mpjpe - e1.mpjpe).abs() < 1e-9);
        prop_assert!((e0.o_root - e1.o_root).abs() < 1e-9);
        prop_assert!((e0.mpvpe.unwrap() - e1.mpvpe.unwrap()).abs() < 1e-9);

        let c0 = collision_percentage(&pred, &tree, &samples, &o0, 0.01).unwrap();
        let c1 = collision_percentage(&p1, &tree, &samples, &o1, 0.01).unwrap();
        prop_assert_eq!(c0, c1);
        let f0 = contact_prf(&pred, &gt, &tree, &samples, &o0, 0.05).unwrap();
        let f1 = contact_prf(&p1, &g1, &tree, &samples, &o1, 0.05).unwrap();
        prop_assert_eq!(f0, f1);
        let s0 = foot_sliding(&pred, &tree, &samples, -0.3, 0.2).unwrap();
        let s1 = foot_sliding(&p1, &tree, &samples, -0.3, 0.2).unwrap();
        prop_assert!((s0 - s1).abs() < 1e-9);
    }

    #[test]
    fn collision_is_nonincreasing_in_threshold(seed in any::<u64>(), a in 0.0..0.2f64, b in 0.0..0.2f64) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let tree = block();
        let pred = moving_traj(seed, 12);
        let track = Trajectory::new(0.05, vec![DVector::zeros(6); 12]).unwrap();
        let object = Surface::attached(Shape::sphere(Vec3::zeros(), 0.4).unwrap(), &track).unwrap();
        let samples = [(0, Vec3::zeros()), (0, Vec3::new(0.2, 0.0, 0.0))];
        let c_lo = collision_percentage(&pred, &tree, &samples, &object, lo).unwrap();
        let c_hi = collision_percentage(&pred, &tree, &samples, &object, hi).unwrap();
        prop_assert!(c_hi <= c_lo);
    }
}
