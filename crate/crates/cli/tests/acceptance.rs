//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use contactdyn::contact::{
    contact_force_parts, gate, position_lipschitz, CoefficientTensor, Coefficients, ContactMode, ContactModelConfig,
    ContactPointState, TangentialDriver,
};
use contactdyn::dynamics::{
    human_residual, inverse_dynamics, mass_matrix, object_residual, standard_gravity, FrameState,
};
use contactdyn::kinematics::{point_jacobian, point_position, ContactRole, Trajectory};
use contactdyn::metrics::{
    collision_percentage, contact_prf, pose_errors, prf_from_labels, scene_penetration, MetricReport,
};
use contactdyn::model::{build_tree, pendulum_tree, random_tree, KinematicTree, ModelDescription};
use contactdyn::simforge::{self, preset, SimulationLog, PRESETS};
use contactdyn::solver::{self, gradient_check};
use contactdyn::spatial::{Mat3, Vec3};
use contactdyn::surfaces::{Shape, Surface, SurfaceQuery, TriMesh, VoxelGrid};
use contactdyn_cli::commands::{random_point, run_file_from_log};
use contactdyn_cli::runfile::RunFile;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn rvec(rng: &mut ChaCha8Rng, n: usize, r: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-r..r)).collect()
}

fn rvec3(rng: &mut ChaCha8Rng, r: f64) -> Vec3 {
    Vec3::new(rng.gen_range(-r..r), rng.gen_range(-r..r), rng.gen_range(-r..r))
}

fn unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = rvec3(rng, 1.0);
        if v.norm() > 0.1 {
            return v.normalize();
        }
    }
}

fn dynamics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = standard_gravity();
    let (res, time) = timed(|| -> Result<(f64, f64), String> {
        let (mut worst_id, mut worst_sym) = (0.0f64, 0.0f64);
        for i in 0..100 {
            let tree = random_tree(&mut rng, 1 + i % 24);
            let n = tree.dof();
            let (q, qd, qdd) = (rvec(&mut rng, n, 1.5), rvec(&mut rng, n, 2.0), rvec(&mut rng, n, 2.0));
            let m = mass_matrix(&tree, &q).map_err(|e| e.to_string())?;
            let bias = inverse_dynamics(&tree, &q, &qd, &vec![0.0; n], &g).map_err(|e| e.to_string())?;
            let id = inverse_dynamics(&tree, &q, &qd, &qdd, &g).map_err(|e| e.to_string())?;
            let rebuilt = &m * DVector::from_vec(qdd) + bias;
            worst_id = worst_id.max((rebuilt - &id).norm() / id.norm().max(1.0));
            worst_sym = worst_sym.max((&m - m.transpose()).amax() / m.amax().max(1.0));
            ensure!(m.clone().cholesky().is_some(), "tree {i}: mass matrix not positive definite");
        }
        Ok((worst_id, worst_sym))
    });
    let (worst_id, worst_sym) = res?;
    ensure!(worst_id <= 1e-8, "relative RNEA mismatch {worst_id:e}");
    ensure!(worst_sym <= 1e-9, "asymmetry {worst_sym:e}");
    ensure!(time.as_secs_f64() < 10.0, "took {time:?}");
    Ok(format!("rel err {worst_id:.1e}, asym {worst_sym:.1e}, {:.2}s", time.as_secs_f64()))
}

fn jacobian_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-6;
    let (worst, time) = timed(|| {
        let mut worst = 0.0f64;
        for i in 0..1000 {
            let tree = random_tree(&mut rng, 1 + i % 24);
            let n = tree.dof();
            let q = rvec(&mut rng, n, 1.5);
            let body = rng.gen_range(0..tree.num_links());
            let offset = rvec3(&mut rng, 0.3);
            let jac = point_jacobian(&tree, &q, body, &offset).unwrap();
            for c in 0..n {
                let (mut qp, mut qm) = (q.clone(), q.clone());
                qp[c] += h;
                qm[c] -= h;
                let fd = (point_position(&tree, &qp, body, &offset).unwrap()
                    - point_position(&tree, &qm, body, &offset).unwrap())
                    / (2.0 * h);
                worst = worst.max((fd - jac.column(c)).amax());
            }
        }
        worst
    });
    ensure!(worst <= 1e-5, "max abs error {worst:e}");
    ensure!(time.as_secs_f64() < 30.0, "took {time:?}");
    Ok(format!("max abs err {worst:.1e} over 1000 samples, {:.2}s", time.as_secs_f64()))
}

fn analytic_statics() -> Outcome {
    let tree = pendulum_tree(1.0, 1.0).map_err(|e| e.to_string())?;
    let mut q = vec![0.0; 7];
    q[6] = std::f64::consts::FRAC_PI_2;
    let z = vec![0.0; 7];
    let tau = inverse_dynamics(&tree, &q, &z, &z, &standard_gravity()).map_err(|e| e.to_string())?;
    let m = mass_matrix(&tree, &q).map_err(|e| e.to_string())?;
    let (te, me) = ((tau[6].abs() - 9.81).abs(), (m[(6, 6)] - 1.0).abs());
    ensure!(te <= 1e-9, "torque {}", tau[6]);
    ensure!(me <= 1e-12, "m l^2 = {}", m[(6, 6)]);
    Ok(format!("torque {:.12} N m, M = {:.12} kg m^2", tau[6].abs(), m[(6, 6)]))
}

fn plane_state(x: Vec3, n: Vec3, s: f64, v: Vec3, a: Vec3) -> ContactPointState {
    ContactPointState {
        p: x + n * s,
        p_dot: v,
        query: SurfaceQuery {
            x,
            n,
            signed_distance: s,
            x_velocity: Vec3::zeros(),
        },
        driver: TangentialDriver::PointAcceleration(a),
    }
}

fn contact_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let config = ContactModelConfig::default();
    let h = 1e-6;
    let (mut worst_tan, mut worst_lip, mut worst_diss) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..100_000 {
        let n = unit(&mut rng);
        let x = rvec3(&mut rng, 1.0);
        let s = rng.gen_range(-0.06..0.06);
        let v = rvec3(&mut rng, 2.0);
        let a = rvec3(&mut rng, 10.0);
        let c = Coefficients::new(
            rng.gen_range(0.0..1e4),
            rng.gen_range(0.0..500.0),
            rng.gen_range(0.0..500.0),
            rng.gen_range(0.0..1.5),
        );
        let st = plane_state(x, n, s, v, a);
        let g = gate(&(st.p - x), &n, &config).map_err(|e| e.to_string())?;
        ensure!(g > 0.0 && g < 1.0, "sample {i}: gate {g}");
        let parts = contact_force_parts(&st, &c, &config, ContactMode::StaticScene).map_err(|e| e.to_string())?;
        let slip = v - n * v.dot(&n);
        worst_diss = worst_diss.max(parts.kinetic_friction.dot(&slip));
        let scale = 1.0 + parts.kinetic_friction.norm() + parts.static_friction.norm();
        worst_tan = worst_tan
            .max(parts.kinetic_friction.dot(&n).abs() / scale)
            .max(parts.static_friction.dot(&n).abs() / scale);

        let dp = unit(&mut rng) * h;
        let moved = plane_state(x + dp - n * dp.dot(&n), n, s + dp.dot(&n), v, a);
        let f0 = contact_force_parts(&st, &c, &config, ContactMode::StaticScene).unwrap().total();
        let f1 = contact_force_parts(&moved, &c, &config, ContactMode::StaticScene).unwrap().total();
        let bound = position_lipschitz(&st, &c, &config, h).map_err(|e| e.to_string())?;
        worst_lip = worst_lip.max((f1 - f0).norm() / (bound * h + 1e-12));
    }
    ensure!(worst_diss <= 0.0, "kinetic friction did positive work {worst_diss:e}");
    ensure!(worst_tan <= 1e-9, "normal component of friction {worst_tan:e}");
    ensure!(worst_lip <= 1.0 + 1e-9, "Lipschitz ratio {worst_lip}");
    Ok(format!(
        "1e5 samples: max f_k.v {worst_diss:.1e}, normal leak {worst_tan:.1e}, Lipschitz ratio {worst_lip:.3}"
    ))
}

fn normal_force(log: &SimulationLog, t: usize) -> f64 {
    log.forces[t].iter().map(|f| f.z).sum()
}

fn simulation_statics() -> Outcome {
    let scene = preset("rest").map_err(|e| e.to_string())?;
    let (log, time) = timed(|| scene.simulate());
    let log = log.map_err(|e| e.to_string())?;
    let from = (1.0 / scene.dt).round() as usize;
    let worst = (from..log.frames())
        .map(|t| (normal_force(&log, t) - 9.81).abs() / 9.81)
        .fold(0.0, f64::max);
    ensure!(worst <= 0.02, "normal force off by {:.2}%", 100.0 * worst);
    ensure!(time.as_secs_f64() < 5.0, "took {time:?}");
    Ok(format!(
        "normal force {:.4} N at t = {:.1} s, max dev {:.3}% after 1 s, {:.2}s",
        normal_force(&log, log.frames() - 1),
        (log.frames() - 1) as f64 * scene.dt,
        100.0 * worst,
        time.as_secs_f64()
    ))
}

fn friction_threshold() -> Outcome {
    let th = simforge::incline_angle();
    let tangent = Vec3::new(th.cos(), 0.0, th.sin());
    let com = |q: &DVector<f64>| Vec3::new(q[3], q[4], q[5]);
    let slide = simforge::incline(th, 0.05, 0.0).map_err(|e| e.to_string())?;
    let log = slide.simulate().map_err(|e| e.to_string())?;
    let n = log.frames();
    let speed = (com(&log.human[n - 1]) - com(&log.human[n - 2])).dot(&tangent).abs() / slide.dt;
    let hold = simforge::incline(th, 0.6, 500.0).map_err(|e| e.to_string())?;
    let log = hold.simulate().map_err(|e| e.to_string())?;
    let drift = (com(log.human.last().unwrap()) - com(&log.human[0])).dot(&tangent).abs();
    ensure!(speed > 0.1, "mu 0.05 speed {speed}");
    ensure!(drift < 1e-3, "mu 0.6 drift {drift}");
    Ok(format!(
        "mu 0.05 slides at {speed:.3} m/s, mu 0.6 drifts {:.3} mm (tan 10 deg = {:.3})",
        drift * 1e3,
        th.tan()
    ))
}

fn round_trip() -> Outcome {
    let mut lines = Vec::new();
    for name in PRESETS {
        let mut prev: Option<(f64, f64)> = None;
        for dt in [1e-3, 5e-4] {
            let scene = preset(name).map_err(|e| e.to_string())?.with_dt(dt);
            let log = scene.simulate().map_err(|e| e.to_string())?;
            let rt = scene.round_trip(&log).map_err(|e| e.to_string())?;
            ensure!(rt.within_bound(), "{name} dt {dt}: {:e} > {:e}", rt.max_frame_l1, rt.bound);
            if let Some((bound, _)) = prev {
                ensure!(rt.bound <= 0.5 * bound + 1e-15, "{name}: bound did not halve");
            }
            prev = Some((rt.bound, rt.max_frame_l1));
            lines.push(format!("{name}@{dt}: {:.2e}/{:.2e}", rt.max_frame_l1, rt.bound));
        }
    }
    Ok(lines.join(", "))
}

fn rms(a: &[Vec<Vec3>], b: &[Vec<Vec3>]) -> f64 {
    let (mut num, mut den, mut count) = (0.0, 0.0, 0usize);
    for (fa, fb) in a.iter().zip(b) {
        for (x, y) in fa.iter().zip(fb) {
            num += (x - y).norm_squared();
            den += y.norm_squared();
            count += 1;
        }
    }
    (num / count as f64).sqrt() / (den / count as f64).sqrt()
}

fn solver_recovery() -> Outcome {
    let mut lines = Vec::new();
    for name in ["rest", "carry"] {
        let scene = preset(name).map_err(|e| e.to_string())?;
        let log = scene.simulate().map_err(|e| e.to_string())?;
        let problem = scene.solve_problem(&log).map_err(|e| e.to_string())?;
        let (result, time) = timed(|| solver::solve(&problem));
        let result = result.map_err(|e| e.to_string())?;
        let err = rms(&result.forces, &log.forces);
        ensure!(err <= 0.05, "{name}: force RMS {:.2}%", 100.0 * err);
        ensure!(
            result.history.windows(2).all(|w| w[1] <= w[0]),
            "{name}: objective history increased"
        );
        ensure!(time.as_secs_f64() < 300.0, "{name}: took {time:?}");
        let mut line = format!("{name} RMS {:.3}% in {:.2}s", 100.0 * err, time.as_secs_f64());
        if name == "carry" {
            // hold phase, before the lift starts at 0.4 s
            let t = (0.3 / scene.dt) as usize;
            let lift: f64 = result.forces[t]
                .iter()
                .zip(&scene.points.points)
                .filter(|(_, p)| p.role == ContactRole::Object)
                .map(|(f, _)| -f.z)
                .sum();
            ensure!((lift - 19.62).abs() <= 0.05 * 19.62, "carry hold force {lift}");
            line += &format!(", hold lambda_o,z {lift:.3} N");
        }
        lines.push(line);
    }
    Ok(lines.join("; "))
}

fn gradient_agreement() -> Outcome {
    let mut scene = preset("carry").map_err(|e| e.to_string())?;
    scene.steps = 200;
    let log = scene.simulate().map_err(|e| e.to_string())?;
    let problem = scene.solve_problem(&log).map_err(|e| e.to_string())?;
    let (mut worst, mut excluded) = (0.0f64, 0);
    for seed in 0..10 {
        let (tau, coeffs) = random_point(&problem, seed).map_err(|e| e.to_string())?;
        let report = gradient_check(&problem, &tau, &coeffs, 20, seed).map_err(|e| e.to_string())?;
        worst = worst.max(report.max_relative_error);
        excluded += report.excluded;
    }
    ensure!(worst <= 1e-4, "max relative error {worst:e}");
    Ok(format!("10 points x 20 coordinates: max rel err {worst:.1e}, {excluded} excluded"))
}

fn third_law() -> Outcome {
    let mut scene = preset("carry").map_err(|e| e.to_string())?;
    scene.steps = 400;
    let log = scene.simulate().map_err(|e| e.to_string())?;
    let system = scene.coupled_system(&log).map_err(|e| e.to_string())?;
    let obj = system.object.as_ref().ok_or("carry has no object")?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for t in [50, 200, 350] {
        let terms = system.frame_terms(t).map_err(|e| e.to_string())?;
        let coeffs: Vec<Coefficients> = vec![scene.coefficients; terms.contacts.len()];
        let lambdas = terms.forces(&coeffs);
        let tau = &log.tau[t];
        let (rh0, ro0) = terms.residual(tau.as_slice(), &coeffs);
        let hs = system.human_state(t).map_err(|e| e.to_string())?;
        let track = obj.track();
        let qo = (&track.frames()[t], &track.velocities().unwrap()[t], &track.accelerations().unwrap()[t]);
        let os = FrameState {
            q: qo.0.as_slice(),
            qd: qo.1.as_slice(),
            qdd: qo.2.as_slice(),
        };
        let eval = |lam: &[Vec3]| {
            let hc: Vec<_> = terms
                .contacts
                .iter()
                .zip(lam)
                .map(|(c, l)| (c.human_jacobian.clone(), *l))
                .collect();
            let oc: Vec<_> = terms
                .contacts
                .iter()
                .zip(lam)
                .map(|(c, l)| (c.object_jacobian.unwrap(), *l))
                .collect();
            (
                human_residual(&system.tree, hs, tau.as_slice(), &[], &hc, &system.gravity).unwrap(),
                object_residual(&obj.model, os, &oc, &system.gravity).unwrap(),
            )
        };
        let (rh, ro) = eval(&lambdas);
        // the per-frame terms and the explicit residual agree
        worst = worst.max((&rh - &rh0).amax()).max((ro - ro0.unwrap()).amax());
        for k in 0..lambdas.len() {
            let delta = rvec3(&mut rng, 5.0);
            let mut pushed = lambdas.clone();
            pushed[k] += delta;
            let (rh1, ro1) = eval(&pushed);
            let c = &terms.contacts[k];
            let dh = &rh1 - &rh + c.human_jacobian.transpose() * delta;
            let dobj = ro1 - ro - c.object_jacobian.unwrap().transpose() * delta;
            let scale = 1.0 + rh.amax() + ro.amax();
            worst = worst.max(dh.amax() / scale).max(dobj.amax() / scale);
        }
    }
    ensure!(worst <= 1e-13, "deviation {worst:e}");
    Ok(format!("max deviation {worst:.1e} (relative to residual scale)"))
}

fn block() -> KinematicTree {
    KinematicTree::single_body("b", 1.0, Mat3::identity(), Vec3::zeros()).unwrap()
}

fn traj(frames: Vec<[f64; 6]>) -> Trajectory {
    Trajectory::new(0.1, frames.into_iter().map(|f| DVector::from_row_slice(&f)).collect()).unwrap()
}

fn metrics_exactness() -> Outcome {
    let p = prf_from_labels(&[true, true, true, false, false], &[true, false, true, true, false]).unwrap();
    ensure!(
        (p.precision, p.recall) == (2.0 / 3.0, 2.0 / 3.0) && p.f1 == 2.0 * p.precision * p.recall / (p.precision + p.recall),
        "confusion case {p:?}"
    );
    let q = prf_from_labels(&[true, true, false, false], &[true, false, true, false]).unwrap();
    ensure!((q.precision, q.recall, q.f1) == (0.5, 0.5, 0.5), "balanced case {q:?}");

    let gt = traj(vec![[0.0; 6]; 3]);
    let pred = traj(vec![[0.0, 0.0, 0.0, 0.03, 0.0, 0.0]; 3]);
    let e = pose_errors(&pred, &gt, &block(), &[0], &[(0, Vec3::x())]).unwrap();
    for (name, v) in [("t_root", e.t_root), ("mpjpe", e.mpjpe), ("hand_jpe", e.hand_jpe.unwrap()), ("mpvpe", e.mpvpe.unwrap())] {
        ensure!((v - 3.0).abs() <= 1e-12, "3 cm offset: {name} = {v}");
    }
    ensure!(e.o_root == 0.0, "offset o_root {}", e.o_root);

    let turned = traj(vec![[0.0, 0.0, std::f64::consts::FRAC_PI_2, 0.0, 0.0, 0.0]]);
    let e = pose_errors(&turned, &traj(vec![[0.0; 6]]), &block(), &[], &[]).unwrap();
    ensure!((e.o_root - 2.0).abs() <= 1e-12, "quarter turn o_root {}", e.o_root);

    // boundary points are neither penetrating nor in contact
    let floor = Surface::fixed(Shape::plane(Vec3::zeros(), Vec3::z()).unwrap());
    let heights = [0.5, -0.04, -0.05, 0.05, 0.049];
    let t = traj(heights.iter().map(|z| [0.0, 0.0, 0.0, 0.0, 0.0, *z]).collect());
    let pen = scene_penetration(&t, &block(), &[(0, Vec3::zeros())], std::slice::from_ref(&floor), 0.04).unwrap();
    ensure!(pen == 20.0, "penetration {pen}% (expected 20)");
    let col = collision_percentage(&t, &block(), &[(0, Vec3::zeros())], &floor, 0.04).unwrap();
    ensure!(col == 20.0, "collision {col}% (expected 20)");
    let contact = contact_prf(&t, &t, &block(), &[(0, Vec3::zeros())], &floor, 0.05).unwrap();
    let labels = [false, true, true, false, true];
    let expected = prf_from_labels(&labels, &labels).unwrap();
    ensure!(contact == expected && contact.f1 == 1.0, "contact labels {contact:?}");
    // swapping the 5.0 cm and 4.9 cm frames: one false positive, one miss
    let swapped = traj([0.5, -0.04, -0.05, 0.049, 0.05].iter().map(|z| [0.0, 0.0, 0.0, 0.0, 0.0, *z]).collect());
    let s = contact_prf(&swapped, &t, &block(), &[(0, Vec3::zeros())], &floor, 0.05).unwrap();
    ensure!((s.precision, s.recall) == (2.0 / 3.0, 2.0 / 3.0) && (s.f1 - 2.0 / 3.0).abs() <= 1e-15, "{s:?}");
    Ok("P/R/F1, 3 cm offset, quarter turn, strict thresholds".into())
}

fn determinism_and_io() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut checked = Vec::new();
    for name in PRESETS {
        let mut scene = preset(name).map_err(|e| e.to_string())?;
        scene.steps = 300;
        let (a, b) = (scene.simulate().unwrap(), scene.simulate().unwrap());
        ensure!(a == b, "{name}: simulation not reproducible");
        let text = serde_json::to_string(&a).unwrap();
        ensure!(serde_json::from_str::<SimulationLog>(&text).unwrap() == a, "{name}: log reload");
        let run = run_file_from_log(&scene, &a).map_err(|e| e.to_string())?;
        let path = dir.path().join(format!("{name}.json"));
        std::fs::write(&path, run.to_json()).unwrap();
        ensure!(RunFile::load(&path).map_err(|e| e.to_string())? == run, "{name}: run file reload");
        let desc = ModelDescription::from_tree(&scene.tree);
        let rebuilt = build_tree(&ModelDescription::from_json(&serde_json::to_string(&desc).unwrap()).unwrap()).unwrap();
        ensure!(rebuilt == scene.tree, "{name}: model reload");
    }
    checked.push("simulate x4");

    let mut scene = preset("carry").unwrap();
    scene.steps = 200;
    let log = scene.simulate().unwrap();
    let problem = scene.solve_problem(&log).unwrap();
    let (a, b) = (solver::solve(&problem).unwrap(), solver::solve(&problem).unwrap());
    ensure!(a == b, "solve not reproducible");
    let text = serde_json::to_string(&a).unwrap();
    ensure!(serde_json::from_str::<solver::SolveResult>(&text).unwrap() == a, "solve result reload");
    let (tau, coeffs) = random_point(&problem, 3).unwrap();
    ensure!(random_point(&problem, 3).unwrap() == (tau.clone(), coeffs.clone()), "random point not seeded");
    let ga = gradient_check(&problem, &tau, &coeffs, 10, 9).unwrap();
    ensure!(ga == gradient_check(&problem, &tau, &coeffs, 10, 9).unwrap(), "gradcheck not seeded");
    let nested = coeffs.to_nested();
    ensure!(CoefficientTensor::from_nested(&nested).unwrap() == coeffs, "coefficient tensor reload");
    checked.push("solve, gradcheck");

    let report = MetricReport {
        hand_jpe: Some(1.0 / 3.0),
        mpjpe: 0.1 + 0.2,
        mpvpe: None,
        t_root: 3.0,
        o_root: 2.0,
        collision_pct: Some(12.5),
        fs: Some(1e-300),
        c_prec: Some(0.5),
        c_rec: None,
        f1: Some(2.0 / 3.0),
        scene_pen: Some(0.0),
    };
    ensure!(MetricReport::from_key_value(&report.to_key_value()).unwrap() == report, "metric text reload");
    ensure!(MetricReport::from_csv_row(&report.to_csv_row()).unwrap() == report, "metric CSV reload");

    let mesh = TriMesh::cuboid(&Vec3::new(0.1, 0.2, 0.3)).unwrap();
    ensure!(TriMesh::from_obj(&mesh.to_obj()).unwrap() == mesh, "OBJ reload");
    let occupancy: Vec<bool> = (0..24).map(|i| i % 3 != 0).collect();
    let grid = VoxelGrid::new([2, 3, 4], 0.05, Vec3::new(0.1, 0.0, -0.2), occupancy).unwrap();
    ensure!(VoxelGrid::parse(&grid.to_text()).unwrap() == grid, "voxel reload");
    checked.push("metrics, OBJ, voxels");
    Ok(checked.join(", "))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("dynamics oracle", dynamics_oracle),
        ("Jacobian suite", jacobian_suite),
        ("analytic statics", analytic_statics),
        ("contact force properties", contact_properties),
        ("simulation statics", simulation_statics),
        ("friction threshold", friction_threshold),
        ("round trip", round_trip),
        ("solver recovery", solver_recovery),
        ("gradient check", gradient_agreement),
        ("third law", third_law),
        ("metrics exactness", metrics_exactness),
        ("determinism and I/O", determinism_and_io),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
