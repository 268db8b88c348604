use contactdyn::simforge::{self, energy_audit, incline_angle, preset, Profile, PRESETS};
use contactdyn::spatial::Vec3;

fn slope_tangent() -> Vec3 {
    let th = incline_angle();
    Vec3::new(th.cos(), 0.0, th.sin())
}

fn com(q: &nalgebra::DVector<f64>) -> Vec3 {
    Vec3::new(q[3], q[4], q[5])
}

#[test]
fn every_preset_round_trips_at_first_order() {
    for name in PRESETS {
        for dt in [1e-3, 5e-4] {
            let scene = preset(name).unwrap().with_dt(dt);
            let log = scene.simulate().unwrap();
            let rt = scene.round_trip(&log).unwrap();
            assert!(
                rt.within_bound(),
                "{name} dt={dt}: {} > {}",
                rt.max_frame_l1,
                rt.bound
            );
        }
    }
}

#[test]
fn incline_slides_with_low_friction() {
    let scene = preset("incline").unwrap();
    let log = scene.simulate().unwrap();
    let t = slope_tangent();
    let n = log.frames();
    let speed = (com(&log.human[n - 1]) - com(&log.human[n - 2])).dot(&t).abs() / scene.dt;
    assert!(speed > 0.1, "tangential speed {speed}");
}

#[test]
fn incline_holds_with_static_friction() {
    let scene = simforge::incline_hold().unwrap();
    let log = scene.simulate().unwrap();
    let t = slope_tangent();
    let drift = (com(log.human.last().unwrap()) - com(&log.human[0])).dot(&t).abs();
    assert!(drift < 1e-3, "drift {drift}");
}

#[test]
fn sliding_dissipation_matches_coulomb_work() {
    let scene = preset("incline").unwrap();
    let log = scene.simulate().unwrap();
    let distance = (com(log.human.last().unwrap()) - com(&log.human[0])).dot(&slope_tangent()).abs();
    let expected = 0.05 * 9.81 * incline_angle().cos() * distance;
    let got = log.energy.last().unwrap().friction_dissipation;
    assert!((got - expected).abs() < 0.05 * expected, "{got} vs {expected}");
}

#[test]
fn energy_ledgers_balance_and_friction_never_adds_energy() {
    for name in PRESETS {
        let log = preset(name).unwrap().simulate().unwrap();
        let audit = energy_audit(&log);
        assert!(audit.flagged.is_empty(), "{name}: {:?}", &audit.flagged[..audit.flagged.len().min(5)]);
        assert!(audit.max_friction_work <= 1e-12, "{name}: {}", audit.max_friction_work);
    }
    let log = simforge::incline_hold().unwrap().simulate().unwrap();
    assert!(energy_audit(&log).max_friction_work <= 1e-12);
}

#[test]
fn resting_block_has_quiet_ledger() {
    let log = preset("rest").unwrap().simulate().unwrap();
    let audit = energy_audit(&log);
    let tail = &audit.balances[1200..];
    assert!(tail.iter().all(|b| b.abs() < 1e-9), "{:?}", tail.iter().fold(0.0f64, |m, b| m.max(b.abs())));
}

#[test]
fn free_fall_trades_potential_for_kinetic() {
    let mut scene = preset("rest").unwrap();
    scene.q0[5] = 2.0;
    scene.steps = 200;
    let log = scene.simulate().unwrap();
    for w in log.energy.windows(2) {
        let gained = w[1].kinetic - w[0].kinetic;
        let lost = w[0].gravitational - w[1].gravitational;
        assert!((gained - lost).abs() <= 2.0 * w[1].step_budget + 1e-12);
    }
}

#[test]
fn pendulum_conserves_energy_to_first_order() {
    let drift = |dt: f64| {
        let log = preset("pendulum").unwrap().with_dt(dt).simulate().unwrap();
        let e = |r: &simforge::EnergyRecord| r.kinetic + r.gravitational;
        log.energy.iter().map(|r| (e(r) - e(&log.energy[0])).abs()).fold(0.0, f64::max)
    };
    let (coarse, fine) = (drift(1e-3), drift(5e-4));
    assert!(coarse < 0.01 * 9.81);
    assert!(fine < 0.6 * coarse, "{fine} vs {coarse}");
}

#[test]
fn carry_lifts_the_box_with_the_hand() {
    let scene = preset("carry").unwrap();
    let log = scene.simulate().unwrap();
    let object = log.object.as_ref().unwrap();
    let lift = object.last().unwrap()[5] - object[0][5];
    assert!((lift - 0.15).abs() < 1e-3, "lift {lift}");
    // static hold before the lift: hand carries the box weight
    let total: Vec3 = log.forces[300].iter().sum();
    assert!((-total.z - 19.62).abs() < 0.01 * 19.62, "{total:?}");
}

#[test]
fn simulation_is_deterministic() {
    for name in PRESETS {
        let scene = preset(name).unwrap();
        assert_eq!(scene.simulate().unwrap(), scene.simulate().unwrap(), "{name}");
    }
}

#[test]
fn log_serializes_losslessly() {
    let mut scene = preset("carry").unwrap();
    scene.steps = 20;
    let log = scene.simulate().unwrap();
    let text = serde_json::to_string(&log).unwrap();
    let back: simforge::SimulationLog = serde_json::from_str(&text).unwrap();
    assert_eq!(back, log);
    assert_eq!(log.forces.len(), 21);
    assert!(log.forces.iter().all(|f| f.len() == scene.points.points.len()));
}

#[test]
fn quintic_profile_is_smooth_at_the_joins() {
    let p = Profile::Quintic {
        from: 0.0,
        to: 1.0,
        start: 1.0,
        duration: 2.0,
    };
    let h = 1e-7;
    for t in [1.0, 3.0] {
        let (a, b) = (p.eval(t - h), p.eval(t + h));
        assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-9 && (a.2 - b.2).abs() < 1e-5);
    }
}
