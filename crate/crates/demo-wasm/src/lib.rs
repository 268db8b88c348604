//! Browser demo: contact force curves, preset trajectories and an incline
//! friction sweep. The plain functions are usable natively; the
//! `wasm_bindgen` wrappers hand flat arrays or JSON to the page.

use contactdyn::contact::{contact_force_parts, Coefficients, ContactMode, ContactModelConfig, ContactPointState, TangentialDriver};
use contactdyn::simforge::{self, energy_audit};
use contactdyn::spatial::Vec3;
use contactdyn::surfaces::SurfaceQuery;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Sampled force on a point above the plane `z = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForceCurve {
    pub separation: Vec<f64>,
    pub normal: Vec<f64>,
    /// Magnitude of the tangential (friction) force.
    pub friction: Vec<f64>,
    pub gate: Vec<f64>,
}

/// Contact force against separation for a point sliding at `slip` m/s and
/// approaching at `approach` m/s.
pub fn force_curve(
    coefficients: Coefficients,
    slip: f64,
    approach: f64,
    from: f64,
    to: f64,
    samples: usize,
) -> contactdyn::Result<ForceCurve> {
    coefficients.validate()?;
    if samples < 2 || !(to > from) {
        return Err(contactdyn::Error::Domain("need at least two samples over a non-empty range".into()));
    }
    let config = ContactModelConfig::default();
    let mut out = ForceCurve {
        separation: Vec::with_capacity(samples),
        normal: Vec::with_capacity(samples),
        friction: Vec::with_capacity(samples),
        gate: Vec::with_capacity(samples),
    };
    for i in 0..samples {
        let s = from + (to - from) * i as f64 / (samples - 1) as f64;
        let state = ContactPointState {
            p: Vec3::new(0.0, 0.0, s),
            p_dot: Vec3::new(slip, 0.0, -approach),
            query: SurfaceQuery {
                x: Vec3::zeros(),
                n: Vec3::z(),
                signed_distance: s,
                x_velocity: Vec3::zeros(),
            },
            driver: TangentialDriver::PointAcceleration(Vec3::zeros()),
        };
        let parts = contact_force_parts(&state, &coefficients, &config, ContactMode::StaticScene)?;
        let f = parts.total();
        out.separation.push(s);
        out.normal.push(f.z);
        out.friction.push(f.xy().norm());
        out.gate.push(parts.gate);
    }
    Ok(out)
}

/// Downsampled preset run for plotting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub name: String,
    pub time: Vec<f64>,
    /// Root (or block) position per kept frame.
    pub root: Vec<[f64; 3]>,
    pub object: Option<Vec<[f64; 3]>>,
    /// Sum of the vertical contact forces on the body, N.
    pub normal_force: Vec<f64>,
    /// Kinetic plus gravitational energy, J.
    pub energy: Vec<f64>,
    pub friction_dissipation: Vec<f64>,
    pub max_energy_imbalance: f64,
}

pub fn simulate_preset(name: &str, dt: f64, max_points: usize) -> contactdyn::Result<Trajectory> {
    let scene = simforge::preset(name)?.with_dt(dt);
    scene.validate()?;
    let log = scene.simulate()?;
    let stride = log.frames().div_ceil(max_points.max(2));
    let keep: Vec<usize> = (0..log.frames()).step_by(stride.max(1)).collect();
    let root = scene.tree.root_translation_range();
    Ok(Trajectory {
        name: scene.name.clone(),
        time: keep.iter().map(|&t| t as f64 * log.dt).collect(),
        root: keep
            .iter()
            .map(|&t| [0, 1, 2].map(|i| log.human[t][root.start + i]))
            .collect(),
        object: log
            .object
            .as_ref()
            .map(|o| keep.iter().map(|&t| [o[t][3], o[t][4], o[t][5]]).collect()),
        normal_force: keep.iter().map(|&t| log.forces[t].iter().map(|f| f.z).sum()).collect(),
        energy: keep
            .iter()
            .map(|&t| log.energy[t].kinetic + log.energy[t].gravitational)
            .collect(),
        friction_dissipation: keep.iter().map(|&t| log.energy[t].friction_dissipation).collect(),
        max_energy_imbalance: energy_audit(&log).max_abs_balance,
    })
}

/// Down-slope travel after `duration` seconds on a `theta_deg` incline, one
/// entry per friction coefficient.
pub fn incline_sweep(theta_deg: f64, mus: &[f64], rho: f64, duration: f64) -> contactdyn::Result<Vec<f64>> {
    let th = theta_deg.to_radians();
    let tangent = Vec3::new(th.cos(), 0.0, th.sin());
    mus.iter()
        .map(|&mu| {
            let mut scene = simforge::incline(th, mu, rho)?;
            scene.steps = (duration / scene.dt).round() as usize;
            let log = scene.simulate()?;
            let (a, b) = (&log.human[0], log.human.last().expect("at least one frame"));
            Ok((Vec3::new(b[3] - a[3], b[4] - a[4], b[5] - a[5])).dot(&tangent).abs())
        })
        .collect()
}

fn js_err(e: contactdyn::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Flat `[separation, normal, friction, gate]` rows.
#[wasm_bindgen(js_name = forceCurve)]
#[allow(clippy::too_many_arguments)]
pub fn force_curve_js(
    kappa: f64,
    delta: f64,
    rho: f64,
    mu: f64,
    slip: f64,
    approach: f64,
    from: f64,
    to: f64,
    samples: usize,
) -> Result<Vec<f64>, JsError> {
    let c = force_curve(Coefficients::new(kappa, delta, rho, mu), slip, approach, from, to, samples).map_err(js_err)?;
    Ok((0..c.separation.len())
        .flat_map(|i| [c.separation[i], c.normal[i], c.friction[i], c.gate[i]])
        .collect())
}

/// JSON-encoded [`Trajectory`].
#[wasm_bindgen(js_name = simulatePreset)]
pub fn simulate_preset_js(name: &str, dt: f64, max_points: usize) -> Result<String, JsError> {
    let t = simulate_preset(name, dt, max_points).map_err(js_err)?;
    serde_json::to_string(&t).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = inclineSweep)]
pub fn incline_sweep_js(theta_deg: f64, mus: Vec<f64>, rho: f64, duration: f64) -> Result<Vec<f64>, JsError> {
    incline_sweep(theta_deg, &mus, rho, duration).map_err(js_err)
}

#[wasm_bindgen(js_name = presetNames)]
pub fn preset_names() -> Vec<String> {
    simforge::PRESETS.iter().map(|s| s.to_string()).collect()
}
