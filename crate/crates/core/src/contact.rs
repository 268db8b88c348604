//! Continuous contact force model.
//!
//! For a body point `p` with nearest surface point `x`, normal `n` and
//! relative offset `p~ = p - x`, the force exerted on the body is
//!
//! ```text
//! lambda = h(-alpha (|p~| - d0)) h(beta (p~.n + d1)) (f_n + f_s + f_k)
//! ```
//!
//! with `h` the logistic sigmoid, a damped-spring normal force `f_n`, a
//! speed-gated static friction `f_s` and a kinetic friction `f_k`
//! proportional to `|f_n|`.

use nalgebra::Matrix3x4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::Vec3;
use crate::surfaces::SurfaceQuery;

const UNIT_TOL: f64 = 1e-9;

/// How the spring term measures normal separation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalMode {
    /// Signed separation `p~.n`; distinguishes penetration from separation.
    #[default]
    Signed,
    /// Unsigned `|p~_perp|` exactly as in the original formulation.
    StrictPaper,
}

/// Gate and buffer hyperparameters, shared by every contact point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContactModelConfig {
    /// Distance gate sharpness, 1/m.
    pub alpha: f64,
    /// Penetration gate sharpness, 1/m.
    pub beta: f64,
    /// Static-friction speed gate sharpness, s/m.
    pub gamma: f64,
    /// Contact buffer, m.
    pub d0: f64,
    /// Penetration buffer, m.
    pub d1: f64,
    /// Static/kinetic speed threshold, m/s.
    pub v0: f64,
    /// Direction-normalisation floor.
    pub eps: f64,
    pub normal_mode: NormalMode,
}

impl Default for ContactModelConfig {
    fn default() -> Self {
        Self {
            alpha: 200.0,
            beta: 200.0,
            gamma: 20.0,
            d0: 0.02,
            d1: 0.01,
            v0: 0.05,
            eps: 1e-4,
            normal_mode: NormalMode::Signed,
        }
    }
}

impl ContactModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("v0", self.v0),
            ("eps", self.eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [("d0", self.d0), ("d1", self.d1)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// `(kappa, delta, rho, mu)` for one point in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Coefficients {
    /// Stiffness, N/m.
    pub stiffness: f64,
    /// Damping, N s/m.
    pub damping: f64,
    /// Static-friction gain, N/m.
    pub static_gain: f64,
    /// Kinetic friction coefficient.
    pub kinetic: f64,
}

impl Coefficients {
    pub fn new(stiffness: f64, damping: f64, static_gain: f64, kinetic: f64) -> Self {
        Self {
            stiffness,
            damping,
            static_gain,
            kinetic,
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.stiffness, self.damping, self.static_gain, self.kinetic]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn scaled(self, c: f64) -> Self {
        Self::from_array(self.to_array().map(|v| v * c))
    }

    pub fn validate(&self) -> Result<()> {
        const NAMES: [&str; 4] = ["stiffness", "damping", "static_gain", "kinetic"];
        for (name, value) in NAMES.into_iter().zip(self.to_array()) {
            check_coefficient(name, value)?;
        }
        Ok(())
    }
}

fn check_coefficient(name: &'static str, value: f64) -> Result<()> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Coefficient { name, value })
    }
}

/// Dense `[T][C][4]` coefficient tensor (the `A` and `B` blocks).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTensor {
    frames: usize,
    points: usize,
    data: Vec<f64>,
}

impl CoefficientTensor {
    pub fn zeros(frames: usize, points: usize) -> Self {
        Self {
            frames,
            points,
            data: vec![0.0; frames * points * 4],
        }
    }

    pub fn constant(frames: usize, points: usize, c: Coefficients) -> Self {
        let mut t = Self::zeros(frames, points);
        for f in 0..frames {
            for p in 0..points {
                t.set(f, p, c);
            }
        }
        t
    }

    pub fn from_nested(nested: &[Vec<[f64; 4]>]) -> Result<Self> {
        let frames = nested.len();
        let points = nested.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(frames * points * 4);
        for row in nested {
            crate::error::check_len("coefficient tensor row", points, row.len())?;
            for c in row {
                data.extend_from_slice(c);
            }
        }
        Ok(Self {
            frames,
            points,
            data,
        })
    }

    pub fn to_nested(&self) -> Vec<Vec<[f64; 4]>> {
        (0..self.frames)
            .map(|f| (0..self.points).map(|p| self.get(f, p).to_array()).collect())
            .collect()
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn get(&self, frame: usize, point: usize) -> Coefficients {
        let i = (frame * self.points + point) * 4;
        Coefficients::from_array([
            self.data[i],
            self.data[i + 1],
            self.data[i + 2],
            self.data[i + 3],
        ])
    }

    pub fn set(&mut self, frame: usize, point: usize, c: Coefficients) {
        let i = (frame * self.points + point) * 4;
        self.data[i..i + 4].copy_from_slice(&c.to_array());
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Static-scene or moving-object contact; selects the friction direction rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactMode {
    StaticScene,
    MovingObject,
}

/// Quantity that orients static friction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TangentialDriver {
    /// Acceleration of the body point (static scenes), m/s^2.
    PointAcceleration(Vec3),
    /// Acceleration of the object and gravity (moving objects), m/s^2.
    ObjectAcceleration { accel: Vec3, gravity: Vec3 },
}

/// Kinematic state of one candidate contact point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactPointState {
    pub p: Vec3,
    pub p_dot: Vec3,
    pub query: SurfaceQuery,
    pub driver: TangentialDriver,
}

impl ContactPointState {
    pub fn offset(&self) -> Vec3 {
        self.p - self.query.x
    }

    pub fn relative_velocity(&self) -> Vec3 {
        self.p_dot - self.query.x_velocity
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_unit(n: &Vec3) -> Result<()> {
    let norm = n.norm();
    if (norm - 1.0).abs() <= UNIT_TOL {
        Ok(())
    } else {
        Err(Error::Norm(norm))
    }
}

/// Splits `v` into `((v.n) n, v - (v.n) n)`.
pub fn decompose(v: &Vec3, n: &Vec3) -> Result<(Vec3, Vec3)> {
    check_unit(n)?;
    let perp = n * v.dot(n);
    Ok((perp, v - perp))
}

/// Soft activation in `(0, 1)`.
pub fn gate(offset: &Vec3, n: &Vec3, config: &ContactModelConfig) -> Result<f64> {
    check_unit(n)?;
    Ok(sigmoid(-config.alpha * (offset.norm() - config.d0))
        * sigmoid(config.beta * (offset.dot(n) + config.d1)))
}

fn spring_separation(offset: &Vec3, n: &Vec3, mode: NormalMode) -> f64 {
    match mode {
        NormalMode::Signed => offset.dot(n),
        NormalMode::StrictPaper => offset.dot(n).abs(),
    }
}

/// Spring and damper factors `(a, b)` with `k = kappa a + delta b`.
fn normal_basis(state: &ContactPointState, config: &ContactModelConfig) -> (f64, f64) {
    let n = state.query.n;
    let sep = spring_separation(&state.offset(), &n, config.normal_mode);
    (-(sep - config.d0), -state.relative_velocity().dot(&n))
}

/// Damped-spring normal force `k n`.
pub fn normal_force(
    state: &ContactPointState,
    stiffness: f64,
    damping: f64,
    config: &ContactModelConfig,
) -> Result<Vec3> {
    check_coefficient("stiffness", stiffness)?;
    check_coefficient("damping", damping)?;
    check_unit(&state.query.n)?;
    let (a, b) = normal_basis(state, config);
    Ok(state.query.n * (stiffness * a + damping * b))
}

/// Unit tangential direction of static friction, or `None` when the
/// driving tangential vector is shorter than `eps`.
pub fn tangential_direction(
    mode: ContactMode,
    state: &ContactPointState,
    n: &Vec3,
    eps: f64,
) -> Result<Option<Vec3>> {
    let drive = match (mode, state.driver) {
        (ContactMode::StaticScene, TangentialDriver::PointAcceleration(acc)) => acc,
        (ContactMode::MovingObject, TangentialDriver::ObjectAcceleration { accel, gravity }) => {
            -(accel - gravity)
        }
        (ContactMode::StaticScene, _) => return Err(Error::Mode("static_scene")),
        (ContactMode::MovingObject, _) => return Err(Error::Mode("moving_object")),
    };
    let (_, tangential) = decompose(&drive, n)?;
    let norm = tangential.norm();
    if norm < eps {
        Ok(None)
    } else {
        Ok(Some(tangential / norm))
    }
}

/// Speed-gated static friction along `direction`.
pub fn static_friction(
    state: &ContactPointState,
    static_gain: f64,
    direction: Option<Vec3>,
    config: &ContactModelConfig,
) -> Result<Vec3> {
    check_coefficient("static_gain", static_gain)?;
    let Some(d) = direction else {
        return Ok(Vec3::zeros());
    };
    Ok(d * (static_gain * static_magnitude_per_gain(state, config)?))
}

fn static_magnitude_per_gain(state: &ContactPointState, config: &ContactModelConfig) -> Result<f64> {
    let (_, tangential) = decompose(&state.offset(), &state.query.n)?;
    let speed_gate = sigmoid(-config.gamma * (state.relative_velocity().norm() - config.v0));
    Ok(speed_gate * (tangential.norm() - config.d0).abs())
}

/// Regularised Coulomb factor `-v_t / max(|v_t|, eps)`.
fn kinetic_direction(state: &ContactPointState, n: &Vec3, eps: f64) -> Result<Vec3> {
    let (_, vt) = decompose(&state.relative_velocity(), n)?;
    Ok(-vt / vt.norm().max(eps))
}

/// Kinetic friction `-mu |f_n| v_t/|v_t|`, linearly scaled below `eps`.
pub fn kinetic_friction(
    state: &ContactPointState,
    kinetic: f64,
    normal: &Vec3,
    n: &Vec3,
    eps: f64,
) -> Result<Vec3> {
    check_coefficient("kinetic", kinetic)?;
    Ok(kinetic_direction(state, n, eps)? * (kinetic * normal.norm()))
}

/// Ungated force components, kept separate for energy bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ForceParts {
    pub gate: f64,
    pub spring: Vec3,
    pub damper: Vec3,
    pub static_friction: Vec3,
    pub kinetic_friction: Vec3,
}

impl ForceParts {
    pub fn total(&self) -> Vec3 {
        (self.spring + self.damper + self.static_friction + self.kinetic_friction) * self.gate
    }

    pub fn normal(&self) -> Vec3 {
        self.spring + self.damper
    }
}

pub fn contact_force_parts(
    state: &ContactPointState,
    coeffs: &Coefficients,
    config: &ContactModelConfig,
    mode: ContactMode,
) -> Result<ForceParts> {
    coeffs.validate()?;
    let n = state.query.n;
    let g = gate(&state.offset(), &n, config)?;
    let (a, b) = normal_basis(state, config);
    let spring = n * (coeffs.stiffness * a);
    let damper = n * (coeffs.damping * b);
    let dir = tangential_direction(mode, state, &n, config.eps)?;
    let fs = static_friction(state, coeffs.static_gain, dir, config)?;
    let fk = kinetic_friction(state, coeffs.kinetic, &(spring + damper), &n, config.eps)?;
    Ok(ForceParts {
        gate: g,
        spring,
        damper,
        static_friction: fs,
        kinetic_friction: fk,
    })
}

/// Total contact force on the body point, N.
pub fn contact_force(
    state: &ContactPointState,
    coeffs: &Coefficients,
    config: &ContactModelConfig,
    mode: ContactMode,
) -> Result<Vec3> {
    Ok(contact_force_parts(state, coeffs, config, mode)?.total())
}

/// Upper bound on `|d lambda / d p|` within `radius` of `state` against a
/// flat surface at fixed velocity and tangential driver: the gate slope
/// times the largest force magnitude, plus the gate times the force slope.
pub fn position_lipschitz(
    state: &ContactPointState,
    coeffs: &Coefficients,
    config: &ContactModelConfig,
    radius: f64,
) -> Result<f64> {
    coeffs.validate()?;
    check_unit(&state.query.n)?;
    let off = state.offset();
    let sep = off.dot(&state.query.n).abs() + config.d0 + radius;
    let vn = state.relative_velocity().dot(&state.query.n).abs();
    let k_max = coeffs.stiffness * sep + coeffs.damping * vn;
    let f_max = (1.0 + coeffs.kinetic) * k_max + coeffs.static_gain * (off.norm() + config.d0 + radius);
    let gate_slope = 0.25 * (config.alpha + config.beta);
    let force_slope = (1.0 + coeffs.kinetic) * coeffs.stiffness + coeffs.static_gain;
    Ok(gate_slope * f_max + force_slope)
}

/// Coefficient-independent pieces of the force at a fixed state: the
/// force is `gate * ((kappa a + delta b) n + rho s + mu |kappa a + delta b| k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceBasis {
    pub gate: f64,
    pub normal: Vec3,
    pub spring: f64,
    pub damper: f64,
    pub static_dir: Vec3,
    pub kinetic_dir: Vec3,
}

impl ForceBasis {
    pub fn new(
        state: &ContactPointState,
        config: &ContactModelConfig,
        mode: ContactMode,
    ) -> Result<Self> {
        let n = state.query.n;
        let g = gate(&state.offset(), &n, config)?;
        let (a, b) = normal_basis(state, config);
        let static_dir = match tangential_direction(mode, state, &n, config.eps)? {
            Some(d) => d * static_magnitude_per_gain(state, config)?,
            None => Vec3::zeros(),
        };
        Ok(Self {
            gate: g,
            normal: n,
            spring: a,
            damper: b,
            static_dir,
            kinetic_dir: kinetic_direction(state, &n, config.eps)?,
        })
    }

    pub fn force(&self, c: &Coefficients) -> Vec3 {
        let k = c.stiffness * self.spring + c.damping * self.damper;
        (self.normal * k + self.static_dir * c.static_gain + self.kinetic_dir * (c.kinetic * k.abs()))
            * self.gate
    }

    /// `d force / d (kappa, delta, rho, mu)`.
    pub fn jacobian(&self, c: &Coefficients) -> Matrix3x4<f64> {
        let k = c.stiffness * self.spring + c.damping * self.damper;
        let sign = if k > 0.0 {
            1.0
        } else if k < 0.0 {
            -1.0
        } else {
            0.0
        };
        let along = self.normal + self.kinetic_dir * (c.kinetic * sign);
        Matrix3x4::from_columns(&[
            along * (self.spring * self.gate),
            along * (self.damper * self.gate),
            self.static_dir * self.gate,
            self.kinetic_dir * (k.abs() * self.gate),
        ])
    }
}
