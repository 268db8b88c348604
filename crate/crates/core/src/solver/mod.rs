//! Recovers joint torques and contact coefficients by minimising the
//! coupled Euler-Lagrange residual, frame by frame.

mod lbfgs;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use lbfgs::{minimize, LbfgsOptions, LbfgsResult, Termination};

use crate::contact::{CoefficientTensor, Coefficients};
use crate::dynamics::{
    actuation_mask, residual_from_terms, CoupledSystem, FrameTerms, ResidualReport,
};
use crate::error::{check_len, Error, Result};
use crate::kinematics::ContactRole;
use crate::spatial::Vec3;

/// Regularisation weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Regularization {
    /// Weight on `|tau|^2`.
    pub tau: f64,
    /// Weight on `|c / scale|^2` summed over all coefficients.
    pub coef: f64,
}

impl Default for Regularization {
    fn default() -> Self {
        Self { tau: 1e-4, coef: 1e-4 }
    }
}

/// Iteration and tolerance budget per frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Budget {
    pub max_iters: usize,
    pub gtol: f64,
    pub ftol: f64,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            gtol: 1e-7,
            ftol: 1e-13,
        }
    }
}

/// Everything `solve` needs.
#[derive(Debug, Clone)]
pub struct SolveProblem {
    pub system: CoupledSystem,
    pub weights: Regularization,
    pub budget: Budget,
    /// Huber transition, N or N m.
    pub huber_delta: f64,
    /// Coefficients are `scale * z^2` in the free variables `z`.
    pub coefficient_scale: Coefficients,
    /// Whether the root joint may carry torque.
    pub actuate_root: bool,
}

/// Default coefficient scales: typical magnitudes of (kappa, delta, rho, mu).
pub fn default_coefficient_scale() -> Coefficients {
    Coefficients::new(1e3, 1e2, 1e2, 1.0)
}

/// Free variable every coefficient starts from.
pub const INITIAL_FREE_VARIABLE: f64 = 1e-2;

impl SolveProblem {
    pub fn new(system: CoupledSystem) -> Self {
        Self {
            system,
            weights: Regularization::default(),
            budget: Budget::default(),
            huber_delta: 0.1,
            coefficient_scale: default_coefficient_scale(),
            actuate_root: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w_tau", self.weights.tau), ("w_coef", self.weights.coef)] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::Domain(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        if !(self.huber_delta > 0.0) {
            return Err(Error::Domain(format!("huber delta must be > 0, got {}", self.huber_delta)));
        }
        if self.coefficient_scale.to_array().iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Domain("coefficient scales must be > 0".into()));
        }
        if self.system.frames() < 3 {
            return Err(Error::TooShort {
                frames: self.system.frames(),
                required: 3,
            });
        }
        Ok(())
    }

    fn actuated(&self) -> Vec<usize> {
        actuation_mask(&self.system.tree, self.actuate_root)
            .iter()
            .enumerate()
            .filter(|(_, m)| **m > 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    fn layout(&self) -> Layout {
        Layout {
            actuated: self.actuated(),
            dof: self.system.dof(),
            points: self.system.points.points.len(),
            scale: self.coefficient_scale.to_array(),
        }
    }
}

/// Variable layout of one frame: `[tau_actuated, z_1..z_C (4 each)]`.
#[derive(Debug, Clone)]
struct Layout {
    actuated: Vec<usize>,
    dof: usize,
    points: usize,
    scale: [f64; 4],
}

impl Layout {
    fn len(&self) -> usize {
        self.actuated.len() + 4 * self.points
    }

    fn z_offset(&self) -> usize {
        self.actuated.len()
    }

    fn tau(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut tau = DVector::zeros(self.dof);
        for (i, &k) in self.actuated.iter().enumerate() {
            tau[k] = x[i];
        }
        tau
    }

    fn coefficients(&self, x: &DVector<f64>) -> Vec<Coefficients> {
        let o = self.z_offset();
        (0..self.points)
            .map(|k| {
                Coefficients::from_array(std::array::from_fn(|i| {
                    let z = x[o + 4 * k + i];
                    self.scale[i] * z * z
                }))
            })
            .collect()
    }

    fn pack(&self, tau: &DVector<f64>, coeffs: &[Coefficients]) -> DVector<f64> {
        let mut x = DVector::zeros(self.len());
        for (i, &k) in self.actuated.iter().enumerate() {
            x[i] = tau[k];
        }
        let o = self.z_offset();
        for (k, c) in coeffs.iter().enumerate() {
            for (i, v) in c.to_array().iter().enumerate() {
                x[o + 4 * k + i] = (v / self.scale[i]).sqrt();
            }
        }
        x
    }
}

fn huber(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        0.5 * r * r / delta
    } else {
        r.abs() - 0.5 * delta
    }
}

fn huber_grad(r: f64, delta: f64) -> f64 {
    (r / delta).clamp(-1.0, 1.0)
}

/// Objective pieces of one frame at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
struct FrameValue {
    smoothed: f64,
    regularization: f64,
}

impl FrameValue {
    fn total(&self) -> f64 {
        self.smoothed + self.regularization
    }
}

struct FrameObjective<'a> {
    terms: &'a FrameTerms,
    layout: &'a Layout,
    weights: Regularization,
    delta: f64,
}

impl FrameObjective<'_> {
    fn value(&self, x: &DVector<f64>) -> FrameValue {
        self.evaluate(x, false).0
    }

    fn evaluate(&self, x: &DVector<f64>, with_grad: bool) -> (FrameValue, DVector<f64>) {
        let l = self.layout;
        let tau = l.tau(x);
        let coeffs = l.coefficients(x);
        let (rh, ro) = self.terms.residual(tau.as_slice(), &coeffs);
        let d = self.delta;
        let smoothed = rh.iter().map(|r| huber(*r, d)).sum::<f64>()
            + ro.map_or(0.0, |ro| ro.iter().map(|r| huber(*r, d)).sum());
        let o = l.z_offset();
        let tau_sq: f64 = x.rows(0, o).norm_squared();
        let z4: f64 = x.rows(o, 4 * l.points).iter().map(|z| z.powi(4)).sum();
        let value = FrameValue {
            smoothed,
            regularization: self.weights.tau * tau_sq + self.weights.coef * z4,
        };
        if !with_grad {
            return (value, DVector::zeros(0));
        }
        let gh = rh.map(|r| huber_grad(r, d));
        let go = ro.map(|ro| ro.map(|r| huber_grad(r, d)));
        let mut g = DVector::zeros(l.len());
        for (i, &k) in l.actuated.iter().enumerate() {
            g[i] = -gh[k] + 2.0 * self.weights.tau * x[i];
        }
        for (k, term) in self.terms.contacts.iter().enumerate() {
            let mut dl = -(&term.human_jacobian * &gh);
            if let (Some(jo), Some(go)) = (term.object_jacobian, go) {
                dl += jo * go;
            }
            let gc = term.basis.jacobian(&coeffs[k]).transpose() * dl;
            for i in 0..4 {
                let z = x[o + 4 * k + i];
                g[o + 4 * k + i] =
                    gc[i] * l.scale[i] * 2.0 * z + 4.0 * self.weights.coef * z * z * z;
            }
        }
        (value, g)
    }
}

/// Output of [`solve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    /// Per-frame generalized torques, `T x n`.
    pub tau: Vec<DVector<f64>>,
    /// Coefficients for every contact point in set order.
    pub coefficients: CoefficientTensor,
    /// Sum over frames of the per-frame objective after each iteration.
    pub history: Vec<f64>,
    /// Final smoothed-residual part of the objective.
    pub smoothed_residual: f64,
    /// Final regularisation part of the objective.
    pub regularization: f64,
    /// Final plain L1 residual report.
    pub report: ResidualReport,
    /// Contact force on the human for every frame and point, N.
    pub forces: Vec<Vec<Vec3>>,
    pub converged: bool,
    /// Largest iteration count over frames.
    pub iterations: usize,
}

impl SolveResult {
    pub fn objective(&self) -> f64 {
        self.smoothed_residual + self.regularization
    }

    fn role_slice(&self, roles: &[ContactRole], role: ContactRole) -> Vec<Vec<[f64; 4]>> {
        (0..self.coefficients.frames())
            .map(|t| {
                roles
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| **r == role)
                    .map(|(k, _)| self.coefficients.get(t, k).to_array())
                    .collect()
            })
            .collect()
    }

    /// Scene coefficients `A`, `T x C_s x 4`.
    pub fn scene_coefficients(&self, problem: &SolveProblem) -> Vec<Vec<[f64; 4]>> {
        self.role_slice(&roles(problem), ContactRole::Scene)
    }

    /// Object coefficients `B`, `T x C_o x 4`.
    pub fn object_coefficients(&self, problem: &SolveProblem) -> Vec<Vec<[f64; 4]>> {
        self.role_slice(&roles(problem), ContactRole::Object)
    }
}

fn roles(problem: &SolveProblem) -> Vec<ContactRole> {
    problem.system.points.points.iter().map(|p| p.role).collect()
}

/// Gate value under which a contact is considered inactive.
const INACTIVE_GATE: f64 = 1e-9;

fn check_degenerate(problem: &SolveProblem, terms: &[FrameTerms]) -> Result<()> {
    let Some(obj) = &problem.system.object else {
        return Ok(());
    };
    let any_active = terms.iter().any(|ft| {
        ft.contacts
            .iter()
            .any(|c| c.role == ContactRole::Object && c.basis.gate > INACTIVE_GATE)
    });
    if any_active {
        return Ok(());
    }
    let weight = obj.model.mass * problem.system.gravity.norm();
    let tol = 1e-6 * weight.max(1.0);
    let unexplained = terms
        .iter()
        .position(|ft| ft.object_unforced.is_some_and(|r| r.amax() > tol));
    match unexplained {
        Some(t) => Err(Error::DegenerateProblem(format!(
            "object motion needs external force at frame {t} but no hand contact is ever active"
        ))),
        None => Ok(()),
    }
}

/// Minimises the smoothed coupled residual plus regularisation.
pub fn solve(problem: &SolveProblem) -> Result<SolveResult> {
    problem.validate()?;
    let terms = problem.system.all_frame_terms()?;
    check_degenerate(problem, &terms)?;
    let layout = problem.layout();
    let opts = LbfgsOptions {
        max_iters: problem.budget.max_iters,
        gtol: problem.budget.gtol,
        ftol: problem.budget.ftol,
        ..LbfgsOptions::default()
    };
    let runs: Vec<LbfgsResult> = terms
        .par_iter()
        .map(|ft| {
            let obj = FrameObjective {
                terms: ft,
                layout: &layout,
                weights: problem.weights,
                delta: problem.huber_delta,
            };
            let mut x0 = DVector::from_element(layout.len(), INITIAL_FREE_VARIABLE);
            let init_tau = &ft.human_unforced;
            for (i, &k) in layout.actuated.iter().enumerate() {
                x0[i] = init_tau[k];
            }
            minimize(|x| {
                let (v, g) = obj.evaluate(x, true);
                (v.total(), g)
            }, x0, &opts)
        })
        .collect();

    let frames = terms.len();
    let mut coefficients = CoefficientTensor::zeros(frames, layout.points);
    let mut tau = Vec::with_capacity(frames);
    let mut smoothed = 0.0;
    let mut regularization = 0.0;
    let mut forces = Vec::with_capacity(frames);
    for (t, (run, ft)) in runs.iter().zip(&terms).enumerate() {
        let cs = layout.coefficients(&run.x);
        for (k, c) in cs.iter().enumerate() {
            coefficients.set(t, k, *c);
        }
        let v = FrameObjective {
            terms: ft,
            layout: &layout,
            weights: problem.weights,
            delta: problem.huber_delta,
        }
        .value(&run.x);
        smoothed += v.smoothed;
        regularization += v.regularization;
        forces.push(ft.forces(&cs));
        tau.push(layout.tau(&run.x));
    }
    let iterations = runs.iter().map(|r| r.history.len() - 1).max().unwrap_or(0);
    let history = (0..=iterations)
        .map(|i| runs.iter().map(|r| r.history[i.min(r.history.len() - 1)]).sum())
        .collect();
    let converged = runs.iter().all(|r| r.termination != Termination::Budget);
    let report = residual_from_terms(&problem.system, &terms, &tau, &coefficients)?;
    Ok(SolveResult {
        tau,
        coefficients,
        history,
        smoothed_residual: smoothed,
        regularization,
        report,
        forces,
        converged,
        iterations,
    })
}

/// Plain L1 residual of given torques and coefficients.
pub fn residual_report(
    problem: &SolveProblem,
    tau: &[DVector<f64>],
    coeffs: &CoefficientTensor,
) -> Result<ResidualReport> {
    let terms = problem.system.all_frame_terms()?;
    residual_from_terms(&problem.system, &terms, tau, coeffs)
}

/// Full objective (smoothed residual plus regularisation) at a point.
pub fn objective(
    problem: &SolveProblem,
    tau: &[DVector<f64>],
    coeffs: &CoefficientTensor,
) -> Result<f64> {
    problem.validate()?;
    let terms = problem.system.all_frame_terms()?;
    let layout = problem.layout();
    check_point(problem, tau, coeffs)?;
    Ok(terms
        .iter()
        .enumerate()
        .map(|(t, ft)| {
            let x = layout.pack(&tau[t], &frame_coeffs(coeffs, t));
            FrameObjective {
                terms: ft,
                layout: &layout,
                weights: problem.weights,
                delta: problem.huber_delta,
            }
            .value(&x)
            .total()
        })
        .sum())
}

fn frame_coeffs(coeffs: &CoefficientTensor, t: usize) -> Vec<Coefficients> {
    (0..coeffs.points()).map(|k| coeffs.get(t, k)).collect()
}

fn check_point(problem: &SolveProblem, tau: &[DVector<f64>], coeffs: &CoefficientTensor) -> Result<()> {
    check_len("torque frames", problem.system.frames(), tau.len())?;
    check_len("coefficient frames", problem.system.frames(), coeffs.frames())?;
    check_len("coefficient points", problem.system.points.points.len(), coeffs.points())?;
    for t in tau {
        problem.system.tree.check_config("tau", t.len())?;
    }
    Ok(())
}

/// One compared gradient coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientSample {
    pub frame: usize,
    pub coordinate: usize,
    pub analytic: f64,
    pub finite_difference: f64,
    pub relative_error: f64,
    /// Excluded samples sit on a nonsmooth locus and do not count.
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheckReport {
    pub samples: Vec<GradientSample>,
    pub max_relative_error: f64,
    pub excluded: usize,
}

/// Gradient magnitude, relative to `1 + |f|`, below which differences
/// are finite-difference roundoff.
pub const GRADIENT_FLOOR: f64 = 1e-6;

/// Central-difference step in the free variables.
pub const FD_STEP: f64 = 1e-5;

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares `grad` with central differences of `f` on `coords`.
pub fn fd_check<F, G>(f: F, grad: G, x: &DVector<f64>, coords: &[usize], step: f64) -> f64
where
    F: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    let g = grad(x);
    coords
        .iter()
        .map(|&i| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += step;
            xm[i] -= step;
            relative_error(g[i], (f(&xp) - f(&xm)) / (2.0 * step), 1e-6)
        })
        .fold(0.0, f64::max)
}

/// Analytic objective gradient against central differences on
/// `sample_count` seeded random (frame, coordinate) pairs.
///
/// Samples are excluded when the finite-difference stencil straddles a
/// sign change of the normal factor `k` (where `|k|` has a kink), or when
/// a contact's tangential slip lies within 1% of `eps`.
pub fn gradient_check(
    problem: &SolveProblem,
    tau: &[DVector<f64>],
    coeffs: &CoefficientTensor,
    sample_count: usize,
    seed: u64,
) -> Result<GradientCheckReport> {
    problem.validate()?;
    check_point(problem, tau, coeffs)?;
    let terms = problem.system.all_frame_terms()?;
    let layout = problem.layout();
    let eps = problem.system.config.eps;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(sample_count);
    for _ in 0..sample_count {
        let frame = rng.gen_range(0..terms.len());
        let coordinate = rng.gen_range(0..layout.len());
        let obj = FrameObjective {
            terms: &terms[frame],
            layout: &layout,
            weights: problem.weights,
            delta: problem.huber_delta,
        };
        let x = layout.pack(&tau[frame], &frame_coeffs(coeffs, frame));
        let analytic = obj.evaluate(&x, true).1[coordinate];
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[coordinate] += FD_STEP;
        xm[coordinate] -= FD_STEP;
        let fd = (obj.value(&xp).total() - obj.value(&xm).total()) / (2.0 * FD_STEP);
        let excluded = on_kink(&obj, &xp, &xm) || near_eps(&terms[frame], eps);
        samples.push(GradientSample {
            frame,
            coordinate,
            analytic,
            finite_difference: fd,
            relative_error: relative_error(analytic, fd, GRADIENT_FLOOR * (1.0 + obj.value(&x).total().abs())),
            excluded,
        });
    }
    let max_relative_error = samples
        .iter()
        .filter(|s| !s.excluded)
        .map(|s| s.relative_error)
        .fold(0.0, f64::max);
    let excluded = samples.iter().filter(|s| s.excluded).count();
    Ok(GradientCheckReport {
        samples,
        max_relative_error,
        excluded,
    })
}

fn normal_factors(obj: &FrameObjective<'_>, x: &DVector<f64>) -> Vec<f64> {
    obj.layout
        .coefficients(x)
        .iter()
        .zip(&obj.terms.contacts)
        .map(|(c, t)| c.stiffness * t.basis.spring + c.damping * t.basis.damper)
        .collect()
}

fn on_kink(obj: &FrameObjective<'_>, xp: &DVector<f64>, xm: &DVector<f64>) -> bool {
    normal_factors(obj, xp)
        .iter()
        .zip(normal_factors(obj, xm))
        .any(|(a, b)| a.signum() != b.signum() || *a == 0.0 || b == 0.0)
}

fn near_eps(ft: &FrameTerms, eps: f64) -> bool {
    ft.contacts.iter().any(|c| {
        let n = c.state.query.n;
        let v = c.state.relative_velocity();
        let slip = (v - n * v.dot(&n)).norm();
        (slip - eps).abs() < 0.01 * eps
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_check_is_exact_on_quadratics() {
        let a = nalgebra::DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, -0.2, 0.5, -0.2, 2.0]);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let f = |x: &DVector<f64>| 0.5 * x.dot(&(&a * x)) - b.dot(x);
        let g = |x: &DVector<f64>| &a * x - &b;
        let x = DVector::from_vec(vec![0.3, -1.1, 2.0]);
        assert!(fd_check(f, g, &x, &[0, 1, 2], FD_STEP) <= 1e-8);
    }

    #[test]
    fn huber_is_continuous_at_delta() {
        let d = 0.1;
        assert!((huber(d, d) - huber(d + 1e-12, d)).abs() < 1e-11);
        assert_eq!(huber_grad(5.0, d), 1.0);
        assert_eq!(huber_grad(-0.05, d), -0.5);
    }
}
