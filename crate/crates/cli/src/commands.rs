use std::path::Path;

use anyhow::{bail, Context, Result};
use contactdyn::contact::{CoefficientTensor, Coefficients, ContactModelConfig};
use contactdyn::metrics::{self, MetricReport};
use contactdyn::model::ModelDescription;
use contactdyn::simforge::{self, energy_audit, Scene, SimulationLog};
use contactdyn::solver::{self, default_coefficient_scale, GradientCheckReport, SolveProblem};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::io::{write_atomic, write_json, Csv};
use crate::runfile::{shape_spec, split_coefficients, ModelRef, ObjectSpec, Run, RunFile, VERSION};
use crate::{Cli, Command, Global, Status};

/// Largest gradient-check relative error accepted without a warning.
pub const GRADCHECK_TOL: f64 = 1e-4;

pub fn run(cli: &Cli) -> Result<Status> {
    if let Some(n) = cli.global.threads {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let g = &cli.global;
    match &cli.command {
        Command::Solve {
            run,
            output,
            max_iters,
            report,
            history,
        } => cmd_solve(g, run, output, *max_iters, report.as_deref(), history.as_deref()),
        Command::Simulate {
            scene,
            output,
            dt,
            steps,
            theta,
            mu,
            rho,
            energy,
            log,
        } => {
            let overrides = SceneFile {
                version: VERSION,
                preset: scene.clone(),
                dt: *dt,
                steps: *steps,
                theta: *theta,
                mu: *mu,
                rho: *rho,
            };
            cmd_simulate(g, &overrides, output, energy.as_deref(), log.as_deref())
        }
        Command::Residual {
            run,
            output,
            csv,
            per_point,
        } => cmd_residual(g, run, output, csv.as_deref(), *per_point),
        Command::Metrics {
            pred,
            gt,
            output,
            csv,
            collision_threshold,
            contact_threshold,
            foot_height,
            scene_threshold,
        } => {
            let report = compute_metrics(
                g,
                pred,
                gt,
                [*collision_threshold, *contact_threshold, *foot_height, *scene_threshold],
            )?;
            write_atomic(output, &report.to_key_value())?;
            if let Some(path) = csv {
                write_atomic(path, &format!("{}\n{}\n", MetricReport::csv_header(), report.to_csv_row()))?;
            }
            println!("mpjpe {:.4} cm, t_root {:.4} cm", report.mpjpe, report.t_root);
            Ok(Status::Ok)
        }
        Command::Gradcheck { run, samples, output } => {
            let report = cmd_gradcheck(g, run, *samples)?;
            if let Some(path) = output {
                write_json(path, &report)?;
            }
            println!(
                "max relative error {:e} over {} samples ({} excluded)",
                report.max_relative_error,
                report.samples.len(),
                report.excluded
            );
            Ok(if report.max_relative_error <= GRADCHECK_TOL {
                Status::Ok
            } else {
                Status::Warning
            })
        }
    }
}

/// Applies a partial JSON object of contact model fields.
pub fn apply_config_override(base: ContactModelConfig, path: &Path) -> Result<ContactModelConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let patch: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
    let serde_json::Value::Object(patch) = patch else {
        bail!("config {} must be a JSON object", path.display());
    };
    let mut merged = serde_json::to_value(base)?;
    if let serde_json::Value::Object(m) = &mut merged {
        m.extend(patch);
    }
    let config: ContactModelConfig =
        serde_json::from_value(merged).with_context(|| format!("invalid config {}", path.display()))?;
    config.validate()?;
    Ok(config)
}

pub fn load_run(g: &Global, path: &Path) -> Result<Run> {
    let mut file = RunFile::load(path)?;
    if let Some(cfg) = &g.config {
        file.config = apply_config_override(file.config, cfg)?;
    }
    file.resolve().with_context(|| path.display().to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub smoothed_residual: f64,
    pub regularization: f64,
    pub history: Vec<f64>,
    pub report: contactdyn::dynamics::ResidualReport,
}

fn rows(v: &[DVector<f64>]) -> Vec<Vec<f64>> {
    v.iter().map(|r| r.as_slice().to_vec()).collect()
}

fn cmd_solve(
    g: &Global,
    path: &Path,
    output: &Path,
    max_iters: Option<usize>,
    report: Option<&Path>,
    history: Option<&Path>,
) -> Result<Status> {
    let run = load_run(g, path)?;
    let mut problem = run.problem()?;
    if let Some(n) = max_iters {
        problem.budget.max_iters = n;
    }
    let result = solver::solve(&problem)?;
    let (a, b) = split_coefficients(&result.coefficients, &problem.system.points);
    let mut out = run.file.clone();
    out.tau = Some(rows(&result.tau));
    out.scene_coefficients = Some(a);
    out.object_coefficients = Some(b);
    out.forces = Some(result.forces.iter().map(|f| f.iter().map(|v| (*v).into()).collect()).collect());
    write_atomic(output, &out.to_json())?;
    if let Some(p) = report {
        write_json(
            p,
            &SolveSummary {
                converged: result.converged,
                iterations: result.iterations,
                objective: result.objective(),
                smoothed_residual: result.smoothed_residual,
                regularization: result.regularization,
                history: result.history.clone(),
                report: result.report.clone(),
            },
        )?;
    }
    if let Some(p) = history {
        let mut csv = Csv::new(&["iteration", "objective"]);
        for (i, f) in result.history.iter().enumerate() {
            csv.row(&[i as f64, *f]);
        }
        write_atomic(p, csv.as_str())?;
    }
    println!(
        "{} after {} iterations, residual L1 {:e}",
        if result.converged { "converged" } else { "budget exhausted" },
        result.iterations,
        result.report.aggregate
    );
    Ok(if result.converged { Status::Ok } else { Status::Warning })
}

/// Scene file: a preset with optional parameter overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub version: u32,
    pub preset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Incline angle, degrees.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

impl SceneFile {
    /// Resolves `target` as a preset name or a scene file; flags given
    /// on the command line win over the file.
    fn resolve(flags: &SceneFile) -> Result<SceneFile> {
        let path = Path::new(&flags.preset);
        if simforge::PRESETS.contains(&flags.preset.as_str()) || !path.is_file() {
            return Ok(flags.clone());
        }
        let text = std::fs::read_to_string(path)?;
        let file: SceneFile =
            serde_json::from_str(&text).with_context(|| format!("invalid scene file {}", path.display()))?;
        if file.version != VERSION {
            bail!("unsupported scene file version {}", file.version);
        }
        Ok(SceneFile {
            version: VERSION,
            preset: file.preset,
            dt: flags.dt.or(file.dt),
            steps: flags.steps.or(file.steps),
            theta: flags.theta.or(file.theta),
            mu: flags.mu.or(file.mu),
            rho: flags.rho.or(file.rho),
        })
    }

    pub fn build(&self) -> Result<Scene> {
        let mut scene = if self.preset == "incline" {
            let base = simforge::preset("incline")?.coefficients;
            simforge::incline(
                self.theta.unwrap_or(10.0).to_radians(),
                self.mu.unwrap_or(base.kinetic),
                self.rho.unwrap_or(base.static_gain),
            )?
        } else {
            if self.theta.is_some() {
                bail!("--theta only applies to the incline preset");
            }
            let mut s = simforge::preset(&self.preset)?;
            if let Some(mu) = self.mu {
                s.coefficients.kinetic = mu;
            }
            if let Some(rho) = self.rho {
                s.coefficients.static_gain = rho;
            }
            s
        };
        if let Some(dt) = self.dt {
            scene = scene.with_dt(dt);
        }
        if let Some(n) = self.steps {
            scene.steps = n;
        }
        scene.coefficients.validate()?;
        scene.validate()?;
        Ok(scene)
    }
}

/// Run file describing a simulated scene, with its planted torques,
/// coefficients and forces.
pub fn run_file_from_log(scene: &Scene, log: &SimulationLog) -> Result<RunFile> {
    let planted = CoefficientTensor::constant(log.frames(), scene.points.points.len(), scene.coefficients);
    let (a, b) = split_coefficients(&planted, &scene.points);
    let object = match (&scene.object, &log.object) {
        (Some(o), Some(poses)) => {
            let m = &o.model.inertia;
            Some(ObjectSpec {
                mass: o.model.mass,
                inertia: [0, 1, 2].map(|i| [0, 1, 2].map(|j| m[(i, j)])),
                shape: shape_spec(&o.model.geometry)?,
                poses: poses
                    .iter()
                    .map(|p| [0, 1, 2, 3, 4, 5].map(|i| p[i]))
                    .collect(),
            })
        }
        _ => None,
    };
    Ok(RunFile {
        version: VERSION,
        model: ModelRef::Inline(ModelDescription::from_tree(&scene.tree)),
        dt: log.dt,
        human: rows(&log.human),
        object,
        surfaces: scene
            .surfaces
            .iter()
            .map(|s| shape_spec(&s.shape))
            .collect::<Result<_>>()?,
        contact_points: Run::point_specs(&scene.tree, &scene.points),
        config: scene.config,
        gravity: scene.gravity.into(),
        actuate_root: scene.actuate_root,
        tau: Some(rows(&log.tau)),
        scene_coefficients: Some(a),
        object_coefficients: Some(b),
        forces: Some(log.forces.iter().map(|f| f.iter().map(|v| (*v).into()).collect()).collect()),
        metrics: None,
    })
}

pub const ENERGY_COLUMNS: [&str; 11] = [
    "frame",
    "time",
    "kinetic",
    "gravitational",
    "spring",
    "damping_dissipation",
    "friction_dissipation",
    "actuation_work",
    "balance",
    "budget",
    "flagged",
];

fn cmd_simulate(
    g: &Global,
    flags: &SceneFile,
    output: &Path,
    energy: Option<&Path>,
    log_path: Option<&Path>,
) -> Result<Status> {
    let mut scene = SceneFile::resolve(flags)?.build()?;
    if let Some(cfg) = &g.config {
        scene.config = apply_config_override(scene.config, cfg)?;
    }
    let log = scene.simulate()?;
    let audit = energy_audit(&log);
    write_atomic(output, &run_file_from_log(&scene, &log)?.to_json())?;
    if let Some(p) = energy {
        let mut csv = Csv::new(&ENERGY_COLUMNS);
        for (t, e) in log.energy.iter().enumerate() {
            // the ledger is per step; step k ends at frame k + 1
            let step = t.checked_sub(1);
            let flagged = step.is_some_and(|k| audit.flagged.contains(&k));
            csv.row(&[
                t as f64,
                t as f64 * log.dt,
                e.kinetic,
                e.gravitational,
                e.spring,
                e.damping_dissipation,
                e.friction_dissipation,
                e.actuation_work,
                step.map_or(0.0, |k| audit.balances[k]),
                step.map_or(0.0, |k| audit.budgets[k]),
                if flagged { 1.0 } else { 0.0 },
            ]);
        }
        write_atomic(p, csv.as_str())?;
    }
    if let Some(p) = log_path {
        write_json(p, &log)?;
    }
    println!(
        "{}: {} frames, max energy imbalance {:e} J, {} flagged",
        scene.name,
        log.frames(),
        audit.max_abs_balance,
        audit.flagged.len()
    );
    Ok(if audit.flagged.is_empty() {
        Status::Ok
    } else {
        Status::Warning
    })
}

fn stored_point(run: &Run) -> Result<(Vec<DVector<f64>>, CoefficientTensor)> {
    let tau = run.tau().context("run file has no `tau` block")?;
    let coeffs = run
        .coefficients()
        .context("run file lacks `scene_coefficients` or `object_coefficients`")?;
    Ok((tau, coeffs))
}

fn cmd_residual(g: &Global, path: &Path, output: &Path, csv: Option<&Path>, per_point: bool) -> Result<Status> {
    let run = load_run(g, path)?;
    let (tau, coeffs) = stored_point(&run)?;
    let problem = run.problem()?;
    let report = solver::residual_report(&problem, &tau, &coeffs)?;
    write_json(output, &report)?;
    if let Some(p) = csv {
        let points = coeffs.points();
        let mut header: Vec<String> = ["frame", "time", "human_l1", "object_l1", "total"]
            .map(String::from)
            .to_vec();
        let forces = if per_point {
            header.extend((0..points).map(|k| format!("force_{k}")));
            let terms = problem.system.all_frame_terms()?;
            Some(
                terms
                    .iter()
                    .enumerate()
                    .map(|(t, ft)| {
                        let cs: Vec<Coefficients> = (0..points).map(|k| coeffs.get(t, k)).collect();
                        ft.forces(&cs).iter().map(|f| f.norm()).collect::<Vec<_>>()
                    })
                    .collect::<Vec<_>>(),
            )
        } else {
            None
        };
        let mut table = Csv::new(&header);
        for t in 0..run.frames() {
            let mut row = vec![
                t as f64,
                t as f64 * run.file.dt,
                report.human_l1[t],
                report.object_l1[t],
                report.frame_l1(t),
            ];
            if let Some(f) = &forces {
                row.extend(&f[t]);
            }
            table.row(&row);
        }
        write_atomic(p, table.as_str())?;
    }
    println!("aggregate L1 residual {:e}", report.aggregate);
    Ok(Status::Ok)
}

/// Metric report of `pred` against `gt`; thresholds in the order
/// collision, contact, foot height, scene.
pub fn compute_metrics(g: &Global, pred: &Path, gt: &Path, thresholds: [Option<f64>; 4]) -> Result<MetricReport> {
    let pred = load_run(g, pred)?;
    let gt = load_run(g, gt)?;
    if pred.tree.dof() != gt.tree.dof() {
        bail!("models differ: {} vs {} DOF", pred.tree.dof(), gt.tree.dof());
    }
    if pred.frames() != gt.frames() {
        bail!("frame counts differ: prediction {} vs reference {}", pred.frames(), gt.frames());
    }
    let mut setup = pred.metric_setup()?;
    let th = &mut setup.thresholds;
    for (slot, v) in [&mut th.collision, &mut th.contact, &mut th.foot_height, &mut th.scene]
        .into_iter()
        .zip(thresholds)
    {
        if let Some(v) = v {
            if !(v >= 0.0) {
                bail!("thresholds must be >= 0, got {v}");
            }
            *slot = v;
        }
    }
    Ok(metrics::evaluate(&pred.human, &gt.human, &pred.tree, &setup)?)
}

/// Random feasible point: torques near the unforced ones, coefficients
/// within their typical ranges.
pub fn random_point(problem: &SolveProblem, seed: u64) -> Result<(Vec<DVector<f64>>, CoefficientTensor)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terms = problem.system.all_frame_terms()?;
    let scale = default_coefficient_scale().to_array();
    let points = problem.system.points.points.len();
    let mut coeffs = CoefficientTensor::zeros(terms.len(), points);
    let mut tau = Vec::with_capacity(terms.len());
    for (t, ft) in terms.iter().enumerate() {
        tau.push(ft.human_unforced.map(|x| x + rng.gen_range(-0.5..0.5)));
        for k in 0..points {
            let c = scale.map(|s| s * rng.gen_range(0.05..1.5f64).powi(2));
            coeffs.set(t, k, Coefficients::from_array(c));
        }
    }
    Ok((tau, coeffs))
}

fn cmd_gradcheck(g: &Global, path: &Path, samples: usize) -> Result<GradientCheckReport> {
    let run = load_run(g, path)?;
    let problem = run.problem()?;
    let (tau, coeffs) = match stored_point(&run) {
        Ok(p) => p,
        Err(_) => random_point(&problem, g.seed)?,
    };
    Ok(solver::gradient_check(&problem, &tau, &coeffs, samples, g.seed)?)
}
