//! Run file: a JSON document carrying a model reference, trajectories,
//! surfaces, contact points and optional solved blocks.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use contactdyn::contact::{CoefficientTensor, ContactModelConfig};
use contactdyn::dynamics::{CoupledSystem, HeldObject};
use contactdyn::kinematics::{ContactPoint, ContactPointSet, ContactRole, Trajectory};
use contactdyn::metrics::{BodyPoint, MetricSetup};
use contactdyn::model::{
    build_tree, humanoid_24, pendulum_tree, KinematicTree, ModelDescription, RigidObjectModel,
};
use contactdyn::solver::SolveProblem;
use contactdyn::spatial::{Mat3, Vec3};
use contactdyn::surfaces::{Shape, Surface, TriMesh, VoxelGrid};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelRef {
    /// Model description file, relative to the run file.
    Path(PathBuf),
    /// `humanoid_24`, `block` or `pendulum`.
    Builtin(String),
    Inline(ModelDescription),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ShapeSpec {
    Plane { point: [f64; 3], normal: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
    Box { half_extents: [f64; 3] },
    /// OBJ subset (`v` and triangular `f` lines).
    Mesh { path: PathBuf },
    /// Run-length encoded occupancy grid, converted to its boundary mesh.
    Voxels { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub mass: f64,
    pub inertia: [[f64; 3]; 3],
    pub shape: ShapeSpec,
    /// `T x 6` rows of `[axis-angle, translation]`.
    pub poses: Vec<[f64; 6]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointSpec {
    pub body: String,
    pub offset: [f64; 3],
    pub role: ContactRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyPointSpec {
    pub body: String,
    #[serde(default)]
    pub offset: [f64; 3],
}

/// Body lists used by the metrics command.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricSpec {
    pub hands: Vec<String>,
    pub hand_points: Vec<BodyPointSpec>,
    pub samples: Vec<BodyPointSpec>,
    pub feet: Vec<BodyPointSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub version: u32,
    pub model: ModelRef,
    pub dt: f64,
    /// `T x n` joint configurations.
    pub human: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<ObjectSpec>,
    #[serde(default)]
    pub surfaces: Vec<ShapeSpec>,
    #[serde(default)]
    pub contact_points: Vec<PointSpec>,
    #[serde(default)]
    pub config: ContactModelConfig,
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
    #[serde(default)]
    pub actuate_root: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<Vec<Vec<f64>>>,
    /// `T x C_scene x 4` in (kappa, delta, rho, mu) order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_coefficients: Option<Vec<Vec<[f64; 4]>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_coefficients: Option<Vec<Vec<[f64; 4]>>>,
    /// `T x C x 3` contact forces on the human, N.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forces: Option<Vec<Vec<[f64; 3]>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricSpec>,
}

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -9.81]
}

/// Run file resolved into toolkit types.
#[derive(Debug, Clone)]
pub struct Run {
    pub file: RunFile,
    pub tree: KinematicTree,
    pub human: Trajectory,
    pub object: Option<HeldObject>,
    pub scene: Vec<Surface>,
    pub points: ContactPointSet,
}

impl RunFile {
    pub fn parse(text: &str) -> Result<Self> {
        let file: RunFile = serde_json::from_str(text).map_err(|e| anyhow!("invalid run file: {e}"))?;
        if file.version != VERSION {
            bail!("unsupported run file version {} (expected {VERSION})", file.version);
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut file = Self::parse(&text).with_context(|| path.display().to_string())?;
        file.absolutize(path.parent().unwrap_or(Path::new(".")));
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("run file serializes");
        s.push('\n');
        s
    }

    /// Rewrites relative paths against `base` so the file can be written
    /// anywhere.
    fn absolutize(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let ModelRef::Path(p) = &mut self.model {
            fix(p);
        }
        let shapes = self
            .surfaces
            .iter_mut()
            .chain(self.object.as_mut().map(|o| &mut o.shape));
        for s in shapes {
            if let ShapeSpec::Mesh { path } | ShapeSpec::Voxels { path } = s {
                fix(path);
            }
        }
    }

    pub fn frames(&self) -> usize {
        self.human.len()
    }

    pub fn resolve(&self) -> Result<Run> {
        let tree = resolve_model(&self.model)?;
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            bail!("field `dt` must be a positive number, got {}", self.dt);
        }
        let frames = self.frames();
        for (t, row) in self.human.iter().enumerate() {
            if row.len() != tree.dof() {
                bail!("field `human`: frame {t} has {} values, model has {} DOF", row.len(), tree.dof());
            }
        }
        let human = Trajectory::for_tree(&tree, self.dt, self.human.iter().map(|r| DVector::from_row_slice(r)).collect())?;
        let object = match &self.object {
            Some(o) => {
                if o.poses.len() != frames {
                    bail!("field `object.poses`: {} frames, `human` has {frames}", o.poses.len());
                }
                let model = RigidObjectModel::new(o.mass, Mat3::from_fn(|i, j| o.inertia[i][j]), shape(&o.shape)?)?;
                let poses = Trajectory::new(self.dt, o.poses.iter().map(|p| DVector::from_row_slice(p)).collect())?;
                let surface = Surface::attached(model.geometry.clone(), &poses)?;
                Some(HeldObject::new(model, surface)?)
            }
            None => None,
        };
        let scene = self
            .surfaces
            .iter()
            .map(|s| shape(s).map(Surface::fixed))
            .collect::<Result<Vec<_>>>()?;
        let points = self
            .contact_points
            .iter()
            .map(|p| {
                Ok(ContactPoint {
                    body: body_index(&tree, &p.body)?,
                    offset: Vec3::from(p.offset),
                    role: p.role,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let points = ContactPointSet::new(&tree, points)?;
        let run = Run {
            file: self.clone(),
            tree,
            human,
            object,
            scene,
            points,
        };
        run.check_blocks()?;
        Ok(run)
    }
}

fn resolve_model(model: &ModelRef) -> Result<KinematicTree> {
    Ok(match model {
        ModelRef::Inline(desc) => build_tree(desc)?,
        ModelRef::Path(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading model {}", p.display()))?;
            let desc = ModelDescription::from_json(&text).with_context(|| p.display().to_string())?;
            build_tree(&desc)?
        }
        ModelRef::Builtin(name) => match name.as_str() {
            "humanoid_24" => humanoid_24(),
            "block" => KinematicTree::single_body("block", 1.0, Mat3::identity() * (1.0 / 600.0), Vec3::zeros())?,
            "pendulum" => pendulum_tree(1.0, 1.0)?,
            other => bail!("unknown builtin model `{other}` (expected humanoid_24, block, pendulum)"),
        },
    })
}

pub fn shape(spec: &ShapeSpec) -> Result<Shape> {
    Ok(match spec {
        ShapeSpec::Plane { point, normal } => Shape::plane(Vec3::from(*point), Vec3::from(*normal))?,
        ShapeSpec::Sphere { center, radius } => Shape::sphere(Vec3::from(*center), *radius)?,
        ShapeSpec::Box { half_extents } => Shape::cuboid(Vec3::from(*half_extents))?,
        ShapeSpec::Mesh { path } => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading mesh {}", path.display()))?;
            Shape::Mesh(Arc::new(TriMesh::from_obj(&text).with_context(|| path.display().to_string())?))
        }
        ShapeSpec::Voxels { path } => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading voxels {}", path.display()))?;
            let grid = VoxelGrid::parse(&text).with_context(|| path.display().to_string())?;
            Shape::Mesh(Arc::new(grid.to_mesh()?))
        }
    })
}

/// Inverse of [`shape`] for the analytic shapes.
pub fn shape_spec(shape: &Shape) -> Result<ShapeSpec> {
    Ok(match shape {
        Shape::Plane { point, normal } => ShapeSpec::Plane {
            point: (*point).into(),
            normal: (*normal).into(),
        },
        Shape::Sphere { center, radius } => ShapeSpec::Sphere {
            center: (*center).into(),
            radius: *radius,
        },
        Shape::Box { half_extents } => ShapeSpec::Box {
            half_extents: (*half_extents).into(),
        },
        Shape::Mesh(_) => bail!("mesh surfaces have no inline form; reference an OBJ file instead"),
    })
}

fn body_index(tree: &KinematicTree, name: &str) -> Result<usize> {
    tree.link_index(name).map_err(|_| {
        let names: Vec<&str> = tree.links().iter().map(|l| l.name.as_str()).collect();
        anyhow!("unknown body `{name}` (model links: {})", names.join(", "))
    })
}

fn body_points(tree: &KinematicTree, specs: &[BodyPointSpec]) -> Result<Vec<BodyPoint>> {
    specs
        .iter()
        .map(|p| Ok((body_index(tree, &p.body)?, Vec3::from(p.offset))))
        .collect()
}

impl Run {
    pub fn frames(&self) -> usize {
        self.human.len()
    }

    fn check_blocks(&self) -> Result<()> {
        let t = self.frames();
        let f = &self.file;
        let (cs, co) = (self.points.scene_count(), self.points.object_count());
        if let Some(tau) = &f.tau {
            check_rows("tau", tau.len(), t)?;
            for (i, row) in tau.iter().enumerate() {
                if row.len() != self.tree.dof() {
                    bail!("field `tau`: frame {i} has {} values, model has {} DOF", row.len(), self.tree.dof());
                }
            }
        }
        for (name, block, width) in [
            ("scene_coefficients", &f.scene_coefficients, cs),
            ("object_coefficients", &f.object_coefficients, co),
        ] {
            if let Some(b) = block {
                check_rows(name, b.len(), t)?;
                for (i, row) in b.iter().enumerate() {
                    if row.len() != width {
                        bail!("field `{name}`: frame {i} has {} points, run has {width}", row.len());
                    }
                }
            }
        }
        if let Some(forces) = &f.forces {
            check_rows("forces", forces.len(), t)?;
            for (i, row) in forces.iter().enumerate() {
                if row.len() != cs + co {
                    bail!("field `forces`: frame {i} has {} points, run has {}", row.len(), cs + co);
                }
            }
        }
        Ok(())
    }

    pub fn system(&self) -> Result<CoupledSystem> {
        let mut system = CoupledSystem::new(
            self.tree.clone(),
            &self.human,
            self.object.clone(),
            self.scene.clone(),
            self.points.clone(),
            self.file.config,
        )?;
        system.gravity = Vec3::from(self.file.gravity);
        Ok(system)
    }

    pub fn problem(&self) -> Result<SolveProblem> {
        let mut problem = SolveProblem::new(self.system()?);
        problem.actuate_root = self.file.actuate_root;
        Ok(problem)
    }

    pub fn tau(&self) -> Option<Vec<DVector<f64>>> {
        self.file
            .tau
            .as_ref()
            .map(|tau| tau.iter().map(|r| DVector::from_row_slice(r)).collect())
    }

    /// Merges the scene and object blocks into point-set order.
    pub fn coefficients(&self) -> Option<CoefficientTensor> {
        let f = &self.file;
        let empty = vec![Vec::new(); self.frames()];
        let scene = match (&f.scene_coefficients, self.points.scene_count()) {
            (Some(a), _) => a,
            (None, 0) => &empty,
            (None, _) => return None,
        };
        let object = match (&f.object_coefficients, self.points.object_count()) {
            (Some(b), _) => b,
            (None, 0) => &empty,
            (None, _) => return None,
        };
        let nested: Vec<Vec<[f64; 4]>> = (0..self.frames())
            .map(|t| {
                let (mut a, mut b) = (scene[t].iter(), object[t].iter());
                self.points
                    .points
                    .iter()
                    .map(|p| match p.role {
                        ContactRole::Scene => *a.next().expect("checked width"),
                        ContactRole::Object => *b.next().expect("checked width"),
                    })
                    .collect()
            })
            .collect();
        CoefficientTensor::from_nested(&nested).ok()
    }

    pub fn metric_setup(&self) -> Result<MetricSetup> {
        let spec = self.file.metrics.clone().unwrap_or_default();
        Ok(MetricSetup {
            hands: spec
                .hands
                .iter()
                .map(|h| body_index(&self.tree, h))
                .collect::<Result<_>>()?,
            hand_points: body_points(&self.tree, &spec.hand_points)?,
            samples: body_points(&self.tree, &spec.samples)?,
            feet: body_points(&self.tree, &spec.feet)?,
            object: self.object.as_ref().map(|o| o.surface.clone()),
            scene: self.scene.clone(),
            thresholds: Default::default(),
        })
    }

    pub fn point_specs(tree: &KinematicTree, points: &ContactPointSet) -> Vec<PointSpec> {
        points
            .points
            .iter()
            .map(|p| PointSpec {
                body: tree.links()[p.body].name.clone(),
                offset: p.offset.into(),
                role: p.role,
            })
            .collect()
    }
}

fn check_rows(field: &str, rows: usize, frames: usize) -> Result<()> {
    if rows != frames {
        bail!("field `{field}`: {rows} frames, `human` has {frames}");
    }
    Ok(())
}

/// Splits a tensor in point-set order back into the scene and object blocks.
pub fn split_coefficients(
    coeffs: &CoefficientTensor,
    points: &ContactPointSet,
) -> (Vec<Vec<[f64; 4]>>, Vec<Vec<[f64; 4]>>) {
    let mut scene = Vec::with_capacity(coeffs.frames());
    let mut object = Vec::with_capacity(coeffs.frames());
    for t in 0..coeffs.frames() {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (k, p) in points.points.iter().enumerate() {
            let c = coeffs.get(t, k).to_array();
            match p.role {
                ContactRole::Scene => a.push(c),
                ContactRole::Object => b.push(c),
            }
        }
        scene.push(a);
        object.push(b);
    }
    (scene, object)
}
