//! Articulated body and free rigid object.
//!
//! A [`KinematicTree`] is a set of rigid links connected by joints, rooted at
//! a single free (6-DOF) joint. Rotational coordinates are axis-angle
//! parameters; a free joint stores `[axis-angle(3), translation(3)]`.
//! Configured with a free root and 23 spherical joints the tree has 75
//! generalized coordinates.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{Mat3, Pose, Vec3};
use crate::surfaces::Shape;

const AXIS_UNIT_TOL: f64 = 1e-9;
const INERTIA_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct RigidLink {
    pub name: String,
    pub mass: f64,
    /// Rotational inertia about the centre of mass, in the link frame.
    pub inertia: Mat3,
    /// Centre of mass relative to the joint (link) frame origin.
    pub com_offset: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JointKind {
    Revolute { axis: Vec3 },
    Spherical,
    Free,
}

impl JointKind {
    pub fn dof(&self) -> usize {
        match self {
            JointKind::Revolute { .. } => 1,
            JointKind::Spherical => 3,
            JointKind::Free => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub kind: JointKind,
    /// Parent link index; `None` for the root joint (attached to the world).
    pub parent: Option<usize>,
    pub child: usize,
    /// Joint frame relative to the parent link frame.
    pub origin: Pose,
}

/// Articulated body. Link `i` is moved by joint `i`; links are stored in
/// topological order so every parent precedes its children.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicTree {
    links: Vec<RigidLink>,
    joints: Vec<Joint>,
    q_offsets: Vec<usize>,
    dof: usize,
}

impl KinematicTree {
    pub fn links(&self) -> &[RigidLink] {
        &self.links
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    /// First generalized-coordinate index of joint `i`.
    pub fn q_offset(&self, joint: usize) -> usize {
        self.q_offsets[joint]
    }

    pub fn parent(&self, link: usize) -> Option<usize> {
        self.joints[link].parent
    }

    pub fn link_index(&self, name: &str) -> Result<usize> {
        self.links
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::UnknownBody(name.to_string()))
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    /// Start indices of every axis-angle triple in `q`.
    pub fn rotation_blocks(&self) -> Vec<usize> {
        self.joints
            .iter()
            .enumerate()
            .filter(|(_, j)| matches!(j.kind, JointKind::Free | JointKind::Spherical))
            .map(|(i, _)| self.q_offsets[i])
            .collect()
    }

    /// Translational coordinates of the root joint.
    pub fn root_translation_range(&self) -> std::ops::Range<usize> {
        3..6
    }

    /// Links on the path from the root to `link`, root first.
    pub fn ancestry(&self, link: usize) -> Vec<usize> {
        let mut path = vec![link];
        let mut cur = link;
        while let Some(p) = self.joints[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    pub fn check_config(&self, context: &'static str, len: usize) -> Result<()> {
        crate::error::check_len(context, self.dof, len)
    }

    /// Single free body: used for rigid objects and simple test blocks.
    pub fn single_body(name: &str, mass: f64, inertia: Mat3, com_offset: Vec3) -> Result<Self> {
        let desc = ModelDescription {
            version: 1,
            links: vec![LinkDescription {
                name: name.to_string(),
                mass,
                inertia: mat_rows(&inertia),
                com: com_offset.into(),
            }],
            joints: vec![JointDescription {
                name: "root".into(),
                kind: JointKindDescription::Free,
                parent: None,
                child: name.to_string(),
                origin: OriginDescription::default(),
            }],
        };
        build_tree(&desc)
    }
}

/// Free 6-DOF rigid object. Its body frame origin is the centre of mass.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidObjectModel {
    pub mass: f64,
    pub inertia: Mat3,
    pub geometry: Shape,
    tree: KinematicTree,
}

impl RigidObjectModel {
    pub fn new(mass: f64, inertia: Mat3, geometry: Shape) -> Result<Self> {
        validate_inertia("object", mass, &inertia)?;
        let tree = KinematicTree::single_body("object", mass, inertia, Vec3::zeros())?;
        Ok(Self {
            mass,
            inertia,
            geometry,
            tree,
        })
    }

    /// Equivalent single-link tree (`q_o = [axis-angle, translation]`).
    pub fn as_tree(&self) -> &KinematicTree {
        &self.tree
    }
}

/// Analytic solid-box inertia about the centre of mass.
pub fn box_inertia(mass: f64, half_extents: Vec3) -> Result<Mat3> {
    if !(mass >= 0.0) || half_extents.iter().any(|h| !(*h >= 0.0)) {
        return Err(Error::Domain(format!(
            "box inertia needs mass >= 0 and half extents >= 0, got {mass} and {half_extents:?}"
        )));
    }
    let [a2, b2, c2] = [
        half_extents.x * half_extents.x,
        half_extents.y * half_extents.y,
        half_extents.z * half_extents.z,
    ];
    Ok(Mat3::from_diagonal(&Vec3::new(
        mass * (b2 + c2) / 3.0,
        mass * (a2 + c2) / 3.0,
        mass * (a2 + b2) / 3.0,
    )))
}

fn validate_inertia(name: &str, mass: f64, inertia: &Mat3) -> Result<()> {
    let err = |reason: String| Error::Inertia {
        name: name.to_string(),
        reason,
    };
    if !mass.is_finite() || mass < 0.0 {
        return Err(err(format!("mass {mass} must be finite and >= 0")));
    }
    if inertia.iter().any(|v| !v.is_finite()) {
        return Err(err("non-finite entry".into()));
    }
    let scale = inertia.abs().max().max(1.0);
    if (inertia - inertia.transpose()).abs().max() > INERTIA_TOL * scale {
        return Err(err("not symmetric".into()));
    }
    let eig = inertia.symmetric_eigenvalues();
    if eig.iter().any(|&l| l < -INERTIA_TOL * scale) {
        return Err(err(format!("not positive semidefinite (eigenvalues {eig:?})")));
    }
    if mass > 0.0 {
        let (a, b, c) = (eig[0], eig[1], eig[2]);
        let tol = INERTIA_TOL * scale;
        if a + b < c - tol || a + c < b - tol || b + c < a - tol {
            return Err(err(format!(
                "principal moments {eig:?} violate the triangle inequality"
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Structured model description (JSON).

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDescription {
    pub version: u32,
    pub links: Vec<LinkDescription>,
    pub joints: Vec<JointDescription>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDescription {
    pub name: String,
    pub mass: f64,
    pub inertia: [[f64; 3]; 3],
    #[serde(default)]
    pub com: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointDescription {
    pub name: String,
    pub kind: JointKindDescription,
    pub parent: Option<String>,
    pub child: String,
    #[serde(default)]
    pub origin: OriginDescription,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum JointKindDescription {
    Free,
    Spherical,
    Revolute { axis: [f64; 3] },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OriginDescription {
    /// Axis-angle rotation, radians.
    #[serde(default)]
    pub rotation: [f64; 3],
    /// Translation in the parent link frame, metres.
    #[serde(default)]
    pub translation: [f64; 3],
}

fn mat_rows(m: &Mat3) -> [[f64; 3]; 3] {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

impl ModelDescription {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Description that rebuilds `tree` exactly.
    pub fn from_tree(tree: &KinematicTree) -> Self {
        let links = tree
            .links
            .iter()
            .map(|l| LinkDescription {
                name: l.name.clone(),
                mass: l.mass,
                inertia: mat_rows(&l.inertia),
                com: l.com_offset.into(),
            })
            .collect();
        let joints = tree
            .joints
            .iter()
            .map(|j| JointDescription {
                name: j.name.clone(),
                kind: match j.kind {
                    JointKind::Free => JointKindDescription::Free,
                    JointKind::Spherical => JointKindDescription::Spherical,
                    JointKind::Revolute { axis } => JointKindDescription::Revolute {
                        axis: axis.into(),
                    },
                },
                parent: j.parent.map(|p| tree.links[p].name.clone()),
                child: tree.links[j.child].name.clone(),
                origin: OriginDescription {
                    rotation: crate::spatial::log_so3(&j.origin.rot).into(),
                    translation: j.origin.trans.into(),
                },
            })
            .collect();
        Self {
            version: 1,
            links,
            joints,
        }
    }
}

/// Validates a model description and builds the tree in topological order.
pub fn build_tree(desc: &ModelDescription) -> Result<KinematicTree> {
    if desc.version != 1 {
        return Err(Error::Parse(format!(
            "unsupported model version {}",
            desc.version
        )));
    }
    let mut by_name = HashMap::new();
    for (i, l) in desc.links.iter().enumerate() {
        if by_name.insert(l.name.as_str(), i).is_some() {
            return Err(Error::Parse(format!("duplicate link name `{}`", l.name)));
        }
    }
    let resolve = |name: &str| {
        by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownBody(name.to_string()))
    };
    if desc.links.is_empty() {
        return Err(Error::Root("model has no links".into()));
    }

    // incoming[child] = joint index
    let mut incoming: Vec<Option<usize>> = vec![None; desc.links.len()];
    let mut roots = Vec::new();
    for (ji, j) in desc.joints.iter().enumerate() {
        let child = resolve(&j.child)?;
        if let Some(p) = &j.parent {
            let parent = resolve(p)?;
            if parent == child {
                return Err(Error::Cycle(format!(
                    "joint `{}` connects link `{}` to itself",
                    j.name, j.child
                )));
            }
        } else {
            roots.push(ji);
        }
        if incoming[child].replace(ji).is_some() {
            return Err(Error::Cycle(format!(
                "link `{}` has more than one parent joint",
                j.child
            )));
        }
    }
    if roots.len() != 1 {
        return Err(Error::Root(format!(
            "expected exactly one root joint, found {}",
            roots.len()
        )));
    }
    let root_joint = roots[0];
    if desc.joints[root_joint].kind != JointKindDescription::Free {
        return Err(Error::Root(format!(
            "root joint `{}` must be free",
            desc.joints[root_joint].name
        )));
    }
    if let Some(orphan) = incoming.iter().position(Option::is_none) {
        return Err(Error::Root(format!(
            "link `{}` is not attached to any joint",
            desc.links[orphan].name
        )));
    }

    // Breadth-first order from the root; anything unreached sits on a cycle.
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); desc.links.len()];
    for j in &desc.joints {
        if let Some(p) = &j.parent {
            children[resolve(p)?].push(resolve(&j.child)?);
        }
    }
    let mut order = vec![resolve(&desc.joints[root_joint].child)?];
    let mut head = 0;
    while head < order.len() {
        let cur = order[head];
        head += 1;
        order.extend(children[cur].iter().copied());
    }
    if order.len() != desc.links.len() {
        return Err(Error::Cycle(
            "some links are unreachable from the root (joint cycle)".into(),
        ));
    }
    let mut new_index = vec![0usize; desc.links.len()];
    for (new, &old) in order.iter().enumerate() {
        new_index[old] = new;
    }

    let mut links = Vec::with_capacity(order.len());
    let mut joints = Vec::with_capacity(order.len());
    let mut q_offsets = Vec::with_capacity(order.len());
    let mut dof = 0;
    for &old in &order {
        let ld = &desc.links[old];
        let inertia = Mat3::from_fn(|r, c| ld.inertia[r][c]);
        validate_inertia(&ld.name, ld.mass, &inertia)?;
        links.push(RigidLink {
            name: ld.name.clone(),
            mass: ld.mass,
            inertia,
            com_offset: Vec3::from(ld.com),
        });
        let jd = &desc.joints[incoming[old].expect("checked above")];
        let kind = match &jd.kind {
            JointKindDescription::Free => JointKind::Free,
            JointKindDescription::Spherical => JointKind::Spherical,
            JointKindDescription::Revolute { axis } => {
                let axis = Vec3::from(*axis);
                if (axis.norm() - 1.0).abs() > AXIS_UNIT_TOL {
                    return Err(Error::Domain(format!(
                        "revolute joint `{}` axis has norm {}",
                        jd.name,
                        axis.norm()
                    )));
                }
                JointKind::Revolute { axis }
            }
        };
        if kind == JointKind::Free && jd.parent.is_some() {
            return Err(Error::Root(format!(
                "free joint `{}` must attach to the world",
                jd.name
            )));
        }
        let parent = match &jd.parent {
            Some(p) => Some(new_index[resolve(p)?]),
            None => None,
        };
        joints.push(Joint {
            name: jd.name.clone(),
            kind,
            parent,
            child: new_index[old],
            origin: Pose::from_axis_angle(
                &Vec3::from(jd.origin.rotation),
                Vec3::from(jd.origin.translation),
            ),
        });
        q_offsets.push(dof);
        dof += kind.dof();
    }
    Ok(KinematicTree {
        links,
        joints,
        q_offsets,
        dof,
    })
}

/// Builds a random chain-or-branching tree; used by tests and benchmarks.
pub fn random_tree<R: rand::Rng>(rng: &mut R, bodies: usize) -> KinematicTree {
    let mut desc = ModelDescription {
        version: 1,
        links: Vec::new(),
        joints: Vec::new(),
    };
    for i in 0..bodies.max(1) {
        let mass = rng.gen_range(0.2..3.0);
        let half = Vec3::new(
            rng.gen_range(0.02..0.2),
            rng.gen_range(0.02..0.2),
            rng.gen_range(0.02..0.2),
        );
        let inertia = box_inertia(mass, half).expect("positive inputs");
        desc.links.push(LinkDescription {
            name: format!("l{i}"),
            mass,
            inertia: mat_rows(&inertia),
            com: [
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.2..0.2),
            ],
        });
        let (kind, parent) = if i == 0 {
            (JointKindDescription::Free, None)
        } else {
            let parent = rng.gen_range(0..i);
            let kind = if rng.gen_bool(0.5) {
                JointKindDescription::Spherical
            } else {
                let a = Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ) + Vec3::new(0.0, 0.0, 0.1);
                JointKindDescription::Revolute {
                    axis: a.normalize().into(),
                }
            };
            (kind, Some(format!("l{parent}")))
        };
        desc.joints.push(JointDescription {
            name: format!("j{i}"),
            kind,
            parent,
            child: format!("l{i}"),
            origin: OriginDescription {
                rotation: [
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                ],
                translation: if i == 0 {
                    [0.0; 3]
                } else {
                    [
                        rng.gen_range(-0.3..0.3),
                        rng.gen_range(-0.3..0.3),
                        rng.gen_range(-0.4..0.0),
                    ]
                },
            },
        });
    }
    build_tree(&desc).expect("random tree is valid")
}

/// Free root (meant to be held fixed) with one revolute joint about `y`
/// and a point mass `length` below the pivot.
pub fn pendulum_tree(mass: f64, length: f64) -> Result<KinematicTree> {
    let desc = ModelDescription {
        version: 1,
        links: vec![
            LinkDescription {
                name: "pivot".into(),
                mass: 1.0,
                inertia: mat_rows(&(Mat3::identity() * 1e-3)),
                com: [0.0; 3],
            },
            LinkDescription {
                name: "bob".into(),
                mass,
                inertia: [[0.0; 3]; 3],
                com: [0.0, 0.0, -length],
            },
        ],
        joints: vec![
            JointDescription {
                name: "root".into(),
                kind: JointKindDescription::Free,
                parent: None,
                child: "pivot".into(),
                origin: OriginDescription::default(),
            },
            JointDescription {
                name: "hinge".into(),
                kind: JointKindDescription::Revolute { axis: [0.0, 1.0, 0.0] },
                parent: Some("pivot".into()),
                child: "bob".into(),
                origin: OriginDescription::default(),
            },
        ],
    };
    build_tree(&desc)
}

/// Free root plus 23 spherical joints in a humanoid-like topology.
pub fn humanoid_24() -> KinematicTree {
    // (name, parent, offset from parent joint)
    const BODIES: [(&str, &str, [f64; 3]); 23] = [
        ("l_hip", "pelvis", [0.06, -0.09, -0.02]),
        ("r_hip", "pelvis", [-0.06, -0.09, -0.02]),
        ("spine1", "pelvis", [0.0, 0.11, -0.02]),
        ("l_knee", "l_hip", [0.04, -0.38, 0.0]),
        ("r_knee", "r_hip", [-0.04, -0.38, 0.0]),
        ("spine2", "spine1", [0.0, 0.13, 0.0]),
        ("l_ankle", "l_knee", [0.0, -0.4, -0.04]),
        ("r_ankle", "r_knee", [0.0, -0.4, -0.04]),
        ("spine3", "spine2", [0.0, 0.05, 0.02]),
        ("l_foot", "l_ankle", [0.02, -0.06, 0.12]),
        ("r_foot", "r_ankle", [-0.02, -0.06, 0.12]),
        ("neck", "spine3", [0.0, 0.21, -0.03]),
        ("l_collar", "spine3", [0.07, 0.11, -0.02]),
        ("r_collar", "spine3", [-0.07, 0.11, -0.02]),
        ("head", "neck", [0.0, 0.06, 0.05]),
        ("l_shoulder", "l_collar", [0.11, 0.05, -0.01]),
        ("r_shoulder", "r_collar", [-0.11, 0.05, -0.01]),
        ("l_elbow", "l_shoulder", [0.26, -0.01, -0.02]),
        ("r_elbow", "r_shoulder", [-0.26, -0.01, -0.02]),
        ("l_wrist", "l_elbow", [0.25, 0.01, 0.0]),
        ("r_wrist", "r_elbow", [-0.25, 0.01, 0.0]),
        ("l_hand", "l_wrist", [0.08, -0.01, -0.01]),
        ("r_hand", "r_wrist", [-0.08, -0.01, -0.01]),
    ];
    let mut desc = ModelDescription {
        version: 1,
        links: Vec::new(),
        joints: Vec::new(),
    };
    let link = |name: &str, mass: f64| LinkDescription {
        name: name.to_string(),
        mass,
        inertia: mat_rows(&box_inertia(mass, Vec3::new(0.05, 0.08, 0.05)).unwrap()),
        com: [0.0, -0.03, 0.0],
    };
    desc.links.push(link("pelvis", 10.0));
    desc.joints.push(JointDescription {
        name: "root".into(),
        kind: JointKindDescription::Free,
        parent: None,
        child: "pelvis".into(),
        origin: OriginDescription::default(),
    });
    for (name, parent, offset) in BODIES {
        desc.links.push(link(name, 2.5));
        desc.joints.push(JointDescription {
            name: format!("{name}_joint"),
            kind: JointKindDescription::Spherical,
            parent: Some(parent.into()),
            child: name.into(),
            origin: OriginDescription {
                rotation: [0.0; 3],
                translation: offset,
            },
        });
    }
    build_tree(&desc).expect("humanoid description is valid")
}
