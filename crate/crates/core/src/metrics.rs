//! Physical-plausibility metrics over predicted and reference motion.
//!
//! Lengths are reported in centimetres. Threshold tests are strict: a
//! point exactly at the threshold is neither penetrating nor in contact.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::kinematics::{forward_kinematics, Trajectory};
use crate::model::KinematicTree;
use crate::spatial::{Pose, Vec3};
use crate::surfaces::{nearest_of, Surface};

const CM: f64 = 100.0;

/// A point rigidly attached to a body: `(body index, body-frame offset)`.
pub type BodyPoint = (usize, Vec3);

/// Default thresholds, m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub collision: f64,
    pub contact: f64,
    pub foot_height: f64,
    pub ground_height: f64,
    pub scene: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            collision: 0.04,
            contact: 0.05,
            foot_height: 0.05,
            ground_height: 0.0,
            scene: 0.04,
        }
    }
}

fn poses_per_frame(tree: &KinematicTree, traj: &Trajectory) -> Result<Vec<Vec<Pose>>> {
    tree.check_config("trajectory width", traj.width())?;
    traj.frames()
        .par_iter()
        .map(|q| forward_kinematics(tree, q.as_slice()))
        .collect()
}

fn world_points(poses: &[Pose], points: &[BodyPoint]) -> Vec<Vec3> {
    points.iter().map(|(b, off)| poses[*b].apply(off)).collect()
}

fn check_points(tree: &KinematicTree, points: &[BodyPoint]) -> Result<()> {
    for (b, _) in points {
        if *b >= tree.links().len() {
            return Err(Error::UnknownBody(format!("body index {b}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseErrors {
    /// Mean hand joint position error, cm; `None` without hand joints.
    pub hand_jpe: Option<f64>,
    /// Mean per-joint (link origin) position error, cm.
    pub mpjpe: f64,
    /// Mean error over the supplied body sample points, cm; a stand-in for
    /// per-vertex error when no body mesh is available.
    pub mpvpe: Option<f64>,
    pub t_root: f64,
    /// Mean `|R_pred R_gt^T - I|_F` of the root.
    pub o_root: f64,
}

/// Pose errors of `pred` against `gt`. Joints are link origins; `hands`
/// lists the hand links.
pub fn pose_errors(
    pred: &Trajectory,
    gt: &Trajectory,
    tree: &KinematicTree,
    hands: &[usize],
    samples: &[BodyPoint],
) -> Result<PoseErrors> {
    check_len("frame count", gt.len(), pred.len())?;
    if gt.is_empty() {
        return Err(Error::TooShort { frames: 0, required: 1 });
    }
    check_points(tree, samples)?;
    for h in hands {
        if *h >= tree.links().len() {
            return Err(Error::UnknownBody(format!("body index {h}")));
        }
    }
    let pp = poses_per_frame(tree, pred)?;
    let pg = poses_per_frame(tree, gt)?;
    let frames = gt.len() as f64;
    let joint_err = |a: &[Pose], b: &[Pose], idx: &mut dyn Iterator<Item = usize>| -> (f64, usize) {
        idx.fold((0.0, 0), |(s, n), i| (s + (a[i].trans - b[i].trans).norm(), n + 1))
    };
    let (mut all, mut hand, mut samp, mut t_root, mut o_root) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (a, b) in pp.iter().zip(&pg) {
        let (s, n) = joint_err(a, b, &mut (0..a.len()));
        all += s / n as f64;
        if !hands.is_empty() {
            hand += joint_err(a, b, &mut hands.iter().copied()).0 / hands.len() as f64;
        }
        if !samples.is_empty() {
            let wa = world_points(a, samples);
            let wb = world_points(b, samples);
            samp += wa.iter().zip(&wb).map(|(x, y)| (x - y).norm()).sum::<f64>() / samples.len() as f64;
        }
        t_root += (a[0].trans - b[0].trans).norm();
        // |R_p R_g^T - I|_F = |R_p - R_g|_F; the latter is exactly 0 for
        // identical poses.
        o_root += (a[0].rot - b[0].rot).norm();
    }
    Ok(PoseErrors {
        hand_jpe: (!hands.is_empty()).then(|| CM * hand / frames),
        mpjpe: CM * all / frames,
        mpvpe: (!samples.is_empty()).then(|| CM * samp / frames),
        t_root: CM * t_root / frames,
        o_root: o_root / frames,
    })
}

fn penetration_pct(
    traj: &Trajectory,
    tree: &KinematicTree,
    samples: &[BodyPoint],
    threshold: f64,
    distance: impl Fn(&Vec3, usize) -> Result<f64> + Sync,
) -> Result<f64> {
    check_points(tree, samples)?;
    if traj.is_empty() {
        return Err(Error::TooShort { frames: 0, required: 1 });
    }
    let poses = poses_per_frame(tree, traj)?;
    let hits = poses
        .par_iter()
        .enumerate()
        .map(|(t, p)| -> Result<bool> {
            for x in world_points(p, samples) {
                if distance(&x, t)? < -threshold {
                    return Ok(true);
                }
            }
            Ok(false)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(100.0 * hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64)
}

/// Percentage of frames in which some sample point lies deeper than
/// `threshold` inside the object.
pub fn collision_percentage(
    traj: &Trajectory,
    tree: &KinematicTree,
    samples: &[BodyPoint],
    object: &Surface,
    threshold: f64,
) -> Result<f64> {
    penetration_pct(traj, tree, samples, threshold, |x, t| {
        Ok(object.nearest(x, t)?.signed_distance)
    })
}

/// [`collision_percentage`] against the union of static scene surfaces.
pub fn scene_penetration(
    traj: &Trajectory,
    tree: &KinematicTree,
    samples: &[BodyPoint],
    scene: &[Surface],
    threshold: f64,
) -> Result<f64> {
    if scene.is_empty() {
        return Ok(0.0);
    }
    penetration_pct(traj, tree, samples, threshold, |x, t| {
        Ok(nearest_of(scene, x, t)?.signed_distance)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 of binary labels. Precision is 1 without
/// predicted positives, recall is 1 without true positives, and F1 is 0
/// when both vanish.
pub fn prf_from_labels(pred: &[bool], gt: &[bool]) -> Result<Prf> {
    check_len("label count", gt.len(), pred.len())?;
    let tp = pred.iter().zip(gt).filter(|(p, g)| **p && **g).count() as f64;
    let pp = pred.iter().filter(|p| **p).count() as f64;
    let gp = gt.iter().filter(|g| **g).count() as f64;
    let precision = if pp == 0.0 { 1.0 } else { tp / pp };
    let recall = if gp == 0.0 { 1.0 } else { tp / gp };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Prf {
        precision,
        recall,
        f1,
    })
}

fn contact_labels(
    traj: &Trajectory,
    tree: &KinematicTree,
    hands: &[BodyPoint],
    object: &Surface,
    threshold: f64,
) -> Result<Vec<bool>> {
    let poses = poses_per_frame(tree, traj)?;
    let per_frame = poses
        .par_iter()
        .enumerate()
        .map(|(t, p)| {
            world_points(p, hands)
                .iter()
                .map(|x| Ok(object.nearest(x, t)?.signed_distance < threshold))
                .collect::<Result<Vec<bool>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_frame.concat())
}

/// Per-frame, per-hand-point contact labels (distance below `threshold`)
/// of `pred` scored against those of `gt`.
pub fn contact_prf(
    pred: &Trajectory,
    gt: &Trajectory,
    tree: &KinematicTree,
    hands: &[BodyPoint],
    object: &Surface,
    threshold: f64,
) -> Result<Prf> {
    check_len("frame count", gt.len(), pred.len())?;
    check_points(tree, hands)?;
    let lp = contact_labels(pred, tree, hands, object, threshold)?;
    let lg = contact_labels(gt, tree, hands, object, threshold)?;
    prf_from_labels(&lp, &lg)
}

/// Height-weighted horizontal foot drift, cm per frame: each foot point
/// below `height_threshold` contributes `|dp_xy| (2 - 2^(h/H))`, with `h`
/// its height above the ground at the later frame (clamped at 0).
pub fn foot_sliding(
    traj: &Trajectory,
    tree: &KinematicTree,
    feet: &[BodyPoint],
    ground_height: f64,
    height_threshold: f64,
) -> Result<f64> {
    check_points(tree, feet)?;
    if traj.len() < 2 || feet.is_empty() {
        return Ok(0.0);
    }
    let pts: Vec<Vec<Vec3>> = poses_per_frame(tree, traj)?
        .iter()
        .map(|p| world_points(p, feet))
        .collect();
    let total: f64 = pts
        .windows(2)
        .map(|w| {
            w[0].iter()
                .zip(&w[1])
                .map(|(a, b)| {
                    let h = (b.z - ground_height).max(0.0);
                    if h < height_threshold {
                        let d = CM * (b - a).xy().norm();
                        d * (2.0 - 2f64.powf(h / height_threshold))
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
        })
        .sum();
    Ok(total / (pts.len() - 1) as f64)
}

/// Everything the metrics need besides the two trajectories.
#[derive(Debug, Clone, Default)]
pub struct MetricSetup {
    pub hands: Vec<usize>,
    pub hand_points: Vec<BodyPoint>,
    pub samples: Vec<BodyPoint>,
    pub feet: Vec<BodyPoint>,
    pub object: Option<Surface>,
    pub scene: Vec<Surface>,
    pub thresholds: Thresholds,
}

/// Flat metric report; optional entries are absent when their inputs are.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub hand_jpe: Option<f64>,
    pub mpjpe: f64,
    pub mpvpe: Option<f64>,
    pub t_root: f64,
    pub o_root: f64,
    pub collision_pct: Option<f64>,
    pub fs: Option<f64>,
    pub c_prec: Option<f64>,
    pub c_rec: Option<f64>,
    pub f1: Option<f64>,
    pub scene_pen: Option<f64>,
}

const KEYS: [&str; 11] = [
    "hand_jpe",
    "mpjpe",
    "mpvpe",
    "t_root",
    "o_root",
    "collision_pct",
    "fs",
    "c_prec",
    "c_rec",
    "f1",
    "scene_pen",
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "na".to_string(), |x| format!("{x:?}"))
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s == "na" {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::Parse(format!("bad metric value `{s}`")))
}

impl MetricReport {
    fn values(&self) -> [Option<f64>; 11] {
        [
            self.hand_jpe,
            Some(self.mpjpe),
            self.mpvpe,
            Some(self.t_root),
            Some(self.o_root),
            self.collision_pct,
            self.fs,
            self.c_prec,
            self.c_rec,
            self.f1,
            self.scene_pen,
        ]
    }

    fn from_values(v: [Option<f64>; 11]) -> Result<Self> {
        let req = |i: usize| v[i].ok_or_else(|| Error::Parse(format!("`{}` is required", KEYS[i])));
        Ok(Self {
            hand_jpe: v[0],
            mpjpe: req(1)?,
            mpvpe: v[2],
            t_root: req(3)?,
            o_root: req(4)?,
            collision_pct: v[5],
            fs: v[6],
            c_prec: v[7],
            c_rec: v[8],
            f1: v[9],
            scene_pen: v[10],
        })
    }

    /// `key = value` lines; missing values print as `na`.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(self.values()) {
            let _ = writeln!(out, "{k} = {}", fmt_opt(v));
        }
        out
    }

    pub fn from_key_value(text: &str) -> Result<Self> {
        let mut vals: [Option<Option<f64>>; 11] = [None; 11];
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected `key = value`", lineno + 1)))?;
            let i = KEYS
                .iter()
                .position(|key| *key == k.trim())
                .ok_or_else(|| Error::Parse(format!("line {}: unknown metric `{}`", lineno + 1, k.trim())))?;
            vals[i] = Some(parse_opt(v.trim())?);
        }
        let mut v = [None; 11];
        for (i, slot) in vals.iter().enumerate() {
            v[i] = slot.ok_or_else(|| Error::Parse(format!("missing metric `{}`", KEYS[i])))?;
        }
        Self::from_values(v)
    }

    pub fn csv_header() -> String {
        KEYS.join(",")
    }

    pub fn to_csv_row(&self) -> String {
        self.values().map(fmt_opt).join(",")
    }

    pub fn from_csv_row(row: &str) -> Result<Self> {
        let cells: Vec<&str> = row.trim_end_matches(['\r', '\n']).split(',').collect();
        check_len("metric CSV columns", KEYS.len(), cells.len())?;
        let mut v = [None; 11];
        for (slot, c) in v.iter_mut().zip(cells) {
            *slot = parse_opt(c.trim())?;
        }
        Self::from_values(v)
    }
}

/// All metrics of `pred` against `gt`. Collision, penetration and foot
/// sliding are measured on `pred`.
pub fn evaluate(pred: &Trajectory, gt: &Trajectory, tree: &KinematicTree, setup: &MetricSetup) -> Result<MetricReport> {
    let th = setup.thresholds;
    let pose = pose_errors(pred, gt, tree, &setup.hands, &setup.samples)?;
    let collision = match (&setup.object, setup.samples.is_empty()) {
        (Some(o), false) => Some(collision_percentage(pred, tree, &setup.samples, o, th.collision)?),
        _ => None,
    };
    let prf = match (&setup.object, setup.hand_points.is_empty()) {
        (Some(o), false) => Some(contact_prf(pred, gt, tree, &setup.hand_points, o, th.contact)?),
        _ => None,
    };
    let fs = (!setup.feet.is_empty())
        .then(|| foot_sliding(pred, tree, &setup.feet, th.ground_height, th.foot_height))
        .transpose()?;
    let scene_pen = (!setup.scene.is_empty() && !setup.samples.is_empty())
        .then(|| scene_penetration(pred, tree, &setup.samples, &setup.scene, th.scene))
        .transpose()?;
    Ok(MetricReport {
        hand_jpe: pose.hand_jpe,
        mpjpe: pose.mpjpe,
        mpvpe: pose.mpvpe,
        t_root: pose.t_root,
        o_root: pose.o_root,
        collision_pct: collision,
        fs,
        c_prec: prf.map(|p| p.precision),
        c_rec: prf.map(|p| p.recall),
        f1: prf.map(|p| p.f1),
        scene_pen,
    })
}
