use std::collections::HashMap;
use std::fmt::Write as _;

use super::bvh::Bvh;
use super::LocalQuery;
use crate::error::{Error, Result};
use crate::spatial::Vec3;

/// Triangle count below which queries scan every triangle.
pub const BRUTE_FORCE_LIMIT: usize = 10_000;

/// Closest-point feature on a triangle. Edge `k` joins local vertices
/// `k` and `(k + 1) % 3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feature {
    Face,
    Edge(u8),
    Vertex(u8),
}

/// Consistently oriented triangle mesh with pseudo-normals.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    face_normals: Vec<Vec3>,
    vertex_normals: Vec<Vec3>,
    edge_normals: HashMap<(usize, usize), Vec3>,
    bvh: Bvh,
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::EmptySurface);
        }
        if vertices.iter().any(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::Mesh("non-finite vertex".into()));
        }
        let (lo, hi) = bounds(&vertices);
        let scale = (hi - lo).norm_squared().max(f64::MIN_POSITIVE);

        let mut face_normals = Vec::with_capacity(triangles.len());
        for (i, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::Mesh(format!("triangle {i} references a missing vertex")));
            }
            let [a, b, c] = tri.map(|v| vertices[v]);
            let cross = (b - a).cross(&(c - a));
            if cross.norm() <= 1e-14 * scale {
                return Err(Error::Mesh(format!("triangle {i} has zero area")));
            }
            face_normals.push(cross.normalize());
        }

        // Each undirected edge must be traversed equally often in both
        // directions by its incident triangles.
        let mut edge_use: HashMap<(usize, usize), (i64, Vec3)> = HashMap::new();
        for (tri, n) in triangles.iter().zip(&face_normals) {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let entry = edge_use.entry(edge_key(a, b)).or_insert((0, Vec3::zeros()));
                entry.0 += if a < b { 1 } else { -1 };
                entry.1 += n;
            }
        }
        if let Some(((a, b), _)) = edge_use.iter().find(|(_, (bal, _))| bal.abs() > 1) {
            return Err(Error::Mesh(format!(
                "inconsistent orientation across edge ({a}, {b})"
            )));
        }
        let edge_normals = edge_use
            .into_iter()
            .map(|(k, (_, n))| (k, safe_normalize(n)))
            .collect();

        let mut vertex_acc = vec![Vec3::zeros(); vertices.len()];
        for (tri, n) in triangles.iter().zip(&face_normals) {
            for k in 0..3 {
                let p = vertices[tri[k]];
                let e1 = (vertices[tri[(k + 1) % 3]] - p).normalize();
                let e2 = (vertices[tri[(k + 2) % 3]] - p).normalize();
                let angle = e1.dot(&e2).clamp(-1.0, 1.0).acos();
                vertex_acc[tri[k]] += n * angle;
            }
        }
        let vertex_normals = vertex_acc.into_iter().map(safe_normalize).collect();

        let bvh = Bvh::build(&vertices, &triangles);
        Ok(Self {
            vertices,
            triangles,
            face_normals,
            vertex_normals,
            edge_normals,
            bvh,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub(crate) fn corners(&self, tri: usize) -> [Vec3; 3] {
        self.triangles[tri].map(|v| self.vertices[v])
    }

    /// Squared distance, closest point and feature for one triangle.
    pub(crate) fn closest_on(&self, tri: usize, p: &Vec3) -> (f64, Vec3, Feature) {
        let [a, b, c] = self.corners(tri);
        let (x, f) = closest_on_triangle(p, &a, &b, &c);
        ((p - x).norm_squared(), x, f)
    }

    /// Nearest point, dispatching on triangle count.
    pub fn nearest(&self, p: &Vec3) -> Result<LocalQuery> {
        if self.triangles.len() < BRUTE_FORCE_LIMIT {
            self.nearest_brute_force(p)
        } else {
            self.nearest_bvh(p)
        }
    }

    pub fn nearest_brute_force(&self, p: &Vec3) -> Result<LocalQuery> {
        let mut best: Option<(f64, usize, Vec3, Feature)> = None;
        for tri in 0..self.triangles.len() {
            let (d2, x, f) = self.closest_on(tri, p);
            // Strict improvement keeps the lowest index among ties.
            if best.is_none_or(|b| d2 < b.0) {
                best = Some((d2, tri, x, f));
            }
        }
        let (_, tri, x, f) = best.ok_or(Error::EmptySurface)?;
        Ok(self.finish(p, tri, x, f))
    }

    pub fn nearest_bvh(&self, p: &Vec3) -> Result<LocalQuery> {
        let (tri, x, f) = self.bvh.nearest(self, p).ok_or(Error::EmptySurface)?;
        Ok(self.finish(p, tri, x, f))
    }

    /// Feature normal: face normal or angle-weighted pseudo-normal.
    pub fn feature_normal(&self, tri: usize, f: Feature) -> Vec3 {
        let t = self.triangles[tri];
        match f {
            Feature::Face => self.face_normals[tri],
            Feature::Edge(k) => {
                let k = k as usize;
                self.edge_normals[&edge_key(t[k], t[(k + 1) % 3])]
            }
            Feature::Vertex(k) => self.vertex_normals[t[k as usize]],
        }
    }

    fn finish(&self, p: &Vec3, tri: usize, x: Vec3, f: Feature) -> LocalQuery {
        let pseudo = self.feature_normal(tri, f);
        let diff = p - x;
        let dist = diff.norm();
        let sign = if diff.dot(&pseudo) < 0.0 { -1.0 } else { 1.0 };
        LocalQuery {
            x,
            n: pseudo,
            signed_distance: sign * dist,
        }
    }

    /// Parses the OBJ subset: `v x y z` and triangular `f` records (1-based
    /// or negative indices; `/`-suffixed texture and normal indices are
    /// ignored). Other record types are skipped.
    pub fn from_obj(text: &str) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            let mut parts = line.split_whitespace();
            let err = |msg: &str| Error::Parse(format!("line {}: {msg}", lineno + 1));
            match parts.next() {
                Some("v") => {
                    let coords: Vec<f64> = parts
                        .take(3)
                        .map(|s| s.parse::<f64>().map_err(|_| err("bad vertex coordinate")))
                        .collect::<Result<_>>()?;
                    if coords.len() != 3 {
                        return Err(err("vertex needs three coordinates"));
                    }
                    vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
                }
                Some("f") => {
                    let idx: Vec<usize> = parts
                        .map(|s| {
                            let head = s.split('/').next().unwrap_or("");
                            let i: i64 = head.parse().map_err(|_| err("bad face index"))?;
                            let n = vertices.len() as i64;
                            let resolved = if i > 0 { i - 1 } else { n + i };
                            if i == 0 || resolved < 0 || resolved >= n {
                                return Err(err("face index out of range"));
                            }
                            Ok(resolved as usize)
                        })
                        .collect::<Result<_>>()?;
                    if idx.len() != 3 {
                        return Err(err("only triangular faces are supported"));
                    }
                    triangles.push([idx[0], idx[1], idx[2]]);
                }
                _ => {}
            }
        }
        Self::new(vertices, triangles)
    }

    pub fn to_obj(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        out
    }

    /// Closed, outward-oriented mesh of an axis-aligned box centred at the
    /// origin.
    pub fn cuboid(half_extents: &Vec3) -> Result<Self> {
        let h = half_extents;
        let vertices = (0..8)
            .map(|i| {
                Vec3::new(
                    if i & 1 == 0 { -h.x } else { h.x },
                    if i & 2 == 0 { -h.y } else { h.y },
                    if i & 4 == 0 { -h.z } else { h.z },
                )
            })
            .collect();
        let quads = [
            [0, 2, 3, 1], // -z
            [4, 5, 7, 6], // +z
            [0, 1, 5, 4], // -y
            [2, 6, 7, 3], // +y
            [0, 4, 6, 2], // -x
            [1, 3, 7, 5], // +x
        ];
        let triangles = quads
            .iter()
            .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
            .collect();
        Self::new(vertices, triangles)
    }
}

fn safe_normalize(v: Vec3) -> Vec3 {
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        v
    }
}

pub(crate) fn bounds(points: &[Vec3]) -> (Vec3, Vec3) {
    points.iter().fold(
        (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)),
        |(lo, hi), p| (lo.inf(p), hi.sup(p)),
    )
}

/// Closest point on triangle `abc` (Ericson, Real-Time Collision Detection).
pub(crate) fn closest_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, Feature) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, Feature::Vertex(0));
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, Feature::Vertex(1));
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, Feature::Edge(0));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, Feature::Vertex(2));
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, Feature::Edge(2));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, Feature::Edge(1));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, Feature::Face)
}
