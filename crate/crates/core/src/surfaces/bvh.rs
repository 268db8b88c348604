use super::mesh::{bounds, Feature, TriMesh};
use crate::spatial::Vec3;

const LEAF_SIZE: usize = 4;
/// Relative slack on the box lower bound so rounding never prunes a tie.
const PRUNE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
struct Node {
    lo: Vec3,
    hi: Vec3,
    /// Leaf: range into `order`. Inner: child node indices.
    kind: NodeKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum NodeKind {
    Leaf { start: usize, end: usize },
    Inner { left: usize, right: usize },
}

/// Axis-aligned bounding-volume hierarchy over mesh triangles, split at the
/// centroid median of the widest axis.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Bvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
}

impl Bvh {
    pub(crate) fn build(vertices: &[Vec3], triangles: &[[usize; 3]]) -> Self {
        let boxes: Vec<(Vec3, Vec3)> = triangles
            .iter()
            .map(|t| bounds(&t.map(|v| vertices[v])))
            .collect();
        let centroids: Vec<Vec3> = boxes.iter().map(|(lo, hi)| (lo + hi) * 0.5).collect();
        let mut bvh = Bvh {
            nodes: Vec::new(),
            order: (0..triangles.len()).collect(),
        };
        if !triangles.is_empty() {
            bvh.split(&boxes, &centroids, 0, triangles.len());
        }
        bvh
    }

    fn split(&mut self, boxes: &[(Vec3, Vec3)], centroids: &[Vec3], start: usize, end: usize) -> usize {
        let (lo, hi) = self.order[start..end].iter().fold(
            (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)),
            |(lo, hi), &t| (lo.inf(&boxes[t].0), hi.sup(&boxes[t].1)),
        );
        let id = self.nodes.len();
        self.nodes.push(Node {
            lo,
            hi,
            kind: NodeKind::Leaf { start, end },
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let axis = (hi - lo).imax();
        let mid = start + (end - start) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a][axis]
                .total_cmp(&centroids[b][axis])
                .then(a.cmp(&b))
        });
        let left = self.split(boxes, centroids, start, mid);
        let right = self.split(boxes, centroids, mid, end);
        self.nodes[id].kind = NodeKind::Inner { left, right };
        id
    }

    fn box_distance_sq(node: &Node, p: &Vec3) -> f64 {
        let q = Vec3::from_fn(|i, _| p[i].clamp(node.lo[i], node.hi[i]));
        (p - q).norm_squared()
    }

    /// Minimum of `(squared distance, triangle index)` over the mesh, the
    /// same ordering the brute-force scan produces.
    pub(crate) fn nearest(&self, mesh: &TriMesh, p: &Vec3) -> Option<(usize, Vec3, Feature)> {
        let mut best: Option<(f64, usize, Vec3, Feature)> = None;
        let mut stack = vec![0usize];
        if self.nodes.is_empty() {
            return None;
        }
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if let Some(b) = best {
                if Self::box_distance_sq(node, p) > b.0 * (1.0 + PRUNE_SLACK) {
                    continue;
                }
            }
            match node.kind {
                NodeKind::Leaf { start, end } => {
                    for &tri in &self.order[start..end] {
                        let (d2, x, f) = mesh.closest_on(tri, p);
                        let better = best.is_none_or(|b| d2 < b.0 || (d2 == b.0 && tri < b.1));
                        if better {
                            best = Some((d2, tri, x, f));
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    let dl = Self::box_distance_sq(&self.nodes[left], p);
                    let dr = Self::box_distance_sq(&self.nodes[right], p);
                    // Push the farther child first so the nearer is visited first.
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        best.map(|(_, tri, x, f)| (tri, x, f))
    }
}
