use std::collections::HashMap;

use super::mesh::TriMesh;
use crate::error::{Error, Result};
use crate::spatial::Vec3;

/// Occupancy grid `S in {0,1}^{Nx x Ny x Nz}`; cell `(i, j, k)` spans
/// `origin + cell * [i, i+1] x [j, j+1] x [k, k+1]`. Storage is x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    pub cell: f64,
    pub origin: Vec3,
    occupancy: Vec<bool>,
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], cell: f64, origin: Vec3, occupancy: Vec<bool>) -> Result<Self> {
        if !(cell > 0.0) || !cell.is_finite() {
            return Err(Error::Domain(format!("voxel cell size must be > 0, got {cell}")));
        }
        crate::error::check_len("voxel occupancy", dims.iter().product(), occupancy.len())?;
        Ok(Self {
            dims,
            cell,
            origin,
            occupancy,
        })
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    /// Occupancy with everything outside the grid treated as empty.
    pub fn occupied(&self, i: i64, j: i64, k: i64) -> bool {
        let inside = [i, j, k]
            .iter()
            .zip(&self.dims)
            .all(|(&c, &n)| c >= 0 && (c as usize) < n);
        inside && self.occupancy[self.index(i as usize, j as usize, k as usize)]
    }

    /// Parses the text format:
    ///
    /// ```text
    /// voxels 1
    /// dims <Nx> <Ny> <Nz>
    /// cell <size m>
    /// origin <x> <y> <z>
    /// rle <count> <0|1> <count> <0|1> ...
    /// ```
    ///
    /// Runs may continue over further lines; `#` starts a comment. Counts
    /// must sum to `Nx * Ny * Nz`, x varying fastest.
    pub fn parse(text: &str) -> Result<Self> {
        let mut dims = None;
        let mut cell = None;
        let mut origin = None;
        let mut runs: Option<Vec<bool>> = None;
        let mut seen_header = false;
        for (lineno, raw) in text.lines().enumerate() {
            let err = |msg: String| Error::Parse(format!("line {}: {msg}", lineno + 1));
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let head = parts.next().unwrap_or("");
            let rest: Vec<&str> = parts.collect();
            let nums = |n: usize| -> Result<Vec<f64>> {
                if rest.len() != n {
                    return Err(err(format!("`{head}` expects {n} values")));
                }
                rest.iter()
                    .map(|s| s.parse::<f64>().map_err(|_| err(format!("bad number `{s}`"))))
                    .collect()
            };
            if let Some(runs) = runs.as_mut() {
                push_runs(runs, line.split_whitespace(), &err)?;
                continue;
            }
            match head {
                "voxels" => {
                    if rest != ["1"] {
                        return Err(err("unsupported voxel format version".into()));
                    }
                    seen_header = true;
                }
                "dims" => {
                    let v = rest
                        .iter()
                        .map(|s| s.parse::<usize>().map_err(|_| err(format!("bad dimension `{s}`"))))
                        .collect::<Result<Vec<_>>>()?;
                    if v.len() != 3 {
                        return Err(err("`dims` expects 3 values".into()));
                    }
                    dims = Some([v[0], v[1], v[2]]);
                }
                "cell" => cell = Some(nums(1)?[0]),
                "origin" => {
                    let v = nums(3)?;
                    origin = Some(Vec3::new(v[0], v[1], v[2]));
                }
                "rle" => {
                    let mut acc = Vec::new();
                    push_runs(&mut acc, rest.into_iter(), &err)?;
                    runs = Some(acc);
                }
                other => return Err(err(format!("unknown record `{other}`"))),
            }
        }
        if !seen_header {
            return Err(Error::Parse("missing `voxels 1` header".into()));
        }
        let missing = |what: &str| Error::Parse(format!("missing `{what}` record"));
        let dims = dims.ok_or_else(|| missing("dims"))?;
        let cell = cell.ok_or_else(|| missing("cell"))?;
        let origin = origin.ok_or_else(|| missing("origin"))?;
        let occupancy = runs.ok_or_else(|| missing("rle"))?;
        let total: usize = dims.iter().product();
        if occupancy.len() != total {
            return Err(Error::Parse(format!(
                "run lengths cover {} cells, grid has {total}",
                occupancy.len()
            )));
        }
        Self::new(dims, cell, origin, occupancy)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "voxels 1\ndims {} {} {}\ncell {}\norigin {} {} {}\nrle",
            self.dims[0], self.dims[1], self.dims[2], self.cell, self.origin.x, self.origin.y, self.origin.z
        );
        let mut iter = self.occupancy.iter().peekable();
        while let Some(&v) = iter.next() {
            let mut count = 1;
            while iter.peek() == Some(&&v) {
                iter.next();
                count += 1;
            }
            out.push_str(&format!(" {count} {}", u8::from(v)));
        }
        out.push('\n');
        out
    }

    /// Boundary faces between occupied and empty cells, two outward
    /// triangles per face, sharing lattice vertices.
    pub fn to_mesh(&self) -> Result<TriMesh> {
        let mut vertex_ids: HashMap<[i64; 3], usize> = HashMap::new();
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        let mut vid = |c: [i64; 3], vertices: &mut Vec<Vec3>| {
            *vertex_ids.entry(c).or_insert_with(|| {
                vertices.push(self.origin + Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64) * self.cell);
                vertices.len() - 1
            })
        };
        let [nx, ny, nz] = self.dims.map(|d| d as i64);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    if !self.occupied(i, j, k) {
                        continue;
                    }
                    let cell = [i, j, k];
                    for axis in 0..3 {
                        let (b, c) = ((axis + 1) % 3, (axis + 2) % 3);
                        for positive in [false, true] {
                            let mut nb = cell;
                            nb[axis] += if positive { 1 } else { -1 };
                            if self.occupied(nb[0], nb[1], nb[2]) {
                                continue;
                            }
                            let mut base = cell;
                            if positive {
                                base[axis] += 1;
                            }
                            let corner = |db: i64, dc: i64| {
                                let mut v = base;
                                v[b] += db;
                                v[c] += dc;
                                v
                            };
                            // e_b x e_c = e_axis, so this order faces +axis.
                            let mut quad = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)];
                            if !positive {
                                quad.reverse();
                            }
                            let ids = quad.map(|q| vid(q, &mut vertices));
                            triangles.push([ids[0], ids[1], ids[2]]);
                            triangles.push([ids[0], ids[2], ids[3]]);
                        }
                    }
                }
            }
        }
        if triangles.is_empty() {
            return Err(Error::EmptySurface);
        }
        TriMesh::new(vertices, triangles)
    }
}

fn push_runs<'a>(
    acc: &mut Vec<bool>,
    tokens: impl Iterator<Item = &'a str>,
    err: &dyn Fn(String) -> Error,
) -> Result<()> {
    let tokens: Vec<&str> = tokens.collect();
    if !tokens.len().is_multiple_of(2) {
        return Err(err("run-length data must come in <count> <value> pairs".into()));
    }
    for pair in tokens.chunks(2) {
        let count: usize = pair[0]
            .parse()
            .map_err(|_| err(format!("bad run count `{}`", pair[0])))?;
        let value = match pair[1] {
            "0" => false,
            "1" => true,
            v => return Err(err(format!("occupancy must be 0 or 1, got `{v}`"))),
        };
        acc.extend(std::iter::repeat_n(value, count));
    }
    Ok(())
}
