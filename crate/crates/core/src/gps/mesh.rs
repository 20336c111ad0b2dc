//! Tetrahedral meshes, a structured unit-cube generator and point location.

use std::path::Path;

use nalgebra::{Matrix3, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::array_io::{read_json, write_json, EncodedArray};
use crate::body_model::{vec3_flat, vec3_unflat};
use crate::error::{Error, Result};

/// Minimum tet volume, m³.
pub const MIN_TET_VOLUME: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TetMesh {
    nodes: Vec<Vector3<f64>>,
    tets: Vec<[usize; 4]>,
}

pub fn signed_volume(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>, d: &Vector3<f64>) -> f64 {
    (b - a).dot(&(c - a).cross(&(d - a))) / 6.0
}

impl TetMesh {
    /// Validates indices and requires every tet to be positively oriented with
    /// volume above [`MIN_TET_VOLUME`].
    pub fn new(nodes: Vec<Vector3<f64>>, tets: Vec<[usize; 4]>) -> Result<Self> {
        if nodes.is_empty() || tets.is_empty() {
            return Err(Error::InvalidArgument("mesh needs nodes and tets".into()));
        }
        if nodes.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFinite("mesh nodes".into()));
        }
        for (t, tet) in tets.iter().enumerate() {
            if let Some(&bad) = tet.iter().find(|&&i| i >= nodes.len()) {
                return Err(Error::InvalidArgument(format!(
                    "tet {t} references node {bad}, mesh has {}",
                    nodes.len()
                )));
            }
            let v = signed_volume(&nodes[tet[0]], &nodes[tet[1]], &nodes[tet[2]], &nodes[tet[3]]);
            if v <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "tet {t} has signed volume {v:e}; expected positive orientation"
                )));
            }
            if v < MIN_TET_VOLUME {
                return Err(Error::Degenerate(format!("tet {t} has volume {v:e} m³")));
            }
        }
        Ok(Self { nodes, tets })
    }

    pub fn nodes(&self) -> &[Vector3<f64>] {
        &self.nodes
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn tet_volume(&self, t: usize) -> f64 {
        let [a, b, c, d] = self.tets[t];
        signed_volume(&self.nodes[a], &self.nodes[b], &self.nodes[c], &self.nodes[d])
    }

    /// Same connectivity with every node mapped through `f`. Fails if the map
    /// flips or collapses a tet.
    pub fn map_nodes(&self, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> Result<Self> {
        Self::new(self.nodes.iter().map(f).collect(), self.tets.clone())
    }

    /// Barycentric coordinates of `p` in tet `t`.
    pub fn barycentric(&self, t: usize, p: &Vector3<f64>) -> Vector4<f64> {
        let [a, b, c, d] = self.tets[t].map(|i| self.nodes[i]);
        let m = Matrix3::from_columns(&[b - a, c - a, d - a]);
        let l = m.try_inverse().map(|inv| inv * (p - a)).unwrap_or_else(Vector3::zeros);
        Vector4::new(1.0 - l.x - l.y - l.z, l.x, l.y, l.z)
    }

    /// SHA-256 of the little-endian node coordinates followed by the tet indices.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.nodes {
            for c in p.iter() {
                h.update(c.to_le_bytes());
            }
        }
        for t in &self.tets {
            for &i in t {
                h.update((i as u64).to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f: MeshFile = read_json(path)?;
        f.into_mesh()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, &MeshFile::from_mesh(self))
    }
}

/// Unit cube `[0, 1]³` with `cells` cubes per axis, each split into six tets around
/// its main diagonal.
pub fn unit_cube_mesh(cells: usize) -> Result<TetMesh> {
    if cells == 0 {
        return Err(Error::InvalidArgument("cube mesh needs at least one cell per axis".into()));
    }
    let n = cells + 1;
    let h = 1.0 / cells as f64;
    let id = |i: usize, j: usize, k: usize| (k * n + j) * n + i;
    let mut nodes = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                nodes.push(Vector3::new(i as f64 * h, j as f64 * h, k as f64 * h));
            }
        }
    }
    const PATHS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut tets = Vec::with_capacity(6 * cells * cells * cells);
    for k in 0..cells {
        for j in 0..cells {
            for i in 0..cells {
                for path in PATHS {
                    let mut corner = [i, j, k];
                    let mut tet = [id(i, j, k); 4];
                    for (s, &axis) in path.iter().enumerate() {
                        corner[axis] += 1;
                        tet[s + 1] = id(corner[0], corner[1], corner[2]);
                    }
                    let [a, b, c, d] = tet.map(|v| nodes[v]);
                    if signed_volume(&a, &b, &c, &d) < 0.0 {
                        tet.swap(2, 3);
                    }
                    tets.push(tet);
                }
            }
        }
    }
    TetMesh::new(nodes, tets)
}

/// Uniform bucket grid over the mesh bounding box for point location.
#[derive(Debug, Clone)]
pub struct TetLocator {
    lo: Vector3<f64>,
    cell: Vector3<f64>,
    dims: [usize; 3],
    buckets: Vec<Vec<usize>>,
}

/// Barycentric tolerance for points on shared faces and the boundary.
const INSIDE_TOL: f64 = 1e-10;

impl TetLocator {
    pub fn new(mesh: &TetMesh) -> Self {
        let (mut lo, mut hi) = (mesh.nodes[0], mesh.nodes[0]);
        for p in &mesh.nodes {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let extent = (hi - lo).map(|e| e.max(1e-9));
        // about one tet per bucket
        let per_axis = (mesh.tets.len() as f64).cbrt().ceil().max(1.0);
        let dims = [per_axis as usize; 3];
        let cell = extent / per_axis;
        let mut buckets = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        let mut loc = Self { lo, cell, dims, buckets: Vec::new() };
        for (t, tet) in mesh.tets.iter().enumerate() {
            let (mut a, mut b) = (mesh.nodes[tet[0]], mesh.nodes[tet[0]]);
            for &i in &tet[1..] {
                a = a.inf(&mesh.nodes[i]);
                b = b.sup(&mesh.nodes[i]);
            }
            let (ia, ib) = (loc.cell_of(&a), loc.cell_of(&b));
            for z in ia[2]..=ib[2] {
                for y in ia[1]..=ib[1] {
                    for x in ia[0]..=ib[0] {
                        buckets[(z * dims[1] + y) * dims[0] + x].push(t);
                    }
                }
            }
        }
        loc.buckets = buckets;
        loc
    }

    fn cell_of(&self, p: &Vector3<f64>) -> [usize; 3] {
        let mut out = [0; 3];
        for c in 0..3 {
            let f = ((p[c] - self.lo[c]) / self.cell[c]).floor();
            out[c] = (f.max(0.0) as usize).min(self.dims[c] - 1);
        }
        out
    }

    /// Tet containing `p` with its barycentric coordinates, or an error carrying
    /// the nearest tet and its distance.
    pub fn locate(&self, mesh: &TetMesh, p: &Vector3<f64>) -> Result<(usize, Vector4<f64>)> {
        if !p.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("query point".into()));
        }
        let c = self.cell_of(p);
        let bucket = &self.buckets[(c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]];
        let mut best: Option<(usize, Vector4<f64>, f64)> = None;
        for &t in bucket {
            let l = mesh.barycentric(t, p);
            let worst = l.min();
            if worst >= -INSIDE_TOL && best.as_ref().map_or(true, |b| worst > b.2) {
                best = Some((t, l, worst));
            }
        }
        if let Some((t, l, _)) = best {
            return Ok((t, l));
        }
        let (nearest_tet, distance) = (0..mesh.tets.len())
            .map(|t| (t, distance_to_tet(mesh, t, p)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("mesh has tets");
        Err(Error::OutsideMesh {
            x: p.x,
            y: p.y,
            z: p.z,
            nearest_tet,
            distance,
        })
    }
}

fn distance_to_tet(mesh: &TetMesh, t: usize, p: &Vector3<f64>) -> f64 {
    let v = mesh.tets[t].map(|i| mesh.nodes[i]);
    if mesh.barycentric(t, p).min() >= 0.0 {
        return 0.0;
    }
    [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]]
        .iter()
        .map(|f| (p - closest_on_triangle(p, &v[f[0]], &v[f[1]], &v[f[2]])).norm())
        .fold(f64::INFINITY, f64::min)
}

/// Closest point on triangle `abc` to `p` by Voronoi-region classification.
fn closest_on_triangle(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Vector3<f64> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && d4 - d3 >= 0.0 && d5 - d6 >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshFile {
    pub nodes: EncodedArray,
    pub tets: EncodedArray,
}

impl MeshFile {
    pub fn from_mesh(m: &TetMesh) -> Self {
        let idx: Vec<i64> = m.tets.iter().flat_map(|t| t.map(|i| i as i64)).collect();
        Self {
            nodes: EncodedArray::from_f64(&[m.nodes.len(), 3], &vec3_flat(&m.nodes)),
            tets: EncodedArray::from_i64(&[m.tets.len(), 4], &idx),
        }
    }

    pub fn into_mesh(self) -> Result<TetMesh> {
        let nodes = vec3_unflat(&self.nodes.to_f64_shaped("nodes", &[None, Some(3)])?);
        crate::array_io::check_shape("tets", &self.tets.shape, &[None, Some(4)])?;
        let idx = self.tets.to_i64()?;
        let tets = idx
            .chunks_exact(4)
            .map(|c| {
                let mut t = [0usize; 4];
                for (slot, &v) in t.iter_mut().zip(c) {
                    *slot = usize::try_from(v).map_err(|_| Error::Parse(format!("negative node index {v}")))?;
                }
                Ok(t)
            })
            .collect::<Result<Vec<_>>>()?;
        TetMesh::new(nodes, tets)
    }
}
