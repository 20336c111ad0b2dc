//! Interior point deformation: each canonical point is a fixed convex combination of
//! body vertices, re-evaluated on posed vertices.

use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array_io::{read_json, write_json, EncodedArray};
use crate::body_model::{vec3_flat, vec3_unflat};
use crate::error::{Error, Result};
use crate::gps::{TetLocator, TetMesh};

pub const DEFAULT_NEIGHBORS: usize = 8;
pub const DEFAULT_IDW_POWER: f64 = 2.0;

/// Distances at or below this count as an exact hit.
const HIT_DISTANCE: f64 = 1e-12;
const SUM_TOLERANCE: f64 = 1e-9;

/// Sparse row-compressed weights: point `i` uses entries `indptr[i]..indptr[i+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InteriorWeightSet {
    indptr: Vec<usize>,
    indices: Vec<usize>,
    weights: Vec<f64>,
    canonical_points: Vec<Vector3<f64>>,
}

impl InteriorWeightSet {
    pub fn new(
        indptr: Vec<usize>,
        indices: Vec<usize>,
        weights: Vec<f64>,
        canonical_points: Vec<Vector3<f64>>,
    ) -> Result<Self> {
        if indptr.len() != canonical_points.len() + 1 || indptr.first() != Some(&0) {
            return Err(Error::Dimension(format!(
                "indptr has {} entries for {} points",
                indptr.len(),
                canonical_points.len()
            )));
        }
        if indptr.windows(2).any(|w| w[1] < w[0]) || *indptr.last().unwrap() != indices.len() {
            return Err(Error::InvalidArgument("indptr must be non-decreasing and end at nnz".into()));
        }
        if indices.len() != weights.len() {
            return Err(Error::Dimension(format!("{} indices vs {} weights", indices.len(), weights.len())));
        }
        for (i, row) in indptr.windows(2).enumerate() {
            let w = &weights[row[0]..row[1]];
            if let Some(bad) = w.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
                return Err(Error::InvalidArgument(format!("point {i} has weight {bad}")));
            }
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > SUM_TOLERANCE {
                return Err(Error::InvalidArgument(format!("point {i} weights sum to {sum}")));
            }
        }
        Ok(Self { indptr, indices, weights, canonical_points })
    }

    pub fn len(&self) -> usize {
        self.canonical_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.canonical_points.is_empty()
    }

    pub fn canonical_points(&self) -> &[Vector3<f64>] {
        &self.canonical_points
    }

    /// `(vertex, weight)` pairs of point `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()].iter().copied().zip(self.weights[span].iter().copied())
    }

    pub fn max_index(&self) -> Option<usize> {
        self.indices.iter().copied().max()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f: WeightsFile = read_json(path)?;
        f.into_weights()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, &WeightsFile::from_weights(self))
    }
}

/// `Σ_j w_j v'_j` for every point.
pub fn deform_points(weights: &InteriorWeightSet, posed_vertices: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>> {
    if let Some(max) = weights.max_index() {
        if max >= posed_vertices.len() {
            return Err(Error::Dimension(format!(
                "weights reference vertex {max}, only {} posed vertices given",
                posed_vertices.len()
            )));
        }
    }
    Ok((0..weights.len())
        .into_par_iter()
        .map(|i| weights.row(i).map(|(j, w)| posed_vertices[j] * w).sum())
        .collect())
}

/// Inverse-distance weights `d^-power` over the `k` nearest canonical vertices.
///
/// A stand-in for natural-neighbor weights: it does not reproduce linear fields in
/// general, so canonical points are only recovered approximately.
pub fn knn_idw_weights(
    canonical_vertices: &[Vector3<f64>],
    query_points: &[Vector3<f64>],
    k: usize,
    power: f64,
) -> Result<InteriorWeightSet> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if canonical_vertices.is_empty() {
        return Err(Error::InvalidArgument("no canonical vertices".into()));
    }
    if !(power.is_finite() && power >= 0.0) {
        return Err(Error::InvalidArgument(format!("power must be nonnegative, got {power}")));
    }
    if query_points.iter().chain(canonical_vertices).any(|p| !p.iter().all(|x| x.is_finite())) {
        return Err(Error::NonFinite("interpolation points".into()));
    }
    let k = k.min(canonical_vertices.len());
    let rows: Vec<Vec<(usize, f64)>> = query_points
        .par_iter()
        .map(|q| {
            let mut dist: Vec<(f64, usize)> = canonical_vertices
                .iter()
                .enumerate()
                .map(|(j, v)| ((v - q).norm(), j))
                .collect();
            if k < dist.len() {
                dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                dist.truncate(k);
            }
            dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            if dist[0].0 <= HIT_DISTANCE {
                return vec![(dist[0].1, 1.0)];
            }
            let raw: Vec<f64> = dist.iter().map(|(d, _)| d.powf(-power)).collect();
            let total: f64 = raw.iter().sum();
            dist.iter().zip(raw).map(|((_, j), w)| (*j, w / total)).collect()
        })
        .collect();
    from_rows(rows, query_points.to_vec())
}

/// Barycentric weights of each point in a tet mesh whose nodes are the vertices.
/// These interpolate linear fields exactly.
pub fn barycentric_weights(mesh: &TetMesh, query_points: &[Vector3<f64>]) -> Result<InteriorWeightSet> {
    let locator = TetLocator::new(mesh);
    let rows = query_points
        .iter()
        .map(|p| {
            let (t, l) = locator.locate(mesh, p)?;
            let tet = mesh.tets()[t];
            let clamped = l.map(|x| x.max(0.0));
            let sum = clamped.sum();
            Ok((0..4).filter(|&c| clamped[c] > 0.0).map(|c| (tet[c], clamped[c] / sum)).collect())
        })
        .collect::<Result<Vec<Vec<(usize, f64)>>>>()?;
    from_rows(rows, query_points.to_vec())
}

fn from_rows(rows: Vec<Vec<(usize, f64)>>, canonical_points: Vec<Vector3<f64>>) -> Result<InteriorWeightSet> {
    let mut indptr = Vec::with_capacity(rows.len() + 1);
    indptr.push(0);
    let (mut indices, mut weights) = (Vec::new(), Vec::new());
    for row in rows {
        for (j, w) in row {
            indices.push(j);
            weights.push(w);
        }
        indptr.push(indices.len());
    }
    InteriorWeightSet::new(indptr, indices, weights, canonical_points)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightsFile {
    pub indptr: EncodedArray,
    pub indices: EncodedArray,
    pub weights: EncodedArray,
    pub canonical_points: EncodedArray,
}

impl WeightsFile {
    pub fn from_weights(w: &InteriorWeightSet) -> Self {
        let ints = |v: &[usize]| EncodedArray::from_i64(&[v.len()], &v.iter().map(|&x| x as i64).collect::<Vec<_>>());
        Self {
            indptr: ints(&w.indptr),
            indices: ints(&w.indices),
            weights: EncodedArray::from_f64(&[w.weights.len()], &w.weights),
            canonical_points: EncodedArray::from_f64(&[w.len(), 3], &vec3_flat(&w.canonical_points)),
        }
    }

    pub fn into_weights(self) -> Result<InteriorWeightSet> {
        let unsigned = |name: &str, a: &EncodedArray| -> Result<Vec<usize>> {
            crate::array_io::check_shape(name, &a.shape, &[None])?;
            a.to_i64()?
                .into_iter()
                .map(|v| usize::try_from(v).map_err(|_| Error::Parse(format!("negative entry {v} in {name}"))))
                .collect()
        };
        let indptr = unsigned("indptr", &self.indptr)?;
        let indices = unsigned("indices", &self.indices)?;
        let weights = self.weights.to_f64_shaped("weights", &[None])?;
        let points = vec3_unflat(&self.canonical_points.to_f64_shaped("canonical_points", &[None, Some(3)])?);
        InteriorWeightSet::new(indptr, indices, weights, points)
    }
}
