//! Volumetric Laplacian eigenbasis on tetrahedral meshes and the global point
//! signature `γ(p) = [φ₁(p)/√λ₁, …, φ_M(p)/√λ_M]`.
//!
//! Natural (Neumann) boundary conditions; the constant zero mode is dropped, so
//! index 1 is the first nonzero eigenpair. Each eigenfunction's sign is fixed by
//! making its largest-magnitude node value positive.

pub mod eigen;
pub mod fem;
pub mod fourier;
pub mod mesh;

use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::array_io::{read_json, write_json, EncodedArray};
use crate::error::{Error, Result};

pub use eigen::{dense_generalized_eigs, fix_sign_gauge, sparse_generalized_eigs, KrylovConfig};
pub use fem::fem_laplacian;
pub use fourier::{fit_readout, FourierFeatures, Readout};
pub use mesh::{unit_cube_mesh, TetLocator, TetMesh};

pub const DEFAULT_NUM_EIGENFUNCTIONS: usize = 32;
pub const BASIS_FORMAT_VERSION: u32 = 1;

/// Meshes up to this many nodes use the dense solver unless told otherwise.
pub const DENSE_NODE_LIMIT: usize = 600;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    Auto,
    Dense,
    Sparse,
}

#[derive(Debug, Clone)]
pub struct TetEigenbasis {
    mesh: TetMesh,
    locator: TetLocator,
    /// Ascending, zero mode removed.
    eigenvalues: Vec<f64>,
    /// `n × M` node values, M-orthonormal.
    eigenvectors: DMatrix<f64>,
}

impl TetEigenbasis {
    /// The `count` smallest nonzero eigenpairs of the mesh Laplacian.
    pub fn build(mesh: &TetMesh, count: usize, solver: Solver) -> Result<Self> {
        let n = mesh.num_nodes();
        if count == 0 || count + 1 >= n {
            return Err(Error::InvalidArgument(format!(
                "{count} eigenfunctions requested on a {n}-node mesh"
            )));
        }
        let (k, m) = fem_laplacian(mesh)?;
        let dense = match solver {
            Solver::Auto => n <= DENSE_NODE_LIMIT,
            Solver::Dense => true,
            Solver::Sparse => false,
        };
        let (values, vectors) = if dense {
            dense_generalized_eigs(&eigen::to_dense(&k), &eigen::to_dense(&m), count + 1)?
        } else {
            sparse_generalized_eigs(&k, &m, count + 1, &KrylovConfig::default())?
        };
        let mut eigenvectors = vectors.columns(1, count).into_owned();
        fix_sign_gauge(&mut eigenvectors);
        Self::from_parts(mesh.clone(), values[1..].to_vec(), eigenvectors)
    }

    pub fn from_parts(mesh: TetMesh, eigenvalues: Vec<f64>, eigenvectors: DMatrix<f64>) -> Result<Self> {
        if eigenvalues.is_empty() || eigenvectors.ncols() != eigenvalues.len() || eigenvectors.nrows() != mesh.num_nodes() {
            return Err(Error::Dimension(format!(
                "{} eigenvalues, {}×{} eigenvectors, {} nodes",
                eigenvalues.len(),
                eigenvectors.nrows(),
                eigenvectors.ncols(),
                mesh.num_nodes()
            )));
        }
        if eigenvalues.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument("eigenvalues are not ascending".into()));
        }
        if let Some(bad) = eigenvalues.iter().find(|&&l| !(l > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "signature eigenvalues must be positive, found {bad:e}"
            )));
        }
        let locator = TetLocator::new(&mesh);
        Ok(Self { mesh, locator, eigenvalues, eigenvectors })
    }

    pub fn mesh(&self) -> &TetMesh {
        &self.mesh
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Signature of mesh node `j`.
    pub fn gps_at_node(&self, j: usize) -> DVector<f64> {
        DVector::from_fn(self.len(), |i, _| self.eigenvectors[(j, i)] / self.eigenvalues[i].sqrt())
    }

    /// Signature at an interior point by barycentric interpolation.
    pub fn gps(&self, p: &Vector3<f64>) -> Result<DVector<f64>> {
        let (t, l) = self.locator.locate(&self.mesh, p)?;
        let tet = self.mesh.tets()[t];
        Ok(DVector::from_fn(self.len(), |i, _| {
            let phi: f64 = (0..4).map(|c| l[c] * self.eigenvectors[(tet[c], i)]).sum();
            phi / self.eigenvalues[i].sqrt()
        }))
    }

    pub fn load(path: &Path, mesh: &TetMesh) -> Result<Self> {
        let f: BasisFile = read_json(path)?;
        f.into_basis(mesh)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, &BasisFile::from_basis(self))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisFile {
    pub format_version: u32,
    pub mesh_hash: String,
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: EncodedArray,
}

impl BasisFile {
    pub fn from_basis(b: &TetEigenbasis) -> Self {
        let (n, m) = b.eigenvectors.shape();
        // row-major node × eigenfunction
        let flat: Vec<f64> = (0..n).flat_map(|r| (0..m).map(move |c| (r, c))).map(|(r, c)| b.eigenvectors[(r, c)]).collect();
        Self {
            format_version: BASIS_FORMAT_VERSION,
            mesh_hash: b.mesh.content_hash(),
            eigenvalues: b.eigenvalues.clone(),
            eigenvectors: EncodedArray::from_f64(&[n, m], &flat),
        }
    }

    /// Rebuilds the basis for `mesh`, refusing a file computed on a different mesh.
    pub fn into_basis(self, mesh: &TetMesh) -> Result<TetEigenbasis> {
        if self.format_version != BASIS_FORMAT_VERSION {
            return Err(Error::Parse(format!("unsupported basis format version {}", self.format_version)));
        }
        let hash = mesh.content_hash();
        if self.mesh_hash != hash {
            return Err(Error::InvalidArgument(format!(
                "basis was computed for mesh {}, given mesh is {hash}",
                self.mesh_hash
            )));
        }
        let m = self.eigenvalues.len();
        let flat = self
            .eigenvectors
            .to_f64_shaped("eigenvectors", &[Some(mesh.num_nodes()), Some(m)])?;
        let vectors = DMatrix::from_row_slice(mesh.num_nodes(), m, &flat);
        TetEigenbasis::from_parts(mesh.clone(), self.eigenvalues, vectors)
    }
}
