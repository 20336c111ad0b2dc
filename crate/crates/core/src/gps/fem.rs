//! Linear tetrahedral finite elements: stiffness and consistent mass matrices.

use nalgebra::{Matrix3, Vector3};
use nalgebra_sparse::{CooMatrix, CscMatrix};

use super::mesh::{TetMesh, MIN_TET_VOLUME};
use crate::error::{Error, Result};

/// Gradients of the four barycentric hat functions of tet `t` (constant per tet).
pub fn hat_gradients(mesh: &TetMesh, t: usize) -> Result<[Vector3<f64>; 4]> {
    let [a, b, c, d] = mesh.tets()[t].map(|i| mesh.nodes()[i]);
    let e = Matrix3::from_columns(&[b - a, c - a, d - a]);
    let inv = e
        .try_inverse()
        .ok_or_else(|| Error::Degenerate(format!("tet {t} is singular")))?;
    let g1 = inv.row(0).transpose();
    let g2 = inv.row(1).transpose();
    let g3 = inv.row(2).transpose();
    Ok([-(g1 + g2 + g3), g1, g2, g3])
}

/// Stiffness `K` (∫∇φᵢ·∇φⱼ) and consistent mass `M` (∫φᵢφⱼ) with natural boundary
/// conditions.
pub fn fem_laplacian(mesh: &TetMesh) -> Result<(CscMatrix<f64>, CscMatrix<f64>)> {
    let n = mesh.num_nodes();
    let mut k = CooMatrix::new(n, n);
    let mut m = CooMatrix::new(n, n);
    for (t, tet) in mesh.tets().iter().enumerate() {
        let vol = mesh.tet_volume(t);
        if vol < MIN_TET_VOLUME {
            return Err(Error::Degenerate(format!("tet {t} has volume {vol:e} m³")));
        }
        let g = hat_gradients(mesh, t)?;
        for i in 0..4 {
            for j in 0..4 {
                k.push(tet[i], tet[j], vol * g[i].dot(&g[j]));
                let mass = if i == j { vol / 10.0 } else { vol / 20.0 };
                m.push(tet[i], tet[j], mass);
            }
        }
    }
    Ok((CscMatrix::from(&k), CscMatrix::from(&m)))
}

/// `xᵀ A x` for a sparse symmetric `A`.
pub fn quadratic_form(a: &CscMatrix<f64>, x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (col, lane) in a.col_iter().enumerate() {
        let xc = x[col];
        for (&row, &v) in lane.row_indices().iter().zip(lane.values()) {
            acc += x[row] * v * xc;
        }
    }
    acc
}
