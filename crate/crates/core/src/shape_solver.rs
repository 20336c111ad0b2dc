//! Ridge-regularised linear least squares for the shape vector and translation.
//!
//! The unknowns are `x = [β; t]`. Each output point contributes three rows that share
//! one weight. Normal equations `(JᵀΩJ + λD) x = JᵀΩr` are solved with a Cholesky
//! factorisation, where `D` penalises only the shape components past the
//! unpenalised prefix.

use nalgebra::{Cholesky, DMatrix, DVector, Vector3};

use crate::error::{Error, Result};

/// Relative pivot size below which the normal matrix is treated as singular.
const PIVOT_RTOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSolveConfig {
    pub ridge_lambda: f64,
    pub unpenalized_prefix: usize,
    /// One weight per output point (vertices then joints); `None` means all ones.
    pub point_weights: Option<Vec<f64>>,
}

impl Default for ShapeSolveConfig {
    fn default() -> Self {
        Self {
            ridge_lambda: 0.1,
            unpenalized_prefix: 2,
            point_weights: None,
        }
    }
}

/// One observation's linear system inside a (possibly shared-shape) solve.
#[derive(Debug, Clone, Copy)]
pub struct ShapeBlock<'a> {
    /// `3·P × (N_β + 3)`; the last three columns belong to the translation.
    pub jacobian: &'a DMatrix<f64>,
    pub residual: &'a DVector<f64>,
    pub point_weights: Option<&'a [f64]>,
}

pub fn solve_beta_t(
    jacobian: &DMatrix<f64>,
    residual: &DVector<f64>,
    cfg: &ShapeSolveConfig,
) -> Result<(DVector<f64>, Vector3<f64>)> {
    let block = ShapeBlock {
        jacobian,
        residual,
        point_weights: cfg.point_weights.as_deref(),
    };
    let (beta, mut ts) = solve_shared_beta_t(&[block], cfg.ridge_lambda, cfg.unpenalized_prefix)?;
    Ok((beta, ts.pop().unwrap()))
}

/// Solves for one shape vector shared by all blocks and one translation per block.
pub fn solve_shared_beta_t(
    blocks: &[ShapeBlock<'_>],
    ridge_lambda: f64,
    unpenalized_prefix: usize,
) -> Result<(DVector<f64>, Vec<Vector3<f64>>)> {
    let (matrix, rhs, nb) = normal_equations(blocks, ridge_lambda, unpenalized_prefix)?;
    let x = solve_spd(matrix, &rhs, ridge_lambda)?;
    let beta = x.rows(0, nb).into_owned();
    let ts = (0..blocks.len())
        .map(|i| Vector3::new(x[nb + 3 * i], x[nb + 3 * i + 1], x[nb + 3 * i + 2]))
        .collect();
    Ok((beta, ts))
}

/// Assembles `(JᵀΩJ + λD, JᵀΩr)` for the stacked unknowns `[β; t_1; …; t_T]`.
pub fn normal_equations(
    blocks: &[ShapeBlock<'_>],
    ridge_lambda: f64,
    unpenalized_prefix: usize,
) -> Result<(DMatrix<f64>, DVector<f64>, usize)> {
    if blocks.is_empty() {
        return Err(Error::InvalidArgument("shape solve needs at least one block".into()));
    }
    if !(ridge_lambda >= 0.0 && ridge_lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("ridge_lambda must be >= 0, got {ridge_lambda}")));
    }
    let cols = blocks[0].jacobian.ncols();
    if cols < 3 {
        return Err(Error::Dimension("jacobian needs at least the 3 translation columns".into()));
    }
    let nb = cols - 3;
    if unpenalized_prefix > nb {
        return Err(Error::InvalidArgument(format!(
            "unpenalized_prefix {unpenalized_prefix} exceeds the {nb} shape components"
        )));
    }
    let n = nb + 3 * blocks.len();
    let mut matrix = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);

    for (i, b) in blocks.iter().enumerate() {
        let rows = b.jacobian.nrows();
        if b.jacobian.ncols() != cols || b.residual.len() != rows || rows % 3 != 0 {
            return Err(Error::Dimension(format!(
                "block {i}: jacobian {:?} incompatible with residual of length {}",
                b.jacobian.shape(),
                b.residual.len()
            )));
        }
        if b.jacobian.iter().chain(b.residual.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("shape block {i}")));
        }
        let mut weighted = b.jacobian.clone();
        let mut wr = b.residual.clone();
        if let Some(w) = b.point_weights {
            if w.len() * 3 != rows {
                return Err(Error::Dimension(format!(
                    "block {i}: {} point weights for {} points",
                    w.len(),
                    rows / 3
                )));
            }
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::InvalidArgument("point weights must be finite and >= 0".into()));
            }
            for (p, &wp) in w.iter().enumerate() {
                weighted.rows_mut(3 * p, 3).scale_mut(wp);
                wr.rows_mut(3 * p, 3).scale_mut(wp);
            }
        }
        let a = b.jacobian.tr_mul(&weighted);
        let g = b.jacobian.tr_mul(&wr);

        let t0 = nb + 3 * i;
        let mut bb = matrix.view_mut((0, 0), (nb, nb));
        bb += a.view((0, 0), (nb, nb));
        let bt = a.view((0, nb), (nb, 3)).into_owned();
        matrix.view_mut((0, t0), (nb, 3)).copy_from(&bt);
        matrix.view_mut((t0, 0), (3, nb)).copy_from(&bt.transpose());
        matrix
            .view_mut((t0, t0), (3, 3))
            .copy_from(&a.view((nb, nb), (3, 3)));
        let mut rb = rhs.rows_mut(0, nb);
        rb += g.rows(0, nb);
        rhs.rows_mut(t0, 3).copy_from(&g.rows(nb, 3));
    }
    for k in unpenalized_prefix..nb {
        matrix[(k, k)] += ridge_lambda;
    }
    Ok((matrix, rhs, nb))
}

fn solve_spd(matrix: DMatrix<f64>, rhs: &DVector<f64>, ridge_lambda: f64) -> Result<DVector<f64>> {
    let scale = matrix.diagonal().iter().fold(0.0f64, |m, &d| m.max(d.abs()));
    if scale == 0.0 {
        return Err(Error::Singular { lambda: ridge_lambda });
    }
    let chol = Cholesky::new(matrix).ok_or(Error::Singular { lambda: ridge_lambda })?;
    let l = chol.l_dirty();
    let min_pivot = (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if min_pivot < PIVOT_RTOL * scale {
        return Err(Error::Singular { lambda: ridge_lambda });
    }
    Ok(chol.solve(rhs))
}
