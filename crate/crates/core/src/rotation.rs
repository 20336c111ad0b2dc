//! Weighted Kabsch / Wahba rotation estimation.

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::error::{Error, Result};

/// Weighted point correspondences between a target and a source cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pub target_points: Vec<Vector3<f64>>,
    pub source_points: Vec<Vector3<f64>>,
    pub weights: Vec<f64>,
}

impl CorrespondenceSet {
    pub fn new(
        target_points: Vec<Vector3<f64>>,
        source_points: Vec<Vector3<f64>>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let set = Self {
            target_points,
            source_points,
            weights,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.target_points.len();
        if self.source_points.len() != n || self.weights.len() != n {
            return Err(Error::Dimension(format!(
                "correspondence lengths differ: {} targets, {} sources, {} weights",
                n,
                self.source_points.len(),
                self.weights.len()
            )));
        }
        if n < 2 {
            return Err(Error::Degenerate(format!("need at least 2 correspondences, got {n}")));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
        }
        if !self.weights.iter().any(|&w| w > 0.0) {
            return Err(Error::Degenerate("all correspondence weights are zero".into()));
        }
        Ok(())
    }
}

/// Mean-centred weighted cross-covariance `Σ w_i (p_i - p̄)(p̃_i - p̃̄)ᵀ / Σ w_i`,
/// with `p` the targets and `p̃` the sources.
pub fn weighted_covariance(c: &CorrespondenceSet) -> Result<Matrix3<f64>> {
    c.validate()?;
    Ok(weighted_covariance_unchecked(
        &c.target_points,
        &c.source_points,
        &c.weights,
    ))
}

pub(crate) fn weighted_covariance_unchecked(
    target: &[Vector3<f64>],
    source: &[Vector3<f64>],
    weights: &[f64],
) -> Matrix3<f64> {
    let total: f64 = weights.iter().sum();
    let mut mean_t = Vector3::zeros();
    let mut mean_s = Vector3::zeros();
    for ((t, s), &w) in target.iter().zip(source).zip(weights) {
        mean_t += t * (w / total);
        mean_s += s * (w / total);
    }
    let mut cov = Matrix3::zeros();
    for ((t, s), &w) in target.iter().zip(source).zip(weights) {
        cov += (t - mean_t) * (s - mean_s).transpose() * (w / total);
    }
    cov
}

/// Uncentred `Σ p_i p̃_iᵀ` of points already expressed relative to their pivots.
pub fn pivot_anchored_covariance(target: &[Vector3<f64>], source: &[Vector3<f64>]) -> Matrix3<f64> {
    target
        .iter()
        .zip(source)
        .fold(Matrix3::zeros(), |acc, (t, s)| acc + t * s.transpose())
}

/// Weighted variant of [`pivot_anchored_covariance`].
pub fn weighted_pivot_anchored_covariance(
    target: &[Vector3<f64>],
    source: &[Vector3<f64>],
    weights: &[f64],
) -> Matrix3<f64> {
    target
        .iter()
        .zip(source)
        .zip(weights)
        .fold(Matrix3::zeros(), |acc, ((t, s), &w)| acc + t * s.transpose() * w)
}

/// Nearest rotation in the Frobenius sense: `U diag(1, 1, det(UVᵀ)) Vᵀ`, which
/// maximises `trace(Rᵀ M)` over SO(3). Rank-deficient input still yields a rotation;
/// the free direction follows the SVD's ordering of singular vectors.
pub fn project_to_so3(m: &Matrix3<f64>) -> Matrix3<f64> {
    if !m.iter().all(|x| x.is_finite()) {
        return Matrix3::identity();
    }
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd computes U");
    let v_t = svd.v_t.expect("svd computes Vᵀ");
    let mut d = Matrix3::identity();
    // singular values come sorted descending, so the sign fix hits the weakest axis
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let mut r = u * d * v_t;
    // The SVD resolves weak directions poorly when one singular value dominates, as
    // with joint-dominated covariances. Newton steps on trace(Rᵀ M), kept only while
    // they increase the objective, recover the accuracy the input supports.
    // near the optimum the gain drops below the rounding of the trace itself
    let slack = 16.0 * f64::EPSILON * m.abs().sum();
    let mut score = (r.transpose() * m).trace();
    for _ in 0..8 {
        let Some(next) = newton_step(&r, m) else { break };
        let next_score = (next.transpose() * m).trace();
        if !(next_score >= score - slack) {
            break;
        }
        let moved = (next - r).abs().max();
        r = next;
        score = score.max(next_score);
        if moved < 1e-14 {
            break;
        }
    }
    r + r * (Matrix3::identity() - r.transpose() * r) * 0.5
}

/// One Newton step for `max trace(Rᵀ M)` over `R · exp([ω]ₓ)`.
fn newton_step(r: &Matrix3<f64>, m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let s = r.transpose() * m;
    let grad = Vector3::new(s[(2, 1)] - s[(1, 2)], s[(0, 2)] - s[(2, 0)], s[(1, 0)] - s[(0, 1)]);
    if grad == Vector3::zeros() {
        return None;
    }
    let hess = Matrix3::identity() * s.trace() - (s + s.transpose()) * 0.5;
    let omega = hess.cholesky()?.solve(&grad);
    if !omega.iter().all(|x| x.is_finite()) {
        return None;
    }
    Some(r * Rotation3::new(omega).into_inner())
}

/// Rotation mapping `source` onto `target` in the weighted least-squares sense.
pub fn kabsch(c: &CorrespondenceSet) -> Result<Matrix3<f64>> {
    Ok(project_to_so3(&weighted_covariance(c)?))
}
