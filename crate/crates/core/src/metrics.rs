//! Evaluation metrics: position errors, Procrustes alignment, rotation angles.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Mean Euclidean distance between corresponding points.
pub fn mean_point_error(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension(format!(
            "{} predicted points vs {} ground-truth points",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("no points to compare".into()));
    }
    Ok(pred.iter().zip(gt).map(|(p, g)| (p - g).norm()).sum::<f64>() / pred.len() as f64)
}

/// Mean per-joint position error.
pub fn mpjpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    mean_point_error(pred, gt)
}

/// Mean per-vertex error.
pub fn mve(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    mean_point_error(pred, gt)
}

/// Similarity transform `x ↦ s R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }
}

/// Least-squares similarity taking `pred` onto `gt` (Umeyama). With fewer than two
/// distinct points only the translation is fitted.
pub fn procrustes_transform(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<Similarity> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension(format!(
            "{} predicted points vs {} ground-truth points",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("no points to align".into()));
    }
    let n = pred.len() as f64;
    let mu_p = pred.iter().sum::<Vector3<f64>>() / n;
    let mu_g = gt.iter().sum::<Vector3<f64>>() / n;
    let var_p = pred.iter().map(|p| (p - mu_p).norm_squared()).sum::<f64>() / n;
    if var_p <= f64::EPSILON * (1.0 + mu_p.norm_squared()) {
        return Ok(Similarity {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: mu_g - mu_p,
        });
    }
    let cov = pred
        .iter()
        .zip(gt)
        .fold(Matrix3::zeros(), |acc, (p, g)| acc + (g - mu_g) * (p - mu_p).transpose())
        / n;
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Vector3::new(1.0, 1.0, 1.0);
    if (u * v_t).determinant() < 0.0 {
        d[2] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&d) * v_t;
    let scale = svd.singular_values.dot(&d) / var_p;
    Ok(Similarity {
        scale,
        rotation,
        translation: mu_g - rotation * mu_p * scale,
    })
}

/// `pred` after similarity alignment to `gt`.
pub fn procrustes_align(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>> {
    let sim = procrustes_transform(pred, gt)?;
    Ok(pred.iter().map(|p| sim.apply(p)).collect())
}

/// Mean point error after Procrustes alignment (the "P-" variants).
pub fn procrustes_error(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    mean_point_error(&procrustes_align(pred, gt)?, gt)
}

/// Angle of the relative rotation `R1ᵀ R2`, in radians.
pub fn geodesic_angle(r1: &Matrix3<f64>, r2: &Matrix3<f64>) -> f64 {
    let rel = r1.transpose() * r2;
    // the skew part keeps precision near 0 where acos of the trace does not
    let skew = Vector3::new(
        rel[(2, 1)] - rel[(1, 2)],
        rel[(0, 2)] - rel[(2, 0)],
        rel[(1, 0)] - rel[(0, 1)],
    );
    let sin = 0.5 * skew.norm();
    let cos = 0.5 * (rel.trace() - 1.0);
    sin.atan2(cos)
}

/// Mean geodesic angle over corresponding rotations.
pub fn mean_angle_error(pred: &[Matrix3<f64>], gt: &[Matrix3<f64>]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Dimension(format!(
            "{} predicted rotations vs {} ground-truth rotations",
            pred.len(),
            gt.len()
        )));
    }
    Ok(pred.iter().zip(gt).map(|(a, b)| geodesic_angle(a, b)).sum::<f64>() / pred.len() as f64)
}
