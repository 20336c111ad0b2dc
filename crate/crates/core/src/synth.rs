//! Seeded generators for synthetic poses and fitting targets.

use nalgebra::{DVector, Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::body_model::{BodyModel, PoseParams};
use crate::fitter::FitTarget;

pub type SynthRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SynthRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec3<R: Rng>(rng: &mut R) -> Vector3<f64> {
    Vector3::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    )
}

pub fn random_unit_vector<R: Rng>(rng: &mut R) -> Unit<Vector3<f64>> {
    loop {
        let v = gaussian_vec3(rng);
        if v.norm() > 1e-9 {
            return Unit::new_normalize(v);
        }
    }
}

/// Rotation about a uniformly random axis by an angle uniform in `[0, max_angle]`.
pub fn random_rotation<R: Rng>(rng: &mut R, max_angle: f64) -> Matrix3<f64> {
    let axis = random_unit_vector(rng);
    let angle = rng.random::<f64>() * max_angle;
    Rotation3::from_axis_angle(&axis, angle).into_inner()
}

/// Rotation drawn uniformly from SO(3).
pub fn uniform_rotation<R: Rng>(rng: &mut R) -> Matrix3<f64> {
    let q = nalgebra::Quaternion::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    );
    nalgebra::UnitQuaternion::from_quaternion(q)
        .to_rotation_matrix()
        .into_inner()
}

/// Random pose: independent global part rotations within `max_angle` of identity,
/// shape uniform in the ball of radius `max_beta_norm`, translation uniform in
/// `[-max_translation, max_translation]³`.
pub fn random_pose<R: Rng>(
    model: &BodyModel,
    rng: &mut R,
    max_angle: f64,
    max_beta_norm: f64,
    max_translation: f64,
) -> PoseParams {
    let rotations = (0..model.num_parts())
        .map(|_| random_rotation(rng, max_angle))
        .collect();
    let nb = model.num_betas();
    let dir = DVector::from_fn(nb, |_, _| StandardNormal.sample(rng));
    let radius = max_beta_norm * rng.random::<f64>().powf(1.0 / nb.max(1) as f64);
    let beta = if dir.norm() > 0.0 {
        dir.normalize() * radius
    } else {
        dir
    };
    let translation = Vector3::from_fn(|_, _| (2.0 * rng.random::<f64>() - 1.0) * max_translation);
    PoseParams {
        rotations,
        beta,
        translation,
    }
}

/// Posed target with isotropic Gaussian noise of standard deviation `noise` on every point.
pub fn synth_target<R: Rng>(
    model: &BodyModel,
    pose: &PoseParams,
    noise: f64,
    rng: &mut R,
) -> FitTarget {
    let posed = model.forward(pose).expect("pose matches model");
    let jitter = |p: &Vector3<f64>, rng: &mut R| {
        if noise > 0.0 {
            p + gaussian_vec3(rng) * noise
        } else {
            *p
        }
    };
    let vertices = posed.vertices.iter().map(|p| jitter(p, rng)).collect();
    let joints = posed.joints.iter().map(|p| jitter(p, rng)).collect();
    FitTarget::new(vertices, joints)
}

/// Target with per-point noise scales `σ` drawn log-uniformly from `[lo, hi]`
/// (vertices then joints). Each point gets isotropic noise of its own scale and the
/// scales are attached as the target's sigmas.
pub fn synth_heteroscedastic_target<R: Rng>(
    model: &BodyModel,
    pose: &PoseParams,
    lo: f64,
    hi: f64,
    rng: &mut R,
) -> FitTarget {
    let posed = model.forward(pose).expect("pose matches model");
    let nv = posed.vertices.len();
    let n = nv + posed.joints.len();
    let (a, b) = (lo.ln(), hi.ln());
    let sigmas: Vec<f64> = (0..n).map(|_| (a + (b - a) * rng.random::<f64>()).exp()).collect();
    let noisy: Vec<Vector3<f64>> = posed
        .vertices
        .iter()
        .chain(&posed.joints)
        .zip(&sigmas)
        .map(|(p, s)| p + gaussian_vec3(rng) * *s)
        .collect();
    FitTarget::new(noisy[..nv].to_vec(), noisy[nv..].to_vec()).with_sigmas(sigmas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::geodesic_angle;
    use crate::toy::make_toy_model;

    #[test]
    fn rotations_respect_the_angle_bound() {
        let mut r = rng(1);
        for _ in 0..200 {
            let q = random_rotation(&mut r, 0.5);
            assert!(geodesic_angle(&Matrix3::identity(), &q) <= 0.5 + 1e-12);
            assert!((q.transpose() * q - Matrix3::identity()).amax() < 1e-12);
        }
    }

    #[test]
    fn poses_are_seeded_and_bounded() {
        let m = make_toy_model(0, 120, 6, 4).unwrap();
        let a = random_pose(&m, &mut rng(2), 1.0, 2.0, 0.5);
        let b = random_pose(&m, &mut rng(2), 1.0, 2.0, 0.5);
        assert_eq!(a, b);
        assert!(a.beta.norm() <= 2.0);
        assert!(a.translation.amax() <= 0.5);
    }

    #[test]
    fn heteroscedastic_sigmas_stay_in_range() {
        let m = make_toy_model(0, 120, 6, 4).unwrap();
        let mut r = rng(3);
        let pose = random_pose(&m, &mut r, 1.0, 1.0, 0.0);
        let t = synth_heteroscedastic_target(&m, &pose, 0.002, 0.03, &mut r);
        let s = t.sigmas.as_ref().unwrap();
        assert_eq!(s.len(), 126);
        assert!(s.iter().all(|&x| (0.002..=0.03).contains(&x)));
        let clean = synth_target(&m, &pose, 0.0, &mut r);
        let worst = t.vertices.iter().zip(&clean.vertices).zip(s).map(|((a, b), s)| (a - b).norm() / s).fold(0.0, f64::max);
        assert!(worst < 8.0);
    }
}
