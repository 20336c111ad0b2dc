//! Fixed random Fourier features with a ridge-regression readout, used to distill
//! signatures into a smooth closed form.

use nalgebra::{DMatrix, DVector, Matrix3xX, Vector3};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::synth::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct FourierFeatures {
    /// Frequencies, one column per feature (rad/m).
    pub frequencies: Matrix3xX<f64>,
    pub bias: DVector<f64>,
}

impl FourierFeatures {
    pub fn new(frequencies: Matrix3xX<f64>, bias: DVector<f64>) -> Result<Self> {
        if frequencies.ncols() != bias.len() {
            return Err(Error::Dimension(format!(
                "{} frequencies vs {} biases",
                frequencies.ncols(),
                bias.len()
            )));
        }
        Ok(Self { frequencies, bias })
    }

    /// Gaussian frequencies with standard deviation `scale` and uniform phases.
    pub fn random(count: usize, scale: f64, seed: u64) -> Self {
        let mut r = rng(seed);
        let frequencies = Matrix3xX::from_fn(count, |_, _| {
            let g: f64 = StandardNormal.sample(&mut r);
            g * scale
        });
        let bias = DVector::from_fn(count, |_, _| {
            let u: f64 = rand::Rng::random(&mut r);
            u * std::f64::consts::TAU
        });
        Self { frequencies, bias }
    }

    pub fn len(&self) -> usize {
        self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bias.is_empty()
    }

    /// `[sin(Bp + b); cos(Bp + b)]`.
    pub fn features(&self, p: &Vector3<f64>) -> DVector<f64> {
        let f = self.len();
        let mut out = DVector::zeros(2 * f);
        for i in 0..f {
            let arg = self.frequencies.column(i).dot(p) + self.bias[i];
            out[i] = arg.sin();
            out[f + i] = arg.cos();
        }
        out
    }

    /// Feature rows for a batch of points.
    pub fn design(&self, points: &[Vector3<f64>]) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(points.len(), 2 * self.len());
        for (r, p) in points.iter().enumerate() {
            x.row_mut(r).copy_from(&self.features(p).transpose());
        }
        x
    }
}

/// Linear map from features to targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Readout {
    /// `2F × M`.
    pub weights: DMatrix<f64>,
}

impl Readout {
    pub fn predict(&self, features: &DVector<f64>) -> DVector<f64> {
        self.weights.tr_mul(features)
    }
}

/// Minimizes `‖XW − Y‖² / N + ridge ‖W‖²`. The data term is a mean, so repeating the
/// whole sample set leaves the readout unchanged.
pub fn fit_readout(x: &DMatrix<f64>, y: &DMatrix<f64>, ridge: f64) -> Result<Readout> {
    if x.nrows() != y.nrows() {
        return Err(Error::Dimension(format!("{} feature rows vs {} target rows", x.nrows(), y.nrows())));
    }
    if x.nrows() == 0 {
        return Err(Error::InvalidArgument("no samples to fit".into()));
    }
    if !(ridge > 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidArgument(format!("ridge must be positive, got {ridge}")));
    }
    let n = x.nrows() as f64;
    let mut gram = x.tr_mul(x) / n;
    for i in 0..gram.nrows() {
        gram[(i, i)] += ridge;
    }
    let rhs = x.tr_mul(y) / n;
    let chol = gram.cholesky().ok_or(Error::Singular { lambda: ridge })?;
    Ok(Readout { weights: chol.solve(&rhs) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_frequencies_give_constant_features() {
        let ff = FourierFeatures::new(Matrix3xX::zeros(4), DVector::zeros(4)).unwrap();
        let f = ff.features(&Vector3::new(0.3, -2.0, 7.0));
        assert_eq!(f.as_slice(), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn features_are_unit_per_pair() {
        let ff = FourierFeatures::random(16, 3.0, 1);
        let f = ff.features(&Vector3::new(0.1, 0.2, 0.3));
        for i in 0..16 {
            assert!((f[i].powi(2) + f[16 + i].powi(2) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn recovers_an_exact_linear_map() {
        let ff = FourierFeatures::random(8, 2.0, 2);
        let mut r = rng(3);
        let pts: Vec<Vector3<f64>> = (0..200).map(|_| crate::synth::gaussian_vec3(&mut r)).collect();
        let x = ff.design(&pts);
        let w = DMatrix::from_fn(16, 3, |i, j| (i as f64 - 2.0 * j as f64) * 0.1);
        let y = &x * &w;
        let fit = fit_readout(&x, &y, 1e-12).unwrap();
        assert!((fit.weights - w).amax() < 1e-5);
    }

    #[test]
    fn repeated_samples_leave_the_readout_unchanged() {
        let ff = FourierFeatures::random(6, 2.0, 4);
        let mut r = rng(5);
        let pts: Vec<Vector3<f64>> = (0..40).map(|_| crate::synth::gaussian_vec3(&mut r)).collect();
        let x = ff.design(&pts);
        let y = DMatrix::from_fn(40, 2, |i, j| ((i * 7 + j) % 5) as f64);
        let once = fit_readout(&x, &y, 1e-3).unwrap();
        let x2 = DMatrix::from_fn(80, 12, |i, j| x[(i % 40, j)]);
        let y2 = DMatrix::from_fn(80, 2, |i, j| y[(i % 40, j)]);
        let twice = fit_readout(&x2, &y2, 1e-3).unwrap();
        assert!((once.weights - twice.weights).amax() < 1e-10);
    }

    #[test]
    fn rank_deficient_design_still_solves() {
        // identical rows and fewer samples than features
        let ff = FourierFeatures::random(10, 1.0, 6);
        let p = Vector3::new(0.2, 0.4, 0.6);
        let x = ff.design(&[p, p, p]);
        let y = DMatrix::from_element(3, 1, 1.0);
        let fit = fit_readout(&x, &y, 1e-6).unwrap();
        assert!(fit.weights.iter().all(|w| w.is_finite()));
        assert!(fit_readout(&x, &y, 0.0).is_err());
    }
}
