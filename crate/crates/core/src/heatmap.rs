//! Heatmap decoding: soft-argmax in 2D and 3D, softmax-pooled uncertainty, fusion of
//! root-relative 3D with 2D image positions, and the per-point training losses.

use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::array_io::{read_json, write_json, EncodedArray};
use crate::error::{Error, Result};

/// Coordinates of cell centres along one axis: `start + i * step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub start: f64,
    pub step: f64,
}

impl Axis {
    /// Integer pixel centres `0, 1, 2, ...`.
    pub const PIXELS: Axis = Axis { start: 0.0, step: 1.0 };

    /// `n` equal cells spanning `extent`, centred on zero.
    pub fn centered(n: usize, extent: f64) -> Self {
        let step = extent / n as f64;
        Self {
            start: -0.5 * extent + 0.5 * step,
            step,
        }
    }

    pub fn at(&self, i: usize) -> f64 {
        self.start + self.step * i as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2d {
    pub x: Axis,
    pub y: Axis,
}

impl Default for Grid2d {
    fn default() -> Self {
        Self {
            x: Axis::PIXELS,
            y: Axis::PIXELS,
        }
    }
}

/// Metric grid of a root-relative volume heatmap. Columns map to x, rows to y and
/// the last axis to depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid3d {
    pub x: Axis,
    pub y: Axis,
    pub z: Axis,
}

pub const DEFAULT_DEPTH_EXTENT: f64 = 2.2;
pub const DEFAULT_SIGMA_EPSILON: f64 = 1e-4;

impl Grid3d {
    /// Every axis spans `extent` meters centred on the root.
    pub fn cube(h: usize, w: usize, d: usize, extent: f64) -> Self {
        Self {
            x: Axis::centered(w, extent),
            y: Axis::centered(h, extent),
            z: Axis::centered(d, extent),
        }
    }
}

/// Softmax over all entries, stabilised by subtracting the maximum.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Dimension("softmax over an empty heatmap".into()));
    }
    if !logits.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("heatmap logits".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}

fn check_len(name: &str, len: usize, dims: &[usize]) -> Result<()> {
    let expected: usize = dims.iter().product();
    if dims.contains(&0) || len != expected {
        return Err(Error::Dimension(format!(
            "{name} has {len} values, expected {dims:?} with every extent >= 1"
        )));
    }
    Ok(())
}

/// Expected pixel position under the softmax of a row-major `h × w` heatmap.
pub fn soft_argmax_2d(h2d: &[f64], h: usize, w: usize, grid: &Grid2d) -> Result<Vector2<f64>> {
    check_len("2D heatmap", h2d.len(), &[h, w])?;
    let p = softmax(h2d)?;
    let mut out = Vector2::zeros();
    for r in 0..h {
        for c in 0..w {
            let pr = p[r * w + c];
            out.x += pr * grid.x.at(c);
            out.y += pr * grid.y.at(r);
        }
    }
    Ok(out)
}

/// Expected metric position under the softmax of an `h × w × d` volume heatmap,
/// stored with depth fastest.
pub fn soft_argmax_3d(
    h3d: &[f64],
    h: usize,
    w: usize,
    d: usize,
    grid: &Grid3d,
) -> Result<Vector3<f64>> {
    check_len("3D heatmap", h3d.len(), &[h, w, d])?;
    let p = softmax(h3d)?;
    let mut out = Vector3::zeros();
    for r in 0..h {
        for c in 0..w {
            for k in 0..d {
                let pr = p[(r * w + c) * d + k];
                out.x += pr * grid.x.at(c);
                out.y += pr * grid.y.at(r);
                out.z += pr * grid.z.at(k);
            }
        }
    }
    Ok(out)
}

/// `log(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Pools the raw uncertainty map under the 2D softmax, then maps it to a positive scale.
pub fn aggregate_uncertainty(u: &[f64], h2d: &[f64], epsilon: f64) -> Result<f64> {
    if u.len() != h2d.len() {
        return Err(Error::Dimension(format!(
            "uncertainty map has {} values, heatmap has {}",
            u.len(),
            h2d.len()
        )));
    }
    if !u.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("uncertainty map".into()));
    }
    let p = softmax(h2d)?;
    let pooled: f64 = u.iter().zip(&p).map(|(a, b)| a * b).sum();
    Ok(softplus(pooled) + epsilon)
}

/// Places root-relative points in camera space by solving for the translation that
/// puts each point on its pixel's viewing ray. Returns the absolute points and the
/// translation.
pub fn fuse_to_camera(
    p2d: &[Vector2<f64>],
    p3d_rootrel: &[Vector3<f64>],
    intrinsics: &Matrix3<f64>,
) -> Result<(Vec<Vector3<f64>>, Vector3<f64>)> {
    if p2d.len() != p3d_rootrel.len() {
        return Err(Error::Dimension(format!(
            "{} image points vs {} root-relative points",
            p2d.len(),
            p3d_rootrel.len()
        )));
    }
    if p2d.len() < 2 {
        return Err(Error::InvalidArgument("fusion needs at least 2 points".into()));
    }
    let k_inv = intrinsics
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("intrinsics are not invertible".into()))?;
    // each point gives (p + T)ₓ = rₓ (p + T)_z and likewise for y, linear in T
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for (q, p) in p2d.iter().zip(p3d_rootrel) {
        let ray = k_inv * Vector3::new(q.x, q.y, 1.0);
        if ray.z.abs() < f64::EPSILON || !ray.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidArgument("image point maps to a ray parallel to the image plane".into()));
        }
        let (rx, ry) = (ray.x / ray.z, ray.y / ray.z);
        for (row, rhs) in [
            (Vector3::new(1.0, 0.0, -rx), rx * p.z - p.x),
            (Vector3::new(0.0, 1.0, -ry), ry * p.z - p.y),
        ] {
            ata += row * row.transpose();
            atb += row * rhs;
        }
    }
    let eig = ata.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 1e-12 * hi.max(f64::MIN_POSITIVE)) {
        return Err(Error::Degenerate(
            "translation is not determined: all viewing rays coincide".into(),
        ));
    }
    let t = ata
        .cholesky()
        .ok_or_else(|| Error::Degenerate("translation normal equations not positive definite".into()))?
        .solve(&atb);
    Ok((p3d_rootrel.iter().map(|p| p + t).collect(), t))
}

/// Loss value with gradients with respect to the prediction and the scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub value: f64,
    pub grad_pred: Vector3<f64>,
    pub grad_sigma: f64,
}

/// Unsquared Euclidean distance. The gradient at zero error is taken as zero.
pub fn euclidean_loss(pred: &Vector3<f64>, gt: &Vector3<f64>) -> LossTerms {
    let e = pred - gt;
    let n = e.norm();
    LossTerms {
        value: n,
        grad_pred: if n > 0.0 { e / n } else { Vector3::zeros() },
        grad_sigma: 0.0,
    }
}

/// Laplace-style negative log-likelihood `‖e‖/σ + ln σ`, scaled by `σ^β` which is held
/// constant when differentiating. `β = 0` is the plain likelihood; at `β = 1` the
/// prediction gradient equals that of [`euclidean_loss`].
pub fn beta_nll(pred: &Vector3<f64>, sigma: f64, gt: &Vector3<f64>, beta: f64) -> Result<LossTerms> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let e = pred - gt;
    let n = e.norm();
    let scale = sigma.powf(beta);
    let inner_scale = sigma.powf(beta - 1.0);
    Ok(LossTerms {
        value: (n / sigma + sigma.ln()) * scale,
        grad_pred: if n > 0.0 { e / n * inner_scale } else { Vector3::zeros() },
        grad_sigma: inner_scale * (1.0 - n / sigma),
    })
}

/// Decoding settings that are not part of the heatmaps themselves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeGrid {
    pub pixel: Grid2d,
    /// Metric volume grid; when absent each axis spans the default depth extent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume: Option<Grid3d>,
    #[serde(default = "default_epsilon")]
    pub sigma_epsilon: f64,
}

fn default_epsilon() -> f64 {
    DEFAULT_SIGMA_EPSILON
}

impl Default for DecodeGrid {
    fn default() -> Self {
        Self {
            pixel: Grid2d::default(),
            volume: None,
            sigma_epsilon: DEFAULT_SIGMA_EPSILON,
        }
    }
}

/// Heatmaps for `P` points, each `h × w` (and `× D` for the volume).
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    pub points: usize,
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub h3d: Vec<f64>,
    pub h2d: Vec<f64>,
    pub u: Vec<f64>,
}

impl HeatmapStack {
    pub fn new(points: usize, h: usize, w: usize, d: usize, h3d: Vec<f64>, h2d: Vec<f64>, u: Vec<f64>) -> Result<Self> {
        check_len("h3d", h3d.len(), &[points, h, w, d])?;
        check_len("h2d", h2d.len(), &[points, h, w])?;
        check_len("u", u.len(), &[points, h, w])?;
        for (name, v) in [("h3d", &h3d), ("h2d", &h2d), ("u", &u)] {
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite(name.into()));
            }
        }
        Ok(Self { points, h, w, d, h3d, h2d, u })
    }

    pub fn decode(&self, grid: &DecodeGrid) -> Result<Decoded> {
        let plane = self.h * self.w;
        let volume = grid
            .volume
            .unwrap_or_else(|| Grid3d::cube(self.h, self.w, self.d, DEFAULT_DEPTH_EXTENT));
        let mut out = Decoded::default();
        for i in 0..self.points {
            let h2d = &self.h2d[i * plane..(i + 1) * plane];
            let h3d = &self.h3d[i * plane * self.d..(i + 1) * plane * self.d];
            out.points2d.push(soft_argmax_2d(h2d, self.h, self.w, &grid.pixel)?);
            out.points3d.push(soft_argmax_3d(h3d, self.h, self.w, self.d, &volume)?);
            out.sigmas.push(aggregate_uncertainty(&self.u[i * plane..(i + 1) * plane], h2d, grid.sigma_epsilon)?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Decoded {
    pub points2d: Vec<Vector2<f64>>,
    pub points3d: Vec<Vector3<f64>>,
    pub sigmas: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeatmapFile {
    pub h3d: EncodedArray,
    pub h2d: EncodedArray,
    pub u: EncodedArray,
    #[serde(default)]
    pub grid: DecodeGrid,
}

impl HeatmapFile {
    pub fn from_stack(s: &HeatmapStack, grid: DecodeGrid) -> Self {
        let f32s = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<_>>();
        Self {
            h3d: EncodedArray::from_f32(&[s.points, s.h, s.w, s.d], &f32s(&s.h3d)),
            h2d: EncodedArray::from_f32(&[s.points, s.h, s.w], &f32s(&s.h2d)),
            u: EncodedArray::from_f32(&[s.points, s.h, s.w], &f32s(&s.u)),
            grid,
        }
    }

    pub fn into_stack(self) -> Result<(HeatmapStack, DecodeGrid)> {
        let shape = self.h3d.shape.clone();
        if shape.len() != 4 {
            return Err(Error::Parse(format!("h3d must have 4 axes, got shape {shape:?}")));
        }
        let (p, h, w, d) = (shape[0], shape[1], shape[2], shape[3]);
        let plane = [Some(p), Some(h), Some(w)];
        let stack = HeatmapStack::new(
            p,
            h,
            w,
            d,
            self.h3d.to_f64()?,
            self.h2d.to_f64_shaped("h2d", &plane)?,
            self.u.to_f64_shaped("u", &plane)?,
        )?;
        Ok((stack, self.grid))
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Decoder output; camera-space points are present when intrinsics were given.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecodeFile {
    pub points2d: EncodedArray,
    pub points3d_rootrel: EncodedArray,
    pub sigmas: EncodedArray,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points3d_camera: Option<EncodedArray>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_translation: Option<EncodedArray>,
}

impl DecodeFile {
    pub fn new(d: &Decoded, camera: Option<(&[Vector3<f64>], Vector3<f64>)>) -> Self {
        let n = d.points2d.len();
        let flat2: Vec<f64> = d.points2d.iter().flat_map(|p| [p.x, p.y]).collect();
        let flat3 = |v: &[Vector3<f64>]| v.iter().flat_map(|p| [p.x, p.y, p.z]).collect::<Vec<_>>();
        Self {
            points2d: EncodedArray::from_f64(&[n, 2], &flat2),
            points3d_rootrel: EncodedArray::from_f64(&[n, 3], &flat3(&d.points3d)),
            sigmas: EncodedArray::from_f64(&[n], &d.sigmas),
            points3d_camera: camera.map(|(pts, _)| EncodedArray::from_f64(&[n, 3], &flat3(pts))),
            root_translation: camera.map(|(_, t)| EncodedArray::from_f64(&[3], t.as_slice())),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}
