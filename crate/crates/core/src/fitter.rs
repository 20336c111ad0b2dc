//! Fitting the body model to nonparametric vertex and joint estimates.
//!
//! Starting from the mean-shaped T-pose, each iteration
//! 1. fits every part's global rotation independently with a weighted Kabsch step,
//!    where vertices get weight `α` and joints `1 - α`, and
//! 2. solves the shape coefficients and translation by ridge least squares, which is
//!    exact because the posed model is affine in `(β, t)` for fixed rotations.
//!
//! A final pass walks the kinematic tree and re-fits each part's rotation anchored
//! at its joint, whose position is propagated from the already refined parent.

use std::path::Path;

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::array_io::{read_json, write_json, EncodedArray};
use crate::body_model::{check_indices, vec3_flat, vec3_unflat, BodyModel, PoseParams};
use crate::error::{Error, Result};
use crate::rotation::{project_to_so3, weighted_covariance_unchecked, weighted_pivot_anchored_covariance};
use crate::shape_solver::{solve_shared_beta_t, ShapeBlock, ShapeSolveConfig};

/// Target points to fit. Vertices may cover only part of the mesh, in which case
/// `vertex_indices` names the model vertex of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct FitTarget {
    pub vertices: Vec<Vector3<f64>>,
    pub vertex_indices: Option<Vec<usize>>,
    pub joints: Vec<Vector3<f64>>,
    /// Per-point uncertainties for `[vertices; joints]`, meters.
    pub sigmas: Option<Vec<f64>>,
}

impl FitTarget {
    pub fn new(vertices: Vec<Vector3<f64>>, joints: Vec<Vector3<f64>>) -> Self {
        Self {
            vertices,
            vertex_indices: None,
            joints,
            sigmas: None,
        }
    }

    pub fn with_sigmas(mut self, sigmas: Vec<f64>) -> Self {
        self.sigmas = Some(sigmas);
        self
    }

    /// Keeps only the listed model vertices.
    pub fn restricted(&self, indices: &[usize]) -> Result<Self> {
        let rows = self.rows_for(indices)?;
        Ok(Self {
            vertices: rows.iter().map(|&r| self.vertices[r]).collect(),
            vertex_indices: Some(indices.to_vec()),
            joints: self.joints.clone(),
            sigmas: self.sigmas.as_ref().map(|s| {
                rows.iter()
                    .map(|&r| s[r])
                    .chain(s[self.vertices.len()..].iter().copied())
                    .collect()
            }),
        })
    }

    /// Target row holding each requested model vertex.
    fn rows_for(&self, model_indices: &[usize]) -> Result<Vec<usize>> {
        match &self.vertex_indices {
            None => {
                check_indices(model_indices, self.vertices.len())?;
                Ok(model_indices.to_vec())
            }
            Some(idx) => {
                let mut lookup = std::collections::HashMap::with_capacity(idx.len());
                for (row, &v) in idx.iter().enumerate() {
                    lookup.insert(v, row);
                }
                model_indices
                    .iter()
                    .map(|v| {
                        lookup.get(v).copied().ok_or_else(|| {
                            Error::InvalidArgument(format!("target has no data for vertex {v}"))
                        })
                    })
                    .collect()
            }
        }
    }

    /// Model vertex index of every target row.
    fn model_indices(&self) -> Vec<usize> {
        match &self.vertex_indices {
            Some(idx) => idx.clone(),
            None => (0..self.vertices.len()).collect(),
        }
    }

    fn validate(&self, model: &BodyModel) -> Result<()> {
        if self.joints.len() != model.num_joints() {
            return Err(Error::Dimension(format!(
                "target has {} joints, model has {}",
                self.joints.len(),
                model.num_joints()
            )));
        }
        match &self.vertex_indices {
            None if self.vertices.len() != model.num_vertices() => {
                return Err(Error::Dimension(format!(
                    "target has {} vertices but no index list; model has {}",
                    self.vertices.len(),
                    model.num_vertices()
                )))
            }
            None => {}
            Some(idx) => {
                if idx.len() != self.vertices.len() {
                    return Err(Error::Dimension(format!(
                        "{} vertex indices for {} target vertices",
                        idx.len(),
                        self.vertices.len()
                    )));
                }
                check_indices(idx, model.num_vertices())?;
                let mut seen = vec![false; model.num_vertices()];
                for &v in idx {
                    if std::mem::replace(&mut seen[v], true) {
                        return Err(Error::InvalidArgument(format!("vertex index {v} repeated")));
                    }
                }
            }
        }
        if self
            .vertices
            .iter()
            .chain(&self.joints)
            .any(|p| !p.iter().all(|x| x.is_finite()))
        {
            return Err(Error::NonFinite("fit target points".into()));
        }
        if let Some(s) = &self.sigmas {
            if s.len() != self.vertices.len() + self.joints.len() {
                return Err(Error::Dimension(format!(
                    "{} sigmas for {} target points",
                    s.len(),
                    self.vertices.len() + self.joints.len()
                )));
            }
            if s.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::InvalidArgument("sigmas must be finite and positive".into()));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f: TargetFile = read_json(path)?;
        f.into_target()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, &TargetFile::from_target(self))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub n_iters: usize,
    pub vertex_weight_alpha: f64,
    pub shape: ShapeSolveConfig,
    pub vertex_subset: Option<Vec<usize>>,
    pub use_uncertainty_weights: bool,
    pub uncertainty_exponent: f64,
    /// Whether uncertainty weights also enter the kinematic-tree refinement.
    pub uncertainty_in_refinement: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_iters: 3,
            vertex_weight_alpha: 1e-6,
            shape: ShapeSolveConfig::default(),
            vertex_subset: None,
            use_uncertainty_weights: false,
            uncertainty_exponent: 1.5,
            uncertainty_in_refinement: true,
        }
    }
}

impl FitConfig {
    /// Model-transfer setting: clean inputs, no shape ridge, one iteration, 4096 vertices.
    pub fn transfer(model: &BodyModel) -> Self {
        Self {
            n_iters: 1,
            shape: ShapeSolveConfig {
                ridge_lambda: 0.0,
                ..ShapeSolveConfig::default()
            },
            vertex_subset: Some(stratified_subset(model, 4096.min(model.num_vertices()))),
            ..Self::default()
        }
    }

    fn validate(&self, model: &BodyModel) -> Result<()> {
        if self.n_iters < 1 {
            return Err(Error::InvalidArgument("n_iters must be at least 1".into()));
        }
        if !(self.vertex_weight_alpha > 0.0 && self.vertex_weight_alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "vertex_weight_alpha must lie in (0, 1), got {}",
                self.vertex_weight_alpha
            )));
        }
        if self.shape.unpenalized_prefix > model.num_betas() {
            return Err(Error::InvalidArgument(format!(
                "unpenalized_prefix {} exceeds the model's {} shape components",
                self.shape.unpenalized_prefix,
                model.num_betas()
            )));
        }
        if !self.uncertainty_exponent.is_finite() {
            return Err(Error::InvalidArgument("uncertainty_exponent must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub pose: PoseParams,
    /// Vertex RMSE over the fitted vertices after each iteration's shape step.
    pub per_iteration_vertex_rmse: Vec<f64>,
    /// Joint RMSE right before the kinematic-tree refinement.
    pub pre_refinement_joint_rmse: f64,
    /// Vertex RMSE over every vertex the target provides, after refinement.
    pub final_vertex_rmse: f64,
    pub final_joint_rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharedFitResult {
    pub beta: DVector<f64>,
    /// One result per target; each pose carries the shared `beta`.
    pub fits: Vec<FitResult>,
}

pub fn fit(model: &BodyModel, target: &FitTarget, cfg: &FitConfig) -> Result<FitResult> {
    let mut out = run(model, std::slice::from_ref(target), cfg)?;
    Ok(out.fits.pop().unwrap())
}

/// Fits several observations of one person with a single shape vector.
pub fn fit_shared_beta(
    model: &BodyModel,
    targets: &[FitTarget],
    cfg: &FitConfig,
) -> Result<SharedFitResult> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument("shared-shape fitting needs at least one target".into()));
    }
    run(model, targets, cfg)
}

/// Fits to a vertex subset; all joints are still used and the reported final RMSE
/// covers every vertex present in the target.
pub fn fit_subset(
    model: &BodyModel,
    target: &FitTarget,
    subset: &[usize],
    cfg: &FitConfig,
) -> Result<FitResult> {
    let cfg = FitConfig {
        vertex_subset: Some(subset.to_vec()),
        ..cfg.clone()
    };
    fit(model, target, &cfg)
}

/// Picks `count` vertices spread evenly within each body part, with per-part quotas
/// proportional to part size. Result is sorted.
pub fn stratified_subset(model: &BodyModel, count: usize) -> Vec<usize> {
    let nv = model.num_vertices();
    let count = count.min(nv);
    let sizes: Vec<usize> = (0..model.num_parts())
        .map(|k| model.part_vertices(k).len())
        .collect();
    let quotas: Vec<f64> = sizes
        .iter()
        .map(|&s| s as f64 * count as f64 / nv as f64)
        .collect();
    let mut take: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<(usize, f64)> = quotas.iter().map(|q| q - q.floor()).enumerate().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut missing = count - take.iter().sum::<usize>();
    for (k, _) in order {
        if missing == 0 {
            break;
        }
        if take[k] < sizes[k] {
            take[k] += 1;
            missing -= 1;
        }
    }
    let mut out = Vec::with_capacity(count);
    for k in 0..model.num_parts() {
        let verts = model.part_vertices(k);
        let n = take[k];
        for i in 0..n {
            // centre of the i-th of n equal strata
            let pos = ((2 * i + 1) * verts.len()) / (2 * n);
            out.push(verts[pos]);
        }
    }
    out.sort_unstable();
    out
}

/// Per-target fixed data: which points take part and with what weight.
struct Problem {
    fit_vertices: Vec<usize>,
    /// Target points stacked as `[fit vertices; joints]`.
    target_points: Vec<Vector3<f64>>,
    /// Uncertainty factors per stacked point, mean 1 (all ones when unweighted).
    uncertainty: Vec<f64>,
    weighted: bool,
    /// Stacked point indices per part.
    part_points: Vec<Vec<usize>>,
    /// Model index and target row of every vertex for the final report.
    report_vertices: Vec<usize>,
    report_targets: Vec<Vector3<f64>>,
}

impl Problem {
    fn new(model: &BodyModel, target: &FitTarget, cfg: &FitConfig) -> Result<Self> {
        target.validate(model)?;
        let fit_vertices = match &cfg.vertex_subset {
            Some(s) => {
                check_indices(s, model.num_vertices())?;
                s.clone()
            }
            None => target.model_indices(),
        };
        let rows = target.rows_for(&fit_vertices)?;
        let n_fit = fit_vertices.len();
        let mut target_points: Vec<Vector3<f64>> = rows.iter().map(|&r| target.vertices[r]).collect();
        target_points.extend_from_slice(&target.joints);

        let weighted = cfg.use_uncertainty_weights && target.sigmas.is_some();
        let uncertainty = match (&target.sigmas, weighted) {
            (Some(s), true) => {
                let nvt = target.vertices.len();
                let raw: Vec<f64> = rows
                    .iter()
                    .map(|&r| s[r])
                    .chain(s[nvt..].iter().copied())
                    .map(|sigma| sigma.powf(-cfg.uncertainty_exponent))
                    .collect();
                let mean = raw.iter().sum::<f64>() / raw.len() as f64;
                raw.into_iter().map(|u| u / mean).collect()
            }
            _ => vec![1.0; target_points.len()],
        };

        let mut part_points = vec![Vec::new(); model.num_parts()];
        for (i, &v) in fit_vertices.iter().enumerate() {
            part_points[model.part_vertex_index()[v]].push(i);
        }
        for (k, joints) in model.part_joints().iter().enumerate() {
            part_points[k].extend(joints.iter().map(|&j| n_fit + j));
        }
        check_parts_well_posed(model, &fit_vertices, &part_points)?;

        Ok(Self {
            fit_vertices,
            target_points,
            uncertainty,
            weighted,
            part_points,
            report_vertices: target.model_indices(),
            report_targets: target.vertices.clone(),
        })
    }

    fn n_fit(&self) -> usize {
        self.fit_vertices.len()
    }
}

/// Every part needs three non-collinear rest-pose points, otherwise its rotation
/// is not determined.
fn check_parts_well_posed(
    model: &BodyModel,
    fit_vertices: &[usize],
    part_points: &[Vec<usize>],
) -> Result<()> {
    let n_fit = fit_vertices.len();
    for (k, pts) in part_points.iter().enumerate() {
        let rest: Vec<Vector3<f64>> = pts
            .iter()
            .map(|&i| {
                if i < n_fit {
                    model.template_vertices()[fit_vertices[i]]
                } else {
                    model.rest_joints()[i - n_fit]
                }
            })
            .collect();
        let ok = rest.len() >= 3 && {
            let mean = rest.iter().sum::<Vector3<f64>>() / rest.len() as f64;
            let scatter = rest
                .iter()
                .fold(Matrix3::zeros(), |acc, p| acc + (p - mean) * (p - mean).transpose());
            let mut ev: Vec<f64> = scatter.symmetric_eigenvalues().iter().copied().collect();
            ev.sort_by(|a, b| b.total_cmp(a));
            ev[0] > 0.0 && ev[1] > 1e-10 * ev[0]
        };
        if !ok {
            return Err(Error::Degenerate(format!(
                "body part {k} has fewer than 3 non-collinear points to fit ({} points)",
                rest.len()
            )));
        }
    }
    Ok(())
}

struct State {
    pose: PoseParams,
    /// Current fit stacked like `Problem::target_points`.
    fit_points: Vec<Vector3<f64>>,
}

fn pose_points(model: &BodyModel, prob: &Problem, pose: &PoseParams) -> Result<Vec<Vector3<f64>>> {
    let posed = model.forward_rows(pose, Some(&prob.fit_vertices))?;
    let mut pts = posed.vertices;
    pts.extend(posed.joints);
    Ok(pts)
}

fn rmse(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    (a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum::<f64>() / a.len() as f64).sqrt()
}

fn run(model: &BodyModel, targets: &[FitTarget], cfg: &FitConfig) -> Result<SharedFitResult> {
    cfg.validate(model)?;
    let problems = targets
        .iter()
        .map(|t| Problem::new(model, t, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut states = problems
        .iter()
        .map(|p| {
            let pose = PoseParams::rest(model);
            let fit_points = pose_points(model, p, &pose)?;
            Ok(State { pose, fit_points })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut curves = vec![Vec::with_capacity(cfg.n_iters); targets.len()];

    for _ in 0..cfg.n_iters {
        for (prob, state) in problems.iter().zip(states.iter_mut()) {
            rotation_step(model, prob, state, cfg.vertex_weight_alpha)?;
        }
        shape_step(model, &problems, &mut states, &cfg.shape)?;
        for ((prob, state), curve) in problems.iter().zip(&states).zip(curves.iter_mut()) {
            let n = prob.n_fit();
            curve.push(rmse(&state.fit_points[..n], &prob.target_points[..n]));
        }
    }

    let mut fits = Vec::with_capacity(targets.len());
    for ((prob, mut state), curve) in problems.iter().zip(states).zip(curves) {
        let n = prob.n_fit();
        let pre_refinement_joint_rmse = rmse(&state.fit_points[n..], &prob.target_points[n..]);
        refine_along_tree(model, prob, &mut state, cfg.uncertainty_in_refinement)?;

        let posed = model.forward_rows(&state.pose, Some(&prob.report_vertices))?;
        fits.push(FitResult {
            final_vertex_rmse: rmse(&posed.vertices, &prob.report_targets),
            final_joint_rmse: rmse(&posed.joints, &prob.target_points[n..]),
            pre_refinement_joint_rmse,
            per_iteration_vertex_rmse: curve,
            pose: state.pose,
        });
    }
    let beta = fits[0].pose.beta.clone();
    Ok(SharedFitResult { beta, fits })
}

/// Independent weighted Kabsch per part, composed onto the current rotation.
fn rotation_step(model: &BodyModel, prob: &Problem, state: &mut State, alpha: f64) -> Result<()> {
    let n_fit = prob.n_fit();
    let mut tgt = Vec::new();
    let mut src = Vec::new();
    let mut w = Vec::new();
    for (k, pts) in prob.part_points.iter().enumerate() {
        tgt.clear();
        src.clear();
        w.clear();
        for &i in pts {
            tgt.push(prob.target_points[i]);
            src.push(state.fit_points[i]);
            let base = if i < n_fit { alpha } else { 1.0 - alpha };
            w.push(base * prob.uncertainty[i]);
        }
        if !w.iter().any(|&x| x > 0.0) {
            return Err(Error::Degenerate(format!("body part {k} has zero total weight")));
        }
        let cov = weighted_covariance_unchecked(&tgt, &src, &w);
        let delta = project_to_so3(&cov);
        state.pose.rotations[k] = project_to_so3(&(delta * state.pose.rotations[k]));
    }
    state.fit_points = pose_points(model, prob, &state.pose)?;
    Ok(())
}

/// Solves `(β, t)` against the shape-free posed model so that the ridge acts on the
/// absolute shape vector.
fn shape_step(
    model: &BodyModel,
    problems: &[Problem],
    states: &mut [State],
    shape: &ShapeSolveConfig,
) -> Result<()> {
    let nb = model.num_betas();
    let mut jacobians = Vec::with_capacity(problems.len());
    let mut residuals = Vec::with_capacity(problems.len());
    for (prob, state) in problems.iter().zip(states.iter()) {
        let jac = model.shape_jacobian_rows(&state.pose.rotations, Some(&prob.fit_vertices))?;
        let mut x = DVector::zeros(nb + 3);
        x.rows_mut(0, nb).copy_from(&state.pose.beta);
        x.rows_mut(nb, 3).copy_from(&state.pose.translation);
        // P - P̃(0, 0) = (P - P̃(β, t)) + J [β; t]
        let mut r = &jac * x;
        for (i, (p, q)) in prob.target_points.iter().zip(&state.fit_points).enumerate() {
            for c in 0..3 {
                r[3 * i + c] += p[c] - q[c];
            }
        }
        jacobians.push(jac);
        residuals.push(r);
    }
    let weights: Vec<Option<Vec<f64>>> = problems
        .iter()
        .map(|p| {
            if p.weighted {
                Some(p.uncertainty.clone())
            } else {
                shape.point_weights.clone()
            }
        })
        .collect();
    let blocks: Vec<ShapeBlock<'_>> = jacobians
        .iter()
        .zip(&residuals)
        .zip(&weights)
        .map(|((j, r), w)| ShapeBlock {
            jacobian: j,
            residual: r,
            point_weights: w.as_deref(),
        })
        .collect();
    // The ridge is defined against a fit to the whole model, so a fit on fewer points
    // gets proportionally less of it and keeps the same data-to-prior balance.
    let total = (model.num_vertices() + model.num_joints()) as f64;
    let coverage = problems
        .iter()
        .map(|p| p.target_points.len() as f64 / total)
        .sum::<f64>()
        / problems.len() as f64;
    let (beta, ts) =
        solve_shared_beta_t(&blocks, shape.ridge_lambda * coverage, shape.unpenalized_prefix)?;
    for ((prob, state), t) in problems.iter().zip(states.iter_mut()).zip(ts) {
        state.pose.beta = beta.clone();
        state.pose.translation = t;
        state.fit_points = pose_points(model, prob, &state.pose)?;
    }
    Ok(())
}

/// Sequential re-fit along the tree, anchoring part `k` at its joint. Vertices and
/// joints weigh equally here.
fn refine_along_tree(
    model: &BodyModel,
    prob: &Problem,
    state: &mut State,
    use_uncertainty: bool,
) -> Result<()> {
    let n_fit = prob.n_fit();
    let rest = model.shaped_joints(&state.pose.beta);
    let old_joints: Vec<Vector3<f64>> = state.fit_points[n_fit..].to_vec();
    let mut new_joints: Vec<Vector3<f64>> = Vec::with_capacity(model.num_joints());
    let mut tgt = Vec::new();
    let mut src = Vec::new();
    let mut w = Vec::new();
    for k in 0..model.num_parts() {
        let pivot = match model.parent()[k] {
            None => old_joints[k],
            Some(p) => new_joints[p] + state.pose.rotations[p] * (rest[k] - rest[p]),
        };
        new_joints.push(pivot);
        tgt.clear();
        src.clear();
        w.clear();
        for &i in &prob.part_points[k] {
            tgt.push(prob.target_points[i] - pivot);
            src.push(state.fit_points[i] - old_joints[k]);
            w.push(if use_uncertainty { prob.uncertainty[i] } else { 1.0 });
        }
        let cov = weighted_pivot_anchored_covariance(&tgt, &src, &w);
        let delta = project_to_so3(&cov);
        state.pose.rotations[k] = project_to_so3(&(delta * state.pose.rotations[k]));
    }
    state.fit_points = pose_points(model, prob, &state.pose)?;
    Ok(())
}

/// On-disk fit target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetFile {
    pub vertices: EncodedArray,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertex_indices: Option<EncodedArray>,
    pub joints: EncodedArray,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigmas: Option<EncodedArray>,
}

impl TargetFile {
    pub fn from_target(t: &FitTarget) -> Self {
        Self {
            vertices: EncodedArray::from_f64(&[t.vertices.len(), 3], &vec3_flat(&t.vertices)),
            vertex_indices: t.vertex_indices.as_ref().map(|idx| {
                let v: Vec<i64> = idx.iter().map(|&i| i as i64).collect();
                EncodedArray::from_i64(&[v.len()], &v)
            }),
            joints: EncodedArray::from_f64(&[t.joints.len(), 3], &vec3_flat(&t.joints)),
            sigmas: t
                .sigmas
                .as_ref()
                .map(|s| EncodedArray::from_f64(&[s.len()], s)),
        }
    }

    pub fn into_target(self) -> Result<FitTarget> {
        let vertices = vec3_unflat(&self.vertices.to_f64_shaped("vertices", &[None, Some(3)])?);
        let joints = vec3_unflat(&self.joints.to_f64_shaped("joints", &[None, Some(3)])?);
        let vertex_indices = self
            .vertex_indices
            .map(|a| {
                crate::array_io::check_shape("vertex_indices", &a.shape, &[Some(vertices.len())])?;
                a.to_i64()?
                    .into_iter()
                    .map(|i| {
                        usize::try_from(i)
                            .map_err(|_| Error::Parse(format!("negative vertex index {i}")))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        let sigmas = self
            .sigmas
            .map(|a| a.to_f64_shaped("sigmas", &[Some(vertices.len() + joints.len())]))
            .transpose()?;
        Ok(FitTarget {
            vertices,
            vertex_indices,
            joints,
            sigmas,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub per_iteration_vertex_rmse: Vec<f64>,
    pub final_vertex_rmse: f64,
    pub final_joint_rmse: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
}

/// On-disk pose, used both for fit results and for synthetic ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultFile {
    pub rotations: EncodedArray,
    pub rotations_parent_relative: EncodedArray,
    pub beta: EncodedArray,
    pub translation: EncodedArray,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
}

fn rotations_flat(rs: &[Matrix3<f64>]) -> Vec<f64> {
    rs.iter()
        .flat_map(|r| (0..3).flat_map(move |i| (0..3).map(move |j| r[(i, j)])))
        .collect()
}

impl ResultFile {
    pub fn from_pose(model: &BodyModel, pose: &PoseParams, diagnostics: Option<Diagnostics>) -> Self {
        let n = pose.rotations.len();
        Self {
            rotations: EncodedArray::from_f64(&[n, 3, 3], &rotations_flat(&pose.rotations)),
            rotations_parent_relative: EncodedArray::from_f64(
                &[n, 3, 3],
                &rotations_flat(&model.to_parent_relative(&pose.rotations)),
            ),
            beta: EncodedArray::from_f64(&[pose.beta.len()], pose.beta.as_slice()),
            translation: EncodedArray::from_f64(&[3], pose.translation.as_slice()),
            diagnostics,
        }
    }

    pub fn from_fit(model: &BodyModel, fit: &FitResult, wall_time_ms: Option<f64>) -> Self {
        Self::from_pose(
            model,
            &fit.pose,
            Some(Diagnostics {
                per_iteration_vertex_rmse: fit.per_iteration_vertex_rmse.clone(),
                final_vertex_rmse: fit.final_vertex_rmse,
                final_joint_rmse: fit.final_joint_rmse,
                wall_time_ms,
            }),
        )
    }

    pub fn pose(&self) -> Result<PoseParams> {
        let rot = self.rotations.to_f64_shaped("rotations", &[None, Some(3), Some(3)])?;
        let rotations = rot
            .chunks_exact(9)
            .map(|c| Matrix3::from_row_slice(c))
            .collect();
        let beta = DVector::from_vec(self.beta.to_f64_shaped("beta", &[None])?);
        let t = self.translation.to_f64_shaped("translation", &[Some(3)])?;
        Ok(PoseParams {
            rotations,
            beta,
            translation: Vector3::new(t[0], t[1], t[2]),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::geodesic_angle;
    use crate::synth::{random_pose, rng, synth_target};
    use crate::toy::make_toy_model;

    fn model() -> BodyModel {
        make_toy_model(0, 602, 16, 10).unwrap()
    }

    fn unregularised() -> FitConfig {
        FitConfig {
            shape: ShapeSolveConfig {
                ridge_lambda: 0.0,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn rest_pose_target_is_a_fixed_point() {
        let m = model();
        let posed = m.forward(&PoseParams::rest(&m)).unwrap();
        let target = FitTarget::new(posed.vertices, posed.joints);
        let cfg = FitConfig {
            n_iters: 1,
            ..unregularised()
        };
        let res = fit(&m, &target, &cfg).unwrap();
        for r in &res.pose.rotations {
            let a = geodesic_angle(r, &Matrix3::identity()); assert!(a < 1e-9, "{a} {:?}", res.pose.rotations.iter().map(|r| geodesic_angle(r, &Matrix3::identity())).collect::<Vec<_>>());
        }
        assert!(res.pose.beta.norm() < 1e-9);
        assert!(res.pose.translation.norm() < 1e-9);
    }

    #[test]
    fn recovers_random_pose() {
        let m = model();
        let mut r = rng(11);
        for _ in 0..5 {
            let pose = random_pose(&m, &mut r, std::f64::consts::FRAC_PI_3, 2.0, 1.0);
            let target = synth_target(&m, &pose, 0.0, &mut r);
            let res = fit(&m, &target, &unregularised()).unwrap();
            assert!(res.final_vertex_rmse < 1e-3, "rmse {}", res.final_vertex_rmse);
            assert!(res.pose.rotations_valid(1e-9));
        }
    }

    #[test]
    fn nan_target_is_rejected() {
        let m = model();
        let posed = m.forward(&PoseParams::rest(&m)).unwrap();
        let mut target = FitTarget::new(posed.vertices, posed.joints);
        target.vertices[3].x = f64::NAN;
        assert!(matches!(fit(&m, &target, &FitConfig::default()), Err(Error::NonFinite(_))));
    }

    #[test]
    fn empty_subset_is_degenerate() {
        let m = model();
        let posed = m.forward(&PoseParams::rest(&m)).unwrap();
        let target = FitTarget::new(posed.vertices, posed.joints);
        let err = fit_subset(&m, &target, &[], &FitConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)), "{err}");
    }

    #[test]
    fn bad_config_is_rejected() {
        let m = model();
        let posed = m.forward(&PoseParams::rest(&m)).unwrap();
        let target = FitTarget::new(posed.vertices, posed.joints);
        for cfg in [
            FitConfig { n_iters: 0, ..Default::default() },
            FitConfig { vertex_weight_alpha: 0.0, ..Default::default() },
            FitConfig { vertex_weight_alpha: 1.0, ..Default::default() },
        ] {
            assert!(matches!(fit(&m, &target, &cfg), Err(Error::InvalidArgument(_))));
        }
    }

    #[test]
    fn stratified_subset_covers_every_part() {
        let m = model();
        let s = stratified_subset(&m, 100);
        assert_eq!(s.len(), 100);
        let mut dedup = s.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), 100);
        for k in 0..m.num_parts() {
            assert!(s.iter().any(|&v| m.part_vertex_index()[v] == k), "part {k}");
        }
        assert_eq!(stratified_subset(&m, 10_000).len(), m.num_vertices());
    }

    #[test]
    fn target_file_round_trip_with_indices_and_sigmas() {
        let m = model();
        let posed = m.forward(&PoseParams::rest(&m)).unwrap();
        let target = FitTarget::new(posed.vertices, posed.joints)
            .with_sigmas((0..618).map(|i| 0.01 + i as f64 * 1e-5).collect());
        let sub = target.restricted(&[5, 9, 100]).unwrap();
        let back = TargetFile::from_target(&sub).into_target().unwrap();
        assert_eq!(back, sub);
        assert_eq!(back.sigmas.as_ref().unwrap().len(), 3 + 16);
    }
}
