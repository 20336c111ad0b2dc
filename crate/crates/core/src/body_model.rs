//! Linear-blend-skinned parametric body model posed by global per-part rotations.
//!
//! Body parts coincide with joints: part `k` is driven by rotation `R_k` and pivots
//! about joint `k`. Given fixed rotations the posed vertices and joints are affine in
//! the shape vector and translation, which is what makes the fitter's shape step a
//! linear least-squares problem.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3xX, Vector3};
use serde::{Deserialize, Serialize};

use crate::array_io::{read_json, write_json, EncodedArray};
use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct BodyModel {
    template_vertices: Vec<Vector3<f64>>,
    /// Rows `3*v + c`, one column per shape coefficient.
    shape_blendshapes: DMatrix<f64>,
    joint_regressor: DMatrix<f64>,
    skinning_weights: DMatrix<f64>,
    parent: Vec<Option<usize>>,
    part_joints: Vec<Vec<usize>>,

    // derived
    skin_sparse: Vec<Vec<(usize, f64)>>,
    part_vertex_index: Vec<usize>,
    part_vertices: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    rest_joints: Vec<Vector3<f64>>,
    /// `joint_regressor * shape_blendshapes`, rows `3*j + c`.
    joint_shape_dirs: DMatrix<f64>,
}

/// Global per-part rotations, shape coefficients and translation.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseParams {
    pub rotations: Vec<Matrix3<f64>>,
    pub beta: DVector<f64>,
    pub translation: Vector3<f64>,
}

impl PoseParams {
    /// Mean shape in T-pose at the origin.
    pub fn rest(model: &BodyModel) -> Self {
        Self {
            rotations: vec![Matrix3::identity(); model.num_parts()],
            beta: DVector::zeros(model.num_betas()),
            translation: Vector3::zeros(),
        }
    }

    /// Checks `RᵀR = I` and `det R = 1` for every rotation within `tol`.
    pub fn rotations_valid(&self, tol: f64) -> bool {
        self.rotations.iter().all(|r| is_rotation(r, tol))
    }
}

pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    ortho <= tol && (r.determinant() - 1.0).abs() <= tol
}

/// Posed vertex and joint positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Posed {
    pub vertices: Vec<Vector3<f64>>,
    pub joints: Vec<Vector3<f64>>,
}

impl BodyModel {
    /// Builds a model and verifies every invariant. Violations are reported, never fixed.
    pub fn new(
        template_vertices: Vec<Vector3<f64>>,
        shape_blendshapes: DMatrix<f64>,
        joint_regressor: DMatrix<f64>,
        skinning_weights: DMatrix<f64>,
        parent: Vec<Option<usize>>,
        part_joints: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let nv = template_vertices.len();
        let nj = parent.len();
        if nj < 1 || nv < 1 {
            return Err(Error::InvalidModel("model needs at least one vertex and one joint".into()));
        }
        if shape_blendshapes.nrows() != 3 * nv {
            return Err(Error::InvalidModel(format!(
                "shape_blendshapes has {} rows, expected {}",
                shape_blendshapes.nrows(),
                3 * nv
            )));
        }
        if joint_regressor.shape() != (nj, nv) {
            return Err(Error::InvalidModel(format!(
                "joint_regressor is {:?}, expected ({nj}, {nv})",
                joint_regressor.shape()
            )));
        }
        if skinning_weights.shape() != (nv, nj) {
            return Err(Error::InvalidModel(format!(
                "skinning_weights is {:?}, expected ({nv}, {nj})",
                skinning_weights.shape()
            )));
        }
        if template_vertices.iter().any(|v| !v.iter().all(|x| x.is_finite()))
            || shape_blendshapes.iter().any(|x| !x.is_finite())
            || joint_regressor.iter().any(|x| !x.is_finite())
            || skinning_weights.iter().any(|x| !x.is_finite())
        {
            return Err(Error::InvalidModel("model arrays contain non-finite values".into()));
        }

        for v in 0..nv {
            let row = skinning_weights.row(v);
            if let Some(k) = row.iter().position(|&w| w < 0.0) {
                return Err(Error::InvalidModel(format!(
                    "skinning_weights row {v} has negative weight at joint {k}"
                )));
            }
            let s = row.sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidModel(format!(
                    "skinning_weights row {v} sums to {s}, expected 1"
                )));
            }
        }
        for j in 0..nj {
            let s = joint_regressor.row(j).sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidModel(format!(
                    "joint_regressor row {j} sums to {s}, expected 1"
                )));
            }
        }

        if parent[0].is_some() {
            return Err(Error::InvalidModel("parent[0] must be the root sentinel".into()));
        }
        for (k, p) in parent.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < k => {}
                Some(p) => {
                    return Err(Error::InvalidModel(format!(
                        "parent[{k}] = {p} violates topological order"
                    )))
                }
                None => {
                    return Err(Error::InvalidModel(format!(
                        "joint {k} has no parent; only joint 0 may be the root"
                    )))
                }
            }
        }
        let mut children = vec![Vec::new(); nj];
        for (k, p) in parent.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(k);
            }
        }

        if part_joints.len() != nj {
            return Err(Error::InvalidModel(format!(
                "part_joints has {} parts, expected one per joint ({nj})",
                part_joints.len()
            )));
        }
        let mut membership = vec![0usize; nj];
        for (k, list) in part_joints.iter().enumerate() {
            for &j in list {
                if j >= nj {
                    return Err(Error::InvalidModel(format!(
                        "part_joints[{k}] references joint {j} out of range"
                    )));
                }
                membership[j] += 1;
            }
        }
        for j in 1..nj {
            if !children[j].is_empty() && membership[j] != 2 {
                return Err(Error::InvalidModel(format!(
                    "interior joint {j} belongs to {} parts, expected 2",
                    membership[j]
                )));
            }
        }

        let skin_sparse: Vec<Vec<(usize, f64)>> = (0..nv)
            .map(|v| {
                skinning_weights
                    .row(v)
                    .iter()
                    .enumerate()
                    .filter(|(_, &w)| w > 0.0)
                    .map(|(k, &w)| (k, w))
                    .collect()
            })
            .collect();
        // argmax with ties resolved towards the lowest index
        let part_vertex_index: Vec<usize> = (0..nv)
            .map(|v| {
                let row = skinning_weights.row(v);
                let mut best = 0;
                for k in 1..nj {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect();
        let mut part_vertices = vec![Vec::new(); nj];
        for (v, &k) in part_vertex_index.iter().enumerate() {
            part_vertices[k].push(v);
        }

        let rest_joints = (0..nj)
            .map(|j| {
                template_vertices
                    .iter()
                    .zip(joint_regressor.row(j).iter())
                    .fold(Vector3::zeros(), |acc, (v, &w)| acc + v * w)
            })
            .collect();
        let nb = shape_blendshapes.ncols();
        let mut joint_shape_dirs = DMatrix::zeros(3 * nj, nb);
        for j in 0..nj {
            for v in 0..nv {
                let w = joint_regressor[(j, v)];
                if w == 0.0 {
                    continue;
                }
                for c in 0..3 {
                    for b in 0..nb {
                        joint_shape_dirs[(3 * j + c, b)] += w * shape_blendshapes[(3 * v + c, b)];
                    }
                }
            }
        }

        Ok(Self {
            template_vertices,
            shape_blendshapes,
            joint_regressor,
            skinning_weights,
            parent,
            part_joints,
            skin_sparse,
            part_vertex_index,
            part_vertices,
            children,
            rest_joints,
            joint_shape_dirs,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.template_vertices.len()
    }

    pub fn num_joints(&self) -> usize {
        self.parent.len()
    }

    pub fn num_parts(&self) -> usize {
        self.parent.len()
    }

    pub fn num_betas(&self) -> usize {
        self.shape_blendshapes.ncols()
    }

    pub fn template_vertices(&self) -> &[Vector3<f64>] {
        &self.template_vertices
    }

    pub fn shape_blendshapes(&self) -> &DMatrix<f64> {
        &self.shape_blendshapes
    }

    pub fn joint_regressor(&self) -> &DMatrix<f64> {
        &self.joint_regressor
    }

    pub fn skinning_weights(&self) -> &DMatrix<f64> {
        &self.skinning_weights
    }

    pub fn parent(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn children(&self, joint: usize) -> &[usize] {
        &self.children[joint]
    }

    pub fn part_joints(&self) -> &[Vec<usize>] {
        &self.part_joints
    }

    pub fn part_vertex_index(&self) -> &[usize] {
        &self.part_vertex_index
    }

    pub fn part_vertices(&self, part: usize) -> &[usize] {
        &self.part_vertices[part]
    }

    /// Rest-pose joints of the mean shape, `joint_regressor · template_vertices`.
    pub fn rest_joints(&self) -> &[Vector3<f64>] {
        &self.rest_joints
    }

    /// Shaped template vertex `T_v(β)`.
    pub fn shaped_vertex(&self, v: usize, beta: &DVector<f64>) -> Vector3<f64> {
        let mut p = self.template_vertices[v];
        for (b, &coef) in beta.iter().enumerate() {
            if coef != 0.0 {
                for c in 0..3 {
                    p[c] += self.shape_blendshapes[(3 * v + c, b)] * coef;
                }
            }
        }
        p
    }

    /// Rest joints of the shaped template, `j(β)`.
    pub fn shaped_joints(&self, beta: &DVector<f64>) -> Vec<Vector3<f64>> {
        (0..self.num_joints())
            .map(|j| {
                let mut p = self.rest_joints[j];
                for (b, &coef) in beta.iter().enumerate() {
                    for c in 0..3 {
                        p[c] += self.joint_shape_dirs[(3 * j + c, b)] * coef;
                    }
                }
                p
            })
            .collect()
    }

    /// Posed joints without translation: the root stays put, every other joint hangs
    /// off its parent along the parent-rotated rest bone.
    pub fn posed_joints(
        &self,
        rotations: &[Matrix3<f64>],
        shaped_joints: &[Vector3<f64>],
    ) -> Vec<Vector3<f64>> {
        let mut posed = Vec::with_capacity(shaped_joints.len());
        for k in 0..self.num_joints() {
            let p = match self.parent[k] {
                None => shaped_joints[k],
                Some(par) => {
                    posed[par] + rotations[par] * (shaped_joints[k] - shaped_joints[par])
                }
            };
            posed.push(p);
        }
        posed
    }

    fn check_pose(&self, pose: &PoseParams) -> Result<()> {
        if pose.rotations.len() != self.num_parts() {
            return Err(Error::Dimension(format!(
                "pose has {} rotations, model has {} parts",
                pose.rotations.len(),
                self.num_parts()
            )));
        }
        if pose.beta.len() != self.num_betas() {
            return Err(Error::Dimension(format!(
                "pose has {} shape coefficients, model has {}",
                pose.beta.len(),
                self.num_betas()
            )));
        }
        Ok(())
    }

    /// Forward kinematics plus linear blend skinning over all vertices.
    pub fn forward(&self, pose: &PoseParams) -> Result<Posed> {
        self.forward_rows(pose, None)
    }

    /// Like [`forward`](Self::forward) but only evaluates the listed vertices.
    pub fn forward_rows(&self, pose: &PoseParams, vertices: Option<&[usize]>) -> Result<Posed> {
        self.check_pose(pose)?;
        if let Some(idx) = vertices {
            check_indices(idx, self.num_vertices())?;
        }
        let shaped = self.shaped_joints(&pose.beta);
        let posed = self.posed_joints(&pose.rotations, &shaped);
        // v' = (Σ w_k R_k) T_v + Σ w_k (j'_k - R_k j_k)
        let offsets: Vec<Vector3<f64>> = (0..self.num_joints())
            .map(|k| posed[k] - pose.rotations[k] * shaped[k])
            .collect();
        let t = pose.translation;
        let pose_vertex = |v: usize| {
            let tv = self.shaped_vertex(v, &pose.beta);
            let mut blended = Matrix3::zeros();
            let mut off = Vector3::zeros();
            for &(k, w) in &self.skin_sparse[v] {
                blended += pose.rotations[k] * w;
                off += offsets[k] * w;
            }
            blended * tv + off + t
        };
        let vertices = match vertices {
            Some(idx) => idx.iter().map(|&v| pose_vertex(v)).collect(),
            None => (0..self.num_vertices()).map(pose_vertex).collect(),
        };
        let joints = posed.iter().map(|j| j + t).collect();
        Ok(Posed { vertices, joints })
    }

    /// Exact Jacobian of the stacked `[vertices; joints]` output with respect to `[β; t]`.
    pub fn shape_jacobian(&self, rotations: &[Matrix3<f64>]) -> Result<DMatrix<f64>> {
        self.shape_jacobian_rows(rotations, None)
    }

    /// Jacobian restricted to the listed vertices (all joints are always included).
    /// Row `3*i + c` is coordinate `c` of the `i`-th output point.
    pub fn shape_jacobian_rows(
        &self,
        rotations: &[Matrix3<f64>],
        vertices: Option<&[usize]>,
    ) -> Result<DMatrix<f64>> {
        if rotations.len() != self.num_parts() {
            return Err(Error::Dimension(format!(
                "{} rotations given, model has {} parts",
                rotations.len(),
                self.num_parts()
            )));
        }
        if let Some(idx) = vertices {
            check_indices(idx, self.num_vertices())?;
        }
        let nb = self.num_betas();
        let nj = self.num_joints();
        let all: Vec<usize>;
        let idx = match vertices {
            Some(idx) => idx,
            None => {
                all = (0..self.num_vertices()).collect();
                &all
            }
        };
        let n_points = idx.len() + nj;
        let mut jac = DMatrix::zeros(3 * n_points, nb + 3);

        // forward-mode derivative of the posed joints along the tree
        let js = |j: usize| self.joint_shape_dirs.fixed_rows::<3>(3 * j);
        let mut dposed: Vec<Matrix3xX<f64>> = Vec::with_capacity(nj);
        for k in 0..nj {
            let d: Matrix3xX<f64> = match self.parent[k] {
                None => js(k).into_owned(),
                Some(p) => &dposed[p] + rotations[p] * (js(k) - js(p)),
            };
            dposed.push(d);
        }
        // dv'/dβ = (Σ w_k R_k) S_v + Σ w_k (dj'_k - R_k dj_k)
        let doffsets: Vec<Matrix3xX<f64>> = (0..nj)
            .map(|k| &dposed[k] - rotations[k] * js(k))
            .collect();

        for (row, &v) in idx.iter().enumerate() {
            let mut blended = Matrix3::zeros();
            let mut block = Matrix3xX::zeros(nb);
            for &(k, w) in &self.skin_sparse[v] {
                blended += rotations[k] * w;
                block += &doffsets[k] * w;
            }
            block += blended * self.shape_blendshapes.fixed_rows::<3>(3 * v);
            jac.view_mut((3 * row, 0), (3, nb)).copy_from(&block);
        }
        for k in 0..nj {
            let row = idx.len() + k;
            jac.view_mut((3 * row, 0), (3, nb)).copy_from(&dposed[k]);
        }
        for i in 0..n_points {
            for c in 0..3 {
                jac[(3 * i + c, nb + c)] = 1.0;
            }
        }
        Ok(jac)
    }

    /// Converts global rotations to parent-relative ones, `R_parent⁻¹ · R_k`.
    pub fn to_parent_relative(&self, rotations: &[Matrix3<f64>]) -> Vec<Matrix3<f64>> {
        (0..self.num_parts())
            .map(|k| match self.parent[k] {
                None => rotations[k],
                Some(p) => rotations[p].transpose() * rotations[k],
            })
            .collect()
    }

    /// Inverse of [`to_parent_relative`](Self::to_parent_relative).
    pub fn from_parent_relative(&self, relative: &[Matrix3<f64>]) -> Vec<Matrix3<f64>> {
        let mut global: Vec<Matrix3<f64>> = Vec::with_capacity(relative.len());
        for k in 0..self.num_parts() {
            let g = match self.parent[k] {
                None => relative[k],
                Some(p) => global[p] * relative[k],
            };
            global.push(g);
        }
        global
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ModelFile = read_json(path)?;
        file.into_model()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, &ModelFile::from_model(self))
    }
}

pub(crate) fn check_indices(idx: &[usize], n: usize) -> Result<()> {
    if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
        return Err(Error::Dimension(format!("vertex index {bad} out of range (n = {n})")));
    }
    Ok(())
}

pub fn vec3_flat(points: &[Vector3<f64>]) -> Vec<f64> {
    points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

pub fn vec3_unflat(values: &[f64]) -> Vec<Vector3<f64>> {
    values
        .chunks_exact(3)
        .map(|c| Vector3::new(c[0], c[1], c[2]))
        .collect()
}

/// On-disk model container.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub template_vertices: EncodedArray,
    pub shape_blendshapes: EncodedArray,
    pub joint_regressor: EncodedArray,
    pub skinning_weights: EncodedArray,
    /// `-1` marks the root.
    pub parent: Vec<i64>,
    pub part_joints: Vec<Vec<usize>>,
}

impl ModelFile {
    pub fn from_model(m: &BodyModel) -> Self {
        let nv = m.num_vertices();
        let nj = m.num_joints();
        let nb = m.num_betas();
        // [N_v, 3, N_beta] row-major equals our (3N_v × N_β) row-major layout
        let mut blend = Vec::with_capacity(3 * nv * nb);
        for r in 0..3 * nv {
            for b in 0..nb {
                blend.push(m.shape_blendshapes[(r, b)]);
            }
        }
        Self {
            format_version: 1,
            template_vertices: EncodedArray::from_f64(&[nv, 3], &vec3_flat(&m.template_vertices)),
            shape_blendshapes: EncodedArray::from_f64(&[nv, 3, nb], &blend),
            joint_regressor: EncodedArray::from_f64(&[nj, nv], &row_major(&m.joint_regressor)),
            skinning_weights: EncodedArray::from_f64(&[nv, nj], &row_major(&m.skinning_weights)),
            parent: m
                .parent
                .iter()
                .map(|p| p.map_or(-1, |p| p as i64))
                .collect(),
            part_joints: m.part_joints.clone(),
        }
    }

    pub fn into_model(self) -> Result<BodyModel> {
        if self.format_version != 1 {
            return Err(Error::Parse(format!(
                "unsupported model format_version {}",
                self.format_version
            )));
        }
        let template = self.template_vertices.to_f64_shaped("template_vertices", &[None, Some(3)])?;
        let nv = self.template_vertices.shape[0];
        let nj = self.parent.len();
        let blend = self
            .shape_blendshapes
            .to_f64_shaped("shape_blendshapes", &[Some(nv), Some(3), None])?;
        let nb = self.shape_blendshapes.shape[2];
        let reg = self
            .joint_regressor
            .to_f64_shaped("joint_regressor", &[Some(nj), Some(nv)])?;
        let skin = self
            .skinning_weights
            .to_f64_shaped("skinning_weights", &[Some(nv), Some(nj)])?;
        let parent = self
            .parent
            .iter()
            .enumerate()
            .map(|(k, &p)| match p {
                -1 => Ok(None),
                p if p >= 0 => Ok(Some(p as usize)),
                p => Err(Error::Parse(format!("parent[{k}] = {p} is invalid"))),
            })
            .collect::<Result<Vec<_>>>()?;
        BodyModel::new(
            vec3_unflat(&template),
            DMatrix::from_row_slice(3 * nv, nb, &blend),
            DMatrix::from_row_slice(nj, nv, &reg),
            DMatrix::from_row_slice(nv, nj, &skin),
            parent,
            self.part_joints,
        )
    }
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        out.extend(m.row(r).iter());
    }
    out
}
