//! Procedural humanoid body model with the same structure as the SMPL family.
//!
//! The skeleton is a pelvis root with a spine chain and two arm and two leg chains.
//! Each part is a capsule around its bone; vertices are laid out on the capsule
//! surfaces, skinned with smooth distance-based weights, and joints are regressed
//! from nearby vertices. The root joint sits at the origin for every shape vector.
//!
//! Shape component 0 scales height, 1 scales girth, and the rest are random
//! proportion changes: per-part bone stretch and girth, carried down the tree.

use nalgebra::{DMatrix, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::body_model::BodyModel;
use crate::error::{Error, Result};
use crate::synth::{gaussian_vec3, rng};

const SKIN_FALLOFF: f64 = 0.02;
/// Sideways bone displacement per unit of stretch in the proportion blendshapes.
const SHAPE_OFF_AXIS: f64 = 0.1;
const MAX_INFLUENCES: usize = 4;
const REGRESSOR_NEIGHBOURS: usize = 6;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Chain {
    Root,
    Spine,
    LeftArm,
    RightArm,
    LeftLeg,
    RightLeg,
}

struct Capsule {
    a: Vector3<f64>,
    b: Vector3<f64>,
    radius: f64,
}

impl Capsule {
    fn closest(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let ab = self.b - self.a;
        let len2 = ab.norm_squared();
        let s = if len2 > 0.0 {
            ((p - self.a).dot(&ab) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        self.a + ab * s
    }

    fn surface_excess(&self, p: &Vector3<f64>) -> f64 {
        ((p - self.closest(p)).norm() - self.radius).max(0.0)
    }
}

/// Generates a deterministic toy model. Requires `n_joints >= 2` and
/// `n_verts >= 4 * n_joints`.
pub fn make_toy_model(seed: u64, n_verts: usize, n_joints: usize, n_beta: usize) -> Result<BodyModel> {
    if n_joints < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 joints, got {n_joints}")));
    }
    if n_verts < 4 * n_joints {
        return Err(Error::InvalidArgument(format!(
            "need at least 4 vertices per joint ({} for {n_joints} joints), got {n_verts}",
            4 * n_joints
        )));
    }
    let mut rng = rng(seed);
    

    // distribute non-root joints over the five chains
    let order = [Chain::Spine, Chain::LeftLeg, Chain::RightLeg, Chain::LeftArm, Chain::RightArm];
    let mut counts = [0usize; 5];
    for i in 0..n_joints - 1 {
        counts[i % 5] += 1;
    }
    let count = |c: Chain| counts[order.iter().position(|&o| o == c).unwrap()];

    let mut pos: Vec<Vector3<f64>> = vec![Vector3::zeros()];
    let mut parent: Vec<Option<usize>> = vec![None];
    let mut chain: Vec<(Chain, usize)> = vec![(Chain::Root, 0)];

    let n_spine = count(Chain::Spine);
    let mut spine_ids = Vec::new();
    let mut prev = 0;
    for i in 0..n_spine {
        let step = 0.6 / n_spine as f64 * jitter(&mut rng, 0.05);
        let p = pos[prev] + Vector3::new(0.0, step, 0.005 * jitter(&mut rng, 1.0) - 0.005);
        pos.push(p);
        parent.push(Some(prev));
        chain.push((Chain::Spine, i));
        prev = pos.len() - 1;
        spine_ids.push(prev);
    }
    let arm_attach = match spine_ids.len() {
        0 => 0,
        1 => spine_ids[0],
        n => spine_ids[n - 2],
    };
    for (side, c) in [(1.0, Chain::LeftArm), (-1.0, Chain::RightArm)] {
        let mut prev = arm_attach;
        for i in 0..count(c) {
            let p = if i == 0 {
                pos[arm_attach] + Vector3::new(side * 0.17 * jitter(&mut rng, 0.05), 0.05 * jitter(&mut rng, 0.1), 0.0)
            } else {
                pos[prev] + Vector3::new(side * 0.26 * jitter(&mut rng, 0.05), 0.01 * (jitter(&mut rng, 1.0) - 1.0), 0.0)
            };
            pos.push(p);
            parent.push(Some(prev));
            chain.push((c, i));
            prev = pos.len() - 1;
        }
    }
    for (side, c) in [(1.0, Chain::LeftLeg), (-1.0, Chain::RightLeg)] {
        let mut prev = 0;
        for i in 0..count(c) {
            let p = if i == 0 {
                Vector3::new(side * 0.09 * jitter(&mut rng, 0.05), -0.08 * jitter(&mut rng, 0.05), 0.0)
            } else {
                pos[prev] + Vector3::new(0.0, -0.42 * jitter(&mut rng, 0.05), 0.01 * (jitter(&mut rng, 1.0) - 1.0))
            };
            pos.push(p);
            parent.push(Some(prev));
            chain.push((c, i));
            prev = pos.len() - 1;
        }
    }
    let nj = pos.len();
    debug_assert_eq!(nj, n_joints);

    let mut children = vec![Vec::new(); nj];
    for (k, p) in parent.iter().enumerate() {
        if let Some(p) = p {
            children[*p].push(k);
        }
    }

    let capsules: Vec<Capsule> = (0..nj)
        .map(|k| {
            let (c, depth) = chain[k];
            let a = pos[k];
            let b = if children[k].is_empty() {
                let dir = (pos[k] - pos[parent[k].unwrap()]).normalize();
                let len = if c == Chain::Spine { 0.2 } else { 0.15 };
                a + dir * len
            } else {
                let centroid = children[k].iter().map(|&j| pos[j]).sum::<Vector3<f64>>()
                    / children[k].len() as f64;
                if (centroid - a).norm() < 0.05 {
                    a + Vector3::new(0.0, 0.05, 0.0)
                } else {
                    centroid
                }
            };
            let base = match c {
                Chain::Root => 0.13,
                Chain::Spine if children[k].is_empty() => 0.09,
                Chain::Spine => 0.12,
                Chain::LeftArm | Chain::RightArm => 0.045 * 0.85f64.powi(depth as i32),
                Chain::LeftLeg | Chain::RightLeg => 0.075 * 0.8f64.powi(depth as i32),
            };
            Capsule {
                a,
                b,
                radius: base * jitter(&mut rng, 0.1),
            }
        })
        .collect();

    // largest-remainder apportionment of vertices by lateral area, at least 4 per part
    let areas: Vec<f64> = capsules
        .iter()
        .map(|c| ((c.b - c.a).norm() + c.radius) * c.radius)
        .collect();
    let total_area: f64 = areas.iter().sum();
    let spare = n_verts - 4 * nj;
    let quotas: Vec<f64> = areas.iter().map(|a| a / total_area * spare as f64).collect();
    let mut per_part: Vec<usize> = quotas.iter().map(|q| 4 + q.floor() as usize).collect();
    let mut remainder: Vec<(usize, f64)> = quotas.iter().map(|q| q - q.floor()).enumerate().collect();
    remainder.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    let assigned: usize = per_part.iter().sum();
    for &(k, _) in remainder.iter().take(n_verts - assigned) {
        per_part[k] += 1;
    }

    const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;
    let mut template = Vec::with_capacity(n_verts);
    let mut owner = Vec::with_capacity(n_verts);
    let mut radial = Vec::with_capacity(n_verts);
    for (k, cap) in capsules.iter().enumerate() {
        let axis = (cap.b - cap.a).normalize();
        let helper = if axis.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let e1 = axis.cross(&helper).normalize();
        let e2 = axis.cross(&e1);
        let phase = rng.random::<f64>() * std::f64::consts::TAU;
        let n = per_part[k];
        for i in 0..n {
            let s = (i as f64 + 0.5) / n as f64;
            let theta = phase + GOLDEN_ANGLE * i as f64;
            let dir = e1 * theta.cos() + e2 * theta.sin();
            let r = cap.radius * (1.0 + 0.05 * (2.0 * rng.random::<f64>() - 1.0));
            template.push(cap.a + (cap.b - cap.a) * s + dir * r);
            owner.push(k);
            radial.push(dir);
        }
    }

    let mut skin = DMatrix::zeros(n_verts, nj);
    for (v, p) in template.iter().enumerate() {
        let mut raw: Vec<(usize, f64)> = capsules
            .iter()
            .enumerate()
            .map(|(k, c)| (k, (-(c.surface_excess(p) / SKIN_FALLOFF).powi(2)).exp()))
            .collect();
        raw.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        let top = raw[0].1;
        let kept: Vec<(usize, f64)> = raw
            .into_iter()
            .take(MAX_INFLUENCES)
            .filter(|(_, w)| *w >= 0.01 * top)
            .collect();
        let sum: f64 = kept.iter().map(|(_, w)| w).sum();
        for (k, w) in kept {
            skin[(v, k)] = w / sum;
        }
        // exact row sums
        let s: f64 = skin.row(v).sum();
        skin.row_mut(v).scale_mut(1.0 / s);
    }

    let mut regressor = DMatrix::zeros(nj, n_verts);
    for j in 0..nj {
        let mut near: Vec<(usize, f64)> = template
            .iter()
            .enumerate()
            .map(|(v, p)| (v, (p - pos[j]).norm()))
            .collect();
        near.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
        let picked = &near[..REGRESSOR_NEIGHBOURS.min(n_verts)];
        let total: f64 = picked.iter().map(|(_, d)| 1.0 / (d + 0.02)).sum();
        for &(v, d) in picked {
            regressor[(j, v)] = 1.0 / (d + 0.02) / total;
        }
    }

    let root_rest: Vector3<f64> = template
        .iter()
        .enumerate()
        .map(|(v, p)| p * regressor[(0, v)])
        .sum();
    for p in template.iter_mut() {
        *p -= root_rest;
    }

    let mut blend = DMatrix::zeros(3 * n_verts, n_beta);
    let length_amp = Normal::new(0.0, 0.03).unwrap();
    let girth_amp = Normal::new(0.0, 0.1).unwrap();
    for b in 0..n_beta {
        match b {
            0 => {
                for (v, p) in template.iter().enumerate() {
                    blend[(3 * v + 1, b)] = 0.05 * p.y;
                }
            }
            1 => {
                for v in 0..n_verts {
                    let d = radial[v] * (0.15 * capsules[owner[v]].radius);
                    for c in 0..3 {
                        blend[(3 * v + c, b)] = d[c];
                    }
                }
            }
            _ => {
                // proportion change: per-part bone stretch and girth, carried down the tree
                let stretch: Vec<f64> = (0..nj).map(|_| length_amp.sample(&mut rng)).collect();
                let girth: Vec<f64> = (0..nj).map(|_| girth_amp.sample(&mut rng)).collect();
                let side: Vec<Vector3<f64>> = (0..nj).map(|_| gaussian_vec3(&mut rng) * SHAPE_OFF_AXIS).collect();
                let mut shift = vec![Vector3::zeros(); nj];
                for k in 1..nj {
                    let p = parent[k].unwrap();
                    let bone = pos[k] - pos[p];
                    shift[k] = shift[p] + bone * stretch[p] + side[p] * (stretch[p].abs() * bone.norm());
                }
                let mut s = 0;
                for (k, cap) in capsules.iter().enumerate() {
                    for i in 0..per_part[k] {
                        let v = s + i;
                        let along = (i as f64 + 0.5) / per_part[k] as f64;
                        let d = shift[k]
                            + (cap.b - cap.a) * (along * stretch[k])
                            + radial[v] * (girth[k] * cap.radius);
                        for c in 0..3 {
                            blend[(3 * v + c, b)] = d[c];
                        }
                    }
                    s += per_part[k];
                }
            }
        }
        // keep the regressed root fixed at the origin for every shape
        let mut drift = Vector3::<f64>::zeros();
        for v in 0..n_verts {
            for c in 0..3 {
                drift[c] += regressor[(0, v)] * blend[(3 * v + c, b)];
            }
        }
        for v in 0..n_verts {
            for c in 0..3 {
                blend[(3 * v + c, b)] -= drift[c];
            }
        }
    }

    let part_joints = (0..nj)
        .map(|k| std::iter::once(k).chain(children[k].iter().copied()).collect())
        .collect();

    BodyModel::new(template, blend, regressor, skin, parent, part_joints)
}

fn jitter<R: Rng>(rng: &mut R, scale: f64) -> f64 {
    1.0 + scale * (2.0 * rng.random::<f64>() - 1.0)
}
