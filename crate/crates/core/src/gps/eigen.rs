//! Generalized symmetric eigensolvers for `K φ = λ M φ`.
//!
//! The sparse path runs a block Krylov method on the shift-inverted operator
//! `(K + sM)⁻¹ M`, which is self-adjoint in the M inner product, with Rayleigh–Ritz
//! extraction and thick restarts. Factorization uses a reverse Cuthill–McKee ordering.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct KrylovConfig {
    pub block_size: usize,
    /// Basis size at which a restart happens.
    pub max_basis: usize,
    /// Relative residual of the shift-inverted problem.
    pub tolerance: f64,
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self {
            block_size: 8,
            max_basis: 160,
            tolerance: 1e-10,
            max_restarts: 100,
            seed: 0x5eed,
        }
    }
}

/// Reverse Cuthill–McKee ordering of a structurally symmetric matrix: `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CscMatrix<f64>) -> Vec<usize> {
    let n = a.ncols();
    let adj: Vec<Vec<usize>> = a
        .col_iter()
        .enumerate()
        .map(|(c, lane)| lane.row_indices().iter().copied().filter(|&r| r != c).collect())
        .collect();
    let degree = |i: usize| adj[i].len();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let bfs = |start: usize, seen: &mut Vec<bool>, out: &mut Vec<usize>| {
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(v) = queue.pop_front() {
            out.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&u| !seen[u]).collect();
            next.sort_by_key(|&u| (degree(u), u));
            for u in next {
                seen[u] = true;
                queue.push_back(u);
            }
        }
    };
    while order.len() < n {
        let seed = (0..n).filter(|&i| !visited[i]).min_by_key(|&i| (degree(i), i)).unwrap();
        // a few sweeps toward a pseudo-peripheral start
        let mut start = seed;
        for _ in 0..3 {
            let mut seen = visited.clone();
            let mut level = Vec::new();
            bfs(start, &mut seen, &mut level);
            let far = *level.last().unwrap();
            if far == start {
                break;
            }
            start = far;
        }
        bfs(start, &mut visited, &mut order);
    }
    order.reverse();
    order
}

/// `P A Pᵀ` for `perm[new] = old`.
fn permute_symmetric(a: &CscMatrix<f64>, perm: &[usize]) -> CscMatrix<f64> {
    let mut inv = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    let mut coo = CooMatrix::new(a.nrows(), a.ncols());
    for (r, c, &v) in a.triplet_iter() {
        coo.push(inv[r], inv[c], v);
    }
    CscMatrix::from(&coo)
}

/// `(K + sM)⁻¹ M` with a permuted sparse Cholesky factor.
struct ShiftInvert<'a> {
    m: &'a CscMatrix<f64>,
    perm: Vec<usize>,
    chol: CscCholesky<f64>,
}

impl<'a> ShiftInvert<'a> {
    fn new(k: &CscMatrix<f64>, m: &'a CscMatrix<f64>, shift: f64) -> Result<Self> {
        let mut coo = CooMatrix::new(k.nrows(), k.ncols());
        for (r, c, &v) in k.triplet_iter() {
            coo.push(r, c, v);
        }
        for (r, c, &v) in m.triplet_iter() {
            coo.push(r, c, shift * v);
        }
        let shifted = CscMatrix::from(&coo);
        let perm = reverse_cuthill_mckee(&shifted);
        let chol = CscCholesky::factor(&permute_symmetric(&shifted, &perm))
            .map_err(|e| Error::Convergence(format!("factorization of K + sM failed: {e:?}")))?;
        Ok(Self { m, perm, chol })
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mx = self.m * x;
        let rhs = DMatrix::from_fn(mx.nrows(), mx.ncols(), |i, j| mx[(self.perm[i], j)]);
        let sol = self.chol.solve(&rhs);
        let mut out = DMatrix::zeros(sol.nrows(), sol.ncols());
        for (new, &old) in self.perm.iter().enumerate() {
            out.row_mut(old).copy_from(&sol.row(new));
        }
        out
    }
}

/// Growing M-orthonormal basis `V` with `MV` and `AV` kept alongside.
struct Basis {
    v: Vec<DVector<f64>>,
    mv: Vec<DVector<f64>>,
    av: Vec<DVector<f64>>,
}

impl Basis {
    fn len(&self) -> usize {
        self.v.len()
    }

    /// M-orthonormalizes the columns of `w` against the basis and each other, dropping
    /// columns that are numerically dependent. Returns the accepted block.
    fn orthonormalize(&self, m: &CscMatrix<f64>, w: DMatrix<f64>) -> Vec<(DVector<f64>, DVector<f64>)> {
        let mut accepted: Vec<(DVector<f64>, DVector<f64>)> = Vec::new();
        for col in w.column_iter() {
            let mut x: DVector<f64> = col.into_owned();
            let start = (m * &x).dot(&x).sqrt();
            if start == 0.0 || !start.is_finite() {
                continue;
            }
            for _ in 0..2 {
                for (v, mv) in self.v.iter().zip(&self.mv) {
                    let c = mv.dot(&x);
                    x.axpy(-c, v, 1.0);
                }
                for (v, mv) in &accepted {
                    let c = mv.dot(&x);
                    x.axpy(-c, v, 1.0);
                }
            }
            let mx = m * &x;
            let norm = mx.dot(&x).sqrt();
            if norm > 1e-8 * start {
                accepted.push((x / norm, mx / norm));
            }
        }
        accepted
    }
}

/// Smallest `count` eigenpairs of `K φ = λ M φ`, ascending, with `φᵀMφ = 1`.
pub fn sparse_generalized_eigs(
    k: &CscMatrix<f64>,
    m: &CscMatrix<f64>,
    count: usize,
    cfg: &KrylovConfig,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = k.nrows();
    if count == 0 || count >= n {
        return Err(Error::InvalidArgument(format!("requested {count} eigenpairs of a {n}-node problem")));
    }
    let b = cfg.block_size.max(1);
    let keep = (count + b).min(n);
    let max_basis = cfg.max_basis.max(keep + 2 * b).min(n);
    let diag_sum = |a: &CscMatrix<f64>| a.triplet_iter().filter(|(r, c, _)| r == c).map(|(_, _, v)| *v).sum::<f64>();
    let shift = 1e-3 * diag_sum(k) / diag_sum(m);
    let op = ShiftInvert::new(k, m, shift)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut next = DMatrix::from_fn(n, b, |_, _| StandardNormal.sample(&mut rng));
    let mut basis = Basis { v: Vec::new(), mv: Vec::new(), av: Vec::new() };
    let mut worst = f64::INFINITY;

    for _restart in 0..=cfg.max_restarts {
        while basis.len() < max_basis {
            let mut block = basis.orthonormalize(m, next);
            block.truncate(max_basis - basis.len());
            if block.is_empty() {
                break;
            }
            let x = DMatrix::from_columns(&block.iter().map(|(v, _)| v.clone()).collect::<Vec<_>>());
            let ax = op.apply(&x);
            for ((v, mv), av) in block.into_iter().zip(ax.column_iter()) {
                basis.v.push(v);
                basis.mv.push(mv);
                basis.av.push(av.into_owned());
            }
            next = ax;
        }

        let v = DMatrix::from_columns(&basis.v);
        let mv = DMatrix::from_columns(&basis.mv);
        let av = DMatrix::from_columns(&basis.av);
        let t = mv.transpose() * &av;
        let t = (&t + t.transpose()) * 0.5;
        let eig = t.symmetric_eigen();
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let kept = keep.min(order.len());
        let s = DMatrix::from_fn(v.ncols(), kept, |r, c| eig.eigenvectors[(r, order[c])]);
        let theta: Vec<f64> = order[..kept].iter().map(|&i| eig.eigenvalues[i]).collect();
        let y = &v * &s;
        let my = &mv * &s;
        let ay = &av * &s;
        let may = m * &ay;

        let mut residuals = Vec::with_capacity(kept);
        let mut rel = Vec::with_capacity(kept);
        for c in 0..kept {
            let r = ay.column(c) - y.column(c) * theta[c];
            let mr = may.column(c) - my.column(c) * theta[c];
            rel.push(r.dot(&mr).max(0.0).sqrt() / theta[c].abs().max(f64::MIN_POSITIVE));
            residuals.push(r);
        }
        worst = rel[..count.min(kept)].iter().copied().fold(0.0, f64::max);
        if kept >= count && worst < cfg.tolerance {
            let mut values: Vec<f64> = Vec::with_capacity(count);
            let vectors = y.columns(0, count).into_owned();
            for c in 0..count {
                let phi = vectors.column(c);
                let kphi = k * &phi.into_owned();
                values.push(kphi.dot(&phi) / my.column(c).dot(&phi));
            }
            return Ok(sort_pairs(values, vectors));
        }

        basis = Basis {
            v: y.column_iter().map(|c| c.into_owned()).collect(),
            mv: my.column_iter().map(|c| c.into_owned()).collect(),
            av: ay.column_iter().map(|c| c.into_owned()).collect(),
        };
        let pending: Vec<DVector<f64>> = (0..count.min(kept))
            .filter(|&c| rel[c] >= cfg.tolerance)
            .take(b)
            .map(|c| residuals[c].clone())
            .collect();
        next = if pending.is_empty() {
            DMatrix::from_fn(n, b, |_, _| StandardNormal.sample(&mut rng))
        } else {
            DMatrix::from_columns(&pending)
        };
    }
    Err(Error::Convergence(format!(
        "{} restarts, worst relative residual {worst:.2e} (tolerance {:.1e})",
        cfg.max_restarts, cfg.tolerance
    )))
}

/// Dense reference solver via `L⁻¹ K L⁻ᵀ` with `M = L Lᵀ`. Cubic in the node count.
pub fn dense_generalized_eigs(k: &DMatrix<f64>, m: &DMatrix<f64>, count: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = k.nrows();
    if count == 0 || count > n {
        return Err(Error::InvalidArgument(format!("requested {count} eigenpairs of a {n}-node problem")));
    }
    let l = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Degenerate("mass matrix is not positive definite".into()))?
        .l();
    let linv_k = l
        .solve_lower_triangular(k)
        .ok_or_else(|| Error::Degenerate("singular Cholesky factor".into()))?;
    let c = l
        .solve_lower_triangular(&linv_k.transpose())
        .ok_or_else(|| Error::Degenerate("singular Cholesky factor".into()))?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = c.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let y = DMatrix::from_fn(n, count, |r, col| eig.eigenvectors[(r, order[col])]);
    let phi = l
        .transpose()
        .solve_upper_triangular(&y)
        .ok_or_else(|| Error::Degenerate("singular Cholesky factor".into()))?;
    Ok((order[..count].iter().map(|&i| eig.eigenvalues[i]).collect(), phi))
}

fn sort_pairs(values: Vec<f64>, vectors: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let sorted = DMatrix::from_fn(vectors.nrows(), values.len(), |r, c| vectors[(r, order[c])]);
    (order.iter().map(|&i| values[i]).collect(), sorted)
}

/// Flips each column so its largest-magnitude entry is positive. Near-ties (within a
/// relative 1e-6) go to the lowest index so rounding cannot flip the choice.
pub fn fix_sign_gauge(vectors: &mut DMatrix<f64>) {
    for mut col in vectors.column_iter_mut() {
        let peak = col.amax();
        if let Some(i) = col.iter().position(|x| x.abs() >= peak * (1.0 - 1e-6)) {
            if col[i] < 0.0 {
                col.neg_mut();
            }
        }
    }
}

/// Dense copy of a sparse matrix, for small problems and checks.
pub fn to_dense(a: &CscMatrix<f64>) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(a.nrows(), a.ncols());
    for (r, c, v) in a.triplet_iter() {
        d[(r, c)] += v;
    }
    d
}
