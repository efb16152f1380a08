//! Smallest eigenpairs of `K x = λ M x` by block LOBPCG.
//!
//! The search space `[X, W, P]` is kept in the orthogonal form: `W` and `P`
//! are M-orthogonalized against `X` and against any deflation block, then
//! orthonormalized among themselves by SVQB (small eigendecomposition of the
//! Gram matrix, dropping numerically dependent directions). Converged
//! columns stay in `X` but stop contributing search directions.
//!
//! `K X` and `M X` are recomputed by fresh products every iteration; the
//! only parallel kernel is the row-wise sparse product, so results are
//! independent of the thread count.

use faer::linalg::solvers::Solve;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::DiscreteProblem;
use crate::error::{Error, Result};
use crate::sparse::{compensated_dot, SparseSymmetric};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preconditioner {
    /// Sparse Cholesky factor of `K − σM` applied exactly.
    #[default]
    Cholesky,
    Jacobi,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub num_pairs: usize,
    /// Relative residual `‖Kx − λMx‖ / ‖Kx‖` required of every reported pair.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed: u64,
    pub preconditioner: Preconditioner,
    /// Shift `σ` for the Cholesky preconditioner; must stay below `λ₁`.
    /// Falls back to `σ = 0` if `K − σM` is not positive definite.
    #[serde(default)]
    pub shift: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            num_pairs: 1,
            tolerance: 1e-8,
            max_iterations: 20_000,
            seed: 20_240_601,
            preconditioner: Preconditioner::Cholesky,
            shift: 0.0,
        }
    }
}

impl SolverConfig {
    pub fn with_pairs(num_pairs: usize) -> Self {
        Self { num_pairs, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_pairs == 0 {
            return Err(Error::Invalid("num_pairs must be at least 1".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance <= 1e-2) {
            return Err(Error::Invalid(format!("tolerance {} outside (0, 1e-2]", self.tolerance)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Invalid("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenResult {
    pub eigenvalues: Vec<f64>,
    /// M-orthonormal, on the free dofs of the problem.
    #[serde(skip)]
    pub eigenvectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: Vec<bool>,
    /// `max |x_iᵀ M x_j − δ_ij|`.
    pub orthonormality_defect: f64,
    pub tolerance: f64,
}

impl EigenResult {
    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|c| *c)
    }

    /// The result itself, or an error naming the pairs that missed the tolerance.
    pub fn require_converged(self) -> Result<Self> {
        if self.all_converged() {
            return Ok(self);
        }
        let bad: Vec<String> = self
            .converged
            .iter()
            .enumerate()
            .filter(|(_, c)| !**c)
            .map(|(i, _)| format!("#{i} (residual {:.2e})", self.residuals[i]))
            .collect();
        Err(Error::NotConverged(format!("{} after {} iterations; tolerance {:.1e}", bad.join(", "), self.iterations, self.tolerance)))
    }
}

fn apply(a: &SparseSymmetric, x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut out = DMatrix::zeros(n, x.ncols());
    for j in 0..x.ncols() {
        let src = &x.as_slice()[j * n..(j + 1) * n];
        a.matvec_into(src, &mut out.as_mut_slice()[j * n..(j + 1) * n]);
    }
    out
}

fn symmetrize(h: &mut DMatrix<f64>) {
    let k = h.nrows();
    for i in 0..k {
        for j in 0..i {
            let v = 0.5 * (h[(i, j)] + h[(j, i)]);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
}

/// Ascending eigen-decomposition of a small symmetric matrix.
fn sorted_eigen(h: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let k = h.nrows();
    let eig = SymmetricEigen::new(h);
    let mut idx: Vec<usize> = (0..k).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(k, k, |r, c| eig.eigenvectors[(r, idx[c])]);
    (vals, vecs)
}

/// M-orthonormal basis of `span(V)` via SVQB. Returns the transformation
/// `T` such that `V T` is M-orthonormal (columns may be dropped).
fn svqb(v: &DMatrix<f64>, bv: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let k = v.ncols();
    if k == 0 {
        return None;
    }
    let mut g = v.transpose() * bv;
    symmetrize(&mut g);
    let d: Vec<f64> = (0..k).map(|i| g[(i, i)].max(0.0)).collect();
    let dmax = d.iter().copied().fold(0.0, f64::max);
    if !(dmax > 0.0) {
        return None;
    }
    let dinv: Vec<f64> = d.iter().map(|&x| if x > 1e-300 * dmax.max(1.0) { 1.0 / x.sqrt() } else { 0.0 }).collect();
    let scaled = DMatrix::from_fn(k, k, |i, j| g[(i, j)] * dinv[i] * dinv[j]);
    let (theta, u) = sorted_eigen(scaled);
    let tmax = theta.last().copied().unwrap_or(0.0);
    let keep: Vec<usize> = (0..k).filter(|&i| theta[i] > 1e-13 * tmax).collect();
    if keep.is_empty() {
        return None;
    }
    Some(DMatrix::from_fn(k, keep.len(), |r, c| dinv[r] * u[(r, keep[c])] / theta[keep[c]].sqrt()))
}

/// `V ← V − Y (BYᵀ V)`, twice.
fn project_out(v: &mut DMatrix<f64>, y: &DMatrix<f64>, by: &DMatrix<f64>) {
    if y.ncols() == 0 || v.ncols() == 0 {
        return;
    }
    for _ in 0..2 {
        let c = by.transpose() * &*v;
        *v -= y * c;
    }
}

fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    if a.ncols() == 0 {
        return b.clone();
    }
    if b.ncols() == 0 {
        return a.clone();
    }
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

fn select_columns(a: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), cols.len(), |r, c| a[(r, cols[c])])
}

fn column(a: &DMatrix<f64>, j: usize) -> &[f64] {
    let n = a.nrows();
    &a.as_slice()[j * n..(j + 1) * n]
}

fn norm(x: &[f64]) -> f64 {
    compensated_dot(x, x).sqrt()
}

struct Constraint {
    y: DMatrix<f64>,
    by: DMatrix<f64>,
}

/// Block size used for `m` wanted pairs.
fn block_size(m: usize, dim: usize) -> usize {
    (m + (m / 2).max(2)).min(dim)
}

pub fn smallest_eigenpairs(problem: &DiscreteProblem, config: &SolverConfig) -> Result<EigenResult> {
    smallest_eigenpairs_from(problem, config, &[])
}

/// Like [`smallest_eigenpairs`], seeding the block with `initial` guesses
/// (vectors on the free dofs, e.g. prolongated coarse solutions).
pub fn smallest_eigenpairs_from(problem: &DiscreteProblem, config: &SolverConfig, initial: &[Vec<f64>]) -> Result<EigenResult> {
    config.validate()?;
    let n = problem.dim();
    if 10 * config.num_pairs >= n {
        return Err(Error::Precondition(format!("{} pairs requested from a problem with {n} dofs; need m < dim/10", config.num_pairs)));
    }
    lobpcg(&problem.k, &problem.m, config, initial, None)
}

/// Computes `extra` further pairs M-orthogonal to those of `prior` and
/// returns the merged, sorted set.
pub fn deflate_and_continue(problem: &DiscreteProblem, prior: &EigenResult, extra: usize, config: &SolverConfig) -> Result<EigenResult> {
    if !prior.all_converged() {
        return Err(Error::Precondition("deflation needs a converged prior result".into()));
    }
    let n = problem.dim();
    let total = prior.eigenvalues.len() + extra;
    if extra == 0 || 10 * total >= n {
        return Err(Error::Precondition(format!("{total} pairs requested from a problem with {n} dofs")));
    }
    let y = DMatrix::from_fn(n, prior.eigenvectors.len(), |r, c| prior.eigenvectors[c][r]);
    let by = apply(&problem.m, &y);
    let cfg = SolverConfig { num_pairs: extra, ..config.clone() };
    let more = lobpcg(&problem.k, &problem.m, &cfg, &[], Some(Constraint { y, by }))?;
    let mut vecs: Vec<Vec<f64>> = prior.eigenvectors.clone();
    vecs.extend(more.eigenvectors);
    let iterations = prior.iterations + more.iterations;
    let mut merged = audit(&problem.k, &problem.m, vecs, config.tolerance, iterations);
    merged.sort();
    Ok(merged)
}

impl EigenResult {
    fn sort(&mut self) {
        let mut idx: Vec<usize> = (0..self.eigenvalues.len()).collect();
        idx.sort_by(|&a, &b| self.eigenvalues[a].total_cmp(&self.eigenvalues[b]));
        self.eigenvalues = idx.iter().map(|&i| self.eigenvalues[i]).collect();
        self.residuals = idx.iter().map(|&i| self.residuals[i]).collect();
        self.converged = idx.iter().map(|&i| self.converged[i]).collect();
        let vecs = std::mem::take(&mut self.eigenvectors);
        self.eigenvectors = idx.iter().map(|&i| vecs[i].clone()).collect();
    }
}

/// Recomputes eigenvalues, residuals and the orthonormality defect from
/// scratch with sequential products.
fn audit(k: &SparseSymmetric, m: &SparseSymmetric, vecs: Vec<Vec<f64>>, tol: f64, iterations: usize) -> EigenResult {
    let seq = |a: &SparseSymmetric, x: &[f64]| -> Vec<f64> { (0..a.dim()).map(|i| a.row(i).map(|(j, v)| v * x[j]).sum()).collect() };
    let mut eigenvalues = Vec::new();
    let mut residuals = Vec::new();
    let mut mx_all = Vec::new();
    for x in &vecs {
        let kx = seq(k, x);
        let mx = seq(m, x);
        let lam = compensated_dot(x, &kx) / compensated_dot(x, &mx);
        let r: Vec<f64> = kx.iter().zip(&mx).map(|(a, b)| a - lam * b).collect();
        residuals.push(norm(&r) / norm(&kx));
        eigenvalues.push(lam);
        mx_all.push(mx);
    }
    let mut defect = 0.0f64;
    for (i, xi) in vecs.iter().enumerate() {
        for (j, mxj) in mx_all.iter().enumerate() {
            let g = compensated_dot(xi, mxj);
            defect = defect.max((g - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    let converged = residuals.iter().map(|r| *r <= tol && defect <= 1e-8).collect();
    EigenResult { eigenvalues, eigenvectors: vecs, residuals, iterations, converged, orthonormality_defect: defect, tolerance: tol }
}

/// Sparse Cholesky factor of `K − σM`, retrying with `σ = 0` if the
/// shifted matrix is not positive definite.
fn factorize(k: &SparseSymmetric, m: &SparseSymmetric, shift: f64) -> Result<faer::sparse::linalg::solvers::Llt<usize, f64>> {
    use faer::sparse::{SparseColMat, Triplet};
    faer::set_global_parallelism(faer::Par::Seq);
    let n = k.dim();
    let build = |sigma: f64| -> Result<SparseColMat<usize, f64>> {
        let mut trip = Vec::with_capacity(k.nnz());
        for i in 0..n {
            for (j, v) in k.row(i) {
                if j <= i {
                    trip.push(Triplet::new(i, j, v));
                }
            }
            if sigma != 0.0 {
                for (j, v) in m.row(i) {
                    if j <= i {
                        trip.push(Triplet::new(i, j, -sigma * v));
                    }
                }
            }
        }
        SparseColMat::try_new_from_triplets(n, n, &trip).map_err(|e| Error::Invalid(format!("sparse matrix conversion failed: {e:?}")))
    };
    let shifts: &[f64] = if shift > 0.0 { &[shift, 0.0] } else { &[0.0] };
    for &sigma in shifts {
        if let Ok(llt) = build(sigma)?.sp_cholesky(faer::Side::Lower) {
            return Ok(llt);
        }
    }
    Err(Error::Invalid("stiffness matrix is not positive definite".into()))
}

fn lobpcg(
    k: &SparseSymmetric,
    m: &SparseSymmetric,
    config: &SolverConfig,
    initial: &[Vec<f64>],
    constraint: Option<Constraint>,
) -> Result<EigenResult> {
    let n = k.dim();
    let want = config.num_pairs;
    let nb = block_size(want, n);
    let (cy, cby) = match &constraint {
        Some(c) => (c.y.clone(), c.by.clone()),
        None => (DMatrix::zeros(n, 0), DMatrix::zeros(n, 0)),
    };
    let diag = k.diagonal();
    if diag.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::Invalid("stiffness matrix has a non-positive diagonal entry".into()));
    }
    let factor = match config.preconditioner {
        Preconditioner::Cholesky => Some(factorize(k, m, config.shift)?),
        _ => None,
    };
    let precondition = |r: &mut DMatrix<f64>| match config.preconditioner {
        Preconditioner::Jacobi => {
            for j in 0..r.ncols() {
                for i in 0..n {
                    r[(i, j)] /= diag[i];
                }
            }
        }
        Preconditioner::Cholesky => {
            let cols = r.ncols();
            let view = faer::MatMut::from_column_major_slice_mut(r.as_mut_slice(), n, cols);
            factor.as_ref().expect("factor built above").solve_in_place(view);
        }
        Preconditioner::None => {}
    };

    // Initial block: guesses first, seeded noise for the rest.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut x = DMatrix::from_fn(n, nb, |_, _| rng.random_range(-1.0..1.0));
    for (j, g) in initial.iter().take(nb).enumerate() {
        if g.len() != n {
            return Err(Error::Invalid(format!("initial guess {j} has length {}, expected {n}", g.len())));
        }
        x.column_mut(j).copy_from_slice(g);
    }
    let mut attempts = 0;
    loop {
        project_out(&mut x, &cy, &cby);
        let bx = apply(m, &x);
        match svqb(&x, &bx) {
            Some(t) if t.ncols() == nb => {
                x = &x * t;
                break;
            }
            _ if attempts < 5 => {
                attempts += 1;
                x = DMatrix::from_fn(n, nb, |_, _| rng.random_range(-1.0..1.0));
            }
            _ => return Err(Error::Invalid("could not build an initial block".into())),
        }
    }

    let mut p = DMatrix::<f64>::zeros(n, 0);
    let mut ap = DMatrix::<f64>::zeros(n, 0);
    let mut bp = DMatrix::<f64>::zeros(n, 0);
    let mut iterations = 0;
    let mut lambda: Vec<f64>;
    loop {
        let ax = apply(k, &x);
        let bx = apply(m, &x);
        let mut h = x.transpose() * &ax;
        symmetrize(&mut h);
        // Keep X a Ritz basis of its own span.
        let (vals, c) = sorted_eigen(h);
        x = &x * &c;
        let ax = &ax * &c;
        let bx = &bx * &c;
        lambda = vals;

        let mut resid = ax.clone();
        for j in 0..nb {
            let lam = lambda[j];
            for i in 0..n {
                resid[(i, j)] -= lam * bx[(i, j)];
            }
        }
        let rel: Vec<f64> = (0..nb).map(|j| norm(column(&resid, j)) / norm(column(&ax, j)).max(1e-300)).collect();
        let active: Vec<usize> = (0..nb).filter(|&j| rel[j] > 0.5 * config.tolerance).collect();
        if (0..want).all(|j| rel[j] <= 0.5 * config.tolerance) || iterations >= config.max_iterations {
            break;
        }
        iterations += 1;

        let mut w = select_columns(&resid, &active);
        precondition(&mut w);
        project_out(&mut w, &cy, &cby);
        project_out(&mut w, &x, &bx);
        let aw = apply(k, &w);
        let bw = apply(m, &w);

        // P restricted to active columns, also M-orthogonalized against X.
        let (mut pa, mut apa, mut bpa) = if p.ncols() == nb {
            (select_columns(&p, &active), select_columns(&ap, &active), select_columns(&bp, &active))
        } else {
            (DMatrix::zeros(n, 0), DMatrix::zeros(n, 0), DMatrix::zeros(n, 0))
        };
        if pa.ncols() > 0 {
            for _ in 0..2 {
                let cpx = bx.transpose() * &pa;
                pa -= &x * &cpx;
                apa -= &ax * &cpx;
                bpa -= &bx * &cpx;
            }
        }
        let q0 = hcat(&w, &pa);
        let aq0 = hcat(&aw, &apa);
        let bq0 = hcat(&bw, &bpa);
        let Some(t) = svqb(&q0, &bq0) else {
            p = DMatrix::zeros(n, 0);
            continue;
        };
        let q = &q0 * &t;
        let aq = &aq0 * &t;
        let bq = &bq0 * &t;

        // Rayleigh–Ritz on [X, Q] with the Gram matrix kept for robustness.
        let s = hcat(&x, &q);
        let as_ = hcat(&ax, &aq);
        let bs = hcat(&bx, &bq);
        let mut hs = s.transpose() * &as_;
        let mut gs = s.transpose() * &bs;
        symmetrize(&mut hs);
        symmetrize(&mut gs);
        let Some(chol) = gs.clone().cholesky() else {
            p = DMatrix::zeros(n, 0);
            continue;
        };
        let linv = chol.l().try_inverse().ok_or_else(|| Error::NotConverged("singular Gram factor".into()))?;
        let mut red = &linv * hs * linv.transpose();
        symmetrize(&mut red);
        let (_, u) = sorted_eigen(red);
        let coef = linv.transpose() * u.columns(0, nb);
        let cx = coef.rows(0, nb).into_owned();
        let cq = coef.rows(nb, q.ncols()).into_owned();
        p = &q * &cq;
        ap = &aq * &cq;
        bp = &bq * &cq;
        x = &x * cx + &p;
        // Re-orthonormalize X against drift.
        let bx_new = apply(m, &x);
        if let Some(t) = svqb(&x, &bx_new) {
            if t.ncols() == nb {
                x = &x * t;
            }
        }
    }

    let vecs: Vec<Vec<f64>> = (0..want).map(|j| column(&x, j).to_vec()).collect();
    Ok(audit(k, m, vecs, config.tolerance, iterations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_p1, assemble_q1, rayleigh_quotient};
    use crate::grid3d::VoxelGrid;
    use crate::mesh2d::{BoundaryTag, TriMesh};
    use std::f64::consts::PI;

    fn square(n: usize) -> DiscreteProblem {
        assemble_p1(&TriMesh::rectangle(1.0, 1.0, n, n, [BoundaryTag::Dirichlet; 4]).unwrap()).unwrap()
    }

    #[test]
    fn square_first_eigenvalue() {
        let prob = square(16);
        let r = smallest_eigenpairs(&prob, &SolverConfig::default()).unwrap().require_converged().unwrap();
        assert!(r.eigenvalues[0] > 2.0 * PI * PI);
        assert!((r.eigenvalues[0] / (2.0 * PI * PI) - 1.0).abs() < 0.05);
        assert!(r.orthonormality_defect < 1e-10);
        let q = rayleigh_quotient(&prob, &r.eigenvectors[0]).unwrap();
        assert!((q - r.eigenvalues[0]).abs() < 1e-12 * q);
    }

    #[test]
    fn square_spectrum_pattern_and_deflation() {
        let prob = square(24);
        let cfg = SolverConfig::with_pairs(3);
        let r = smallest_eigenpairs(&prob, &cfg).unwrap().require_converged().unwrap();
        let ratio: Vec<f64> = r.eigenvalues.iter().map(|l| l / (PI * PI)).collect();
        assert!((ratio[0] - 2.0).abs() < 0.05 && (ratio[1] - 5.0).abs() < 0.15 && (ratio[2] - 5.0).abs() < 0.15, "{ratio:?}");

        let one = smallest_eigenpairs(&prob, &SolverConfig::default()).unwrap();
        let more = deflate_and_continue(&prob, &one, 2, &SolverConfig::default()).unwrap().require_converged().unwrap();
        assert!(more.orthonormality_defect < 1e-8);
        for (a, b) in more.eigenvalues.iter().zip(&r.eigenvalues) {
            assert!((a - b).abs() < 1e-6 * b, "{a} vs {b}");
        }
    }

    #[test]
    fn deterministic_rerun() {
        let prob = square(12);
        let cfg = SolverConfig::with_pairs(2);
        let a = smallest_eigenpairs(&prob, &cfg).unwrap();
        let b = smallest_eigenpairs(&prob, &cfg).unwrap();
        assert_eq!(a.eigenvalues, b.eigenvalues);
    }

    #[test]
    fn unit_cube_q1() {
        let prob = assemble_q1(&VoxelGrid::unit_cube(8).unwrap()).unwrap();
        let r = smallest_eigenpairs(&prob, &SolverConfig::default()).unwrap().require_converged().unwrap();
        assert!((r.eigenvalues[0] / (3.0 * PI * PI) - 1.0).abs() < 0.05);
    }

    #[test]
    fn precondition_and_config_checks() {
        let prob = square(4);
        assert!(smallest_eigenpairs(&prob, &SolverConfig::with_pairs(1)).is_err());
        let bad = SolverConfig { tolerance: 0.5, ..SolverConfig::default() };
        assert!(smallest_eigenpairs(&square(16), &bad).is_err());
    }

    #[test]
    fn unconverged_is_flagged() {
        let prob = square(32);
        let cfg = SolverConfig { max_iterations: 2, ..SolverConfig::default() };
        let r = smallest_eigenpairs(&prob, &cfg).unwrap();
        assert!(!r.all_converged());
        assert!(r.require_converged().is_err());
    }

    #[test]
    fn warm_start_reuses_guess() {
        let prob = square(16);
        let r = smallest_eigenpairs(&prob, &SolverConfig::default()).unwrap();
        let again = smallest_eigenpairs_from(&prob, &SolverConfig::default(), &r.eigenvectors).unwrap();
        assert!(again.iterations <= 2);
        assert!((again.eigenvalues[0] - r.eigenvalues[0]).abs() < 1e-10 * r.eigenvalues[0]);
    }
}
