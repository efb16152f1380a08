//! Residuals of the Weyl sequence `Ψ_n = 2^{-n/2} v_† e^{iκz} 𝒳_n(z) χ^{R(n)}`
//! in the layer piece around the edge with the smallest dihedral angle.
//!
//! `Ψ_n` separates into a longitudinal factor and a cross-section factor, so
//! `‖−ΔΨ_n − (λ̂ + κ²)Ψ_n‖²` is assembled from exact one-dimensional
//! integrals of the cut-off and finite-element norms in the cross-section.

use serde::{Deserialize, Serialize};

use super::waveguide::lambda1_solve;
use super::{LevelRecord, Numerics};
use crate::error::{Error, Result};
use crate::geometry::{LayerGeometry, Vec2, Vec3};
use crate::sparse::{dot, SparseSymmetric};

/// Coefficients of `S(t) = 10t³ − 15t⁴ + 6t⁵`, lowest degree first.
const SMOOTHSTEP: [f64; 6] = [0.0, 0.0, 0.0, 10.0, -15.0, 6.0];

/// Quintic smoothstep clamped to `[0, 1]`: value, first and second derivative.
pub fn smoothstep(t: f64) -> [f64; 3] {
    if t <= 0.0 {
        return [0.0, 0.0, 0.0];
    }
    if t >= 1.0 {
        return [1.0, 0.0, 0.0];
    }
    let t2 = t * t;
    [t2 * t * (10.0 - 15.0 * t + 6.0 * t2), 30.0 * t2 * (1.0 - t) * (1.0 - t), 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t)]
}

/// `𝒳_n(z) = 𝒳(z − 2ⁿ) 𝒳(2ⁿ⁺¹ − z)`: value and two derivatives.
pub fn cutoff(n: u32, z: f64) -> [f64; 3] {
    let lo = f64::powi(2.0, n as i32);
    let [a, da, dda] = smoothstep(z - lo);
    let [b, db, ddb] = smoothstep(2.0 * lo - z);
    [a * b, da * b - a * db, dda * b - 2.0 * da * db + a * ddb]
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_der(a: &[f64]) -> Vec<f64> {
    a.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect()
}

fn integral_01(a: &[f64]) -> f64 {
    a.iter().enumerate().map(|(k, c)| c / (k + 1) as f64).sum()
}

/// Exact integrals of the longitudinal factor over its support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffIntegrals {
    /// `∫𝒳_n²`
    pub x0: f64,
    /// `∫𝒳_n′²`
    pub x1: f64,
    /// `∫𝒳_n″²`
    pub x2: f64,
    /// `∫𝒳_n 𝒳_n″`
    pub x02: f64,
}

impl CutoffIntegrals {
    /// For `n ≥ 1` the two ramps do not overlap and each contributes the
    /// integral of the smoothstep over `[0, 1]`.
    pub fn new(n: u32) -> Result<Self> {
        if n < 1 {
            return Err(Error::Invalid("cut-off index n must be at least 1".into()));
        }
        let s = SMOOTHSTEP;
        let ds = poly_der(&s);
        let dds = poly_der(&ds);
        let plateau = f64::powi(2.0, n as i32) - 2.0;
        Ok(Self {
            x0: plateau + 2.0 * integral_01(&poly_mul(&s, &s)),
            x1: 2.0 * integral_01(&poly_mul(&ds, &ds)),
            x2: 2.0 * integral_01(&poly_mul(&dds, &dds)),
            x02: 2.0 * integral_01(&poly_mul(&s, &dds)),
        })
    }
}

/// `∫ 𝒳_n 𝒳_m dz` by Gauss quadrature over the intersection of the supports.
pub fn support_overlap(n: u32, m: u32) -> f64 {
    let lo = f64::powi(2.0, n.max(m) as i32);
    let hi = 2.0 * f64::powi(2.0, n.min(m) as i32);
    if hi <= lo {
        return 0.0;
    }
    let (x, w) = crate::mesh2d::gauss_legendre_5();
    let pieces = ((hi - lo) * 8.0).ceil() as usize;
    let step = (hi - lo) / pieces as f64;
    let mut s = 0.0;
    for k in 0..pieces {
        let mid = lo + (k as f64 + 0.5) * step;
        for (xi, wi) in x.iter().zip(&w) {
            let z = mid + 0.5 * step * xi;
            s += wi * 0.5 * step * cutoff(n, z)[0] * cutoff(m, z)[0];
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeylConfig {
    pub n: u32,
    pub kappa: f64,
    /// Cross-section mesh size.
    pub h: f64,
}

/// The cut-off ramps have unit width; the mesh must resolve them.
pub const MAX_WEYL_H: f64 = 0.125;

impl WeylConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 || self.n > 12 {
            return Err(Error::Invalid(format!("index n = {} outside 1..=12", self.n)));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::Invalid(format!("kappa = {} must be nonnegative", self.kappa)));
        }
        if !(self.h > 0.0 && self.h <= MAX_WEYL_H) {
            return Err(Error::Invalid(format!("h = {} does not resolve the unit-width cut-off ramps; need h <= {MAX_WEYL_H}", self.h)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeylReport {
    pub n: u32,
    pub kappa: f64,
    /// `‖−ΔΨ_n − (λ̂ + κ²)Ψ_n‖ / ‖Ψ_n‖`
    pub residual: f64,
    pub residual_abs: f64,
    pub norm: f64,
    /// Outlet length of the cross-section at `z = 2ⁿ`.
    #[serde(rename = "R_n")]
    pub r_n: f64,
    pub support: [f64; 2],
    pub lambda: f64,
    pub beta: f64,
    pub cutoff: CutoffIntegrals,
    /// `‖χv‖²`, `‖g‖²`, `(χv, g)` with `g = −Δ(χv) − λ̂χv` in the cross-section.
    pub section: [f64; 3],
    /// Solver output for the ground state of `ω(β)`.
    pub levels: Vec<LevelRecord>,
}

/// Outlet lengths, measured from the inner vertex of the cross-section, at
/// height `z` above the inner vertex of the layer in the frame of ray `j`.
fn outlet_lengths(layer: &LayerGeometry, j: usize, z: f64) -> [f64; 2] {
    let a = &layer.angle;
    let n = a.n();
    let [e1, _, e3] = a.dihedral_frame(j);
    let next = a.rays[(j + 1) % n];
    let u2 = (next - e3 * next.dot(&e3)).normalize();
    let arm = |u: Vec3, plane: usize| {
        let nrm = layer.partition_planes[plane].normal;
        -z * nrm.dot(&e3) / nrm.dot(&u)
    };
    [arm(e1, (j + n - 1) % n), arm(u2, j)]
}

/// `R(n)`: the shorter outlet at `z = 2ⁿ`.
pub fn section_outlet(layer: &LayerGeometry, j: usize, n: u32) -> f64 {
    let [a, b] = outlet_lengths(layer, j, f64::powi(2.0, n as i32));
    a.min(b)
}

/// `χ^R` on the L-shaped profile of opening `theta`: equal to one up to
/// distance `R − 1` past the inner vertex along each outlet, zero beyond `R`.
fn section_cutoff(theta: f64, r: f64, p: &Vec2) -> f64 {
    let c = 1.0 / (theta / 2.0).tan();
    let axis = Vec2::new((theta / 2.0).cos(), (theta / 2.0).sin());
    let d = if axis.perp(p) < 0.0 { Vec2::new(1.0, 0.0) } else { Vec2::new(theta.cos(), theta.sin()) };
    1.0 - smoothstep(d.dot(p) - c - (r - 1.0))[0]
}

/// Solves `M x = b` by Jacobi-preconditioned conjugate gradients.
fn mass_solve(m: &SparseSymmetric, b: &[f64]) -> Result<Vec<f64>> {
    let diag = m.diagonal();
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(a, d)| a / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut ap = vec![0.0; n];
    for _ in 0..10 * n.max(10) {
        m.matvec_into(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if dot(&r, &r).sqrt() <= 1e-13 * bnorm {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NotConverged("mass-matrix solve".into()))
}

/// Residuals for several `(n, κ)` sharing one cross-section mesh size and one
/// ground state of `ω(β_†)`.
pub fn weyl_sequence(layer: &LayerGeometry, configs: &[WeylConfig], numerics: &Numerics) -> Result<Vec<WeylReport>> {
    let first = configs.first().ok_or_else(|| Error::Invalid("no Weyl configurations given".into()))?;
    for c in configs {
        c.validate()?;
        if c.h != first.h {
            return Err(Error::Invalid("all configurations must share the mesh size h".into()));
        }
    }
    let j = layer.angle.beta_min_index();
    let beta = layer.angle.dihedral_angles[j];
    let n_max = configs.iter().map(|c| c.n).max().expect("nonempty");
    let r_need = section_outlet(layer, j, n_max);
    if !(section_outlet(layer, j, 1) > 1.0) {
        return Err(Error::Geometry("cross-section outlets are too short for the cut-off".into()));
    }
    let r_mesh = (2.0 * (r_need + 2.0)).ceil() / 2.0;
    let num = Numerics { h: first.h, r: Some(r_mesh), ..numerics.clone() };
    let (thr, solve) = lambda1_solve(beta, &num)?;
    let lambda = thr.extrapolated;
    let fine = solve.finest();
    let v = fine.nodal(0);
    let problem = &fine.problem;
    let mut out = Vec::with_capacity(configs.len());
    for c in configs {
        let r_n = section_outlet(layer, j, c.n);
        let w_nodal: Vec<f64> = fine.mesh.nodes.iter().zip(&v).map(|(p, vi)| section_cutoff(beta, r_n, p) * vi).collect();
        let w = problem.restrict(&w_nodal);
        let kw = problem.k.matvec(&w);
        let mw = problem.m.matvec(&w);
        let res: Vec<f64> = kw.iter().zip(&mw).map(|(a, b)| a - lambda * b).collect();
        let g = mass_solve(&problem.m, &res)?;
        let w2 = dot(&w, &mw);
        let g2 = dot(&res, &g);
        let wg = dot(&w, &res);
        let ci = CutoffIntegrals::new(c.n)?;
        let scale = f64::powi(2.0, -(c.n as i32));
        let k2 = c.kappa * c.kappa;
        let res2 = scale * ((ci.x2 + 4.0 * k2 * ci.x1) * w2 + ci.x0 * g2 - 2.0 * ci.x02 * wg);
        let norm2 = scale * ci.x0 * w2;
        let lo = f64::powi(2.0, c.n as i32);
        out.push(WeylReport {
            n: c.n,
            kappa: c.kappa,
            residual: (res2.max(0.0) / norm2).sqrt(),
            residual_abs: res2.max(0.0).sqrt(),
            norm: norm2.sqrt(),
            r_n,
            support: [lo, 2.0 * lo],
            lambda,
            beta,
            cutoff: ci,
            section: [w2, g2, wg],
            levels: thr.levels.clone(),
        });
    }
    Ok(out)
}

pub fn weyl_residual(layer: &LayerGeometry, config: &WeylConfig, numerics: &Numerics) -> Result<f64> {
    Ok(weyl_sequence(layer, std::slice::from_ref(config), numerics)?[0].residual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_trihedral, make_layer};
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn smoothstep_matches_its_derivatives() {
        for &t in &[0.1, 0.37, 0.5, 0.81] {
            let e = 1e-6;
            let [s, ds, dds] = smoothstep(t);
            assert_relative_eq!(ds, (smoothstep(t + e)[0] - smoothstep(t - e)[0]) / (2.0 * e), max_relative = 1e-8);
            assert_relative_eq!(dds, (smoothstep(t + e)[1] - smoothstep(t - e)[1]) / (2.0 * e), epsilon = 1e-6, max_relative = 1e-7);
            assert_relative_eq!(s + smoothstep(1.0 - t)[0], 1.0, epsilon = 1e-15);
        }
        assert_eq!(smoothstep(-0.5), [0.0; 3]);
        assert_eq!(smoothstep(1.5), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn cutoff_integrals_match_closed_forms() {
        let c = CutoffIntegrals::new(3).unwrap();
        assert_relative_eq!(c.x0, 6.0 + 2.0 * 181.0 / 462.0, epsilon = 1e-13);
        assert_relative_eq!(c.x1, 20.0 / 7.0, epsilon = 1e-13);
        assert_relative_eq!(c.x2, 240.0 / 7.0, epsilon = 1e-12);
        assert_relative_eq!(c.x02, -20.0 / 7.0, epsilon = 1e-13);
        assert!(CutoffIntegrals::new(0).is_err());
    }

    #[test]
    fn supports_are_disjoint() {
        for n in 1..6 {
            assert_eq!(support_overlap(n, n + 1), 0.0);
            assert_relative_eq!(support_overlap(n, n), CutoffIntegrals::new(n).unwrap().x0, epsilon = 1e-12);
            assert_eq!(cutoff(n, f64::powi(2.0, n as i32))[0], 0.0);
            assert_eq!(cutoff(n, f64::powi(2.0, n as i32 + 1))[0], 0.0);
        }
    }

    #[test]
    fn right_angle_outlets_grow_with_height() {
        let f = make_layer(build_trihedral([FRAC_PI_2; 3]).unwrap()).unwrap();
        for j in 0..3 {
            let [a, b] = outlet_lengths(&f, j, 4.0);
            assert_relative_eq!(a, 4.0, epsilon = 1e-12);
            assert_relative_eq!(b, 4.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn mass_solve_inverts() {
        let m = SparseSymmetric::from_rows(vec![vec![(0, 4.0), (1, 1.0)], vec![(0, 1.0), (1, 3.0), (2, 1.0)], vec![(1, 1.0), (2, 2.0)]]);
        let x = mass_solve(&m, &[1.0, 2.0, 3.0]).unwrap();
        let b = m.matvec(&x);
        for (bi, ei) in b.iter().zip([1.0, 2.0, 3.0]) {
            assert_relative_eq!(*bi, ei, epsilon = 1e-12);
        }
    }

    #[test]
    fn config_guards() {
        assert!(WeylConfig { n: 2, kappa: 0.0, h: 0.25 }.validate().is_err());
        assert!(WeylConfig { n: 0, kappa: 0.0, h: 0.1 }.validate().is_err());
        assert!(WeylConfig { n: 2, kappa: -1.0, h: 0.1 }.validate().is_err());
        assert!(WeylConfig { n: 2, kappa: 1.0, h: 0.1 }.validate().is_ok());
    }
}
