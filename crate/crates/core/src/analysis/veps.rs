//! Negativity of the quadratic form on `V^ε = v_†(x, y) e^{-εz}` for
//! regular layers, evaluated from the waveguide ground state.

use serde::{Deserialize, Serialize};

use super::certify::{Certificate, CertificateKind, Evidence, Verdict};
use super::waveguide::{lambda1_solve, LevelSolution};
use super::{LevelRecord, Numerics};
use crate::error::{Error, Result};
use crate::geometry::{LayerGeometry, Vec2};
use crate::sparse::Neumaier;

/// Term breakdown of `value(ε) = T1 + T2 + T3` on the grid of `ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VepsTerms {
    /// Vertex angle `α`.
    pub alpha: f64,
    /// Dihedral angle `β`.
    pub beta: f64,
    pub eps: Vec<f64>,
    pub t1: Vec<f64>,
    pub t2: Vec<f64>,
    pub t3: Vec<f64>,
    pub value: Vec<f64>,
    /// The same values from the next coarser mesh.
    pub value_coarse: Vec<f64>,
    /// `T3` at `ε = 0`.
    pub t3_zero: f64,
    pub eps_star: f64,
    pub min_value: f64,
    /// `|value − value_coarse|` at `ε*`.
    pub quadrature_error: f64,
    /// Outlet length of the ground-state solve.
    #[serde(rename = "R")]
    pub r: f64,
    /// Solver output for the ground state of `ω(β)`.
    pub levels: Vec<LevelRecord>,
}

/// 7-point rule exact for degree 5 on a triangle: barycentric points and
/// weights summing to one.
fn triangle_rule() -> Vec<([f64; 3], f64)> {
    let mut out = vec![([1.0 / 3.0; 3], 0.225)];
    for (a, b, w) in [
        (0.059_715_871_789_770, 0.470_142_064_105_115, 0.132_394_152_788_506),
        (0.797_426_985_353_087, 0.101_286_507_323_456, 0.125_939_180_544_827),
    ] {
        out.push(([a, b, b], w));
        out.push(([b, a, b], w));
        out.push(([b, b, a], w));
    }
    out
}

/// `∫_{ω₊} v² e^{-k x}`, with `ω₊` the half of the profile on the side of
/// the first outlet (below the symmetry line through both vertices).
fn half_integral(level: &LevelSolution, v: &[f64], k: f64) -> f64 {
    let mesh = &level.mesh;
    let theta = match mesh.origin {
        crate::mesh2d::MeshOrigin::LShape { theta, .. } => theta,
        _ => unreachable!("waveguide meshes are L-shaped"),
    };
    let axis = Vec2::new((theta / 2.0).cos(), (theta / 2.0).sin());
    let rule = triangle_rule();
    let mut sum = Neumaier::default();
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let p = [mesh.nodes[tri[0]], mesh.nodes[tri[1]], mesh.nodes[tri[2]]];
        let c = (p[0] + p[1] + p[2]) / 3.0;
        if axis.perp(&c) >= 0.0 {
            continue;
        }
        let area = mesh.signed_area(t);
        for (l, w) in &rule {
            let x = l[0] * p[0].x + l[1] * p[1].x + l[2] * p[2].x;
            let u = l[0] * v[tri[0]] + l[1] * v[tri[1]] + l[2] * v[tri[2]];
            sum.add(w * area * u * u * (-k * x).exp());
        }
    }
    sum.sum()
}

struct Evaluated {
    t1: Vec<f64>,
    t2: Vec<f64>,
    t3: Vec<f64>,
    t3_zero: f64,
}

fn evaluate(level: &LevelSolution, alpha: f64, beta: f64, eps: &[f64]) -> Result<Evaluated> {
    let v = level.nodal(0);
    let norm2 = level.problem.m.quadratic_form(&level.result.eigenvectors[0]);
    let cot_a = 1.0 / (alpha / 2.0).tan();
    let (sb, cb) = (beta / 2.0).sin_cos();
    let apex = Vec2::zeros();
    let inner = Vec2::new(1.0 / (beta / 2.0).tan(), 1.0);
    let loc = level.mesh.locator();
    let line = |e: f64| loc.segment_quadrature(&v, apex, inner, |tau| (-2.0 * e * cot_a * tau * cb).exp());
    let t3_zero = -2.0 * cot_a * sb * line(0.0)?;
    let mut out = Evaluated { t1: Vec::new(), t2: Vec::new(), t3: Vec::new(), t3_zero };
    for &e in eps {
        out.t1.push(e * norm2 / 2.0);
        out.t2.push(2.0 * e * cot_a * cot_a * half_integral(level, &v, 2.0 * e * cot_a));
        out.t3.push(-2.0 * cot_a * sb * line(e)?);
    }
    Ok(out)
}

/// Evaluates `value(ε)` on `eps_grid` for a regular layer. The ground state
/// of `ω(β)` is computed with the given numerics (at least three levels);
/// the two finest levels provide the quadrature error estimate.
pub fn veps_certificate(layer: &LayerGeometry, eps_grid: &[f64], numerics: &Numerics) -> Result<Certificate> {
    let a = &layer.angle;
    let regular = a.vertex_angles.iter().all(|x| (x - a.vertex_angles[0]).abs() < 1e-9)
        && a.dihedral_angles.iter().all(|x| (x - a.dihedral_angles[0]).abs() < 1e-9);
    if !regular {
        return Err(Error::Precondition("the V^eps construction needs a regular layer".into()));
    }
    if numerics.levels < 3 {
        return Err(Error::Precondition(format!("{} levels given; the ground state needs at least 3", numerics.levels)));
    }
    if eps_grid.is_empty() || eps_grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::Invalid("eps grid must be nonempty and positive".into()));
    }
    let alpha = a.vertex_angles[0];
    let beta = a.dihedral_angles[0];
    let (thr, solve) = lambda1_solve(beta, numerics)?;
    let nl = solve.levels.len();
    let fine = evaluate(&solve.levels[nl - 1], alpha, beta, eps_grid)?;
    let coarse = evaluate(&solve.levels[nl - 2], alpha, beta, eps_grid)?;
    let sum = |e: &Evaluated| -> Vec<f64> { (0..eps_grid.len()).map(|i| e.t1[i] + e.t2[i] + e.t3[i]).collect() };
    let value = sum(&fine);
    let value_coarse = sum(&coarse);
    let (istar, &min_value) = value.iter().enumerate().min_by(|x, y| x.1.total_cmp(y.1)).expect("nonempty grid");
    let quadrature_error = (value[istar] - value_coarse[istar]).abs();
    let verdict = if min_value < 0.0 && -min_value > quadrature_error { Verdict::Nonempty } else { Verdict::Inconclusive };
    let terms = VepsTerms {
        alpha,
        beta,
        eps: eps_grid.to_vec(),
        t1: fine.t1,
        t2: fine.t2,
        t3: fine.t3,
        value,
        value_coarse,
        t3_zero: fine.t3_zero,
        eps_star: eps_grid[istar],
        min_value,
        quadrature_error,
        r: thr.r,
        levels: thr.levels.clone(),
    };
    Ok(Certificate {
        kind: CertificateKind::Veps,
        verdict,
        threshold: thr.extrapolated,
        threshold_error: thr.error_indicator,
        evidence: Evidence::Veps(terms),
        margin: -min_value,
        combined_indicator: quadrature_error,
        is_proof: false,
        notes: vec![
            "T1 = eps |v|^2 / 2 bounds eps^2 |V^eps|^2 over the layer piece from above, so it covers both the 3D norm and the cross-section norm readings".into(),
            format!("ground state on R = {}, h = {}", thr.r, thr.h),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_rule_is_exact_for_quintics() {
        let rule = triangle_rule();
        let total: f64 = rule.iter().map(|r| r.1).sum();
        assert!((total - 1.0).abs() < 1e-14);
        // ∫ λ₁^a λ₂^b over the reference triangle / area = 2 a! b! / (a + b + 2)!
        let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
        for (p, q) in [(2u32, 3u32), (5, 0), (1, 1), (4, 1)] {
            let num: f64 = rule.iter().map(|(l, w)| w * l[0].powi(p as i32) * l[1].powi(q as i32)).sum();
            let exact = 2.0 * fact(p) * fact(q) / fact(p + q + 2);
            assert!((num - exact).abs() < 1e-12, "{p} {q}: {num} vs {exact}");
        }
    }

    #[test]
    fn rejects_irregular_layers_and_shallow_levels() {
        use crate::geometry::{build_regular, build_trihedral, make_layer};
        let t = make_layer(build_trihedral([1.5, 1.2, 1.5]).unwrap()).unwrap();
        assert!(matches!(veps_certificate(&t, &[0.1], &Numerics::default()), Err(Error::Precondition(_))));
        let r = make_layer(build_regular(3, 1.0).unwrap()).unwrap();
        let shallow = Numerics { levels: 2, ..Numerics::default() };
        assert!(matches!(veps_certificate(&r, &[0.1], &shallow), Err(Error::Precondition(_))));
        assert!(veps_certificate(&r, &[], &Numerics::default()).is_err());
    }

    #[test]
    fn right_angle_layer_is_negative_at_small_eps() {
        use crate::geometry::{build_trihedral, make_layer};
        let f = make_layer(build_trihedral([std::f64::consts::FRAC_PI_2; 3]).unwrap()).unwrap();
        let n = Numerics { h: 1.0 / 32.0, levels: 3, ..Numerics::default() };
        let c = veps_certificate(&f, &[1e-4, 0.05, 10.0], &n).unwrap();
        let Evidence::Veps(t) = &c.evidence else { panic!("wrong evidence") };
        assert!(t.value[1] < 0.0);
        assert!(t.value[2] > 0.0);
        assert!((t.value[0] - t.t3_zero).abs() < 0.05 * t.t3_zero.abs());
        assert_eq!(c.verdict, Verdict::Nonempty);
    }
}
