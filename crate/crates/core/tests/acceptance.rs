//! Acceptance run: every criterion at its stated tolerance, one PASS/FAIL
//! line each. Runs as a plain binary so that the lines are always shown.
//!
//! The process exits nonzero when a criterion fails, except for criteria in
//! `KNOWN_INFEASIBLE`, which must fail exactly in the sub-check named there
//! while every other sub-check passes.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use dirlayer::analysis::*;
use dirlayer::assembly::{assemble_p1, assemble_q1};
use dirlayer::eigensolve::{smallest_eigenpairs, SolverConfig};
use dirlayer::geometry::{build_regular, build_trihedral, make_layer, LayerGeometry};
use dirlayer::grid3d::VoxelGrid;
use dirlayer::mesh2d::{BoundaryTag, TriMesh};
use rand::SeedableRng;

/// Criterion 9 asks for `‖Ψ_n‖ ≥ 0.9` from `n = 2`. With unit-width ramps on
/// `[2ⁿ, 2ⁿ⁺¹]` and the `2^{-n/2}` scaling, `‖Ψ₂‖² ≤ (2 + 2·181/462)/4 < 0.7`.
const KNOWN_INFEASIBLE: &[(u8, &str)] = &[(9, "norms")];

type Checks = Vec<(&'static str, bool, String)>;

struct Suite {
    records: Vec<(String, Vec<LevelRecord>)>,
    voxel_bounds: Vec<(String, Vec<f64>)>,
    failures: Vec<String>,
}

impl Suite {
    fn report(&mut self, id: u8, outcome: Result<Checks, String>, elapsed: Duration) {
        let (pass, detail, failed) = match outcome {
            Ok(checks) => {
                let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
                let detail = checks
                    .iter()
                    .map(|(name, ok, d)| format!("{name} {} ({d})", if *ok { "ok" } else { "FAILED" }))
                    .collect::<Vec<_>>()
                    .join("; ");
                (failed.is_empty(), detail, failed)
            }
            Err(e) => (false, format!("error: {e}"), vec!["error"]),
        };
        let known = KNOWN_INFEASIBLE.iter().find(|k| k.0 == id);
        let tag = match (pass, known) {
            (true, _) => "PASS",
            (false, Some(k)) if failed == [k.1] => "FAIL (known infeasible)",
            (false, _) => "FAIL",
        };
        if tag == "FAIL" {
            self.failures.push(format!("criterion {id}"));
        }
        let mut out = std::io::stdout().lock();
        writeln!(out, "criterion {id:>2}: {tag} [{:.1}s] {detail}", elapsed.as_secs_f64()).unwrap();
        out.flush().unwrap();
    }

    fn run(&mut self, id: u8, f: impl FnOnce(&mut Self) -> Result<Checks, String>) {
        let t = Instant::now();
        let outcome = f(self);
        self.report(id, outcome, t.elapsed());
    }
}

fn check(name: &'static str, ok: bool, detail: impl Into<String>) -> (&'static str, bool, String) {
    (name, ok, detail.into())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn err(e: dirlayer::Error) -> String {
    e.to_string()
}

/// P1 eigenvalue on nested refinements of `base`, extrapolated.
fn p1_benchmark(base: TriMesh, levels: usize) -> Result<(f64, Vec<LevelRecord>), String> {
    let mut mesh = Arc::new(base);
    let mut values = Vec::new();
    let mut records = Vec::new();
    for l in 0..levels {
        if l > 0 {
            mesh = Arc::new(mesh.refine());
        }
        let p = assemble_p1(&mesh).map_err(err)?;
        let r = smallest_eigenpairs(&p, &SolverConfig::default()).and_then(|r| r.require_converged()).map_err(err)?;
        values.push(r.eigenvalues[0]);
        records.push(LevelRecord::new(mesh.h, p.dim(), &r));
    }
    let (e, _) = richardson(&values).map_err(err)?;
    Ok((e, records))
}

fn criterion_1(s: &mut Suite) -> Result<Checks, String> {
    let t = Instant::now();
    let square = TriMesh::rectangle(1.0, 1.0, 8, 8, [BoundaryTag::Dirichlet; 4]).map_err(err)?;
    let (sq, rec) = p1_benchmark(square, 3)?;
    let t_square = t.elapsed();
    s.records.push(("unit square".into(), rec));

    let t = Instant::now();
    let mut values = Vec::new();
    let mut rec = Vec::new();
    for n in [8, 16] {
        let g = VoxelGrid::unit_cube(n).map_err(err)?;
        let p = assemble_q1(&g).map_err(err)?;
        let r = smallest_eigenpairs(&p, &SolverConfig::default()).and_then(|r| r.require_converged()).map_err(err)?;
        values.push(r.eigenvalues[0]);
        rec.push(LevelRecord::new(g.h, p.dim(), &r));
    }
    let (cube, _) = richardson(&values).map_err(err)?;
    let t_cube = t.elapsed();
    s.records.push(("unit cube".into(), rec));

    let tags = [BoundaryTag::Dirichlet, BoundaryTag::Neumann, BoundaryTag::Dirichlet, BoundaryTag::Neumann];
    let strip_mesh = TriMesh::rectangle(3.0, 1.0, 24, 8, tags).map_err(err)?;
    let (strip, rec) = p1_benchmark(strip_mesh, 3)?;
    s.records.push(("mixed strip".into(), rec));

    Ok(vec![
        check(
            "square",
            rel(sq, 2.0 * PI2) <= 2e-3 && t_square.as_secs_f64() < 30.0,
            format!("rel err {:.2e} in {:.1?}", rel(sq, 2.0 * PI2), t_square),
        ),
        check(
            "cube",
            rel(cube, 3.0 * PI2) <= 1e-2 && t_cube.as_secs_f64() < 180.0,
            format!("rel err {:.2e} in {:.1?}", rel(cube, 3.0 * PI2), t_cube),
        ),
        check("strip", rel(strip, PI2) <= 5e-3, format!("rel err {:.2e}", rel(strip, PI2))),
    ])
}

fn criterion_2(s: &mut Suite, numerics: &Numerics) -> Result<Checks, String> {
    let t = Instant::now();
    let thetas: Vec<f64> = (0..12).map(|i| 0.3 + 2.7 * i as f64 / 11.0).collect();
    let scan = scan_theta(&thetas, numerics).map_err(err)?;
    for r in &scan.records {
        s.records.push((format!("theta scan {:.4}", r.parameter), r.levels.clone()));
    }
    let hi = lambda1_waveguide(3.1, numerics).map_err(err)?;
    let lo = lambda1_waveguide(0.1, numerics).map_err(err)?;
    s.records.push(("theta 3.1".into(), hi.levels.clone()));
    s.records.push(("theta 0.1".into(), lo.levels.clone()));
    let elapsed = t.elapsed();
    let values: Vec<String> = scan.records.iter().map(|r| format!("{:.4}", r.eigenvalues[0] / PI2)).collect();
    Ok(vec![
        check("increasing", scan.strictly_increasing, format!("lambda/pi^2 = [{}]", values.join(", "))),
        check("limits", scan.within_limits, "(pi^2/4, pi^2)"),
        check("theta 3.1", hi.extrapolated > 0.95 * PI2, format!("{:.6} pi^2", hi.extrapolated / PI2)),
        check("theta 0.1", lo.extrapolated < 0.35 * PI2, format!("{:.6} pi^2", lo.extrapolated / PI2)),
        check("runtime", elapsed.as_secs_f64() < 900.0, format!("{elapsed:.1?}")),
    ])
}

fn criterion_3(s: &mut Suite, numerics: &Numerics) -> Result<Checks, String> {
    let mut checks = Vec::new();
    for (name, theta) in [("right angle", FRAC_PI_2), ("theta 2.4", 2.4)] {
        let c = count_below_threshold(theta, numerics).map_err(err)?;
        s.records.push((format!("count {theta}"), c.levels.clone()));
        checks.push(check(name, c.count == 1, format!("count {}, inside band {}, raw {}", c.count, c.inconclusive, c.raw_count)));
    }
    let mut found = None;
    for theta in [0.2, 0.15, 0.1] {
        let c = count_below_threshold(theta, numerics).map_err(err)?;
        s.records.push((format!("count {theta}"), c.levels.clone()));
        if c.count >= 2 {
            found = Some((theta, c.count));
            break;
        }
    }
    checks.push(check(
        "small angle",
        found.is_some(),
        found.map_or("no theta <= 0.2 with two or more".into(), |(t, c)| format!("theta {t}: count {c}")),
    ));
    Ok(checks)
}

fn criterion_4(s: &mut Suite, numerics: &Numerics) -> Result<Checks, String> {
    let scan = scan_truncation(FRAC_PI_2, &[2.0, 3.0, 4.0, 5.0, 6.0], numerics).map_err(err)?;
    for r in scan.records.iter().chain(std::iter::once(&scan.asymptote)) {
        s.records.push((format!("R scan {}", r.parameter), r.levels.clone()));
    }
    let mut checks = vec![
        check("nondecreasing", scan.nondecreasing, ""),
        check("below asymptote", scan.below_asymptote, format!("lambda_inf {:.6}", scan.asymptote.eigenvalues[0])),
    ];
    match &scan.fit {
        Some(f) => {
            checks.push(check("fit quality", f.r_squared >= 0.98, format!("R^2 {:.5}", f.r_squared)));
            checks.push(check(
                "exponent",
                f.relative_deviation <= 0.3,
                format!("{:.4} vs {:.4}, {:.1}%", f.exponent, f.reference_exponent, 100.0 * f.relative_deviation),
            ));
        }
        None => checks.push(check("fit", false, scan.notice.clone().unwrap_or_default())),
    }
    Ok(checks)
}

fn upper_bounds(c: &Certificate) -> Vec<f64> {
    match &c.evidence {
        Evidence::UpperBound { levels, .. } | Evidence::AbsenceScan { levels, .. } => levels.iter().map(|l| l.upper_bound).collect(),
        Evidence::Veps(_) => Vec::new(),
    }
}

fn voxel_records(c: &Certificate) -> Vec<LevelRecord> {
    match &c.evidence {
        Evidence::UpperBound { levels, .. } | Evidence::AbsenceScan { levels, .. } => levels.iter().map(|l| l.solver.clone()).collect(),
        Evidence::Veps(v) => v.levels.clone(),
    }
}

fn fichera() -> Result<LayerGeometry, String> {
    make_layer(build_trihedral([FRAC_PI_2; 3]).map_err(err)?).map_err(err)
}

fn criterion_5(s: &mut Suite, numerics: &Numerics) -> Result<Checks, String> {
    let t = Instant::now();
    let c = certify_discrete(&fichera()?, 6.0, 0.1, 2, numerics).map_err(err)?;
    let elapsed = t.elapsed();
    s.voxel_bounds.push(("Fichera".into(), upper_bounds(&c)));
    s.records.push(("Fichera voxels".into(), voxel_records(&c)));
    Ok(vec![
        check("verdict", c.verdict == Verdict::Nonempty, format!("{:?}", c.verdict)),
        check(
            "margin",
            c.margin > c.combined_indicator,
            format!(
                "threshold {:.5}, bound {:.5}, margin {:.4} vs indicator {:.2e}",
                c.threshold,
                c.threshold - c.margin,
                c.margin,
                c.combined_indicator
            ),
        ),
        check("runtime", elapsed.as_secs_f64() < 600.0, format!("{elapsed:.1?}")),
    ])
}

fn criterion_6(s: &mut Suite, numerics: &Numerics) -> Result<Checks, String> {
    let mut grid: Vec<f64> = (0..=30).map(|k| f64::powf(10.0, -3.0 + k as f64 / 10.0)).collect();
    grid.push(1e-4);
    let mut checks = Vec::new();
    for (name, n, alpha) in [("(3, pi/3)", 3, PI / 3.0), ("(3, pi/2)", 3, FRAC_PI_2), ("(4, pi/3)", 4, PI / 3.0)] {
        let layer = make_layer(build_regular(n, alpha).map_err(err)?).map_err(err)?;
        let c = veps_certificate(&layer, &grid, numerics).map_err(err)?;
        s.records.push((format!("veps {name}"), voxel_records(&c)));
        let Evidence::Veps(v) = &c.evidence else { return Err("unexpected evidence".into()) };
        let negative = v.value[..31].iter().filter(|x| **x < 0.0).count();
        let limit = rel(v.value[31], v.t3_zero);
        checks.push(check(
            name,
            c.verdict == Verdict::Nonempty && negative > 0 && limit <= 0.05,
            format!(
                "{:?}, min {:.4} at eps {:.1e}, {negative}/31 negative, |value(1e-4) - T3(0)| = {:.2}%",
                c.verdict,
                v.min_value,
                v.eps_star,
                100.0 * limit
            ),
        ));
    }
    Ok(checks)
}

fn criterion_7(s: &mut Suite, numerics: &Numerics) -> Result<Checks, String> {
    let c = absence_experiment(0.26, numerics, &AbsenceOptions::default()).map_err(err)?;
    let bounds = upper_bounds(&c);
    s.voxel_bounds.push(("absence".into(), bounds.clone()));
    s.records.push(("absence voxels".into(), voxel_records(&c)));
    let labelled = !c.is_proof && c.notes.iter().any(|n| n.starts_with("non-proof"));
    Ok(vec![
        check("verdict", c.verdict == Verdict::AbsentConsistent, format!("{:?}", c.verdict)),
        check(
            "bounds",
            bounds.len() == 2 && bounds.iter().all(|b| *b >= 0.999 * c.threshold),
            format!("{bounds:.4?} vs 0.999 * {:.5}", c.threshold),
        ),
        check("labelled", labelled, "non-proof"),
    ])
}

fn criterion_8() -> Result<Checks, String> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20_240_601);
    let mut violations = 0;
    for _ in 0..1000 {
        let r = hardy_check(&HardySample::random(&mut rng)).map_err(err)?;
        if !(r.lemma.holds && r.corollary.holds) {
            violations += 1;
        }
    }

    // v = e^{1-z}, sampled every 2.5e-4 up to 40.
    let z: Vec<f64> = (0..=156_000).map(|k| 1.0 + k as f64 * 2.5e-4).collect();
    let e = hardy_check(&HardySample::from_fn(z, 2.0, |z| (1.0 - z).exp())).map_err(err)?;
    // Closed forms: ∫₂^∞ e^{2-2z}/z², 4∫₂^∞ e^{2-2z} + 4∫₁² e^{2-2z}, 4∫₁^∞ e^{2-2z} + 2∫₁² e^{2-2z}.
    let exp_err = [
        rel(e.lemma.lhs, 0.011_815_947_670_301_7),
        rel(e.lemma.rhs, 2.0),
        rel(e.corollary.lhs, 0.011_815_947_670_301_7),
        rel(e.corollary.rhs, 2.864_664_716_763_39),
    ];

    // v = 1/z on geometric breakpoints up to 1000, then linearly to zero at 2000.
    let mut z: Vec<f64> = std::iter::successors(Some(1.0f64), |z| Some(z * 1.0005)).take_while(|z| *z <= 1000.0).collect();
    z.push(2000.0);
    let p = hardy_check(&HardySample::from_fn(z, 2.0, |z| 1.0 / z)).map_err(err)?;
    let pow_err = [rel(p.lemma.lhs, 1.0 / 24.0), rel(p.lemma.rhs, 1.75), rel(p.corollary.lhs, 1.0 / 24.0), rel(p.corollary.rhs, 7.0 / 3.0)];

    let zero = hardy_check(&HardySample { breakpoints: vec![1.0, 10.0], values: vec![0.0, 0.0], r0: 2.0 }).map_err(err)?;
    let worst = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    Ok(vec![
        check("random", violations == 0, format!("{violations} of 1000 samples violate")),
        check(
            "exp",
            e.lemma.holds && e.corollary.holds && worst(&exp_err) <= 1e-6,
            format!("lhs {:.10} <= rhs {:.6}, max rel err {:.1e}", e.lemma.lhs, e.lemma.rhs, worst(&exp_err)),
        ),
        check(
            "power",
            p.lemma.holds && p.corollary.holds && worst(&pow_err) <= 1e-6,
            format!("lhs {:.10} <= rhs {:.6}, max rel err {:.1e}", p.lemma.lhs, p.lemma.rhs, worst(&pow_err)),
        ),
        check("zero", zero.lemma.holds && zero.lemma.lhs == 0.0, ""),
    ])
}

fn criterion_9(s: &mut Suite, numerics: &Numerics) -> Result<Checks, String> {
    let h = 1.0 / 64.0;
    let configs: Vec<WeylConfig> = [0.0, 1.0].iter().flat_map(|&kappa| (2..=5).map(move |n| WeylConfig { n, kappa, h })).collect();
    let reports = weyl_sequence(&fichera()?, &configs, &Numerics { h, ..numerics.clone() }).map_err(err)?;
    s.records.push(("Weyl ground state".into(), reports[0].levels.clone()));
    let mut checks = Vec::new();
    for kappa in [0.0, 1.0] {
        let res: Vec<f64> = reports.iter().filter(|r| r.kappa == kappa).map(|r| r.residual).collect();
        let name = if kappa == 0.0 { "decreasing, kappa 0" } else { "decreasing, kappa 1" };
        checks.push(check(name, res.windows(2).all(|w| w[1] < w[0]), format!("{res:.4?}")));
    }
    let norms: Vec<f64> = reports.iter().filter(|r| r.kappa == 0.0).map(|r| r.norm).collect();
    checks.push(check("norms", norms.iter().all(|n| *n >= 0.9), format!("{norms:.4?}")));
    let overlap = (2..=5u32).flat_map(|n| (n + 1..=5).map(move |m| support_overlap(n, m))).fold(0.0, f64::max);
    checks.push(check("disjoint", overlap == 0.0, format!("max overlap {overlap}")));
    Ok(checks)
}

fn criterion_10(s: &Suite) -> Result<Checks, String> {
    let mut worst_res: (f64, &str) = (0.0, "");
    let mut worst_def: (f64, &str) = (0.0, "");
    let mut pairs = 0;
    let mut non_monotone = Vec::new();
    for (name, levels) in &s.records {
        for l in levels {
            pairs += l.residuals.len();
            if l.max_residual() > worst_res.0 {
                worst_res = (l.max_residual(), name);
            }
            if l.orthonormality_defect > worst_def.0 {
                worst_def = (l.orthonormality_defect, name);
            }
        }
        if !nonincreasing_levels(levels) {
            non_monotone.push(name.clone());
        }
    }
    for (name, b) in &s.voxel_bounds {
        if b.windows(2).any(|w| w[1] > w[0]) {
            non_monotone.push(format!("{name} upper bounds"));
        }
    }
    Ok(vec![
        check("residuals", worst_res.0 <= 1e-8, format!("max {:.2e} ({}) over {pairs} pairs", worst_res.0, worst_res.1)),
        check("orthonormality", worst_def.0 <= 1e-8, format!("max {:.2e} ({})", worst_def.0, worst_def.1)),
        check("monotone", non_monotone.is_empty(), format!("{} suites, offenders {non_monotone:?}", s.records.len())),
    ])
}

fn main() {
    let numerics = Numerics::default();
    let mut s = Suite { records: Vec::new(), voxel_bounds: Vec::new(), failures: Vec::new() };
    s.run(1, criterion_1);
    s.run(2, |s| criterion_2(s, &numerics));
    s.run(3, |s| criterion_3(s, &numerics));
    s.run(4, |s| criterion_4(s, &numerics));
    s.run(5, |s| criterion_5(s, &numerics));
    s.run(6, |s| criterion_6(s, &numerics));
    s.run(7, |s| criterion_7(s, &numerics));
    s.run(8, |_| criterion_8());
    s.run(9, |s| criterion_9(s, &numerics));
    s.run(10, |s| criterion_10(s));
    if !s.failures.is_empty() {
        eprintln!("unexpected failures: {}", s.failures.join(", "));
        std::process::exit(1);
    }
}
