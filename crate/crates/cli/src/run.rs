//! Dispatch of a [`RunConfig`] to the analysis operations, and the report
//! bundle written for it.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use dirlayer::analysis::*;
use dirlayer::geometry::{build_trihedral, lshape_profile, make_layer, LayerGeometry};
use dirlayer::grid3d::{voxelize, CutBc};
use dirlayer::mesh2d::{mesh_lshape_with, EndCondition, TriMesh};
use rand::SeedableRng;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{Angle, Command, Format, GeometrySpec, HardySource, RunConfig};
use crate::error::CliError;
use crate::output::{pgm_heatmap, svg_plot, Series};

/// Everything a run produces before it is written out.
pub struct Outcome {
    pub result: Value,
    /// Verdict of a certificate, if the command produced one.
    pub verdict: Option<Verdict>,
    pub provenance: BTreeMap<String, String>,
    pub csv: Option<Table>,
    pub svg: Option<String>,
    pub pgm: Option<Vec<u8>>,
}

pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&'static str]) -> Self {
        Self { header: header.to_vec(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| CliError::Io(e.into_error()))
    }
}

/// `{:?}` gives the shortest representation that reads back exactly.
fn num(x: f64) -> String {
    format!("{x:?}")
}

fn to_value<T: Serialize>(v: &T) -> Result<Value, CliError> {
    Ok(serde_json::to_value(v)?)
}

fn sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn mesh_digest(mesh: &TriMesh) -> Result<String, CliError> {
    let mut buf = Vec::new();
    mesh.write_text(&mut buf)?;
    Ok(sha256(&buf))
}

/// Digest of the finest L-shaped mesh used for `(θ, R)` at size `h`.
fn lshape_digest(theta: f64, r: f64, h: f64, ends: EndCondition) -> Result<String, CliError> {
    let profile = lshape_profile(theta, r)?;
    let mut mesh = std::sync::Arc::new(mesh_lshape_with(&profile, 0.5, ends)?);
    while mesh.h > h {
        mesh = std::sync::Arc::new(mesh.refine());
    }
    mesh_digest(&mesh)
}

fn voxel_digests(layer: &LayerGeometry, r: f64, h: f64, levels: usize, out: &mut BTreeMap<String, String>) -> Result<(), CliError> {
    for l in 0..levels {
        let hl = h * f64::powi(2.0, (levels - 1 - l) as i32);
        let mut buf = Vec::new();
        voxelize(layer, r, hl, CutBc::Dirichlet)?.write_runs(&mut buf)?;
        out.insert(format!("voxel grid h={hl}"), sha256(&buf));
    }
    Ok(())
}

fn angle_table(layer: &LayerGeometry) -> Table {
    let mut t = Table::new(&["j", "vertex_angle", "dihedral_angle", "ray_x", "ray_y", "ray_z"]);
    let a = &layer.angle;
    for j in 0..a.n() {
        let r = a.rays[j];
        t.push(vec![j.to_string(), num(a.vertex_angles[j]), num(a.dihedral_angles[j]), num(r.x), num(r.y), num(r.z)]);
    }
    t
}

fn angle_value(layer: &LayerGeometry) -> Result<Value, CliError> {
    let mut v = to_value(layer)?;
    v["beta_min_index"] = json!(layer.angle.beta_min_index());
    v["law_of_cosines_defect"] = json!(layer.angle.law_of_cosines_defect());
    Ok(v)
}

fn threshold_row(t: &ThresholdResult) -> Vec<String> {
    vec![
        num(t.theta_used),
        num(t.r),
        num(t.h),
        num(t.extrapolated),
        num(t.extrapolated / PI2),
        num(t.error_indicator),
        num(t.discretization_indicator),
        num(t.truncation_indicator),
    ]
}

const THRESHOLD_HEADER: [&str; 8] =
    ["theta", "R", "h", "lambda1", "lambda1_over_pi2", "error_indicator", "discretization_indicator", "truncation_indicator"];

fn certificate_table(c: &Certificate) -> Table {
    let mut t = Table::new(&["level", "h", "dofs", "upper_bound", "residual", "threshold", "threshold_error", "verdict"]);
    let levels = match &c.evidence {
        Evidence::UpperBound { levels, .. } | Evidence::AbsenceScan { levels, .. } => levels.as_slice(),
        Evidence::Veps(_) => &[],
    };
    for (l, lv) in levels.iter().enumerate() {
        t.push(vec![
            l.to_string(),
            num(lv.grid.h),
            lv.solver.dofs.to_string(),
            num(lv.upper_bound),
            num(lv.solver.max_residual()),
            num(c.threshold),
            num(c.threshold_error),
            format!("{:?}", c.verdict),
        ]);
    }
    t
}

fn hardy_samples(source: &HardySource) -> Result<Vec<(String, HardySample)>, CliError> {
    Ok(match source {
        HardySource::Exp { z_max, step, r0 } => {
            let n = ((z_max - 1.0) / step).ceil() as usize;
            let z: Vec<f64> = (0..=n).map(|k| 1.0 + k as f64 * step).collect();
            vec![("exp(1-z)".into(), HardySample::from_fn(z, *r0, |z| (1.0 - z).exp()))]
        }
        HardySource::Inverse { z_max, ratio, r0 } => {
            let mut z: Vec<f64> = std::iter::successors(Some(1.0f64), |z| Some(z * ratio)).take_while(|z| z <= z_max).collect();
            z.push(2.0 * z_max);
            vec![("1/z".into(), HardySample::from_fn(z, *r0, |z| 1.0 / z))]
        }
        HardySource::Random { count, seed } => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(*seed);
            (0..*count).map(|k| (format!("random {k}"), HardySample::random(&mut rng))).collect()
        }
        HardySource::File { path } => {
            let text = std::fs::read_to_string(path)?;
            vec![(path.display().to_string(), serde_json::from_str(&text)?)]
        }
    })
}

pub fn execute(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let numerics = &cfg.numerics;
    let want_pgm = cfg.formats.contains(&Format::Pgm);
    let mut provenance = BTreeMap::new();
    let mut out = Outcome { result: Value::Null, verdict: None, provenance: BTreeMap::new(), csv: None, svg: None, pgm: None };
    match &cfg.command {
        Command::Angle { geometry } => {
            let layer = geometry.layer()?;
            out.result = angle_value(&layer)?;
            out.csv = Some(angle_table(&layer));
        }
        Command::Waveguide { theta } => {
            let (t, solve) = lambda1_solve(theta.0, numerics)?;
            let fine = solve.finest();
            provenance.insert("finest mesh".into(), mesh_digest(&fine.mesh)?);
            let mut table = Table::new(&THRESHOLD_HEADER);
            table.push(threshold_row(&t));
            out.csv = Some(table);
            if want_pgm {
                out.pgm = Some(pgm_heatmap(&fine.mesh, &fine.nodal(0), 800));
            }
            out.result = to_value(&t)?;
        }
        Command::ScanTheta { thetas } => {
            let th: Vec<f64> = thetas.iter().map(|a| a.0).collect();
            let scan = scan_theta(&th, numerics)?;
            let mut table = Table::new(&["theta", "lambda1", "lambda1_over_pi2", "error_indicator", "R", "h", "dofs"]);
            for r in &scan.records {
                table.push(vec![
                    num(r.parameter),
                    num(r.eigenvalues[0]),
                    num(r.eigenvalues[0] / PI2),
                    num(r.error_indicators[0]),
                    num(r.r),
                    num(r.h),
                    r.dofs.to_string(),
                ]);
                provenance.insert(format!("mesh theta={}", r.parameter), lshape_digest(r.parameter, r.r, r.h, EndCondition::Neumann)?);
            }
            let pts = scan.records.iter().map(|r| (r.parameter, r.eigenvalues[0] / PI2)).collect();
            out.svg = Some(svg_plot(
                "first eigenvalue of the bent waveguide",
                "theta",
                "lambda1 / pi^2",
                &[Series { label: "lambda1".into(), points: pts }],
            ));
            out.csv = Some(table);
            out.result = to_value(&scan)?;
        }
        Command::ScanR { theta, r } => {
            let scan = scan_truncation(theta.0, r, numerics)?;
            let mut table = Table::new(&["R", "lambda1", "error_indicator", "difference", "difference_error"]);
            for (k, rec) in scan.records.iter().enumerate() {
                table.push(vec![
                    num(rec.parameter),
                    num(rec.eigenvalues[0]),
                    num(rec.error_indicators[0]),
                    num(scan.differences[k]),
                    num(scan.difference_error[k]),
                ]);
                provenance
                    .insert(format!("mesh R={}", rec.parameter), lshape_digest(theta.0, rec.parameter, rec.h, EndCondition::Neumann)?);
            }
            let pts = scan.records.iter().zip(&scan.differences).filter(|(_, d)| **d > 0.0).map(|(r, d)| (r.parameter, d.ln())).collect();
            out.svg = Some(svg_plot(
                "decay of the truncation error",
                "R",
                "ln(lambda_inf - lambda(R))",
                &[Series { label: "difference".into(), points: pts }],
            ));
            out.csv = Some(table);
            out.result = to_value(&scan)?;
        }
        Command::Count { theta } => {
            let c = count_below_threshold(theta.0, numerics)?;
            provenance.insert("finest mesh".into(), lshape_digest(theta.0, c.r, c.h, EndCondition::Dirichlet)?);
            let mut table = Table::new(&["k", "eigenvalue", "band", "status"]);
            for (k, (e, b)) in c.eigenvalues.iter().zip(&c.bands).enumerate() {
                let status = if *e < PI2 - b {
                    "below"
                } else if *e < PI2 + b {
                    "inside_band"
                } else {
                    "above"
                };
                table.push(vec![k.to_string(), num(*e), num(*b), status.into()]);
            }
            out.csv = Some(table);
            out.result = to_value(&c)?;
        }
        Command::Layer { geometry } => {
            let layer = geometry.layer()?;
            let (t, solve) = lambda1_solve(layer.beta_min, numerics)?;
            provenance.insert("finest mesh".into(), mesh_digest(&solve.finest().mesh)?);
            let mut table = Table::new(&THRESHOLD_HEADER);
            table.push(threshold_row(&t));
            out.csv = Some(table);
            let fine = solve.finest();
            if want_pgm {
                out.pgm = Some(pgm_heatmap(&fine.mesh, &fine.nodal(0), 800));
            }
            out.result = json!({ "geometry": angle_value(&layer)?, "threshold": to_value(&t)? });
        }
        Command::Certify { geometry, r, h, levels } => {
            let layer = geometry.layer()?;
            let c = certify_discrete(&layer, *r, *h, *levels, numerics)?;
            voxel_digests(&layer, *r, *h, *levels, &mut provenance)?;
            out.csv = Some(certificate_table(&c));
            out.verdict = Some(c.verdict);
            out.result = to_value(&c)?;
        }
        Command::CertifyVeps { geometry, eps } => {
            let layer = geometry.layer()?;
            let c = veps_certificate(&layer, eps, numerics)?;
            let Evidence::Veps(v) = &c.evidence else { unreachable!("V^eps certificates carry V^eps terms") };
            let mut table = Table::new(&["eps", "T1", "T2", "T3", "value", "value_coarse"]);
            for k in 0..v.eps.len() {
                table.push(vec![num(v.eps[k]), num(v.t1[k]), num(v.t2[k]), num(v.t3[k]), num(v.value[k]), num(v.value_coarse[k])]);
            }
            let mut order: Vec<usize> = (0..v.eps.len()).collect();
            order.sort_by(|a, b| v.eps[*a].total_cmp(&v.eps[*b]));
            let pts = order.iter().map(|&k| (v.eps[k].log10(), v.value[k])).collect();
            out.svg = Some(svg_plot("quadratic form on V^eps", "log10 eps", "value", &[Series { label: "value".into(), points: pts }]));
            provenance
                .insert("finest mesh".into(), lshape_digest(v.beta, v.r, v.levels.last().map_or(0.0, |l| l.h), EndCondition::Neumann)?);
            out.csv = Some(table);
            out.verdict = Some(c.verdict);
            out.result = to_value(&c)?;
        }
        Command::Absence { alpha, r, h, levels } => {
            let options = AbsenceOptions { r: *r, h: *h, levels: *levels, alpha_star: None };
            let c = absence_experiment(alpha.0, numerics, &options)?;
            let layer = make_layer(build_trihedral([FRAC_PI_2, alpha.0, FRAC_PI_2])?)?;
            voxel_digests(&layer, *r, *h, *levels, &mut provenance)?;
            out.csv = Some(certificate_table(&c));
            out.verdict = Some(c.verdict);
            out.result = to_value(&c)?;
        }
        Command::Hardy { source } => {
            let samples = hardy_samples(source)?;
            let mut table = Table::new(&["sample", "inequality", "lhs", "rhs", "holds"]);
            let mut reports = Vec::with_capacity(samples.len());
            for (label, s) in &samples {
                let r = hardy_check(s)?;
                for (name, c) in [("lemma", r.lemma), ("corollary", r.corollary)] {
                    table.push(vec![label.clone(), name.into(), num(c.lhs), num(c.rhs), c.holds.to_string()]);
                }
                reports.push(json!({ "sample": label, "report": to_value(&r)? }));
            }
            let all_hold = reports.iter().all(|r| r["report"]["lemma"]["holds"] == true && r["report"]["corollary"]["holds"] == true);
            out.csv = Some(table);
            out.result = json!({ "all_hold": all_hold, "reports": reports });
        }
        Command::Weyl { geometry, n, kappa, h } => {
            let layer = geometry.layer()?;
            let configs: Vec<WeylConfig> =
                kappa.iter().flat_map(|&k| n.iter().map(move |&nn| WeylConfig { n: nn, kappa: k, h: *h })).collect();
            let reports = weyl_sequence(&layer, &configs, &Numerics { h: *h, ..numerics.clone() })?;
            let mut table = Table::new(&["n", "kappa", "residual", "norm", "R_n", "support_lo", "support_hi"]);
            for r in &reports {
                table.push(vec![
                    r.n.to_string(),
                    num(r.kappa),
                    num(r.residual),
                    num(r.norm),
                    num(r.r_n),
                    num(r.support[0]),
                    num(r.support[1]),
                ]);
            }
            let series: Vec<Series> = kappa
                .iter()
                .map(|&k| Series {
                    label: format!("kappa = {k}"),
                    points: reports.iter().filter(|r| r.kappa == k).map(|r| (f64::from(r.n), r.residual)).collect(),
                })
                .collect();
            out.svg = Some(svg_plot("Weyl sequence residuals", "n", "relative residual", &series));
            let mut overlaps = Vec::new();
            for (i, &a) in n.iter().enumerate() {
                for &b in &n[i + 1..] {
                    overlaps.push(json!({ "n": a, "m": b, "overlap": support_overlap(a, b) }));
                }
            }
            out.csv = Some(table);
            out.result = json!({ "reports": to_value(&reports)?, "support_overlaps": overlaps });
        }
        Command::AlphaStar { tol } => {
            let s = alpha_star(*tol, numerics)?;
            let mut table = Table::new(&["alpha", "lambda1", "lambda1_over_pi2"]);
            for &(a, l) in &s.evaluations {
                table.push(vec![num(a), num(l), num(l / PI2)]);
            }
            let mut pts: Vec<(f64, f64)> = s.evaluations.iter().map(|&(a, l)| (a, l / PI2)).collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            out.svg = Some(svg_plot(
                "bisection for lambda1 = pi^2/2",
                "alpha",
                "lambda1 / pi^2",
                &[Series { label: "evaluations".into(), points: pts }],
            ));
            out.csv = Some(table);
            out.result = json!({ "alpha_star": s.midpoint(), "bracket": to_value(&s)? });
        }
    }
    out.provenance = provenance;
    Ok(out)
}

/// What `--dry-run` reports: the geometry and the solves a run would do.
pub fn plan(cfg: &RunConfig) -> Result<Value, CliError> {
    cfg.validate()?;
    let n = &cfg.numerics;
    let sizes = |n: &Numerics| -> Result<Vec<f64>, CliError> { (0..n.levels).map(|l| n.level_size(l).map_err(CliError::from)).collect() };
    let outlet = match n.r {
        Some(r) => json!(r),
        None => json!(format!("automatic, at most {}", n.r_max)),
    };
    let waveguide = |theta: f64| -> Result<Value, CliError> {
        Ok(json!({ "theta": theta, "level_sizes": sizes(n)?, "R": outlet.clone(), "pairs": n.num_pairs }))
    };
    let geometry = |g: &GeometrySpec| -> Result<Value, CliError> {
        let layer = g.layer()?;
        Ok(json!({
            "dihedral_angles": layer.angle.dihedral_angles,
            "vertex_angles": layer.angle.vertex_angles,
            "beta_dagger": layer.beta_min,
            "beta_dagger_index": layer.angle.beta_min_index(),
        }))
    };
    let solves = match &cfg.command {
        Command::Angle { geometry: g } => json!({ "geometry": geometry(g)?, "solves": [] }),
        Command::Waveguide { theta } | Command::Count { theta } => json!({ "solves": [waveguide(theta.0)?] }),
        Command::ScanTheta { thetas } => json!({ "solves": thetas.iter().map(|t| waveguide(t.0)).collect::<Result<Vec<_>, _>>()? }),
        Command::ScanR { theta, r } => json!({ "theta": theta.0, "R": r, "level_sizes": sizes(n)? }),
        Command::Layer { geometry: g } | Command::CertifyVeps { geometry: g, .. } => {
            let layer = g.layer()?;
            json!({ "geometry": geometry(g)?, "threshold": waveguide(layer.beta_min)? })
        }
        Command::Certify { geometry: g, r, h, levels } => {
            let layer = g.layer()?;
            let voxel: Vec<f64> = (0..*levels).map(|l| h * f64::powi(2.0, (levels - 1 - l) as i32)).collect();
            json!({ "geometry": geometry(g)?, "threshold": waveguide(layer.beta_min)?, "voxel_R": r, "voxel_sizes": voxel })
        }
        Command::Absence { alpha, r, h, levels } => {
            let g = GeometrySpec::Trihedral { alphas: [Angle(FRAC_PI_2), *alpha, Angle(FRAC_PI_2)] };
            let voxel: Vec<f64> = (0..*levels).map(|l| h * f64::powi(2.0, (levels - 1 - l) as i32)).collect();
            json!({ "geometry": geometry(&g)?, "alpha_star": "bisection with tol 1e-3", "voxel_R": r, "voxel_sizes": voxel })
        }
        Command::Hardy { source } => json!({ "source": to_value(source)? }),
        Command::Weyl { geometry: g, n: ns, kappa, h } => {
            let layer = g.layer()?;
            let j = layer.angle.beta_min_index();
            let outlets: Vec<f64> = ns.iter().map(|&m| section_outlet(&layer, j, m)).collect();
            json!({ "geometry": geometry(g)?, "n": ns, "kappa": kappa, "h": h, "R_n": outlets })
        }
        Command::AlphaStar { tol } => json!({ "bracket": [0.1, FRAC_PI_2], "tol": tol, "steps": ((FRAC_PI_2 - 0.1) / tol).log2().ceil() }),
    };
    Ok(json!({ "subcommand": cfg.command.name(), "plan": solves }))
}
