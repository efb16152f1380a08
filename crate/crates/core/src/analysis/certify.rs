//! Upper-bound certificates for the discrete spectrum of a layer, and the
//! matching experiment for layers where no eigenvalue is expected.

use serde::{Deserialize, Serialize};

use super::scan::{alpha_star, AlphaStar};
use super::veps::VepsTerms;
use super::waveguide::{threshold, ThresholdResult};
use super::{LevelRecord, Numerics};
use crate::assembly::{assemble_q1, rayleigh_quotient, DiscreteProblem};
use crate::eigensolve::{smallest_eigenpairs_from, SolverConfig};
use crate::error::{Error, Result};
use crate::geometry::{build_trihedral, make_layer, LayerGeometry};
use crate::grid3d::{voxelize, CutBc, GridSummary, VoxelGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    UpperBound,
    Veps,
    AbsenceScan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Nonempty,
    Inconclusive,
    AbsentConsistent,
}

/// Rayleigh quotient of the computed ground state on one voxel level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelLevel {
    pub grid: GridSummary,
    pub solver: LevelRecord,
    /// `vᵀKv / vᵀMv` of the returned vector; an upper bound for `λ₁(Π)`.
    pub upper_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Evidence {
    UpperBound { levels: Vec<VoxelLevel>, best: f64 },
    Veps(VepsTerms),
    AbsenceScan { levels: Vec<VoxelLevel>, minimum: f64, ratio_to_threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub kind: CertificateKind,
    pub verdict: Verdict,
    pub threshold: f64,
    pub threshold_error: f64,
    pub evidence: Evidence,
    /// Positive when the evidence points to an eigenvalue below the threshold.
    pub margin: f64,
    pub combined_indicator: f64,
    /// False for every verdict that rests on numerics alone.
    pub is_proof: bool,
    pub notes: Vec<String>,
}

/// Relative allowance for rounding in the Rayleigh quotients.
const ROUNDING: f64 = 1e-10;

fn voxel_levels(layer: &LayerGeometry, r: f64, h: f64, levels: usize, solver: &SolverConfig) -> Result<Vec<VoxelLevel>> {
    if levels == 0 {
        return Err(Error::Invalid("at least one voxel level is needed".into()));
    }
    let mut out = Vec::with_capacity(levels);
    let mut prev: Option<(VoxelGrid, DiscreteProblem, Vec<f64>)> = None;
    for l in 0..levels {
        let hl = h * f64::powi(2.0, (levels - 1 - l) as i32);
        let grid = voxelize(layer, r, hl, CutBc::Dirichlet)?;
        let problem = assemble_q1(&grid)?;
        let initial = match &prev {
            Some((g, p, v)) => vec![problem.restrict(&grid.prolong_from(g, &p.expand(v))?)],
            None => Vec::new(),
        };
        let cfg = SolverConfig { num_pairs: 1, ..solver.clone() };
        let res = smallest_eigenpairs_from(&problem, &cfg, &initial)?.require_converged()?;
        let v = res.eigenvectors[0].clone();
        let upper_bound = rayleigh_quotient(&problem, &v)?;
        out.push(VoxelLevel { grid: grid.summary(), solver: LevelRecord::new(hl, problem.dim(), &res), upper_bound });
        prev = Some((grid, problem, v));
    }
    Ok(out)
}

/// Upper bound for `λ₁(Π)` from the inscribed voxel domain with levels
/// `h·2^(levels-1) … h`, compared against the threshold.
pub fn certify_discrete(layer: &LayerGeometry, r: f64, h: f64, levels: usize, numerics: &Numerics) -> Result<Certificate> {
    let t = threshold(layer, numerics)?;
    certify_with_threshold(layer, r, h, levels, &t, numerics)
}

pub fn certify_with_threshold(
    layer: &LayerGeometry,
    r: f64,
    h: f64,
    levels: usize,
    threshold: &ThresholdResult,
    numerics: &Numerics,
) -> Result<Certificate> {
    let lv = voxel_levels(layer, r, h, levels, &numerics.solver(1))?;
    let best = lv.iter().map(|l| l.upper_bound).fold(f64::INFINITY, f64::min);
    let margin = threshold.extrapolated - best;
    let combined = threshold.error_indicator + ROUNDING * best;
    let verdict = if margin > combined { Verdict::Nonempty } else { Verdict::Inconclusive };
    let mut notes = vec![format!("upper bound from a conforming trial space on the voxel domain inside the layer truncated at R = {r}")];
    if verdict == Verdict::Inconclusive {
        notes.push("margin does not exceed the combined error indicator".into());
    }
    Ok(Certificate {
        kind: CertificateKind::UpperBound,
        verdict,
        threshold: threshold.extrapolated,
        threshold_error: threshold.error_indicator,
        evidence: Evidence::UpperBound { levels: lv, best },
        margin,
        combined_indicator: combined,
        is_proof: false,
        notes,
    })
}

/// Voxel settings for [`absence_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AbsenceOptions {
    #[serde(rename = "R")]
    pub r: f64,
    pub h: f64,
    pub levels: usize,
    /// Precomputed `α*` bracket; computed with tolerance 1e-3 if absent.
    pub alpha_star: Option<AlphaStar>,
}

impl Default for AbsenceOptions {
    fn default() -> Self {
        Self { r: 6.0, h: 0.1, levels: 2, alpha_star: None }
    }
}

/// Layer on the trihedral angle `(π/2, α, π/2)` for small `α`: looks for any
/// upper bound below `0.999·Λ̂_†`. Finding none is consistent with an empty
/// discrete spectrum but proves nothing.
pub fn absence_experiment(alpha: f64, numerics: &Numerics, options: &AbsenceOptions) -> Result<Certificate> {
    let star = match &options.alpha_star {
        Some(s) => s.clone(),
        None => alpha_star(1e-3, numerics)?,
    };
    let limit = star.midpoint() - 0.05;
    if !(alpha > 0.0 && alpha < limit) {
        return Err(Error::Precondition(format!(
            "alpha = {alpha} is not below alpha* - 0.05 = {limit:.4}; the absence argument does not apply"
        )));
    }
    let layer = make_layer(build_trihedral([std::f64::consts::FRAC_PI_2, alpha, std::f64::consts::FRAC_PI_2])?)?;
    let t = threshold(&layer, numerics)?;
    let lv = voxel_levels(&layer, options.r, options.h, options.levels, &numerics.solver(1))?;
    let minimum = lv.iter().map(|l| l.upper_bound).fold(f64::INFINITY, f64::min);
    let margin = t.extrapolated - minimum;
    let combined = t.error_indicator + ROUNDING * minimum;
    let verdict = if minimum >= 0.999 * t.extrapolated {
        Verdict::AbsentConsistent
    } else if margin > combined {
        Verdict::Nonempty
    } else {
        Verdict::Inconclusive
    };
    let notes = vec![
        "non-proof: conforming discretizations only give upper bounds, which cannot exclude eigenvalues".into(),
        format!("alpha* bracket [{:.4}, {:.4}]", star.lo, star.hi),
    ];
    Ok(Certificate {
        kind: CertificateKind::AbsenceScan,
        verdict,
        threshold: t.extrapolated,
        threshold_error: t.error_indicator,
        evidence: Evidence::AbsenceScan { levels: lv, minimum, ratio_to_threshold: minimum / t.extrapolated },
        margin,
        combined_indicator: combined,
        is_proof: false,
        notes,
    })
}
