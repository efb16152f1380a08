//! First eigenvalues of truncated L-shaped waveguides on nested meshes, with
//! extrapolation and an outlet length chosen from the decay of the ground state.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{richardson, LevelRecord, Numerics, PI2};
use crate::assembly::{assemble_p1, DiscreteProblem};
use crate::eigensolve::{smallest_eigenpairs_from, EigenResult};
use crate::error::{Error, Result};
use crate::geometry::{lshape_profile, LShapeProfile, LayerGeometry};
use crate::mesh2d::{mesh_lshape_with, EndCondition, TriMesh};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    /// Opening angle of the waveguide (the dihedral angle `β_†` for layers).
    pub theta_used: f64,
    /// First eigenvalue per level, coarsest first.
    pub lambda1_estimates: Vec<f64>,
    pub extrapolated: f64,
    /// Discretization plus truncation indicator.
    pub error_indicator: f64,
    /// Difference of the last two extrapolants.
    pub discretization_indicator: f64,
    /// Change of the coarse-level value when the outlets grow by half.
    pub truncation_indicator: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub h: f64,
    pub levels: Vec<LevelRecord>,
}

/// One solved refinement level.
#[derive(Debug, Clone)]
pub struct LevelSolution {
    pub mesh: Arc<TriMesh>,
    pub problem: DiscreteProblem,
    pub result: EigenResult,
}

impl LevelSolution {
    /// Nodal values of eigenvector `k`, signed so that its mean is positive.
    pub fn nodal(&self, k: usize) -> Vec<f64> {
        let mut v = self.problem.expand(&self.result.eigenvectors[k]);
        if v.iter().sum::<f64>() < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    }

    pub fn record(&self) -> LevelRecord {
        LevelRecord::new(self.mesh.h, self.problem.dim(), &self.result)
    }
}

#[derive(Debug, Clone)]
pub struct WaveguideSolve {
    pub profile: LShapeProfile,
    pub ends: EndCondition,
    pub levels: Vec<LevelSolution>,
    /// Per eigenvalue index.
    pub extrapolated: Vec<f64>,
    pub discretization_indicator: Vec<f64>,
}

impl WaveguideSolve {
    pub fn finest(&self) -> &LevelSolution {
        &self.levels[self.levels.len() - 1]
    }

    pub fn records(&self) -> Vec<LevelRecord> {
        self.levels.iter().map(LevelSolution::record).collect()
    }

    /// Values of eigenvalue `k` across the levels.
    pub fn series(&self, k: usize) -> Vec<f64> {
        self.levels.iter().map(|l| l.result.eigenvalues[k]).collect()
    }
}

/// Solves for `m` pairs on `ω^R(θ)` across `numerics.levels` nested meshes,
/// warm-starting each level from the previous one.
pub fn solve_waveguide(theta: f64, r: f64, ends: EndCondition, numerics: &Numerics, m: usize) -> Result<WaveguideSolve> {
    numerics.validate()?;
    let profile = lshape_profile(theta, r)?;
    let h0 = numerics.level_size(0)?;
    let mut mesh = Arc::new(mesh_lshape_with(&profile, 0.5, ends)?);
    while mesh.h > h0 {
        mesh = Arc::new(mesh.refine());
    }
    let cfg = numerics.solver(m);
    let mut levels: Vec<LevelSolution> = Vec::with_capacity(numerics.levels);
    for l in 0..numerics.levels {
        if l > 0 {
            mesh = Arc::new(mesh.refine());
        }
        let problem = assemble_p1(&mesh)?;
        let initial: Vec<Vec<f64>> = match levels.last() {
            Some(prev) => prev.result.eigenvectors.iter().map(|v| problem.restrict(&mesh.prolong(&prev.problem.expand(v)))).collect(),
            None => Vec::new(),
        };
        let result = smallest_eigenpairs_from(&problem, &cfg, &initial)?
            .require_converged()
            .map_err(|e| Error::NotConverged(format!("waveguide theta = {theta}, R = {r}, h = {}: {e}", mesh.h)))?;
        levels.push(LevelSolution { mesh: Arc::clone(&mesh), problem, result });
    }
    let mut extrapolated = Vec::with_capacity(m);
    let mut discretization_indicator = Vec::with_capacity(m);
    for k in 0..m {
        let series: Vec<f64> = levels.iter().map(|l| l.result.eigenvalues[k]).collect();
        let (e, ind) = richardson(&series)?;
        extrapolated.push(e);
        discretization_indicator.push(ind);
    }
    Ok(WaveguideSolve { profile, ends, levels, extrapolated, discretization_indicator })
}

fn half_units(r: f64) -> f64 {
    (2.0 * r).ceil() / 2.0
}

/// Coarse-level first eigenvalue with `R = 6`, used to size the outlets.
fn initial_outlet(theta: f64, numerics: &Numerics) -> Result<f64> {
    let coarse = Numerics { levels: 1, ..numerics.clone() };
    let lam = coarse_eigenvalues(theta, 6.0, EndCondition::Neumann, &coarse, numerics.level_size(0)?, 1)?[0];
    let gap = PI2 - lam;
    let r = if gap > 0.0 { 4.0 / gap.sqrt() } else { numerics.r_max };
    Ok(half_units(r.clamp(4.0, numerics.r_max)))
}

fn coarse_eigenvalues(theta: f64, r: f64, ends: EndCondition, numerics: &Numerics, h: f64, m: usize) -> Result<Vec<f64>> {
    let profile = lshape_profile(theta, r)?;
    let mut mesh = Arc::new(mesh_lshape_with(&profile, 0.5, ends)?);
    while mesh.h > h {
        mesh = Arc::new(mesh.refine());
    }
    let problem = assemble_p1(&mesh)?;
    let res = smallest_eigenpairs_from(&problem, &numerics.solver(m), &[])?.require_converged()?;
    Ok(res.eigenvalues)
}

/// Largest change of the coarse-level values when the outlets are lengthened
/// by half, over the ground state and every pair extrapolating below `π²`.
fn truncation_probe(solve: &WaveguideSolve, numerics: &Numerics, m: usize) -> Result<f64> {
    let r = solve.profile.outlet_length;
    let coarse = &solve.levels[0];
    let longer = coarse_eigenvalues(solve.profile.theta, half_units(1.5 * r), solve.ends, numerics, coarse.mesh.h, m)?;
    Ok((0..m)
        .filter(|&k| k == 0 || solve.extrapolated[k] < PI2)
        .map(|k| (coarse.result.eigenvalues[k] - longer[k]).abs())
        .fold(0.0, f64::max))
}

/// Runs [`solve_waveguide`] with the configured or automatic outlet length.
/// In automatic mode the outlets grow by half while the truncation probe
/// exceeds the discretization indicator, up to `R_max`.
pub(crate) fn solve_with_outlet(theta: f64, numerics: &Numerics, ends: EndCondition, m: usize) -> Result<(WaveguideSolve, f64)> {
    numerics.validate()?;
    let mut r = match numerics.r {
        Some(r) => r,
        None => initial_outlet(theta, numerics)?,
    };
    loop {
        let solve = solve_waveguide(theta, r, ends, numerics, m)?;
        let trunc = truncation_probe(&solve, numerics, m)?;
        let disc = solve.discretization_indicator.iter().copied().fold(0.0, f64::max);
        if numerics.r.is_some() || trunc <= disc || r >= numerics.r_max {
            return Ok((solve, trunc));
        }
        r = half_units(1.5 * r).min(numerics.r_max);
    }
}

impl ThresholdResult {
    fn from_solve(solve: &WaveguideSolve, trunc: f64) -> Self {
        let disc = solve.discretization_indicator[0];
        Self {
            theta_used: solve.profile.theta,
            lambda1_estimates: solve.series(0),
            extrapolated: solve.extrapolated[0],
            error_indicator: disc + trunc,
            discretization_indicator: disc,
            truncation_indicator: trunc,
            r: solve.profile.outlet_length,
            h: solve.finest().mesh.h,
            levels: solve.records(),
        }
    }
}

/// `λ₁(ω(θ))` from the mixed problem on `ω^R(θ)` (Neumann ends).
pub fn lambda1_waveguide(theta: f64, numerics: &Numerics) -> Result<ThresholdResult> {
    lambda1_solve(theta, numerics).map(|(t, _)| t)
}

/// [`lambda1_waveguide`] together with the solved levels.
pub fn lambda1_solve(theta: f64, numerics: &Numerics) -> Result<(ThresholdResult, WaveguideSolve)> {
    let (solve, trunc) = solve_with_outlet(theta, numerics, EndCondition::Neumann, 1)?;
    Ok((ThresholdResult::from_solve(&solve, trunc), solve))
}

/// Bottom of the essential spectrum of the layer: the waveguide value at the
/// smallest dihedral angle.
pub fn threshold(layer: &LayerGeometry, numerics: &Numerics) -> Result<ThresholdResult> {
    lambda1_waveguide(layer.beta_min, numerics)
}

/// The waveguide value at the dihedral angle on ray `j`.
pub fn threshold_on_ray(layer: &LayerGeometry, j: usize, numerics: &Numerics) -> Result<ThresholdResult> {
    let b = layer.angle.dihedral_angles.get(j).ok_or_else(|| Error::Invalid(format!("ray index {j} out of range")))?;
    lambda1_waveguide(*b, numerics)
}
