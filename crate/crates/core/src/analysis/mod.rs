//! Thresholds, parameter scans, eigenvalue counts, existence certificates,
//! Hardy-type inequality checks and Weyl-sequence residuals.

use serde::{Deserialize, Serialize};

use crate::eigensolve::{EigenResult, SolverConfig};
use crate::error::{Error, Result};
use crate::mesh2d::{refinements_for, BASE_H};

pub mod certify;
pub mod hardy;
pub mod scan;
pub mod veps;
pub mod waveguide;
pub mod weyl;

pub use certify::{
    absence_experiment, certify_discrete, certify_with_threshold, AbsenceOptions, Certificate, CertificateKind, Evidence, Verdict,
    VoxelLevel,
};
pub use hardy::{hardy_check, HardyReport, HardySample, InequalityCheck};
pub use scan::{
    alpha_star, count_below_threshold, scan_theta, scan_truncation, AlphaStar, CountReport, DecayFit, ScanRecord, ThetaScan, TruncationScan,
};
pub use veps::{veps_certificate, VepsTerms};
pub use waveguide::{lambda1_solve, lambda1_waveguide, solve_waveguide, threshold, threshold_on_ray, ThresholdResult, WaveguideSolve};
pub use weyl::{
    cutoff, section_outlet, smoothstep, support_overlap, weyl_residual, weyl_sequence, CutoffIntegrals, WeylConfig, WeylReport,
};

pub const PI2: f64 = std::f64::consts::PI * std::f64::consts::PI;

/// Discretization controls shared by the waveguide computations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Numerics {
    /// Requested finest mesh size; the mesh actually used has `h = 0.5 / 2^k ≤ h`.
    pub h: f64,
    /// Nested refinement levels, the finest last.
    pub levels: usize,
    /// Outlet length; `None` picks it from the decay rate of the ground state.
    #[serde(rename = "R")]
    pub r: Option<f64>,
    /// Upper limit for the automatic outlet length.
    #[serde(rename = "R_max")]
    pub r_max: f64,
    pub num_pairs: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for Numerics {
    fn default() -> Self {
        Self { h: 1.0 / 64.0, levels: 3, r: None, r_max: 40.0, num_pairs: 1, tolerance: 1e-8, seed: 20_240_601 }
    }
}

impl Numerics {
    pub fn validate(&self) -> Result<()> {
        let k = refinements_for(self.h)? as usize;
        if self.levels < 2 {
            return Err(Error::Invalid("at least 2 refinement levels are needed for extrapolation".into()));
        }
        if self.levels > k + 1 {
            return Err(Error::Invalid(format!("{} levels do not fit between the base size {BASE_H} and h = {}", self.levels, self.h)));
        }
        if let Some(r) = self.r {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Invalid(format!("outlet length {r} must be positive")));
            }
        }
        if !(self.r_max >= 4.0 && self.r_max.is_finite()) {
            return Err(Error::Invalid(format!("R_max = {} must be at least 4", self.r_max)));
        }
        self.solver(self.num_pairs).validate()
    }

    /// Mesh size of level `l` (0 = coarsest).
    pub fn level_size(&self, l: usize) -> Result<f64> {
        let k = refinements_for(self.h)? as usize;
        let kl = (k + 1 + l).checked_sub(self.levels).ok_or_else(|| Error::Invalid("too many refinement levels".into()))?;
        Ok(BASE_H / f64::powi(2.0, kl as i32))
    }

    pub fn finest_size(&self) -> Result<f64> {
        self.level_size(self.levels - 1)
    }

    pub fn solver(&self, num_pairs: usize) -> SolverConfig {
        SolverConfig { num_pairs, tolerance: self.tolerance, seed: self.seed, ..SolverConfig::default() }
    }
}

/// Solver output of one refinement level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub h: f64,
    pub dofs: usize,
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    pub orthonormality_defect: f64,
    pub iterations: usize,
}

impl LevelRecord {
    pub fn new(h: f64, dofs: usize, res: &EigenResult) -> Self {
        Self {
            h,
            dofs,
            eigenvalues: res.eigenvalues.clone(),
            residuals: res.residuals.clone(),
            orthonormality_defect: res.orthonormality_defect,
            iterations: res.iterations,
        }
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

/// Richardson extrapolation of a sequence computed on sizes halving at each
/// step, assuming an `O(h²)` leading error. Returns the last extrapolant and
/// the difference of the last two (or, with only two values, the size of the
/// correction).
pub fn richardson(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::Invalid("extrapolation needs at least two levels".into()));
    }
    let ext: Vec<f64> = values.windows(2).map(|w| (4.0 * w[1] - w[0]) / 3.0).collect();
    let last = ext[ext.len() - 1];
    let indicator = if ext.len() >= 2 { (last - ext[ext.len() - 2]).abs() } else { (last - values[values.len() - 1]).abs() };
    Ok((last, indicator))
}

/// True if each level's eigenvalues are no larger than the previous level's.
pub fn nonincreasing_levels(levels: &[LevelRecord]) -> bool {
    levels.windows(2).all(|w| w[1].eigenvalues.iter().zip(&w[0].eigenvalues).all(|(f, c)| f <= c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn richardson_removes_quadratic_error() {
        let exact = 2.5;
        let vals: Vec<f64> = [0.4, 0.2, 0.1].iter().map(|h: &f64| exact + 3.0 * h * h).collect();
        let (e, ind) = richardson(&vals).unwrap();
        assert_relative_eq!(e, exact, epsilon = 1e-13);
        assert!(ind < 1e-13);
        let (e2, ind2) = richardson(&vals[1..]).unwrap();
        assert_relative_eq!(e2, exact, epsilon = 1e-13);
        assert_relative_eq!(ind2, 0.03, epsilon = 1e-12);
        assert!(richardson(&[1.0]).is_err());
    }

    #[test]
    fn level_sizes_halve() {
        let n = Numerics { h: 0.03, levels: 3, ..Numerics::default() };
        n.validate().unwrap();
        assert_eq!(n.finest_size().unwrap(), 0.015625);
        assert_eq!(n.level_size(0).unwrap(), 0.0625);
        let bad = Numerics { h: 0.2, levels: 4, ..Numerics::default() };
        assert!(bad.validate().is_err());
        let one = Numerics { levels: 1, ..Numerics::default() };
        assert!(one.validate().is_err());
    }

    #[test]
    fn numerics_reject_unknown_keys() {
        let ok: Numerics = serde_json::from_str(r#"{"h": 0.05, "R": 6.0}"#).unwrap();
        assert_eq!(ok.r, Some(6.0));
        assert_eq!(ok.levels, 3);
        assert!(serde_json::from_str::<Numerics>(r#"{"hh": 0.05}"#).is_err());
    }
}
