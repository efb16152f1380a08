//! Scans over the opening angle and the outlet length, eigenvalue counts
//! below `π²`, and the angle at which `λ₁ = π²/2`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::waveguide::{lambda1_waveguide, solve_waveguide, solve_with_outlet, ThresholdResult, WaveguideSolve};
use super::{LevelRecord, Numerics, PI2};
use crate::error::{Error, Result};
use crate::mesh2d::EndCondition;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    /// `θ` or `R`.
    pub parameter: f64,
    /// Extrapolated, ascending.
    pub eigenvalues: Vec<f64>,
    pub error_indicators: Vec<f64>,
    #[serde(rename = "R")]
    pub r: f64,
    pub h: f64,
    pub dofs: usize,
    pub levels: Vec<LevelRecord>,
}

impl ScanRecord {
    fn from_threshold(parameter: f64, t: &ThresholdResult) -> Self {
        Self {
            parameter,
            eigenvalues: vec![t.extrapolated],
            error_indicators: vec![t.error_indicator],
            r: t.r,
            h: t.h,
            dofs: t.levels.last().map_or(0, |l| l.dofs),
            levels: t.levels.clone(),
        }
    }

    fn from_solve(parameter: f64, s: &WaveguideSolve) -> Self {
        Self {
            parameter,
            eigenvalues: s.extrapolated.clone(),
            error_indicators: s.discretization_indicator.clone(),
            r: s.profile.outlet_length,
            h: s.finest().mesh.h,
            dofs: s.finest().problem.dim(),
            levels: s.records(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaScan {
    pub records: Vec<ScanRecord>,
    pub strictly_increasing: bool,
    /// Every value in `(π²/4, π²)`.
    pub within_limits: bool,
}

fn check_ascending(values: &[f64], what: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Invalid(format!("empty {what} list")));
    }
    if values.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Invalid(format!("{what} values must be strictly ascending")));
    }
    Ok(())
}

pub fn scan_theta(thetas: &[f64], numerics: &Numerics) -> Result<ThetaScan> {
    check_ascending(thetas, "theta")?;
    if let Some(t) = thetas.iter().find(|t| !(**t > 0.0 && **t < std::f64::consts::PI)) {
        return Err(Error::Invalid(format!("theta {t} is not in (0, pi)")));
    }
    numerics.validate()?;
    let results: Vec<ThresholdResult> = thetas.par_iter().map(|&t| lambda1_waveguide(t, numerics)).collect::<Result<_>>()?;
    let records: Vec<ScanRecord> = thetas.iter().zip(&results).map(|(&t, r)| ScanRecord::from_threshold(t, r)).collect();
    let strictly_increasing = records.windows(2).all(|w| w[1].eigenvalues[0] > w[0].eigenvalues[0]);
    let within_limits = records.iter().all(|r| r.eigenvalues[0] > PI2 / 4.0 && r.eigenvalues[0] < PI2);
    Ok(ThetaScan { records, strictly_increasing, within_limits })
}

/// Linear fit `ln(λ̂₁(ω) − λ̂₁(ω^R)) ≈ a − exponent · R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Fitted exponent `2ν̂`.
    pub exponent: f64,
    pub nu_hat: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// `2√(π² − λ̂₁(ω))`, the rate predicted by the decay of the eigenfunction.
    pub reference_exponent: f64,
    pub relative_deviation: f64,
    #[serde(rename = "R_used")]
    pub r_used: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationScan {
    pub theta: f64,
    pub records: Vec<ScanRecord>,
    /// Long-outlet reference standing in for `λ̂₁(ω)`.
    pub asymptote: ScanRecord,
    /// `λ̂₁(ω) − λ̂₁(ω^R)` per record.
    pub differences: Vec<f64>,
    /// Level-to-level change of the same difference.
    pub difference_error: Vec<f64>,
    pub nondecreasing: bool,
    /// Every value at most `λ̂₁(ω)` plus its error bar.
    pub below_asymptote: bool,
    pub fit: Option<DecayFit>,
    pub notice: Option<String>,
}

/// `λ₁(ω^R(θ))` over `R_list` on one nested mesh family. Outlet lengths must
/// be multiples of 0.5 so that longer outlets only add elements.
pub fn scan_truncation(theta: f64, r_list: &[f64], numerics: &Numerics) -> Result<TruncationScan> {
    check_ascending(r_list, "R")?;
    if let Some(r) = r_list.iter().find(|r| !(**r > 0.0) || (2.0 * **r).fract() != 0.0) {
        return Err(Error::Invalid(format!("outlet length {r} is not a positive multiple of 0.5")));
    }
    numerics.validate()?;
    let r_last = r_list[r_list.len() - 1];
    let r_inf = (2.0 * r_last).max(r_last + 6.0);
    let mut all: Vec<f64> = r_list.to_vec();
    all.push(r_inf);
    let solves: Vec<WaveguideSolve> =
        all.par_iter().map(|&r| solve_waveguide(theta, r, EndCondition::Neumann, numerics, 1)).collect::<Result<_>>()?;
    let (inf, solves) = solves.split_last().expect("at least two solves");
    let asymptote = ScanRecord::from_solve(r_inf, inf);
    let records: Vec<ScanRecord> = r_list.iter().zip(solves).map(|(&r, s)| ScanRecord::from_solve(r, s)).collect();
    let lam_inf = inf.extrapolated[0];
    let inf_series = inf.series(0);
    let nl = inf_series.len();
    let mut differences = Vec::new();
    let mut difference_error = Vec::new();
    for s in solves {
        let series = s.series(0);
        differences.push(lam_inf - s.extrapolated[0]);
        let d_fine = inf_series[nl - 1] - series[nl - 1];
        let d_prev = inf_series[nl - 2] - series[nl - 2];
        difference_error.push((d_fine - d_prev).abs());
    }
    let values: Vec<f64> = records.iter().map(|r| r.eigenvalues[0]).collect();
    let nondecreasing = values.windows(2).all(|w| w[1] >= w[0]);
    let bar = asymptote.error_indicators[0];
    let below_asymptote = values.iter().all(|v| *v <= lam_inf + bar);

    let pts: Vec<(f64, f64)> = r_list
        .iter()
        .zip(differences.iter().zip(&difference_error))
        .filter(|(_, (d, e))| **d > 0.0 && **d > 10.0 * **e)
        .map(|(r, (d, _))| (*r, d.ln()))
        .collect();
    let (fit, notice) = if pts.len() < 3 {
        (None, Some(format!("fit omitted: only {} outlet lengths have differences above 10x their error bars", pts.len())))
    } else {
        let (slope, intercept, r2) = linear_fit(&pts);
        let exponent = -slope;
        let reference_exponent = 2.0 * (PI2 - lam_inf).max(0.0).sqrt();
        (
            Some(DecayFit {
                exponent,
                nu_hat: exponent / 2.0,
                intercept,
                r_squared: r2,
                reference_exponent,
                relative_deviation: (exponent - reference_exponent).abs() / reference_exponent,
                r_used: pts.iter().map(|p| p.0).collect(),
            }),
            None,
        )
    };
    Ok(TruncationScan { theta, records, asymptote, differences, difference_error, nondecreasing, below_asymptote, fit, notice })
}

/// Least squares `y = intercept + slope·x`; returns `(slope, intercept, R²)`.
fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, my - slope * mx, r2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountReport {
    pub theta: f64,
    /// Extrapolated eigenvalues below `π²` by more than their guard band.
    pub count: usize,
    /// Values within the guard band of `π²`, not counted.
    pub inconclusive: usize,
    /// Finest-level values below `π²`. With Dirichlet ends these are upper
    /// bounds, so this is a lower bound for the number of eigenvalues.
    pub raw_count: usize,
    /// All computed pairs counted; there may be more.
    pub saturated: bool,
    pub eigenvalues: Vec<f64>,
    pub bands: Vec<f64>,
    pub truncation_indicator: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub h: f64,
    pub levels: Vec<LevelRecord>,
}

pub const COUNT_PAIRS: usize = 6;

/// Eigenvalues of `ω(θ)` below the threshold `π²`, from the Dirichlet-ended
/// truncation with at least six pairs.
pub fn count_below_threshold(theta: f64, numerics: &Numerics) -> Result<CountReport> {
    let m = numerics.num_pairs.max(COUNT_PAIRS);
    let (solve, trunc) = solve_with_outlet(theta, numerics, EndCondition::Dirichlet, m)?;
    let bands: Vec<f64> = solve.discretization_indicator.iter().map(|d| d + trunc).collect();
    let mut count = 0;
    let mut inconclusive = 0;
    for (e, b) in solve.extrapolated.iter().zip(&bands) {
        if *e < PI2 - b {
            count += 1;
        } else if *e < PI2 + b {
            inconclusive += 1;
        }
    }
    let raw_count = solve.finest().result.eigenvalues.iter().filter(|l| **l < PI2).count();
    Ok(CountReport {
        theta,
        count,
        inconclusive,
        raw_count,
        saturated: count == m,
        eigenvalues: solve.extrapolated.clone(),
        bands,
        truncation_indicator: trunc,
        r: solve.profile.outlet_length,
        h: solve.finest().mesh.h,
        levels: solve.records(),
    })
}

/// Bracket `[lo, hi]` around the angle where `λ̂₁(ω(α)) = π²/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaStar {
    pub lo: f64,
    pub hi: f64,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    /// `(α, λ̂₁)` for every evaluation, in order.
    pub evaluations: Vec<(f64, f64)>,
}

impl AlphaStar {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Bisection on the increasing map `α ↦ λ̂₁(ω(α))`, starting from `[0.1, π/2]`.
pub fn alpha_star(tol: f64, numerics: &Numerics) -> Result<AlphaStar> {
    if !(tol >= 1e-3) {
        return Err(Error::Invalid(format!("tolerance {tol} below 1e-3")));
    }
    let target = PI2 / 2.0;
    let mut evaluations = Vec::new();
    let mut eval = |a: f64| -> Result<f64> {
        let l = lambda1_waveguide(a, numerics)?.extrapolated;
        evaluations.push((a, l));
        Ok(l)
    };
    let (mut lo, mut hi) = (0.1, std::f64::consts::FRAC_PI_2);
    let mut f_lo = eval(lo)?;
    let mut f_hi = eval(hi)?;
    if !(f_lo < target && f_hi > target) {
        return Err(Error::NotConverged(format!("no sign change of lambda1 - pi^2/2 on [{lo}, {hi}]: {f_lo}, {f_hi}")));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let f = eval(mid)?;
        if f < target {
            lo = mid;
            f_lo = f;
        } else {
            hi = mid;
            f_hi = f;
        }
    }
    Ok(AlphaStar { lo, hi, lambda_lo: f_lo, lambda_hi: f_hi, evaluations })
}
