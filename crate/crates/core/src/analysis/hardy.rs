//! Exact checks of the weighted Hardy-type inequalities with `ρ(z) = 1/z`
//! on piecewise-linear functions of `z ∈ [1, Z_max]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::Neumaier;

/// Piecewise-linear `v` on `[1, Z_max]`, zero from `Z_max` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardySample {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
    #[serde(rename = "R0")]
    pub r0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl InequalityCheck {
    fn new(lhs: f64, rhs: f64) -> Self {
        // Both sides are sums of nonnegative terms; allow for their rounding.
        Self { lhs, rhs, holds: lhs <= rhs * (1.0 + 1e-12) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardyReport {
    /// `‖ρv‖²(2,∞) ≤ 4‖v′‖²(2,∞) + 2‖v′‖²(1,2) + 2‖v‖²(1,2)`
    pub lemma: InequalityCheck,
    /// `‖ρv‖²(R₀,∞) ≤ 4‖v′‖²(1,∞) + 2‖v‖²(1,R₀)`
    pub corollary: InequalityCheck,
    #[serde(rename = "R0")]
    pub r0: f64,
}

pub const MIN_Z_MAX: f64 = 10.0;

impl HardySample {
    pub fn validate(&self) -> Result<()> {
        let z = &self.breakpoints;
        if z.len() < 2 || z.len() != self.values.len() {
            return Err(Error::Invalid("need at least two breakpoints with one value each".into()));
        }
        if z[0] != 1.0 {
            return Err(Error::Invalid(format!("first breakpoint is {}, expected 1", z[0])));
        }
        if z.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Invalid("breakpoints must increase strictly".into()));
        }
        let zmax = z[z.len() - 1];
        if !(zmax >= MIN_Z_MAX && zmax.is_finite()) {
            return Err(Error::Invalid(format!("Z_max = {zmax} is below {MIN_Z_MAX}")));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("values must be finite".into()));
        }
        if self.values[self.values.len() - 1] != 0.0 {
            return Err(Error::Invalid("v must vanish at Z_max".into()));
        }
        if !(self.r0 >= 2.0 && self.r0 <= zmax) {
            return Err(Error::Invalid(format!("R0 = {} must lie in [2, Z_max]", self.r0)));
        }
        Ok(())
    }

    /// Samples `f` at the given breakpoints and zeroes the last value.
    pub fn from_fn(breakpoints: Vec<f64>, r0: f64, f: impl Fn(f64) -> f64) -> Self {
        let mut values: Vec<f64> = breakpoints.iter().map(|&z| f(z)).collect();
        if let Some(last) = values.last_mut() {
            *last = 0.0;
        }
        Self { breakpoints, values, r0 }
    }

    /// Random decaying sample: `Z_max ∈ [10, 60]`, up to 40 interior
    /// breakpoints, values bounded by a random power-law envelope.
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let zmax: f64 = rng.random_range(MIN_Z_MAX..60.0);
        let n = rng.random_range(0..40usize);
        let mut z: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..zmax)).collect();
        z.push(1.0);
        z.push(zmax);
        z.sort_by(f64::total_cmp);
        z.dedup();
        let p: f64 = rng.random_range(0.0..3.0);
        let amp: f64 = rng.random_range(0.1..10.0);
        let mut values: Vec<f64> = z.iter().map(|&x| amp * rng.random_range(-1.0..1.0) * x.powf(-p)).collect();
        *values.last_mut().expect("nonempty") = 0.0;
        let r0 = rng.random_range(2.0..zmax);
        Self { breakpoints: z, values, r0 }
    }

    /// Linear pieces `(a, b, v(a), v(b))`, split at 2 and at `R₀`.
    fn pieces(&self) -> Vec<(f64, f64, f64, f64)> {
        let mut out = Vec::new();
        for i in 0..self.breakpoints.len() - 1 {
            let (a, b) = (self.breakpoints[i], self.breakpoints[i + 1]);
            let (va, vb) = (self.values[i], self.values[i + 1]);
            let at = |z: f64| va + (vb - va) * (z - a) / (b - a);
            let mut cuts = vec![a];
            for c in [2.0, self.r0] {
                if c > a && c < b {
                    cuts.push(c);
                }
            }
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            cuts.push(b);
            for w in cuts.windows(2) {
                let v0 = if w[0] == a { va } else { at(w[0]) };
                let v1 = if w[1] == b { vb } else { at(w[1]) };
                out.push((w[0], w[1], v0, v1));
            }
        }
        out
    }
}

/// Exact integrals of one linear piece: `∫v²`, `∫v′²`, `∫v²/z²`.
fn piece_integrals(a: f64, b: f64, va: f64, vb: f64) -> (f64, f64, f64) {
    let len = b - a;
    let v2 = len * (va * va + va * vb + vb * vb) / 3.0;
    let slope = (vb - va) / len;
    let dv2 = slope * slope * len;
    // v = p + q z: ∫ (p²/z² + 2pq/z + q²) dz.
    let q = slope;
    let p = va - q * a;
    // The expansion cancels badly once |p| dominates the values; fall back to
    // Gauss quadrature of the smooth integrand there.
    let scale = va.abs().max(vb.abs());
    let w = if p.abs() <= 4.0 * scale {
        p * p * len / (a * b) + 2.0 * p * q * (len / a).ln_1p() + q * q * len
    } else {
        gauss_weighted(a, b, va, vb)
    };
    (v2, dv2, w.max(0.0))
}

fn gauss_weighted(a: f64, b: f64, va: f64, vb: f64) -> f64 {
    let (x, wq) = crate::mesh2d::gauss_legendre_5();
    // Split so that z varies by at most 1% per subinterval.
    let n = (((b / a).ln() / 0.01).ceil() as usize).max(1);
    let mut s = Neumaier::default();
    for k in 0..n {
        let (s0, s1) = (a + (b - a) * k as f64 / n as f64, a + (b - a) * (k + 1) as f64 / n as f64);
        let half = 0.5 * (s1 - s0);
        for (xi, wi) in x.iter().zip(&wq) {
            let z = 0.5 * (s0 + s1) + half * xi;
            let v = va + (vb - va) * (z - a) / (b - a);
            s.add(wi * half * v * v / (z * z));
        }
    }
    s.sum()
}

pub fn hardy_check(sample: &HardySample) -> Result<HardyReport> {
    sample.validate()?;
    let r0 = sample.r0;
    let mut rho_2 = Neumaier::default();
    let mut rho_r0 = Neumaier::default();
    let mut dv_2 = Neumaier::default();
    let mut dv_12 = Neumaier::default();
    let mut v_12 = Neumaier::default();
    let mut dv_all = Neumaier::default();
    let mut v_1r0 = Neumaier::default();
    for (a, b, va, vb) in sample.pieces() {
        let (v2, dv2, w) = piece_integrals(a, b, va, vb);
        dv_all.add(dv2);
        if a >= 2.0 {
            rho_2.add(w);
            dv_2.add(dv2);
        } else {
            dv_12.add(dv2);
            v_12.add(v2);
        }
        if a >= r0 {
            rho_r0.add(w);
        } else {
            v_1r0.add(v2);
        }
    }
    let lemma = InequalityCheck::new(rho_2.sum(), 4.0 * dv_2.sum() + 2.0 * dv_12.sum() + 2.0 * v_12.sum());
    let corollary = InequalityCheck::new(rho_r0.sum(), 4.0 * dv_all.sum() + 2.0 * v_1r0.sum());
    Ok(HardyReport { lemma, corollary, r0 })
}
