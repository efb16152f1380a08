//! Run configuration: what to compute, with which numerics, and where to
//! write it. Built from command-line flags or read from TOML.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use dirlayer::analysis::Numerics;
use dirlayer::geometry::{build_regular, build_trihedral, make_layer, LayerGeometry, PolyhedralAngle, Vec3};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// An angle given with an explicit `deg` or `rad` suffix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Angle(pub f64);

impl FromStr for Angle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let (num, scale) = if let Some(n) = s.strip_suffix("deg") {
            (n, std::f64::consts::PI / 180.0)
        } else if let Some(n) = s.strip_suffix("rad") {
            (n, 1.0)
        } else {
            return Err(format!("angle '{s}' needs a unit suffix: deg or rad"));
        };
        let v: f64 = num.trim().parse().map_err(|_| format!("cannot read angle '{s}'"))?;
        if !v.is_finite() {
            return Err(format!("angle '{s}' is not finite"));
        }
        Ok(Angle(v * scale))
    }
}

impl TryFrom<String> for Angle {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Angle> for String {
    fn from(a: Angle) -> String {
        a.to_string()
    }
}

impl fmt::Display for Angle {
    // Shortest round-trip representation, in radians.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}rad", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum GeometrySpec {
    /// Three right vertex angles.
    Fichera {},
    Trihedral {
        alphas: [Angle; 3],
    },
    Regular {
        n: usize,
        alpha: Angle,
    },
    /// Edge directions in cyclic order.
    Rays {
        rays: Vec<[f64; 3]>,
    },
}

impl GeometrySpec {
    pub fn angle(&self) -> Result<PolyhedralAngle, CliError> {
        use std::f64::consts::FRAC_PI_2;
        Ok(match self {
            GeometrySpec::Fichera {} => build_trihedral([FRAC_PI_2; 3])?,
            GeometrySpec::Trihedral { alphas } => build_trihedral([alphas[0].0, alphas[1].0, alphas[2].0])?,
            GeometrySpec::Regular { n, alpha } => build_regular(*n, alpha.0)?,
            GeometrySpec::Rays { rays } => PolyhedralAngle::from_rays(rays.iter().map(|r| Vec3::new(r[0], r[1], r[2])).collect())?,
        })
    }

    pub fn layer(&self) -> Result<LayerGeometry, CliError> {
        Ok(make_layer(self.angle()?)?)
    }
}

/// Closed-form or random samples for the Hardy-type inequalities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "function", rename_all = "lowercase", deny_unknown_fields)]
pub enum HardySource {
    /// `e^{1-z}` on a uniform grid of spacing `step` up to `z_max`.
    Exp {
        z_max: f64,
        step: f64,
        #[serde(rename = "R0")]
        r0: f64,
    },
    /// `1/z` on geometric breakpoints up to `z_max`, then linearly to zero at `2 z_max`.
    Inverse {
        z_max: f64,
        ratio: f64,
        #[serde(rename = "R0")]
        r0: f64,
    },
    /// Seeded random piecewise-linear decaying samples.
    Random { count: usize, seed: u64 },
    /// A JSON file holding one sample.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Command {
    Angle {
        geometry: GeometrySpec,
    },
    Waveguide {
        theta: Angle,
    },
    ScanTheta {
        thetas: Vec<Angle>,
    },
    #[serde(rename = "scan-R")]
    ScanR {
        theta: Angle,
        #[serde(rename = "R")]
        r: Vec<f64>,
    },
    Count {
        theta: Angle,
    },
    Layer {
        geometry: GeometrySpec,
    },
    Certify {
        geometry: GeometrySpec,
        #[serde(rename = "R")]
        r: f64,
        h: f64,
        levels: usize,
    },
    CertifyVeps {
        geometry: GeometrySpec,
        eps: Vec<f64>,
    },
    Absence {
        alpha: Angle,
        #[serde(rename = "R")]
        r: f64,
        h: f64,
        levels: usize,
    },
    Hardy {
        source: HardySource,
    },
    Weyl {
        geometry: GeometrySpec,
        n: Vec<u32>,
        kappa: Vec<f64>,
        h: f64,
    },
    AlphaStar {
        tol: f64,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Angle { .. } => "angle",
            Command::Waveguide { .. } => "waveguide",
            Command::ScanTheta { .. } => "scan-theta",
            Command::ScanR { .. } => "scan-R",
            Command::Count { .. } => "count",
            Command::Layer { .. } => "layer",
            Command::Certify { .. } => "certify",
            Command::CertifyVeps { .. } => "certify-veps",
            Command::Absence { .. } => "absence",
            Command::Hardy { .. } => "hardy",
            Command::Weyl { .. } => "weyl",
            Command::AlphaStar { .. } => "alpha-star",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Svg,
    Pgm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default)]
    pub numerics: Numerics,
    /// Output directory; falls back to `DIRLAYER_OUT`, then `dirlayer-out`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

pub fn default_formats() -> Vec<Format> {
    vec![Format::Json, Format::Csv]
}

fn positive(what: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} = {v} must be positive")))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configurations serialize to TOML")
    }

    /// Checks everything that can be checked without solving.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.formats.is_empty() {
            return Err(CliError::Config("no output formats selected".into()));
        }
        let needs_numerics = !matches!(self.command, Command::Angle { .. } | Command::Hardy { .. });
        if needs_numerics {
            self.numerics.validate()?;
        }
        match &self.command {
            Command::Angle { geometry } | Command::Layer { geometry } => {
                geometry.layer()?;
            }
            Command::Waveguide { theta } | Command::Count { theta } => open_angle(*theta)?,
            Command::ScanTheta { thetas } => {
                if thetas.is_empty() {
                    return Err(CliError::Config("scan-theta needs at least one angle".into()));
                }
                thetas.iter().try_for_each(|t| open_angle(*t))?;
            }
            Command::ScanR { theta, r } => {
                open_angle(*theta)?;
                if r.len() < 2 {
                    return Err(CliError::Config("scan-R needs at least two outlet lengths".into()));
                }
            }
            Command::Certify { geometry, r, h, levels } => {
                geometry.layer()?;
                voxel_settings(*r, *h, *levels)?;
            }
            Command::CertifyVeps { geometry, eps } => {
                geometry.layer()?;
                if eps.is_empty() {
                    return Err(CliError::Config("certify-veps needs at least one eps".into()));
                }
                eps.iter().try_for_each(|e| positive("eps", *e))?;
            }
            Command::Absence { alpha, r, h, levels } => {
                open_angle(*alpha)?;
                voxel_settings(*r, *h, *levels)?;
            }
            Command::Hardy { source } => match source {
                HardySource::Exp { z_max, step, r0 } => {
                    positive("step", *step)?;
                    positive("z_max", *z_max)?;
                    positive("R0", *r0)?;
                    if z_max / step > 1e7 {
                        return Err(CliError::Config("more than 1e7 breakpoints requested".into()));
                    }
                }
                HardySource::Inverse { z_max, ratio, r0 } => {
                    positive("z_max", *z_max)?;
                    positive("R0", *r0)?;
                    if !(*ratio > 1.0 && *ratio < 2.0) {
                        return Err(CliError::Config(format!("ratio = {ratio} must lie in (1, 2)")));
                    }
                }
                HardySource::Random { count, .. } => {
                    if *count == 0 {
                        return Err(CliError::Config("count must be positive".into()));
                    }
                }
                HardySource::File { .. } => {}
            },
            Command::Weyl { geometry, n, kappa, h } => {
                geometry.layer()?;
                if n.is_empty() || kappa.is_empty() {
                    return Err(CliError::Config("weyl needs at least one n and one kappa".into()));
                }
                for &nn in n {
                    for &k in kappa {
                        dirlayer::analysis::WeylConfig { n: nn, kappa: k, h: *h }.validate()?;
                    }
                }
            }
            Command::AlphaStar { tol } => {
                if !(*tol >= 1e-3) {
                    return Err(CliError::Config(format!("tol = {tol} is below 1e-3")));
                }
            }
        }
        Ok(())
    }
}

fn open_angle(a: Angle) -> Result<(), CliError> {
    if a.0 > 0.0 && a.0 < std::f64::consts::PI {
        Ok(())
    } else {
        Err(CliError::Config(format!("angle {} rad is not in (0, pi)", a.0)))
    }
}

fn voxel_settings(r: f64, h: f64, levels: usize) -> Result<(), CliError> {
    positive("R", r)?;
    positive("h", h)?;
    if levels == 0 || levels > 4 {
        return Err(CliError::Config(format!("{levels} voxel levels; use 1 to 4")));
    }
    let coarsest = h * f64::powi(2.0, levels as i32 - 1);
    if coarsest > 1.0 / 3.0 + 1e-12 {
        return Err(CliError::Config(format!("coarsest voxel size {coarsest} exceeds 1/3, the layer would not be resolved")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angles_need_units() {
        assert_eq!("90deg".parse::<Angle>().unwrap().0, std::f64::consts::FRAC_PI_2);
        assert_eq!("1.5rad".parse::<Angle>().unwrap().0, 1.5);
        assert!("1.5".parse::<Angle>().is_err());
        assert!("xdeg".parse::<Angle>().is_err());
        let a = Angle(0.1 + 0.2);
        assert_eq!(a.to_string().parse::<Angle>().unwrap(), a);
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
            formats = ["json", "svg"]
            [command]
            subcommand = "certify"
            R = 6.0
            h = 0.1
            levels = 2
            geometry = { kind = "regular", n = 3, alpha = "60deg" }
            [numerics]
            h = 0.03125
        "#;
        let cfg = RunConfig::from_toml(text).unwrap();
        assert_eq!(cfg.numerics.h, 0.03125);
        assert_eq!(cfg.numerics.levels, 3);
        let again = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = r#"
            [command]
            subcommand = "waveguide"
            theta = "90deg"
            thetta = "1rad"
        "#;
        assert!(RunConfig::from_toml(bad).is_err());
        let bad_geometry = r#"
            [command]
            subcommand = "angle"
            geometry = { kind = "fichera", n = 3 }
        "#;
        assert!(RunConfig::from_toml(bad_geometry).is_err());
        let bad_numerics = r#"
            [command]
            subcommand = "waveguide"
            theta = "90deg"
            [numerics]
            hh = 0.1
        "#;
        assert!(RunConfig::from_toml(bad_numerics).is_err());
    }

    #[test]
    fn validation_catches_infeasible_geometry() {
        let cfg = RunConfig {
            command: Command::Layer { geometry: GeometrySpec::Regular { n: 4, alpha: Angle(std::f64::consts::FRAC_PI_2) } },
            numerics: Numerics::default(),
            output: None,
            formats: default_formats(),
        };
        assert!(cfg.validate().is_err());
    }
}
