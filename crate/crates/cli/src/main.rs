//! Command-line runner for the layer and waveguide computations.
//!
//! Every subcommand builds a [`RunConfig`], so any run can be repeated from
//! the TOML echo written next to its report with `dirlayer run <file>`.

mod config;
mod error;
mod output;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use dirlayer::analysis::{Numerics, Verdict};
use serde_json::json;

use config::{default_formats, Angle, Command, Format, GeometrySpec, HardySource, RunConfig};
use error::{CliError, EXIT_INCONCLUSIVE};

#[derive(Parser, Debug)]
#[command(name = "dirlayer", version, about = "Spectra of the Dirichlet Laplacian in polyhedral layers and bent waveguides")]
struct Cli {
    /// Output directory [default: $DIRLAYER_OUT, else ./dirlayer-out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output formats, comma separated [default: json,csv].
    #[arg(long = "format", global = true, value_delimiter = ',')]
    formats: Vec<Format>,
    /// Worker threads for parameter scans. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Validate and print the planned solves without solving.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run a TOML configuration.
    Run { config: PathBuf },
    /// Vertex and dihedral angles, normals and inscribed-ball shift.
    Angle(GeometryArgs),
    /// First eigenvalue of the bent waveguide with opening `theta`.
    Waveguide {
        #[arg(long)]
        theta: Angle,
        #[command(flatten)]
        numerics: NumericsArgs,
    },
    /// First eigenvalue over a list or a uniform range of opening angles.
    ScanTheta {
        /// Comma-separated angles.
        #[arg(long, value_delimiter = ',', conflicts_with_all = ["from", "to", "points"])]
        thetas: Vec<Angle>,
        #[arg(long, requires_all = ["to", "points"])]
        from: Option<Angle>,
        #[arg(long)]
        to: Option<Angle>,
        #[arg(long)]
        points: Option<usize>,
        #[command(flatten)]
        numerics: NumericsArgs,
    },
    /// First eigenvalue of truncated waveguides over a list of outlet lengths.
    #[command(name = "scan-R")]
    ScanR {
        #[arg(long)]
        theta: Angle,
        /// Comma-separated outlet lengths, multiples of 0.5.
        #[arg(long, value_delimiter = ',', required = true)]
        lengths: Vec<f64>,
        #[command(flatten)]
        numerics: NumericsArgs,
    },
    /// Eigenvalues of the waveguide below pi^2, with a guard band.
    Count {
        #[arg(long)]
        theta: Angle,
        #[command(flatten)]
        numerics: NumericsArgs,
    },
    /// Geometry and threshold of a layer.
    Layer {
        #[command(flatten)]
        geometry: GeometryArgs,
        #[command(flatten)]
        numerics: NumericsArgs,
    },
    /// Voxel upper bound for the first eigenvalue against the threshold.
    Certify {
        #[command(flatten)]
        geometry: GeometryArgs,
        #[command(flatten)]
        voxel: VoxelArgs,
        #[command(flatten)]
        numerics: ThresholdArgs,
    },
    /// Sign of the quadratic form on V^eps for a regular layer.
    CertifyVeps {
        #[command(flatten)]
        geometry: GeometryArgs,
        /// Comma-separated eps values; overrides the range below.
        #[arg(long, value_delimiter = ',')]
        eps: Vec<f64>,
        #[arg(long, default_value_t = 1e-3)]
        eps_min: f64,
        #[arg(long, default_value_t = 1.0)]
        eps_max: f64,
        /// Logarithmically spaced points between eps-min and eps-max.
        #[arg(long, default_value_t = 31)]
        eps_points: usize,
        #[command(flatten)]
        numerics: NumericsArgs,
    },
    /// Upper-bound scan on the trihedral layer (pi/2, alpha, pi/2).
    Absence {
        #[arg(long)]
        alpha: Angle,
        #[command(flatten)]
        voxel: VoxelArgs,
        #[command(flatten)]
        numerics: ThresholdArgs,
    },
    /// Weighted Hardy-type inequalities on piecewise-linear samples.
    Hardy {
        #[arg(long, value_enum, default_value_t = HardyFunction::Random)]
        function: HardyFunction,
        /// Number of random samples.
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 20_240_601)]
        seed: u64,
        #[arg(long = "R0", default_value_t = 2.0)]
        r0: f64,
        #[arg(long)]
        z_max: Option<f64>,
        /// JSON sample for `--function file`.
        #[arg(long, required_if_eq("function", "file"))]
        sample: Option<PathBuf>,
    },
    /// Residuals of the Weyl sequence built on the threshold waveguide.
    Weyl {
        #[command(flatten)]
        geometry: GeometryArgs,
        /// Comma-separated dyadic indices n of the sequence.
        #[arg(id = "indices", long = "indices", value_delimiter = ',', default_values_t = [2u32, 3, 4, 5])]
        n: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 1.0])]
        kappa: Vec<f64>,
        /// Cross-section mesh size.
        #[arg(long, default_value_t = 1.0 / 32.0)]
        h: f64,
        #[arg(long)]
        levels: Option<usize>,
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Opening angle where the waveguide eigenvalue equals pi^2/2.
    AlphaStar {
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        #[command(flatten)]
        numerics: NumericsArgs,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum GeometryKind {
    Fichera,
    Trihedral,
    Regular,
    Rays,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum HardyFunction {
    Exp,
    Inverse,
    Random,
    File,
}

#[derive(Args, Debug)]
struct GeometryArgs {
    #[arg(long, value_enum, default_value_t = GeometryKind::Fichera)]
    kind: GeometryKind,
    /// Three vertex angles for `--kind trihedral`.
    #[arg(long, value_delimiter = ',')]
    alphas: Vec<Angle>,
    /// Number of faces for `--kind regular`.
    #[arg(long)]
    n: Option<usize>,
    /// Vertex angle for `--kind regular`.
    #[arg(long)]
    alpha: Option<Angle>,
    /// Edge directions for `--kind rays`, as `x,y,z;x,y,z;...`.
    #[arg(long)]
    rays: Option<String>,
}

/// Waveguide discretization.
#[derive(Args, Debug)]
struct NumericsArgs {
    /// Finest mesh size (rounded down to 0.5/2^k).
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    levels: Option<usize>,
    /// Fixed outlet length; automatic if absent.
    #[arg(long = "R")]
    r: Option<f64>,
    #[arg(long = "R-max")]
    r_max: Option<f64>,
    /// Eigenpairs per solve.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Waveguide discretization for the threshold, when `--R`, `--h` and
/// `--levels` describe the voxel grid.
#[derive(Args, Debug)]
struct ThresholdArgs {
    /// Finest waveguide mesh size.
    #[arg(id = "wg_h", long = "wg-h", value_name = "H")]
    h: Option<f64>,
    /// Nested waveguide mesh levels.
    #[arg(id = "wg_levels", long = "wg-levels", value_name = "LEVELS")]
    levels: Option<usize>,
    /// Waveguide outlet length; automatic if absent.
    #[arg(id = "wg_r", long = "wg-R", value_name = "R")]
    r: Option<f64>,
    /// Cap on the automatic outlet length.
    #[arg(id = "wg_r_max", long = "wg-R-max", value_name = "R")]
    r_max: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct VoxelArgs {
    /// Truncation radius of the layer.
    #[arg(long = "R", default_value_t = 6.0)]
    r: f64,
    /// Finest voxel size.
    #[arg(long, default_value_t = 0.1)]
    h: f64,
    /// Voxel levels, the finest of size h.
    #[arg(long, default_value_t = 2)]
    levels: usize,
}

impl NumericsArgs {
    fn numerics(&self) -> Numerics {
        let d = Numerics::default();
        Numerics {
            h: self.h.unwrap_or(d.h),
            levels: self.levels.unwrap_or(d.levels),
            r: self.r,
            r_max: self.r_max.unwrap_or(d.r_max),
            num_pairs: self.m.unwrap_or(d.num_pairs),
            tolerance: self.tolerance.unwrap_or(d.tolerance),
            seed: self.seed.unwrap_or(d.seed),
        }
    }
}

impl ThresholdArgs {
    fn numerics(&self) -> Numerics {
        NumericsArgs { h: self.h, levels: self.levels, r: self.r, r_max: self.r_max, m: None, tolerance: self.tolerance, seed: self.seed }
            .numerics()
    }
}

impl GeometryArgs {
    fn spec(&self) -> Result<GeometrySpec, CliError> {
        let need = |what: &str| CliError::Config(format!("--kind {:?} needs --{what}", self.kind).to_lowercase());
        Ok(match self.kind {
            GeometryKind::Fichera => GeometrySpec::Fichera {},
            GeometryKind::Trihedral => {
                let a: [Angle; 3] = self.alphas.clone().try_into().map_err(|_| need("alphas with three angles"))?;
                GeometrySpec::Trihedral { alphas: a }
            }
            GeometryKind::Regular => {
                GeometrySpec::Regular { n: self.n.ok_or_else(|| need("n"))?, alpha: self.alpha.ok_or_else(|| need("alpha"))? }
            }
            GeometryKind::Rays => {
                let text = self.rays.as_deref().ok_or_else(|| need("rays"))?;
                let rays = text
                    .split(';')
                    .map(|r| {
                        let c: Vec<f64> = r
                            .split(',')
                            .map(|x| x.trim().parse::<f64>())
                            .collect::<Result<_, _>>()
                            .map_err(|e| CliError::Config(format!("ray '{r}': {e}")))?;
                        <[f64; 3]>::try_from(c).map_err(|_| CliError::Config(format!("ray '{r}' needs three components")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                GeometrySpec::Rays { rays }
            }
        })
    }
}

fn log_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>, CliError> {
    if !(lo > 0.0 && hi > lo && points >= 2) {
        return Err(CliError::Config("eps range needs 0 < eps-min < eps-max and at least two points".into()));
    }
    let (a, b) = (lo.log10(), hi.log10());
    Ok((0..points).map(|k| 10f64.powf(a + (b - a) * k as f64 / (points - 1) as f64)).collect())
}

fn build_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.command {
        Cmd::Run { config } => {
            let text = std::fs::read_to_string(config).map_err(|e| CliError::Config(format!("{}: {e}", config.display())))?;
            RunConfig::from_toml(&text)?
        }
        other => {
            let (command, numerics) = match other {
                Cmd::Run { .. } => unreachable!("handled above"),
                Cmd::Angle(g) => (Command::Angle { geometry: g.spec()? }, Numerics::default()),
                Cmd::Waveguide { theta, numerics } => (Command::Waveguide { theta: *theta }, numerics.numerics()),
                Cmd::ScanTheta { thetas, from, to, points, numerics } => {
                    let thetas = match (from, to, points) {
                        (Some(a), Some(b), Some(n)) if *n >= 2 => {
                            (0..*n).map(|k| Angle(a.0 + (b.0 - a.0) * k as f64 / (*n - 1) as f64)).collect()
                        }
                        (Some(_), _, _) => return Err(CliError::Config("--from needs --to and --points >= 2".into())),
                        _ => thetas.clone(),
                    };
                    (Command::ScanTheta { thetas }, numerics.numerics())
                }
                Cmd::ScanR { theta, lengths, numerics } => (Command::ScanR { theta: *theta, r: lengths.clone() }, numerics.numerics()),
                Cmd::Count { theta, numerics } => (Command::Count { theta: *theta }, numerics.numerics()),
                Cmd::Layer { geometry, numerics } => (Command::Layer { geometry: geometry.spec()? }, numerics.numerics()),
                Cmd::Certify { geometry, voxel, numerics } => {
                    (Command::Certify { geometry: geometry.spec()?, r: voxel.r, h: voxel.h, levels: voxel.levels }, numerics.numerics())
                }
                Cmd::CertifyVeps { geometry, eps, eps_min, eps_max, eps_points, numerics } => {
                    let eps = if eps.is_empty() { log_grid(*eps_min, *eps_max, *eps_points)? } else { eps.clone() };
                    (Command::CertifyVeps { geometry: geometry.spec()?, eps }, numerics.numerics())
                }
                Cmd::Absence { alpha, voxel, numerics } => {
                    (Command::Absence { alpha: *alpha, r: voxel.r, h: voxel.h, levels: voxel.levels }, numerics.numerics())
                }
                Cmd::Hardy { function, count, seed, r0, z_max, sample } => {
                    let source = match function {
                        HardyFunction::Exp => HardySource::Exp { z_max: z_max.unwrap_or(40.0), step: 2.5e-4, r0: *r0 },
                        HardyFunction::Inverse => HardySource::Inverse { z_max: z_max.unwrap_or(1000.0), ratio: 1.0005, r0: *r0 },
                        HardyFunction::Random => HardySource::Random { count: *count, seed: *seed },
                        HardyFunction::File => HardySource::File { path: sample.clone().expect("required by clap") },
                    };
                    (Command::Hardy { source }, Numerics::default())
                }
                Cmd::Weyl { geometry, n, kappa, h, levels, tolerance, seed } => {
                    let d = Numerics::default();
                    let numerics = Numerics {
                        h: *h,
                        levels: levels.unwrap_or(d.levels),
                        tolerance: tolerance.unwrap_or(d.tolerance),
                        seed: seed.unwrap_or(d.seed),
                        ..d
                    };
                    (Command::Weyl { geometry: geometry.spec()?, n: n.clone(), kappa: kappa.clone(), h: *h }, numerics)
                }
                Cmd::AlphaStar { tol, numerics } => (Command::AlphaStar { tol: *tol }, numerics.numerics()),
            };
            RunConfig { command, numerics, output: None, formats: default_formats() }
        }
    };
    if let Some(out) = &cli.out {
        cfg.output = Some(out.clone());
    }
    if cfg.output.is_none() {
        cfg.output = Some(std::env::var_os("DIRLAYER_OUT").map_or_else(|| PathBuf::from("dirlayer-out"), PathBuf::from));
    }
    if !cli.formats.is_empty() {
        let mut f = cli.formats.clone();
        f.dedup();
        cfg.formats = f;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_outputs(cfg: &RunConfig, outcome: &run::Outcome, elapsed: f64) -> Result<Vec<PathBuf>, CliError> {
    let dir: &Path = cfg.output.as_deref().expect("resolved before running");
    let name = cfg.command.name();
    let status = match outcome.verdict {
        Some(Verdict::Inconclusive) => "inconclusive",
        _ => "ok",
    };
    let mut written = Vec::new();
    if cfg.formats.contains(&Format::Json) {
        let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64()) - elapsed;
        let bundle = json!({
            "version": env!("CARGO_PKG_VERSION"),
            "subcommand": name,
            "status": status,
            "config": cfg,
            "result": outcome.result,
            "provenance": outcome.provenance,
            "run": { "wall_time_s": elapsed, "started_unix_s": started, "threads": rayon::current_num_threads() },
        });
        let mut text = serde_json::to_string_pretty(&bundle)?;
        text.push('\n');
        written.push(output::write_atomic(dir, &format!("{name}.json"), text.as_bytes())?);
        written.push(output::write_atomic(dir, &format!("{name}.toml"), cfg.to_toml().as_bytes())?);
    }
    if cfg.formats.contains(&Format::Csv) {
        if let Some(t) = &outcome.csv {
            written.push(output::write_atomic(dir, &format!("{name}.csv"), &t.to_csv()?)?);
        }
    }
    if cfg.formats.contains(&Format::Svg) {
        if let Some(s) = &outcome.svg {
            written.push(output::write_atomic(dir, &format!("{name}.svg"), s.as_bytes())?);
        }
    }
    if cfg.formats.contains(&Format::Pgm) {
        if let Some(p) = &outcome.pgm {
            written.push(output::write_atomic(dir, &format!("{name}.pgm"), p)?);
        }
    }
    Ok(written)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match real_main(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("dirlayer: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}

fn real_main(cli: &Cli) -> Result<i32, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let cfg = build_config(cli)?;
    if cli.dry_run {
        println!("{}", serde_json::to_string_pretty(&run::plan(&cfg)?)?);
        return Ok(0);
    }
    let t = Instant::now();
    let outcome = run::execute(&cfg)?;
    let written = write_outputs(&cfg, &outcome, t.elapsed().as_secs_f64())?;
    for p in &written {
        println!("{}", p.display());
    }
    Ok(match outcome.verdict {
        Some(Verdict::Inconclusive) => {
            eprintln!("dirlayer: certificate is INCONCLUSIVE");
            EXIT_INCONCLUSIVE
        }
        _ => 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::EXIT_CONFIG;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_build_configs() {
        let cli =
            Cli::try_parse_from(["dirlayer", "certify", "--kind", "regular", "--n", "3", "--alpha", "60deg", "--R", "6", "--h", "0.1"])
                .unwrap();
        let cfg = build_config(&cli).unwrap();
        match cfg.command {
            Command::Certify { geometry: GeometrySpec::Regular { n: 3, alpha }, r, h, levels } => {
                assert!((alpha.0 - std::f64::consts::PI / 3.0).abs() < 1e-15);
                assert_eq!((r, h, levels), (6.0, 0.1, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
        let cli = Cli::try_parse_from(["dirlayer", "waveguide", "--theta", "1.5708"]);
        assert!(cli.is_err(), "angles without units must be rejected");
        let cli = Cli::try_parse_from(["dirlayer", "scan-theta", "--from", "0.3rad", "--to", "3rad", "--points", "12"]).unwrap();
        let Command::ScanTheta { thetas } = build_config(&cli).unwrap().command else { panic!() };
        assert_eq!(thetas.len(), 12);
        assert!((thetas[11].0 - 3.0).abs() < 1e-15);
    }

    #[test]
    fn config_errors_map_to_exit_code() {
        let cli = Cli::try_parse_from(["dirlayer", "layer", "--kind", "regular", "--n", "4", "--alpha", "90deg"]).unwrap();
        assert_eq!(build_config(&cli).unwrap_err().exit_code(), EXIT_CONFIG);
    }
}
