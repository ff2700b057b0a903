//! Experiment definitions, execution and persistence: density-estimation
//! examples and the range-only robot localization benchmark.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baselines::{pf_predict, pf_update, ukf_predict, ukf_update, ParticleSet, UkfModel, UkfState};
use crate::bounds::{empirical_tv, entropy_rule, EntropyReport};
use crate::densities::{DensityError, DensityModel, Gal, Gaussian, Marginal};
use crate::filter::{step, FilterConfig, FilterModel, FilterState};
use crate::linalg::SymMatrix;
use crate::momentprop::{DynamicsModel, Likelihood, PosteriorConfig, Prior, VectorMap};
use crate::quadrature::{RefFamily, RefMarginal, ReferenceDensity};
use crate::surrogate::{solve, Certificate, DensitySurrogate, SolveReport, SolverConfig};

/// Scenario failures.
#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config: {0}")]
    Config(String),
    #[error("density: {0}")]
    Density(#[from] DensityError),
    #[error("solver: {0}")]
    Solver(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn cfg_err(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Config(msg.into())
}

/// Closed-form test density of a density-estimation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum DensitySpec {
    /// Gaussian mixture with a shared covariance (row-major).
    GaussianMixture { weights: Vec<f64>, means: Vec<Vec<f64>>, covariance: Vec<f64> },
    /// GAL mixture with zero skew, shared `Σ` and shape `s`.
    GalMixture { weights: Vec<f64>, locations: Vec<Vec<f64>>, sigma: Vec<f64>, shape: f64 },
    /// Mixture of products of Gumbel marginals located at the mean vectors.
    GumbelMixture { weights: Vec<f64>, means: Vec<Vec<f64>>, scale: f64 },
    /// Mixture of products of Student-t marginals.
    StudentTMixture { weights: Vec<f64>, means: Vec<Vec<f64>>, nu: f64, scale: f64 },
}

impl DensitySpec {
    /// Builds the density.
    pub fn build(&self) -> Result<DensityModel, ScenarioError> {
        let sym = |v: &[f64], d: usize| -> Result<SymMatrix, ScenarioError> {
            if v.len() != d * d {
                return Err(cfg_err(format!("matrix needs {} entries, got {}", d * d, v.len())));
            }
            SymMatrix::new(DMatrix::from_row_slice(d, d, v)).map_err(|e| cfg_err(e.to_string()))
        };
        Ok(match self {
            DensitySpec::GaussianMixture { weights, means, covariance } => {
                let comps = weights
                    .iter()
                    .zip(means)
                    .map(|(&w, m)| Ok((w, Gaussian::new(m.clone(), sym(covariance, m.len())?)?)))
                    .collect::<Result<Vec<_>, ScenarioError>>()?;
                DensityModel::gaussian_mixture(comps)?
            }
            DensitySpec::GalMixture { weights, locations, sigma, shape } => {
                let comps = weights
                    .iter()
                    .zip(locations)
                    .map(|(&w, m)| Ok((w, Gal::new(m.clone(), vec![0.0; m.len()], sym(sigma, m.len())?, *shape)?)))
                    .collect::<Result<Vec<_>, ScenarioError>>()?;
                DensityModel::gal_mixture(comps)?
            }
            DensitySpec::GumbelMixture { weights, means, scale } => DensityModel::product_mixture(
                weights.iter().zip(means).map(|(&w, m)| (w, m.iter().map(|&location| Marginal::Gumbel { location, scale: *scale }).collect())).collect(),
            )?,
            DensitySpec::StudentTMixture { weights, means, nu, scale } => DensityModel::product_mixture(
                weights
                    .iter()
                    .zip(means)
                    .map(|(&w, m)| (w, m.iter().map(|&location| Marginal::StudentT { nu: *nu, location, scale: *scale }).collect()))
                    .collect(),
            )?,
        })
    }
}

/// Uniform evaluation grid `points^d` on `[lo, hi]^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl GridSpec {
    /// Coordinate of grid index `i`.
    pub fn coord(&self, i: usize) -> f64 {
        self.lo + (self.hi - self.lo) * i as f64 / (self.points - 1) as f64
    }
}

/// Density-estimation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityConfig {
    pub name: String,
    pub density: DensitySpec,
    /// Explicit reference density; `None` uses the moment recipe with `theta_inflation`.
    pub theta: Option<ReferenceDensity>,
    pub theta_inflation: f64,
    pub order: usize,
    pub solver: SolverConfig,
    pub grid: GridSpec,
    /// Cells per axis of the distribution-function grid; 0 disables the bound check.
    pub tv_cells: usize,
}

/// Range-only localization scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationConfig {
    pub name: String,
    pub seed: u64,
    pub runs: usize,
    pub steps: usize,
    pub start: Vec<f64>,
    pub increment: Vec<f64>,
    pub process_sd: f64,
    pub landmarks: Vec<Vec<f64>>,
    /// Scale of the Gumbel range noise.
    pub gumbel_scale: f64,
    pub mf_order: usize,
    pub mf_init_sd: f64,
    pub mf_theta_inflation: f64,
    /// Per-step reference densities follow the full covariance.
    pub mf_correlated_theta: bool,
    /// Posterior integration rules follow the full covariance.
    pub mf_correlated_posterior: bool,
    /// Allowed `|∫ρ̂ − 1|` per step.
    pub mf_normalization_slack: f64,
    pub mf_solver: SolverConfig,
    pub mf_posterior_nodes: usize,
    pub mf_recenter_passes: usize,
    pub pf_particles: usize,
    pub pf_init_sd: f64,
    pub pf_resample_threshold: f64,
    pub ukf_init_sd: f64,
    /// Standard deviation of the Gaussian range-noise substitute.
    pub ukf_obs_sd: f64,
}

/// Any scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScenarioConfig {
    DensityEstimation(DensityConfig),
    Localization(LocalizationConfig),
}

impl ScenarioConfig {
    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config is serializable");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Built-in configurations: `example1`..`example5`, `localization`.
    pub fn preset(name: &str) -> Option<Self> {
        let w = vec![0.25; 4];
        let id2 = vec![1.0, 0.0, 0.0, 1.0];
        let pts = |v: [[f64; 2]; 4]| v.iter().map(|p| p.to_vec()).collect::<Vec<_>>();
        let gauss_theta = |sd: f64| ReferenceDensity::gaussian(&[0.0, 0.0], &[sd, sd]).expect("valid");
        let density = |name: &str, density: DensitySpec, theta: ReferenceDensity, tv_cells: usize| {
            ScenarioConfig::DensityEstimation(DensityConfig {
                name: name.into(),
                density,
                theta: Some(theta),
                theta_inflation: 2.0,
                order: 4,
                solver: SolverConfig::default(),
                grid: GridSpec { lo: -6.0, hi: 6.0, points: 200 },
                tv_cells,
            })
        };
        Some(match name {
            "example1" => density(
                name,
                DensitySpec::GaussianMixture { weights: w, means: pts([[1.0, 0.0], [0.0, 1.0], [2.0, 2.0], [-2.0, -2.0]]), covariance: id2 },
                gauss_theta(2.0),
                400,
            ),
            "example2" => density(
                name,
                DensitySpec::GaussianMixture { weights: w, means: pts([[1.0, -1.0], [-1.0, 1.0], [2.0, 2.0], [-2.0, -2.0]]), covariance: id2 },
                gauss_theta(2.0),
                400,
            ),
            "example3" => density(
                name,
                DensitySpec::GalMixture { weights: w, locations: pts([[4.0, 4.0], [4.0, -4.0], [-4.0, 4.0], [-4.0, -4.0]]), sigma: id2, shape: 1.0 },
                gauss_theta(3.0),
                0,
            ),
            "example4" => density(
                name,
                DensitySpec::GumbelMixture { weights: w, means: pts([[1.0, 1.0], [-2.0, 0.0], [0.0, -2.0], [-2.0, -2.0]]), scale: 1.0 },
                gauss_theta(2.0),
                0,
            ),
            "example5" => density(
                name,
                DensitySpec::StudentTMixture { weights: w, means: pts([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]]), nu: 8.0, scale: 1.0 },
                ReferenceDensity::cauchy(&[0.0, 0.0], &[3.0, 3.0]).expect("valid"),
                0,
            ),
            "localization" => ScenarioConfig::Localization(LocalizationConfig {
                name: name.into(),
                seed: 20_240_901,
                runs: 50,
                steps: 25,
                start: vec![-6.0, -6.0],
                increment: vec![1.0, 1.0],
                process_sd: 0.1,
                landmarks: vec![vec![-1.0, 2.0], vec![5.0, 10.0], vec![12.0, 14.0], vec![18.0, 21.0]],
                gumbel_scale: 0.25,
                mf_order: 4,
                mf_init_sd: 2.0,
                mf_theta_inflation: 1.5,
                mf_correlated_theta: true,
                mf_correlated_posterior: true,
                mf_normalization_slack: 1.0,
                mf_solver: SolverConfig { per_dim: 60, ..SolverConfig::default() },
                mf_posterior_nodes: 60,
                mf_recenter_passes: 3,
                pf_particles: 5000,
                pf_init_sd: 5.0,
                pf_resample_threshold: 0.5,
                ukf_init_sd: 2.0,
                ukf_obs_sd: 0.35,
            }),
            _ => return None,
        })
    }

    /// Parses the INI format documented in the README.
    pub fn from_ini(text: &str) -> Result<Self, ScenarioError> {
        let ini = ini::Ini::load_from_str(text).map_err(|e| cfg_err(e.to_string()))?;
        let ini = IniView(&ini);
        let kind = ini.req("scenario", "kind")?;
        let name = ini.req("scenario", "name")?.to_string();
        match kind {
            "density-estimation" => {
                let family = ini.req("density", "family")?;
                let weights = parse_vec(ini.req("density", "weights")?)?;
                let density = match family {
                    "gaussian-mixture" => DensitySpec::GaussianMixture {
                        weights,
                        means: parse_list(ini.req("density", "means")?)?,
                        covariance: parse_vec(ini.req("density", "covariance")?)?,
                    },
                    "gal-mixture" => DensitySpec::GalMixture {
                        weights,
                        locations: parse_list(ini.req("density", "locations")?)?,
                        sigma: parse_vec(ini.req("density", "sigma")?)?,
                        shape: ini.num("density", "shape", 1.0)?,
                    },
                    "gumbel-mixture" => DensitySpec::GumbelMixture { weights, means: parse_list(ini.req("density", "means")?)?, scale: ini.num("density", "scale", 1.0)? },
                    "student-t-mixture" => DensitySpec::StudentTMixture {
                        weights,
                        means: parse_list(ini.req("density", "means")?)?,
                        nu: ini.req("density", "nu")?.parse().map_err(|_| cfg_err("density.nu"))?,
                        scale: ini.num("density", "scale", 1.0)?,
                    },
                    other => return Err(cfg_err(format!("unknown density family '{other}'"))),
                };
                let theta = match ini.get("theta", "family") {
                    None => None,
                    Some(fam) => {
                        let family = match fam {
                            "gaussian" => RefFamily::Gaussian,
                            "cauchy" => RefFamily::Cauchy,
                            other => return Err(cfg_err(format!("unknown theta family '{other}'"))),
                        };
                        let loc = parse_vec(ini.req("theta", "location")?)?;
                        let scale = parse_vec(ini.req("theta", "scale")?)?;
                        if loc.len() != scale.len() {
                            return Err(cfg_err("theta.location and theta.scale differ in length"));
                        }
                        let marginals = loc.iter().zip(&scale).map(|(&location, &scale)| RefMarginal { family, location, scale }).collect();
                        Some(ReferenceDensity::new(marginals).map_err(|e| cfg_err(e.to_string()))?)
                    }
                };
                Ok(ScenarioConfig::DensityEstimation(DensityConfig {
                    name,
                    density,
                    theta,
                    theta_inflation: ini.num("solver", "theta_inflation", 2.0)?,
                    order: ini.int("solver", "order", 4)?,
                    solver: ini.solver("solver", SolverConfig::default())?,
                    grid: GridSpec { lo: ini.num("grid", "lo", -6.0)?, hi: ini.num("grid", "hi", 6.0)?, points: ini.int("grid", "points", 200)? },
                    tv_cells: ini.int("grid", "tv_cells", 0)?,
                }))
            }
            "localization" => {
                let base = match ScenarioConfig::preset("localization") {
                    Some(ScenarioConfig::Localization(l)) => l,
                    _ => unreachable!("preset exists"),
                };
                Ok(ScenarioConfig::Localization(LocalizationConfig {
                    name,
                    seed: ini.int("scenario", "seed", base.seed as usize)? as u64,
                    runs: ini.int("scenario", "runs", base.runs)?,
                    steps: ini.int("scenario", "steps", base.steps)?,
                    start: ini.get("robot", "start").map(parse_vec).transpose()?.unwrap_or(base.start),
                    increment: ini.get("robot", "increment").map(parse_vec).transpose()?.unwrap_or(base.increment),
                    process_sd: ini.num("robot", "process_sd", base.process_sd)?,
                    landmarks: ini.get("robot", "landmarks").map(parse_list).transpose()?.unwrap_or(base.landmarks),
                    gumbel_scale: ini.num("robot", "gumbel_scale", base.gumbel_scale)?,
                    mf_order: ini.int("mf", "order", base.mf_order)?,
                    mf_init_sd: ini.num("mf", "init_sd", base.mf_init_sd)?,
                    mf_theta_inflation: ini.num("mf", "theta_inflation", base.mf_theta_inflation)?,
                    mf_correlated_theta: ini.flag("mf", "correlated_theta", base.mf_correlated_theta)?,
                    mf_correlated_posterior: ini.flag("mf", "correlated_posterior", base.mf_correlated_posterior)?,
                    mf_normalization_slack: ini.num("mf", "normalization_slack", base.mf_normalization_slack)?,
                    mf_solver: ini.solver("mf", base.mf_solver)?,
                    mf_posterior_nodes: ini.int("mf", "posterior_nodes", base.mf_posterior_nodes)?,
                    mf_recenter_passes: ini.int("mf", "recenter_passes", base.mf_recenter_passes)?,
                    pf_particles: ini.int("pf", "particles", base.pf_particles)?,
                    pf_init_sd: ini.num("pf", "init_sd", base.pf_init_sd)?,
                    pf_resample_threshold: ini.num("pf", "resample_threshold", base.pf_resample_threshold)?,
                    ukf_init_sd: ini.num("ukf", "init_sd", base.ukf_init_sd)?,
                    ukf_obs_sd: ini.num("ukf", "obs_sd", base.ukf_obs_sd)?,
                }))
            }
            other => Err(cfg_err(format!("unknown scenario kind '{other}'"))),
        }
    }

    /// Applies command-line overrides.
    pub fn apply_overrides(&mut self, o: &Overrides) {
        match self {
            ScenarioConfig::DensityEstimation(c) => {
                if let Some(v) = o.order {
                    c.order = v;
                }
                apply_solver(&mut c.solver, o);
                if let Some(v) = o.theta_inflation {
                    c.theta_inflation = v;
                    c.theta = None;
                }
            }
            ScenarioConfig::Localization(c) => {
                if let Some(v) = o.order {
                    c.mf_order = v;
                }
                apply_solver(&mut c.mf_solver, o);
                if let Some(v) = o.theta_inflation {
                    c.mf_theta_inflation = v;
                }
                if let Some(v) = o.runs {
                    c.runs = v;
                }
                if let Some(v) = o.seed {
                    c.seed = v;
                }
            }
        }
    }
}

fn apply_solver(s: &mut SolverConfig, o: &Overrides) {
    if let Some(v) = o.quad_nodes {
        s.per_dim = v;
    }
    if let Some(v) = o.tol {
        s.tol = v;
    }
    if let Some(v) = o.max_iter {
        s.max_iter = v;
    }
}

/// Command-line overrides of a scenario.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub order: Option<usize>,
    pub quad_nodes: Option<usize>,
    pub runs: Option<usize>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub theta_inflation: Option<f64>,
}

struct IniView<'a>(&'a ini::Ini);

impl IniView<'_> {
    fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.0.section(Some(section)).and_then(|s| s.get(key)).map(str::trim)
    }

    fn req(&self, section: &str, key: &str) -> Result<&str, ScenarioError> {
        self.get(section, key).ok_or_else(|| cfg_err(format!("missing {section}.{key}")))
    }

    fn num(&self, section: &str, key: &str, default: f64) -> Result<f64, ScenarioError> {
        self.get(section, key).map_or(Ok(default), |v| v.parse().map_err(|_| cfg_err(format!("{section}.{key}: not a number"))))
    }

    fn int(&self, section: &str, key: &str, default: usize) -> Result<usize, ScenarioError> {
        self.get(section, key).map_or(Ok(default), |v| v.parse().map_err(|_| cfg_err(format!("{section}.{key}: not an integer"))))
    }

    fn flag(&self, section: &str, key: &str, default: bool) -> Result<bool, ScenarioError> {
        self.get(section, key).map_or(Ok(default), |v| v.parse().map_err(|_| cfg_err(format!("{section}.{key}: expected true or false"))))
    }

    fn solver(&self, section: &str, base: SolverConfig) -> Result<SolverConfig, ScenarioError> {
        let certificate = match self.get(section, "certificate") {
            None => base.certificate,
            Some("gram") => Certificate::Gram,
            Some("tied") => Certificate::Tied,
            Some(other) => return Err(cfg_err(format!("unknown certificate '{other}'"))),
        };
        Ok(SolverConfig {
            tol: self.num(section, "tol", base.tol)?,
            max_iter: self.int(section, "max_iter", base.max_iter)?,
            per_dim: self.int(section, "quad_nodes", base.per_dim)?,
            certificate,
            ..base
        })
    }
}

/// Numbers separated by commas or whitespace.
pub fn parse_vec(s: &str) -> Result<Vec<f64>, ScenarioError> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| cfg_err(format!("'{t}' is not a number"))))
        .collect()
}

/// Vectors separated by `;`.
pub fn parse_list(s: &str) -> Result<Vec<Vec<f64>>, ScenarioError> {
    s.split(';').filter(|t| !t.trim().is_empty()).map(parse_vec).collect()
}

/// One grid point of a density run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub x1: f64,
    pub x2: f64,
    pub rho_true: f64,
    pub rho_hat: f64,
    pub abs_err: f64,
}

/// Result of a density-estimation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRecord {
    pub name: String,
    pub config_hash: String,
    pub order: usize,
    pub max_abs_err: f64,
    pub min_rho_hat: f64,
    /// Strict local maxima of `ρ̂` on the grid, largest first.
    pub maxima_hat: Vec<[f64; 2]>,
    /// Strict local maxima of `ρ` on the grid, largest first.
    pub maxima_true: Vec<[f64; 2]>,
    /// Raw-moment discrepancies `achieved − target`.
    pub moment_residuals: Vec<f64>,
    pub report: SolveReport,
    pub entropy: Option<EntropyReport>,
    /// `sup |F_ρ̂ − F_ρ|` on the distribution-function grid.
    pub empirical_tv: Option<f64>,
    pub wall_clock_s: f64,
    #[serde(skip)]
    pub grid: Vec<GridRow>,
}

/// Strict local maxima of a `points × points` row-major field, largest first.
pub fn local_maxima(values: &[f64], grid: &GridSpec) -> Vec<[f64; 2]> {
    let n = grid.points;
    let mut out = Vec::new();
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            let v = values[i * n + j];
            let mut is_max = true;
            for di in [-1i64, 0, 1] {
                for dj in [-1i64, 0, 1] {
                    if (di, dj) != (0, 0) && values[(i as i64 + di) as usize * n + (j as i64 + dj) as usize] >= v {
                        is_max = false;
                    }
                }
            }
            if is_max {
                out.push((v, [grid.coord(i), grid.coord(j)]));
            }
        }
    }
    out.sort_by(|a, b| b.0.total_cmp(&a.0));
    out.into_iter().map(|(_, p)| p).collect()
}

/// Runs a density-estimation scenario.
pub fn run_density_example(cfg: &DensityConfig, hash: &str) -> Result<DensityRecord, ScenarioError> {
    solve_density_example(cfg, hash).map(|(rec, _)| rec)
}

/// As [`run_density_example`], also returning the solved surrogate.
pub fn solve_density_example(cfg: &DensityConfig, hash: &str) -> Result<(DensityRecord, DensitySurrogate), ScenarioError> {
    let start = Instant::now();
    let model = cfg.density.build()?;
    let sigma = model.raw_moments(cfg.order)?;
    let theta = match &cfg.theta {
        Some(t) => t.clone(),
        None => ReferenceDensity::from_moments(&sigma, cfg.theta_inflation).map_err(|e| cfg_err(e.to_string()))?,
    };
    let (sur, report) = solve(&sigma, &theta, &cfg.solver).map_err(|e| ScenarioError::Solver(e.to_string()))?;
    let g = &cfg.grid;
    let mut grid = Vec::with_capacity(g.points * g.points);
    for i in 0..g.points {
        for j in 0..g.points {
            let x = [g.coord(i), g.coord(j)];
            let (rho_true, rho_hat) = (model.eval(&x), sur.eval(&x));
            grid.push(GridRow { x1: x[0], x2: x[1], rho_true, rho_hat, abs_err: (rho_true - rho_hat).abs() });
        }
    }
    let max_abs_err = grid.iter().map(|r| r.abs_err).fold(0.0, f64::max);
    let min_rho_hat = grid.iter().map(|r| r.rho_hat).fold(f64::INFINITY, f64::min);
    let maxima_hat = local_maxima(&grid.iter().map(|r| r.rho_hat).collect::<Vec<_>>(), g);
    let maxima_true = local_maxima(&grid.iter().map(|r| r.rho_true).collect::<Vec<_>>(), g);
    let achieved = sur.achieved_moments(cfg.solver.per_dim).map_err(|e| ScenarioError::Solver(e.to_string()))?;
    let moment_residuals = achieved.iter().zip(sigma.values()).map(|(a, b)| a - b).collect();
    let (entropy, empirical) = if cfg.tv_cells > 0 {
        let rule = entropy_rule(&sigma, 80).map_err(|e| ScenarioError::Solver(e.to_string()))?;
        let truth = |x: &[f64]| model.eval(x);
        let rep = EntropyReport::compute(&sigma, |x| sur.eval(x), Some(&truth), &rule).map_err(|e| ScenarioError::Solver(e.to_string()))?;
        let lim = g.lo.abs().max(g.hi.abs()) + 2.0;
        let tv = empirical_tv(|x| sur.eval(x), |x| model.eval(x), 2, -lim, lim, cfg.tv_cells);
        (Some(rep), Some(tv))
    } else {
        (None, None)
    };
    let rec = DensityRecord {
        name: cfg.name.clone(),
        config_hash: hash.to_string(),
        order: cfg.order,
        max_abs_err,
        min_rho_hat,
        maxima_hat,
        maxima_true,
        moment_residuals,
        report,
        entropy,
        empirical_tv: empirical,
        wall_clock_s: start.elapsed().as_secs_f64(),
        grid,
    };
    Ok((rec, sur))
}

/// Per-run, per-step trajectory row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajRow {
    pub run_id: usize,
    pub step: usize,
    pub truth_x: f64,
    pub truth_y: f64,
    pub mf_x: f64,
    pub mf_y: f64,
    pub pf_x: f64,
    pub pf_y: f64,
    pub ukf_x: f64,
    pub ukf_y: f64,
}

/// RMSE over runs at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseRow {
    pub step: usize,
    pub rmse_mf: f64,
    pub rmse_pf: f64,
    pub rmse_ukf: f64,
}

/// Result of a localization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationRecord {
    pub name: String,
    pub config_hash: String,
    pub runs_ok: usize,
    /// Smallest and largest `∫ρ̂` over all MF steps of successful runs.
    pub mf_normalizer_range: [f64; 2],
    /// `(run, error)` for excluded runs.
    pub failed_runs: Vec<(usize, String)>,
    pub wall_clock_s: f64,
    #[serde(skip)]
    pub rows: Vec<TrajRow>,
    pub rmse: Vec<RmseRow>,
}

/// Euclidean distance.
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Generator for `(run, purpose)` derived from the master seed.
pub fn run_rng(master: u64, run: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(run as u64 * 8 + purpose);
    rng
}

/// `sqrt(mean_r |e_r|²)` per step from per-run squared errors.
pub fn rmse(squared: &[Vec<f64>]) -> Vec<f64> {
    let steps = squared.first().map_or(0, Vec::len);
    (0..steps).map(|k| (squared.iter().map(|r| r[k]).sum::<f64>() / squared.len() as f64).sqrt()).collect()
}

fn range_map(landmarks: &[Vec<f64>]) -> VectorMap {
    let lm = landmarks.to_vec();
    Arc::new(move |x: &[f64]| lm.iter().map(|l| distance(x, l)).collect())
}

/// Simulated truth and observations of one run.
pub fn simulate_truth(cfg: &LocalizationConfig, run: usize) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), ScenarioError> {
    let mut rng = run_rng(cfg.seed, run, 0);
    let process = DensityModel::product(vec![Marginal::Normal { mean: 0.0, sd: cfg.process_sd }; 2])?;
    let obs = DensityModel::product(vec![Marginal::Gumbel { location: 0.0, scale: cfg.gumbel_scale }; cfg.landmarks.len()])?;
    let h = range_map(&cfg.landmarks);
    let mut x = cfg.start.clone();
    let mut truth = Vec::with_capacity(cfg.steps);
    let mut ys = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let v = obs.sample_one(&mut rng);
        ys.push(h(&x).iter().zip(v).map(|(a, b)| a + b).collect());
        truth.push(x.clone());
        let w = process.sample_one(&mut rng);
        x = x.iter().zip(&cfg.increment).zip(w).map(|((a, b), c)| a + b + c).collect();
    }
    Ok((truth, ys))
}

/// Per-step estimates `(mf, pf, ukf)` of one run.
fn run_one(cfg: &LocalizationConfig, run: usize) -> Result<(Vec<TrajRow>, [f64; 2]), String> {
    let (truth, ys) = simulate_truth(cfg, run).map_err(|e| e.to_string())?;
    let inc = cfg.increment.clone();
    let f: VectorMap = Arc::new(move |x: &[f64]| x.iter().zip(&inc).map(|(a, b)| a + b).collect());
    let h = range_map(&cfg.landmarks);
    let l = cfg.landmarks.len();
    let process = DensityModel::product(vec![Marginal::Normal { mean: 0.0, sd: cfg.process_sd }; 2]).map_err(|e| e.to_string())?;
    let obs = DensityModel::product(vec![Marginal::Gumbel { location: 0.0, scale: cfg.gumbel_scale }; l]).map_err(|e| e.to_string())?;
    let model = FilterModel { dynamics: DynamicsModel { f: f.clone(), noise: process }, likelihood: Likelihood::Additive { h: h.clone(), noise: obs } };
    let fcfg = FilterConfig {
        two_n: cfg.mf_order,
        solver: cfg.mf_solver.clone(),
        posterior: PosteriorConfig { per_dim: cfg.mf_posterior_nodes, recenter_passes: cfg.mf_recenter_passes, inflation: cfg.mf_theta_inflation, correlated: cfg.mf_correlated_posterior, ..PosteriorConfig::default() },
        theta_inflation: cfg.mf_theta_inflation,
        correlated_theta: cfg.mf_correlated_theta,
        normalization_slack: cfg.mf_normalization_slack,
        record_history: false,
    };
    let init = |sd: f64| Gaussian::diagonal(cfg.start.clone(), &[sd * sd, sd * sd]).map_err(|e| e.to_string());
    let mut mf = FilterState::initial(DensityModel::Gaussian(init(cfg.mf_init_sd)?));

    let mut pf_rng = run_rng(cfg.seed, run, 1);
    let pf_init = DensityModel::Gaussian(init(cfg.pf_init_sd)?);
    let mut pf = ParticleSet::new((0..cfg.pf_particles).map(|_| pf_init.sample_one(&mut pf_rng)).collect());

    let ukf_model = UkfModel { f, q: DMatrix::identity(2, 2) * cfg.process_sd.powi(2), h, r: DMatrix::identity(l, l) * cfg.ukf_obs_sd.powi(2) };
    let mut ukf = UkfState::new(DVector::from_vec(cfg.start.clone()), DMatrix::identity(2, 2) * cfg.ukf_init_sd.powi(2));

    let mut rows = Vec::with_capacity(cfg.steps);
    let mut norm_range = [f64::INFINITY, f64::NEG_INFINITY];
    for (k, y) in ys.iter().enumerate() {
        if k > 0 {
            pf_predict(&mut pf, &model, &mut pf_rng);
            ukf_predict(&mut ukf, &ukf_model).map_err(|e| format!("ukf step {k}: {e}"))?;
        }
        let (next, mf_est) = step(mf, y, &model, &fcfg).map_err(|e| e.to_string())?;
        mf = next;
        if let Prior::Surrogate(s) = &mf.prior {
            norm_range = [norm_range[0].min(s.normalizer()), norm_range[1].max(s.normalizer())];
        }
        pf_update(&mut pf, y, &model, cfg.pf_resample_threshold, &mut pf_rng).map_err(|e| format!("pf step {k}: {e}"))?;
        let pf_est = pf.mean();
        ukf_update(&mut ukf, y, &ukf_model).map_err(|e| format!("ukf step {k}: {e}"))?;
        rows.push(TrajRow {
            run_id: run,
            step: k + 1,
            truth_x: truth[k][0],
            truth_y: truth[k][1],
            mf_x: mf_est[0],
            mf_y: mf_est[1],
            pf_x: pf_est[0],
            pf_y: pf_est[1],
            ukf_x: ukf.mean[0],
            ukf_y: ukf.mean[1],
        });
    }
    Ok((rows, norm_range))
}

/// Runs the Monte-Carlo localization comparison in parallel over runs.
pub fn run_localization(cfg: &LocalizationConfig, hash: &str) -> Result<LocalizationRecord, ScenarioError> {
    if cfg.landmarks.len() < 2 {
        return Err(cfg_err("at least two landmarks are required"));
    }
    let start = Instant::now();
    let results: Vec<(usize, Result<(Vec<TrajRow>, [f64; 2]), String>)> = (0..cfg.runs).into_par_iter().map(|r| (r, run_one(cfg, r))).collect();
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    let mut norm_range = [f64::INFINITY, f64::NEG_INFINITY];
    let mut sq: [Vec<Vec<f64>>; 3] = Default::default();
    for (r, res) in results {
        match res {
            Ok((rs, nr)) => {
                norm_range = [norm_range[0].min(nr[0]), norm_range[1].max(nr[1])];
                sq[0].push(rs.iter().map(|t| (t.mf_x - t.truth_x).powi(2) + (t.mf_y - t.truth_y).powi(2)).collect());
                sq[1].push(rs.iter().map(|t| (t.pf_x - t.truth_x).powi(2) + (t.pf_y - t.truth_y).powi(2)).collect());
                sq[2].push(rs.iter().map(|t| (t.ukf_x - t.truth_x).powi(2) + (t.ukf_y - t.truth_y).powi(2)).collect());
                rows.extend(rs);
            }
            Err(e) => failed.push((r, e)),
        }
    }
    let [mf, pf, ukf] = [rmse(&sq[0]), rmse(&sq[1]), rmse(&sq[2])];
    let rmse_rows = (0..mf.len()).map(|k| RmseRow { step: k + 1, rmse_mf: mf[k], rmse_pf: pf[k], rmse_ukf: ukf[k] }).collect();
    Ok(LocalizationRecord {
        name: cfg.name.clone(),
        config_hash: hash.to_string(),
        runs_ok: cfg.runs - failed.len(),
        mf_normalizer_range: norm_range,
        failed_runs: failed,
        wall_clock_s: start.elapsed().as_secs_f64(),
        rows,
        rmse: rmse_rows,
    })
}

/// Output format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

fn write_csv<T: Serialize, W: Write>(rows: &[T], header: &[&str], w: W) -> Result<(), ScenarioError> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wr.write_record(header)?;
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

/// Density grid CSV.
pub fn write_density_csv<W: Write>(rec: &DensityRecord, w: W) -> Result<(), ScenarioError> {
    write_csv(&rec.grid, &["x1", "x2", "rho_true", "rho_hat", "abs_err"], w)
}

/// Trajectory CSV.
pub fn write_trajectory_csv<W: Write>(rows: &[TrajRow], w: W) -> Result<(), ScenarioError> {
    write_csv(rows, &["run_id", "step", "truth_x", "truth_y", "mf_x", "mf_y", "pf_x", "pf_y", "ukf_x", "ukf_y"], w)
}

/// RMSE summary CSV.
pub fn write_rmse_csv<W: Write>(rows: &[RmseRow], w: W) -> Result<(), ScenarioError> {
    write_csv(rows, &["step", "rmse_mf", "rmse_pf", "rmse_ukf"], w)
}

/// Parses an RMSE summary CSV.
pub fn read_rmse_csv<R: std::io::Read>(r: R) -> Result<Vec<RmseRow>, ScenarioError> {
    csv::Reader::from_reader(r).deserialize().map(|row| row.map_err(ScenarioError::from)).collect()
}

/// Parses a density grid CSV.
pub fn read_density_csv<R: std::io::Read>(r: R) -> Result<Vec<GridRow>, ScenarioError> {
    csv::Reader::from_reader(r).deserialize().map(|row| row.map_err(ScenarioError::from)).collect()
}

/// Writes a density record under `dir`; returns the paths written.
pub fn emit_density(rec: &DensityRecord, dir: &Path, format: Format) -> Result<Vec<PathBuf>, ScenarioError> {
    std::fs::create_dir_all(dir)?;
    let path = match format {
        Format::Csv => {
            let p = dir.join(format!("{}_order{}.csv", rec.name, rec.order));
            write_density_csv(rec, std::fs::File::create(&p)?)?;
            p
        }
        Format::Json => {
            let p = dir.join(format!("{}_order{}.json", rec.name, rec.order));
            std::fs::write(&p, serde_json::to_string_pretty(rec)?)?;
            p
        }
    };
    Ok(vec![path])
}

/// Writes a localization record under `dir`; returns the paths written.
pub fn emit_localization(rec: &LocalizationRecord, dir: &Path, format: Format) -> Result<Vec<PathBuf>, ScenarioError> {
    std::fs::create_dir_all(dir)?;
    match format {
        Format::Csv => {
            let traj = dir.join(format!("{}_trajectories.csv", rec.name));
            let summary = dir.join(format!("{}_rmse.csv", rec.name));
            write_trajectory_csv(&rec.rows, std::fs::File::create(&traj)?)?;
            write_rmse_csv(&rec.rmse, std::fs::File::create(&summary)?)?;
            Ok(vec![traj, summary])
        }
        Format::Json => {
            let p = dir.join(format!("{}.json", rec.name));
            std::fs::write(&p, serde_json::to_string_pretty(rec)?)?;
            Ok(vec![p])
        }
    }
}

/// Outcome of one built-in check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Fast built-in consistency checks: quadrature, solver and one filter step.
pub fn selftest() -> Vec<SelfCheck> {
    let mut out = Vec::new();
    let mut check = |name: &str, res: Result<(bool, String), String>| {
        let (passed, detail) = res.unwrap_or_else(|e| (false, e));
        out.push(SelfCheck { name: name.into(), passed, detail });
    };
    check("gauss-hermite-moments", {
        let (x, w) = crate::quadrature::gauss_hermite(20);
        let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
        Ok(((m4 - 3.0).abs() < 1e-12, format!("E[z^4] = {m4}")))
    });
    check("gaussian-target-recovery", (|| {
        let theta = ReferenceDensity::gaussian(&[0.0, 0.0], &[1.0, 1.0]).map_err(|e| e.to_string())?;
        let g = DensityModel::Gaussian(Gaussian::diagonal(vec![0.0, 0.0], &[1.0, 1.0]).map_err(|e| e.to_string())?);
        let sigma = g.raw_moments(2).map_err(|e| e.to_string())?;
        let (_, r) = solve(&sigma, &theta, &SolverConfig { per_dim: 30, ..SolverConfig::default() }).map_err(|e| e.to_string())?;
        Ok((r.grad_norm <= 1e-6, format!("gradient {:.3e}", r.grad_norm)))
    })());
    check("kalman-step", (|| {
        let id: VectorMap = Arc::new(|x: &[f64]| x.to_vec());
        let n1 = || Gaussian::diagonal(vec![0.0], &[1.0]).map(DensityModel::Gaussian).map_err(|e| e.to_string());
        let model = FilterModel { dynamics: DynamicsModel { f: id.clone(), noise: n1()? }, likelihood: Likelihood::Additive { h: id, noise: n1()? } };
        let cfg = FilterConfig { two_n: 2, ..FilterConfig::default() };
        let (s, m) = step(FilterState::initial(n1()?), &[2.0], &model, &cfg).map_err(|e| e.to_string())?;
        let var = s.history[0].target[2] - s.history[0].target[1].powi(2);
        Ok(((m[0] - 1.0).abs() < 1e-10 && (var - 1.5).abs() < 1e-10, format!("filtered mean {}, predicted variance {var}", m[0])))
    })());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pythagoras() {
        assert_eq!(distance(&[0.0, 0.0], &[3.0, 4.0]), 5.0);
    }

    #[test]
    fn rmse_hand_built() {
        // Run errors (3,4) and (0,0) at step 1: sqrt((25 + 0)/2).
        let sq = vec![vec![25.0, 1.0], vec![0.0, 1.0]];
        let r = rmse(&sq);
        assert!((r[0] - 12.5_f64.sqrt()).abs() < 1e-15);
        assert!((r[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_history_csv_is_header_only() {
        let mut buf = Vec::new();
        write_trajectory_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "run_id,step,truth_x,truth_y,mf_x,mf_y,pf_x,pf_y,ukf_x,ukf_y\n");
    }

    #[test]
    fn list_parsing() {
        assert_eq!(parse_list("1 0; 0 1;").unwrap(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(parse_vec("0.25, 0.25 ,0.5").unwrap(), vec![0.25, 0.25, 0.5]);
        assert!(parse_vec("a").is_err());
    }

    #[test]
    fn truth_increments() {
        let Some(ScenarioConfig::Localization(mut c)) = ScenarioConfig::preset("localization") else { panic!() };
        c.process_sd = 1e-12;
        c.steps = 3;
        let (truth, ys) = simulate_truth(&c, 0).unwrap();
        assert!((truth[2][0] + 4.0).abs() < 1e-9 && (truth[2][1] + 4.0).abs() < 1e-9);
        assert_eq!(ys[0].len(), 4);
    }
}
