//! `pmfilter` command-line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pmfilter::scenarios::{emit_density, emit_localization, run_density_example, run_localization, selftest, Format, Overrides, ScenarioConfig, ScenarioError};
use serde_json::json;

#[derive(Parser)]
#[command(name = "pmfilter", version, about = "Power-moment density surrogates and Bayesian filtering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct a density from its moments and compare on a grid.
    Estimate {
        /// INI file or preset name (`example1`..`example5`).
        config: String,
        #[command(flatten)]
        opts: Opts,
    },
    /// Run the Monte-Carlo localization comparison.
    Localize {
        /// INI file or preset name (`localization`).
        config: String,
        #[command(flatten)]
        opts: Opts,
    },
    /// Run built-in consistency checks.
    Selftest,
}

#[derive(Args)]
struct Opts {
    /// Moment order `2n`.
    #[arg(long)]
    order: Option<usize>,
    /// Quadrature nodes per dimension.
    #[arg(long)]
    quad_nodes: Option<usize>,
    /// Monte-Carlo runs.
    #[arg(long)]
    runs: Option<usize>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out_dir: PathBuf,
    /// Solver gradient tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Solver iteration limit.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Reference-density variance inflation.
    #[arg(long)]
    theta_inflation: Option<f64>,
}

impl Opts {
    fn overrides(&self) -> Overrides {
        Overrides {
            order: self.order,
            quad_nodes: self.quad_nodes,
            runs: self.runs,
            seed: self.seed,
            tol: self.tol,
            max_iter: self.max_iter,
            theta_inflation: self.theta_inflation,
        }
    }
}

fn load(source: &str, opts: &Opts) -> Result<ScenarioConfig, ScenarioError> {
    let mut cfg = if Path::new(source).is_file() {
        ScenarioConfig::from_ini(&std::fs::read_to_string(source)?)?
    } else {
        ScenarioConfig::preset(source).ok_or_else(|| ScenarioError::Config(format!("'{source}' is neither a file nor a preset")))?
    };
    cfg.apply_overrides(&opts.overrides());
    Ok(cfg)
}

fn paths(p: Vec<PathBuf>) -> Vec<String> {
    p.into_iter().map(|p| p.display().to_string()).collect()
}

fn run(cli: Cli) -> Result<serde_json::Value, ScenarioError> {
    match cli.command {
        Command::Estimate { config, opts } => {
            let cfg = load(&config, &opts)?;
            let hash = cfg.hash();
            let ScenarioConfig::DensityEstimation(c) = cfg else {
                return Err(ScenarioError::Config("estimate needs a density-estimation config".into()));
            };
            let rec = run_density_example(&c, &hash)?;
            let mut files = emit_density(&rec, &opts.out_dir, Format::Csv)?;
            files.extend(emit_density(&rec, &opts.out_dir, Format::Json)?);
            Ok(json!({ "name": rec.name, "config_hash": hash, "max_abs_err": rec.max_abs_err, "status": rec.report.status, "files": paths(files) }))
        }
        Command::Localize { config, opts } => {
            let cfg = load(&config, &opts)?;
            let hash = cfg.hash();
            let ScenarioConfig::Localization(c) = cfg else {
                return Err(ScenarioError::Config("localize needs a localization config".into()));
            };
            let rec = run_localization(&c, &hash)?;
            let mut files = emit_localization(&rec, &opts.out_dir, Format::Csv)?;
            files.extend(emit_localization(&rec, &opts.out_dir, Format::Json)?);
            Ok(json!({ "name": rec.name, "config_hash": hash, "runs_ok": rec.runs_ok, "failed_runs": rec.failed_runs.len(), "files": paths(files) }))
        }
        Command::Selftest => {
            let checks = selftest();
            let ok = checks.iter().all(|c| c.passed);
            let v = json!({ "passed": ok, "checks": checks });
            if ok {
                Ok(v)
            } else {
                Err(ScenarioError::Solver(v.to_string()))
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let kind = match &e {
                ScenarioError::Config(_) => "config",
                ScenarioError::Density(_) => "density",
                ScenarioError::Solver(_) => "solver",
                ScenarioError::Io(_) => "io",
                ScenarioError::Csv(_) => "csv",
                ScenarioError::Json(_) => "json",
            };
            println!("{}", json!({ "error": kind, "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
