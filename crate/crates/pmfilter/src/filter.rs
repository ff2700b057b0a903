//! Recursive filter: measurement update, moment propagation, surrogate
//! reconstruction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::densities::DensityModel;
use crate::momentprop::{measurement_update, propagate_moments, DynamicsModel, Likelihood, MomentPropError, PosteriorConfig, Prior};
use crate::quadrature::{QuadratureError, ReferenceDensity};
use crate::surrogate::{solve, SolveReport, SolverConfig, SurrogateError};

/// Default distance from 1 allowed for `∫ ρ̂`.
pub const NORMALIZATION_SLACK: f64 = 1e-4;

/// Step failure, tagged with the step index.
#[derive(Debug, Error)]
pub enum FilterError {
    #[error("step {t}: {source}")]
    Update { t: usize, source: MomentPropError },
    #[error("step {t}: {source}")]
    Solve { t: usize, source: SurrogateError },
    #[error("step {t}: reference density: {source}")]
    Reference { t: usize, source: QuadratureError },
    #[error("step {t}: surrogate integrates to {normalizer}")]
    Normalization { t: usize, normalizer: f64 },
    #[error("observation sequence is empty")]
    NoObservations,
}

/// State-space model.
#[derive(Debug, Clone)]
pub struct FilterModel {
    pub dynamics: DynamicsModel,
    pub likelihood: Likelihood,
}

/// Filter settings.
#[derive(Debug, Clone)]
pub struct FilterConfig {
    /// Moment order `2n`.
    pub two_n: usize,
    pub solver: SolverConfig,
    pub posterior: PosteriorConfig,
    /// Inflation `c` of the per-step reference density.
    pub theta_inflation: f64,
    /// The per-step reference density uses the full propagated covariance.
    pub correlated_theta: bool,
    /// Allowed `|∫ρ̂ − 1|` before a step errors out.
    pub normalization_slack: f64,
    /// Keep per-step records.
    pub record_history: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { two_n: 4, solver: SolverConfig::default(), posterior: PosteriorConfig::default(), theta_inflation: 2.0, correlated_theta: false, normalization_slack: NORMALIZATION_SLACK, record_history: true }
    }
}

/// Per-step record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Index of the step that produced this record.
    pub t: usize,
    /// Propagated target moments.
    pub target: Vec<f64>,
    /// Quadrature moments of the reconstructed surrogate.
    pub achieved: Vec<f64>,
    /// Mean of the filtered posterior at step `t`.
    pub filtered_mean: Vec<f64>,
    /// Mean of the predicted density for step `t + 1`.
    pub point_estimate: Vec<f64>,
    pub report: SolveReport,
}

/// Filter state: the current prior and the history leading to it.
#[derive(Debug, Clone)]
pub struct FilterState {
    pub t: usize,
    pub prior: Prior,
    pub last_report: Option<SolveReport>,
    pub history: Vec<StepRecord>,
}

impl FilterState {
    /// State at `t = 0` with a closed-form prior.
    pub fn initial(init: DensityModel) -> Self {
        Self { t: 0, prior: Prior::Model(init), last_report: None, history: Vec::new() }
    }
}

/// Mean of the current prior: the targets' first moments for a surrogate.
pub fn point_estimate(state: &FilterState) -> Vec<f64> {
    state.prior.mean().unwrap_or_else(|_| vec![f64::NAN; state.prior.dim()])
}

/// One filter step with observation `y`. Returns the filtered mean together
/// with the new state.
pub fn step(state: FilterState, y: &[f64], model: &FilterModel, cfg: &FilterConfig) -> Result<(FilterState, Vec<f64>), FilterError> {
    let t = state.t;
    let post = measurement_update(state.prior, y, model.likelihood.clone(), &cfg.posterior).map_err(|source| FilterError::Update { t, source })?;
    let filtered_mean = post.mean();
    let sigma = propagate_moments(&post, &model.dynamics, cfg.two_n).map_err(|source| FilterError::Update { t, source })?;
    let theta = if cfg.correlated_theta {
        ReferenceDensity::from_moments_correlated(&sigma, cfg.theta_inflation)
    } else {
        ReferenceDensity::from_moments(&sigma, cfg.theta_inflation)
    }
    .map_err(|source| FilterError::Reference { t, source })?;
    let (sur, report) = solve(&sigma, &theta, &cfg.solver).map_err(|source| FilterError::Solve { t, source })?;
    if !((sur.normalizer() - 1.0).abs() <= cfg.normalization_slack) {
        return Err(FilterError::Normalization { t, normalizer: sur.normalizer() });
    }
    let mut history = state.history;
    if cfg.record_history {
        let achieved = sur.achieved_moments(cfg.solver.per_dim).map_err(|source| FilterError::Solve { t, source })?;
        history.push(StepRecord {
            t,
            target: sigma.values().to_vec(),
            achieved,
            filtered_mean: filtered_mean.clone(),
            point_estimate: sigma.mean(),
            report: report.clone(),
        });
    }
    Ok((FilterState { t: t + 1, prior: Prior::Surrogate(sur), last_report: Some(report), history }, filtered_mean))
}

/// Runs the filter over `observations`. On failure returns the states
/// reached so far with the error.
pub fn run(model: &FilterModel, observations: &[Vec<f64>], init: DensityModel, cfg: &FilterConfig) -> Result<Vec<FilterState>, (Vec<FilterState>, FilterError)> {
    if observations.is_empty() {
        return Err((Vec::new(), FilterError::NoObservations));
    }
    let mut states = vec![FilterState::initial(init)];
    for y in observations {
        let cur = states.last().expect("non-empty").clone();
        match step(cur, y, model, cfg) {
            Ok((next, _)) => states.push(next),
            Err(e) => return Err((states, e)),
        }
    }
    Ok(states)
}
