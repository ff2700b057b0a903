//! Measurement update and moment propagation.
//!
//! The posterior `ρ_ε(y − h(x)) prior(x) / Z` is integrated on a Gaussian
//! product rule that is re-centred on the posterior itself. Moments after the
//! dynamics are `E_post[P_κ(f(x))]` with `P_κ(ε) = E[(ε + η)^κ]`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::densities::{noise_polynomial_from_moments, DensityError, DensityModel};
use crate::multiindex::{basis_g, box_indices, position, IndexError, MomentVector};
use crate::quadrature::{build_rule, pairwise_sum, QuadratureError, QuadratureRule, ReferenceDensity};
use crate::surrogate::DensitySurrogate;

/// Normalizers below this are treated as an incompatible observation.
pub const NORMALIZER_FLOOR: f64 = 1e-300;

/// Errors raised by the measurement and time updates.
#[derive(Debug, Error)]
pub enum MomentPropError {
    #[error("degenerate likelihood: normalizer {0:e}")]
    DegenerateLikelihood(f64),
    #[error("non-finite value at {0:?}")]
    NonFinite(Vec<f64>),
    #[error("atomic priors are not supported by the quadrature update")]
    AtomicPrior,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// Pointwise map `ℝ^d → ℝ^k`.
pub type VectorMap = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Prior density of a measurement update.
#[derive(Debug, Clone)]
pub enum Prior {
    /// Closed-form initial density.
    Model(DensityModel),
    /// Reconstructed surrogate.
    Surrogate(DensitySurrogate),
}

impl Prior {
    /// Density at `x`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Prior::Model(m) => m.eval(x),
            Prior::Surrogate(s) => s.eval(x),
        }
    }

    /// Dimension.
    pub fn dim(&self) -> usize {
        match self {
            Prior::Model(m) => m.dim(),
            Prior::Surrogate(s) => s.d(),
        }
    }

    /// Mean vector: closed form for models, targets for surrogates.
    pub fn mean(&self) -> Result<Vec<f64>, MomentPropError> {
        match self {
            Prior::Model(m) => Ok(m.mean()?),
            Prior::Surrogate(s) => Ok(s.target().mean()),
        }
    }

    /// Reference density for the first integration pass.
    fn reference(&self, inflation: f64, correlated: bool) -> Result<ReferenceDensity, MomentPropError> {
        match self {
            Prior::Model(m) => {
                if m.is_atomic() {
                    return Err(MomentPropError::AtomicPrior);
                }
                let s = m.raw_moments(2)?;
                Ok(if correlated { ReferenceDensity::from_moments_correlated(&s, inflation)? } else { ReferenceDensity::from_moments(&s, inflation)? })
            }
            Prior::Surrogate(s) => Ok(s.theta().clone()),
        }
    }
}

/// Observation model.
#[derive(Clone)]
pub enum Likelihood {
    /// Constant likelihood.
    Flat,
    /// `y = h(x) + ε`, `ε ∼ noise`.
    Additive { h: VectorMap, noise: DensityModel },
}

impl fmt::Debug for Likelihood {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Likelihood::Flat => write!(f, "Flat"),
            Likelihood::Additive { noise, .. } => f.debug_struct("Additive").field("noise", noise).finish_non_exhaustive(),
        }
    }
}

impl Likelihood {
    /// `ρ_ε(y − h(x))`, or 1 when flat.
    pub fn eval(&self, y: &[f64], x: &[f64]) -> f64 {
        match self {
            Likelihood::Flat => 1.0,
            Likelihood::Additive { h, noise } => {
                let r: Vec<f64> = y.iter().zip(h(x)).map(|(a, b)| a - b).collect();
                noise.eval(&r)
            }
        }
    }
}

/// `x_{t+1} = f(x_t) + η`.
#[derive(Clone)]
pub struct DynamicsModel {
    pub f: VectorMap,
    pub noise: DensityModel,
}

impl fmt::Debug for DynamicsModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DynamicsModel").field("noise", &self.noise).finish_non_exhaustive()
    }
}

/// Integration settings for posteriors.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorConfig {
    /// Nodes per dimension of the final rule.
    pub per_dim: usize,
    /// Multiplier on `per_dim` for the first pass on the prior's reference.
    pub initial_factor: usize,
    /// Re-centring passes after the first.
    pub recenter_passes: usize,
    /// Variance inflation of the re-centred rules.
    pub inflation: f64,
    /// Re-centred rules follow the full posterior covariance.
    pub correlated: bool,
}

impl Default for PosteriorConfig {
    fn default() -> Self {
        Self { per_dim: 80, initial_factor: 4, recenter_passes: 2, inflation: 2.0, correlated: false }
    }
}

/// Normalized `ρ_ε(y − h(x)) prior(x)` with the rule it was integrated on.
#[derive(Debug, Clone)]
pub struct Posterior {
    prior: Prior,
    likelihood: Likelihood,
    y: Vec<f64>,
    normalizer: f64,
    rule: QuadratureRule,
    /// `w_i · posterior(x_i) / θ(x_i)` on `rule`, summing to 1.
    mass: Vec<f64>,
}

impl Posterior {
    /// Normalized density at `x`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.likelihood.eval(&self.y, x) * self.prior.eval(x) / self.normalizer
    }

    /// `∫ ρ_ε(y − h) prior`.
    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    /// Rule carrying the posterior mass.
    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    /// Prior.
    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    /// Dimension.
    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    /// `E[g(x)]` under the posterior.
    pub fn expect(&self, mut g: impl FnMut(&[f64]) -> f64) -> f64 {
        let terms: Vec<f64> = self.mass.iter().enumerate().map(|(i, m)| m * g(self.rule.node(i))).collect();
        pairwise_sum(&terms)
    }

    /// Posterior mean.
    pub fn mean(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.expect(|x| x[i])).collect()
    }
}

/// Unnormalized masses `w_i · lik · prior / θ` on `rule` and their sum.
fn masses(prior: &Prior, lik: &Likelihood, y: &[f64], rule: &QuadratureRule) -> Result<(Vec<f64>, f64), MomentPropError> {
    let mut m = Vec::with_capacity(rule.len());
    for i in 0..rule.len() {
        let x = rule.node(i);
        let (w, th) = (rule.weights()[i], rule.theta().eval(x));
        // Nodes whose weight or reference density underflows carry no mass.
        let v = if w == 0.0 || th == 0.0 { 0.0 } else { w * lik.eval(y, x) * prior.eval(x) / th };
        if !v.is_finite() {
            return Err(MomentPropError::NonFinite(x.to_vec()));
        }
        m.push(v);
    }
    let z = pairwise_sum(&m);
    Ok((m, z))
}

/// Gaussian reference matching the mean and inflated covariance of `mass` on
/// `rule`; off-diagonal terms are kept only when `correlated`.
fn recentred(rule: &QuadratureRule, mass: &[f64], z: f64, inflation: f64, correlated: bool) -> Result<ReferenceDensity, MomentPropError> {
    let d = rule.dim();
    let mean: Vec<f64> = (0..d).map(|k| pairwise_sum(&mass.iter().enumerate().map(|(i, w)| w * rule.node(i)[k]).collect::<Vec<_>>()) / z).collect();
    let mut cov = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in 0..=a {
            if a != b && !correlated {
                continue;
            }
            let c = pairwise_sum(&mass.iter().enumerate().map(|(i, w)| w * (rule.node(i)[a] - mean[a]) * (rule.node(i)[b] - mean[b])).collect::<Vec<_>>()) / z;
            cov[(a, b)] = inflation * c;
            cov[(b, a)] = inflation * c;
        }
        if !(cov[(a, a)] > 0.0) {
            return Err(MomentPropError::DegenerateLikelihood(z));
        }
    }
    if correlated {
        Ok(ReferenceDensity::correlated_gaussian(&mean, &cov)?)
    } else {
        Ok(ReferenceDensity::gaussian(&mean, &(0..d).map(|k| cov[(k, k)].sqrt()).collect::<Vec<_>>())?)
    }
}

/// Forms the posterior of `prior` given `y`.
pub fn measurement_update(prior: Prior, y: &[f64], likelihood: Likelihood, cfg: &PosteriorConfig) -> Result<Posterior, MomentPropError> {
    let theta = prior.reference(cfg.inflation, cfg.correlated)?;
    let mut rule = build_rule(&theta, cfg.per_dim * cfg.initial_factor.max(1))?;
    let (mut mass, mut z) = masses(&prior, &likelihood, y, &rule)?;
    if !(z >= NORMALIZER_FLOOR) {
        return Err(MomentPropError::DegenerateLikelihood(z));
    }
    for _ in 0..cfg.recenter_passes {
        let th = recentred(&rule, &mass, z, cfg.inflation, cfg.correlated)?;
        rule = build_rule(&th, cfg.per_dim)?;
        (mass, z) = masses(&prior, &likelihood, y, &rule)?;
        if !(z >= NORMALIZER_FLOOR) {
            return Err(MomentPropError::DegenerateLikelihood(z));
        }
    }
    mass.iter_mut().for_each(|m| *m /= z);
    Ok(Posterior { prior, likelihood, y: y.to_vec(), normalizer: z, rule, mass })
}

/// Quadrature moments `E_post[x^κ]` over `J_2n`.
pub fn posterior_moments(post: &Posterior, two_n: usize) -> Result<MomentVector, MomentPropError> {
    let d = post.dim();
    let k = (two_n + 1).pow(d as u32);
    let mut acc = vec![Vec::with_capacity(post.rule.len()); k];
    for i in 0..post.rule.len() {
        for (a, m) in acc.iter_mut().zip(basis_g(post.rule.node(i), two_n)) {
            a.push(post.mass[i] * m);
        }
    }
    Ok(MomentVector::new(two_n / 2, d, acc.iter().map(|v| pairwise_sum(v)).collect())?)
}

/// Moments over `J_2n` of `f(x) + η` with `x` drawn from the posterior.
pub fn propagate_moments(post: &Posterior, dynamics: &DynamicsModel, two_n: usize) -> Result<MomentVector, MomentPropError> {
    let d = post.dim();
    if dynamics.noise.dim() != d {
        return Err(MomentPropError::Dimension(format!("noise has d={}, state has d={d}", dynamics.noise.dim())));
    }
    // E[f(x)^α] for α over the box.
    let k = (two_n + 1).pow(d as u32);
    let mut acc = vec![Vec::with_capacity(post.rule.len()); k];
    for i in 0..post.rule.len() {
        let fx = (dynamics.f)(post.rule.node(i));
        if fx.len() != d || fx.iter().any(|v| !v.is_finite()) {
            return Err(MomentPropError::NonFinite(post.rule.node(i).to_vec()));
        }
        for (a, m) in acc.iter_mut().zip(basis_g(&fx, two_n)) {
            a.push(post.mass[i] * m);
        }
    }
    let fm: Vec<f64> = acc.iter().map(|v| pairwise_sum(v)).collect();
    let nm = dynamics.noise.raw_moment_box(two_n)?;
    let sigma = box_indices(d, two_n)
        .iter()
        .map(|kappa| {
            let p = noise_polynomial_from_moments(&nm, two_n, kappa);
            p.terms.iter().map(|(a, c)| c * fm[position(a, two_n)]).sum()
        })
        .collect();
    Ok(MomentVector::new(two_n / 2, d, sigma)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::Gaussian;

    fn normal1(mean: f64, var: f64) -> DensityModel {
        DensityModel::Gaussian(Gaussian::diagonal(vec![mean], &[var]).unwrap())
    }

    fn identity() -> VectorMap {
        Arc::new(|x: &[f64]| x.to_vec())
    }

    #[test]
    fn conjugate_gaussian_update() {
        for (y, mean) in [(0.0, 0.0), (2.0, 1.0)] {
            let lik = Likelihood::Additive { h: identity(), noise: normal1(0.0, 1.0) };
            let post = measurement_update(Prior::Model(normal1(0.0, 1.0)), &[y], lik, &PosteriorConfig::default()).unwrap();
            let m = posterior_moments(&post, 2).unwrap();
            assert!((m.values()[1] - mean).abs() < 1e-12);
            assert!((m.values()[2] - mean * mean - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_likelihood_keeps_prior() {
        let post = measurement_update(Prior::Model(normal1(0.3, 2.0)), &[], Likelihood::Flat, &PosteriorConfig::default()).unwrap();
        let m = posterior_moments(&post, 4).unwrap();
        let exact = normal1(0.3, 2.0).raw_moments(4).unwrap();
        for (a, b) in m.values().iter().zip(exact.values()) {
            assert!((a - b).abs() < 1e-10 * b.abs().max(1.0));
        }
        assert!((post.eval(&[0.1]) - normal1(0.3, 2.0).eval(&[0.1])).abs() < 1e-14);
    }

    #[test]
    fn gaussian_convolution() {
        let lik = Likelihood::Additive { h: identity(), noise: normal1(0.0, 1.0) };
        let post = measurement_update(Prior::Model(normal1(0.0, 1.0)), &[0.0], lik, &PosteriorConfig::default()).unwrap();
        let dynamics = DynamicsModel { f: identity(), noise: normal1(0.0, 1.0) };
        let m = propagate_moments(&post, &dynamics, 4).unwrap();
        for (a, b) in m.values().iter().zip([1.0, 0.0, 1.5, 0.0, 6.75]) {
            assert!((a - b).abs() < 1e-12, "{a} {b}");
        }
    }

    #[test]
    fn incompatible_observation() {
        let narrow = DensityModel::Gaussian(Gaussian::diagonal(vec![0.0], &[1e-6]).unwrap());
        let lik = Likelihood::Additive { h: identity(), noise: narrow };
        let err = measurement_update(Prior::Model(normal1(0.0, 1e-6)), &[1e3], lik, &PosteriorConfig::default()).unwrap_err();
        assert!(matches!(err, MomentPropError::DegenerateLikelihood(_)));
    }
}
