//! Maximum-entropy marginals, entropies and the total-variation bound.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::densities::binomial;
use crate::linalg::cholesky_dense;
use crate::multiindex::MomentVector;
use crate::quadrature::{build_rule, pairwise_sum, QuadratureError, QuadratureRule};

/// Half-width of the trapezoidal fitting grid in standard deviations.
const FIT_HALF_WIDTH: f64 = 16.0;
/// Spacing of the trapezoidal fitting grid in standard deviations.
const FIT_STEP: f64 = 0.01;
/// Residual target in standardized coordinates.
const FIT_TOL: f64 = 1e-11;

/// Errors raised by the entropy machinery.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("moment sequence is infeasible (Hankel matrix not positive definite)")]
    InfeasibleMoments,
    #[error("need an even number of moments beyond the zeroth, got {0}")]
    BadLength(usize),
    #[error("maximum-entropy fit did not converge: residual {0:e}")]
    NoConvergence(f64),
    #[error("negative divergence {0}")]
    NegativeKl(f64),
    #[error("non-finite log-density at {0:?}")]
    NonFinite(Vec<f64>),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// `ρ̆(x) = exp(−Σ_j λ_j x^j)` matching moments `σ_0..σ_2n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxEntMarginal {
    /// `λ_0..λ_2n`.
    pub lambda: Vec<f64>,
    /// Fitted targets `σ_0..σ_2n`.
    pub moments: Vec<f64>,
    /// Largest moment residual in standardized coordinates.
    pub residual: f64,
}

impl MaxEntMarginal {
    /// Density at `x`.
    pub fn pdf(&self, x: f64) -> f64 {
        (-self.lambda.iter().rev().fold(0.0, |acc, c| acc * x + c)).exp()
    }

    /// `Σ λ_l σ_l`.
    pub fn entropy(&self) -> f64 {
        self.lambda.iter().zip(&self.moments).map(|(l, s)| l * s).sum()
    }
}

/// Fits the maximum-entropy density to `moments = (σ_0, …, σ_2n)`.
pub fn fit_maxent_marginal(moments: &[f64]) -> Result<MaxEntMarginal, BoundsError> {
    let len = moments.len();
    if len < 3 || len % 2 == 0 {
        return Err(BoundsError::BadLength(len));
    }
    let n = (len - 1) / 2;
    let hankel = DMatrix::from_fn(n + 1, n + 1, |i, j| moments[i + j]);
    if !matches!(cholesky_dense(&hankel), Ok(Some(_))) {
        return Err(BoundsError::InfeasibleMoments);
    }
    let m = moments[1] / moments[0];
    let v = moments[2] / moments[0] - m * m;
    let s = v.sqrt();
    // Standardized moments τ_l = E[((x − m)/s)^l].
    let tau: Vec<f64> = (0..len)
        .map(|l| (0..=l).map(|j| binomial(l, j) * (-m).powi((l - j) as i32) * moments[j]).sum::<f64>() / s.powi(l as i32))
        .collect();

    let half = (FIT_HALF_WIDTH / FIT_STEP).round() as i64;
    let nodes: Vec<f64> = (-half..=half).map(|i| i as f64 * FIT_STEP).collect();
    let lw = vec![FIT_STEP; nodes.len()];
    let powers: Vec<Vec<f64>> = nodes.iter().map(|x| (0..2 * len).map(|k| x.powi(k as i32)).collect()).collect();
    let eval = |mu: &DVector<f64>| -> Option<(f64, Vec<f64>)> {
        let mut dens = Vec::with_capacity(nodes.len());
        for p in &powers {
            let e: f64 = mu.iter().zip(p).map(|(a, b)| a * b).sum();
            let v = (-e).exp();
            if !v.is_finite() {
                return None;
            }
            dens.push(v);
        }
        let mass: f64 = pairwise_sum(&dens.iter().zip(&lw).map(|(d, w)| d * w).collect::<Vec<_>>());
        let dual = mu.iter().zip(&tau).map(|(a, b)| a * b).sum::<f64>() + mass;
        Some((dual, dens))
    };

    let mut mu = DVector::zeros(len);
    mu[0] = (2.0 * std::f64::consts::PI).sqrt().ln();
    mu[2] = 0.5;
    let (mut f, mut dens) = eval(&mu).ok_or(BoundsError::NoConvergence(f64::INFINITY))?;
    let mut resid = f64::INFINITY;
    for _ in 0..200 {
        let mom = |k: usize| pairwise_sum(&dens.iter().zip(&lw).zip(&powers).map(|((d, w), p)| d * w * p[k]).collect::<Vec<_>>());
        let g = DVector::from_iterator(len, (0..len).map(|l| tau[l] - mom(l)));
        resid = g.amax();
        if resid <= FIT_TOL {
            break;
        }
        let h = DMatrix::from_fn(len, len, |i, j| mom(i + j));
        let Some(ch) = cholesky_dense(&h).ok().flatten() else { break };
        let Ok(step) = ch.solve(&g) else { break };
        let step = -step;
        let slope = g.dot(&step);
        let mut a = 1.0;
        let mut moved = false;
        while a > 1e-12 {
            let cand = &mu + &step * a;
            if let Some((fc, dc)) = eval(&cand) {
                if fc <= f + 1e-4 * a * slope {
                    mu = cand;
                    f = fc;
                    dens = dc;
                    moved = true;
                    break;
                }
            }
            a *= 0.5;
        }
        if !moved {
            break;
        }
    }
    if resid > 1e-8 {
        return Err(BoundsError::NoConvergence(resid));
    }
    // Σ λ_j x^j = Σ μ_l ((x − m)/s)^l + ln s.
    let mut lambda = vec![0.0; len];
    for (l, mul) in mu.iter().enumerate() {
        for (j, lj) in lambda.iter_mut().enumerate().take(l + 1) {
            *lj += mul * binomial(l, j) * (-m).powi((l - j) as i32) / s.powi(l as i32);
        }
    }
    lambda[0] += s.ln();
    Ok(MaxEntMarginal { lambda, moments: moments.to_vec(), residual: resid })
}

/// Entropy of the product of fitted marginals.
pub fn joint_maxent_entropy(marginals: &[MaxEntMarginal]) -> f64 {
    marginals.iter().map(MaxEntMarginal::entropy).sum()
}

/// `−∫ ρ log ρ` on `rule`; zero density contributes zero.
pub fn entropy_numeric(density: impl Fn(&[f64]) -> f64, rule: &QuadratureRule) -> Result<f64, BoundsError> {
    let mut terms = Vec::with_capacity(rule.len());
    for i in 0..rule.len() {
        let x = rule.node(i);
        let p = density(x);
        if !(p >= 0.0) || !p.is_finite() {
            return Err(BoundsError::NonFinite(x.to_vec()));
        }
        if p > 0.0 {
            terms.push(-rule.weights()[i] * p * p.ln() / rule.theta().eval(x));
        }
    }
    Ok(pairwise_sum(&terms))
}

/// `3 (−1 + (1 + 4 kl / 9)^{1/2})^{1/2}`.
pub fn tv_upper_bound(kl: f64) -> Result<f64, BoundsError> {
    if !(kl >= 0.0) {
        return Err(BoundsError::NegativeKl(kl));
    }
    Ok(3.0 * (-1.0 + (1.0 + 4.0 * kl / 9.0).sqrt()).sqrt())
}

/// Entropies and the resulting total-variation bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub h_maxent: f64,
    pub h_surrogate: f64,
    pub h_true: Option<f64>,
    /// `H_maxent − H_surrogate`, an approximation of the divergence.
    pub kl_surrogate: f64,
    pub kl_true: Option<f64>,
    /// `None` when a divergence is unavailable.
    pub tv_bound: Option<f64>,
    /// Divergences use the entropy-difference approximation.
    pub approximate: bool,
}

impl EntropyReport {
    /// Builds the report from marginal fits of `sigma` and numeric entropies.
    pub fn compute(sigma: &MomentVector, surrogate: impl Fn(&[f64]) -> f64, truth: Option<&dyn Fn(&[f64]) -> f64>, rule: &QuadratureRule) -> Result<Self, BoundsError> {
        let marginals = (0..sigma.d()).map(|i| fit_maxent_marginal(&sigma.marginal(i))).collect::<Result<Vec<_>, _>>()?;
        let h_maxent = joint_maxent_entropy(&marginals);
        let h_surrogate = entropy_numeric(surrogate, rule)?;
        let h_true = truth.map(|t| entropy_numeric(t, rule)).transpose()?;
        let kl_surrogate = h_maxent - h_surrogate;
        let kl_true = h_true.map(|h| h_maxent - h);
        let tv_bound = match kl_true {
            Some(kt) => Some(tv_upper_bound(kl_surrogate)? + tv_upper_bound(kt)?),
            None => None,
        };
        Ok(Self { h_maxent, h_surrogate, h_true, kl_surrogate, kl_true, tv_bound, approximate: true })
    }
}

/// Gaussian product rule fitted to `sigma`'s first two moments, inflated by 2.
pub fn entropy_rule(sigma: &MomentVector, per_dim: usize) -> Result<QuadratureRule, BoundsError> {
    let theta = crate::quadrature::ReferenceDensity::from_moments(sigma, 2.0)?;
    Ok(build_rule(&theta, per_dim)?)
}

/// `sup |F_a − F_b|` over a `cells^d` midpoint grid on `[lo, hi]^d`, with
/// distribution functions from cumulative sums.
pub fn empirical_tv(a: impl Fn(&[f64]) -> f64, b: impl Fn(&[f64]) -> f64, d: usize, lo: f64, hi: f64, cells: usize) -> f64 {
    let h = (hi - lo) / cells as f64;
    let total = cells.pow(d as u32);
    let vol = h.powi(d as i32);
    let mut diff = Vec::with_capacity(total);
    let mut x = vec![0.0; d];
    for p in 0..total {
        let mut rem = p;
        for slot in x.iter_mut().rev() {
            *slot = lo + (rem % cells) as f64 * h + 0.5 * h;
            rem /= cells;
        }
        diff.push((a(&x) - b(&x)) * vol);
    }
    // Cumulative sums along each axis turn cell masses into F_a − F_b.
    for axis in 0..d {
        let stride = cells.pow((d - 1 - axis) as u32);
        let block = stride * cells;
        for base in (0..total).step_by(block) {
            for off in 0..stride {
                for k in 1..cells {
                    let i = base + k * stride + off;
                    diff[i] += diff[i - stride];
                }
            }
        }
    }
    diff.iter().fold(0.0, |m, v| m.max(v.abs()))
}
