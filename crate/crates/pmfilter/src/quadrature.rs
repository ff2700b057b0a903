//! Tensor-product quadrature adapted to a product reference density `θ`.
//!
//! A rule's weights absorb `θ`, so `Σ w_i g(x_i) ≈ ∫ θ(x) g(x) dx`. Gaussian
//! marginals use Gauss–Hermite nodes; Cauchy marginals use the substitution
//! `x = m + s·tan(u)` with Gauss–Legendre nodes in `u`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::multiindex::{MomentVector, MultiIndex};

/// Errors raised by rule construction and integration.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("at least 2 nodes per dimension are required, got {0}")]
    TooFewNodes(usize),
    #[error("unsupported reference density: {0}")]
    Unsupported(String),
    #[error("integrand is not finite at node {index} ({point:?})")]
    NonFinite { index: usize, point: Vec<f64> },
    #[error("invalid reference density: {0}")]
    InvalidReference(String),
}

/// Marginal family of a reference density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefFamily {
    Gaussian,
    Cauchy,
}

/// One coordinate of a product reference density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefMarginal {
    /// Family.
    pub family: RefFamily,
    /// Location `m_i`.
    pub location: f64,
    /// Scale `σ_i` (standard deviation for Gaussian).
    pub scale: f64,
}

impl RefMarginal {
    /// Density at `x`.
    pub fn pdf(&self, x: f64) -> f64 {
        let z = (x - self.location) / self.scale;
        match self.family {
            RefFamily::Gaussian => (-0.5 * z * z).exp() / (self.scale * (2.0 * PI).sqrt()),
            RefFamily::Cauchy => 1.0 / (PI * self.scale * (1.0 + z * z)),
        }
    }
}

/// Strictly positive reference density: a product `θ(x) = ∏ θ_i(x_i)`, or a
/// Gaussian with marginals `θ_i` coupled by a correlation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDensity {
    /// Per-coordinate marginals.
    pub marginals: Vec<RefMarginal>,
    /// Row-major lower Cholesky factor `L` of the correlation matrix; `None` is the identity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<Vec<f64>>,
}

impl ReferenceDensity {
    /// Validates scales.
    pub fn new(marginals: Vec<RefMarginal>) -> Result<Self, QuadratureError> {
        if marginals.is_empty() {
            return Err(QuadratureError::InvalidReference("no marginals".into()));
        }
        if marginals.iter().any(|m| !(m.scale > 0.0) || !m.location.is_finite() || !m.scale.is_finite()) {
            return Err(QuadratureError::InvalidReference("scales must be positive and finite".into()));
        }
        Ok(Self { marginals, correlation: None })
    }

    /// Gaussian `N(mean, cov)`.
    pub fn correlated_gaussian(mean: &[f64], cov: &DMatrix<f64>) -> Result<Self, QuadratureError> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(QuadratureError::InvalidReference(format!("covariance must be {d}×{d}")));
        }
        let sd: Vec<f64> = (0..d).map(|i| cov[(i, i)].sqrt()).collect();
        let mut base = Self::gaussian(mean, &sd)?;
        let corr = DMatrix::from_fn(d, d, |i, j| cov[(i, j)] / (sd[i] * sd[j]));
        let chol = nalgebra::Cholesky::new(corr).ok_or_else(|| QuadratureError::InvalidReference("covariance is not positive definite".into()))?;
        let l = chol.l();
        base.correlation = Some((0..d * d).map(|k| l[(k / d, k % d)]).collect());
        Ok(base)
    }

    /// Gaussian product with the given means and standard deviations.
    pub fn gaussian(mean: &[f64], sd: &[f64]) -> Result<Self, QuadratureError> {
        Self::new(mean.iter().zip(sd).map(|(&location, &scale)| RefMarginal { family: RefFamily::Gaussian, location, scale }).collect())
    }

    /// Cauchy product with the given locations and scales.
    pub fn cauchy(location: &[f64], scale: &[f64]) -> Result<Self, QuadratureError> {
        Self::new(location.iter().zip(scale).map(|(&location, &scale)| RefMarginal { family: RefFamily::Cauchy, location, scale }).collect())
    }

    /// Gaussian product with `m_i = σ_{e_i}` and `σ_i² = c (σ_{2e_i} − m_i²)`.
    pub fn from_moments(s: &MomentVector, inflation: f64) -> Result<Self, QuadratureError> {
        let d = s.d();
        let mut mean = Vec::with_capacity(d);
        let mut sd = Vec::with_capacity(d);
        for i in 0..d {
            let m = s.get(&MultiIndex::axis(d, i, 1));
            let v = s.get(&MultiIndex::axis(d, i, 2)) - m * m;
            if !(v > 0.0) || !(inflation > 0.0) {
                return Err(QuadratureError::InvalidReference(format!("non-positive variance {v} on axis {i}")));
            }
            mean.push(m);
            sd.push((inflation * v).sqrt());
        }
        Self::gaussian(&mean, &sd)
    }

    /// Gaussian `N(m, c·C)` with `m` and covariance `C` read from the first and
    /// second moments.
    pub fn from_moments_correlated(s: &MomentVector, inflation: f64) -> Result<Self, QuadratureError> {
        let d = s.d();
        if !(inflation > 0.0) {
            return Err(QuadratureError::InvalidReference(format!("inflation {inflation} is not positive")));
        }
        let mean: Vec<f64> = (0..d).map(|i| s.get(&MultiIndex::axis(d, i, 1))).collect();
        let cov = DMatrix::from_fn(d, d, |i, j| {
            let mut e = vec![0; d];
            e[i] += 1;
            e[j] += 1;
            inflation * (s.get(&MultiIndex(e)) - mean[i] * mean[j])
        });
        Self::correlated_gaussian(&mean, &cov)
    }

    /// Dimension.
    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    /// Density at `x`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match &self.correlation {
            None => self.marginals.iter().zip(x).map(|(m, &xi)| m.pdf(xi)).product(),
            Some(l) => {
                let d = self.dim();
                let z = self.standardize(x);
                let mut w = vec![0.0; d];
                let mut log_det = 0.0;
                for i in 0..d {
                    let acc: f64 = (0..i).map(|j| l[i * d + j] * w[j]).sum();
                    w[i] = (z[i] - acc) / l[i * d + i];
                    log_det += (l[i * d + i] * self.marginals[i].scale).ln();
                }
                let q: f64 = w.iter().map(|v| v * v).sum();
                (-0.5 * q - log_det - 0.5 * d as f64 * (2.0 * PI).ln()).exp()
            }
        }
    }

    /// Standardized coordinates `z_i = (x_i − m_i)/σ_i`.
    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        self.marginals.iter().zip(x).map(|(m, &xi)| (xi - m.location) / m.scale).collect()
    }

    /// The same families with zero location and unit scale.
    pub fn standard(&self) -> Self {
        Self {
            marginals: self.marginals.iter().map(|m| RefMarginal { family: m.family, location: 0.0, scale: 1.0 }).collect(),
            correlation: self.correlation.clone(),
        }
    }

    /// Locations.
    pub fn locations(&self) -> Vec<f64> {
        self.marginals.iter().map(|m| m.location).collect()
    }

    /// Scales.
    pub fn scales(&self) -> Vec<f64> {
        self.marginals.iter().map(|m| m.scale).collect()
    }
}

/// How a rule was built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    GaussHermiteProduct,
    TangentSubstitutionLegendreProduct,
}

/// Tensor-product rule with positive weights absorbing `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    d: usize,
    per_dim: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    theta: ReferenceDensity,
    provenance: Provenance,
}

impl QuadratureRule {
    /// Dimension.
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Nodes per dimension.
    pub fn per_dim(&self) -> usize {
        self.per_dim
    }

    /// Total node count.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    /// Whether the rule has no nodes.
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Node `i`.
    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.d..(i + 1) * self.d]
    }

    /// Weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Reference density absorbed by the weights.
    pub fn theta(&self) -> &ReferenceDensity {
        &self.theta
    }

    /// Construction method.
    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Weights for integrating against Lebesgue measure: `w_i / θ(x_i)`.
    pub fn lebesgue_weights(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.weights[i] / self.theta.eval(self.node(i))).collect()
    }
}

/// Builds the `θ`-adapted rule with `per_dim` nodes per coordinate.
pub fn build_rule(theta: &ReferenceDensity, per_dim: usize) -> Result<QuadratureRule, QuadratureError> {
    if per_dim < 2 {
        return Err(QuadratureError::TooFewNodes(per_dim));
    }
    let fam = theta.marginals[0].family;
    if theta.marginals.iter().any(|m| m.family != fam) {
        return Err(QuadratureError::Unsupported("mixed marginal families".into()));
    }
    if theta.correlation.is_some() && fam != RefFamily::Gaussian {
        return Err(QuadratureError::Unsupported("correlation requires Gaussian marginals".into()));
    }
    let (z, w) = match fam {
        RefFamily::Gaussian => gauss_hermite(per_dim),
        RefFamily::Cauchy => {
            let (t, w) = gauss_legendre(per_dim);
            // u = (π/2) t, θ(x) dx = du / π.
            (t.iter().map(|&ti| (0.5 * PI * ti).tan()).collect(), w.iter().map(|wi| 0.5 * wi).collect::<Vec<_>>())
        }
    };
    let d = theta.dim();
    let total = per_dim.pow(d as u32);
    let mut nodes = Vec::with_capacity(total * d);
    let mut weights = Vec::with_capacity(total);
    for p in 0..total {
        let mut rem = p;
        let mut digits = vec![0; d];
        for slot in digits.iter_mut().rev() {
            *slot = rem % per_dim;
            rem /= per_dim;
        }
        let mut wt = 1.0;
        for (i, &a) in digits.iter().enumerate() {
            let m = &theta.marginals[i];
            let zi = match &theta.correlation {
                None => z[a],
                Some(l) => (0..=i).map(|j| l[i * d + j] * z[digits[j]]).sum(),
            };
            nodes.push(m.location + m.scale * zi);
            wt *= w[a];
        }
        weights.push(wt);
    }
    let provenance = match fam {
        RefFamily::Gaussian => Provenance::GaussHermiteProduct,
        RefFamily::Cauchy => Provenance::TangentSubstitutionLegendreProduct,
    };
    Ok(QuadratureRule { d, per_dim, nodes, weights, theta: theta.clone(), provenance })
}

/// `Σ w_i g(x_i)` with pairwise summation; non-finite values are reported.
pub fn integrate(rule: &QuadratureRule, mut g: impl FnMut(&[f64]) -> f64) -> Result<f64, QuadratureError> {
    let mut terms = Vec::with_capacity(rule.len());
    for i in 0..rule.len() {
        let x = rule.node(i);
        let v = g(x);
        if !v.is_finite() {
            return Err(QuadratureError::NonFinite { index: i, point: x.to_vec() });
        }
        terms.push(rule.weights[i] * v);
    }
    Ok(pairwise_sum(&terms))
}

/// Pairwise (cascade) summation with a fixed order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 16 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Gauss–Hermite rule for the standard normal density: weights sum to 1.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let off: Vec<f64> = (1..n).map(|k| (k as f64).sqrt()).collect();
    let guesses = jacobi_eigenvalues(n, &off);
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for x0 in guesses {
        let mut x = x0;
        for _ in 0..10 {
            let (pn, pn1, _) = hermite_orthonormal(n, x);
            let step = pn / ((n as f64).sqrt() * pn1);
            x -= step;
            if step.abs() <= 1e-15 * x.abs().max(1.0) {
                break;
            }
        }
        let (_, _, w) = hermite_orthonormal(n, x);
        nodes.push(x);
        weights.push(w);
    }
    symmetrize(&mut nodes, &mut weights);
    let total = pairwise_sum(&weights);
    weights.iter_mut().for_each(|w| *w /= total);
    (nodes, weights)
}

/// Returns `(p_n(x), p_{n−1}(x), 1/Σ_{k<n} p_k(x)²)` for orthonormal
/// probabilists' Hermite polynomials, with overflow-safe rescaling.
fn hermite_orthonormal(n: usize, x: f64) -> (f64, f64, f64) {
    let mut pm1 = 0.0;
    let mut p = 1.0;
    let mut sum = 1.0;
    let mut log_scale = 0.0;
    for k in 0..n {
        let next = (x * p - (k as f64).sqrt() * pm1) / ((k + 1) as f64).sqrt();
        pm1 = p;
        p = next;
        if k + 1 < n {
            sum += p * p;
        }
        if p.abs() > 1e150 {
            p *= 1e-150;
            pm1 *= 1e-150;
            sum *= 1e-300;
            log_scale += 150.0 * std::f64::consts::LN_10;
        }
    }
    (p, pm1, (-2.0 * log_scale).exp() / sum)
}

/// Gauss–Legendre rule on `[−1, 1]`: weights sum to 2.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let off: Vec<f64> = (1..n).map(|k| k as f64 / ((4 * k * k - 1) as f64).sqrt()).collect();
    let guesses = jacobi_eigenvalues(n, &off);
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for x0 in guesses {
        let mut x = x0;
        let mut dp = 1.0;
        for _ in 0..10 {
            let (p, d) = legendre(n, x);
            dp = d;
            let step = p / d;
            x -= step;
            if step.abs() <= 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d.is_finite() {
            dp = d;
        }
        nodes.push(x);
        weights.push(2.0 / ((1.0 - x * x) * dp * dp));
    }
    symmetrize(&mut nodes, &mut weights);
    (nodes, weights)
}

/// `(P_n(x), P_n'(x))` for Legendre polynomials.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    (p1, nf * (x * p1 - p0) / (x * x - 1.0))
}

fn jacobi_eigenvalues(n: usize, off: &[f64]) -> Vec<f64> {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for (k, &b) in off.iter().enumerate() {
        j[(k, k + 1)] = b;
        j[(k + 1, k)] = b;
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(j).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

fn symmetrize(nodes: &mut [f64], weights: &mut [f64]) {
    let n = nodes.len();
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[j]);
        nodes[i] = -x;
        nodes[j] = x;
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
}
