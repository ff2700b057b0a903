//! Density zoo: evaluation, sampling and raw power moments for the
//! distributions used as targets, priors and noise models.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, Gamma, Gumbel, StandardNormal, StudentT, WeightedIndex};
use thiserror::Error;

use crate::linalg::{cholesky, SymMatrix};
use crate::multiindex::{box_indices, position, MomentVector, MultiIndex};
use crate::special::{bessel_k, euler_gamma, ln_gamma, zeta};

/// Errors raised by density construction and moment computation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DensityError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("moment of order {order} is infinite for {family}")]
    InfiniteMoment { family: &'static str, order: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// One-dimensional family used in product densities.
#[derive(Debug, Clone, PartialEq)]
pub enum Marginal {
    /// `N(mean, sd²)`.
    Normal { mean: f64, sd: f64 },
    /// `(1/β) exp(−z − e^{−z})`, `z = (x − location)/β`.
    Gumbel { location: f64, scale: f64 },
    /// Location-scale Student-t with `nu` degrees of freedom.
    StudentT { nu: f64, location: f64, scale: f64 },
    /// Cauchy with location and scale.
    Cauchy { location: f64, scale: f64 },
    /// Point mass at a value.
    PointMass(f64),
}

impl Marginal {
    fn validate(&self) -> Result<(), DensityError> {
        let bad = |m: &str| Err(DensityError::InvalidParameter(m.into()));
        match *self {
            Marginal::Normal { sd, .. } if !(sd > 0.0) => bad("normal sd must be positive"),
            Marginal::Gumbel { scale, .. } if !(scale > 0.0) => bad("gumbel scale must be positive"),
            Marginal::StudentT { nu, scale, .. } if !(nu > 0.0 && scale > 0.0) => bad("student-t nu and scale must be positive"),
            Marginal::Cauchy { scale, .. } if !(scale > 0.0) => bad("cauchy scale must be positive"),
            _ => Ok(()),
        }
    }

    /// Family name.
    pub fn family(&self) -> &'static str {
        match self {
            Marginal::Normal { .. } => "normal",
            Marginal::Gumbel { .. } => "gumbel",
            Marginal::StudentT { .. } => "student-t",
            Marginal::Cauchy { .. } => "cauchy",
            Marginal::PointMass(_) => "point-mass",
        }
    }

    /// Density at `x`; a point mass returns its unit weight at the atom.
    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Marginal::Normal { mean, sd } => {
                let z = (x - mean) / sd;
                (-0.5 * z * z).exp() / (sd * (2.0 * PI).sqrt())
            }
            Marginal::Gumbel { location, scale } => {
                let z = (x - location) / scale;
                (-z - (-z).exp()).exp() / scale
            }
            Marginal::StudentT { nu, location, scale } => {
                let z = (x - location) / scale;
                let ln_c = ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * PI).ln();
                (ln_c - 0.5 * (nu + 1.0) * (1.0 + z * z / nu).ln()).exp() / scale
            }
            Marginal::Cauchy { location, scale } => {
                let z = (x - location) / scale;
                1.0 / (PI * scale * (1.0 + z * z))
            }
            Marginal::PointMass(a) => {
                if x == a {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Draws one value.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Marginal::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            Marginal::Gumbel { location, scale } => Gumbel::new(location, scale).expect("validated").sample(rng),
            Marginal::StudentT { nu, location, scale } => location + scale * StudentT::new(nu).expect("validated").sample(rng),
            Marginal::Cauchy { location, scale } => Cauchy::new(location, scale).expect("validated").sample(rng),
            Marginal::PointMass(a) => a,
        }
    }

    /// Raw moments `E[X^k]`, `k = 0..=max`.
    pub fn raw_moments(&self, max: usize) -> Result<Vec<f64>, DensityError> {
        let mut m = vec![1.0; max + 1];
        match *self {
            Marginal::Normal { mean, sd } => {
                for k in 1..=max {
                    m[k] = mean * m[k - 1] + if k >= 2 { (k - 1) as f64 * sd * sd * m[k - 2] } else { 0.0 };
                }
            }
            Marginal::Gumbel { location, scale } => {
                // Cumulants: κ₁ = μ + βγ, κ_r = β^r (r−1)! ζ(r).
                let cum: Vec<f64> = (0..=max)
                    .map(|r| match r {
                        0 => 0.0,
                        1 => location + scale * euler_gamma(),
                        _ => scale.powi(r as i32) * factorial(r - 1) * zeta(r),
                    })
                    .collect();
                for k in 1..=max {
                    m[k] = (1..=k).map(|j| binomial(k - 1, j - 1) * cum[j] * m[k - j]).sum();
                }
            }
            Marginal::StudentT { nu, location, scale } => {
                if max as f64 >= nu {
                    return Err(DensityError::InfiniteMoment { family: "student-t", order: max });
                }
                let mut t = vec![0.0; max + 1];
                t[0] = 1.0;
                for k in (2..=max).step_by(2) {
                    t[k] = t[k - 2] * nu * (k - 1) as f64 / (nu - k as f64);
                }
                for k in 1..=max {
                    m[k] = (0..=k).map(|j| binomial(k, j) * location.powi((k - j) as i32) * scale.powi(j as i32) * t[j]).sum();
                }
            }
            Marginal::Cauchy { .. } => {
                if max >= 1 {
                    return Err(DensityError::InfiniteMoment { family: "cauchy", order: 1 });
                }
            }
            Marginal::PointMass(a) => {
                for k in 1..=max {
                    m[k] = a * m[k - 1];
                }
            }
        }
        Ok(m)
    }
}

/// Multivariate Gaussian `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: Vec<f64>,
    cov: SymMatrix,
    chol: DMatrix<f64>,
    log_norm: f64,
}

impl Gaussian {
    /// Validates that `cov` is symmetric positive definite.
    pub fn new(mean: Vec<f64>, cov: SymMatrix) -> Result<Self, DensityError> {
        if cov.dim() != mean.len() {
            return Err(DensityError::Dimension { expected: mean.len(), got: cov.dim() });
        }
        let f = cholesky(&cov)
            .map_err(|e| DensityError::InvalidParameter(e.to_string()))?
            .ok_or_else(|| DensityError::InvalidParameter("covariance is not positive definite".into()))?;
        let d = mean.len() as f64;
        let log_norm = -0.5 * d * (2.0 * PI).ln() - 0.5 * f.log_det();
        Ok(Self { mean, cov, chol: f.lower().clone(), log_norm })
    }

    /// Diagonal-covariance Gaussian.
    pub fn diagonal(mean: Vec<f64>, variances: &[f64]) -> Result<Self, DensityError> {
        let n = variances.len();
        let cov = SymMatrix::from_fn(n, |i, j| if i == j { variances[i] } else { 0.0 });
        Self::new(mean, cov)
    }

    /// Mean vector.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Covariance.
    pub fn cov(&self) -> &SymMatrix {
        &self.cov
    }

    /// Density at `x`.
    pub fn pdf(&self, x: &[f64]) -> f64 {
        let y = DVector::from_iterator(x.len(), x.iter().zip(&self.mean).map(|(a, b)| a - b));
        let z = self.chol.solve_lower_triangular(&y).expect("positive diagonal");
        (self.log_norm - 0.5 * z.norm_squared()).exp()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_iterator(self.mean.len(), (0..self.mean.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let y = &self.chol * z;
        self.mean.iter().zip(y.iter()).map(|(m, v)| m + v).collect()
    }
}

/// Generalized asymmetric Laplace component, the law of
/// `location + skew·W + √W·Σ^{1/2} Z` with `W ~ Gamma(s, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gal {
    location: Vec<f64>,
    skew: Vec<f64>,
    sigma: SymMatrix,
    s: f64,
    chol: DMatrix<f64>,
    sigma_inv: DMatrix<f64>,
    log_det: f64,
}

/// Mahalanobis radius used in place of zero when the GAL density diverges.
pub const GAL_RADIUS_FLOOR: f64 = 1e-10;

impl Gal {
    /// Validates parameters.
    pub fn new(location: Vec<f64>, skew: Vec<f64>, sigma: SymMatrix, s: f64) -> Result<Self, DensityError> {
        let d = location.len();
        if skew.len() != d || sigma.dim() != d {
            return Err(DensityError::Dimension { expected: d, got: skew.len().min(sigma.dim()) });
        }
        if !(s > 0.0) {
            return Err(DensityError::InvalidParameter("GAL shape must be positive".into()));
        }
        let f = cholesky(&sigma)
            .map_err(|e| DensityError::InvalidParameter(e.to_string()))?
            .ok_or_else(|| DensityError::InvalidParameter("GAL scale matrix is not positive definite".into()))?;
        Ok(Self { location, skew, s, chol: f.lower().clone(), sigma_inv: f.inverse(), log_det: f.log_det(), sigma })
    }

    /// Density at `x`.
    pub fn pdf(&self, x: &[f64]) -> f64 {
        let d = self.location.len();
        let y = DVector::from_iterator(d, x.iter().zip(&self.location).map(|(a, b)| a - b));
        let mu = DVector::from_column_slice(&self.skew);
        let si_y = &self.sigma_inv * &y;
        let q = y.dot(&si_y).max(0.0).sqrt().max(GAL_RADIUS_FLOOR);
        let c = (2.0 + mu.dot(&(&self.sigma_inv * &mu))).sqrt();
        let nu = self.s - 0.5 * d as f64;
        let k = bessel_k(nu, q * c);
        if k == 0.0 {
            return 0.0;
        }
        let ln = 2.0_f64.ln() + mu.dot(&si_y) - 0.5 * d as f64 * (2.0 * PI).ln() - ln_gamma(self.s) - 0.5 * self.log_det
            + nu * (q / c).ln()
            + k.ln();
        ln.exp()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.location.len();
        let w: f64 = Gamma::new(self.s, 1.0).expect("validated").sample(rng);
        let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let y = &self.chol * z * w.sqrt();
        (0..d).map(|i| self.location[i] + self.skew[i] * w + y[i]).collect()
    }
}

/// A probability model on `ℝ^d`.
#[derive(Debug, Clone, PartialEq)]
pub enum DensityModel {
    /// Single multivariate Gaussian.
    Gaussian(Gaussian),
    /// Weighted Gaussian components.
    GaussianMixture(Vec<(f64, Gaussian)>),
    /// Weighted GAL components.
    Gal(Vec<(f64, Gal)>),
    /// Weighted components with independent coordinates.
    Product(Vec<(f64, Vec<Marginal>)>),
    /// Weighted atoms.
    Discrete(Vec<(f64, Vec<f64>)>),
}

fn check_weights<T>(items: &[(f64, T)]) -> Result<(), DensityError> {
    if items.is_empty() {
        return Err(DensityError::InvalidParameter("mixture has no components".into()));
    }
    if items.iter().any(|(w, _)| !(*w >= 0.0)) {
        return Err(DensityError::InvalidParameter("weights must be non-negative".into()));
    }
    let total: f64 = items.iter().map(|(w, _)| w).sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(DensityError::InvalidParameter(format!("weights sum to {total}, not 1")));
    }
    Ok(())
}

impl DensityModel {
    /// Gaussian mixture with validated weights.
    pub fn gaussian_mixture(components: Vec<(f64, Gaussian)>) -> Result<Self, DensityError> {
        check_weights(&components)?;
        let d = components[0].1.mean.len();
        if let Some((_, g)) = components.iter().find(|(_, g)| g.mean.len() != d) {
            return Err(DensityError::Dimension { expected: d, got: g.mean.len() });
        }
        Ok(Self::GaussianMixture(components))
    }

    /// GAL mixture with validated weights.
    pub fn gal_mixture(components: Vec<(f64, Gal)>) -> Result<Self, DensityError> {
        check_weights(&components)?;
        Ok(Self::Gal(components))
    }

    /// Product mixture with validated weights and marginals.
    pub fn product_mixture(components: Vec<(f64, Vec<Marginal>)>) -> Result<Self, DensityError> {
        check_weights(&components)?;
        let d = components[0].1.len();
        for (_, ms) in &components {
            if ms.len() != d {
                return Err(DensityError::Dimension { expected: d, got: ms.len() });
            }
            for m in ms {
                m.validate()?;
            }
        }
        Ok(Self::Product(components))
    }

    /// Single product density.
    pub fn product(marginals: Vec<Marginal>) -> Result<Self, DensityError> {
        Self::product_mixture(vec![(1.0, marginals)])
    }

    /// Discrete distribution with validated weights.
    pub fn discrete(atoms: Vec<(f64, Vec<f64>)>) -> Result<Self, DensityError> {
        check_weights(&atoms)?;
        Ok(Self::Discrete(atoms))
    }

    /// Dimension `d`.
    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian(g) => g.mean.len(),
            Self::GaussianMixture(c) => c[0].1.mean.len(),
            Self::Gal(c) => c[0].1.location.len(),
            Self::Product(c) => c[0].1.len(),
            Self::Discrete(c) => c[0].1.len(),
        }
    }

    /// Kind name as used in configuration files.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Gaussian(_) => "gaussian",
            Self::GaussianMixture(_) => "gaussian-mixture",
            Self::Gal(_) => "gal",
            Self::Discrete(_) => "discrete-pmf",
            Self::Product(c) => {
                let fam = c[0].1[0].family();
                if c.iter().all(|(_, ms)| ms.iter().all(|m| m.family() == fam)) {
                    match fam {
                        "gumbel" => "gumbel-product",
                        "student-t" => "student-t-product",
                        "cauchy" => "cauchy-product",
                        _ => "custom-product",
                    }
                } else {
                    "custom-product"
                }
            }
        }
    }

    /// Whether the model has an atom (a point-mass coordinate or discrete support).
    pub fn is_atomic(&self) -> bool {
        match self {
            Self::Discrete(_) => true,
            Self::Product(c) => c.iter().any(|(_, ms)| ms.iter().any(|m| matches!(m, Marginal::PointMass(_)))),
            _ => false,
        }
    }

    /// Density at `x`; discrete models return the weight of an exactly matching atom.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Self::Gaussian(g) => g.pdf(x),
            Self::GaussianMixture(c) => c.iter().map(|(w, g)| w * g.pdf(x)).sum(),
            Self::Gal(c) => c.iter().map(|(w, g)| w * g.pdf(x)).sum(),
            Self::Product(c) => c.iter().map(|(w, ms)| w * ms.iter().zip(x).map(|(m, &xi)| m.pdf(xi)).product::<f64>()).sum(),
            Self::Discrete(c) => c.iter().filter(|(_, a)| a.as_slice() == x).map(|(w, _)| w).sum(),
        }
    }

    /// Raw moments over `J_2n` (`two_n` even). Closed forms are used for every family.
    pub fn raw_moments(&self, two_n: usize) -> Result<MomentVector, DensityError> {
        if two_n % 2 != 0 {
            return Err(DensityError::InvalidParameter(format!("order {two_n} is odd")));
        }
        let d = self.dim();
        let values = self.raw_moment_box(two_n)?;
        MomentVector::new(two_n / 2, d, values).map_err(|e| DensityError::InvalidParameter(e.to_string()))
    }

    /// Raw moments over the box `{0..=max}^d` in index order; `max` may be odd.
    pub fn raw_moment_box(&self, max: usize) -> Result<Vec<f64>, DensityError> {
        let d = self.dim();
        let idx = box_indices(d, max);
        let mut out = vec![0.0; idx.len()];
        match self {
            Self::Gaussian(g) => {
                out = gaussian_moments(&g.mean, g.cov.as_matrix(), max);
            }
            Self::GaussianMixture(c) => {
                for (w, g) in c {
                    let m = gaussian_moments(&g.mean, g.cov.as_matrix(), max);
                    out.iter_mut().zip(m).for_each(|(o, v)| *o += w * v);
                }
            }
            Self::Gal(c) => {
                for (w, g) in c {
                    let m = gal_moments(g, max);
                    out.iter_mut().zip(m).for_each(|(o, v)| *o += w * v);
                }
            }
            Self::Product(c) => {
                for (w, ms) in c {
                    let per: Vec<Vec<f64>> = ms.iter().map(|m| m.raw_moments(max)).collect::<Result<_, _>>()?;
                    for (o, k) in out.iter_mut().zip(&idx) {
                        *o += w * k.0.iter().enumerate().map(|(i, &ki)| per[i][ki]).product::<f64>();
                    }
                }
            }
            Self::Discrete(c) => {
                for (w, a) in c {
                    for (o, k) in out.iter_mut().zip(&idx) {
                        *o += w * k.monomial(a);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Draws `count` points with a generator seeded by `seed`.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| self.sample_one(&mut rng)).collect()
    }

    /// Draws one point.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        fn pick<T, R: Rng + ?Sized>(c: &[(f64, T)], rng: &mut R) -> usize {
            if c.len() == 1 {
                return 0;
            }
            WeightedIndex::new(c.iter().map(|(w, _)| *w)).expect("validated weights").sample(rng)
        }
        match self {
            Self::Gaussian(g) => g.sample(rng),
            Self::GaussianMixture(c) => c[pick(c, rng)].1.sample(rng),
            Self::Gal(c) => c[pick(c, rng)].1.sample(rng),
            Self::Product(c) => c[pick(c, rng)].1.iter().map(|m| m.sample(rng)).collect(),
            Self::Discrete(c) => c[pick(c, rng)].1.clone(),
        }
    }

    /// Mean vector.
    pub fn mean(&self) -> Result<Vec<f64>, DensityError> {
        let d = self.dim();
        let m = self.raw_moment_box(1)?;
        Ok((0..d).map(|i| m[position(&MultiIndex::axis(d, i, 1), 1)]).collect())
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

/// Binomial coefficient as a float.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Moments of `N(mean, cov)` over `{0..=max}^d`, by the recursion
/// `E[x^{κ}] = m_i E[x^{κ−e_i}] + Σ_j C_ij (κ−e_i)_j E[x^{κ−e_i−e_j}]`.
pub fn gaussian_moments(mean: &[f64], cov: &DMatrix<f64>, max: usize) -> Vec<f64> {
    let polys = conditional_gaussian_moment_polys(mean, &vec![0.0; mean.len()], cov, &DMatrix::zeros(mean.len(), mean.len()), max);
    polys.into_iter().map(|p| p[0]).collect()
}

/// Moments over `{0..=max}^d` of `N(a + b w, C0 + w C1)` as polynomials in `w`.
fn conditional_gaussian_moment_polys(a: &[f64], b: &[f64], c0: &DMatrix<f64>, c1: &DMatrix<f64>, max: usize) -> Vec<Vec<f64>> {
    let d = a.len();
    let idx = box_indices(d, max);
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(idx.len());
    let add = |dst: &mut Vec<f64>, src: &[f64], scale: f64, shift: usize| {
        if dst.len() < src.len() + shift {
            dst.resize(src.len() + shift, 0.0);
        }
        for (p, v) in src.iter().enumerate() {
            dst[p + shift] += scale * v;
        }
    };
    for k in &idx {
        let Some(i) = k.0.iter().position(|&v| v > 0) else {
            out.push(vec![1.0]);
            continue;
        };
        let mut km = k.clone();
        km.0[i] -= 1;
        let base = &out[position(&km, max)];
        let mut p = Vec::new();
        add(&mut p, base, a[i], 0);
        add(&mut p, base, b[i], 1);
        for j in 0..d {
            if km.0[j] == 0 {
                continue;
            }
            let mut kmm = km.clone();
            kmm.0[j] -= 1;
            let lower = out[position(&kmm, max)].clone();
            let f = km.0[j] as f64;
            add(&mut p, &lower, f * c0[(i, j)], 0);
            add(&mut p, &lower, f * c1[(i, j)], 1);
        }
        out.push(p);
    }
    out
}

fn gal_moments(g: &Gal, max: usize) -> Vec<f64> {
    let d = g.location.len();
    let polys = conditional_gaussian_moment_polys(&g.location, &g.skew, &DMatrix::zeros(d, d), g.sigma.as_matrix(), max);
    // E[W^p] = s (s+1) ⋯ (s+p−1) for W ~ Gamma(s, 1).
    let deg = polys.iter().map(|p| p.len()).max().unwrap_or(1);
    let mut ew = vec![1.0; deg];
    for p in 1..deg {
        ew[p] = ew[p - 1] * (g.s + (p - 1) as f64);
    }
    polys.iter().map(|p| p.iter().zip(&ew).map(|(c, e)| c * e).sum()).collect()
}

/// `P_κ(ε) = E[(ε + η)^κ]` as a sum of monomials in `ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePolynomial {
    /// `(α, coefficient)` pairs with `α ≤ κ` componentwise.
    pub terms: Vec<(MultiIndex, f64)>,
}

impl NoisePolynomial {
    /// Evaluates at `ε`.
    pub fn eval(&self, eps: &[f64]) -> f64 {
        self.terms.iter().map(|(a, c)| c * a.monomial(eps)).sum()
    }

    /// Degree in coordinate `i`.
    pub fn degree(&self, i: usize) -> usize {
        self.terms.iter().filter(|(_, c)| *c != 0.0).map(|(a, _)| a.0[i]).max().unwrap_or(0)
    }
}

/// Multinomial expansion of `E[(ε + η)^κ]` with `η` distributed as `noise`.
pub fn noise_moment_polynomial(noise: &DensityModel, k: &MultiIndex) -> Result<NoisePolynomial, DensityError> {
    let d = noise.dim();
    if k.dim() != d {
        return Err(DensityError::Dimension { expected: d, got: k.dim() });
    }
    let max = k.0.iter().copied().max().unwrap_or(0);
    let nm = noise.raw_moment_box(max)?;
    Ok(noise_polynomial_from_moments(&nm, max, k))
}

/// As [`noise_moment_polynomial`] with precomputed noise moments over `{0..=max}^d`.
pub fn noise_polynomial_from_moments(noise_moments: &[f64], max: usize, k: &MultiIndex) -> NoisePolynomial {
    let d = k.dim();
    let sub = box_indices(d, k.0.iter().copied().max().unwrap_or(0));
    let terms = sub
        .into_iter()
        .filter(|a| a.0.iter().zip(&k.0).all(|(ai, ki)| ai <= ki))
        .map(|a| {
            let rest = MultiIndex(k.0.iter().zip(&a.0).map(|(ki, ai)| ki - ai).collect());
            let c: f64 = k.0.iter().zip(&a.0).map(|(&ki, &ai)| binomial(ki, ai)).product();
            let coef = c * noise_moments[position(&rest, max)];
            (a, coef)
        })
        .collect();
    NoisePolynomial { terms }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_bivariate_at_origin() {
        let g = DensityModel::Gaussian(Gaussian::diagonal(vec![0.0, 0.0], &[1.0, 1.0]).unwrap());
        assert!((g.eval(&[0.0, 0.0]) - 1.0 / (2.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn gumbel_at_zero() {
        let m = Marginal::Gumbel { location: 0.0, scale: 0.25 };
        assert!((m.pdf(0.0) - 4.0 * (-1.0_f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn standard_normal_moments() {
        let g = DensityModel::Gaussian(Gaussian::diagonal(vec![0.0], &[1.0]).unwrap());
        assert_eq!(g.raw_moments(4).unwrap().values(), &[1.0, 0.0, 1.0, 0.0, 3.0]);
    }

    #[test]
    fn point_mass_moments() {
        let p = DensityModel::discrete(vec![(1.0, vec![1.5])]).unwrap();
        assert_eq!(p.raw_moments(2).unwrap().values(), &[1.0, 1.5, 2.25]);
        assert!(p.sample(10, 3).iter().all(|x| x == &vec![1.5]));
    }

    #[test]
    fn rejects_infinite_moments() {
        let t = DensityModel::product(vec![Marginal::StudentT { nu: 8.0, location: 0.0, scale: 1.0 }]).unwrap();
        assert!(t.raw_moments(6).is_ok());
        assert!(matches!(t.raw_moments(8), Err(DensityError::InfiniteMoment { .. })));
        let c = DensityModel::product(vec![Marginal::Cauchy { location: 0.0, scale: 3.0 }]).unwrap();
        assert!(matches!(c.raw_moments(2), Err(DensityError::InfiniteMoment { .. })));
    }

    #[test]
    fn student_t_eight_moments() {
        let m = Marginal::StudentT { nu: 8.0, location: 0.0, scale: 1.0 }.raw_moments(6).unwrap();
        let expect = [1.0, 0.0, 4.0 / 3.0, 0.0, 8.0, 0.0, 160.0];
        for (a, b) in m.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_polynomial_examples() {
        let n1 = DensityModel::Gaussian(Gaussian::diagonal(vec![0.0], &[1.0]).unwrap());
        let p = noise_moment_polynomial(&n1, &MultiIndex(vec![2])).unwrap();
        for e in [-1.0, 0.0, 2.5] {
            assert!((p.eval(&[e]) - (e * e + 1.0)).abs() < 1e-14);
        }
        let p = noise_moment_polynomial(&n1, &MultiIndex(vec![1])).unwrap();
        assert!((p.eval(&[0.7]) - 0.7).abs() < 1e-15);
        assert_eq!(p.degree(0), 1);
    }

    #[test]
    fn weights_validated() {
        let g = Gaussian::diagonal(vec![0.0], &[1.0]).unwrap();
        assert!(DensityModel::gaussian_mixture(vec![(0.5, g.clone()), (0.6, g)]).is_err());
    }

    #[test]
    fn kinds() {
        let gum = DensityModel::product(vec![Marginal::Gumbel { location: 0.0, scale: 1.0 }; 2]).unwrap();
        assert_eq!(gum.kind(), "gumbel-product");
        let mixed = DensityModel::product(vec![Marginal::Gumbel { location: 0.0, scale: 1.0 }, Marginal::PointMass(0.0)]).unwrap();
        assert_eq!(mixed.kind(), "custom-product");
        assert!(mixed.is_atomic());
    }
}
