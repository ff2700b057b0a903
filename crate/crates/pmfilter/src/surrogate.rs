//! Dual solver for the moment-constrained KL projection.
//!
//! Minimizes `J(λ) = Σ_κ λ_κ σ_κ − ∫ θ log q` with `q(x) = Σ_κ λ_κ x^κ`
//! over polynomials with a positive-definite certificate `q = Gᵀ X G`.
//! The solve runs in per-axis standardized coordinates `z = (x − m)/s`,
//! where `J` is unchanged, and maps the result back.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::densities::binomial;
use crate::linalg::{cholesky_dense, SymMatrix, CONDITION_LIMIT};
use crate::multiindex::{basis_g, poly_eval, ClassTable, IndexError, LambdaCoefficients, MomentVector};
use crate::quadrature::{build_rule, pairwise_sum, QuadratureError, QuadratureRule, ReferenceDensity};

/// Errors raised by the dual functional and the solver.
#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("infeasible coefficients: q = {value:e} at node {index}")]
    Infeasible { index: usize, value: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("initial point is not strictly feasible")]
    BadInitialPoint,
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// Positivity certificate searched by the solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Certificate {
    /// Any positive-definite Gram matrix `X` with class sums `λ`.
    Gram,
    /// The tied matrix `Λ_ij = λ_κ / |R_κ|` itself.
    Tied,
}

/// Solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Max-norm gradient tolerance.
    pub tol: f64,
    /// Newton-step budget over barrier and polish phases.
    pub max_iter: usize,
    /// Quadrature nodes per dimension.
    pub per_dim: usize,
    /// Certificate family.
    pub certificate: Certificate,
    /// Standard deviation of the Gaussian whose moment matrix starts the solve.
    pub init_scale: f64,
    /// Initial barrier weight.
    pub mu_start: f64,
    /// Barrier weight below which the barrier phase stops.
    pub mu_min: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 200, per_dim: 50, certificate: Certificate::Gram, init_scale: 1.0, mu_start: 1e-2, mu_min: 1e-12 }
    }
}

/// Solver outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    LineSearchFailure,
    /// Stopped with a near-singular certificate and the gradient above tolerance.
    Boundary,
}

/// Diagnostics of one solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Max-norm of the standardized gradient at the returned point.
    pub grad_norm: f64,
    pub objective: f64,
    pub status: SolveStatus,
    /// Accepted step lengths.
    pub step_sizes: Vec<f64>,
    /// Smallest eigenvalue of the standardized certificate.
    pub min_eigenvalue: f64,
    /// Steps that fell back to scaled steepest descent.
    pub fallback_steps: usize,
    pub certificate: Certificate,
}

impl SolveReport {
    /// JSON encoding.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report fields are serializable")
    }
}

/// `ρ̂ = θ / q` with its certificate and targets.
#[derive(Debug, Clone)]
pub struct DensitySurrogate {
    theta: ReferenceDensity,
    n: usize,
    d: usize,
    lambda_std: Vec<f64>,
    lambda: LambdaCoefficients,
    certificate_std: DMatrix<f64>,
    normalizer: f64,
    target: MomentVector,
}

impl DensitySurrogate {
    /// Reference density.
    pub fn theta(&self) -> &ReferenceDensity {
        &self.theta
    }

    /// Order parameter.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Dimension.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Coefficients of `q` in the original coordinates.
    pub fn lambda(&self) -> &LambdaCoefficients {
        &self.lambda
    }

    /// Coefficients of `q` in standardized coordinates.
    pub fn lambda_standardized(&self) -> &[f64] {
        &self.lambda_std
    }

    /// Target moments.
    pub fn target(&self) -> &MomentVector {
        &self.target
    }

    /// Quadrature value of `∫ ρ̂`.
    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    /// `q(x)`, evaluated through the standardized polynomial.
    pub fn q(&self, x: &[f64]) -> f64 {
        poly_eval(&self.lambda_std, self.n, &self.theta.standardize(x))
    }

    /// `ρ̂(x) = θ(x) / q(x)`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.theta.eval(x) / self.q(x)
    }

    /// Certificate `X` with `q = G(x)ᵀ X G(x)` in the original coordinates.
    pub fn certificate(&self) -> SymMatrix {
        let b = basis_transform(&self.theta, self.n);
        let x = b.transpose() * &self.certificate_std * &b;
        SymMatrix::new((&x + x.transpose()) * 0.5).expect("symmetrized certificate")
    }

    /// Certificate in standardized coordinates.
    pub fn certificate_standardized(&self) -> &DMatrix<f64> {
        &self.certificate_std
    }

    /// Raw moments `∫ x^κ ρ̂` over `J_2n` by quadrature with `per_dim` nodes.
    pub fn achieved_moments(&self, per_dim: usize) -> Result<Vec<f64>, SurrogateError> {
        let rule = build_rule(&self.theta.standard(), per_dim)?;
        let mut acc = vec![Vec::with_capacity(rule.len()); self.lambda_std.len()];
        for i in 0..rule.len() {
            let z = rule.node(i);
            let q = poly_eval(&self.lambda_std, self.n, z);
            if !(q > 0.0) {
                return Err(SurrogateError::Infeasible { index: i, value: q });
            }
            for (a, m) in acc.iter_mut().zip(basis_g(z, 2 * self.n)) {
                a.push(rule.weights()[i] * m / q);
            }
        }
        let z_moments: Vec<f64> = acc.iter().map(|v| pairwise_sum(v)).collect();
        Ok(axis_apply(&z_moments, 2 * self.n + 1, self.d, &from_standard(&self.theta, 2 * self.n)))
    }

    /// Smallest `q` over `count` uniform points in `[lo, hi]^d` and whether the
    /// standardized certificate admits a Cholesky factor.
    pub fn positivity(&self, lo: f64, hi: f64, count: usize, seed: u64) -> Positivity {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut min_q = f64::INFINITY;
        let mut x = vec![0.0; self.d];
        for _ in 0..count {
            for xi in x.iter_mut() {
                *xi = rng.gen_range(lo..hi);
            }
            min_q = min_q.min(self.q(&x));
        }
        let cholesky = matches!(cholesky_dense(&self.certificate_std), Ok(Some(_)));
        Positivity { min_q, cholesky }
    }

    /// `KL(θ ‖ ρ̂) = ∫ θ log q` by quadrature.
    pub fn kl_from_theta(&self, per_dim: usize) -> Result<f64, SurrogateError> {
        let rule = build_rule(&self.theta.standard(), per_dim)?;
        Ok(crate::quadrature::integrate(&rule, |z| poly_eval(&self.lambda_std, self.n, z).ln())?)
    }
}

/// Outcome of [`DensitySurrogate::positivity`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Positivity {
    pub min_q: f64,
    pub cholesky: bool,
}

impl Positivity {
    /// `q > 0` at every probe and the certificate factors.
    pub fn passed(&self) -> bool {
        self.min_q > 0.0 && self.cholesky
    }
}

/// `q` at every node of `rule`, with the feasibility check.
fn q_at_nodes(lambda: &[f64], n: usize, rule: &QuadratureRule) -> Result<Vec<f64>, SurrogateError> {
    (0..rule.len())
        .map(|i| {
            let q = poly_eval(lambda, n, rule.node(i));
            if q > 0.0 && q.is_finite() {
                Ok(q)
            } else {
                Err(SurrogateError::Infeasible { index: i, value: q })
            }
        })
        .collect()
}

fn check_lengths(lambda: &LambdaCoefficients, rule: &QuadratureRule) -> Result<(), SurrogateError> {
    if lambda.d != rule.dim() {
        return Err(SurrogateError::Dimension(format!("λ has d={}, rule has d={}", lambda.d, rule.dim())));
    }
    Ok(())
}

/// `J(λ) = Σ λ_κ σ_κ − ∫ θ log q` on `rule`.
pub fn objective(lambda: &LambdaCoefficients, sigma: &MomentVector, rule: &QuadratureRule) -> Result<f64, SurrogateError> {
    check_lengths(lambda, rule)?;
    if sigma.values().len() != lambda.lambda.len() {
        return Err(SurrogateError::Dimension("σ and λ lengths differ".into()));
    }
    let q = q_at_nodes(&lambda.lambda, lambda.n, rule)?;
    let logs: Vec<f64> = q.iter().zip(rule.weights()).map(|(q, w)| w * q.ln()).collect();
    let lin: Vec<f64> = lambda.lambda.iter().zip(sigma.values()).map(|(l, s)| l * s).collect();
    Ok(pairwise_sum(&lin) - pairwise_sum(&logs))
}

/// `σ_κ − ∫ x^κ θ / q` for every `κ ∈ J_2n`.
pub fn gradient(lambda: &LambdaCoefficients, sigma: &MomentVector, rule: &QuadratureRule) -> Result<Vec<f64>, SurrogateError> {
    check_lengths(lambda, rule)?;
    let q = q_at_nodes(&lambda.lambda, lambda.n, rule)?;
    let k = lambda.lambda.len();
    let mut acc = vec![Vec::with_capacity(rule.len()); k];
    for i in 0..rule.len() {
        let r = rule.weights()[i] / q[i];
        for (a, m) in acc.iter_mut().zip(basis_g(rule.node(i), 2 * lambda.n)) {
            a.push(r * m);
        }
    }
    Ok(sigma.values().iter().zip(&acc).map(|(s, a)| s - pairwise_sum(a)).collect())
}

/// `∫ x^{κ+κ'} θ / q²` over `J_2n × J_2n`.
pub fn hessian(lambda: &LambdaCoefficients, rule: &QuadratureRule) -> Result<SymMatrix, SurrogateError> {
    check_lengths(lambda, rule)?;
    let q = q_at_nodes(&lambda.lambda, lambda.n, rule)?;
    let m = monomial_matrix(rule, lambda.n);
    Ok(weighted_gram(&m, &q.iter().zip(rule.weights()).map(|(q, w)| w / (q * q)).collect::<Vec<_>>()))
}

/// Rows are nodes, columns the monomials of `J_2n`.
fn monomial_matrix(rule: &QuadratureRule, n: usize) -> DMatrix<f64> {
    let k = (2 * n + 1).pow(rule.dim() as u32);
    let mut m = DMatrix::zeros(rule.len(), k);
    for i in 0..rule.len() {
        for (j, v) in basis_g(rule.node(i), 2 * n).into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    m
}

/// `Mᵀ diag(c) M`.
fn weighted_gram(m: &DMatrix<f64>, c: &[f64]) -> SymMatrix {
    let mut scaled = m.clone();
    for (i, &ci) in c.iter().enumerate() {
        scaled.row_mut(i).scale_mut(ci);
    }
    let h = m.transpose() * scaled;
    SymMatrix::new((&h + h.transpose()) * 0.5).expect("finite symmetric Hessian")
}

/// Per-axis matrices `T[k][j] = C(k,j)(−m)^{k−j}/s^k`, mapping raw moments to
/// standardized moments.
fn to_standard(theta: &ReferenceDensity, max: usize) -> Vec<DMatrix<f64>> {
    theta
        .marginals
        .iter()
        .map(|mg| DMatrix::from_fn(max + 1, max + 1, |k, j| if j > k { 0.0 } else { binomial(k, j) * (-mg.location).powi((k - j) as i32) / mg.scale.powi(k as i32) }))
        .collect()
}

/// Per-axis matrices `U[k][j] = C(k,j) m^{k−j} s^j`, inverse of [`to_standard`].
fn from_standard(theta: &ReferenceDensity, max: usize) -> Vec<DMatrix<f64>> {
    theta
        .marginals
        .iter()
        .map(|mg| DMatrix::from_fn(max + 1, max + 1, |k, j| if j > k { 0.0 } else { binomial(k, j) * mg.location.powi((k - j) as i32) * mg.scale.powi(j as i32) }))
        .collect()
}

/// `B` with `G(z) = B G(x)`.
fn basis_transform(theta: &ReferenceDensity, n: usize) -> DMatrix<f64> {
    to_standard(theta, n).into_iter().fold(DMatrix::from_element(1, 1, 1.0), |acc, t| acc.kronecker(&t))
}

/// Applies `t[i]` along axis `i` of a lexicographic tensor with side `m`.
fn axis_apply(values: &[f64], m: usize, d: usize, t: &[DMatrix<f64>]) -> Vec<f64> {
    let mut cur = values.to_vec();
    for (axis, ti) in t.iter().enumerate() {
        let stride = m.pow((d - 1 - axis) as u32);
        let block = stride * m;
        let mut next = vec![0.0; cur.len()];
        for base in (0..cur.len()).step_by(block) {
            for off in 0..stride {
                for k in 0..m {
                    let mut s = 0.0;
                    for j in 0..m {
                        s += ti[(k, j)] * cur[base + j * stride + off];
                    }
                    next[base + k * stride + off] = s;
                }
            }
        }
        cur = next;
    }
    cur
}

/// Moments in standardized coordinates.
pub fn standardize_moments(sigma: &MomentVector, theta: &ReferenceDensity) -> Vec<f64> {
    axis_apply(sigma.values(), 2 * sigma.n() + 1, sigma.d(), &to_standard(theta, 2 * sigma.n()))
}

/// Coefficients in the original coordinates of `q(z(x))` given standardized coefficients.
pub fn destandardize_lambda(lambda_std: &[f64], n: usize, theta: &ReferenceDensity) -> Vec<f64> {
    let t: Vec<DMatrix<f64>> = to_standard(theta, 2 * n).into_iter().map(|m| m.transpose()).collect();
    axis_apply(lambda_std, 2 * n + 1, theta.dim(), &t)
}

/// One free variable: its symmetric-matrix direction and class contribution.
struct Generator {
    cells: Vec<(usize, usize, f64)>,
    class: usize,
    coef: f64,
}

fn generators(table: &ClassTable, certificate: Certificate) -> Vec<Generator> {
    let size = table.basis_len();
    match certificate {
        Certificate::Gram => {
            let mut g = Vec::new();
            for i in 0..size {
                for j in i..size {
                    let class = table.cell_class[i * size + j];
                    if i == j {
                        g.push(Generator { cells: vec![(i, i, 1.0)], class, coef: 1.0 });
                    } else {
                        g.push(Generator { cells: vec![(i, j, 1.0), (j, i, 1.0)], class, coef: 2.0 });
                    }
                }
            }
            g
        }
        Certificate::Tied => (0..table.indices.len())
            .filter(|&c| table.cardinality(c) > 0)
            .map(|c| {
                let w = 1.0 / table.cardinality(c) as f64;
                Generator { cells: table.cells[c].iter().map(|&(i, j)| (i, j, w)).collect(), class: c, coef: 1.0 }
            })
            .collect(),
    }
}

/// Newton steps allowed after the barrier phase.
const POLISH_STEPS: usize = 50;

/// Standardized working state for one solve.
struct Problem {
    size: usize,
    sigma: DVector<f64>,
    m: DMatrix<f64>,
    w: Vec<f64>,
    gens: Vec<Generator>,
    table: ClassTable,
}

struct Point {
    x: DMatrix<f64>,
    lambda: DVector<f64>,
    q: Vec<f64>,
    log_det: f64,
}

impl Problem {
    fn lambda_of(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let mut l = DVector::zeros(self.sigma.len());
        for i in 0..self.size {
            for j in 0..self.size {
                l[self.table.cell_class[i * self.size + j]] += x[(i, j)];
            }
        }
        l
    }

    /// Feasible point at certificate `x`, or `None`.
    fn point(&self, x: DMatrix<f64>) -> Option<Point> {
        let chol = cholesky_dense(&x).ok()??;
        let lambda = self.lambda_of(&x);
        let q: Vec<f64> = (&self.m * &lambda).iter().copied().collect();
        if q.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return None;
        }
        Some(Point { x, lambda, q, log_det: chol.log_det() })
    }

    fn dual(&self, p: &Point) -> f64 {
        let logs: Vec<f64> = p.q.iter().zip(&self.w).map(|(q, w)| w * q.ln()).collect();
        self.sigma.dot(&p.lambda) - pairwise_sum(&logs)
    }

    fn barrier(&self, p: &Point, mu: f64) -> f64 {
        self.dual(p) - mu * p.log_det
    }

    fn data_gradient(&self, p: &Point) -> DVector<f64> {
        let r = DVector::from_iterator(self.w.len(), self.w.iter().zip(&p.q).map(|(w, q)| w / q));
        &self.sigma - self.m.transpose() * r
    }

    fn data_hessian(&self, p: &Point) -> DMatrix<f64> {
        let c: Vec<f64> = self.w.iter().zip(&p.q).map(|(w, q)| w / (q * q)).collect();
        weighted_gram(&self.m, &c).into_matrix()
    }

    fn step_matrix(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.size, self.size);
        for (g, &a) in self.gens.iter().zip(v.iter()) {
            for &(i, j, u) in &g.cells {
                d[(i, j)] += a * u;
            }
        }
        d
    }

    /// Barrier gradient and Hessian over the generators.
    fn barrier_newton_system(&self, p: &Point, mu: f64) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let y = cholesky_dense(&p.x).ok()??.inverse();
        let gl = self.data_gradient(p);
        let hl = self.data_hessian(p);
        let k = self.gens.len();
        let mut g = DVector::zeros(k);
        let mut h = DMatrix::zeros(k, k);
        for (a, ga) in self.gens.iter().enumerate() {
            let tr: f64 = ga.cells.iter().map(|&(i, j, u)| u * y[(j, i)]).sum();
            g[a] = ga.coef * gl[ga.class] - mu * tr;
            for (b, gb) in self.gens.iter().enumerate().skip(a) {
                let mut t = 0.0;
                for &(p1, q1, u) in &ga.cells {
                    for &(r1, s1, v) in &gb.cells {
                        t += u * v * y[(q1, r1)] * y[(s1, p1)];
                    }
                }
                let val = ga.coef * gb.coef * hl[(ga.class, gb.class)] + mu * t;
                h[(a, b)] = val;
                h[(b, a)] = val;
            }
        }
        Some((g, h))
    }
}

/// Newton direction with Jacobi scaling; scaled steepest descent when the
/// scaled system is singular or, if `limit` is set, worse than it.
fn newton_direction(g: &DVector<f64>, h: &DMatrix<f64>, limit: Option<f64>) -> (DVector<f64>, bool) {
    let k = g.len();
    let dscale = DVector::from_iterator(k, (0..k).map(|i| h[(i, i)].max(1e-300).sqrt()));
    let hs = DMatrix::from_fn(k, k, |i, j| h[(i, j)] / (dscale[i] * dscale[j]));
    let gs = g.component_div(&dscale);
    if let Ok(Some(ch)) = cholesky_dense(&hs) {
        if limit.map_or(true, |l| ch.condition_estimate() <= l) {
            if let Ok(s) = ch.solve(&gs) {
                return (-s.component_div(&dscale), false);
            }
        }
    }
    (-gs.component_div(&dscale), true)
}

/// Solves the dual problem for `sigma` with reference `theta`.
pub fn solve(sigma: &MomentVector, theta: &ReferenceDensity, cfg: &SolverConfig) -> Result<(DensitySurrogate, SolveReport), SurrogateError> {
    let n = sigma.n();
    let d = sigma.d();
    if theta.dim() != d {
        return Err(SurrogateError::Dimension(format!("θ has d={}, σ has d={d}", theta.dim())));
    }
    let rule = build_rule(&theta.standard(), cfg.per_dim)?;
    let table = ClassTable::new(n, d);
    let size = table.basis_len();
    let sz = standardize_moments(sigma, theta);
    let prob = Problem {
        size,
        sigma: DVector::from_vec(sz),
        m: monomial_matrix(&rule, n),
        w: rule.weights().to_vec(),
        gens: generators(&table, cfg.certificate),
        table,
    };

    // Moment matrix of N(0, init_scale² I), tied by construction.
    let g_mom = crate::densities::gaussian_moments(&vec![0.0; d], &(DMatrix::identity(d, d) * cfg.init_scale.powi(2)), 2 * n);
    let x0 = DMatrix::from_fn(size, size, |i, j| g_mom[prob.table.cell_class[i * size + j]]);
    let mut p = prob.point(x0).ok_or(SurrogateError::BadInitialPoint)?;

    let mut iterations = 0;
    let mut steps = Vec::new();
    let mut fallback = 0;
    let mut mu = cfg.mu_start;
    let mut ls_failed = false;

    // Barrier phase.
    while iterations < cfg.max_iter {
        let Some((g, h)) = prob.barrier_newton_system(&p, mu) else { break };
        let (dir, fb) = newton_direction(&g, &h, None);
        let slope = g.dot(&dir);
        // A singular barrier system ends the stage like a small decrement.
        if fb || -slope < 1e-14 {
            if mu <= cfg.mu_min {
                break;
            }
            mu *= 0.2;
            continue;
        }
        iterations += 1;
        let dmat = prob.step_matrix(&dir);
        let f0 = prob.barrier(&p, mu);
        let mut a = 1.0;
        let mut accepted = None;
        while a >= 1e-16 {
            if let Some(cand) = prob.point(&p.x + &dmat * a) {
                if prob.barrier(&cand, mu) <= f0 + 1e-4 * a * slope {
                    accepted = Some(cand);
                    break;
                }
            }
            a *= 0.5;
        }
        match accepted {
            Some(c) => {
                p = c;
                steps.push(a);
            }
            None => {
                if mu <= cfg.mu_min {
                    ls_failed = true;
                    break;
                }
                mu *= 0.2;
            }
        }
    }

    // Polish: undamped-by-barrier Newton on λ with the non-tied part of X fixed.
    let tied_dir = |dl: &DVector<f64>| {
        DMatrix::from_fn(size, size, |i, j| {
            let c = prob.table.cell_class[i * size + j];
            dl[c] / prob.table.cardinality(c) as f64
        })
    };
    let polish_end = (iterations + POLISH_STEPS).min(cfg.max_iter);
    while iterations < polish_end {
        let g = prob.data_gradient(&p);
        if g.amax() <= 0.01 * cfg.tol {
            break;
        }
        let h = prob.data_hessian(&p);
        let (dir, fb) = newton_direction(&g, &h, Some(CONDITION_LIMIT));
        let slope = g.dot(&dir);
        if !(slope < 0.0) {
            break;
        }
        let dmat = tied_dir(&dir);
        let f0 = prob.dual(&p);
        let mut a = 1.0;
        let mut accepted = None;
        while a >= 1e-12 {
            if let Some(cand) = prob.point(&p.x + &dmat * a) {
                if prob.dual(&cand) <= f0 + 1e-4 * a * slope {
                    accepted = Some(cand);
                    break;
                }
            }
            a *= 0.5;
        }
        let Some(c) = accepted else { break };
        iterations += 1;
        fallback += fb as usize;
        let gain = f0 - prob.dual(&c);
        p = c;
        steps.push(a);
        if gain <= 1e-15 * f0.abs().max(1.0) {
            break;
        }
    }

    let grad_norm = prob.data_gradient(&p).amax();
    let min_eigenvalue = SymMatrix::new((&p.x + p.x.transpose()) * 0.5).map(|s| s.min_eigenvalue()).unwrap_or(f64::NAN);
    let status = if grad_norm <= cfg.tol {
        SolveStatus::Converged
    } else if iterations >= cfg.max_iter {
        SolveStatus::MaxIter
    } else if ls_failed && min_eigenvalue > 1e-8 {
        SolveStatus::LineSearchFailure
    } else {
        SolveStatus::Boundary
    };
    let objective = prob.dual(&p);
    let lambda_std: Vec<f64> = p.lambda.iter().copied().collect();
    let normalizer = pairwise_sum(&prob.w.iter().zip(&p.q).map(|(w, q)| w / q).collect::<Vec<_>>());
    let lambda = LambdaCoefficients::new(n, d, destandardize_lambda(&lambda_std, n, theta))?;
    let surrogate = DensitySurrogate {
        theta: theta.clone(),
        n,
        d,
        lambda_std,
        lambda,
        certificate_std: p.x,
        normalizer,
        target: sigma.clone(),
    };
    let report = SolveReport { iterations, grad_norm, objective, status, step_sizes: steps, min_eigenvalue, fallback_steps: fallback, certificate: cfg.certificate };
    Ok((surrogate, report))
}
