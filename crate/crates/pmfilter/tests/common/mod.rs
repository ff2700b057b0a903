#![allow(dead_code)]

use pmfilter::densities::DensityModel;
use pmfilter::scenarios::{DensityConfig, LocalizationConfig, ScenarioConfig};

pub fn density_config(name: &str) -> DensityConfig {
    match ScenarioConfig::preset(name) {
        Some(ScenarioConfig::DensityEstimation(c)) => c,
        _ => panic!("no density preset {name}"),
    }
}

pub fn localization_config() -> LocalizationConfig {
    match ScenarioConfig::preset("localization") {
        Some(ScenarioConfig::Localization(c)) => c,
        _ => panic!("no localization preset"),
    }
}

pub fn model(name: &str) -> DensityModel {
    density_config(name).density.build().unwrap()
}

use nalgebra::{DMatrix, DVector};
use pmfilter::densities::Gaussian;
use pmfilter::linalg::SymMatrix;
use pmfilter::multiindex::{matrix_to_lambda, position, LambdaCoefficients, MomentVector, MultiIndex};
use pmfilter::quadrature::{build_rule, QuadratureRule, ReferenceDensity};
use pmfilter::surrogate::{gradient, hessian, objective, solve, SolverConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Class sums of a random Gram matrix with eigenvalues at least 0.2.
pub fn random_feasible(n: usize, d: usize, rng: &mut ChaCha8Rng) -> LambdaCoefficients {
    let size = (n + 1).pow(d as u32);
    let a = DMatrix::from_fn(size, size, |_, _| rng.gen_range(-1.0..1.0));
    let x = &a * a.transpose() / size as f64 + DMatrix::identity(size, size) * 0.2;
    matrix_to_lambda(&x, n, d)
}

pub struct SolverFixture {
    pub sigma: MomentVector,
    pub rule: QuadratureRule,
}

pub fn solver_fixture() -> SolverFixture {
    let cov = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[1.5, 0.3, 0.3, 0.8])).unwrap();
    let g = DensityModel::Gaussian(Gaussian::new(vec![0.2, -0.1], cov).unwrap());
    let theta = ReferenceDensity::gaussian(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
    SolverFixture { sigma: g.raw_moments(4).unwrap(), rule: build_rule(&theta, 20).unwrap() }
}

fn shifted(l: &LambdaCoefficients, v: &[f64], h: f64) -> LambdaCoefficients {
    LambdaCoefficients::new(l.n, l.d, l.lambda.iter().zip(v).map(|(a, b)| a + h * b).collect()).unwrap()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Worst relative max-norm gap between the gradient and central differences.
pub fn gradient_fd_error(points: usize, seed: u64) -> f64 {
    let f = solver_fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..points {
        let l = random_feasible(2, 2, &mut rng);
        let g = gradient(&l, &f.sigma, &f.rule).unwrap();
        let fd: Vec<f64> = (0..g.len())
            .map(|k| {
                let mut e = vec![0.0; g.len()];
                e[k] = 1.0;
                let jp = objective(&shifted(&l, &e, FD_STEP), &f.sigma, &f.rule).unwrap();
                let jm = objective(&shifted(&l, &e, -FD_STEP), &f.sigma, &f.rule).unwrap();
                (jp - jm) / (2.0 * FD_STEP)
            })
            .collect();
        let diff: Vec<f64> = fd.iter().zip(&g).map(|(a, b)| a - b).collect();
        worst = worst.max(max_abs(&diff) / max_abs(&g));
    }
    worst
}

/// Worst relative gap between `H v` and central differences of the gradient.
pub fn hessian_fd_error(points: usize, seed: u64) -> f64 {
    let f = solver_fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..points {
        let l = random_feasible(2, 2, &mut rng);
        let v: Vec<f64> = (0..l.lambda.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h = hessian(&l, &f.rule).unwrap();
        let hv = h.as_matrix() * DVector::from_vec(v.clone());
        let gp = gradient(&shifted(&l, &v, FD_STEP), &f.sigma, &f.rule).unwrap();
        let gm = gradient(&shifted(&l, &v, -FD_STEP), &f.sigma, &f.rule).unwrap();
        let diff: Vec<f64> = (0..hv.len()).map(|k| (gp[k] - gm[k]) / (2.0 * FD_STEP) - hv[k]).collect();
        worst = worst.max(max_abs(&diff) / hv.amax());
    }
    worst
}

/// Largest `J(t a + (1 − t) b) − t J(a) − (1 − t) J(b)` over random segments.
pub fn convexity_violation(segments: usize, seed: u64) -> f64 {
    let f = solver_fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..segments {
        let a = random_feasible(2, 2, &mut rng);
        let b = random_feasible(2, 2, &mut rng);
        let (ja, jb) = (objective(&a, &f.sigma, &f.rule).unwrap(), objective(&b, &f.sigma, &f.rule).unwrap());
        for i in 1..=9 {
            let t = i as f64 / 10.0;
            let c = LambdaCoefficients::new(2, 2, a.lambda.iter().zip(&b.lambda).map(|(x, y)| t * x + (1.0 - t) * y).collect()).unwrap();
            let jc = objective(&c, &f.sigma, &f.rule).unwrap();
            worst = worst.max(jc - t * ja - (1.0 - t) * jb);
        }
    }
    worst
}

/// Objective gap between solves started from two different Gaussian scales,
/// with the tolerance they are compared against.
pub fn uniqueness_gap() -> (f64, f64) {
    let cfg = density_config("example1");
    let sigma = cfg.density.build().unwrap().raw_moments(4).unwrap();
    let theta = cfg.theta.clone().unwrap();
    let a = SolverConfig { init_scale: 1.0, ..cfg.solver.clone() };
    let b = SolverConfig { init_scale: 0.5, ..cfg.solver.clone() };
    let (_, ra) = solve(&sigma, &theta, &a).unwrap();
    let (_, rb) = solve(&sigma, &theta, &b).unwrap();
    ((ra.objective - rb.objective).abs(), 100.0 * cfg.solver.tol)
}

use pmfilter::densities::Marginal;
use pmfilter::momentprop::{measurement_update, propagate_moments, DynamicsModel, Likelihood, PosteriorConfig, Prior, VectorMap};
use rand_distr::{Distribution, StandardNormal};
use std::sync::Arc;

pub fn identity_map() -> VectorMap {
    Arc::new(|x: &[f64]| x.to_vec())
}

/// Worst `|quadrature − Monte-Carlo| / SE` over `J_4` for one randomized
/// polynomial dynamics applied to a Gaussian posterior.
pub fn propagation_z_score(case: u64, samples: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);
    // Gaussian prior and identity observation give a Gaussian posterior.
    let m0 = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    let p0 = [rng.gen_range(0.3..1.0), rng.gen_range(0.3..1.0)];
    let r = [rng.gen_range(0.3..1.0), rng.gen_range(0.3..1.0)];
    let y = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    let post_var: Vec<f64> = (0..2).map(|i| p0[i] * r[i] / (p0[i] + r[i])).collect();
    let post_mean: Vec<f64> = (0..2).map(|i| m0[i] + p0[i] / (p0[i] + r[i]) * (y[i] - m0[i])).collect();
    let prior = DensityModel::Gaussian(Gaussian::diagonal(m0.to_vec(), &p0).unwrap());
    let noise_obs = DensityModel::Gaussian(Gaussian::diagonal(vec![0.0, 0.0], &r).unwrap());
    let lik = Likelihood::Additive { h: identity_map(), noise: noise_obs };
    let post = measurement_update(Prior::Model(prior), &y, lik, &PosteriorConfig::default()).unwrap();

    let c: Vec<f64> = (0..8).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let f = move |x: &[f64]| vec![c[0] + x[0] + c[1] * x[1] + c[2] * x[0] * x[0] + c[3] * x[0] * x[1], c[4] + c[5] * x[0] + x[1] + c[6] * x[1] * x[1] + c[7] * x[0] * x[1]];
    let noise = if case % 2 == 0 {
        DensityModel::Gaussian(Gaussian::diagonal(vec![0.0, 0.0], &[0.2, 0.1]).unwrap())
    } else {
        DensityModel::product(vec![Marginal::Gumbel { location: 0.0, scale: 0.25 }, Marginal::Gumbel { location: -0.1, scale: 0.4 }]).unwrap()
    };
    let fm: VectorMap = Arc::new(f.clone());
    let dynamics = DynamicsModel { f: fm, noise: noise.clone() };
    let sigma = propagate_moments(&post, &dynamics, 4).unwrap();

    let mut sum = vec![0.0; 25];
    let mut sq = vec![0.0; 25];
    let idx = sigma.indices();
    for _ in 0..samples {
        let x: Vec<f64> = (0..2).map(|i| post_mean[i] + post_var[i].sqrt() * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
        let eta = noise.sample_one(&mut rng);
        let z: Vec<f64> = f(&x).iter().zip(&eta).map(|(a, b)| a + b).collect();
        for (j, k) in idx.iter().enumerate() {
            let v = k.monomial(&z);
            sum[j] += v;
            sq[j] += v * v;
        }
    }
    let nf = samples as f64;
    (1..25)
        .map(|j| {
            let mean = sum[j] / nf;
            let se = ((sq[j] / nf - mean * mean) / (nf - 1.0)).sqrt();
            (sigma.values()[j] - mean).abs() / se
        })
        .fold(0.0, f64::max)
}

use pmfilter::filter::{step, FilterConfig, FilterModel, FilterState};

pub struct KalmanTracking {
    pub mean_err: f64,
    pub var_err: f64,
    pub seconds: f64,
    /// Smallest `q` over random points within six standard deviations.
    pub min_q: f64,
    /// Every certificate admitted a Cholesky factor.
    pub cholesky: bool,
}

/// Runs the surrogate filter on a drifting linear-Gaussian system and
/// returns the worst relative gaps of the reconstructed surrogate's mean and
/// variances to the exact Kalman prediction over `steps` steps.
pub fn kalman_tracking(d: usize, steps: usize, seed: u64) -> KalmanTracking {
    kalman_tracking_with(d, steps, seed, &FilterConfig { theta_inflation: KALMAN_THETA_INFLATION, ..FilterConfig::default() }, false)
}

/// Reference-density inflation used for the linear-Gaussian oracle runs.
pub const KALMAN_THETA_INFLATION: f64 = 1.5;

pub fn kalman_tracking_with(d: usize, steps: usize, seed: u64, cfg: &FilterConfig, verbose: bool) -> KalmanTracking {
    let start = std::time::Instant::now();
    let (a, b) = if d == 1 {
        (DMatrix::from_element(1, 1, 0.8), DVector::from_element(1, 2.0))
    } else {
        (DMatrix::from_row_slice(2, 2, &[0.8, 0.1, -0.1, 0.8]), DVector::from_vec(vec![2.0, 3.0]))
    };
    let q = DMatrix::identity(d, d) * 0.5;
    let r = DMatrix::identity(d, d);
    let m0 = DVector::from_element(d, 1.0);
    let p0 = DMatrix::identity(d, d);
    let (a2, b2) = (a.clone(), b.clone());
    let f: VectorMap = Arc::new(move |x: &[f64]| (&a2 * DVector::from_column_slice(x) + &b2).iter().copied().collect());
    let model = FilterModel {
        dynamics: DynamicsModel { f, noise: DensityModel::Gaussian(Gaussian::diagonal(vec![0.0; d], &vec![0.5; d]).unwrap()) },
        likelihood: Likelihood::Additive { h: identity_map(), noise: DensityModel::Gaussian(Gaussian::diagonal(vec![0.0; d], &vec![1.0; d]).unwrap()) },
    };
    let init = DensityModel::Gaussian(Gaussian::diagonal(m0.iter().copied().collect(), &vec![1.0; d]).unwrap());
    let cfg = cfg.clone();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = |n: usize| DVector::from_fn(n, |_, _| Distribution::<f64>::sample(&StandardNormal, &mut rng));
    let mut truth = &m0 + normal(d);
    let (mut m, mut p) = (m0.clone(), p0);
    let mut state = FilterState::initial(init);
    let (mut mean_err, mut var_err) = (0.0f64, 0.0f64);
    let (mut min_q, mut cholesky) = (f64::INFINITY, true);
    for t in 0..steps {
        let y = &truth + normal(d);
        // Kalman update and prediction.
        let s = &p + &r;
        let k = &p * s.clone().try_inverse().unwrap();
        m = &m + &k * (&y - &m);
        p = (DMatrix::identity(d, d) - &k) * &p;
        m = &a * &m + &b;
        p = &a * &p * a.transpose() + &q;

        let (next, _) = step(state, y.as_slice(), &model, &cfg).unwrap();
        state = next;
        let rec = state.history.last().unwrap();
        if let Prior::Surrogate(sur) = &state.prior {
            let half = 6.0 * (0..d).map(|i| p[(i, i)]).fold(0.0, f64::max).sqrt();
            let pos = sur.positivity(m.min() - half, m.max() + half, 10_000, 500 + t as u64);
            min_q = min_q.min(pos.min_q);
            cholesky &= pos.cholesky;
        }
        for i in 0..d {
            let e1 = position(&MultiIndex::axis(d, i, 1), cfg.two_n);
            let e2 = position(&MultiIndex::axis(d, i, 2), cfg.two_n);
            let mean = rec.achieved[e1];
            let var = rec.achieved[e2] - mean * mean;
            mean_err = mean_err.max((mean - m[i]).abs() / m[i].abs());
            var_err = var_err.max((var - p[(i, i)]).abs() / p[(i, i)]);
            if verbose {
                println!("t {} axis {i} mean {mean:.5} vs {:.5} var {var:.5} vs {:.5} {:?} norm {}", rec.t, m[i], p[(i, i)], rec.report.status, state.last_report.as_ref().map(|r| r.grad_norm).unwrap_or(0.0));
            }
        }
        truth = &a * &truth + &b + normal(d) * 0.5f64.sqrt();
    }
    KalmanTracking { mean_err, var_err, seconds: start.elapsed().as_secs_f64(), min_q, cholesky }
}
