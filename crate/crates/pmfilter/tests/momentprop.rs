mod common;

use std::sync::Arc;

use pmfilter::densities::{DensityModel, Gaussian, Marginal};
use pmfilter::momentprop::*;
use pmfilter::multiindex::MultiIndex;

fn normal1(mean: f64, var: f64) -> DensityModel {
    DensityModel::Gaussian(Gaussian::diagonal(vec![mean], &[var]).unwrap())
}

fn gauss_lik(var: f64) -> Likelihood {
    Likelihood::Additive { h: common::identity_map(), noise: normal1(0.0, var) }
}

#[test]
fn conjugate_gaussian_updates() {
    let cfg = PosteriorConfig::default();
    for (y, mean) in [(0.0, 0.0), (2.0, 1.0)] {
        let post = measurement_update(Prior::Model(normal1(0.0, 1.0)), &[y], gauss_lik(1.0), &cfg).unwrap();
        let s = posterior_moments(&post, 2).unwrap();
        assert!((s.values()[0] - 1.0).abs() < 1e-12);
        assert!((s.values()[1] - mean).abs() < 1e-10);
        assert!((s.values()[2] - mean * mean - 0.5).abs() < 1e-10);
        let x = [0.3];
        let exact = (-(x[0] - mean) * (x[0] - mean) / (2.0 * 0.5)).exp() / (std::f64::consts::PI).sqrt();
        assert!((post.eval(&x) - exact).abs() < 1e-8);
    }
}

#[test]
fn flat_likelihood_keeps_prior() {
    let prior = common::model("example1");
    let post = measurement_update(Prior::Model(prior.clone()), &[0.0, 0.0], Likelihood::Flat, &PosteriorConfig::default()).unwrap();
    let got = posterior_moments(&post, 4).unwrap();
    let exact = prior.raw_moments(4).unwrap();
    for (a, b) in got.values().iter().zip(exact.values()) {
        assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
    }
    for x in [[0.0, 0.0], [1.0, -2.0]] {
        assert!((post.eval(&x) - prior.eval(&x)).abs() < 1e-8);
    }
}

#[test]
fn constant_likelihood_leaves_moments_unchanged() {
    let prior = normal1(0.5, 2.0);
    let wide = Likelihood::Additive { h: Arc::new(|_: &[f64]| vec![0.0]), noise: normal1(0.0, 1.0) };
    let post = measurement_update(Prior::Model(prior.clone()), &[0.7], wide, &PosteriorConfig::default()).unwrap();
    let got = posterior_moments(&post, 4).unwrap();
    for (a, b) in got.values().iter().zip(prior.raw_moments(4).unwrap().values()) {
        assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0));
    }
}

#[test]
fn degenerate_likelihood_is_an_error() {
    let lik = Likelihood::Additive { h: common::identity_map(), noise: normal1(0.0, 1e-4) };
    let r = measurement_update(Prior::Model(normal1(0.0, 1.0)), &[1e3], lik, &PosteriorConfig::default());
    assert!(matches!(r, Err(MomentPropError::DegenerateLikelihood(_))));
}

#[test]
fn atomic_prior_is_rejected() {
    let pm = DensityModel::discrete(vec![(1.0, vec![0.0])]).unwrap();
    assert!(measurement_update(Prior::Model(pm), &[0.0], Likelihood::Flat, &PosteriorConfig::default()).is_err());
}

#[test]
fn propagation_examples() {
    let cfg = PosteriorConfig::default();
    let post = measurement_update(Prior::Model(normal1(0.0, 1.0)), &[0.0], gauss_lik(1.0), &cfg).unwrap();
    // Point-mass noise returns the posterior moments.
    let delta = DynamicsModel { f: common::identity_map(), noise: DensityModel::discrete(vec![(1.0, vec![0.0])]).unwrap() };
    let s = propagate_moments(&post, &delta, 4).unwrap();
    let own = posterior_moments(&post, 4).unwrap();
    for (a, b) in s.values().iter().zip(own.values()) {
        assert!((a - b).abs() < 1e-14);
    }
    let unit = DynamicsModel { f: common::identity_map(), noise: normal1(0.0, 1.0) };
    let s = propagate_moments(&post, &unit, 4).unwrap();
    for (a, b) in s.values().iter().zip([1.0, 0.0, 1.5, 0.0, 6.75]) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn robot_dynamics_shift_mean() {
    let prior = common::model("example1");
    let post = measurement_update(Prior::Model(prior.clone()), &[0.0, 0.0], Likelihood::Flat, &PosteriorConfig::default()).unwrap();
    let dynamics = DynamicsModel {
        f: Arc::new(|x: &[f64]| vec![x[0] + 1.0, x[1] + 1.0]),
        noise: DensityModel::Gaussian(Gaussian::diagonal(vec![0.0, 0.0], &[0.01, 0.01]).unwrap()),
    };
    let s = propagate_moments(&post, &dynamics, 4).unwrap();
    let m = post.mean();
    assert!((s.get(&MultiIndex(vec![1, 0])) - m[0] - 1.0).abs() < 1e-8);
    assert!((s.get(&MultiIndex(vec![0, 1])) - m[1] - 1.0).abs() < 1e-8);
    let n = 1_000_000;
    let pts = prior.sample(n, 77);
    let mc = pts.iter().map(|p| p[0] + 1.0).sum::<f64>() / n as f64;
    let sd = (prior.raw_moments(2).unwrap().get(&MultiIndex(vec![2, 0])) - m[0] * m[0] + 0.01).sqrt();
    assert!((s.get(&MultiIndex(vec![1, 0])) - mc).abs() < 5.0 * sd / (n as f64).sqrt());
}

#[test]
fn linear_dynamics_mean_is_exact() {
    let prior = DensityModel::product(vec![Marginal::Gumbel { location: 0.2, scale: 0.5 }, Marginal::Normal { mean: -1.0, sd: 0.7 }]).unwrap();
    let post = measurement_update(Prior::Model(prior), &[0.0, 0.0], Likelihood::Flat, &PosteriorConfig::default()).unwrap();
    let dynamics = DynamicsModel {
        f: Arc::new(|x: &[f64]| vec![0.9 * x[0] - 0.3 * x[1] + 0.5, 0.2 * x[0] + 1.1 * x[1] - 2.0]),
        noise: DensityModel::Gaussian(Gaussian::diagonal(vec![0.0, 0.0], &[0.3, 0.3]).unwrap()),
    };
    let s = propagate_moments(&post, &dynamics, 2).unwrap();
    let m = post.mean();
    assert!((s.mean()[0] - (0.9 * m[0] - 0.3 * m[1] + 0.5)).abs() < 1e-8);
    assert!((s.mean()[1] - (0.2 * m[0] + 1.1 * m[1] - 2.0)).abs() < 1e-8);
}

#[test]
fn non_finite_dynamics_reported() {
    let post = measurement_update(Prior::Model(normal1(0.0, 1.0)), &[0.0], Likelihood::Flat, &PosteriorConfig::default()).unwrap();
    let bad = DynamicsModel { f: Arc::new(|x: &[f64]| vec![x[0].ln()]), noise: normal1(0.0, 1.0) };
    assert!(matches!(propagate_moments(&post, &bad, 2), Err(MomentPropError::NonFinite(_))));
}

#[test]
fn mixture_posterior_moments() {
    let prior = common::model("example2");
    let post = measurement_update(Prior::Model(prior.clone()), &[0.0, 0.0], Likelihood::Flat, &PosteriorConfig::default()).unwrap();
    let got = posterior_moments(&post, 4).unwrap();
    for (a, b) in got.values().iter().zip(prior.raw_moments(4).unwrap().values()) {
        assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn push_forward_matches_monte_carlo() {
    for case in 0..5 {
        let z = common::propagation_z_score(case, 1_000_000);
        assert!(z <= 5.0, "case {case}: {z}");
    }
}
