mod common;

use std::f64::consts::{E, PI};

use pmfilter::bounds::*;
use pmfilter::densities::{DensityModel, Gaussian};
use pmfilter::quadrature::{build_rule, ReferenceDensity};
use pmfilter::scenarios::run_density_example;

fn gauss_entropy(var: f64) -> f64 {
    0.5 * (2.0 * PI * E * var).ln()
}

#[test]
fn gaussian_maxent_fits() {
    let f = fit_maxent_marginal(&[1.0, 0.0, 1.0]).unwrap();
    assert!((f.lambda[0] - (2.0 * PI).sqrt().ln()).abs() < 1e-8);
    assert!(f.lambda[1].abs() < 1e-8);
    assert!((f.lambda[2] - 0.5).abs() < 1e-8);
    let (m, v) = (1.5, 0.6);
    let f = fit_maxent_marginal(&[1.0, m, m * m + v]).unwrap();
    // exp(−(x−m)²/2v)/√(2πv) expanded in powers of x.
    let expect = [m * m / (2.0 * v) + (2.0 * PI * v).sqrt().ln(), -m / v, 1.0 / (2.0 * v)];
    for (a, b) in f.lambda.iter().zip(expect) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
    let f = fit_maxent_marginal(&[1.0, 0.0, 1.0, 0.0, 3.0]).unwrap();
    assert!(f.lambda[3].abs() < 1e-6 && f.lambda[4].abs() < 1e-6);
    assert!(f.residual <= 1e-6);
}

#[test]
fn infeasible_moments_rejected() {
    assert!(fit_maxent_marginal(&[1.0, 0.0, -1.0]).is_err());
    assert!(fit_maxent_marginal(&[1.0, 2.0, 3.0]).is_err());
}

#[test]
fn refit_is_idempotent() {
    let f = fit_maxent_marginal(&[1.0, 0.3, 1.4, 0.9, 4.1]).unwrap();
    let (lo, hi, n) = (-15.0, 15.0, 300_000);
    let h = (hi - lo) / n as f64;
    let moments: Vec<f64> = (0..5)
        .map(|k| (0..n).map(|i| { let x = lo + (i as f64 + 0.5) * h; x.powi(k) * f.pdf(x) }).sum::<f64>() * h)
        .collect();
    let g = fit_maxent_marginal(&moments).unwrap();
    for (a, b) in f.lambda.iter().zip(&g.lambda) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
}

#[test]
fn joint_entropy_examples() {
    let n01 = fit_maxent_marginal(&[1.0, 0.0, 1.0]).unwrap();
    assert!((joint_maxent_entropy(&[n01.clone()]) - 1.41894).abs() < 1e-5);
    assert!((joint_maxent_entropy(&[n01.clone(), n01]) - 2.0 * gauss_entropy(1.0)).abs() < 1e-8);
    let n04 = fit_maxent_marginal(&[1.0, 0.0, 4.0]).unwrap();
    assert!((joint_maxent_entropy(&[n04]) - gauss_entropy(1.0) - 2f64.ln()).abs() < 1e-8);
}

#[test]
fn numeric_entropy_examples() {
    let g = Gaussian::diagonal(vec![0.0, 0.0], &[1.0, 1.0]).unwrap();
    let rule = build_rule(&ReferenceDensity::gaussian(&[0.0, 0.0], &[1.5, 1.5]).unwrap(), 60).unwrap();
    assert!((entropy_numeric(|x| g.pdf(x), &rule).unwrap() - 2.83788).abs() < 1e-5);
}

#[test]
fn numeric_entropy_of_quartic_density() {
    // c·exp(−x⁴).
    let (lo, hi, n) = (-5.0, 5.0, 1_000_000);
    let h = (hi - lo) / n as f64;
    let grid = |g: &dyn Fn(f64) -> f64| (0..n).map(|i| g(lo + (i as f64 + 0.5) * h)).sum::<f64>() * h;
    let c = 1.0 / grid(&|x: f64| (-x.powi(4)).exp());
    let p = move |x: f64| c * (-x.powi(4)).exp();
    let reference = grid(&|x| p(x) * (x.powi(4) - c.ln()));
    let rule = build_rule(&ReferenceDensity::gaussian(&[0.0], &[1.0]).unwrap(), 400).unwrap();
    let v = entropy_numeric(|x| p(x[0]), &rule).unwrap();
    assert!((v - reference).abs() < 1e-4, "{v} vs {reference}");
}

#[test]
fn mixture_entropy_matches_monte_carlo() {
    let m = common::model("example1");
    let sigma = m.raw_moments(4).unwrap();
    let rule = entropy_rule(&sigma, 80).unwrap();
    let h = entropy_numeric(|x| m.eval(x), &rule).unwrap();
    let n = 10_000_000;
    let (mut s, mut s2) = (0.0, 0.0);
    for x in m.sample(n, 21) {
        let v = -m.eval(&x).ln();
        s += v;
        s2 += v * v;
    }
    let mean = s / n as f64;
    let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
    assert!((h - mean).abs() <= 5.0 * se, "{h} vs {mean} ± {se}");
}

#[test]
fn tv_bound_examples() {
    assert_eq!(tv_upper_bound(0.0).unwrap(), 0.0);
    let independent = 3.0 * (2f64.sqrt() - 1.0).sqrt();
    assert!((tv_upper_bound(2.25).unwrap() - independent).abs() < 1e-14);
    assert!((tv_upper_bound(2.25).unwrap() - 1.930783).abs() < 1e-6);
    let mut last = -1.0;
    for k in 0..50 {
        let b = tv_upper_bound(k as f64 * 0.3).unwrap();
        assert!(b > last);
        last = b;
    }
    assert!(tv_upper_bound(-0.1).is_err());
}

#[test]
fn maxent_dominates_mixture_entropy() {
    for name in ["example1", "example2"] {
        let m = common::model(name);
        let sigma = m.raw_moments(4).unwrap();
        let marg: Vec<_> = (0..2).map(|i| fit_maxent_marginal(&sigma.marginal(i)).unwrap()).collect();
        let h = entropy_numeric(|x| m.eval(x), &entropy_rule(&sigma, 80).unwrap()).unwrap();
        assert!(h <= joint_maxent_entropy(&marg) + 1e-4, "{name}");
    }
}

#[test]
fn empirical_tv_of_identical_is_zero_and_shift_is_positive() {
    let g = Gaussian::diagonal(vec![0.0, 0.0], &[1.0, 1.0]).unwrap();
    let s = Gaussian::diagonal(vec![0.5, 0.0], &[1.0, 1.0]).unwrap();
    assert_eq!(empirical_tv(|x| g.pdf(x), |x| g.pdf(x), 2, -6.0, 6.0, 100), 0.0);
    // 1-d shift by 0.5: sup|Φ(x) − Φ(x − 0.5)| = 2Φ(0.25) − 1.
    let tv = empirical_tv(|x| g.pdf(x), |x| s.pdf(x), 2, -8.0, 8.0, 400);
    assert!((tv - 0.197413).abs() < 2e-3, "{tv}");
}

#[test]
fn tv_bound_holds_on_examples() {
    for name in ["example1", "example2"] {
        let rec = run_density_example(&common::density_config(name), "").unwrap();
        let bound = rec.entropy.as_ref().unwrap().tv_bound.unwrap();
        let tv = rec.empirical_tv.unwrap();
        assert!(bound.is_finite() && bound > 0.0);
        assert!(tv <= bound, "{name}: {tv} > {bound}");
    }
}

#[test]
fn heavy_tailed_truth_gives_no_bound() {
    let g = DensityModel::Gaussian(Gaussian::diagonal(vec![0.0], &[1.0]).unwrap());
    let sigma = g.raw_moments(2).unwrap();
    let rule = entropy_rule(&sigma, 40).unwrap();
    let rep = EntropyReport::compute(&sigma, |x| g.eval(x), None, &rule).unwrap();
    assert!(rep.tv_bound.is_none());
    assert!(rep.kl_surrogate.abs() < 1e-6);
}
