//! Baseline filters: SIR particle filter and unscented Kalman filter.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::filter::FilterModel;
use crate::linalg::{cholesky_dense, eigen_floor, SymMatrix};
use crate::momentprop::VectorMap;

/// Default effective-sample-size trigger as a fraction of `N`.
pub const RESAMPLE_THRESHOLD: f64 = 0.5;

/// Eigenvalue floor applied to UKF covariances.
pub const COVARIANCE_FLOOR: f64 = 1e-12;

/// Baseline failures.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("all particle weights vanished")]
    WeightCollapse,
    #[error("covariance is not positive definite")]
    Covariance,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Weighted particles.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub positions: Vec<Vec<f64>>,
    /// Normalized weights.
    pub weights: Vec<f64>,
}

impl ParticleSet {
    /// Equally weighted particles.
    pub fn new(positions: Vec<Vec<f64>>) -> Self {
        let n = positions.len();
        Self { positions, weights: vec![1.0 / n as f64; n] }
    }

    /// Number of particles.
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    /// Whether the set is empty.
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// `1 / Σ w²`.
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Weighted mean.
    pub fn mean(&self) -> Vec<f64> {
        let d = self.positions.first().map_or(0, Vec::len);
        let mut m = vec![0.0; d];
        for (p, w) in self.positions.iter().zip(&self.weights) {
            for (mi, pi) in m.iter_mut().zip(p) {
                *mi += w * pi;
            }
        }
        m
    }
}

/// Indices selected by systematic resampling with offset `u ∈ [0, 1)`.
pub fn systematic_indices(weights: &[f64], u: f64) -> Vec<usize> {
    let n = weights.len();
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut j = 0;
    for i in 0..n {
        let target = (i as f64 + u) / n as f64;
        while cum < target && j + 1 < n {
            j += 1;
            cum += weights[j];
        }
        out.push(j);
    }
    out
}

/// Moves each particle through `f` and adds a noise draw.
pub fn pf_predict<R: Rng + ?Sized>(set: &mut ParticleSet, model: &FilterModel, rng: &mut R) {
    for p in set.positions.iter_mut() {
        let eta = model.dynamics.noise.sample_one(rng);
        *p = (model.dynamics.f)(p).iter().zip(eta).map(|(a, b)| a + b).collect();
    }
}

/// Reweights by the likelihood of `y`; resamples systematically when the
/// effective sample size drops below `threshold · N`.
pub fn pf_update<R: Rng + ?Sized>(set: &mut ParticleSet, y: &[f64], model: &FilterModel, threshold: f64, rng: &mut R) -> Result<(), BaselineError> {
    let mut total = 0.0;
    for (p, w) in set.positions.iter().zip(set.weights.iter_mut()) {
        *w *= model.likelihood.eval(y, p);
        total += *w;
    }
    if !(total > 0.0) || !total.is_finite() {
        return Err(BaselineError::WeightCollapse);
    }
    set.weights.iter_mut().for_each(|w| *w /= total);
    if set.effective_sample_size() < threshold * set.len() as f64 {
        let idx = systematic_indices(&set.weights, rng.gen::<f64>());
        set.positions = idx.iter().map(|&i| set.positions[i].clone()).collect();
        set.weights = vec![1.0 / set.len() as f64; set.len()];
    }
    Ok(())
}

/// Prediction followed by the update with `y`.
pub fn pf_step<R: Rng + ?Sized>(set: &mut ParticleSet, y: &[f64], model: &FilterModel, threshold: f64, rng: &mut R) -> Result<(), BaselineError> {
    pf_predict(set, model, rng);
    pf_update(set, y, model, threshold, rng)
}

/// Gaussian model for the UKF: `x' = f(x) + N(0, Q)`, `y = h(x) + N(0, R)`.
#[derive(Clone)]
pub struct UkfModel {
    pub f: VectorMap,
    pub q: DMatrix<f64>,
    pub h: VectorMap,
    pub r: DMatrix<f64>,
}

/// UKF mean, covariance and scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct UkfState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    /// Covariance repairs performed so far.
    pub repairs: usize,
}

impl UkfState {
    /// State with the default scaling `α = 1e−3, β = 2, κ = 0`.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self { mean, cov, alpha: 1e-3, beta: 2.0, kappa: 0.0, repairs: 0 }
    }

    fn lambda(&self) -> f64 {
        let d = self.mean.len() as f64;
        self.alpha * self.alpha * (d + self.kappa) - d
    }

    /// Sigma points and mean/covariance weights.
    fn sigma_points(&self) -> Result<(Vec<DVector<f64>>, Vec<f64>, Vec<f64>), BaselineError> {
        let d = self.mean.len();
        let lam = self.lambda();
        let l = cholesky_dense(&(&self.cov * (d as f64 + lam))).ok().flatten().ok_or(BaselineError::Covariance)?;
        let mut pts = vec![self.mean.clone()];
        for j in 0..d {
            let col = l.lower().column(j).into_owned();
            pts.push(&self.mean + &col);
            pts.push(&self.mean - &col);
        }
        let wi = 1.0 / (2.0 * (d as f64 + lam));
        let mut wm = vec![wi; 2 * d + 1];
        let mut wc = wm.clone();
        wm[0] = lam / (d as f64 + lam);
        wc[0] = wm[0] + 1.0 - self.alpha * self.alpha + self.beta;
        Ok((pts, wm, wc))
    }

    fn repair(&mut self, cov: DMatrix<f64>) {
        let sym = SymMatrix::new((&cov + cov.transpose()) * 0.5).expect("finite covariance");
        let (fixed, changed) = eigen_floor(&sym, COVARIANCE_FLOOR);
        self.repairs += changed as usize;
        self.cov = fixed.into_matrix();
    }
}

fn transform(pts: &[DVector<f64>], g: &VectorMap) -> Vec<DVector<f64>> {
    pts.iter().map(|p| DVector::from_vec(g(p.as_slice()))).collect()
}

fn weighted_mean(pts: &[DVector<f64>], wm: &[f64]) -> DVector<f64> {
    pts.iter().zip(wm).fold(DVector::zeros(pts[0].len()), |acc, (p, w)| acc + p * *w)
}

fn cross_cov(a: &[DVector<f64>], ma: &DVector<f64>, b: &[DVector<f64>], mb: &DVector<f64>, wc: &[f64]) -> DMatrix<f64> {
    a.iter().zip(b).zip(wc).fold(DMatrix::zeros(ma.len(), mb.len()), |acc, ((x, y), w)| acc + (x - ma) * (y - mb).transpose() * *w)
}

/// Unscented time update.
pub fn ukf_predict(state: &mut UkfState, model: &UkfModel) -> Result<(), BaselineError> {
    let (pts, wm, wc) = state.sigma_points()?;
    let fp = transform(&pts, &model.f);
    let mean = weighted_mean(&fp, &wm);
    let cov = cross_cov(&fp, &mean, &fp, &mean, &wc) + &model.q;
    state.mean = mean;
    state.repair(cov);
    Ok(())
}

/// Unscented measurement update with `y`.
pub fn ukf_update(state: &mut UkfState, y: &[f64], model: &UkfModel) -> Result<(), BaselineError> {
    let (pts, wm, wc) = state.sigma_points()?;
    let hp = transform(&pts, &model.h);
    if hp[0].len() != y.len() {
        return Err(BaselineError::Dimension(format!("h has {} outputs, y has {}", hp[0].len(), y.len())));
    }
    let ym = weighted_mean(&hp, &wm);
    let s = cross_cov(&hp, &ym, &hp, &ym, &wc) + &model.r;
    let pxy = cross_cov(&pts, &state.mean, &hp, &ym, &wc);
    let s_inv = cholesky_dense(&s).ok().flatten().ok_or(BaselineError::Covariance)?.inverse();
    let k = &pxy * s_inv;
    let innov = DVector::from_column_slice(y) - ym;
    state.mean = &state.mean + &k * innov;
    let cov = &state.cov - &k * s * k.transpose();
    state.repair(cov);
    Ok(())
}

/// Prediction followed by the update with `y`.
pub fn ukf_step(state: &mut UkfState, y: &[f64], model: &UkfModel) -> Result<(), BaselineError> {
    ukf_predict(state, model)?;
    ukf_update(state, y, model)
}
