//! Multivariate non-Gaussian Bayesian filtering with power-moment density
//! surrogates.

pub mod linalg;
pub mod multiindex;
pub mod special;
pub mod densities;
pub mod quadrature;
pub mod surrogate;
pub mod momentprop;
pub mod filter;
pub mod baselines;
pub mod bounds;
pub mod scenarios;
