//! Multi-indices, the Kronecker monomial basis and the correspondence between
//! flat coefficient vectors and tied symmetric matrices.
//!
//! Indices in `J_2n = {0..=2n}^d` are ordered lexicographically with the first
//! coordinate varying slowest. The basis `G(x) = G(x₁) ⊗ … ⊗ G(x_d)` uses the
//! same ordering over `{0..=n}^d`. Matrix positions are zero-based.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::SymMatrix;

/// Errors raised by index and moment-vector construction.
#[derive(Debug, Error)]
pub enum IndexError {
    #[error("maximum exponent must be even, got {0}")]
    OddOrder(usize),
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("zeroth moment must be 1, got {0}")]
    NotNormalized(f64),
    #[error("value at position {0} is not finite")]
    NonFinite(usize),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed moment csv: {0}")]
    Malformed(String),
}

/// Exponent vector `κ = (k₁, …, k_d)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MultiIndex(pub Vec<usize>);

impl MultiIndex {
    /// The all-zero index of dimension `d`.
    pub fn zero(d: usize) -> Self {
        Self(vec![0; d])
    }

    /// Unit index `e_i` scaled by `k`.
    pub fn axis(d: usize, i: usize, k: usize) -> Self {
        let mut v = vec![0; d];
        v[i] = k;
        Self(v)
    }

    /// Dimension `d`.
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Total degree `Σ k_i`.
    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    /// Monomial `x^κ`.
    pub fn monomial(&self, x: &[f64]) -> f64 {
        self.0.iter().zip(x).map(|(&k, &xi)| xi.powi(k as i32)).product()
    }
}

/// Lists every index of `{0..=two_n}^d` in lexicographic order.
pub fn enumerate_indices(d: usize, two_n: usize) -> Result<Vec<MultiIndex>, IndexError> {
    if d == 0 {
        return Err(IndexError::ZeroDimension);
    }
    if two_n % 2 != 0 {
        return Err(IndexError::OddOrder(two_n));
    }
    Ok(box_indices(d, two_n))
}

/// Lists every index of `{0..=max}^d` in lexicographic order.
pub fn box_indices(d: usize, max: usize) -> Vec<MultiIndex> {
    let r = max + 1;
    let total = r.pow(d as u32);
    (0..total).map(|p| MultiIndex(unflatten(p, r, d))).collect()
}

fn unflatten(mut p: usize, radix: usize, d: usize) -> Vec<usize> {
    let mut k = vec![0; d];
    for slot in k.iter_mut().rev() {
        *slot = p % radix;
        p /= radix;
    }
    k
}

/// Position of `κ` within `{0..=max}^d` in lexicographic order.
pub fn position(k: &MultiIndex, max: usize) -> usize {
    k.0.iter().fold(0, |acc, &ki| acc * (max + 1) + ki)
}

/// Kronecker basis `G(x)` of length `(n+1)^d`; entry `(a₁,…,a_d)` is `∏ x_i^{a_i}`.
pub fn basis_g(x: &[f64], n: usize) -> Vec<f64> {
    let mut g = vec![1.0];
    for &xi in x {
        let mut powers = Vec::with_capacity(n + 1);
        let mut p = 1.0;
        for _ in 0..=n {
            powers.push(p);
            p *= xi;
        }
        g = g.iter().flat_map(|&a| powers.iter().map(move |&b| a * b)).collect();
    }
    g
}

/// Class `κ` of cell `(i, j)`: the exponent with `G_i G_j = x^κ`.
pub fn class_of(i: usize, j: usize, n: usize, d: usize) -> MultiIndex {
    let a = unflatten(i, n + 1, d);
    let b = unflatten(j, n + 1, d);
    MultiIndex(a.iter().zip(&b).map(|(x, y)| x + y).collect())
}

/// Number of cells of the `(n+1)^d` matrix whose class is `κ`, by enumeration.
pub fn class_cardinality(k: &MultiIndex, n: usize) -> usize {
    let d = k.dim();
    let size = (n + 1).pow(d as u32);
    (0..size)
        .flat_map(|i| (0..size).map(move |j| (i, j)))
        .filter(|&(i, j)| &class_of(i, j, n, d) == k)
        .count()
}

/// Precomputed partition of the `(n+1)^d` matrix cells into classes.
#[derive(Debug, Clone)]
pub struct ClassTable {
    /// Order parameter `n`.
    pub n: usize,
    /// Dimension `d`.
    pub d: usize,
    /// Indices of `J_2n` in order.
    pub indices: Vec<MultiIndex>,
    /// Class position (within `J_2n`) of every cell, row-major.
    pub cell_class: Vec<usize>,
    /// Cells `(i, j)` of each class.
    pub cells: Vec<Vec<(usize, usize)>>,
}

impl ClassTable {
    /// Enumerates all cells once.
    pub fn new(n: usize, d: usize) -> Self {
        let indices = box_indices(d, 2 * n);
        let size = (n + 1).pow(d as u32);
        let mut cells = vec![Vec::new(); indices.len()];
        let mut cell_class = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                let c = position(&class_of(i, j, n, d), 2 * n);
                cell_class.push(c);
                cells[c].push((i, j));
            }
        }
        Self { n, d, indices, cell_class, cells }
    }

    /// Basis length `(n+1)^d`.
    pub fn basis_len(&self) -> usize {
        (self.n + 1).pow(self.d as u32)
    }

    /// Cardinality of class number `c`.
    pub fn cardinality(&self, c: usize) -> usize {
        self.cells[c].len()
    }
}

/// Truncated power-moment sequence indexed by `J_2n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentVector {
    n: usize,
    d: usize,
    values: Vec<f64>,
}

/// Accepted deviation of the zeroth moment from 1.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-5;

impl MomentVector {
    /// Validates length, finiteness and normalization.
    pub fn new(n: usize, d: usize, values: Vec<f64>) -> Result<Self, IndexError> {
        let expected = (2 * n + 1).pow(d as u32);
        if values.len() != expected {
            return Err(IndexError::Length { expected, got: values.len() });
        }
        if let Some(p) = values.iter().position(|v| !v.is_finite()) {
            return Err(IndexError::NonFinite(p));
        }
        if (values[0] - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(IndexError::NotNormalized(values[0]));
        }
        Ok(Self { n, d, values })
    }

    /// Order parameter `n` (moments up to `2n` per coordinate).
    pub fn n(&self) -> usize {
        self.n
    }

    /// Dimension `d`.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Values in index order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `σ_κ`.
    pub fn get(&self, k: &MultiIndex) -> f64 {
        self.values[position(k, 2 * self.n)]
    }

    /// Indices in order.
    pub fn indices(&self) -> Vec<MultiIndex> {
        box_indices(self.d, 2 * self.n)
    }

    /// First moments `(σ_{e_1}, …, σ_{e_d})`.
    pub fn mean(&self) -> Vec<f64> {
        (0..self.d).map(|i| self.get(&MultiIndex::axis(self.d, i, 1))).collect()
    }

    /// Marginal sequence `σ_{κ_{i,0}}, …, σ_{κ_{i,2n}}` of coordinate `i`.
    pub fn marginal(&self, i: usize) -> Vec<f64> {
        (0..=2 * self.n).map(|l| self.get(&MultiIndex::axis(self.d, i, l))).collect()
    }

    /// Writes `k1..kd,sigma` rows in index order.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), IndexError> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.d).map(|i| format!("k{i}")).collect();
        header.push("sigma".into());
        wr.write_record(&header)?;
        for (k, v) in self.indices().iter().zip(&self.values) {
            let mut row: Vec<String> = k.0.iter().map(|x| x.to_string()).collect();
            row.push(v.to_string());
            wr.write_record(&row)?;
        }
        wr.flush().map_err(|e| IndexError::Csv(e.into()))?;
        Ok(())
    }

    /// Parses the format written by [`MomentVector::write_csv`].
    pub fn read_csv<R: Read>(r: R) -> Result<Self, IndexError> {
        let mut rd = csv::Reader::from_reader(r);
        let d = rd.headers()?.len().checked_sub(1).filter(|&d| d > 0).ok_or_else(|| IndexError::Malformed("missing columns".into()))?;
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| IndexError::Malformed(e.to_string()));
            let k: Vec<usize> = (0..d)
                .map(|i| rec[i].trim().parse::<usize>().map_err(|e| IndexError::Malformed(e.to_string())))
                .collect::<Result<_, _>>()?;
            rows.push((MultiIndex(k), parse(&rec[d])?));
        }
        let max = rows.iter().flat_map(|(k, _)| k.0.iter().copied()).max().unwrap_or(0);
        if max % 2 != 0 {
            return Err(IndexError::OddOrder(max));
        }
        let n = max / 2;
        let mut values = vec![f64::NAN; (max + 1).pow(d as u32)];
        if rows.len() != values.len() {
            return Err(IndexError::Length { expected: values.len(), got: rows.len() });
        }
        for (k, v) in rows {
            values[position(&k, max)] = v;
        }
        Self::new(n, d, values)
    }
}

/// Flat dual coefficients `λ̆` indexed by `J_2n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaCoefficients {
    /// Order parameter.
    pub n: usize,
    /// Dimension.
    pub d: usize,
    /// Coefficients in index order.
    pub lambda: Vec<f64>,
}

impl LambdaCoefficients {
    /// Checks the length.
    pub fn new(n: usize, d: usize, lambda: Vec<f64>) -> Result<Self, IndexError> {
        let expected = (2 * n + 1).pow(d as u32);
        if lambda.len() != expected {
            return Err(IndexError::Length { expected, got: lambda.len() });
        }
        Ok(Self { n, d, lambda })
    }

    /// `q(x) = Σ_κ λ_κ x^κ`.
    pub fn poly(&self, x: &[f64]) -> f64 {
        poly_eval(&self.lambda, self.n, x)
    }
}

/// Evaluates `Σ_κ c_κ x^κ` for coefficients over `J_2n` in index order.
pub fn poly_eval(coef: &[f64], n: usize, x: &[f64]) -> f64 {
    let m = 2 * n + 1;
    // Horner along the last axis, then fold outward.
    fn rec(coef: &[f64], m: usize, x: &[f64]) -> f64 {
        if x.len() == 1 {
            return coef.iter().rev().fold(0.0, |acc, &c| acc * x[0] + c);
        }
        let stride = coef.len() / m;
        (0..m).rev().fold(0.0, |acc, a| acc * x[0] + rec(&coef[a * stride..(a + 1) * stride], m, &x[1..]))
    }
    rec(coef, m, x)
}

/// Tied matrix `Λ` with `Λ_ij = λ_κ / |R_κ|` for the class `κ` of `(i, j)`.
pub fn lambda_to_matrix(l: &LambdaCoefficients) -> SymMatrix {
    let t = ClassTable::new(l.n, l.d);
    let size = t.basis_len();
    SymMatrix::from_fn(size, |i, j| {
        let c = t.cell_class[i * size + j];
        l.lambda[c] / t.cardinality(c) as f64
    })
}

/// Per-class sums of a matrix: the coefficients of `GᵀMG`. Inverts
/// [`lambda_to_matrix`] on tied matrices.
pub fn matrix_to_lambda(m: &DMatrix<f64>, n: usize, d: usize) -> LambdaCoefficients {
    let t = ClassTable::new(n, d);
    let size = t.basis_len();
    let mut lambda = vec![0.0; t.indices.len()];
    for i in 0..size {
        for j in 0..size {
            lambda[t.cell_class[i * size + j]] += m[(i, j)];
        }
    }
    LambdaCoefficients { n, d, lambda }
}

/// Moment matrix `Σ_ij = σ_κ` for the class `κ` of `(i, j)`.
pub fn moment_matrix(s: &MomentVector) -> SymMatrix {
    let t = ClassTable::new(s.n(), s.d());
    let size = t.basis_len();
    SymMatrix::from_fn(size, |i, j| s.values()[t.cell_class[i * size + j]])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_counts() {
        assert_eq!(enumerate_indices(1, 2).unwrap(), vec![MultiIndex(vec![0]), MultiIndex(vec![1]), MultiIndex(vec![2])]);
        assert_eq!(enumerate_indices(2, 4).unwrap().len(), 25);
        assert_eq!(enumerate_indices(2, 6).unwrap().len(), 49);
        assert!(matches!(enumerate_indices(2, 3), Err(IndexError::OddOrder(3))));
        let idx = enumerate_indices(3, 2).unwrap();
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn basis_examples() {
        let g = basis_g(&[0.0, 0.0], 2);
        assert_eq!(g[0], 1.0);
        assert!(g[1..].iter().all(|&v| v == 0.0));
        assert_eq!(basis_g(&[2.0], 2), vec![1.0, 2.0, 4.0]);
        assert_eq!(basis_g(&[1.0, 2.0], 1), vec![1.0, 2.0, 1.0, 2.0]);
    }

    #[test]
    fn class_examples() {
        assert_eq!(class_of(0, 0, 2, 3), MultiIndex(vec![0, 0, 0]));
        // x · x² in one dimension.
        assert_eq!(class_of(1, 2, 2, 1), MultiIndex(vec![3]));
        // G = [1, x₂, x₁, x₁x₂]: x₂ · x₁x₂ and x₂ · x₁.
        assert_eq!(class_of(1, 3, 1, 2), MultiIndex(vec![1, 2]));
        assert_eq!(class_of(1, 2, 1, 2), MultiIndex(vec![1, 1]));
    }

    #[test]
    fn class_of_matches_brute_force_products() {
        // Oracle: multiply symbolic monomials of G(x₁)⊗G(x₂) for n = 1.
        let g = [(0, 0), (0, 1), (1, 0), (1, 1)];
        for i in 0..4 {
            for j in 0..4 {
                let expect = MultiIndex(vec![g[i].0 + g[j].0, g[i].1 + g[j].1]);
                assert_eq!(class_of(i, j, 1, 2), expect);
            }
        }
    }

    #[test]
    fn cardinality_examples() {
        assert_eq!(class_cardinality(&MultiIndex(vec![0, 0]), 2), 1);
        assert_eq!(class_cardinality(&MultiIndex(vec![2]), 2), 3);
        assert_eq!(class_cardinality(&MultiIndex(vec![2]), 1), 1);
        for (n, d) in [(1, 1), (2, 2), (3, 2), (1, 3)] {
            let total: usize = box_indices(d, 2 * n).iter().map(|k| class_cardinality(k, n)).sum();
            assert_eq!(total, (n + 1).pow(2 * d as u32));
        }
    }

    #[test]
    fn lambda_matrix_examples() {
        let m = lambda_to_matrix(&LambdaCoefficients::new(1, 1, vec![3.0, 0.0, 0.0]).unwrap());
        assert_eq!(m.as_matrix(), &DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 0.0]));
        let m = lambda_to_matrix(&LambdaCoefficients::new(1, 1, vec![1.0, 0.0, 1.0]).unwrap());
        assert_eq!(m.as_matrix(), &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let l = LambdaCoefficients::new(2, 1, vec![1.0, 0.0, 3.0, 0.0, 3.0]).unwrap();
        let m = lambda_to_matrix(&l);
        // Hankel pattern: constant along anti-diagonals.
        for i in 0..3 {
            for j in 0..3 {
                if i + 1 < 3 && j > 0 {
                    assert_eq!(m.get(i, j), m.get(i + 1, j - 1));
                }
            }
        }
        for x in [-1.7, 0.0, 0.3, 2.5] {
            let g = basis_g(&[x], 2);
            let q = quad_form(m.as_matrix(), &g);
            assert!((q - (1.0 + 3.0 * x * x + 3.0 * x.powi(4))).abs() < 1e-12);
        }
    }

    fn quad_form(m: &DMatrix<f64>, g: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..g.len() {
            for j in 0..g.len() {
                s += g[i] * m[(i, j)] * g[j];
            }
        }
        s
    }

    #[test]
    fn moment_matrix_examples() {
        let s = MomentVector::new(1, 1, vec![1.0, 0.0, 1.0]).unwrap();
        assert_eq!(moment_matrix(&s), SymMatrix::identity(2));
        let s = MomentVector::new(2, 1, vec![1.0, 0.0, 1.0, 0.0, 3.0]).unwrap();
        assert_eq!(moment_matrix(&s).as_matrix(), &DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 3.0]));
    }

    #[test]
    fn round_trip_lambda() {
        let l = LambdaCoefficients::new(2, 2, (0..25).map(|i| i as f64 * 0.37 - 2.0).collect()).unwrap();
        let back = matrix_to_lambda(lambda_to_matrix(&l).as_matrix(), 2, 2);
        for (a, b) in l.lambda.iter().zip(&back.lambda) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn poly_eval_matches_monomial_sum() {
        let l: Vec<f64> = (0..49).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let x = [0.7, -1.3];
        let direct: f64 = box_indices(2, 6).iter().zip(&l).map(|(k, c)| c * k.monomial(&x)).sum();
        assert!((poly_eval(&l, 3, &x) - direct).abs() < 1e-9 * direct.abs().max(1.0));
    }

    #[test]
    fn moment_csv_round_trip() {
        let s = MomentVector::new(1, 2, vec![1.0, 0.5, 2.0, -0.25, 0.1, 0.3, 1.5, 0.2, 4.0]).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("k1,k2,sigma\n0,0,1\n0,1,0.5\n"));
        assert_eq!(MomentVector::read_csv(buf.as_slice()).unwrap(), s);
    }
}
