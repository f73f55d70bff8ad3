//! Dense small-matrix primitives and the matrix functionals used by the
//! dynamics: infinity norms, the per-agent contraction factor, the
//! Dobrushin coefficient, oscillation, the averaging map and limits of
//! iterated products.
//!
//! Everything here is square, dense and row-major. Agent counts are small
//! (a handful up to a few hundred), so there is no sparse path.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for row-sum and nonnegativity checks.
pub const ROW_TOL: f64 = 1e-9;

/// Square `n × n` matrix stored row-major. Serializes as a list of rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        m.to_rows()
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Matrix::from_rows(&rows)
    }
}

impl Matrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty("matrix"));
        }
        if data.len() != n * n {
            return Err(Error::Dimension {
                expected: n * n,
                found: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { n, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for row in rows {
            let row = row.as_ref();
            if row.len() != n {
                return Err(Error::NotSquare {
                    rows: n,
                    cols: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(n, data)
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn filled(n: usize, value: f64) -> Self {
        Self {
            n,
            data: vec![value; n * n],
        }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.n + j] = value;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.rows().map(|r| r.iter().sum()).collect()
    }

    /// `self · v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n, "matrix-vector dimension mismatch");
        self.rows()
            .map(|r| r.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `v^T · self`, returned as a plain vector.
    pub fn left_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n, "vector-matrix dimension mismatch");
        let mut out = vec![0.0; self.n];
        for (vi, row) in v.iter().zip(self.rows()) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += vi * a;
            }
        }
        out
    }

    /// `self · rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.n, rhs.n, "matrix product dimension mismatch");
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            let out_row = &mut out[i * n..(i + 1) * n];
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                for (o, b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Matrix { n, data: out }
    }

    pub fn transpose(&self) -> Matrix {
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.data[j * n + i] = self.data[i * n + j];
            }
        }
        out
    }

    pub fn add(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.n, rhs.n, "matrix sum dimension mismatch");
        Matrix {
            n: self.n,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.n, rhs.n, "matrix difference dimension mismatch");
        Matrix {
            n: self.n,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn scale(&self, factor: f64) -> Matrix {
        Matrix {
            n: self.n,
            data: self.data.iter().map(|a| a * factor).collect(),
        }
    }

    /// Largest absolute difference between `self` and its transpose.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// Row-stochastic weights matrix: nonnegative entries, rows summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct StochasticMatrix(Matrix);

impl StochasticMatrix {
    pub fn new(matrix: Matrix) -> Result<Self> {
        for (i, row) in matrix.rows().enumerate() {
            if let Some((j, &value)) = row.iter().enumerate().find(|(_, v)| **v < -ROW_TOL) {
                return Err(Error::NegativeEntry {
                    row: i,
                    col: j,
                    value,
                });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOL {
                return Err(Error::RowSum {
                    row: i,
                    sum,
                    expected: 1.0,
                });
            }
        }
        Ok(Self(matrix))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn identity(n: usize) -> Self {
        Self(Matrix::identity(n))
    }

    /// Every entry `1/n`.
    pub fn uniform(n: usize) -> Self {
        Self(Matrix::filled(n, 1.0 / n as f64))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

impl Deref for StochasticMatrix {
    type Target = Matrix;

    fn deref(&self) -> &Matrix {
        &self.0
    }
}

/// Square matrix whose rows all share one sum. Entries may be negative.
#[derive(Clone, Debug, PartialEq)]
pub struct RowSumMatrix {
    matrix: Matrix,
    common_row_sum: f64,
}

impl RowSumMatrix {
    pub fn new(matrix: Matrix) -> Result<Self> {
        let sums = matrix.row_sums();
        let common_row_sum = sums[0];
        for (row, &sum) in sums.iter().enumerate() {
            if (sum - common_row_sum).abs() > ROW_TOL {
                return Err(Error::RowSum {
                    row,
                    sum,
                    expected: common_row_sum,
                });
            }
        }
        Ok(Self {
            matrix,
            common_row_sum,
        })
    }

    pub fn common_row_sum(&self) -> f64 {
        self.common_row_sum
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    /// Reinterpret as a stochastic matrix if entries are nonnegative and the
    /// common row sum is one.
    pub fn to_stochastic(&self) -> Result<StochasticMatrix> {
        StochasticMatrix::new(self.matrix.clone())
    }
}

impl From<StochasticMatrix> for RowSumMatrix {
    fn from(a: StochasticMatrix) -> Self {
        Self {
            matrix: a.0,
            common_row_sum: 1.0,
        }
    }
}

impl Deref for RowSumMatrix {
    type Target = Matrix;

    fn deref(&self) -> &Matrix {
        &self.matrix
    }
}

macro_rules! vector_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name(Vec<f64>);

        impl $name {
            pub fn into_vec(self) -> Vec<f64> {
                self.0
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }
        }

        impl Deref for $name {
            type Target = [f64];

            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl AsRef<[f64]> for $name {
            fn as_ref(&self) -> &[f64] {
                &self.0
            }
        }
    };
}

vector_newtype!(
    /// Diagonal of per-agent learning rates.
    LearningRates
);

vector_newtype!(
    /// Agent opinions at one instant.
    StateVector
);

vector_newtype!(
    /// Strictly positive weights for the weighted infinity norm.
    WeightVector
);

fn check_finite(v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

impl LearningRates {
    pub fn new(eps: Vec<f64>) -> Result<Self> {
        if eps.is_empty() {
            return Err(Error::Empty("learning rates"));
        }
        check_finite(&eps)?;
        Ok(Self(eps))
    }

    pub fn uniform(n: usize, eps: f64) -> Self {
        Self(vec![eps; n])
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    /// Overwrites `self` with `n` copies of `eps` while keeping the buffer.
    pub(crate) fn fill_uniform(&mut self, n: usize, eps: f64) {
        self.0.clear();
        self.0.resize(n, eps);
    }

    pub(crate) fn fill_with(&mut self, values: impl Iterator<Item = f64>) {
        self.0.clear();
        self.0.extend(values);
    }
}

impl StateVector {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::Empty("state vector"));
        }
        check_finite(&x)?;
        Ok(Self(x))
    }

    pub fn constant(n: usize, value: f64) -> Self {
        Self(vec![value; n])
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    /// Exchanges contents with a raw buffer.
    pub(crate) fn swap_buffer(&mut self, other: &mut Vec<f64>) {
        std::mem::swap(&mut self.0, other);
    }

    /// Wraps step output without re-validating; non-finite values can arise
    /// legitimately from heavy-tailed noise.
    pub(crate) fn from_raw(x: Vec<f64>) -> Self {
        Self(x)
    }
}

impl WeightVector {
    pub fn new(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::Empty("weight vector"));
        }
        for (index, &value) in beta.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::InvalidWeight { index, value });
            }
        }
        Ok(Self(beta))
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![1.0; n])
    }
}

/// `max_i |v_i|`.
pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// `max_i Σ_j |b_ij|`, the operator norm induced by [`inf_norm`].
pub fn matrix_inf_norm(b: &Matrix) -> f64 {
    b.rows()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `max_i |v_i| / β_i`.
pub fn weighted_inf_norm(v: &[f64], beta: &WeightVector) -> Result<f64> {
    if v.len() != beta.len() {
        return Err(Error::Dimension {
            expected: beta.len(),
            found: v.len(),
        });
    }
    Ok(v.iter()
        .zip(beta.iter())
        .fold(0.0, |acc, (x, b)| acc.max(x.abs() / b)))
}

/// `max_i (|a_ii − ε_i| + 1 − a_ii)`: the infinity-norm of `A − ℰ` for a
/// row-stochastic `A`. Below one exactly when `0 < ε_i < 2 a_ii` for all `i`.
pub fn contraction_factor(a: &StochasticMatrix, eps: &LearningRates) -> f64 {
    assert_eq!(a.dim(), eps.len(), "rates do not match matrix dimension");
    eps.iter()
        .enumerate()
        .map(|(i, e)| {
            let aii = a.get(i, i);
            diagonal_rho(aii, (aii - e).abs())
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `deviation + 1 − a_ii`, arranged as `1 − (a_ii − deviation)` so that the
/// result is exactly 1 when `deviation = a_ii` and the sign of `ρ − 1`
/// follows the sign of `deviation − a_ii`.
#[inline]
pub(crate) fn diagonal_rho(aii: f64, deviation: f64) -> f64 {
    1.0 - (aii - deviation)
}

/// Contraction factor of `A − ℰ` in the `β`-weighted norm:
/// `max_i (|a_ii − ε_i| + β_i^{-1} Σ_{j≠i} a_ij β_j)`.
pub fn weighted_contraction_factor(a: &StochasticMatrix, eps: &LearningRates, beta: &WeightVector) -> f64 {
    let n = a.dim();
    assert_eq!(n, eps.len(), "rates do not match matrix dimension");
    assert_eq!(n, beta.len(), "weights do not match matrix dimension");
    (0..n)
        .map(|i| {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| a.get(i, j) * beta[j]).sum();
            (a.get(i, i) - eps[i]).abs() + off / beta[i]
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest pairwise L1 distance between rows.
pub fn row_spread(b: &Matrix) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..b.dim() {
        for j in (i + 1)..b.dim() {
            let d: f64 = b.row(i).iter().zip(b.row(j)).map(|(x, y)| (x - y).abs()).sum();
            worst = worst.max(d);
        }
    }
    worst
}

/// Dobrushin coefficient `½ max_{i,j} Σ_k |b_ik − b_jk|`.
pub fn dobrushin(b: &Matrix) -> f64 {
    0.5 * row_spread(b)
}

/// `max_i v_i − min_i v_i`.
pub fn oscillation(v: &[f64]) -> f64 {
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    });
    if v.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// `B = A + ℰ(Δ − I)` with `Δ` the matrix whose entries are all `1/n`.
///
/// Row `i` of `B` is row `i` of `A` with `ε_i/n` added everywhere and `ε_i`
/// removed from the diagonal, so rows keep summing to one.
pub fn averaging_map(a: &StochasticMatrix, eps: &LearningRates) -> RowSumMatrix {
    let n = a.dim();
    assert_eq!(n, eps.len(), "rates do not match matrix dimension");
    let inv_n = 1.0 / n as f64;
    let mut b = a.matrix().clone();
    for (i, &e) in eps.iter().enumerate() {
        for j in 0..n {
            let delta = if i == j { inv_n - 1.0 } else { inv_n };
            b.set(i, j, a.get(i, j) + e * delta);
        }
    }
    RowSumMatrix {
        matrix: b,
        common_row_sum: 1.0,
    }
}

/// Outcome of [`product_limit`].
#[derive(Clone, Debug, PartialEq)]
pub struct ProductLimit {
    /// Last product formed, `B_t ⋯ B_1`.
    pub limit: Matrix,
    pub converged: bool,
    /// Number of factors multiplied.
    pub steps: usize,
    /// Row spread of `limit` (largest pairwise row L1 distance).
    pub spread: f64,
}

impl ProductLimit {
    /// Consensus weights `ν`: the first row of the limit.
    pub fn consensus_weights(&self) -> &[f64] {
        self.limit.row(0)
    }
}

/// Forms `P_t = B_t P_{t−1}` until the rows of `P_t` coincide to within
/// `rank_one_tol` (row L1 distance) or `t_max` factors have been used.
pub fn product_limit<I, B>(factors: I, t_max: usize, rank_one_tol: f64) -> ProductLimit
where
    I: IntoIterator<Item = B>,
    B: AsRef<Matrix>,
{
    let mut product: Option<Matrix> = None;
    let mut steps = 0;
    for b in factors.into_iter().take(t_max) {
        let b = b.as_ref();
        let next = match &product {
            None => b.clone(),
            Some(p) => b.matmul(p),
        };
        steps += 1;
        let spread = row_spread(&next);
        if spread < rank_one_tol {
            return ProductLimit {
                limit: next,
                converged: true,
                steps,
                spread,
            };
        }
        product = Some(next);
    }
    let limit = product.expect("product_limit needs at least one factor");
    let spread = row_spread(&limit);
    ProductLimit {
        limit,
        converged: false,
        steps,
        spread,
    }
}

impl AsRef<Matrix> for Matrix {
    fn as_ref(&self) -> &Matrix {
        self
    }
}

impl AsRef<Matrix> for RowSumMatrix {
    fn as_ref(&self) -> &Matrix {
        &self.matrix
    }
}

impl AsRef<Matrix> for StochasticMatrix {
    fn as_ref(&self) -> &Matrix {
        &self.0
    }
}
