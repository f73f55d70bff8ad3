//! Numerical checkers for the convergence hypotheses.
//!
//! Pointwise conditions (rate bounds, derivative bounds) are decided
//! exactly. Asymptotic conditions cannot be decided from a finite horizon:
//! those checkers report the measured quantities together with an
//! advisory verdict, the horizon used and the tolerances applied.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::dynamics::learning::{endpoint_rho, LearningFunction};
use crate::dynamics::schedule::{schedule_variation, MatrixSchedule, RateSchedule};
use crate::error::{Error, Result};
use crate::matrix::{
    averaging_map, contraction_factor, dobrushin, weighted_contraction_factor, LearningRates,
    StochasticMatrix, WeightVector, ROW_TOL,
};

/// Default threshold below which a partial product counts as vanished.
pub const PRODUCT_TOL: f64 = 1e-6;
/// Default threshold on the tail of the schedule-variation series.
pub const SUMMABILITY_TOL: f64 = 1e-3;
/// Default bound on the partial sums of products of contraction factors.
pub const LL1_BOUND: f64 = 1e6;
/// Relative growth over the trailing half that counts as unbounded.
pub const GROWTH_TOL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time: Option<usize>,
    pub detail: String,
}

impl Witness {
    fn at_index(index: usize, detail: String) -> Self {
        Self {
            index: Some(index),
            time: None,
            detail,
        }
    }

    fn text(detail: String) -> Self {
        Self {
            index: None,
            time: None,
            detail,
        }
    }
}

/// Result of one condition check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionReport {
    pub name: String,
    pub satisfied: bool,
    /// Finite horizon the verdict is based on, for asymptotic conditions.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    pub measured: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trend: Option<Trend>,
    /// Present whenever `satisfied` is false.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
}

impl ConditionReport {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            satisfied: true,
            horizon: None,
            measured: BTreeMap::new(),
            tolerances: BTreeMap::new(),
            trend: None,
            witness: None,
        }
    }

    fn measure(mut self, key: &str, value: f64) -> Self {
        self.measured.insert(key.to_string(), value);
        self
    }

    fn tolerance(mut self, key: &str, value: f64) -> Self {
        self.tolerances.insert(key.to_string(), value);
        self
    }

    fn fail(mut self, witness: Witness) -> Self {
        self.satisfied = false;
        self.witness = Some(witness);
        self
    }
}

/// `0 < ε_i < 2 a_ii` for every agent.
pub fn check_base_rates(a: &StochasticMatrix, eps: &LearningRates) -> ConditionReport {
    assert_eq!(a.dim(), eps.len(), "rates do not match matrix dimension");
    let report = ConditionReport::new("base_rates").measure("rho", contraction_factor(a, eps));
    for (i, &e) in eps.iter().enumerate() {
        let bound = 2.0 * a.get(i, i);
        if !(e > 0.0 && e < bound) {
            return report.fail(Witness::at_index(
                i,
                format!("eps[{i}] = {e} outside (0, {bound})"),
            ));
        }
    }
    report
}

/// Weighted relaxation: checks `A β ≤ δ β` componentwise and
/// `|a_ii − ε_i| + δ − a_ii < 1` for every agent.
pub fn check_base_rates_weighted(
    a: &StochasticMatrix,
    eps: &LearningRates,
    beta: &WeightVector,
    delta: f64,
) -> ConditionReport {
    let n = a.dim();
    assert_eq!(n, eps.len(), "rates do not match matrix dimension");
    assert_eq!(n, beta.len(), "weights do not match matrix dimension");
    let a_beta = a.mul_vec(beta);
    let bound = (0..n)
        .map(|i| (a.get(i, i) - eps[i]).abs() + delta - a.get(i, i))
        .fold(f64::NEG_INFINITY, f64::max);
    let report = ConditionReport::new("base_rates_weighted")
        .measure("delta", delta)
        .measure("rho_weighted", weighted_contraction_factor(a, eps, beta))
        .measure("rho_delta_bound", bound);
    for i in 0..n {
        if a_beta[i] > delta * beta[i] + ROW_TOL {
            return report.fail(Witness::at_index(
                i,
                format!(
                    "(A beta)[{i}] = {} exceeds delta * beta[{i}] = {}",
                    a_beta[i],
                    delta * beta[i]
                ),
            ));
        }
    }
    if !(bound < 1.0) {
        return report.fail(Witness::text(format!(
            "max_i |a_ii - eps_i| + delta - a_ii = {bound} >= 1"
        )));
    }
    report
}

/// Fixed-case strict bound or time-varying inclusive bound on the rates of
/// the average family.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateBound {
    /// `0 < ε_i < n/(n−1) a_ii`.
    #[default]
    Strict,
    /// `0 ≤ ε_i ≤ n/(n−1) a_ii`.
    Inclusive,
}

pub fn check_average_rates(a: &StochasticMatrix, eps: &LearningRates, mode: RateBound) -> ConditionReport {
    let n = a.dim();
    assert_eq!(n, eps.len(), "rates do not match matrix dimension");
    let factor = if n == 1 {
        f64::INFINITY
    } else {
        n as f64 / (n as f64 - 1.0)
    };
    let b = averaging_map(a, eps);
    let report = ConditionReport::new("average_rates").measure("dobrushin", dobrushin(b.matrix()));
    for (i, &e) in eps.iter().enumerate() {
        let bound = factor * a.get(i, i);
        let ok = match mode {
            RateBound::Strict => e > 0.0 && e < bound,
            RateBound::Inclusive => e >= 0.0 && e <= bound,
        };
        if !ok {
            return report.fail(Witness::at_index(
                i,
                format!("eps[{i}] = {e} violates {mode:?} bound {bound}"),
            ));
        }
    }
    report
}

/// How a partial product behaves over the trailing half of the horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trend {
    /// The product reached exactly zero.
    Vanished,
    /// Log-product falls linearly in `t`.
    Geometric { rate: f64 },
    /// Log-product falls linearly in `ln t`.
    Algebraic { exponent: f64 },
    /// Log-product decrements shrink: the product settles at a positive
    /// value.
    Summable,
    /// Log-product does not decrease.
    NonDecaying,
    /// Horizon too short to classify.
    Unknown,
}

fn classify(log_partial: &[f64]) -> Trend {
    let t = log_partial.len();
    if t < 4 {
        return Trend::Unknown;
    }
    let (q, h) = (t / 4, t / 2);
    let at = |k: usize| log_partial[k - 1];
    if at(t) == f64::NEG_INFINITY {
        return Trend::Vanished;
    }
    let first = at(h) - at(q);
    let second = at(t) - at(h);
    if !(second < 0.0) {
        return Trend::NonDecaying;
    }
    if !(first < 0.0) {
        return Trend::Summable;
    }
    let ratio = second / first;
    let span = (t - h) as f64;
    let doubling = (t as f64 / h as f64).ln();
    if ratio > 1.5 {
        Trend::Geometric {
            rate: (second / span).exp(),
        }
    } else if ratio >= 0.75 {
        Trend::Algebraic {
            exponent: -second / doubling,
        }
    } else {
        Trend::Summable
    }
}

/// Partial products `Π_{s≤t} ρ_s` over the supplied sequence.
pub fn partial_products(rhos: &[f64]) -> Vec<f64> {
    rhos.iter()
        .scan(1.0, |p, r| {
            *p *= r;
            Some(*p)
        })
        .collect()
}

/// Advisory check that `Π ρ_t → 0`, judged at `T = rhos.len()`.
///
/// Satisfied when the partial product is already below `product_tol`, or
/// when its logarithm is still falling geometrically or algebraically over
/// the trailing half of the horizon.
pub fn check_product_to_zero(rhos: &[f64], product_tol: f64) -> ConditionReport {
    let horizon = rhos.len();
    let products = partial_products(rhos);
    let logs: Vec<f64> = rhos
        .iter()
        .scan(0.0, |acc, r| {
            *acc += r.ln();
            Some(*acc)
        })
        .collect();
    let product = products.last().copied().unwrap_or(1.0);
    let mut report = ConditionReport::new("product_to_zero")
        .measure("partial_product", product)
        .measure("log_partial_product", logs.last().copied().unwrap_or(0.0))
        .tolerance("product_tol", product_tol);
    let trend = classify(&logs);
    report.horizon = Some(horizon);
    report.trend = Some(trend);
    let decaying = matches!(
        trend,
        Trend::Vanished | Trend::Geometric { .. } | Trend::Algebraic { .. }
    );
    if !(product < product_tol || decaying) {
        report = report.fail(Witness {
            index: None,
            time: Some(horizon),
            detail: format!(
                "partial product {product:e} >= {product_tol:e} at T = {horizon} with trend {trend:?}"
            ),
        });
    }
    report
}

/// `S_t = ρ_t (1 + S_{t−1})`, `S_0 = 0`: the sums
/// `ρ_t + ρ_t ρ_{t−1} + … + ρ_t ⋯ ρ_1`.
pub fn ll1_sums(rhos: &[f64]) -> Vec<f64> {
    rhos.iter()
        .scan(0.0, |s, r| {
            *s = r * (1.0 + *s);
            Some(*s)
        })
        .collect()
}

/// Advisory check that the sums of backward products stay bounded.
pub fn check_ll1(rhos: &[f64], bound: f64) -> ConditionReport {
    let horizon = rhos.len();
    let sums = ll1_sums(rhos);
    let sup = sums.iter().copied().fold(0.0, f64::max);
    let last = sums.last().copied().unwrap_or(0.0);
    let mid = if horizon >= 2 { sums[horizon / 2 - 1] } else { 0.0 };
    let growth = last - mid;
    let growing = growth > GROWTH_TOL * mid.max(1.0);
    let mut report = ConditionReport::new("ll1")
        .measure("sup", sup)
        .measure("final", last)
        .measure("trailing_growth", growth)
        .tolerance("bound", bound)
        .tolerance("growth_tol", GROWTH_TOL);
    report.horizon = Some(horizon);
    if !(sup < bound) {
        let time = sums.iter().position(|&s| s >= bound).map(|i| i + 1);
        report = report.fail(Witness {
            index: None,
            time,
            detail: format!("sup {sup} >= bound {bound}"),
        });
    } else if growing {
        report = report.fail(Witness {
            index: None,
            time: Some(horizon),
            detail: format!("S_t grew by {growth} over the trailing half"),
        });
    }
    report
}

/// Advisory check that `Σ_t (|A_t − A_{t−1}|_∞ + |ℰ_t − ℰ_{t−1}|_∞)` is
/// finite, judged by the tail over `(T/2, T]`.
pub fn check_ll1b(
    weights: &MatrixSchedule,
    rates: &RateSchedule,
    horizon: usize,
    summability_tol: f64,
) -> Result<ConditionReport> {
    let half = horizon / 2;
    let mut head = 0.0;
    let mut tail = 0.0;
    if !(weights.is_constant() && rates.is_constant()) {
        for t in 2..=horizon {
            let v = schedule_variation(weights, rates, t)?;
            if t > half {
                tail += v;
            } else {
                head += v;
            }
        }
    }
    let mut report = ConditionReport::new("ll1b")
        .measure("partial_sum", head + tail)
        .measure("head", head)
        .measure("tail", tail)
        .tolerance("summability_tol", summability_tol);
    report.horizon = Some(horizon);
    if !(tail < summability_tol) {
        report = report.fail(Witness {
            index: None,
            time: Some(horizon),
            detail: format!("tail sum over ({half}, {horizon}] = {tail} >= {summability_tol}"),
        });
    }
    Ok(report)
}

/// Sampling grid for derivative audits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            lo: -10.0,
            hi: 10.0,
            points: 1001,
        }
    }
}

impl Grid {
    /// The function's declared domain when it has one, else the default.
    pub fn for_function(f: &LearningFunction) -> Self {
        match f.domain() {
            Some((lo, hi)) => Self {
                lo,
                hi,
                ..Self::default()
            },
            None => Self::default(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.points.max(2);
        (0..n).map(move |k| self.lo + (self.hi - self.lo) * k as f64 / (n - 1) as f64)
    }
}

/// `0 < inf f′` and `sup f′ < 2 min_{t≤T, i} (a_ii)_t`, after auditing the
/// declared bounds against sampled derivatives on `grid`.
pub fn check_nonlinear_bounds(
    f: &LearningFunction,
    weights: &MatrixSchedule,
    horizon: usize,
    grid: &Grid,
) -> Result<ConditionReport> {
    if grid.points == 0 || !(grid.lo < grid.hi) {
        return Err(Error::InvalidModel(format!("empty sampling grid {grid:?}")));
    }
    let (inf, sup) = (f.deriv_inf(), f.deriv_sup());
    let slack = 1e-12 * sup.abs().max(1.0);
    let mut sampled_min = f64::INFINITY;
    let mut sampled_max = f64::NEG_INFINITY;
    for x in grid.iter() {
        let d = f.derivative(x);
        sampled_min = sampled_min.min(d);
        sampled_max = sampled_max.max(d);
        if d < inf - slack || d > sup + slack {
            return Err(Error::InconsistentDeclaration {
                inf,
                sup,
                at: x,
                value: d,
            });
        }
    }
    let mut min_diag = f64::INFINITY;
    let mut argmin = (0, 0);
    for t in 1..=horizon.max(1) {
        let a = weights.at(t)?;
        for i in 0..a.dim() {
            if a.get(i, i) < min_diag {
                min_diag = a.get(i, i);
                argmin = (t, i);
            }
        }
    }
    let mut report = ConditionReport::new("nonlinear_bounds")
        .measure("deriv_inf", inf)
        .measure("deriv_sup", sup)
        .measure("sampled_min", sampled_min)
        .measure("sampled_max", sampled_max)
        .measure("min_self_weight", min_diag);
    report.horizon = Some(horizon);
    if !(inf > 0.0) {
        report = report.fail(Witness::text(format!(
            "declared inf f' = {inf} is not strictly positive"
        )));
    } else if !(sup < 2.0 * min_diag) {
        report = report.fail(Witness {
            index: Some(argmin.1),
            time: Some(argmin.0),
            detail: format!("sup f' = {sup} >= 2 a_ii = {}", 2.0 * min_diag),
        });
    }
    Ok(report)
}

/// `max_i sup_ξ (|a_ii − f′(ξ)| + 1 − a_ii)` over the declared derivative
/// range.
pub fn nonlinear_rho(f: &LearningFunction, a: &StochasticMatrix) -> f64 {
    endpoint_rho(std::slice::from_ref(f), a)
}

/// `ρ_t = contraction_factor(A_t, ℰ_t)` for `t = 1..=T`.
pub fn contraction_sequence(
    weights: &MatrixSchedule,
    rates: &RateSchedule,
    horizon: usize,
) -> Result<Vec<f64>> {
    (1..=horizon)
        .map(|t| Ok(contraction_factor(&*weights.at(t)?, &*rates.at(t)?)))
        .collect()
}

/// `δ(B_t)` with `B_t = A_t + ℰ_t(Δ − I)` for `t = 1..=T`.
pub fn dobrushin_sequence(
    weights: &MatrixSchedule,
    rates: &RateSchedule,
    horizon: usize,
) -> Result<Vec<f64>> {
    (1..=horizon)
        .map(|t| {
            Ok(dobrushin(
                averaging_map(&*weights.at(t)?, &*rates.at(t)?).matrix(),
            ))
        })
        .collect()
}
