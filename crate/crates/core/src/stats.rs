//! Empirical-distribution analysis over ensembles and trajectories.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::matrix::{inf_norm, oscillation, row_spread, LearningRates, Matrix};

/// Symmetry tolerance for covariance inputs.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Row-coincidence tolerance for the CLT product limit.
pub const RANK_ONE_TOL: f64 = 1e-8;
/// Drift below this level is attributed to sampling noise.
pub const DRIFT_FLOOR: f64 = 0.05;

/// `m` points in `ℝ^n`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmpiricalSample {
    pub n: usize,
    pub points: Vec<Vec<f64>>,
    pub t_final: usize,
    /// Whether points are `(X_t − mean)/√t`.
    pub centered_scaled: bool,
}

impl EmpiricalSample {
    pub fn new(points: Vec<Vec<f64>>, t_final: usize) -> Result<Self> {
        let n = points.first().map(Vec::len).ok_or(Error::Empty("sample"))?;
        for p in &points {
            if p.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    found: p.len(),
                });
            }
        }
        Ok(Self {
            n,
            points,
            t_final,
            centered_scaled: false,
        })
    }

    pub fn m(&self) -> usize {
        self.points.len()
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.points.iter().map(|p| p[c]).collect()
    }

    /// `(X − mean)/√t_final`, with the ensemble mean as centre.
    pub fn centered_scaled(&self) -> Result<Self> {
        if self.centered_scaled {
            return Ok(self.clone());
        }
        if self.points.is_empty() {
            return Err(Error::Empty("sample"));
        }
        let mean = mean_of(&self.points, self.n);
        let scale = (self.t_final.max(1) as f64).sqrt();
        Ok(Self {
            n: self.n,
            points: self
                .points
                .iter()
                .map(|p| p.iter().zip(&mean).map(|(x, mu)| (x - mu) / scale).collect())
                .collect(),
            t_final: self.t_final,
            centered_scaled: true,
        })
    }
}

fn mean_of(points: &[Vec<f64>], n: usize) -> Vec<f64> {
    let mut mean = vec![0.0; n];
    for p in points {
        for (acc, x) in mean.iter_mut().zip(p) {
            *acc += x;
        }
    }
    let m = points.len() as f64;
    mean.iter_mut().for_each(|v| *v /= m);
    mean
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub cov: Matrix,
}

/// Sample mean and unbiased sample covariance.
pub fn empirical_moments(s: &EmpiricalSample) -> Result<Moments> {
    let m = s.m();
    if m < 2 {
        return Err(Error::InsufficientSample { needed: 2, got: m });
    }
    let n = s.n;
    let mean = mean_of(&s.points, n);
    let mut cov = Matrix::zeros(n);
    for p in &s.points {
        for i in 0..n {
            let di = p[i] - mean[i];
            for j in i..n {
                let v = cov.get(i, j) + di * (p[j] - mean[j]);
                cov.set(i, j, v);
            }
        }
    }
    let denom = (m - 1) as f64;
    for i in 0..n {
        for j in i..n {
            let v = cov.get(i, j) / denom;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    Ok(Moments { mean, cov })
}

/// Wasserstein-1 distance between the empirical measures of `a` and `b`.
///
/// Inputs need not be sorted. Equal sizes reduce to the mean absolute
/// difference of order statistics; unequal sizes integrate
/// `|F_a⁻¹(u) − F_b⁻¹(u)|` exactly over the merged quantile breakpoints.
pub fn wasserstein1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("sample"));
    }
    let sa = sorted(a);
    let sb = sorted(b);
    if sa.len() == sb.len() {
        let sum: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum();
        return Ok(sum / sa.len() as f64);
    }
    let (ma, mb) = (sa.len(), sb.len());
    // Breakpoints are i/ma and j/mb; compare as integers i·mb vs j·ma.
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = 0u128;
    let total = (ma as u128) * (mb as u128);
    let mut acc = 0.0;
    while i < ma && j < mb {
        let next_a = (i as u128 + 1) * mb as u128;
        let next_b = (j as u128 + 1) * ma as u128;
        let next = next_a.min(next_b);
        acc += (next - prev) as f64 * (sa[i] - sb[j]).abs();
        prev = next;
        if next_a == next {
            i += 1;
        }
        if next_b == next {
            j += 1;
        }
    }
    Ok(acc / total as f64)
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// `sup_x |F_m(x) − F(x)|` for the empirical CDF of `sample`.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let s = sorted(sample);
    let m = s.len() as f64;
    s.iter().enumerate().fold(0.0, |d, (i, &x)| {
        let f = cdf(x);
        d.max((i as f64 + 1.0) / m - f).max(f - i as f64 / m)
    })
}

/// Asymptotic one-sample KS critical value `sqrt(−ln(α/2)/2)/√m`.
pub fn ks_critical_value(m: usize, alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (m as f64).sqrt()
}

pub fn normal_cdf(mean: f64, sd: f64) -> impl Fn(f64) -> f64 {
    let d = Normal::new(mean, sd).expect("finite mean and positive sd");
    move |x| d.cdf(x)
}

pub fn cauchy_cdf(location: f64, scale: f64) -> impl Fn(f64) -> f64 {
    move |x| 0.5 + ((x - location) / scale).atan() / PI
}

/// KS statistic against the normal with the sample's own mean and
/// standard deviation.
pub fn ks_best_fit_normal(sample: &[f64]) -> Result<f64> {
    let m = sample.len();
    if m < 2 {
        return Err(Error::InsufficientSample { needed: 2, got: m });
    }
    let mean = sample.iter().sum::<f64>() / m as f64;
    let var = sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    if !(var > 0.0) {
        return Ok(1.0);
    }
    Ok(ks_statistic(sample, normal_cdf(mean, var.sqrt())))
}

/// Limiting covariance of `(X_t − E X_t)/√t` in the average family.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CltTarget {
    pub covariance: Matrix,
}

/// `C ℰ Σ ℰ C^⊤` for a rank-one product limit `C` (identical rows).
pub fn clt_target(c: &Matrix, eps: &LearningRates, sigma: &Matrix) -> Result<CltTarget> {
    let n = c.dim();
    if eps.len() != n {
        return Err(Error::Dimension {
            expected: n,
            found: eps.len(),
        });
    }
    if sigma.dim() != n {
        return Err(Error::Dimension {
            expected: n,
            found: sigma.dim(),
        });
    }
    let spread = row_spread(c);
    if !(spread < RANK_ONE_TOL) {
        return Err(Error::NotRankOne(spread));
    }
    let asym = sigma.asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(Error::Asymmetric(asym));
    }
    let e = Matrix::diagonal(eps);
    let ce = c.matmul(&e);
    let covariance = ce.matmul(sigma).matmul(&ce.transpose());
    Ok(CltTarget { covariance })
}

/// `λ₂/λ₁` for the two largest eigenvalues of a symmetric matrix; 0 when
/// `λ₁ ≤ 0` or `n = 1`.
pub fn rank_one_score(cov: &Matrix) -> Result<f64> {
    let asym = cov.asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(Error::Asymmetric(asym));
    }
    let n = cov.dim();
    let (l1, l2) = match n {
        1 => return Ok(0.0),
        2 => {
            let (a, b, d) = (cov.get(0, 0), cov.get(0, 1), cov.get(1, 1));
            let mid = 0.5 * (a + d);
            let rad = (0.25 * (a - d).powi(2) + b * b).sqrt();
            (mid + rad, mid - rad)
        }
        _ => {
            let m = DMatrix::from_row_slice(n, n, cov.as_slice());
            let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
            ev.sort_by(|x, y| y.total_cmp(x));
            (ev[0], ev[1])
        }
    };
    if !(l1 > 0.0) {
        return Ok(0.0);
    }
    Ok((l2 / l1).clamp(0.0, 1.0))
}

/// First retained time at which the state is within `tol` of
/// `target · 𝟙`, or has oscillation at most `tol` when `target` is `None`.
pub fn consensus_time(traj: &Trajectory, target: Option<f64>, tol: f64) -> Option<usize> {
    traj.times.iter().zip(&traj.states).find_map(|(&t, x)| {
        let dist = match target {
            Some(s) => inf_norm(&x.iter().map(|v| v - s).collect::<Vec<_>>()),
            None => oscillation(x),
        };
        (dist <= tol).then_some(t)
    })
}

/// Smallest `p ≤ max_period` with `|X_t − X_{t+p}|_∞ ≤ tol` over the
/// trailing third of a full trajectory.
pub fn detect_periodicity(traj: &Trajectory, max_period: usize, tol: f64) -> Result<Option<usize>> {
    let len = traj.states.len();
    if !traj.is_full() {
        return Err(Error::TrajectoryTooShort(
            "periodicity needs a fully retained trajectory".into(),
        ));
    }
    if max_period == 0 || len <= 3 * max_period {
        return Err(Error::TrajectoryTooShort(format!(
            "{len} states, need more than {}",
            3 * max_period
        )));
    }
    let start = len - len / 3;
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol);
    Ok((1..=max_period).find(|&p| (start..len - p).all(|t| close(&traj.states[t], &traj.states[t + p]))))
}

/// The last `period` states of a trajectory, in time order.
pub fn cycle_values(traj: &Trajectory, period: usize) -> Vec<Vec<f64>> {
    let len = traj.states.len();
    traj.states[len.saturating_sub(period)..]
        .iter()
        .map(|s| s.to_vec())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftStep {
    pub from: usize,
    pub to: usize,
    /// Per-coordinate Wasserstein-1 distance.
    pub per_coordinate: Vec<f64>,
    /// Largest per-coordinate distance.
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftReport {
    pub steps: Vec<DriftStep>,
    pub leading_mean: f64,
    pub trailing_mean: f64,
    pub min_distance: f64,
    pub max_distance: f64,
    pub floor: f64,
    /// True when the trailing distances exceed `floor` and have not fallen
    /// below half the leading ones.
    pub non_convergent: bool,
}

/// Wasserstein drift between consecutive timestamped ensembles.
pub fn distribution_drift(samples_at: &BTreeMap<usize, EmpiricalSample>, floor: f64) -> Result<DriftReport> {
    if samples_at.len() < 2 {
        return Err(Error::InsufficientSample {
            needed: 2,
            got: samples_at.len(),
        });
    }
    let entries: Vec<_> = samples_at.iter().collect();
    let mut steps = Vec::with_capacity(entries.len() - 1);
    for w in entries.windows(2) {
        let ((&t0, s0), (&t1, s1)) = (w[0], w[1]);
        if s0.n != s1.n {
            return Err(Error::Dimension {
                expected: s0.n,
                found: s1.n,
            });
        }
        let per_coordinate = (0..s0.n)
            .map(|c| wasserstein1_1d(&s0.column(c), &s1.column(c)))
            .collect::<Result<Vec<_>>>()?;
        let distance = per_coordinate.iter().copied().fold(0.0, f64::max);
        steps.push(DriftStep {
            from: t0,
            to: t1,
            per_coordinate,
            distance,
        });
    }
    let k = steps.len();
    let half = k.div_ceil(2);
    let mean = |s: &[DriftStep]| s.iter().map(|d| d.distance).sum::<f64>() / s.len() as f64;
    let leading_mean = mean(&steps[..half]);
    let trailing_mean = mean(&steps[k - half..]);
    let non_convergent = trailing_mean > floor && trailing_mean >= 0.5 * leading_mean;
    let min_distance = steps.iter().map(|s| s.distance).fold(f64::INFINITY, f64::min);
    let max_distance = steps.iter().map(|s| s.distance).fold(0.0, f64::max);
    Ok(DriftReport {
        steps,
        leading_mean,
        trailing_mean,
        min_distance,
        max_distance,
        floor,
        non_convergent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(points: &[&[f64]]) -> EmpiricalSample {
        EmpiricalSample::new(points.iter().map(|p| p.to_vec()).collect(), 1).unwrap()
    }

    #[test]
    fn moments_examples() {
        let s = sample(&[&[0.0, 0.0], &[2.0, 2.0]]);
        let m = empirical_moments(&s).unwrap();
        assert_eq!(m.mean, vec![1.0, 1.0]);
        assert_eq!(m.cov.to_rows(), vec![vec![2.0, 2.0], vec![2.0, 2.0]]);
        let c = sample(&[&[3.0, -1.0][..]; 5]);
        let m = empirical_moments(&c).unwrap();
        assert_eq!(m.mean, vec![3.0, -1.0]);
        assert!(m.cov.as_slice().iter().all(|&v| v == 0.0));
        assert!(matches!(
            empirical_moments(&sample(&[&[1.0]])),
            Err(Error::InsufficientSample { .. })
        ));
    }

    #[test]
    fn wasserstein_examples() {
        assert_eq!(wasserstein1_1d(&[1.0, 2.0], &[2.0, 1.0]).unwrap(), 0.0);
        assert_eq!(wasserstein1_1d(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(wasserstein1_1d(&[0.0, 1.0], &[0.0, 3.0]).unwrap(), 1.0);
        assert!(wasserstein1_1d(&[], &[1.0]).is_err());
    }

    #[test]
    fn wasserstein_unequal_sizes_matches_replication() {
        // Replicating each point of a k-fold leaves the measure unchanged.
        let a = [0.3, -1.0, 2.5];
        let b = [0.0, 1.0];
        let a6: Vec<f64> = a.iter().flat_map(|&x| [x, x]).collect();
        let b6: Vec<f64> = b.iter().flat_map(|&x| [x, x, x]).collect();
        let direct = wasserstein1_1d(&a, &b).unwrap();
        let replicated = wasserstein1_1d(&a6, &b6).unwrap();
        assert!((direct - replicated).abs() < 1e-15);
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_statistic(&[0.0], normal_cdf(0.0, 1.0)), 0.5);
        assert!((ks_critical_value(10_000, 0.01) - 0.016_276).abs() < 1e-6);
        // sup |Φ − F_Cauchy|, attained near ±1.2
        let grid: Vec<f64> = (-4000..=4000).map(|k| k as f64 / 1000.0).collect();
        let phi = normal_cdf(0.0, 1.0);
        let cauchy = cauchy_cdf(0.0, 1.0);
        let gap = grid
            .iter()
            .map(|&x| (phi(x) - cauchy(x)).abs())
            .fold(0.0, f64::max);
        assert!((gap - 0.125_582).abs() < 1e-5);
    }

    #[test]
    fn rank_one_examples() {
        let v = [1.0, -2.0, 0.5];
        let mut outer = Matrix::zeros(3);
        for i in 0..3 {
            for j in 0..3 {
                outer.set(i, j, v[i] * v[j]);
            }
        }
        assert!(rank_one_score(&outer).unwrap() < 1e-15);
        assert!((rank_one_score(&Matrix::identity(2)).unwrap() - 1.0).abs() < 1e-15);
        let m = Matrix::from_rows(&[[1.0, 0.99], [0.99, 1.0]]).unwrap();
        assert!((rank_one_score(&m).unwrap() - 0.01 / 1.99).abs() < 1e-12);
        assert_eq!(rank_one_score(&Matrix::zeros(3)).unwrap(), 0.0);
        let bad = Matrix::from_rows(&[[1.0, 0.5], [0.4, 1.0]]).unwrap();
        assert!(matches!(rank_one_score(&bad), Err(Error::Asymmetric(_))));
    }

    #[test]
    fn rank_one_general_n_against_known_spectrum() {
        // Q diag(4, 1, 0.5) Q^T with Q a rotation in the (0, 2) plane.
        let (c, s) = (0.6, 0.8);
        let q = Matrix::from_rows(&[[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]]).unwrap();
        let d = Matrix::diagonal(&[4.0, 1.0, 0.5]);
        let m = q.matmul(&d).matmul(&q.transpose());
        assert!((rank_one_score(&m).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn clt_target_examples() {
        let c = Matrix::from_rows(&[[0.25, 0.75], [0.25, 0.75]]).unwrap();
        let eps = LearningRates::uniform(2, 0.5);
        let zero = clt_target(&c, &eps, &Matrix::zeros(2)).unwrap();
        assert!(zero.covariance.as_slice().iter().all(|&v| v == 0.0));

        // Entry (i, j) = Σ_k ν_k² ε² for every i, j.
        let t = clt_target(&c, &eps, &Matrix::identity(2)).unwrap();
        let expected = 0.25 * (0.25f64.powi(2) + 0.75f64.powi(2));
        for v in t.covariance.as_slice() {
            assert!((v - expected).abs() < 1e-15);
        }
        assert!(rank_one_score(&t.covariance).unwrap() < 1e-8);

        let not_rank_one = Matrix::identity(2);
        assert!(matches!(
            clt_target(&not_rank_one, &eps, &Matrix::identity(2)),
            Err(Error::NotRankOne(_))
        ));
    }

    #[test]
    fn drift_of_identical_ensembles_is_zero() {
        let s = sample(&[&[0.0, 1.0], &[2.0, 3.0], &[-1.0, 0.5]]);
        let map: BTreeMap<_, _> = [(10, s.clone()), (20, s.clone()), (30, s)].into_iter().collect();
        let r = distribution_drift(&map, DRIFT_FLOOR).unwrap();
        assert_eq!(r.max_distance, 0.0);
        assert!(!r.non_convergent);
        assert_eq!(r.steps.len(), 2);
    }

    #[test]
    fn drift_flags_persistent_distance() {
        let lo = sample(&[&[0.0], &[0.1]]);
        let hi = sample(&[&[1.0], &[1.1]]);
        let map: BTreeMap<_, _> = [(1, lo.clone()), (2, hi.clone()), (3, lo), (4, hi)]
            .into_iter()
            .collect();
        let r = distribution_drift(&map, DRIFT_FLOOR).unwrap();
        assert!(r.non_convergent);
        assert!((r.trailing_mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn centering_and_scaling() {
        let mut s = sample(&[&[1.0], &[3.0]]);
        s.t_final = 4;
        let c = s.centered_scaled().unwrap();
        assert_eq!(c.points, vec![vec![-0.5], vec![0.5]]);
        assert!(c.centered_scaled);
    }
}
