//! Randomized invariant suites shared by the property tests and the
//! acceptance report. Every suite runs [`CASES`] deterministic cases.

#![allow(dead_code)]

use std::fmt::Debug;
use std::path::Path;
use std::sync::OnceLock;

use proptest::collection::vec;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRng, TestRunner};

use consensus_lab::conditions::{check_base_rates, check_ll1, check_ll1b, nonlinear_rho};
use consensus_lab::dynamics::{
    simulate, simulate_ensemble, step_average, step_base, step_noisy, step_nonlinear, step_pure_noise,
    EnsembleOptions, Family, LearningFunction, MatrixSchedule, ModelSpec, RateSchedule, Response,
};
use consensus_lab::harness::{
    catalog, catalog_scenario, run_scenario, Overrides, RunOptions, Scenario, SUMMARY_SCHEMA,
};
use consensus_lab::matrix::{
    averaging_map, contraction_factor, dobrushin, inf_norm, matrix_inf_norm, oscillation, product_limit,
    LearningRates, Matrix, RowSumMatrix, StateVector, StochasticMatrix, ROW_TOL,
};
use consensus_lab::noise::{epsilon_oscillator_sequence, substream, EpsilonOscillator, NoiseKind, NoiseSpec};
use consensus_lab::stats::{clt_target, empirical_moments, rank_one_score, wasserstein1_1d, EmpiricalSample};

pub const CASES: u32 = 1000;

/// `Ok` carries a one-line note for the report.
pub type Outcome = Result<String, String>;

pub type Suite = (&'static str, fn() -> Outcome);

pub const SUITES: &[Suite] = &[
    ("norm submultiplicativity", norm_submultiplicative),
    ("oscillation contraction", oscillation_contraction),
    ("contraction factor vs rate bounds", contraction_factor_bounds),
    ("averaging map rows and signs", averaging_map_shape),
    ("dobrushin identities", dobrushin_identities),
    ("product limit of a positive matrix", product_limit_positive),
    ("consensus fixed points", fixed_points),
    ("base envelope", base_envelope),
    ("average oscillation decay", average_oscillation),
    ("average monotone envelope", average_monotone_envelope),
    ("linear nonlinear agreement", linear_special_case),
    ("determinism under parallelism", determinism),
    ("base-rate check vs contraction", base_rates_check),
    ("ll1 with constant rho", ll1_constant),
    ("ll1b on constant schedules", ll1b_constant),
    ("nonlinear rho of a linear response", nonlinear_rho_linear),
    ("gaussian sample covariance", gaussian_covariance),
    ("cauchy median and quartiles", cauchy_quantiles),
    ("oscillator determinism and bounds", oscillator_sequence),
    ("wasserstein metric axioms", wasserstein_metric),
    ("empirical covariance psd", covariance_psd),
    ("clt target triple product", clt_triple_product),
    ("rank one score range", rank_one_range),
    ("ensemble csv reproducibility", csv_reproducible),
    ("summary schema and finiteness", summary_schema),
];

fn runner() -> TestRunner {
    let config = Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    };
    let rng = TestRng::deterministic_rng(config.rng_algorithm);
    TestRunner::new_with_rng(config, rng)
}

fn check<S>(strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Outcome
where
    S: Strategy,
    S::Value: Debug,
{
    runner()
        .run(&strategy, test)
        .map(|()| format!("{CASES} cases"))
        .map_err(|e| e.to_string())
}

// ---- generators ---------------------------------------------------------

/// Row-stochastic `n × n`; weights below `zero_below` are dropped and
/// `diag_boost` is added to the diagonal before normalizing.
fn stochastic(n: usize, zero_below: f64, diag_boost: f64) -> impl Strategy<Value = StochasticMatrix> {
    vec(0.0f64..1.0, n * n).prop_map(move |w| normalize(n, &w, zero_below, diag_boost))
}

fn normalize(n: usize, w: &[f64], zero_below: f64, diag_boost: f64) -> StochasticMatrix {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut r: Vec<f64> = w[i * n..(i + 1) * n]
                .iter()
                .map(|&v| if v < zero_below { 0.0 } else { v })
                .collect();
            r[i] += diag_boost;
            let s: f64 = r.iter().sum();
            if s == 0.0 {
                r[i] = 1.0;
                r
            } else {
                r.iter().map(|v| v / s).collect()
            }
        })
        .collect();
    StochasticMatrix::from_rows(&rows).unwrap()
}

/// Equal-row-sum matrix with entries of both signs: the last column is
/// solved from the others.
fn row_sum_matrix(n: usize, w: &[f64], sum: f64) -> RowSumMatrix {
    let mut data = w.to_vec();
    for i in 0..n {
        let partial: f64 = data[i * n..i * n + n - 1].iter().sum();
        data[i * n + n - 1] = sum - partial;
    }
    RowSumMatrix::new(Matrix::new(n, data).unwrap()).unwrap()
}

fn rates(v: Vec<f64>) -> LearningRates {
    LearningRates::new(v).unwrap()
}

/// `n × n` stochastic with entries that are multiples of 1/64.
fn dyadic_stochastic(n: usize) -> impl Strategy<Value = StochasticMatrix> {
    vec(vec(0u32..=64, n - 1), n).prop_map(move |cuts| {
        let rows: Vec<Vec<f64>> = cuts
            .into_iter()
            .map(|mut c| {
                c.sort_unstable();
                let mut edges = vec![0];
                edges.extend(c);
                edges.push(64);
                edges.windows(2).map(|w| f64::from(w[1] - w[0]) / 64.0).collect()
            })
            .collect();
        StochasticMatrix::from_rows(&rows).unwrap()
    })
}

fn spec(
    family: Family,
    weights: MatrixSchedule,
    rates: RateSchedule,
    target: Option<f64>,
    noise: NoiseSpec,
    x0: Vec<f64>,
) -> ModelSpec {
    let n = x0.len();
    ModelSpec {
        family,
        weights,
        rates,
        target,
        noise: noise.compile(n).unwrap(),
        response: None,
        x0: StateVector::new(x0).unwrap(),
    }
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

// ---- matrix core --------------------------------------------------------

pub fn norm_submultiplicative() -> Outcome {
    let s = (1usize..=6).prop_flat_map(|n| {
        (
            Just(n),
            vec(-2.0f64..2.0, n * n),
            -3.0f64..3.0,
            vec(-10.0f64..10.0, n),
        )
    });
    check(s, |(n, w, sum, v)| {
        let b = row_sum_matrix(n, &w, sum);
        let lhs = inf_norm(&b.mul_vec(&v));
        let rhs = matrix_inf_norm(&b) * inf_norm(&v);
        prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-12, "{lhs} > {rhs}");
        Ok(())
    })
}

pub fn oscillation_contraction() -> Outcome {
    let s = (1usize..=6).prop_flat_map(|n| {
        (
            Just(n),
            vec(-2.0f64..2.0, n * n),
            -3.0f64..3.0,
            vec(-10.0f64..10.0, n),
            stochastic(n, 0.3, 0.0),
        )
    });
    check(s, |(n, w, sum, v, a)| {
        let b = row_sum_matrix(n, &w, sum);
        let slack = 1e-12 * (1.0 + matrix_inf_norm(&b) * inf_norm(&v));
        let lhs = oscillation(&b.mul_vec(&v));
        let rhs = dobrushin(&b) * oscillation(&v);
        prop_assert!(lhs <= rhs + slack, "osc(Bv) = {lhs} > δ(B) osc(v) = {rhs}");
        let av = oscillation(&a.mul_vec(&v));
        prop_assert!(av <= oscillation(&v) + 1e-12 * (1.0 + inf_norm(&v)));
        prop_assert!(av <= dobrushin(&a) * oscillation(&v) + 1e-12 * (1.0 + inf_norm(&v)));
        Ok(())
    })
}

/// Multipliers of `2 a_ii`, hitting both boundaries exactly.
fn rate_multiplier() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), Just(1.0), -0.5f64..1.5, 0.0f64..1.0]
}

pub fn contraction_factor_bounds() -> Outcome {
    let s = (1usize..=6).prop_flat_map(|n| (stochastic(n, 0.2, 0.0), vec(rate_multiplier(), n)));
    check(s, |(a, u)| {
        let eps: Vec<f64> = u.iter().enumerate().map(|(i, u)| u * 2.0 * a.get(i, i)).collect();
        let direct = eps
            .iter()
            .enumerate()
            .all(|(i, &e)| 0.0 < e && e < 2.0 * a.get(i, i));
        let rho = contraction_factor(&a, &rates(eps.clone()));
        prop_assert_eq!(rho < 1.0, direct, "rho = {}, eps = {:?}", rho, eps);
        Ok(())
    })
}

pub fn averaging_map_shape() -> Outcome {
    let s = (1usize..=6).prop_flat_map(|n| {
        (
            stochastic(n, 0.2, 0.3),
            vec(0.0f64..2.0, n),
            vec(0.001f64..0.999, n),
        )
    });
    check(s, |(a, free, u)| {
        let n = a.dim();
        let b = averaging_map(&a, &rates(free));
        for (i, s) in b.row_sums().into_iter().enumerate() {
            prop_assert!((s - 1.0).abs() <= ROW_TOL, "row {} sums to {}", i, s);
        }
        let limit = |i: usize| {
            if n == 1 {
                1.0
            } else {
                n as f64 / (n as f64 - 1.0) * a.get(i, i)
            }
        };
        let eps: Vec<f64> = (0..n).map(|i| u[i] * limit(i)).collect();
        let b = averaging_map(&a, &rates(eps));
        for i in 0..n {
            prop_assert!(b.get(i, i) > 0.0, "diagonal {} = {}", i, b.get(i, i));
            for j in 0..n {
                prop_assert!(b.get(i, j) >= 0.0, "entry ({}, {}) = {}", i, j, b.get(i, j));
            }
        }
        Ok(())
    })
}

pub fn dobrushin_identities() -> Outcome {
    let s = (1usize..=6).prop_flat_map(|n| {
        (
            Just(n),
            vec(-2.0f64..2.0, n),
            vec(-2.0f64..2.0, n * n),
            -3.0f64..3.0,
            -5.0f64..5.0,
        )
    });
    check(s, |(n, row, w, sum, c)| {
        let same = Matrix::new(n, row.repeat(n)).unwrap();
        prop_assert_eq!(dobrushin(&same), 0.0);
        let b = row_sum_matrix(n, &w, sum);
        let shifted = Matrix::new(n, b.as_slice().iter().map(|v| v + c).collect()).unwrap();
        let tol = 1e-12 * n as f64 * (1.0 + c.abs() + matrix_inf_norm(&b));
        prop_assert!((dobrushin(&shifted) - dobrushin(&b)).abs() <= tol);
        Ok(())
    })
}

pub fn product_limit_positive() -> Outcome {
    let s = (1usize..=6)
        .prop_flat_map(|n| vec(0.05f64..1.0, n * n).prop_map(move |w| normalize(n, &w, 0.0, 0.0)));
    check(s, |a| {
        let n = a.dim();
        let limit = product_limit(std::iter::repeat(a.matrix()), 100_000, 1e-10);
        prop_assert!(
            limit.converged,
            "spread {} after {} steps",
            limit.spread,
            limit.steps
        );
        prop_assert!(limit.spread < 1e-10);
        for s in limit.limit.row_sums() {
            prop_assert!((s - 1.0).abs() < 1e-9, "C·1 entry {}", s);
        }
        let nu = limit.consensus_weights();
        let nu_b = a.left_mul_vec(nu);
        for j in 0..n {
            prop_assert!((nu_b[j] - nu[j]).abs() < 1e-8, "νB differs from ν at {}", j);
        }
        Ok(())
    })
}

// ---- dynamics -----------------------------------------------------------

pub fn fixed_points() -> Outcome {
    let exact = prop_oneof![Just(1usize), Just(2), Just(4)]
        .prop_flat_map(|n| (dyadic_stochastic(n), vec(0u32..=64, n), -4096i32..=4096));
    let exact_outcome = check(exact, |(a, e, k)| {
        let n = a.dim();
        let eps = rates(e.iter().map(|&e| f64::from(e) / 64.0).collect());
        let level = f64::from(k) / 1024.0;
        let consensus = vec![level; n];
        let zero = vec![0.0; n];
        prop_assert_eq!(bits(&step_base(&a, &eps, level, &consensus)), bits(&consensus));
        prop_assert_eq!(
            bits(&step_noisy(&a, &eps, level, &zero, &consensus)),
            bits(&consensus)
        );
        prop_assert_eq!(bits(&step_pure_noise(&a, &eps, &zero, &zero)), bits(&zero));
        let tanh = Response::shared(LearningFunction::tanh(0.5, 1.0, None).unwrap());
        prop_assert_eq!(
            bits(&step_nonlinear(&a, &tanh, None, Some(level), &zero, &consensus)),
            bits(&consensus)
        );
        prop_assert_eq!(bits(&step_average(&a, &eps, &zero, &consensus)), bits(&consensus));
        Ok(())
    })?;
    let general =
        (1usize..=6).prop_flat_map(|n| (stochastic(n, 0.2, 0.0), vec(0.0f64..1.5, n), -100.0f64..100.0));
    let general_outcome = check(general, |(a, e, level)| {
        let n = a.dim();
        let eps = rates(e);
        let consensus = vec![level; n];
        let zero = vec![0.0; n];
        let tol = 1e-13 * level.abs().max(1.0);
        let close = |v: &[f64]| v.iter().all(|x| (x - level).abs() <= tol);
        prop_assert!(close(&step_base(&a, &eps, level, &consensus)));
        prop_assert!(close(&step_noisy(&a, &eps, level, &zero, &consensus)));
        prop_assert!(close(&step_average(&a, &eps, &zero, &consensus)));
        let tanh = Response::shared(LearningFunction::tanh(0.5, 1.0, None).unwrap());
        prop_assert!(close(&step_nonlinear(
            &a,
            &tanh,
            None,
            Some(level),
            &zero,
            &consensus
        )));
        Ok(())
    })?;
    Ok(format!(
        "exact on dyadic inputs ({exact_outcome}), 1e-13 otherwise ({general_outcome})"
    ))
}

const STEPS: usize = 30;

fn schedule_tables(n: usize) -> impl Strategy<Value = (Vec<StochasticMatrix>, Vec<Vec<f64>>)> {
    (
        vec(stochastic(n, 0.3, 0.2), STEPS),
        vec(vec(0.01f64..0.99, n), STEPS),
    )
}

pub fn base_envelope() -> Outcome {
    let s = (1usize..=5).prop_flat_map(|n| (schedule_tables(n), vec(-5.0f64..5.0, n), -5.0f64..5.0));
    check(s, |((mats, us), x0, target)| {
        let eps: Vec<LearningRates> = mats
            .iter()
            .zip(&us)
            .map(|(a, u)| rates(u.iter().enumerate().map(|(i, u)| u * 2.0 * a.get(i, i)).collect()))
            .collect();
        let rhos: Vec<f64> = mats
            .iter()
            .zip(&eps)
            .map(|(a, e)| {
                (0..a.dim())
                    .map(|i| (a.get(i, i) - e[i]).abs() + 1.0 - a.get(i, i))
                    .fold(0.0, f64::max)
            })
            .collect();
        let m = spec(
            Family::Base,
            MatrixSchedule::Table(mats),
            RateSchedule::Table(eps),
            Some(target),
            NoiseSpec::zero(),
            x0,
        );
        let traj = simulate(&m, STEPS, 0).unwrap();
        let err0 = traj.diagnostics[0].err_inf.unwrap();
        let mut bound = err0;
        for t in 1..=STEPS {
            bound *= rhos[t - 1];
            let err = traj.diagnostics[t].err_inf.unwrap();
            prop_assert!(err <= bound + 1e-12, "t = {}: {} > {}", t, err, bound);
        }
        Ok(())
    })
}

pub fn average_oscillation() -> Outcome {
    let s = (1usize..=5).prop_flat_map(|n| {
        (
            vec(stochastic(n, 0.3, 0.0), STEPS),
            vec(vec(0.0f64..1.5, n), STEPS),
            vec(-5.0f64..5.0, n),
        )
    });
    check(s, |(mats, es, x0)| {
        let eps: Vec<LearningRates> = es.into_iter().map(rates).collect();
        let deltas: Vec<f64> = mats
            .iter()
            .zip(&eps)
            .map(|(a, e)| dobrushin(&averaging_map(a, e)))
            .collect();
        let m = spec(
            Family::Average,
            MatrixSchedule::Table(mats),
            RateSchedule::Table(eps),
            None,
            NoiseSpec::zero(),
            x0,
        );
        let traj = simulate(&m, STEPS, 0).unwrap();
        for t in 1..=STEPS {
            let prev = traj.diagnostics[t - 1].osc;
            let now = traj.diagnostics[t].osc;
            let slack = 1e-12 * (1.0 + inf_norm(&traj.states[t - 1]) * 3.0);
            prop_assert!(
                now <= deltas[t - 1] * prev + slack,
                "t = {}: {} > {} · {}",
                t,
                now,
                deltas[t - 1],
                prev
            );
        }
        Ok(())
    })
}

pub fn average_monotone_envelope() -> Outcome {
    let s = (1usize..=5).prop_flat_map(|n| {
        (
            schedule_tables(n),
            vec(vec(-1.0f64..1.0, n), STEPS),
            vec(-5.0f64..5.0, n),
        )
    });
    check(s, |((mats, us), gammas, x0)| {
        let n = x0.len();
        let limit = |a: &StochasticMatrix, i: usize| {
            if n == 1 {
                1.0
            } else {
                n as f64 / (n as f64 - 1.0) * a.get(i, i)
            }
        };
        let eps: Vec<LearningRates> = mats
            .iter()
            .zip(&us)
            .map(|(a, u)| rates((0..n).map(|i| u[i] * limit(a, i)).collect()))
            .collect();
        let eg: Vec<Vec<f64>> = eps
            .iter()
            .zip(&gammas)
            .map(|(e, g)| (0..n).map(|i| e[i] * g[i]).collect())
            .collect();
        let m = spec(
            Family::Average,
            MatrixSchedule::Table(mats),
            RateSchedule::Table(eps),
            None,
            NoiseSpec::new(NoiseKind::Table { values: gammas }),
            x0,
        );
        let traj = simulate(&m, STEPS, 0).unwrap();
        let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for t in 1..=STEPS {
            let (prev, now) = (&traj.states[t - 1], &traj.states[t]);
            let slack = 1e-12 * (1.0 + inf_norm(prev));
            prop_assert!(
                min(now) >= min(prev) + min(&eg[t - 1]) - slack,
                "lower envelope at t = {}",
                t
            );
            prop_assert!(
                max(now) <= max(prev) + max(&eg[t - 1]) + slack,
                "upper envelope at t = {}",
                t
            );
        }
        Ok(())
    })
}

pub fn linear_special_case() -> Outcome {
    let s = (1usize..=6).prop_flat_map(|n| {
        (
            stochastic(n, 0.2, 0.0),
            vec(0.0f64..1.5, n),
            -5.0f64..5.0,
            vec(-2.0f64..2.0, n),
            vec(-10.0f64..10.0, n),
        )
    });
    check(s, |(a, e, target, gamma, x)| {
        let per_agent = Response::Smooth(e.iter().map(|&r| LearningFunction::linear(r)).collect());
        let eps = rates(e);
        let lin = step_nonlinear(&a, &per_agent, None, Some(target), &gamma, &x);
        let noisy = step_noisy(&a, &eps, target, &gamma, &x);
        for (p, q) in lin.iter().zip(noisy.iter()) {
            prop_assert!((p - q).abs() <= 1e-14, "{} vs {}", p, q);
        }
        Ok(())
    })
}

fn noise_choice() -> impl Strategy<Value = NoiseSpec> {
    prop_oneof![
        Just(NoiseSpec::standard_gaussian()),
        Just(NoiseSpec::new(NoiseKind::Rademacher)),
        (0.1f64..3.0).prop_map(|scale| NoiseSpec::new(NoiseKind::Cauchy { scale })),
    ]
}

pub fn determinism() -> Outcome {
    let s = (
        (1usize..=3).prop_flat_map(|n| (stochastic(n, 0.2, 0.2), vec(0.05f64..0.6, n))),
        noise_choice(),
        any::<u64>(),
        1usize..=16,
        1usize..=40,
    );
    check(s, |((a, e), noise, seed, m, horizon)| {
        let n = a.dim();
        let model = spec(
            Family::PureNoiseFeedback,
            MatrixSchedule::Constant(a),
            RateSchedule::Constant(rates(e)),
            None,
            noise,
            vec![0.0; n],
        );
        let options = |threads| EnsembleOptions {
            threads,
            checkpoints: vec![horizon / 2],
        };
        let flat = |threads| -> Vec<u64> {
            let ens = simulate_ensemble(&model, horizon, m, seed, &options(threads)).unwrap();
            let mut out = Vec::new();
            for t in [horizon / 2, horizon] {
                if let Some(states) = ens.states_at(t) {
                    for x in states {
                        out.extend(bits(x));
                    }
                }
            }
            out
        };
        let reference = flat(Some(1));
        prop_assert_eq!(&flat(Some(3)), &reference);
        prop_assert_eq!(&flat(None), &reference);
        let one = simulate(&model, horizon, seed).unwrap();
        let two = simulate(&model, horizon, seed).unwrap();
        prop_assert_eq!(bits(one.terminal()), bits(two.terminal()));
        Ok(())
    })
}

// ---- conditions ---------------------------------------------------------

pub fn base_rates_check() -> Outcome {
    let s = (1usize..=6).prop_flat_map(|n| (stochastic(n, 0.2, 0.0), vec(rate_multiplier(), n)));
    check(s, |(a, u)| {
        let eps = rates(u.iter().enumerate().map(|(i, u)| u * 2.0 * a.get(i, i)).collect());
        let report = check_base_rates(&a, &eps);
        prop_assert_eq!(report.satisfied, contraction_factor(&a, &eps) < 1.0);
        prop_assert_eq!(report.witness.is_some(), !report.satisfied);
        Ok(())
    })
}

pub fn ll1_constant() -> Outcome {
    check(0.0f64..0.99, |rho| {
        let report = check_ll1(&vec![rho; 5000], 1e6);
        prop_assert!(report.satisfied);
        let sup = report.measured["sup"];
        let exact = rho / (1.0 - rho);
        prop_assert!((sup - exact).abs() <= 1e-9, "sup {} vs {}", sup, exact);
        Ok(())
    })
}

pub fn ll1b_constant() -> Outcome {
    let s = (1usize..=5).prop_flat_map(|n| (stochastic(n, 0.2, 0.0), vec(0.0f64..1.0, n), 2usize..500));
    check(s, |(a, e, horizon)| {
        let report = check_ll1b(
            &MatrixSchedule::Constant(a),
            &RateSchedule::Constant(rates(e)),
            horizon,
            1e-3,
        )
        .unwrap();
        prop_assert_eq!(report.measured["partial_sum"], 0.0);
        prop_assert!(report.satisfied);
        Ok(())
    })
}

pub fn nonlinear_rho_linear() -> Outcome {
    let s = (1usize..=6).prop_flat_map(|n| (stochastic(n, 0.2, 0.0), -1.0f64..3.0));
    check(s, |(a, e)| {
        let n = a.dim();
        prop_assert_eq!(
            nonlinear_rho(&LearningFunction::linear(e), &a),
            contraction_factor(&a, &LearningRates::uniform(n, e))
        );
        Ok(())
    })
}

// ---- noise --------------------------------------------------------------

pub fn gaussian_covariance() -> Outcome {
    const M: usize = 100_000;
    check((any::<u64>(), vec(-1.0f64..1.0, 3)), |(seed, l)| {
        let s11 = l[0] * l[0] + 0.05;
        let s12 = l[0] * l[1];
        let s22 = l[1] * l[1] + l[2] * l[2] + 0.05;
        let sigma = [[s11, s12], [s12, s22]];
        let process = NoiseSpec::new(NoiseKind::Gaussian {
            mean: None,
            covariance: Some(sigma.iter().map(|r| r.to_vec()).collect()),
        })
        .compile(2)
        .unwrap();
        let mut stream = substream(seed, 0);
        let mut g = Vec::new();
        let (mut sum, mut cross) = ([0.0; 2], [[0.0; 2]; 2]);
        for t in 1..=M {
            process.sample_into(t, &mut stream, &mut g).unwrap();
            for i in 0..2 {
                sum[i] += g[i];
                for j in 0..2 {
                    cross[i][j] += g[i] * g[j];
                }
            }
        }
        let m = M as f64;
        for i in 0..2 {
            for j in 0..2 {
                let cov = (cross[i][j] - sum[i] * sum[j] / m) / (m - 1.0);
                let se = ((sigma[i][i] * sigma[j][j] + sigma[i][j].powi(2)) / m).sqrt();
                prop_assert!(
                    (cov - sigma[i][j]).abs() <= 5.0 * se,
                    "entry ({}, {}): {} vs {} (se {})",
                    i,
                    j,
                    cov,
                    sigma[i][j],
                    se
                );
            }
        }
        Ok(())
    })
}

pub fn cauchy_quantiles() -> Outcome {
    const M: usize = 1_000_000;
    check((any::<u64>(), 0.1f64..10.0), |(seed, scale)| {
        let process = NoiseSpec::new(NoiseKind::Cauchy { scale }).compile(1).unwrap();
        let mut stream = substream(seed, 0);
        let mut g = Vec::with_capacity(1);
        let mut draws = Vec::with_capacity(M);
        for t in 1..=M {
            process.sample_into(t, &mut stream, &mut g).unwrap();
            draws.push(g[0]);
        }
        let (lower, median, upper) = {
            let (lo, &mut med, hi) = draws.select_nth_unstable_by(M / 2, f64::total_cmp);
            let q1 = *lo.select_nth_unstable_by(M / 4, f64::total_cmp).1;
            let k = M * 3 / 4 - M / 2 - 1;
            let q3 = *hi.select_nth_unstable_by(k, f64::total_cmp).1;
            (q1, med, q3)
        };
        prop_assert!(
            median.abs() <= 0.02 * scale,
            "median {} at scale {}",
            median,
            scale
        );
        let iqr = upper - lower;
        prop_assert!(
            (iqr - 2.0 * scale).abs() <= 0.02 * 2.0 * scale,
            "IQR {} at scale {}",
            iqr,
            scale
        );
        Ok(())
    })
}

pub fn oscillator_sequence() -> Outcome {
    check(1usize..200_000, |horizon| {
        let osc = EpsilonOscillator::default();
        let a = epsilon_oscillator_sequence(horizon);
        let b = osc.sequence(horizon);
        prop_assert_eq!(bits(&a), bits(&b));
        let mut prev = osc.start;
        for (k, &e) in a.iter().enumerate() {
            let t = (k + 1) as f64;
            prop_assert!((0.25..=0.75).contains(&e), "ε_{} = {}", k + 1, e);
            prop_assert!(((e - prev).abs() - osc.step / t).abs() <= 1e-15, "step {}", k + 1);
            prev = e;
        }
        Ok(())
    })
}

// ---- statistics ---------------------------------------------------------

pub fn wasserstein_metric() -> Outcome {
    let s = (1usize..60).prop_flat_map(|m| {
        (
            vec(-10.0f64..10.0, m),
            vec(-10.0f64..10.0, m),
            vec(-10.0f64..10.0, m),
            0..m,
        )
    });
    check(s, |(a, b, c, shift)| {
        let w = |x: &[f64], y: &[f64]| wasserstein1_1d(x, y).unwrap();
        prop_assert_eq!(w(&a, &b), w(&b, &a));
        let mut rotated = a.clone();
        rotated.rotate_left(shift);
        prop_assert_eq!(w(&a, &rotated), 0.0);
        let (mut sa, mut sb) = (a.clone(), b.clone());
        sa.sort_by(f64::total_cmp);
        sb.sort_by(f64::total_cmp);
        prop_assert_eq!(w(&a, &b) == 0.0, sa == sb);
        prop_assert!(w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-12);
        Ok(())
    })
}

pub fn covariance_psd() -> Outcome {
    let s = (1usize..=5).prop_flat_map(|n| vec(vec(-10.0f64..10.0, n), 2..50));
    check(s, |points| {
        let n = points[0].len();
        let moments = empirical_moments(&EmpiricalSample::new(points, 1).unwrap()).unwrap();
        let cov = nalgebra::DMatrix::from_row_slice(n, n, moments.cov.as_slice());
        let min = cov
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        prop_assert!(min >= -1e-10, "smallest eigenvalue {}", min);
        Ok(())
    })
}

pub fn clt_triple_product() -> Outcome {
    let s = (1usize..=5).prop_flat_map(|n| {
        (
            vec(0.01f64..1.0, n),
            vec(0.0f64..1.5, n),
            vec(-1.0f64..1.0, n * n),
        )
    });
    check(s, |(raw, e, l)| {
        let n = raw.len();
        let total: f64 = raw.iter().sum();
        let nu: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let c = Matrix::new(n, nu.repeat(n)).unwrap();
        let mut sigma = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                sigma[i * n + j] = (0..n).map(|k| l[i * n + k] * l[j * n + k]).sum();
            }
        }
        let target = clt_target(&c, &rates(e.clone()), &Matrix::new(n, sigma.clone()).unwrap()).unwrap();
        // C ℰ Σ ℰ Cᵀ written out as a quadruple sum.
        let mut scale = 0.0_f64;
        let mut naive = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    for q in 0..n {
                        acc += c.get(i, k) * e[k] * sigma[k * n + q] * e[q] * c.get(j, q);
                    }
                }
                naive[i * n + j] = acc;
                scale = scale.max(acc.abs());
            }
        }
        for (x, y) in target.covariance.as_slice().iter().zip(&naive) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + scale), "{} vs {}", x, y);
        }
        Ok(())
    })
}

pub fn rank_one_range() -> Outcome {
    let s = (1usize..=6, 1usize..=6).prop_flat_map(|(n, k)| (Just(n), Just(k), vec(-2.0f64..2.0, n * k)));
    check(s, |(n, k, l)| {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] = (0..k).map(|r| l[i * k + r] * l[j * k + r]).sum();
            }
        }
        let score = rank_one_score(&Matrix::new(n, data).unwrap()).unwrap();
        prop_assert!((0.0..=1.0).contains(&score), "score {}", score);
        Ok(())
    })
}

// ---- harness ------------------------------------------------------------

const ENSEMBLE_IDS: &[&str] = &[
    "gaussian-dist",
    "rademacher-dist",
    "cauchy-invariant",
    "average-clt",
    "average-line",
    "epsilon-oscillator",
];

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

/// A catalog scenario cut down to `horizon` steps and at most `m` ensemble
/// members, keeping only the analyses that still fit in the horizon.
fn shortened(id: &str, seed: u64, horizon: usize, m: Option<usize>) -> Scenario {
    let mut scenario = catalog_scenario(id).unwrap();
    let ensemble = m.filter(|_| scenario.ensemble.is_some());
    scenario
        .apply(&Overrides {
            seed: Some(seed),
            horizon: None,
            ensemble,
            tol: Vec::new(),
        })
        .unwrap();
    scenario.horizon = horizon;
    scenario
        .analyses
        .retain(|a| a.sample_times().iter().all(|&t| t <= horizon));
    scenario.validate().unwrap();
    scenario
}

pub fn csv_reproducible() -> Outcome {
    let s = (0..ENSEMBLE_IDS.len(), any::<u64>(), 1usize..60, 1usize..12);
    check(s, |(k, seed, horizon, m)| {
        let scenario = shortened(ENSEMBLE_IDS[k], seed, horizon, Some(m));
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for (d, threads) in dirs.iter().zip([Some(1), Some(2)]) {
            let options = RunOptions {
                out_dir: Some(d.path().to_path_buf()),
                threads,
            };
            run_scenario(&scenario, &options).unwrap();
        }
        let (a, b) = (csv_files(dirs[0].path()), csv_files(dirs[1].path()));
        prop_assert!(
            a.iter().any(|(name, _)| name == "ensemble.csv"),
            "no ensemble.csv in {:?}",
            a.iter().map(|f| &f.0).collect::<Vec<_>>()
        );
        prop_assert!(a == b, "CSV outputs differ between reruns");
        Ok(())
    })
}

fn all_finite(v: &serde_json::Value, path: &mut String) -> Result<(), String> {
    match v {
        serde_json::Value::Number(x) => match x.as_f64() {
            Some(f) if f.is_finite() => Ok(()),
            _ => Err(format!("non-finite number at {path}")),
        },
        serde_json::Value::Array(items) => items.iter().enumerate().try_for_each(|(i, x)| {
            let len = path.len();
            path.push_str(&format!("/{i}"));
            let r = all_finite(x, path);
            path.truncate(len);
            r
        }),
        serde_json::Value::Object(map) => map.iter().try_for_each(|(k, x)| {
            let len = path.len();
            path.push('/');
            path.push_str(k);
            let r = all_finite(x, path);
            path.truncate(len);
            r
        }),
        _ => Ok(()),
    }
}

fn validator() -> &'static jsonschema::Validator {
    static V: OnceLock<jsonschema::Validator> = OnceLock::new();
    V.get_or_init(|| {
        let schema: serde_json::Value = serde_json::from_str(SUMMARY_SCHEMA).unwrap();
        jsonschema::validator_for(&schema).unwrap()
    })
}

pub fn summary_schema() -> Outcome {
    let s = (0..catalog().len(), any::<u64>(), 1usize..80, 2usize..20);
    check(s, |(k, seed, horizon, m)| {
        let scenario = shortened(catalog()[k].id, seed, horizon, Some(m));
        let summary = serde_json::to_value(run_scenario(&scenario, &RunOptions::default()).unwrap()).unwrap();
        if let Err(e) = validator().validate(&summary) {
            return Err(TestCaseError::fail(format!("{}: {e}", scenario.id)));
        }
        all_finite(&summary, &mut String::new()).map_err(TestCaseError::fail)?;
        Ok(())
    })
}
