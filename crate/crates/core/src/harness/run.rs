//! Executing scenarios and writing their artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::conditions::{
    self, check_average_rates, check_base_rates, check_base_rates_weighted, check_ll1, check_ll1b,
    check_nonlinear_bounds, check_product_to_zero, ConditionReport, Grid,
};
use crate::dynamics::{
    self, learning::endpoint_rho, simulate, EnsembleOptions, EnsembleSample, Family, ModelSpec, Response,
    Trajectory,
};
use crate::error::{Error, Result};
use crate::matrix::{averaging_map, product_limit, LearningRates, Matrix, WeightVector};
use crate::noise::NoiseKind;
use crate::stats::{
    cauchy_cdf, clt_target, consensus_time, cycle_values, detect_periodicity, distribution_drift,
    empirical_moments, ks_best_fit_normal, ks_critical_value, ks_statistic, normal_cdf, rank_one_score,
    EmpiricalSample,
};

use super::scenario::{Analysis, Check, KsReference, PredicateResult, Scenario};

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Directory for trajectory, ensemble and summary files; nothing is
    /// written when `None`.
    pub out_dir: Option<PathBuf>,
    /// Worker threads for the ensemble. Never affects results.
    pub threads: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrajectorySummary {
    pub final_state: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_err_inf: Option<f64>,
    pub final_osc: f64,
    /// Steps whose averaged matrix had a zero Dobrushin coefficient.
    pub zero_dobrushin_steps: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Timing {
    pub simulation_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub scenario: String,
    pub family: Family,
    pub horizon: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensemble_size: Option<usize>,
    pub master_seed: u64,
    pub checks: Map<String, Value>,
    pub analyses: Map<String, Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<TrajectorySummary>,
    pub acceptance: Vec<PredicateResult>,
    /// All acceptance predicates held and no item failed with an error.
    pub passed: bool,
    pub errors: Vec<String>,
    pub outputs: BTreeMap<String, String>,
    pub timing: Timing,
}

fn error_record(e: &Error) -> Value {
    json!({ "error": e.to_string() })
}

fn insert_unique(map: &mut Map<String, Value>, name: &str, value: Value) {
    let mut key = name.to_string();
    let mut k = 2;
    while map.contains_key(&key) {
        key = format!("{name}#{k}");
        k += 1;
    }
    map.insert(key, value);
}

/// `ρ_t` sequence appropriate to the family: contraction factors, endpoint
/// factors for smooth nonlinear responses, or `δ(B_t)` for averaging.
pub fn rho_sequence(spec: &ModelSpec, horizon: usize) -> Result<Vec<f64>> {
    match (spec.family, &spec.response) {
        (Family::Average, _) => conditions::dobrushin_sequence(&spec.weights, &spec.rates, horizon),
        (Family::Nonlinear, Some(Response::Smooth(fs))) => (1..=horizon)
            .map(|t| Ok(endpoint_rho(fs, &*spec.weights.at(t)?)))
            .collect(),
        (Family::Nonlinear, _) => Err(Error::InvalidScenario(
            "sign response has no contraction factor".into(),
        )),
        _ => conditions::contraction_sequence(&spec.weights, &spec.rates, horizon),
    }
}

/// Runs `f` at every `t ≤ horizon` (once for constant schedules) and
/// returns the first unsatisfied report, else the last one.
fn pointwise(
    spec: &ModelSpec,
    horizon: usize,
    f: impl Fn(
        &dynamics::schedule::MatrixSchedule,
        &dynamics::schedule::RateSchedule,
        usize,
    ) -> Result<ConditionReport>,
) -> Result<ConditionReport> {
    let last = if spec.weights.is_constant() && spec.rates.is_constant() {
        1
    } else {
        horizon.max(1)
    };
    let mut report = None;
    for t in 1..=last {
        let mut r = f(&spec.weights, &spec.rates, t)?;
        if last > 1 {
            r.horizon = Some(horizon);
        }
        if !r.satisfied {
            if let Some(w) = r.witness.as_mut() {
                w.time = Some(t);
            }
            return Ok(r);
        }
        report = Some(r);
    }
    Ok(report.expect("at least one step"))
}

pub fn run_check(check: &Check, spec: &ModelSpec, horizon: usize) -> Result<ConditionReport> {
    match check {
        Check::BaseRates => pointwise(spec, horizon, |w, r, t| {
            Ok(check_base_rates(&*w.at(t)?, &*r.at(t)?))
        }),
        Check::BaseRatesWeighted { beta, delta } => {
            let beta = WeightVector::new(beta.clone())?;
            pointwise(spec, horizon, |w, r, t| {
                Ok(check_base_rates_weighted(&*w.at(t)?, &*r.at(t)?, &beta, *delta))
            })
        }
        Check::AverageRates { mode } => pointwise(spec, horizon, |w, r, t| {
            Ok(check_average_rates(&*w.at(t)?, &*r.at(t)?, *mode))
        }),
        Check::ProductToZero { product_tol } => {
            Ok(check_product_to_zero(&rho_sequence(spec, horizon)?, *product_tol))
        }
        Check::Ll1 { bound } => Ok(check_ll1(&rho_sequence(spec, horizon)?, *bound)),
        Check::Ll1b { summability_tol } => check_ll1b(&spec.weights, &spec.rates, horizon, *summability_tol),
        Check::NonlinearBounds { grid } => match &spec.response {
            Some(Response::Smooth(fs)) => {
                let mut last = None;
                for f in fs {
                    let g = grid.unwrap_or_else(|| Grid::for_function(f));
                    let r = check_nonlinear_bounds(f, &spec.weights, horizon, &g)?;
                    if !r.satisfied {
                        return Ok(r);
                    }
                    last = Some(r);
                }
                Ok(last.expect("validated non-empty"))
            }
            Some(Response::Sign) => Err(Error::InvalidScenario(
                "sign response carries no derivative bounds".into(),
            )),
            None => Err(Error::InvalidScenario("model has no nonlinear response".into())),
        },
    }
}

/// Runs the scenario's condition checks only.
pub fn check_scenario(s: &Scenario) -> Result<Map<String, Value>> {
    let spec = s.model.compile(s.horizon)?;
    Ok(checks_for(s, &spec))
}

fn checks_for(s: &Scenario, spec: &ModelSpec) -> Map<String, Value> {
    let mut out = Map::new();
    for c in &s.checks {
        let v = run_check(c, spec, s.horizon)
            .and_then(|r| Ok(serde_json::to_value(r)?))
            .unwrap_or_else(|e| error_record(&e));
        insert_unique(&mut out, c.name(), v);
    }
    out
}

fn sample_at(ens: Option<&EnsembleSample>, t: usize) -> Result<EmpiricalSample> {
    let ens = ens.ok_or_else(|| Error::InvalidScenario("no ensemble".into()))?;
    ens.sample_at(t)
        .ok_or_else(|| Error::InvalidScenario(format!("ensemble has no states at t = {t}")))
}

fn envelope(traj: &Trajectory, slack: f64) -> Result<Value> {
    let by_err = traj.target.is_some();
    let metric = |k: usize| {
        let d = &traj.diagnostics[k];
        if by_err {
            d.err_inf.expect("target present")
        } else {
            d.osc
        }
    };
    if traj.diagnostics.len() != traj.horizon + 1 {
        return Err(Error::TrajectoryTooShort(
            "envelope needs per-step diagnostics".into(),
        ));
    }
    let m0 = metric(0);
    let mut cumulative = 1.0;
    let mut max_step_excess = f64::NEG_INFINITY;
    let mut max_cum_excess = f64::NEG_INFINITY;
    let mut worst_step = None;
    for k in 1..=traj.horizon {
        let rho = traj.diagnostics[k]
            .rho
            .ok_or_else(|| Error::InvalidScenario("no contraction factor recorded".into()))?;
        cumulative *= rho;
        let step_excess = metric(k) - rho * metric(k - 1);
        if step_excess > max_step_excess {
            max_step_excess = step_excess;
            worst_step = Some(k);
        }
        max_cum_excess = max_cum_excess.max(metric(k) - cumulative * m0);
    }
    let finite = |v: f64| if v.is_finite() { Some(v) } else { None };
    Ok(json!({
        "metric": if by_err { "err_inf" } else { "osc" },
        "slack": slack,
        "per_step_holds": traj.horizon == 0 || max_step_excess <= slack,
        "cumulative_holds": traj.horizon == 0 || max_cum_excess <= slack,
        "max_step_excess": finite(max_step_excess),
        "max_cumulative_excess": finite(max_cum_excess),
        "worst_step": worst_step,
        "final_metric": metric(traj.horizon),
        "final_bound": cumulative * m0,
    }))
}

fn noise_covariance(spec: &ModelSpec, decl: &crate::noise::NoiseSpec) -> Result<Matrix> {
    let n = spec.n();
    if decl.envelope != crate::noise::Envelope::Unit {
        return Err(Error::InvalidScenario(
            "CLT covariance needs noise without a time envelope".into(),
        ));
    }
    match &decl.kind {
        NoiseKind::Gaussian { covariance: None, .. } | NoiseKind::Rademacher => Ok(Matrix::identity(n)),
        NoiseKind::Gaussian {
            covariance: Some(rows),
            ..
        } => Matrix::from_rows(rows),
        other => Err(Error::InvalidScenario(format!(
            "no covariance known for noise {other:?}; give sigma explicitly"
        ))),
    }
}

fn relative_errors(empirical: &Matrix, target: &Matrix) -> f64 {
    let scale = target.as_slice().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    empirical
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(e, t)| {
            let denom = if t.abs() > 1e-12 * scale { t.abs() } else { scale };
            if denom > 0.0 {
                (e - t).abs() / denom
            } else {
                e.abs()
            }
        })
        .fold(0.0, f64::max)
}

fn run_analysis(
    a: &Analysis,
    s: &Scenario,
    spec: &ModelSpec,
    traj: Option<&Trajectory>,
    ens: Option<&EnsembleSample>,
) -> Result<Value> {
    let traj_required = || traj.ok_or_else(|| Error::InvalidScenario("no trajectory".into()));
    let horizon = s.horizon;
    Ok(match a {
        Analysis::ConsensusTime { tol, endogenous } => {
            let target = if *endogenous { None } else { spec.target };
            json!({
                "time": consensus_time(traj_required()?, target, *tol),
                "tol": tol,
                "against": if target.is_some() { "target" } else { "oscillation" },
            })
        }
        Analysis::Periodicity { max_period, tol } => {
            let traj = traj_required()?;
            let period = detect_periodicity(traj, *max_period, *tol)?;
            let shift = spec.target.unwrap_or(0.0);
            let cycle: Option<Vec<Vec<f64>>> = period.map(|p| {
                cycle_values(traj, p)
                    .into_iter()
                    .map(|x| x.into_iter().map(|v| v - shift).collect())
                    .collect()
            });
            let flat: Vec<f64> = cycle.iter().flatten().flatten().copied().collect();
            json!({
                "period": period,
                "cycle": cycle,
                "cycle_min": flat.iter().copied().reduce(f64::min),
                "cycle_max": flat.iter().copied().reduce(f64::max),
                "relative_to_target": spec.target.is_some(),
            })
        }
        Analysis::Envelope { slack } => envelope(traj_required()?, *slack)?,
        Analysis::Moments { t } => {
            let m = empirical_moments(&sample_at(ens, t.unwrap_or(horizon))?)?;
            serde_json::to_value(m)?
        }
        Analysis::MeanError { times } => {
            let target = spec
                .target
                .ok_or_else(|| Error::InvalidScenario("mean_error needs a target".into()))?;
            let mut rows = Vec::new();
            for &t in times {
                let sample = sample_at(ens, t)?;
                let mean = sample
                    .points
                    .iter()
                    .map(|p| p.iter().fold(0.0_f64, |m, v| m.max((v - target).abs())))
                    .sum::<f64>()
                    / sample.m() as f64;
                rows.push(json!({ "t": t, "mean_err_inf": mean }));
            }
            Value::Array(rows)
        }
        Analysis::Drift { times, floor } => {
            let mut map = BTreeMap::new();
            for &t in times {
                map.insert(t, sample_at(ens, t)?);
            }
            serde_json::to_value(distribution_drift(&map, *floor)?)?
        }
        Analysis::Ks {
            t,
            coordinate,
            reference,
            alpha,
        } => {
            let sample = sample_at(ens, t.unwrap_or(horizon))?;
            if *coordinate >= sample.n {
                return Err(Error::Dimension {
                    expected: sample.n,
                    found: *coordinate,
                });
            }
            let column = sample.column(*coordinate);
            let statistic = match reference {
                KsReference::Normal { mean, sd } => ks_statistic(&column, normal_cdf(*mean, *sd)),
                KsReference::Cauchy { location, scale } => {
                    ks_statistic(&column, cauchy_cdf(*location, *scale))
                }
                KsReference::BestFitNormal => ks_best_fit_normal(&column)?,
            };
            let critical = ks_critical_value(column.len(), *alpha);
            json!({
                "statistic": statistic,
                "critical_value": critical,
                "alpha": alpha,
                "m": column.len(),
                "below_critical": statistic < critical,
            })
        }
        Analysis::ProductLimit { t_max, tol } => {
            let t_max = t_max.unwrap_or(horizon).max(1);
            let factors = (1..=t_max).map(|t| -> Result<Matrix> {
                Ok(averaging_map(&*spec.weights.at(t)?, &*spec.rates.at(t)?).into_matrix())
            });
            let bs = factors.collect::<Result<Vec<_>>>()?;
            let limit = product_limit(bs.iter(), t_max, *tol);
            let nu = limit.consensus_weights().to_vec();
            let residual = if spec.weights.is_constant() && spec.rates.is_constant() {
                let nb = bs[0].left_mul_vec(&nu);
                Some(nb.iter().zip(&nu).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
            } else {
                None
            };
            json!({
                "converged": limit.converged,
                "steps": limit.steps,
                "spread": limit.spread,
                "nu": nu,
                "nu_sum": nu.iter().sum::<f64>(),
                "nu_residual": residual,
            })
        }
        Analysis::Clt { t, sigma, t_max, tol } => {
            if spec.family != Family::Average {
                return Err(Error::InvalidScenario("clt applies to the average family".into()));
            }
            let t = t.unwrap_or(horizon);
            let t_max = t_max.unwrap_or(horizon).max(1);
            let bs = (1..=t_max)
                .map(|k| Ok(averaging_map(&*spec.weights.at(k)?, &*spec.rates.at(k)?).into_matrix()))
                .collect::<Result<Vec<_>>>()?;
            let limit = product_limit(bs.iter(), t_max, *tol);
            let eps: LearningRates = spec.rates.at(horizon.max(1))?.into_owned();
            let sigma = match sigma {
                Some(rows) => Matrix::from_rows(rows)?,
                None => noise_covariance(spec, &s.model.noise)?,
            };
            let target = clt_target(&limit.limit, &eps, &sigma)?;
            let scaled = sample_at(ens, t)?.centered_scaled()?;
            let emp = empirical_moments(&scaled)?.cov;
            json!({
                "limit_converged": limit.converged,
                "nu": limit.consensus_weights(),
                "target_covariance": target.covariance,
                "empirical_covariance": emp,
                "max_relative_error": relative_errors(&emp, &target.covariance),
                "rank_one_score": rank_one_score(&emp)?,
                "target_rank_one_score": rank_one_score(&target.covariance)?,
            })
        }
        Analysis::RankOne { t } => {
            let scaled = sample_at(ens, t.unwrap_or(horizon))?.centered_scaled()?;
            let cov = empirical_moments(&scaled)?.cov;
            json!({ "rank_one_score": rank_one_score(&cov)?, "covariance": cov })
        }
    })
}

fn fmt_f64(v: f64) -> String {
    // `Display` for f64 prints the shortest string that round-trips.
    format!("{v}")
}

pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let n = traj.states.first().map_or(0, |s| s.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|c| format!("component_{c}")));
    header.push("err_inf".into());
    header.push("osc".into());
    w.write_record(&header)?;
    for (k, (&t, x)) in traj.times.iter().zip(&traj.states).enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(x.iter().map(|&v| fmt_f64(v)));
        let d = traj.diagnostics.get(k);
        rec.push(d.and_then(|d| d.err_inf).map(fmt_f64).unwrap_or_default());
        rec.push(fmt_f64(
            d.map_or_else(|| crate::matrix::oscillation(x), |d| d.osc),
        ));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per run: `run,component_0,…`.
pub fn write_ensemble_csv(path: &Path, states: &[impl AsRef<[f64]>]) -> Result<()> {
    let n = states.first().map_or(0, |s| s.as_ref().len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["run".to_string()];
    header.extend((0..n).map(|c| format!("component_{c}")));
    w.write_record(&header)?;
    for (run, x) in states.iter().enumerate() {
        let mut rec = vec![run.to_string()];
        rec.extend(x.as_ref().iter().map(|&v| fmt_f64(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an ensemble CSV written by [`write_ensemble_csv`].
pub fn read_ensemble_csv(path: &Path, t_final: usize) -> Result<EmpiricalSample> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.get(0) != Some("run") || headers.len() < 2 {
        return Err(Error::InvalidScenario(format!(
            "{}: expected header run,component_0,…",
            path.display()
        )));
    }
    let mut points = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .skip(1)
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidScenario(format!("bad value {f:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        points.push(row);
    }
    EmpiricalSample::new(points, t_final)
}

/// Executes checks, simulations and analyses; writes artifacts when an
/// output directory is given. Failures of individual items are recorded
/// in the summary and the run continues.
pub fn run_scenario(s: &Scenario, options: &RunOptions) -> Result<RunSummary> {
    let started = Instant::now();
    let spec = s.model.compile(s.horizon)?;
    let mut errors = Vec::new();

    let checks = checks_for(s, &spec);

    let sim_started = Instant::now();
    let traj = match simulate(&spec, s.horizon, s.master_seed) {
        Ok(t) => Some(t),
        Err(e) => {
            errors.push(format!("trajectory: {e}"));
            None
        }
    };
    let ens = match &s.ensemble {
        Some(e) => {
            let opts = EnsembleOptions {
                threads: options.threads,
                checkpoints: s.checkpoints(),
            };
            match dynamics::simulate_ensemble(&spec, s.horizon, e.size, s.master_seed, &opts) {
                Ok(ens) => Some(ens),
                Err(e) => {
                    errors.push(format!("ensemble: {e}"));
                    None
                }
            }
        }
        None => None,
    };
    let simulation_seconds = sim_started.elapsed().as_secs_f64();

    let mut analyses = Map::new();
    for a in &s.analyses {
        let v = run_analysis(a, s, &spec, traj.as_ref(), ens.as_ref()).unwrap_or_else(|e| {
            errors.push(format!("{}: {e}", a.name()));
            error_record(&e)
        });
        insert_unique(&mut analyses, a.name(), v);
    }
    for (name, v) in &checks {
        if let Some(msg) = v.get("error") {
            errors.push(format!("{name}: {}", msg.as_str().unwrap_or_default()));
        }
    }

    let trajectory = traj.as_ref().map(|t| {
        let last = t.terminal();
        TrajectorySummary {
            final_state: last.to_vec(),
            final_err_inf: t.diagnostics.last().and_then(|d| d.err_inf),
            final_osc: crate::matrix::oscillation(last),
            zero_dobrushin_steps: t.zero_dobrushin_steps,
        }
    });

    let mut outputs = BTreeMap::new();
    if let Some(dir) = &options.out_dir {
        fs::create_dir_all(dir)?;
        if let Some(t) = &traj {
            let p = dir.join(&s.outputs.trajectory);
            write_trajectory_csv(&p, t)?;
            outputs.insert("trajectory".into(), p.display().to_string());
        }
        if let Some(e) = &ens {
            let p = dir.join(&s.outputs.ensemble);
            write_ensemble_csv(&p, &e.terminal)?;
            outputs.insert("ensemble".into(), p.display().to_string());
            for (t, states) in &e.snapshots {
                let stem = Path::new(&s.outputs.ensemble)
                    .file_stem()
                    .map_or_else(|| "ensemble".into(), |x| x.to_string_lossy().into_owned());
                let p = dir.join(format!("{stem}_t{t}.csv"));
                write_ensemble_csv(&p, states)?;
                outputs.insert(format!("ensemble_t{t}"), p.display().to_string());
            }
        }
        outputs.insert(
            "summary".into(),
            dir.join(&s.outputs.summary).display().to_string(),
        );
    }

    let mut summary = RunSummary {
        schema_version: super::scenario::SCHEMA_VERSION,
        scenario: s.id.clone(),
        family: s.model.family,
        horizon: s.horizon,
        ensemble_size: s.ensemble.as_ref().map(|e| e.size),
        master_seed: s.master_seed,
        checks,
        analyses,
        trajectory,
        acceptance: Vec::new(),
        passed: false,
        errors,
        outputs,
        timing: Timing {
            simulation_seconds,
            total_seconds: 0.0,
        },
    };
    let value = serde_json::to_value(&summary)?;
    summary.acceptance = s.acceptance.iter().map(|p| p.evaluate(&value)).collect();
    summary.passed = summary.errors.is_empty() && summary.acceptance.iter().all(|r| r.passed);
    summary.timing.total_seconds = started.elapsed().as_secs_f64();

    if let Some(dir) = &options.out_dir {
        let text = serde_json::to_string_pretty(&summary)?;
        fs::write(dir.join(&s.outputs.summary), text + "\n")?;
    }
    Ok(summary)
}

/// Moments, rank-one score and per-coordinate normality of a saved
/// ensemble, optionally after centring and `1/√t` scaling.
pub fn analyze_sample(sample: &EmpiricalSample, scale: bool, alpha: f64) -> Result<Value> {
    let s = if scale {
        sample.centered_scaled()?
    } else {
        sample.clone()
    };
    let moments = empirical_moments(&s)?;
    let critical = ks_critical_value(s.m(), alpha);
    let ks: Vec<Value> = (0..s.n)
        .map(|c| -> Result<Value> {
            let stat = ks_best_fit_normal(&s.column(c))?;
            Ok(json!({ "coordinate": c, "statistic": stat, "below_critical": stat < critical }))
        })
        .collect::<Result<_>>()?;
    Ok(json!({
        "m": s.m(),
        "n": s.n,
        "centered_scaled": s.centered_scaled,
        "mean": moments.mean,
        "covariance": moments.cov,
        "rank_one_score": rank_one_score(&moments.cov)?,
        "ks_best_fit_normal": ks,
        "ks_critical_value": critical,
        "alpha": alpha,
    }))
}
