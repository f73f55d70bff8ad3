//! Browser bindings.
//!
//! Every export takes a JSON parameter object and returns a JSON result, so
//! the page needs no generated type glue. The same functions are callable
//! natively through the `*_json` wrappers, which is how they are tested.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use consensus_lab::dynamics::{
    simulate, simulate_ensemble, EnsembleOptions, Family, MatrixSchedule, ModelSpec, RateSchedule,
};
use consensus_lab::matrix::{
    averaging_map, contraction_factor, dobrushin, product_limit, LearningRates, Matrix, StateVector,
    StochasticMatrix,
};
use consensus_lab::noise::{Envelope, EpsilonOscillator, NoiseKind, NoiseSpec};
use consensus_lab::stats::{clt_target, consensus_time};

/// Largest number of points any series sent to the page may hold.
const MAX_POINTS: usize = 2000;
const MAX_HORIZON: usize = 1_000_000;
const MAX_ENSEMBLE: usize = 20_000;

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    #[default]
    None,
    Gaussian,
    Rademacher,
    Cauchy,
}

impl Noise {
    fn spec(self, decay: f64) -> NoiseSpec {
        let kind = match self {
            Noise::None => return NoiseSpec::zero(),
            Noise::Gaussian => NoiseKind::Gaussian {
                mean: None,
                covariance: None,
            },
            Noise::Rademacher => NoiseKind::Rademacher,
            Noise::Cauchy => NoiseKind::Cauchy { scale: 1.0 },
        };
        let envelope = if decay > 0.0 {
            Envelope::Power { exponent: decay }
        } else {
            Envelope::Unit
        };
        NoiseSpec::new(kind).with_envelope(envelope)
    }

    /// Per-component covariance, when it exists.
    fn variance(self) -> Option<f64> {
        match self {
            Noise::None => Some(0.0),
            Noise::Gaussian | Noise::Rademacher => Some(1.0),
            Noise::Cauchy => None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryParams {
    pub a: Vec<Vec<f64>>,
    pub eps: Vec<f64>,
    pub target: f64,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub noise: Noise,
    /// Exponent `p` of a `t^-p` noise envelope; 0 keeps the noise stationary.
    #[serde(default)]
    pub decay: f64,
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Serialize)]
pub struct TrajectoryResult {
    pub rho: f64,
    pub times: Vec<usize>,
    /// `states[k]` is the state at `times[k]`.
    pub states: Vec<Vec<f64>>,
    pub err_inf: Vec<f64>,
    /// `ρ^t · err_0`, the noiseless bound.
    pub envelope: Vec<f64>,
    pub consensus_time: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudParams {
    pub a: Vec<Vec<f64>>,
    pub eps: Vec<f64>,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub noise: Noise,
    pub horizon: usize,
    pub ensemble: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Serialize)]
pub struct CloudResult {
    pub b: Vec<Vec<f64>>,
    pub delta: f64,
    /// Consensus weights of the product limit.
    pub nu: Vec<f64>,
    /// `ν · x0`, the noiseless consensus.
    pub consensus: f64,
    /// `(X_T − mean)/√T` for each member.
    pub points: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Predicted covariance of `points`; absent for Cauchy noise.
    pub target_covariance: Option<Vec<Vec<f64>>>,
    pub empirical_covariance: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OscillatorParams {
    pub horizon: usize,
    #[serde(default)]
    pub step: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct OscillatorResult {
    pub times: Vec<usize>,
    pub eps: Vec<f64>,
    pub turning_points: Vec<(usize, f64)>,
}

fn fail(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn limit(name: &str, value: usize, max: usize) -> Result<(), String> {
    if value == 0 || value > max {
        return Err(format!("{name} must be between 1 and {max}"));
    }
    Ok(())
}

/// Indices `0..=last` thinned to at most [`MAX_POINTS`], always keeping the ends.
fn thinned(last: usize) -> Vec<usize> {
    if last < MAX_POINTS {
        return (0..=last).collect();
    }
    let stride = last.div_ceil(MAX_POINTS - 1);
    let mut idx: Vec<usize> = (0..=last).step_by(stride).collect();
    if idx.last() != Some(&last) {
        idx.push(last);
    }
    idx
}

pub fn trajectory(p: &TrajectoryParams) -> Result<TrajectoryResult, String> {
    limit("horizon", p.horizon, MAX_HORIZON)?;
    let a = StochasticMatrix::from_rows(&p.a).map_err(fail)?;
    let eps = LearningRates::new(p.eps.clone()).map_err(fail)?;
    let rho = contraction_factor(&a, &eps);
    let n = a.dim();
    let family = if p.noise == Noise::None {
        Family::Base
    } else {
        Family::NoisyFeedback
    };
    let spec = ModelSpec {
        family,
        weights: MatrixSchedule::Constant(a),
        rates: RateSchedule::Constant(eps),
        target: Some(p.target),
        noise: p.noise.spec(p.decay).compile(n).map_err(fail)?,
        response: None,
        x0: StateVector::new(p.x0.clone()).map_err(fail)?,
    };
    let traj = simulate(&spec, p.horizon, p.seed).map_err(fail)?;
    let err0 = traj.diagnostics[0].err_inf.unwrap_or(0.0);
    let times = thinned(p.horizon);
    Ok(TrajectoryResult {
        rho,
        states: times
            .iter()
            .map(|&t| traj.states[t].as_slice().to_vec())
            .collect(),
        err_inf: times
            .iter()
            .map(|&t| traj.diagnostics[t].err_inf.unwrap_or(0.0))
            .collect(),
        envelope: times.iter().map(|&t| rho.powi(t as i32) * err0).collect(),
        consensus_time: consensus_time(&traj, spec.target, 1e-6),
        times,
    })
}

pub fn cloud(p: &CloudParams) -> Result<CloudResult, String> {
    limit("horizon", p.horizon, 100_000)?;
    limit("ensemble", p.ensemble, MAX_ENSEMBLE)?;
    let a = StochasticMatrix::from_rows(&p.a).map_err(fail)?;
    let eps = LearningRates::new(p.eps.clone()).map_err(fail)?;
    let n = a.dim();
    let b = averaging_map(&a, &eps);
    let delta = dobrushin(b.matrix());
    let lim = product_limit(std::iter::repeat(b.matrix()), 100_000, 1e-10);
    if !lim.converged {
        return Err(format!(
            "product of B does not reach rank one (spread {:.3e})",
            lim.spread
        ));
    }
    let nu = lim.consensus_weights().to_vec();
    let consensus = nu.iter().zip(&p.x0).map(|(w, x)| w * x).sum();
    let target_covariance = match p.noise.variance() {
        Some(v) => {
            let sigma = Matrix::identity(n).scale(v);
            let t = clt_target(&lim.limit, &eps, &sigma).map_err(fail)?;
            Some(t.covariance.to_rows())
        }
        None => None,
    };
    let spec = ModelSpec {
        family: Family::Average,
        weights: MatrixSchedule::Constant(a),
        rates: RateSchedule::Constant(eps),
        target: None,
        noise: p.noise.spec(0.0).compile(n).map_err(fail)?,
        response: None,
        x0: StateVector::new(p.x0.clone()).map_err(fail)?,
    };
    let ens =
        simulate_ensemble(&spec, p.horizon, p.ensemble, p.seed, &EnsembleOptions::default()).map_err(fail)?;
    let m = ens.terminal.len() as f64;
    let mut mean = vec![0.0; n];
    for x in &ens.terminal {
        for (s, v) in mean.iter_mut().zip(x.as_slice()) {
            *s += v / m;
        }
    }
    let root_t = (p.horizon as f64).sqrt();
    let points: Vec<Vec<f64>> = ens
        .terminal
        .iter()
        .map(|x| {
            x.as_slice()
                .iter()
                .zip(&mean)
                .map(|(v, mu)| (v - mu) / root_t)
                .collect()
        })
        .collect();
    let mut cov = vec![vec![0.0; n]; n];
    for z in &points {
        for i in 0..n {
            for j in 0..n {
                cov[i][j] += z[i] * z[j] / (m - 1.0).max(1.0);
            }
        }
    }
    let step = points.len().div_ceil(MAX_POINTS);
    Ok(CloudResult {
        b: b.matrix().to_rows(),
        delta,
        nu,
        consensus,
        points: points.into_iter().step_by(step).collect(),
        mean,
        target_covariance,
        empirical_covariance: cov,
    })
}

pub fn oscillator(p: &OscillatorParams) -> Result<OscillatorResult, String> {
    limit("horizon", p.horizon, MAX_HORIZON)?;
    let mut osc = EpsilonOscillator::default();
    if let Some(step) = p.step {
        osc.step = step;
    }
    osc.validate().map_err(fail)?;
    // Index k of the sequence is ε at t = k + 1.
    let eps = osc.sequence(p.horizon);
    let idx = thinned(p.horizon - 1);
    Ok(OscillatorResult {
        times: idx.iter().map(|k| k + 1).collect(),
        eps: idx.iter().map(|&k| eps[k]).collect(),
        turning_points: osc.turning_points(p.horizon),
    })
}

fn json_call<P, R>(params: &str, f: impl Fn(&P) -> Result<R, String>) -> Result<String, String>
where
    P: for<'de> Deserialize<'de>,
    R: Serialize,
{
    let p: P = serde_json::from_str(params).map_err(|e| format!("bad parameters: {e}"))?;
    serde_json::to_string(&f(&p)?).map_err(fail)
}

pub fn trajectory_json(params: &str) -> Result<String, String> {
    json_call(params, trajectory)
}

pub fn cloud_json(params: &str) -> Result<String, String> {
    json_call(params, cloud)
}

pub fn oscillator_json(params: &str) -> Result<String, String> {
    json_call(params, oscillator)
}

#[wasm_bindgen(js_name = trajectory)]
pub fn trajectory_js(params: &str) -> Result<String, JsError> {
    trajectory_json(params).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = averageCloud)]
pub fn cloud_js(params: &str) -> Result<String, JsError> {
    cloud_json(params).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = oscillator)]
pub fn oscillator_js(params: &str) -> Result<String, JsError> {
    oscillator_json(params).map_err(|e| JsError::new(&e))
}
