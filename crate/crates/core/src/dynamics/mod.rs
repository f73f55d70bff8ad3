//! Model families, trajectory simulation and Monte Carlo ensembles.

pub mod learning;
pub mod schedule;
pub mod step;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{
    averaging_map, contraction_factor, dobrushin, inf_norm, oscillation, LearningRates, StateVector,
};
use crate::noise::{substream, NoiseProcess};
use crate::stats::EmpiricalSample;

pub use learning::{LearningFunction, Response};
pub use schedule::{MatrixSchedule, RateSchedule};
pub use step::{step_average, step_base, step_noisy, step_nonlinear, step_pure_noise};

/// `δ(B_t)` at or below this counts as a zero coefficient.
pub const ZERO_DOBRUSHIN_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `X_t = A_t X_{t−1} + ℰ_t(σ̄ − X_{t−1})`, no noise.
    Base,
    /// `X_t = A_t X_{t−1} + ℰ_t(σ̄ + γ_t − X_{t−1})`.
    NoisyFeedback,
    /// `X_t = A_t X_{t−1} + ℰ_t(γ_t − X_{t−1})`.
    PureNoiseFeedback,
    /// `X_t = A_t X_{t−1} + f(σ̄ + γ_t − X_{t−1})`, target optional.
    Nonlinear,
    /// `X_t = A_t X_{t−1} + ℰ_t(X̄_{t−1} − X_{t−1} + γ_t)`.
    Average,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Base => "base",
            Family::NoisyFeedback => "noisy_feedback",
            Family::PureNoiseFeedback => "pure_noise_feedback",
            Family::Nonlinear => "nonlinear",
            Family::Average => "average",
        }
    }
}

/// Everything needed to run one model.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub family: Family,
    pub weights: MatrixSchedule,
    pub rates: RateSchedule,
    /// Consensus target `σ̄`.
    pub target: Option<f64>,
    pub noise: NoiseProcess,
    /// Nonlinear family only.
    pub response: Option<Response>,
    pub x0: StateVector,
}

impl ModelSpec {
    pub fn n(&self) -> usize {
        self.x0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let dims = [
            ("weights", self.weights.dim()),
            ("rates", self.rates.dim()),
            ("noise", self.noise.dim()),
        ];
        for (what, d) in dims {
            if d != n {
                return Err(Error::InvalidModel(format!(
                    "{what} dimension {d} does not match x0 dimension {n}"
                )));
            }
        }
        let invalid = |msg: &str| Err(Error::InvalidModel(format!("{}: {msg}", self.family.name())));
        match self.family {
            Family::Base | Family::NoisyFeedback if self.target.is_none() => {
                return invalid("requires a consensus target")
            }
            Family::PureNoiseFeedback | Family::Average if self.target.is_some() => {
                return invalid("has no consensus target")
            }
            _ => {}
        }
        if self.family == Family::Base && !self.noise.is_zero() {
            return invalid("is noiseless; use noisy_feedback for noise");
        }
        match (self.family, &self.response) {
            (Family::Nonlinear, None) => return invalid("requires a response"),
            (Family::Nonlinear, Some(Response::Smooth(fs))) if fs.len() != 1 && fs.len() != n => {
                return invalid("needs one shared learning function or one per agent")
            }
            (Family::Nonlinear, _) => {}
            (_, Some(_)) => return invalid("does not take a nonlinear response"),
            _ => {}
        }
        Ok(())
    }

    /// One transition `X_{t−1} → X_t`, written into `out`. Returns the
    /// step's contraction factor and whether `δ(B_t)` vanished.
    fn advance(
        &self,
        t: usize,
        x: &[f64],
        stream: &mut crate::noise::Substream,
        scratch: &mut Scratch,
        out: &mut Vec<f64>,
    ) -> Result<(Option<f64>, bool)> {
        let a = self.weights.at(t)?;
        let eps = self.rates.at_in(t, &mut scratch.rates)?;
        self.noise.sample_into(t, stream, &mut scratch.gamma)?;
        let gamma = &scratch.gamma[..];
        Ok(match self.family {
            Family::Base => {
                let target = self.target.expect("validated");
                step::step_base_into(&a, eps, target, x, out);
                (Some(contraction_factor(&a, eps)), false)
            }
            Family::NoisyFeedback => {
                let target = self.target.expect("validated");
                step::step_noisy_into(&a, eps, target, gamma, x, out);
                (Some(contraction_factor(&a, eps)), false)
            }
            Family::PureNoiseFeedback => {
                step::step_pure_noise_into(&a, eps, gamma, x, out);
                (Some(contraction_factor(&a, eps)), false)
            }
            Family::Nonlinear => {
                let response = self.response.as_ref().expect("validated");
                let rho = match response {
                    Response::Smooth(fs) => Some(learning::endpoint_rho(fs, &a)),
                    Response::Sign => None,
                };
                step::step_nonlinear_into(&a, response, Some(eps), self.target, gamma, x, out);
                (rho, false)
            }
            Family::Average => {
                let b = averaging_map(&a, eps);
                let delta = dobrushin(b.matrix());
                step::step_averaged_into(b.matrix(), eps, gamma, x, out);
                (Some(delta), delta <= ZERO_DOBRUSHIN_TOL)
            }
        })
    }
}

/// Buffers reused across the steps of one run.
struct Scratch {
    rates: LearningRates,
    gamma: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self {
            rates: LearningRates::zeros(n),
            gamma: Vec::with_capacity(n),
        }
    }
}

/// Per-step record aligned with the state at the same `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub t: usize,
    /// `|X_t − σ̄ 𝟙|_∞` when the family has a target.
    pub err_inf: Option<f64>,
    pub osc: f64,
    /// Contraction factor of the transition into `t`: `ρ_t` for the
    /// targeted and pure-noise families, the endpoint `ρ_t` for smooth
    /// nonlinear responses, `δ(B_t)` for the average family.
    pub rho: Option<f64>,
}

/// Which states a simulation keeps.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum Retention {
    #[default]
    Full,
    TerminalOnly,
    /// Terminal state plus these times.
    Checkpoints(Vec<usize>),
}

#[derive(Clone, Debug, Default)]
pub struct SimOptions {
    pub retention: Retention,
    /// Record [`StepDiagnostics`] for every step.
    pub diagnostics: bool,
}

impl SimOptions {
    pub fn full() -> Self {
        Self {
            retention: Retention::Full,
            diagnostics: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub horizon: usize,
    /// Times of the retained states, ascending.
    pub times: Vec<usize>,
    pub states: Vec<StateVector>,
    /// Empty unless diagnostics were requested; otherwise `horizon + 1`
    /// records starting at `t = 0`.
    pub diagnostics: Vec<StepDiagnostics>,
    pub target: Option<f64>,
    /// Steps with `δ(B_t) = 0` (average family only).
    pub zero_dobrushin_steps: usize,
}

impl Trajectory {
    pub fn terminal(&self) -> &StateVector {
        self.states
            .last()
            .expect("trajectory always holds its terminal state")
    }

    pub fn state_at(&self, t: usize) -> Option<&StateVector> {
        self.times.binary_search(&t).ok().map(|i| &self.states[i])
    }

    /// True when every time `0..=horizon` is retained.
    pub fn is_full(&self) -> bool {
        self.states.len() == self.horizon + 1
    }
}

fn diagnostics_for(t: usize, x: &[f64], target: Option<f64>, rho: Option<f64>) -> StepDiagnostics {
    StepDiagnostics {
        t,
        err_inf: target.map(|s| inf_norm(&x.iter().map(|v| v - s).collect::<Vec<_>>())),
        osc: oscillation(x),
        rho,
    }
}

/// Runs `spec` for `horizon` steps on the stream of run 0 under `seed`,
/// keeping every state and diagnostic.
pub fn simulate(spec: &ModelSpec, horizon: usize, seed: u64) -> Result<Trajectory> {
    simulate_run(spec, horizon, seed, 0, &SimOptions::full())
}

/// Runs `spec` on the stream of `run` under `master_seed`.
pub fn simulate_run(
    spec: &ModelSpec,
    horizon: usize,
    master_seed: u64,
    run: u64,
    options: &SimOptions,
) -> Result<Trajectory> {
    spec.validate()?;
    let mut stream = substream(master_seed, run);
    let keep = |t: usize| match &options.retention {
        Retention::Full => true,
        Retention::TerminalOnly => t == horizon,
        Retention::Checkpoints(ts) => t == horizon || ts.contains(&t),
    };
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut diagnostics = Vec::new();
    let mut zero_dobrushin_steps = 0;

    let mut x = spec.x0.clone();
    let mut next = Vec::with_capacity(spec.n());
    let mut scratch = Scratch::new(spec.n());
    if keep(0) {
        times.push(0);
        states.push(x.clone());
    }
    if options.diagnostics {
        diagnostics.reserve(horizon + 1);
        diagnostics.push(diagnostics_for(0, &x, spec.target, None));
    }
    for t in 1..=horizon {
        let (rho, zero_delta) = spec.advance(t, &x, &mut stream, &mut scratch, &mut next)?;
        x.swap_buffer(&mut next);
        zero_dobrushin_steps += usize::from(zero_delta);
        if options.diagnostics {
            diagnostics.push(diagnostics_for(t, &x, spec.target, rho));
        }
        if keep(t) {
            times.push(t);
            states.push(x.clone());
        }
    }
    Ok(Trajectory {
        horizon,
        times,
        states,
        diagnostics,
        target: spec.target,
        zero_dobrushin_steps,
    })
}

#[derive(Clone, Debug, Default)]
pub struct EnsembleOptions {
    /// Worker threads; `None` uses the global pool. Never affects results.
    pub threads: Option<usize>,
    /// Extra times at which every member's state is recorded.
    pub checkpoints: Vec<usize>,
}

/// States of `m` independent runs at the horizon and at checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSample {
    pub horizon: usize,
    pub master_seed: u64,
    pub terminal: Vec<StateVector>,
    pub snapshots: BTreeMap<usize, Vec<StateVector>>,
}

impl EnsembleSample {
    pub fn size(&self) -> usize {
        self.terminal.len()
    }

    pub fn dim(&self) -> usize {
        self.terminal.first().map_or(0, |x| x.len())
    }

    /// Member states at `t` (the horizon or a checkpoint).
    pub fn states_at(&self, t: usize) -> Option<&[StateVector]> {
        if t == self.horizon {
            Some(&self.terminal)
        } else {
            self.snapshots.get(&t).map(Vec::as_slice)
        }
    }

    pub fn sample_at(&self, t: usize) -> Option<EmpiricalSample> {
        self.states_at(t).map(|states| EmpiricalSample {
            n: self.dim(),
            points: states.iter().map(|s| s.to_vec()).collect(),
            t_final: t,
            centered_scaled: false,
        })
    }
}

/// `m` runs with streams `(master_seed, 0..m)`. Results are identical for
/// any thread count.
pub fn simulate_ensemble(
    spec: &ModelSpec,
    horizon: usize,
    m: usize,
    master_seed: u64,
    options: &EnsembleOptions,
) -> Result<EnsembleSample> {
    if m == 0 {
        return Err(Error::InsufficientSample { needed: 1, got: 0 });
    }
    spec.validate()?;
    let mut checkpoints: Vec<usize> = options
        .checkpoints
        .iter()
        .copied()
        .filter(|&t| t < horizon)
        .collect();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    let sim = SimOptions {
        retention: Retention::Checkpoints(checkpoints.clone()),
        diagnostics: false,
    };
    let run_all = || {
        (0..m as u64)
            .into_par_iter()
            .map(|run| simulate_run(spec, horizon, master_seed, run, &sim))
            .collect::<Result<Vec<Trajectory>>>()
    };
    let runs = match options.threads {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .map_err(|e| Error::InvalidModel(format!("thread pool: {e}")))?
            .install(run_all)?,
        None => run_all()?,
    };

    let mut snapshots: BTreeMap<usize, Vec<StateVector>> =
        checkpoints.iter().map(|&t| (t, Vec::with_capacity(m))).collect();
    let mut terminal = Vec::with_capacity(m);
    for traj in runs {
        for (&t, bucket) in snapshots.iter_mut() {
            bucket.push(traj.state_at(t).expect("checkpoint retained").clone());
        }
        terminal.push(traj.terminal().clone());
    }
    Ok(EnsembleSample {
        horizon,
        master_seed,
        terminal,
        snapshots,
    })
}
