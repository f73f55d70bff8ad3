//! Declarative scenario files and their compilation into runnable models.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::conditions::{Grid, RateBound, LL1_BOUND, PRODUCT_TOL, SUMMABILITY_TOL};
use crate::dynamics::{Family, LearningFunction, MatrixSchedule, ModelSpec, RateSchedule, Response};
use crate::error::{Error, Result};
use crate::matrix::{LearningRates, StateVector, StochasticMatrix};
use crate::noise::{EpsilonOscillator, NoiseSpec};
use crate::stats::{DRIFT_FLOOR, RANK_ONE_TOL};

pub const SCHEMA_VERSION: u32 = 1;

/// Names accepted in `{"generator": {"name": …}}` schedule expressions.
pub const KNOWN_GENERATORS: [&str; 5] = [
    "epsilon_oscillator",
    "rho_harmonic",
    "rho_exp",
    "power_decay",
    "converging",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub id: String,
    #[serde(default)]
    pub description: String,
    pub model: ModelDecl,
    pub horizon: usize,
    #[serde(default)]
    pub ensemble: Option<EnsembleDecl>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub checks: Vec<Check>,
    #[serde(default)]
    pub analyses: Vec<Analysis>,
    /// Predicates over the run summary, asserted by `reproduce`.
    #[serde(default)]
    pub acceptance: Vec<Predicate>,
    #[serde(default)]
    pub outputs: Outputs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDecl {
    pub family: Family,
    pub weights: WeightsExpr,
    pub rates: RatesExpr,
    #[serde(default)]
    pub target: Option<f64>,
    #[serde(default = "NoiseSpec::zero")]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub response: Option<ResponseDecl>,
    pub x0: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightsExpr {
    Constant(Vec<Vec<f64>>),
    /// Entry `t − 1` is `A_t`.
    Table(Vec<Vec<Vec<f64>>>),
    Generator(GeneratorExpr),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RatesExpr {
    Constant(Vec<f64>),
    /// Entry `t − 1` is `ℰ_t`.
    Table(Vec<Vec<f64>>),
    Generator(GeneratorExpr),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorExpr {
    pub name: String,
    #[serde(default)]
    pub params: Map<String, Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionDecl {
    Linear {
        rate: f64,
    },
    /// `amplitude · tanh(gain · u)`; derivative bounds declared over
    /// `domain` (the whole line when absent).
    Tanh {
        amplitude: f64,
        gain: f64,
        #[serde(default)]
        domain: Option<[f64; 2]>,
    },
    Arctan {
        amplitude: f64,
        gain: f64,
        #[serde(default)]
        domain: Option<[f64; 2]>,
    },
    /// `ℰ_t · sign(u)`.
    Sign,
}

/// One shared response or one per agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ResponseDecl {
    Shared(FunctionDecl),
    PerAgent(Vec<FunctionDecl>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleDecl {
    pub size: usize,
    /// Extra times at which member states are kept.
    #[serde(default)]
    pub checkpoints: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default = "Outputs::default_trajectory")]
    pub trajectory: String,
    #[serde(default = "Outputs::default_ensemble")]
    pub ensemble: String,
    #[serde(default = "Outputs::default_summary")]
    pub summary: String,
}

impl Outputs {
    fn default_trajectory() -> String {
        "trajectory.csv".into()
    }
    fn default_ensemble() -> String {
        "ensemble.csv".into()
    }
    fn default_summary() -> String {
        "summary.json".into()
    }
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            trajectory: Self::default_trajectory(),
            ensemble: Self::default_ensemble(),
            summary: Self::default_summary(),
        }
    }
}

fn product_tol() -> f64 {
    PRODUCT_TOL
}
fn ll1_bound() -> f64 {
    LL1_BOUND
}
fn summability_tol() -> f64 {
    SUMMABILITY_TOL
}
fn drift_floor() -> f64 {
    DRIFT_FLOOR
}
fn envelope_slack() -> f64 {
    1e-12
}
fn rank_one_tol() -> f64 {
    RANK_ONE_TOL
}
fn product_tol_rows() -> f64 {
    1e-10
}
fn alpha() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Check {
    BaseRates,
    BaseRatesWeighted {
        beta: Vec<f64>,
        delta: f64,
    },
    AverageRates {
        #[serde(default)]
        mode: RateBound,
    },
    ProductToZero {
        #[serde(default = "product_tol")]
        product_tol: f64,
    },
    Ll1 {
        #[serde(default = "ll1_bound")]
        bound: f64,
    },
    Ll1b {
        #[serde(default = "summability_tol")]
        summability_tol: f64,
    },
    NonlinearBounds {
        #[serde(default)]
        grid: Option<Grid>,
    },
}

impl Check {
    pub fn name(&self) -> &'static str {
        match self {
            Check::BaseRates => "base_rates",
            Check::BaseRatesWeighted { .. } => "base_rates_weighted",
            Check::AverageRates { .. } => "average_rates",
            Check::ProductToZero { .. } => "product_to_zero",
            Check::Ll1 { .. } => "ll1",
            Check::Ll1b { .. } => "ll1b",
            Check::NonlinearBounds { .. } => "nonlinear_bounds",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KsReference {
    Normal {
        mean: f64,
        sd: f64,
    },
    Cauchy {
        #[serde(default)]
        location: f64,
        scale: f64,
    },
    /// Normal with the sample's own mean and standard deviation.
    BestFitNormal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Analysis {
    /// First time within `tol` of the target, or of consensus when the
    /// model has no target or `endogenous` is set.
    ConsensusTime {
        tol: f64,
        #[serde(default)]
        endogenous: bool,
    },
    Periodicity {
        max_period: usize,
        tol: f64,
    },
    /// Per-step contraction of the error (or oscillation) by the recorded
    /// contraction factor.
    Envelope {
        #[serde(default = "envelope_slack")]
        slack: f64,
    },
    Moments {
        #[serde(default)]
        t: Option<usize>,
    },
    /// Ensemble mean of `|X_t − σ̄ 𝟙|_∞` at each time.
    MeanError {
        times: Vec<usize>,
    },
    Drift {
        times: Vec<usize>,
        #[serde(default = "drift_floor")]
        floor: f64,
    },
    Ks {
        #[serde(default)]
        t: Option<usize>,
        #[serde(default)]
        coordinate: usize,
        reference: KsReference,
        #[serde(default = "alpha")]
        alpha: f64,
    },
    ProductLimit {
        #[serde(default)]
        t_max: Option<usize>,
        #[serde(default = "product_tol_rows")]
        tol: f64,
    },
    Clt {
        #[serde(default)]
        t: Option<usize>,
        /// Noise covariance; taken from the noise model when absent.
        #[serde(default)]
        sigma: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        t_max: Option<usize>,
        #[serde(default = "rank_one_tol")]
        tol: f64,
    },
    RankOne {
        #[serde(default)]
        t: Option<usize>,
    },
}

impl Analysis {
    pub fn name(&self) -> &'static str {
        match self {
            Analysis::ConsensusTime { .. } => "consensus_time",
            Analysis::Periodicity { .. } => "periodicity",
            Analysis::Envelope { .. } => "envelope",
            Analysis::Moments { .. } => "moments",
            Analysis::MeanError { .. } => "mean_error",
            Analysis::Drift { .. } => "drift",
            Analysis::Ks { .. } => "ks",
            Analysis::ProductLimit { .. } => "product_limit",
            Analysis::Clt { .. } => "clt",
            Analysis::RankOne { .. } => "rank_one",
        }
    }

    pub fn needs_ensemble(&self) -> bool {
        matches!(
            self,
            Analysis::Moments { .. }
                | Analysis::MeanError { .. }
                | Analysis::Drift { .. }
                | Analysis::Ks { .. }
                | Analysis::Clt { .. }
                | Analysis::RankOne { .. }
        )
    }

    /// Ensemble times this analysis reads, other than the horizon.
    pub fn sample_times(&self) -> Vec<usize> {
        match self {
            Analysis::Moments { t }
            | Analysis::Ks { t, .. }
            | Analysis::Clt { t, .. }
            | Analysis::RankOne { t } => t.iter().copied().collect(),
            Analysis::MeanError { times } | Analysis::Drift { times, .. } => times.clone(),
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    /// `|actual − value| ≤ tol`.
    Approx,
    True,
    False,
    Null,
    NotNull,
}

/// Assertion on one value of the run summary, addressed by JSON pointer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Predicate {
    pub pointer: String,
    pub op: Op,
    #[serde(default)]
    pub value: Option<Value>,
    #[serde(default)]
    pub tol: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PredicateResult {
    pub pointer: String,
    pub op: Op,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected: Option<Value>,
    pub actual: Value,
    pub passed: bool,
}

impl Predicate {
    pub fn evaluate(&self, summary: &Value) -> PredicateResult {
        let actual = summary.pointer(&self.pointer).cloned().unwrap_or(Value::Null);
        let num = |v: &Value| v.as_f64();
        let expected = self.value.as_ref().and_then(num);
        let got = num(&actual);
        let cmp = |f: fn(f64, f64) -> bool| matches!((got, expected), (Some(a), Some(b)) if f(a, b));
        let passed = match self.op {
            Op::Lt => cmp(|a, b| a < b),
            Op::Le => cmp(|a, b| a <= b),
            Op::Gt => cmp(|a, b| a > b),
            Op::Ge => cmp(|a, b| a >= b),
            Op::Eq => match (got, expected) {
                (Some(a), Some(b)) => a == b,
                _ => self.value.as_ref() == Some(&actual),
            },
            Op::Approx => match (got, expected) {
                (Some(a), Some(b)) => (a - b).abs() <= self.tol.unwrap_or(0.0),
                _ => false,
            },
            Op::True => actual == Value::Bool(true),
            Op::False => actual == Value::Bool(false),
            Op::Null => actual.is_null(),
            Op::NotNull => !actual.is_null(),
        };
        PredicateResult {
            pointer: self.pointer.clone(),
            op: self.op,
            expected: self.value.clone(),
            actual,
            passed,
        }
    }
}

/// Command-line overrides applied before a run.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub horizon: Option<usize>,
    pub ensemble: Option<usize>,
    /// `(parameter, value)` pairs replacing same-named parameters in every
    /// check and analysis.
    pub tol: Vec<(String, f64)>,
}

impl Scenario {
    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.master_seed = seed;
        }
        if let Some(h) = o.horizon {
            self.horizon = h;
        }
        if let Some(m) = o.ensemble {
            match &mut self.ensemble {
                Some(e) => e.size = m,
                None => {
                    self.ensemble = Some(EnsembleDecl {
                        size: m,
                        checkpoints: Vec::new(),
                    })
                }
            }
        }
        for (key, value) in &o.tol {
            let mut hits = 0;
            let mut checks = serde_json::to_value(&self.checks)?;
            let mut analyses = serde_json::to_value(&self.analyses)?;
            for list in [&mut checks, &mut analyses] {
                for item in list.as_array_mut().into_iter().flatten() {
                    if let Some(slot) = item.get_mut(key.as_str()) {
                        *slot = Value::from(*value);
                        hits += 1;
                    }
                }
            }
            if hits == 0 {
                return Err(Error::InvalidScenario(format!(
                    "no check or analysis parameter named {key:?}"
                )));
            }
            self.checks = serde_json::from_value(checks)?;
            self.analyses = serde_json::from_value(analyses)?;
        }
        self.validate()
    }

    /// Checks everything the schema alone cannot express, including
    /// compiling the model.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidScenario(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.id.trim().is_empty() {
            return Err(Error::InvalidScenario("id must not be empty".into()));
        }
        if let Some(e) = &self.ensemble {
            if e.size == 0 {
                return Err(Error::InvalidScenario("ensemble size must be at least 1".into()));
            }
        }
        for a in &self.analyses {
            if a.needs_ensemble() && self.ensemble.is_none() {
                return Err(Error::InvalidScenario(format!(
                    "analysis {} needs an ensemble",
                    a.name()
                )));
            }
            if let Some(&t) = a.sample_times().iter().find(|&&t| t > self.horizon) {
                return Err(Error::InvalidScenario(format!(
                    "analysis {} samples t = {t} beyond horizon {}",
                    a.name(),
                    self.horizon
                )));
            }
        }
        self.model.compile(self.horizon)?;
        Ok(())
    }

    /// Ensemble checkpoints: declared ones plus every time an analysis reads.
    pub fn checkpoints(&self) -> Vec<usize> {
        let mut ts: Vec<usize> = self
            .ensemble
            .iter()
            .flat_map(|e| e.checkpoints.iter().copied())
            .chain(self.analyses.iter().flat_map(Analysis::sample_times))
            .filter(|&t| t < self.horizon)
            .collect();
        ts.sort_unstable();
        ts.dedup();
        ts
    }
}

fn params<T: serde::de::DeserializeOwned>(g: &GeneratorExpr) -> Result<T> {
    serde_json::from_value(Value::Object(g.params.clone()))
        .map_err(|e| Error::InvalidScenario(format!("generator {}: {e}", g.name)))
}

fn unknown_generator(name: &str) -> Error {
    Error::UnknownGenerator {
        name: name.to_string(),
        known: KNOWN_GENERATORS.join(", "),
    }
}

fn wrong_slot(name: &str, slot: &str) -> Error {
    Error::InvalidScenario(format!("generator {name} does not produce {slot}"))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NoParams {}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PowerDecayParams {
    base: Vec<f64>,
    amplitude: f64,
    exponent: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConvergingParams {
    start: Vec<Vec<f64>>,
    end: Vec<Vec<f64>>,
    rate: f64,
}

impl WeightsExpr {
    pub fn compile(&self) -> Result<MatrixSchedule> {
        Ok(match self {
            WeightsExpr::Constant(rows) => MatrixSchedule::Constant(StochasticMatrix::from_rows(rows)?),
            WeightsExpr::Table(ms) => {
                if ms.is_empty() {
                    return Err(Error::Empty("weights table"));
                }
                MatrixSchedule::Table(
                    ms.iter()
                        .map(|rows| StochasticMatrix::from_rows(rows))
                        .collect::<Result<_>>()?,
                )
            }
            WeightsExpr::Generator(g) => match g.name.as_str() {
                "converging" => {
                    let p: ConvergingParams = params(g)?;
                    if !(0.0..=1.0).contains(&p.rate) {
                        return Err(Error::InvalidScenario(format!(
                            "converging rate {} outside [0, 1]",
                            p.rate
                        )));
                    }
                    let start = StochasticMatrix::from_rows(&p.start)?;
                    let end = StochasticMatrix::from_rows(&p.end)?;
                    if start.dim() != end.dim() {
                        return Err(Error::Dimension {
                            expected: start.dim(),
                            found: end.dim(),
                        });
                    }
                    MatrixSchedule::Converging {
                        start,
                        end,
                        rate: p.rate,
                    }
                }
                name if KNOWN_GENERATORS.contains(&name) => return Err(wrong_slot(name, "weights")),
                name => return Err(unknown_generator(name)),
            },
        })
    }
}

impl RatesExpr {
    pub fn compile(&self, n: usize, horizon: usize) -> Result<RateSchedule> {
        Ok(match self {
            RatesExpr::Constant(e) => RateSchedule::Constant(LearningRates::new(e.clone())?),
            RatesExpr::Table(es) => {
                if es.is_empty() {
                    return Err(Error::Empty("rates table"));
                }
                RateSchedule::Table(
                    es.iter()
                        .map(|e| LearningRates::new(e.clone()))
                        .collect::<Result<_>>()?,
                )
            }
            RatesExpr::Generator(g) => match g.name.as_str() {
                "epsilon_oscillator" => {
                    let osc: EpsilonOscillator = params(g)?;
                    RateSchedule::oscillator(n, osc, horizon)?
                }
                "rho_harmonic" => {
                    params::<NoParams>(g)?;
                    RateSchedule::RhoHarmonic { n }
                }
                "rho_exp" => {
                    params::<NoParams>(g)?;
                    RateSchedule::RhoExp { n }
                }
                "power_decay" => {
                    let p: PowerDecayParams = params(g)?;
                    RateSchedule::PowerDecay {
                        base: LearningRates::new(p.base)?,
                        amplitude: p.amplitude,
                        exponent: p.exponent,
                    }
                }
                name if KNOWN_GENERATORS.contains(&name) => return Err(wrong_slot(name, "rates")),
                name => return Err(unknown_generator(name)),
            },
        })
    }
}

impl FunctionDecl {
    fn compile(&self) -> Result<Option<LearningFunction>> {
        let domain = |d: &Option<[f64; 2]>| d.map(|[lo, hi]| (lo, hi));
        Ok(Some(match self {
            FunctionDecl::Linear { rate } => LearningFunction::linear(*rate),
            FunctionDecl::Tanh {
                amplitude,
                gain,
                domain: d,
            } => LearningFunction::tanh(*amplitude, *gain, domain(d))?,
            FunctionDecl::Arctan {
                amplitude,
                gain,
                domain: d,
            } => LearningFunction::arctan(*amplitude, *gain, domain(d))?,
            FunctionDecl::Sign => return Ok(None),
        }))
    }
}

impl ResponseDecl {
    pub fn compile(&self) -> Result<Response> {
        let decls: &[FunctionDecl] = match self {
            ResponseDecl::Shared(f) => std::slice::from_ref(f),
            ResponseDecl::PerAgent(fs) => fs,
        };
        if decls.is_empty() {
            return Err(Error::Empty("response list"));
        }
        if decls.contains(&FunctionDecl::Sign) {
            if decls.len() != 1 {
                return Err(Error::InvalidScenario(
                    "sign response cannot be mixed with per-agent functions".into(),
                ));
            }
            return Ok(Response::Sign);
        }
        let fs = decls
            .iter()
            .map(|d| d.compile().map(|f| f.expect("sign handled above")))
            .collect::<Result<Vec<_>>>()?;
        Ok(Response::Smooth(fs))
    }
}

impl ModelDecl {
    pub fn n(&self) -> usize {
        self.x0.len()
    }

    /// Builds the model; oscillator schedules are materialized up to
    /// `horizon`.
    pub fn compile(&self, horizon: usize) -> Result<ModelSpec> {
        let n = self.n();
        if n == 0 {
            return Err(Error::Empty("x0"));
        }
        let spec = ModelSpec {
            family: self.family,
            weights: self.weights.compile()?,
            rates: self.rates.compile(n, horizon.max(1))?,
            target: self.target,
            noise: self.noise.compile(n)?,
            response: self.response.as_ref().map(ResponseDecl::compile).transpose()?,
            x0: StateVector::new(self.x0.clone())?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        let piece = match seg {
            Segment::Seq { index } => index.to_string(),
            Segment::Map { key } => key.replace('~', "~0").replace('/', "~1"),
            Segment::Enum { variant } => variant.clone(),
            Segment::Unknown => continue,
        };
        out.push('/');
        out.push_str(&piece);
    }
    out
}

/// Parses and validates a scenario from JSON text.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        pointer: json_pointer(e.path()),
        message: e.inner().to_string(),
    })?;
    scenario.validate()?;
    Ok(scenario)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    parse_scenario(&std::fs::read_to_string(path)?)
}
