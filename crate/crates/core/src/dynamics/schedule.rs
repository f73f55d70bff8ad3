//! Time-indexed generators for the weights matrices `A_t` and learning rates
//! `ℰ_t`. Time starts at `t = 1`.

use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::matrix::{LearningRates, Matrix, StochasticMatrix};
use crate::noise::EpsilonOscillator;

type MatrixFn = dyn Fn(usize) -> Result<StochasticMatrix> + Send + Sync;
type RatesFn = dyn Fn(usize) -> Result<LearningRates> + Send + Sync;

#[derive(Clone)]
pub enum MatrixSchedule {
    Constant(StochasticMatrix),
    /// Entry `t − 1` is `A_t`; querying past the end is an error.
    Table(Vec<StochasticMatrix>),
    /// `A_t = end + rate^t (start − end)`, a convex combination for
    /// `0 ≤ rate ≤ 1`.
    Converging {
        start: StochasticMatrix,
        end: StochasticMatrix,
        rate: f64,
    },
    Custom {
        n: usize,
        f: Arc<MatrixFn>,
    },
}

impl fmt::Debug for MatrixSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(a) => f.debug_tuple("Constant").field(a).finish(),
            Self::Table(v) => write!(f, "Table(len = {})", v.len()),
            Self::Converging { rate, .. } => write!(f, "Converging(rate = {rate})"),
            Self::Custom { n, .. } => write!(f, "Custom(n = {n})"),
        }
    }
}

impl MatrixSchedule {
    pub fn dim(&self) -> usize {
        match self {
            Self::Constant(a) => a.dim(),
            Self::Table(v) => v.first().map_or(0, |a| a.dim()),
            Self::Converging { start, .. } => start.dim(),
            Self::Custom { n, .. } => *n,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Self::Constant(_))
    }

    pub fn at(&self, t: usize) -> Result<Cow<'_, StochasticMatrix>> {
        match self {
            Self::Constant(a) => Ok(Cow::Borrowed(a)),
            Self::Table(v) => match t.checked_sub(1).and_then(|i| v.get(i)) {
                Some(a) => Ok(Cow::Borrowed(a)),
                None => Err(Error::Schedule {
                    t,
                    reason: format!("matrix table has {} entries", v.len()),
                }),
            },
            Self::Converging { start, end, rate } => {
                let w = rate.powi(t as i32);
                let m = end.matrix().add(&start.matrix().sub(end.matrix()).scale(w));
                StochasticMatrix::new(m)
                    .map(Cow::Owned)
                    .map_err(|e| Error::Schedule {
                        t,
                        reason: e.to_string(),
                    })
            }
            Self::Custom { f, .. } => f(t).map(Cow::Owned).map_err(|e| match e {
                e @ Error::Schedule { .. } => e,
                e => Error::Schedule {
                    t,
                    reason: e.to_string(),
                },
            }),
        }
    }
}

impl From<StochasticMatrix> for MatrixSchedule {
    fn from(a: StochasticMatrix) -> Self {
        Self::Constant(a)
    }
}

#[derive(Clone)]
pub enum RateSchedule {
    Constant(LearningRates),
    /// Entry `t − 1` is `ℰ_t`.
    Table(Vec<LearningRates>),
    /// Every agent follows the same oscillating sequence, materialized up to
    /// a fixed horizon.
    Oscillator {
        n: usize,
        oscillator: EpsilonOscillator,
        values: Arc<Vec<f64>>,
    },
    /// `ε_t = 1/(t + 1)` for every agent; with `A = I` this gives
    /// `ρ_t = t/(t + 1)`.
    RhoHarmonic {
        n: usize,
    },
    /// `ε_t = 1 − exp(−1/t²)` for every agent; with `A = I` this gives
    /// `ρ_t = exp(−1/t²)`.
    RhoExp {
        n: usize,
    },
    /// `ε_t = base + amplitude · t^-exponent`.
    PowerDecay {
        base: LearningRates,
        amplitude: f64,
        exponent: f64,
    },
    Custom {
        n: usize,
        f: Arc<RatesFn>,
    },
}

impl fmt::Debug for RateSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(e) => f.debug_tuple("Constant").field(e).finish(),
            Self::Table(v) => write!(f, "Table(len = {})", v.len()),
            Self::Oscillator { n, values, .. } => {
                write!(f, "Oscillator(n = {n}, horizon = {})", values.len())
            }
            Self::RhoHarmonic { n } => write!(f, "RhoHarmonic(n = {n})"),
            Self::RhoExp { n } => write!(f, "RhoExp(n = {n})"),
            Self::PowerDecay {
                amplitude, exponent, ..
            } => write!(f, "PowerDecay({amplitude} t^-{exponent})"),
            Self::Custom { n, .. } => write!(f, "Custom(n = {n})"),
        }
    }
}

impl RateSchedule {
    pub fn oscillator(n: usize, oscillator: EpsilonOscillator, horizon: usize) -> Result<Self> {
        oscillator.validate()?;
        Ok(Self::Oscillator {
            n,
            oscillator,
            values: Arc::new(oscillator.sequence(horizon)),
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Constant(e) => e.len(),
            Self::Table(v) => v.first().map_or(0, |e| e.len()),
            Self::Oscillator { n, .. }
            | Self::RhoHarmonic { n }
            | Self::RhoExp { n }
            | Self::Custom { n, .. } => *n,
            Self::PowerDecay { base, .. } => base.len(),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Self::Constant(_))
    }

    pub fn at(&self, t: usize) -> Result<Cow<'_, LearningRates>> {
        let uniform = |n: usize, v: f64| Ok(Cow::Owned(LearningRates::uniform(n, v)));
        match self {
            Self::Constant(e) => Ok(Cow::Borrowed(e)),
            Self::Table(v) => match t.checked_sub(1).and_then(|i| v.get(i)) {
                Some(e) => Ok(Cow::Borrowed(e)),
                None => Err(Error::Schedule {
                    t,
                    reason: format!("rate table has {} entries", v.len()),
                }),
            },
            Self::Oscillator { n, values, .. } => match t.checked_sub(1).and_then(|i| values.get(i)) {
                Some(&e) => uniform(*n, e),
                None => Err(Error::Schedule {
                    t,
                    reason: format!("oscillator materialized to t = {}", values.len()),
                }),
            },
            Self::RhoHarmonic { n } => uniform(*n, 1.0 / (t as f64 + 1.0)),
            Self::RhoExp { n } => uniform(*n, -(-1.0 / (t as f64).powi(2)).exp_m1()),
            Self::PowerDecay {
                base,
                amplitude,
                exponent,
            } => {
                let shift = amplitude * (t as f64).powf(-exponent);
                Ok(Cow::Owned(LearningRates::new(
                    base.iter().map(|b| b + shift).collect(),
                )?))
            }
            Self::Custom { f, .. } => f(t).map(Cow::Owned),
        }
    }

    /// As [`at`](Self::at), but generated schedules write into `scratch`
    /// instead of allocating.
    pub(crate) fn at_in<'a>(&'a self, t: usize, scratch: &'a mut LearningRates) -> Result<&'a LearningRates> {
        match self {
            Self::Oscillator { n, values, .. } => match t.checked_sub(1).and_then(|i| values.get(i)) {
                Some(&e) => scratch.fill_uniform(*n, e),
                None => return self.at(t).map(|_| &*scratch),
            },
            Self::RhoHarmonic { n } => scratch.fill_uniform(*n, 1.0 / (t as f64 + 1.0)),
            Self::RhoExp { n } => scratch.fill_uniform(*n, -(-1.0 / (t as f64).powi(2)).exp_m1()),
            Self::PowerDecay {
                base,
                amplitude,
                exponent,
            } => {
                let shift = amplitude * (t as f64).powf(-exponent);
                scratch.fill_with(base.iter().map(|b| b + shift));
                if let Some(index) = scratch.iter().position(|x| !x.is_finite()) {
                    return Err(Error::NonFinite { index });
                }
            }
            Self::Constant(e) => return Ok(e),
            Self::Table(_) | Self::Custom { .. } => match self.at(t)? {
                Cow::Borrowed(e) => return Ok(e),
                Cow::Owned(e) => *scratch = e,
            },
        }
        Ok(scratch)
    }
}

impl From<LearningRates> for RateSchedule {
    fn from(e: LearningRates) -> Self {
        Self::Constant(e)
    }
}

/// `|A_t − A_{t−1}|_∞ + |ℰ_t − ℰ_{t−1}|_∞` for `t ≥ 2`.
pub fn schedule_variation(weights: &MatrixSchedule, rates: &RateSchedule, t: usize) -> Result<f64> {
    debug_assert!(t >= 2);
    let da = crate::matrix::matrix_inf_norm(&weights.at(t)?.matrix().sub(weights.at(t - 1)?.matrix()));
    let e1 = rates.at(t)?;
    let e0 = rates.at(t - 1)?;
    let de = e1
        .iter()
        .zip(e0.iter())
        .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()));
    Ok(da + de)
}

/// Materializes `A_1, …, A_T` as plain matrices.
pub fn materialize(weights: &MatrixSchedule, horizon: usize) -> Result<Vec<Matrix>> {
    (1..=horizon)
        .map(|t| weights.at(t).map(|a| a.matrix().clone()))
        .collect()
}
