//! Nonlinear learning functions `f` applied componentwise to the feedback
//! signal, with declared derivative bounds.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::matrix::StochasticMatrix;

type ScalarFn = dyn Fn(f64) -> f64 + Send + Sync;

/// Finite-difference spot-check tolerance for declared derivatives.
pub const DERIVATIVE_CHECK_TOL: f64 = 1e-5;

/// Smooth scalar response `f` with `f(0) = 0` and a declared range
/// `[deriv_inf, deriv_sup]` for `f′`.
#[derive(Clone)]
pub struct LearningFunction {
    label: String,
    eval: Arc<ScalarFn>,
    derivative: Arc<ScalarFn>,
    deriv_inf: f64,
    deriv_sup: f64,
    domain: Option<(f64, f64)>,
}

impl fmt::Debug for LearningFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LearningFunction")
            .field("label", &self.label)
            .field("deriv_inf", &self.deriv_inf)
            .field("deriv_sup", &self.deriv_sup)
            .field("domain", &self.domain)
            .finish()
    }
}

impl LearningFunction {
    /// Builds a learning function, checking `f(0) = 0` exactly and spot
    /// checking `derivative` against central differences of `eval`.
    ///
    /// `domain` restricts where the declared bounds are claimed to hold;
    /// `None` means the whole real line.
    pub fn new<F, D>(
        label: impl Into<String>,
        eval: F,
        derivative: D,
        deriv_inf: f64,
        deriv_sup: f64,
        domain: Option<(f64, f64)>,
    ) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let label = label.into();
        if eval(0.0) != 0.0 {
            return Err(Error::InvalidLearningFunction(format!(
                "{label}: f(0) = {} (must be exactly 0)",
                eval(0.0)
            )));
        }
        if !(deriv_inf <= deriv_sup) {
            return Err(Error::InvalidLearningFunction(format!(
                "{label}: declared inf {deriv_inf} exceeds sup {deriv_sup}"
            )));
        }
        if let Some((lo, hi)) = domain {
            if !(lo < hi) {
                return Err(Error::InvalidLearningFunction(format!(
                    "{label}: empty domain [{lo}, {hi}]"
                )));
            }
        }
        let (lo, hi) = domain.unwrap_or((-10.0, 10.0));
        let h = 1e-5;
        for k in 0..=100 {
            let x = lo + (hi - lo) * k as f64 / 100.0;
            let fd = (eval(x + h) - eval(x - h)) / (2.0 * h);
            let d = derivative(x);
            if (fd - d).abs() > DERIVATIVE_CHECK_TOL * d.abs().max(1.0) {
                return Err(Error::InvalidLearningFunction(format!(
                    "{label}: derivative {d} disagrees with finite difference {fd} at {x}"
                )));
            }
        }
        Ok(Self {
            label,
            eval: Arc::new(eval),
            derivative: Arc::new(derivative),
            deriv_inf,
            deriv_sup,
            domain,
        })
    }

    /// `f(u) = rate · u`.
    pub fn linear(rate: f64) -> Self {
        Self::new(
            format!("linear({rate})"),
            move |u| rate * u,
            move |_| rate,
            rate,
            rate,
            None,
        )
        .expect("linear learning function is always valid")
    }

    /// `f(u) = amplitude · tanh(gain · u)`, bounds declared over `domain`.
    pub fn tanh(amplitude: f64, gain: f64, domain: Option<(f64, f64)>) -> Result<Self> {
        let d = move |u: f64| {
            let c = (gain * u).cosh();
            amplitude * gain / (c * c)
        };
        let (inf, sup) = even_bounds(d, amplitude * gain, domain);
        Self::new(
            format!("tanh({amplitude}, {gain})"),
            move |u| amplitude * (gain * u).tanh(),
            d,
            inf,
            sup,
            domain,
        )
    }

    /// `f(u) = amplitude · atan(gain · u)`, bounds declared over `domain`.
    pub fn arctan(amplitude: f64, gain: f64, domain: Option<(f64, f64)>) -> Result<Self> {
        let d = move |u: f64| amplitude * gain / (1.0 + (gain * u).powi(2));
        let (inf, sup) = even_bounds(d, amplitude * gain, domain);
        Self::new(
            format!("arctan({amplitude}, {gain})"),
            move |u| amplitude * (gain * u).atan(),
            d,
            inf,
            sup,
            domain,
        )
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        (self.eval)(u)
    }

    #[inline]
    pub fn derivative(&self, u: f64) -> f64 {
        (self.derivative)(u)
    }

    pub fn deriv_inf(&self) -> f64 {
        self.deriv_inf
    }

    pub fn deriv_sup(&self) -> f64 {
        self.deriv_sup
    }

    pub fn domain(&self) -> Option<(f64, f64)> {
        self.domain
    }
}

/// Bounds of a positive derivative that is even and decreasing in `|u|`,
/// peaking at `peak` when `u = 0`.
fn even_bounds(d: impl Fn(f64) -> f64, peak: f64, domain: Option<(f64, f64)>) -> (f64, f64) {
    match domain {
        None => (0.0, peak),
        Some((lo, hi)) => {
            let far = if lo.abs() > hi.abs() { lo } else { hi };
            let near = if lo <= 0.0 && hi >= 0.0 {
                0.0
            } else if lo.abs() < hi.abs() {
                lo
            } else {
                hi
            };
            (d(far), d(near))
        }
    }
}

/// Feedback response of the nonlinear family.
#[derive(Clone, Debug)]
pub enum Response {
    /// One function shared by all agents, or one per agent.
    Smooth(Vec<LearningFunction>),
    /// `ℰ_t · sign(·)`; discontinuous, so it carries no derivative bounds.
    Sign,
}

impl Response {
    pub fn shared(f: LearningFunction) -> Self {
        Self::Smooth(vec![f])
    }

    /// The function used by agent `i`.
    pub fn function(&self, i: usize) -> Option<&LearningFunction> {
        match self {
            Self::Smooth(fs) if fs.len() == 1 => fs.first(),
            Self::Smooth(fs) => fs.get(i),
            Self::Sign => None,
        }
    }
}

/// `max_i max_{d ∈ {inf f′_i, sup f′_i}} (|a_ii − d| + 1 − a_ii)`.
///
/// `|a − d|` is convex in `d`, so the supremum over the declared range is
/// attained at one of its endpoints.
pub(crate) fn endpoint_rho(fs: &[LearningFunction], a: &StochasticMatrix) -> f64 {
    let pick = |i: usize| if fs.len() == 1 { &fs[0] } else { &fs[i] };
    (0..a.dim())
        .map(|i| {
            let aii = a.get(i, i);
            let f = pick(i);
            let worst = (aii - f.deriv_inf()).abs().max((aii - f.deriv_sup()).abs());
            crate::matrix::diagonal_rho(aii, worst)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}
