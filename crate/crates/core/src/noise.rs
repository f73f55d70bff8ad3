//! Seeded noise processes and special learning-rate schedules.
//!
//! Randomness is counter-addressable: a run's stream is a ChaCha8 key
//! derived from the master seed with the run index as the stream id, and
//! every step `t` owns a fixed block of `4n` 32-bit words starting at word
//! `4n(t − 1)`. Component `c` of step `t` reads the two 64-bit values at the
//! start of its slot, so any single draw can be reproduced from
//! `(master_seed, run, t, component)` without replaying the run.
//!
//! Transforms of the uniforms (documented so that ports can match
//! distributionally):
//!
//! - uniform on the open interval `(0, 1)`: `((u >> 11) + ½) · 2^-53`;
//! - Gaussian: Box–Muller cosine branch, `√(−2 ln u₁) · cos(2π u₂)`;
//! - Cauchy: inverse CDF `scale · tan(π(u₁ − ½))`;
//! - Rademacher: `+1` when the top bit of the first word is set, else `−1`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

const WORDS_PER_COMPONENT: u128 = 4;

/// Independent, reproducible random stream for one run.
#[derive(Clone, Debug)]
pub struct Substream {
    rng: ChaCha8Rng,
}

/// The stream of run `run` under `master_seed`.
pub fn substream(master_seed: u64, run: u64) -> Substream {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(run);
    Substream { rng }
}

impl Substream {
    fn seek(&mut self, t: usize, n: usize, component: usize) {
        let pos = WORDS_PER_COMPONENT * ((t as u128 - 1) * n as u128 + component as u128);
        if self.rng.get_word_pos() != pos {
            self.rng.set_word_pos(pos);
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `(0, 1)`, never exactly 0 or 1.
    pub fn next_open01(&mut self) -> f64 {
        open01(self.rng.next_u64())
    }

    /// The two raw words owned by `(t, component)` for an `n`-dimensional
    /// process.
    pub fn slot(&mut self, t: usize, n: usize, component: usize) -> (u64, u64) {
        assert!(t >= 1, "steps are numbered from 1");
        self.seek(t, n, component);
        (self.rng.next_u64(), self.rng.next_u64())
    }
}

#[inline]
fn open01(u: u64) -> f64 {
    ((u >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

#[inline]
fn box_muller(u1: u64, u2: u64) -> f64 {
    let r = (-2.0 * open01(u1).ln()).sqrt();
    r * (std::f64::consts::TAU * open01(u2)).cos()
}

#[inline]
fn cauchy(u1: u64, scale: f64) -> f64 {
    scale * (std::f64::consts::PI * (open01(u1) - 0.5)).tan()
}

/// Distribution of `γ_t` before the time envelope is applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseKind {
    Zero,
    /// `rate^t · 𝟙`.
    DecayingDeterministic {
        rate: f64,
    },
    /// iid `N(mean, covariance)`; defaults to zero mean and identity.
    Gaussian {
        #[serde(default)]
        mean: Option<Vec<f64>>,
        #[serde(default)]
        covariance: Option<Vec<Vec<f64>>>,
    },
    /// Independent ±1 per component with equal probability.
    Rademacher,
    /// Independent Cauchy per component.
    Cauchy {
        scale: f64,
    },
    /// Row `t − 1` is `γ_t`.
    Table {
        values: Vec<Vec<f64>>,
    },
}

/// Deterministic amplitude multiplying every draw.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Envelope {
    #[default]
    Unit,
    /// `t^-exponent`.
    Power { exponent: f64 },
    /// `rate^t`.
    Geometric { rate: f64 },
}

impl Envelope {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            Envelope::Unit => 1.0,
            Envelope::Power { exponent } => (t as f64).powf(-exponent),
            Envelope::Geometric { rate } => rate.powi(t as i32),
        }
    }
}

/// Declarative noise description, as read from scenario files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(flatten)]
    pub kind: NoiseKind,
    #[serde(default)]
    pub envelope: Envelope,
}

impl NoiseSpec {
    pub fn zero() -> Self {
        Self::new(NoiseKind::Zero)
    }

    pub fn new(kind: NoiseKind) -> Self {
        Self {
            kind,
            envelope: Envelope::Unit,
        }
    }

    pub fn with_envelope(mut self, envelope: Envelope) -> Self {
        self.envelope = envelope;
        self
    }

    pub fn standard_gaussian() -> Self {
        Self::new(NoiseKind::Gaussian {
            mean: None,
            covariance: None,
        })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, NoiseKind::Zero)
    }

    /// Validates against dimension `n` and precomputes samplers.
    pub fn compile(&self, n: usize) -> Result<NoiseProcess> {
        let sampler = match &self.kind {
            NoiseKind::Zero => Sampler::Zero,
            NoiseKind::DecayingDeterministic { rate } => {
                if !rate.is_finite() {
                    return Err(Error::InvalidModel("decay rate must be finite".into()));
                }
                Sampler::Decaying(*rate)
            }
            NoiseKind::Gaussian { mean, covariance } => {
                let mean = match mean {
                    Some(m) if m.len() != n => {
                        return Err(Error::Dimension {
                            expected: n,
                            found: m.len(),
                        })
                    }
                    Some(m) => m.clone(),
                    None => vec![0.0; n],
                };
                let cov = match covariance {
                    Some(rows) => Matrix::from_rows(rows)?,
                    None => Matrix::identity(n),
                };
                if cov.dim() != n {
                    return Err(Error::Dimension {
                        expected: n,
                        found: cov.dim(),
                    });
                }
                let factor = if cov == Matrix::identity(n) {
                    None
                } else {
                    Some(psd_factor(&cov)?)
                };
                Sampler::Gaussian { mean, factor }
            }
            NoiseKind::Rademacher => Sampler::Rademacher,
            NoiseKind::Cauchy { scale } => {
                if !(*scale > 0.0) || !scale.is_finite() {
                    return Err(Error::InvalidModel(format!(
                        "Cauchy scale must be positive, got {scale}"
                    )));
                }
                Sampler::Cauchy(*scale)
            }
            NoiseKind::Table { values } => {
                if let Some(row) = values.iter().find(|r| r.len() != n) {
                    return Err(Error::Dimension {
                        expected: n,
                        found: row.len(),
                    });
                }
                Sampler::Table(values.clone())
            }
        };
        Ok(NoiseProcess {
            n,
            sampler,
            envelope: self.envelope,
        })
    }
}

#[derive(Clone, Debug)]
enum Sampler {
    Zero,
    Decaying(f64),
    /// `factor` is `None` for the identity covariance.
    Gaussian {
        mean: Vec<f64>,
        factor: Option<Matrix>,
    },
    Rademacher,
    Cauchy(f64),
    Table(Vec<Vec<f64>>),
}

/// Compiled noise process for a fixed dimension.
#[derive(Clone, Debug)]
pub struct NoiseProcess {
    n: usize,
    sampler: Sampler,
    envelope: Envelope,
}

impl NoiseProcess {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.sampler, Sampler::Zero)
    }

    /// `γ_t` for `t ≥ 1`, drawn from the slots of step `t` in `stream`.
    pub fn sample(&self, t: usize, stream: &mut Substream) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.n);
        self.sample_into(t, stream, &mut out)?;
        Ok(out)
    }

    /// As [`sample`](Self::sample), reusing `out`.
    pub fn sample_into(&self, t: usize, stream: &mut Substream, out: &mut Vec<f64>) -> Result<()> {
        let n = self.n;
        out.clear();
        match &self.sampler {
            Sampler::Zero => {
                out.resize(n, 0.0);
                return Ok(());
            }
            Sampler::Decaying(rate) => out.resize(n, rate.powi(t as i32)),
            Sampler::Gaussian { mean, factor } => {
                out.extend((0..n).map(|c| {
                    let (u1, u2) = stream.slot(t, n, c);
                    box_muller(u1, u2)
                }));
                if let Some(l) = factor {
                    let z = l.mul_vec(out);
                    out.copy_from_slice(&z);
                }
                out.iter_mut().zip(mean).for_each(|(z, m)| *z += m);
            }
            Sampler::Rademacher => out.extend((0..n).map(|c| {
                let (u1, _) = stream.slot(t, n, c);
                if u1 >> 63 == 1 {
                    1.0
                } else {
                    -1.0
                }
            })),
            Sampler::Cauchy(scale) => out.extend((0..n).map(|c| {
                let (u1, _) = stream.slot(t, n, c);
                cauchy(u1, *scale)
            })),
            Sampler::Table(values) => match values.get(t - 1) {
                Some(row) => out.extend_from_slice(row),
                None => return Err(Error::ExhaustedTable { t, len: values.len() }),
            },
        }
        let amp = self.envelope.at(t);
        if amp != 1.0 {
            out.iter_mut().for_each(|x| *x *= amp);
        }
        Ok(())
    }
}

/// Free-function form of [`NoiseProcess::sample`].
pub fn sample_noise(process: &NoiseProcess, t: usize, stream: &mut Substream) -> Result<Vec<f64>> {
    process.sample(t, stream)
}

/// `L` with `L Lᵀ = Σ` for a symmetric positive semidefinite `Σ`, built from
/// the eigendecomposition so that singular covariances are accepted.
pub fn psd_factor(cov: &Matrix) -> Result<Matrix> {
    let n = cov.dim();
    let scale = cov.as_slice().iter().fold(1.0_f64, |a, x| a.max(x.abs()));
    let asym = cov.asymmetry();
    if asym > 1e-9 * scale {
        return Err(Error::NotPsd(format!("asymmetry {asym:e}")));
    }
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, cov.as_slice()));
    let mut data = vec![0.0; n * n];
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -1e-9 * scale {
            return Err(Error::NotPsd(format!("eigenvalue {lambda:e}")));
        }
        let root = lambda.max(0.0).sqrt();
        for i in 0..n {
            data[i * n + k] = eig.eigenvectors[(i, k)] * root;
        }
    }
    Matrix::new(n, data)
}

/// Cauchy scale of `X_t` for the scalar recursion
/// `X_t = (1 − ε_t) X_{t−1} + ε_t γ_t` with iid Cauchy(`noise_scale`) noise
/// and a Cauchy(`initial_scale`) (or point mass at 0 when 0) start.
pub fn cauchy_scale_after(eps: &[f64], initial_scale: f64, noise_scale: f64) -> f64 {
    eps.iter()
        .fold(initial_scale, |s, &e| (1.0 - e).abs() * s + e.abs() * noise_scale)
}

/// Oscillating learning-rate sequence whose increments `c/t` are not
/// summable while every value stays inside `[lower, upper]`.
///
/// The direction flips upward-to-downward at the first `t` where the next
/// increment would overshoot `upper`, and symmetrically at `lower`, so the
/// bounds are never crossed and the set of limit points fills the interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonOscillator {
    #[serde(default = "EpsilonOscillator::default_step")]
    pub step: f64,
    #[serde(default = "EpsilonOscillator::default_lower")]
    pub lower: f64,
    #[serde(default = "EpsilonOscillator::default_upper")]
    pub upper: f64,
    #[serde(default = "EpsilonOscillator::default_start")]
    pub start: f64,
}

impl Default for EpsilonOscillator {
    fn default() -> Self {
        Self {
            step: Self::default_step(),
            lower: Self::default_lower(),
            upper: Self::default_upper(),
            start: Self::default_start(),
        }
    }
}

impl EpsilonOscillator {
    fn default_step() -> f64 {
        0.1
    }
    fn default_lower() -> f64 {
        0.25
    }
    fn default_upper() -> f64 {
        0.75
    }
    fn default_start() -> f64 {
        0.5
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.step > 0.0
            && self.lower < self.upper
            && self.lower <= self.start
            && self.start <= self.upper
            && self.start + self.step <= self.upper;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidModel(format!("invalid oscillator {self:?}")))
        }
    }

    pub fn iter(&self) -> OscillatorIter {
        OscillatorIter {
            osc: *self,
            t: 0,
            value: self.start,
            up: true,
            turned: false,
        }
    }

    /// `ε_1, …, ε_T`.
    pub fn sequence(&self, horizon: usize) -> Vec<f64> {
        self.iter().take(horizon).map(|s| s.value).collect()
    }

    /// Times `τ_k ≤ horizon` at which the direction flips, with `ε_{τ_k}`.
    pub fn turning_points(&self, horizon: usize) -> Vec<(usize, f64)> {
        self.iter()
            .take(horizon)
            .filter(|s| s.turned)
            .map(|s| (s.t, s.value))
            .collect()
    }
}

/// One element of the oscillator sequence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OscillatorStep {
    pub t: usize,
    pub value: f64,
    /// Direction flips after this step.
    pub turned: bool,
}

pub struct OscillatorIter {
    osc: EpsilonOscillator,
    t: usize,
    value: f64,
    up: bool,
    turned: bool,
}

impl Iterator for OscillatorIter {
    type Item = OscillatorStep;

    fn next(&mut self) -> Option<OscillatorStep> {
        self.t += 1;
        let t = self.t as f64;
        let c = self.osc.step;
        self.value += if self.up { c / t } else { -c / t };
        let next_inc = c / (t + 1.0);
        self.turned = if self.up {
            self.value + next_inc > self.osc.upper
        } else {
            self.value - next_inc < self.osc.lower
        };
        if self.turned {
            self.up = !self.up;
        }
        Some(OscillatorStep {
            t: self.t,
            value: self.value,
            turned: self.turned,
        })
    }
}

/// Free-function form of [`EpsilonOscillator::sequence`] with the default
/// constants (`c = 1/10`, bounds `[1/4, 3/4]`, start `1/2`).
pub fn epsilon_oscillator_sequence(horizon: usize) -> Vec<f64> {
    EpsilonOscillator::default().sequence(horizon)
}
