//! Simulation and verification engine for discrete-time learning and
//! consensus dynamics.
//!
//! The crate covers four model families driven by row-stochastic trust
//! matrices: targeted learning toward a known consensus value (with or
//! without noise), pure-noise feedback, nonlinear learning functions, and
//! average dynamics where the target is the agents' own mean. Around the
//! simulator sit numerical checkers for the convergence hypotheses and a
//! statistics layer that verifies the predicted limits from Monte Carlo
//! ensembles.

// `!(x < bound)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conditions;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod matrix;
pub mod noise;
pub mod stats;

pub use error::{Error, Result};
