//! One-step update rules for every model family.
//!
//! The public functions are pure: they take the current state and the
//! schedule values at the step and return the next state. The `_into`
//! variants write into a caller-owned buffer for the simulation loop.

use crate::matrix::{averaging_map, LearningRates, Matrix, StateVector, StochasticMatrix};

use super::learning::Response;

fn check_dims(a: &Matrix, eps: usize, x: usize) {
    assert_eq!(a.dim(), x, "state does not match matrix dimension");
    assert_eq!(eps, x, "rates do not match state dimension");
}

/// `out_i = g(i, (M x)_i)`.
#[inline]
fn affine_into(m: &Matrix, x: &[f64], out: &mut Vec<f64>, g: impl Fn(usize, f64) -> f64) {
    out.clear();
    out.extend(
        m.rows()
            .enumerate()
            .map(|(i, r)| g(i, r.iter().zip(x).map(|(a, b)| a * b).sum())),
    );
}

fn collect(f: impl FnOnce(&mut Vec<f64>)) -> StateVector {
    let mut out = Vec::new();
    f(&mut out);
    StateVector::from_raw(out)
}

/// `A x + ℰ (σ̄ 𝟙 − x)`.
pub fn step_base(a: &StochasticMatrix, eps: &LearningRates, target: f64, x: &[f64]) -> StateVector {
    collect(|out| step_base_into(a, eps, target, x, out))
}

pub(crate) fn step_base_into(a: &Matrix, eps: &LearningRates, target: f64, x: &[f64], out: &mut Vec<f64>) {
    check_dims(a, eps.len(), x.len());
    affine_into(a, x, out, |i, ax| ax + eps[i] * (target - x[i]));
}

/// `A x + ℰ (σ̄ 𝟙 + γ − x)`.
pub fn step_noisy(
    a: &StochasticMatrix,
    eps: &LearningRates,
    target: f64,
    gamma: &[f64],
    x: &[f64],
) -> StateVector {
    collect(|out| step_noisy_into(a, eps, target, gamma, x, out))
}

pub(crate) fn step_noisy_into(
    a: &Matrix,
    eps: &LearningRates,
    target: f64,
    gamma: &[f64],
    x: &[f64],
    out: &mut Vec<f64>,
) {
    check_dims(a, eps.len(), x.len());
    assert_eq!(gamma.len(), x.len(), "noise does not match state dimension");
    affine_into(a, x, out, |i, ax| ax + eps[i] * (target + gamma[i] - x[i]));
}

/// `A x + ℰ (γ − x)`.
pub fn step_pure_noise(a: &StochasticMatrix, eps: &LearningRates, gamma: &[f64], x: &[f64]) -> StateVector {
    collect(|out| step_pure_noise_into(a, eps, gamma, x, out))
}

pub(crate) fn step_pure_noise_into(
    a: &Matrix,
    eps: &LearningRates,
    gamma: &[f64],
    x: &[f64],
    out: &mut Vec<f64>,
) {
    check_dims(a, eps.len(), x.len());
    assert_eq!(gamma.len(), x.len(), "noise does not match state dimension");
    affine_into(a, x, out, |i, ax| ax + eps[i] * (gamma[i] - x[i]));
}

/// `A x + f(σ̄ 𝟙 + γ − x)` componentwise. With `target = None` the feedback
/// argument is `γ − x`.
///
/// For [`Response::Sign`] the response is `ℰ · sign(·)`, with `rates`
/// required.
pub fn step_nonlinear(
    a: &StochasticMatrix,
    response: &Response,
    rates: Option<&LearningRates>,
    target: Option<f64>,
    gamma: &[f64],
    x: &[f64],
) -> StateVector {
    collect(|out| step_nonlinear_into(a, response, rates, target, gamma, x, out))
}

pub(crate) fn step_nonlinear_into(
    a: &Matrix,
    response: &Response,
    rates: Option<&LearningRates>,
    target: Option<f64>,
    gamma: &[f64],
    x: &[f64],
    out: &mut Vec<f64>,
) {
    assert_eq!(a.dim(), x.len(), "state does not match matrix dimension");
    assert_eq!(gamma.len(), x.len(), "noise does not match state dimension");
    let target = target.unwrap_or(0.0);
    affine_into(a, x, out, |i, ax| {
        let u = target + gamma[i] - x[i];
        let feedback = match response {
            Response::Smooth(_) => response
                .function(i)
                .expect("one learning function per agent")
                .eval(u),
            Response::Sign => {
                let eps = rates.expect("sign response needs learning rates");
                eps[i] * signum(u)
            }
        };
        ax + feedback
    });
}

/// Three-valued sign with `sign(0) = 0`.
#[inline]
pub fn signum(u: f64) -> f64 {
    if u > 0.0 {
        1.0
    } else if u < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `A x + ℰ (x̄ 𝟙 − x + γ) = B x + ℰ γ` with `B` from [`averaging_map`].
pub fn step_average(a: &StochasticMatrix, eps: &LearningRates, gamma: &[f64], x: &[f64]) -> StateVector {
    check_dims(a, eps.len(), x.len());
    let b = averaging_map(a, eps);
    collect(|out| step_averaged_into(b.matrix(), eps, gamma, x, out))
}

/// `B x + ℰ γ` for a precomputed averaged matrix `B`.
pub(crate) fn step_averaged_into(
    b: &Matrix,
    eps: &LearningRates,
    gamma: &[f64],
    x: &[f64],
    out: &mut Vec<f64>,
) {
    assert_eq!(gamma.len(), x.len(), "noise does not match state dimension");
    affine_into(b, x, out, |i, bx| bx + eps[i] * gamma[i]);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::learning::LearningFunction;

    fn example_a() -> StochasticMatrix {
        StochasticMatrix::from_rows(&[
            [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            [0.5, 0.5, 0.0],
            [0.0, 0.25, 0.75],
        ])
        .unwrap()
    }

    fn rates(v: &[f64]) -> LearningRates {
        LearningRates::new(v.to_vec()).unwrap()
    }

    fn scalar_one() -> StochasticMatrix {
        StochasticMatrix::identity(1)
    }

    #[test]
    fn base_examples() {
        let a = example_a();
        let e = rates(&[0.3, 0.5, 0.7]);
        let fixed = step_base(&a, &e, 2.0, &[2.0, 2.0, 2.0]);
        for v in fixed.iter() {
            assert!((v - 2.0).abs() < 1e-15);
        }
        let x = [1.0, -2.0, 0.5];
        let degroot = step_base(&a, &LearningRates::zeros(3), 7.0, &x);
        assert_eq!(degroot.as_slice(), a.mul_vec(&x).as_slice());
        let from_zero = step_base(&a, &e, 1.0, &[0.0, 0.0, 0.0]);
        assert_eq!(from_zero.as_slice(), &[0.3, 0.5, 0.7]);
    }

    #[test]
    fn noisy_examples() {
        let a = example_a();
        let e = rates(&[0.3, 0.5, 0.7]);
        let x = [0.1, 0.4, -0.3];
        assert_eq!(step_noisy(&a, &e, 1.0, &[0.0; 3], &x), step_base(&a, &e, 1.0, &x));
        let g = [0.2, -0.1, 0.05];
        let y = step_noisy(&a, &e, 1.0, &g, &[1.0; 3]);
        for i in 0..3 {
            assert!((y[i] - (1.0 + e[i] * g[i])).abs() < 1e-15);
        }
        let s = step_noisy(&scalar_one(), &rates(&[0.5]), 2.0, &[0.1], &[1.0]);
        assert!((s[0] - 1.55).abs() < 1e-15);
    }

    #[test]
    fn pure_noise_examples() {
        let a = example_a();
        let e = rates(&[0.3, 0.5, 0.7]);
        let x = [0.1, 0.4, -0.3];
        assert_eq!(
            step_pure_noise(&a, &e, &x, &x).as_slice(),
            a.mul_vec(&x).as_slice()
        );
        let g = [3.0, -1.0, 2.0];
        let full = step_pure_noise(
            &StochasticMatrix::identity(3),
            &LearningRates::uniform(3, 1.0),
            &g,
            &x,
        );
        for (v, e) in full.iter().zip(g) {
            assert!((v - e).abs() < 1e-15);
        }
        let s = step_pure_noise(&scalar_one(), &rates(&[0.5]), &[1.0], &[0.0]);
        assert_eq!(s[0], 0.5);
    }

    #[test]
    fn nonlinear_examples() {
        let a = example_a();
        let x = [0.1, 0.4, -0.3];
        let g = [0.2, -0.1, 0.05];
        let linear = Response::shared(LearningFunction::linear(0.4));
        let y = step_nonlinear(&a, &linear, None, Some(1.0), &g, &x);
        let z = step_noisy(&a, &LearningRates::uniform(3, 0.4), 1.0, &g, &x);
        for i in 0..3 {
            assert!((y[i] - z[i]).abs() < 1e-14);
        }

        let tanh = Response::shared(LearningFunction::tanh(0.5, 1.0, None).unwrap());
        let fixed = step_nonlinear(&a, &tanh, None, Some(1.0), &[0.0; 3], &[1.0; 3]);
        for v in fixed.iter() {
            assert!((v - 1.0).abs() < 1e-15);
        }
        let s = step_nonlinear(&scalar_one(), &tanh, None, Some(1.0), &[0.0], &[0.0]);
        assert!((s[0] - 0.380_797_077_977_882_3).abs() < 1e-15);
    }

    #[test]
    fn sign_response_cycles() {
        let a = scalar_one();
        let e = rates(&[0.4]);
        let mut x = vec![2.0];
        let mut ys = Vec::new();
        for _ in 0..6 {
            x = step_nonlinear(&a, &Response::Sign, Some(&e), Some(1.0), &[0.0], &x).into_vec();
            ys.push(x[0] - 1.0);
        }
        let expected = [0.6, 0.2, -0.2, 0.2, -0.2, 0.2];
        for (y, e) in ys.iter().zip(expected) {
            assert!((y - e).abs() < 1e-12, "{ys:?}");
        }
    }

    #[test]
    fn average_examples() {
        let a = example_a();
        let e = rates(&[0.3, 0.5, 0.7]);
        let c = step_average(&a, &e, &[0.0; 3], &[4.0; 3]);
        for v in c.iter() {
            assert!((v - 4.0).abs() < 1e-14);
        }
        let x = [1.0, 2.0, -1.0];
        let d = step_average(&a, &LearningRates::zeros(3), &[0.0; 3], &x);
        assert_eq!(d.as_slice(), a.mul_vec(&x).as_slice());

        let a2 = StochasticMatrix::from_rows(&[[0.6, 0.4], [0.3, 0.7]]).unwrap();
        let y = step_average(&a2, &rates(&[0.4, 0.2]), &[0.0, 0.0], &[1.0, 0.0]);
        assert!((y[0] - 0.4).abs() < 1e-15 && (y[1] - 0.4).abs() < 1e-15);
    }
}
