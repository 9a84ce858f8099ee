//! Conditional moments of the approximate model with
//! `log(V^n_t / ξ0) = σ ∫_0^t K^n(t-u) dB_u = σ Σ_i α_i Y^i_t`, where the
//! `Y^i` are unit-volatility O-U factors started at zero.

use nalgebra::DMatrix;
use ndarray::Array1;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::OUFactorState;
use crate::error::{Error, Result};
use crate::kernel::{integrated_decay, ExpKernel};
use crate::sim::path_rng;

/// `χ(s, t) = ∫_{t-s}^t ς²(u) du` with `ς = K^n`:
/// `Σ_ij α_i α_j e^{-(κ_i+κ_j)(t-s)} (1 - e^{-(κ_i+κ_j)s}) / (κ_i+κ_j)`.
pub fn quadratic_variation_chi(kernel: &ExpKernel, s: f64, t: f64) -> Result<f64> {
    if !(0.0 <= s && s <= t) {
        return Err(Error::invalid(format!("need 0 <= s <= t, got s = {s}, t = {t}")));
    }
    let mut acc = 0.0;
    for (wi, xi) in kernel.weights().iter().zip(kernel.speeds()) {
        for (wj, xj) in kernel.weights().iter().zip(kernel.speeds()) {
            let c = xi + xj;
            acc += wi * wj * (-c * (t - s)).exp() * integrated_decay(c, s);
        }
    }
    Ok(acc)
}

fn check_state(kernel: &ExpKernel, state: &OUFactorState, t: f64) -> Result<()> {
    if state.time > t {
        return Err(Error::invalid(format!(
            "conditioning time {} is after t = {t}",
            state.time
        )));
    }
    if state.factors.ncols() != kernel.n() {
        return Err(Error::invalid(format!(
            "state has {} factors, kernel has {} terms",
            state.factors.ncols(),
            kernel.n()
        )));
    }
    Ok(())
}

/// `E[V^n_t | F_s]` per path:
/// `ξ0 exp{σ Σ_i α_i e^{-κ_i(t-s)} Y^i_s + (σ²/2) ∫_0^{t-s} K^n(u)² du}`.
pub fn variance_conditional_expectation(
    kernel: &ExpKernel,
    state: &OUFactorState,
    t: f64,
    sigma: f64,
    xi0: f64,
) -> Result<Array1<f64>> {
    check_state(kernel, state, t)?;
    let h = t - state.time;
    let drift = 0.5 * sigma * sigma * kernel.squared_integral(h);
    Ok(conditional_map(kernel, state, h, sigma, xi0, drift))
}

/// The same conditional expectation with the deterministic part written as
/// `(σ²/2) Σ_i α_i (1 - e^{-κ_i(t-s)}) / κ_i`, i.e. with `∫ K^n` in place
/// of `∫ (K^n)²`. Kept for comparison only; it is not the conditional mean
/// of the model.
pub fn variance_conditional_expectation_linear(
    kernel: &ExpKernel,
    state: &OUFactorState,
    t: f64,
    sigma: f64,
    xi0: f64,
) -> Result<Array1<f64>> {
    check_state(kernel, state, t)?;
    let h = t - state.time;
    let drift = 0.5
        * sigma
        * sigma
        * kernel
            .weights()
            .iter()
            .zip(kernel.speeds())
            .map(|(w, x)| w * integrated_decay(*x, h))
            .sum::<f64>();
    Ok(conditional_map(kernel, state, h, sigma, xi0, drift))
}

fn conditional_map(
    kernel: &ExpKernel,
    state: &OUFactorState,
    h: f64,
    sigma: f64,
    xi0: f64,
    drift: f64,
) -> Array1<f64> {
    let loads: Vec<f64> = kernel
        .weights()
        .iter()
        .zip(kernel.speeds())
        .map(|(w, x)| sigma * w * (-x * h).exp())
        .collect();
    state
        .factors
        .rows()
        .into_iter()
        .map(|y| {
            let lin: f64 = y.iter().zip(&loads).map(|(a, b)| a * b).sum();
            xi0 * (lin + drift).exp()
        })
        .collect()
}

/// Monte Carlo estimate of `E[V^n_t | Y_s = y0]`, returned as
/// `(mean, standard error)`.
///
/// The factors are stepped with their exact Gaussian transition: over `Δt`
/// each `Y^i` decays by `e^{-κ_i Δt}` and receives a correlated increment
/// with covariance `(1 - e^{-(κ_i+κ_j)Δt}) / (κ_i+κ_j)`, sampled through a
/// Cholesky factor. Paths are generated one at a time, so memory does not
/// grow with `n_paths`.
#[allow(clippy::too_many_arguments)]
pub fn conditional_variance_mc(
    kernel: &ExpKernel,
    y0: &[f64],
    horizon: f64,
    steps: usize,
    sigma: f64,
    xi0: f64,
    n_paths: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let n = kernel.n();
    if y0.len() != n {
        return Err(Error::invalid("initial state does not match the kernel"));
    }
    if steps == 0 || n_paths < 2 || !(horizon > 0.0) {
        return Err(Error::invalid("need steps >= 1, n_paths >= 2 and a positive horizon"));
    }
    let dt = horizon / steps as f64;
    let speeds = kernel.speeds();
    let decay: Vec<f64> = speeds.iter().map(|x| (-x * dt).exp()).collect();
    let cov = DMatrix::from_fn(n, n, |i, j| integrated_decay(speeds[i] + speeds[j], dt));
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Numerical("factor increment covariance is not positive definite".into()))?
        .l();
    let weights = kernel.weights();
    let (sum, sum_sq) = (0..n_paths)
        .into_par_iter()
        .with_min_len(256)
        .map(|p| {
            let mut rng = path_rng(seed, p);
            let mut y = y0.to_vec();
            let mut z = vec![0.0; n];
            for _ in 0..steps {
                for zi in z.iter_mut() {
                    *zi = rng.sample(StandardNormal);
                }
                for i in 0..n {
                    let shock: f64 = (0..=i).map(|j| chol[(i, j)] * z[j]).sum();
                    y[i] = y[i] * decay[i] + shock;
                }
            }
            let lin: f64 = y.iter().zip(weights).map(|(a, w)| a * w).sum();
            let v = xi0 * (sigma * lin).exp();
            (v, v * v)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let m = n_paths as f64;
    let mean = sum / m;
    let var = (sum_sq / m - mean * mean) * m / (m - 1.0);
    Ok((mean, (var.max(0.0) / m).sqrt()))
}
