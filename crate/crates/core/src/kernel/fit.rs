use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::gamma;

use super::{check_hurst, ExpKernel, KernelTarget};
use crate::error::{Error, FitFailure, Result};

/// Stopping rules for the damped Gauss-Newton iteration.
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Stop once the sup-norm of the gradient of the mean squared residual
    /// drops below this.
    pub gtol: f64,
    /// Largest change of any log-parameter in one step.
    pub max_step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_iter: 500, gtol: 1e-10, max_step: 2.0 }
    }
}

/// Outcome of a successful least-squares fit.
#[derive(Debug, Clone)]
pub struct KernelFit {
    pub kernel: ExpKernel,
    pub rmse: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
}

/// Fit nodes `τ_j = j T / N_grid`, `j = 1..N_grid-1`. Both ends are left
/// out: `τ = 0` is singular and `τ = T` lies beyond the truncated range.
pub fn ls_fit_grid(horizon: f64, n_grid: usize) -> Result<Vec<f64>> {
    if !(horizon > 0.0) || n_grid < 2 {
        return Err(Error::invalid("fit grid needs T > 0 and N_grid >= 2"));
    }
    let dt = horizon / n_grid as f64;
    Ok((1..n_grid).map(|j| j as f64 * dt).collect())
}

/// Starting point for [`fit_kernel_ls`]: speeds spaced geometrically from
/// `0.1/T` to `10 N_grid / T`, weights equal to the `μ`-mass of the
/// geometric cell around each speed, scaled to the Volterra target.
pub fn ls_initial_kernel(hurst: f64, horizon: f64, n_grid: usize, n: usize) -> Result<ExpKernel> {
    check_hurst(hurst)?;
    if n == 0 {
        return Err(Error::invalid("kernel needs at least one term"));
    }
    if !(horizon > 0.0) || n_grid < 2 {
        return Err(Error::invalid("fit grid needs T > 0 and N_grid >= 2"));
    }
    let b = 0.5 - hurst;
    let lo = 0.1 / horizon;
    let hi = 10.0 * n_grid as f64 / horizon;
    let (speeds, ratio) = if n == 1 {
        (vec![1.0 / horizon], 4.0)
    } else {
        let r = (hi / lo).powf(1.0 / (n - 1) as f64);
        ((0..n).map(|i| lo * r.powi(i as i32)).collect::<Vec<_>>(), r)
    };
    let scale = (2.0 * (hurst - 0.5) + 1.0).sqrt() / (b * gamma(b));
    let mut edges = Vec::with_capacity(n + 1);
    edges.push(0.0);
    edges.extend(speeds.windows(2).map(|p| (p[0] * p[1]).sqrt()));
    edges.push(speeds[n - 1] * ratio.sqrt());
    let weights = edges
        .windows(2)
        .map(|e| scale * (e[1].powf(b) - e[0].powf(b)))
        .collect();
    ExpKernel::new(weights, speeds, hurst, horizon, KernelTarget::Volterra)
}

/// Least-squares fit of `Σ α_i e^{-κ_i τ}` to `√(2α+1) τ^α` on
/// [`ls_fit_grid`], starting from `init`.
///
/// An `init` built for the plain power kernel is rescaled to the Volterra
/// target before iterating.
pub fn fit_kernel_ls(
    hurst: f64,
    horizon: f64,
    n_grid: usize,
    init: &ExpKernel,
    opts: &FitOptions,
) -> Result<KernelFit> {
    check_hurst(hurst)?;
    let taus = ls_fit_grid(horizon, n_grid)?;
    let alpha = hurst - 0.5;
    let c = (2.0 * alpha + 1.0).sqrt();
    let targets: Vec<f64> = taus.iter().map(|t| c * t.powf(alpha)).collect();
    let rescale = match init.target() {
        KernelTarget::Volterra => 1.0,
        KernelTarget::Power => c,
    };
    let start = ExpKernel::new(
        init.weights().iter().map(|w| w * rescale).collect(),
        init.speeds().to_vec(),
        hurst,
        horizon,
        KernelTarget::Volterra,
    )?;
    fit_exp_sum(&taus, &targets, &start, opts)
}

/// Levenberg-Marquardt on `(log α_i, log κ_i)` for arbitrary targets.
///
/// Each step solves the damped problem `[J; √λ D] δ = [-r; 0]` by QR, with
/// `D` the column norms of `J`. A step is capped at `max_step` in every log
/// coordinate. The fit has converged when the gradient test passes or when
/// no damping level decreases the residual any more.
pub fn fit_exp_sum(
    taus: &[f64],
    targets: &[f64],
    init: &ExpKernel,
    opts: &FitOptions,
) -> Result<KernelFit> {
    if taus.len() != targets.len() || taus.is_empty() {
        return Err(Error::invalid("fit nodes and targets must be non-empty and equal length"));
    }
    let n = init.n();
    let m = taus.len();
    let mut params = DVector::from_iterator(
        2 * n,
        init.weights().iter().chain(init.speeds()).map(|v| v.ln()),
    );
    let mut state = evaluate(taus, targets, &params, n);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        let grad = state.jac.tr_mul(&state.res);
        if grad.amax() / m as f64 <= opts.gtol {
            converged = true;
            break;
        }
        iterations += 1;
        let diag: Vec<f64> = (0..2 * n)
            .map(|c| state.jac.column(c).norm_squared().max(1e-300))
            .collect();
        let mut accepted = false;
        while lambda < 1e16 {
            let step = damped_step(&state, &diag, lambda, opts.max_step);
            let trial_params = &params + &step;
            let trial = evaluate(taus, targets, &trial_params, n);
            if trial.cost.is_finite() && trial.cost < state.cost {
                params = trial_params;
                state = trial;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 2.0;
        }
        if !accepted {
            // no damping level improves the residual: a local minimum to
            // working precision
            converged = true;
            break;
        }
    }

    let gradient_norm = state.jac.tr_mul(&state.res).amax() / m as f64;
    if gradient_norm <= opts.gtol {
        converged = true;
    }
    let rmse = (state.cost / m as f64).sqrt();
    let terms = (0..n).map(|i| (params[i].exp(), params[n + i].exp()));
    let kernel = ExpKernel::from_terms(terms, init.hurst(), init.horizon(), init.target())?;
    if converged {
        Ok(KernelFit { kernel, rmse, gradient_norm, iterations })
    } else {
        Err(Error::FitFailure(Box::new(FitFailure {
            best: kernel,
            rmse,
            gradient_norm,
            iterations,
        })))
    }
}

struct FitState {
    res: DVector<f64>,
    jac: DMatrix<f64>,
    cost: f64,
}

fn evaluate(taus: &[f64], targets: &[f64], params: &DVector<f64>, n: usize) -> FitState {
    let m = taus.len();
    let mut res = DVector::zeros(m);
    let mut jac = DMatrix::zeros(m, 2 * n);
    let w: Vec<f64> = (0..n).map(|i| params[i].exp()).collect();
    let x: Vec<f64> = (0..n).map(|i| params[n + i].exp()).collect();
    for (j, (&tau, &y)) in taus.iter().zip(targets).enumerate() {
        let mut acc = 0.0;
        for i in 0..n {
            let term = w[i] * (-x[i] * tau).exp();
            acc += term;
            jac[(j, i)] = term;
            jac[(j, n + i)] = -term * x[i] * tau;
        }
        res[j] = acc - y;
    }
    let cost = res.norm_squared();
    FitState { res, jac, cost }
}

fn damped_step(state: &FitState, diag: &[f64], lambda: f64, max_step: f64) -> DVector<f64> {
    let (m, p) = state.jac.shape();
    let mut a = DMatrix::zeros(m + p, p);
    a.view_mut((0, 0), (m, p)).copy_from(&state.jac);
    for (c, d) in diag.iter().enumerate() {
        a[(m + c, c)] = (lambda * d).sqrt();
    }
    let mut rhs = DVector::zeros(m + p);
    rhs.rows_mut(0, m).copy_from(&(-&state.res));
    let qr = a.qr();
    let qtb = qr.q().tr_mul(&rhs);
    let step = qr
        .r()
        .solve_upper_triangular(&qtb)
        .unwrap_or_else(|| DVector::zeros(p));
    let biggest = step.amax();
    if biggest.is_finite() && biggest > max_step {
        step * (max_step / biggest)
    } else if biggest.is_finite() {
        step
    } else {
        DVector::zeros(p)
    }
}
