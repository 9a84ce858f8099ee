//! Sums of exponentials `K^n(τ) = Σ α_i e^{-x_i τ}` approximating the power
//! kernel `τ^{H-1/2}`.
//!
//! Two constructions are provided: an explicit one obtained by discretising
//! the Laplace representation of the power kernel on cells of width `π_n`
//! ([`closed_form_kernel`], with a certified `L²` error bound) and a
//! least-squares fit on a time grid ([`fit_kernel_ls`]).

mod closed_form;
mod fit;
mod l2;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

pub use closed_form::{closed_form_kernel, KernelErrorCert};
pub use fit::{
    fit_exp_sum, fit_kernel_ls, ls_fit_grid, ls_initial_kernel, FitOptions, KernelFit,
};
pub use l2::{kernel_l2_error, DEFAULT_L2_PANELS};

/// `τ^{H-1/2}`.
pub fn power_kernel(tau: f64, hurst: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("power kernel is singular at tau = {tau}")));
    }
    Ok(tau.powf(hurst - 0.5))
}

/// `∫_0^{x_max} e^{-τx} μ(dx)` with `μ(dx) = x^{-1/2-H} dx / Γ(1/2-H)`, the
/// truncated Laplace representation of the power kernel.
///
/// The substitution `u = x^{1/2-H}` removes the singularity of the density
/// at zero, after which composite Simpson with `n_quad` intervals is used.
pub fn laplace_mu(tau: f64, hurst: f64, x_max: f64, n_quad: usize) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("tau must be positive, got {tau}")));
    }
    check_hurst(hurst)?;
    if !(x_max > 0.0) || n_quad < 2 {
        return Err(Error::invalid("laplace_mu needs x_max > 0 and n_quad >= 2"));
    }
    let b = 0.5 - hurst;
    let u_max = x_max.powf(b);
    let n = n_quad + n_quad % 2;
    let h = u_max / n as f64;
    let f = |u: f64| (-tau * u.powf(1.0 / b)).exp();
    let mut acc = f(0.0) + f(u_max);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(i as f64 * h);
    }
    Ok(acc * h / 3.0 / (b * gamma(b)))
}

pub(crate) fn check_hurst(hurst: f64) -> Result<()> {
    if hurst > 0.0 && hurst < 0.5 {
        Ok(())
    } else {
        Err(Error::invalid(format!("hurst must lie in (0, 1/2), got {hurst}")))
    }
}

/// Which function an [`ExpKernel`] approximates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelTarget {
    /// `τ^α`.
    #[default]
    Power,
    /// `√(2α+1) τ^α`, the normalised Volterra kernel.
    Volterra,
}

/// Positive weights and strictly increasing positive speeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ExpKernelRepr", into = "ExpKernelRepr")]
pub struct ExpKernel {
    weights: Vec<f64>,
    speeds: Vec<f64>,
    hurst: f64,
    horizon: f64,
    target: KernelTarget,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExpKernelRepr {
    weights: Vec<f64>,
    speeds: Vec<f64>,
    hurst: f64,
    horizon: f64,
    #[serde(default)]
    target: KernelTarget,
}

impl TryFrom<ExpKernelRepr> for ExpKernel {
    type Error = Error;

    fn try_from(r: ExpKernelRepr) -> Result<Self> {
        ExpKernel::new(r.weights, r.speeds, r.hurst, r.horizon, r.target)
    }
}

impl From<ExpKernel> for ExpKernelRepr {
    fn from(k: ExpKernel) -> Self {
        ExpKernelRepr {
            weights: k.weights,
            speeds: k.speeds,
            hurst: k.hurst,
            horizon: k.horizon,
            target: k.target,
        }
    }
}

impl ExpKernel {
    pub fn new(
        weights: Vec<f64>,
        speeds: Vec<f64>,
        hurst: f64,
        horizon: f64,
        target: KernelTarget,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != speeds.len() {
            return Err(Error::invalid(format!(
                "need matching non-empty weights and speeds (got {} and {})",
                weights.len(),
                speeds.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::invalid(format!("weights must be positive, found {w}")));
        }
        if let Some(x) = speeds.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
            return Err(Error::invalid(format!("speeds must be positive, found {x}")));
        }
        if speeds.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::invalid("speeds must be strictly increasing"));
        }
        check_hurst(hurst)?;
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
        }
        Ok(ExpKernel { weights, speeds, hurst, horizon, target })
    }

    /// Sorts the terms by speed and merges terms whose speeds coincide.
    pub fn from_terms(
        terms: impl IntoIterator<Item = (f64, f64)>,
        hurst: f64,
        horizon: f64,
        target: KernelTarget,
    ) -> Result<Self> {
        let mut terms: Vec<(f64, f64)> = terms.into_iter().collect();
        terms.sort_by(|a, b| a.1.total_cmp(&b.1));
        let mut weights: Vec<f64> = Vec::with_capacity(terms.len());
        let mut speeds: Vec<f64> = Vec::with_capacity(terms.len());
        for (w, x) in terms {
            if speeds.last() == Some(&x) {
                *weights.last_mut().unwrap() += w;
            } else {
                weights.push(w);
                speeds.push(x);
            }
        }
        ExpKernel::new(weights, speeds, hurst, horizon, target)
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn speeds(&self) -> &[f64] {
        &self.speeds
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn alpha(&self) -> f64 {
        self.hurst - 0.5
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn target(&self) -> KernelTarget {
        self.target
    }

    /// The function this kernel approximates, evaluated at `τ > 0`.
    pub fn target_value(&self, tau: f64) -> f64 {
        self.target_scale() * tau.powf(self.alpha())
    }

    /// Multiplier turning `τ^α` into the target function.
    pub fn target_scale(&self) -> f64 {
        match self.target {
            KernelTarget::Power => 1.0,
            KernelTarget::Volterra => (2.0 * self.alpha() + 1.0).sqrt(),
        }
    }

    /// Factor that turns this kernel into an approximation of the normalised
    /// Volterra kernel `√(2α+1) τ^α`.
    pub fn volterra_scale(&self) -> f64 {
        match self.target {
            KernelTarget::Power => (2.0 * self.alpha() + 1.0).sqrt(),
            KernelTarget::Volterra => 1.0,
        }
    }

    /// `K^n(τ)`.
    pub fn eval(&self, tau: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.speeds)
            .map(|(w, x)| w * (-x * tau).exp())
            .sum()
    }

    /// `d^m K^n / dτ^m`, which has sign `(-1)^m` for positive weights.
    pub fn derivative(&self, tau: f64, order: u32) -> f64 {
        let sign = if order % 2 == 0 { 1.0 } else { -1.0 };
        sign * self
            .weights
            .iter()
            .zip(&self.speeds)
            .map(|(w, x)| w * x.powi(order as i32) * (-x * tau).exp())
            .sum::<f64>()
    }

    /// `Σ_ij α_i α_j (1 - e^{-(x_i+x_j) t}) / (x_i+x_j)`, i.e. `∫_0^t K^n(u)² du`.
    pub fn squared_integral(&self, t: f64) -> f64 {
        self.squared_integral_scaled(t, 1.0)
    }

    /// Same as [`squared_integral`](Self::squared_integral) with every speed
    /// multiplied by `speed_scale`.
    pub fn squared_integral_scaled(&self, t: f64, speed_scale: f64) -> f64 {
        let mut acc = 0.0;
        for (wi, xi) in self.weights.iter().zip(&self.speeds) {
            for (wj, xj) in self.weights.iter().zip(&self.speeds) {
                let c = (xi + xj) * speed_scale;
                acc += wi * wj * integrated_decay(c, t);
            }
        }
        acc
    }

    /// Root-mean-square residual against the target on the given nodes.
    pub fn grid_rmse(&self, taus: &[f64]) -> f64 {
        let ss: f64 = taus
            .iter()
            .map(|&t| (self.eval(t) - self.target_value(t)).powi(2))
            .sum();
        (ss / taus.len() as f64).sqrt()
    }
}

/// `(1 - e^{-c t}) / c`, continuous at `c = 0`.
pub(crate) fn integrated_decay(c: f64, t: f64) -> f64 {
    if c * t < 1e-12 {
        t
    } else {
        -(-c * t).exp_m1() / c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_kernel_values() {
        assert_eq!(power_kernel(1.0, 0.3).unwrap(), 1.0);
        // 0.25^{-0.43} to 30 digits is 1.81503831063432171291...
        let v = power_kernel(0.25, 0.07).unwrap();
        assert!((v - 1.815_038_310_634_322).abs() < 1e-14, "{v}");
        assert!(matches!(power_kernel(0.0, 0.07), Err(Error::Domain(_))));
    }

    #[test]
    fn laplace_representation() {
        for &tau in &[0.1, 0.25, 0.5, 1.0, 2.0] {
            let v = laplace_mu(tau, 0.07, 1e4, 4000).unwrap();
            let exact = tau.powf(-0.43);
            assert!((v / exact - 1.0).abs() < 1e-3, "tau {tau}: {v} vs {exact}");
        }
        assert!(laplace_mu(0.0, 0.07, 1e4, 100).is_err());
    }

    #[test]
    fn laplace_refinement_improves() {
        let exact = 1.0;
        let mut last = f64::INFINITY;
        for n in [50, 100, 200, 400] {
            let e = (laplace_mu(1.0, 0.07, 1e4, n).unwrap() - exact).abs();
            assert!(e <= last, "n {n}: {e} > {last}");
            last = e;
        }
    }

    #[test]
    fn kernel_validation() {
        let k = |w: Vec<f64>, x: Vec<f64>| ExpKernel::new(w, x, 0.1, 1.0, KernelTarget::Power);
        assert!(k(vec![1.0], vec![1.0]).is_ok());
        assert!(k(vec![], vec![]).is_err());
        assert!(k(vec![1.0, -1.0], vec![1.0, 2.0]).is_err());
        assert!(k(vec![1.0, 1.0], vec![2.0, 1.0]).is_err());
        assert!(k(vec![1.0, 1.0], vec![1.0, 1.0]).is_err());
        let merged =
            ExpKernel::from_terms([(1.0, 2.0), (0.5, 1.0), (0.25, 2.0)], 0.1, 1.0, KernelTarget::Power)
                .unwrap();
        assert_eq!(merged.speeds(), &[1.0, 2.0]);
        assert_eq!(merged.weights(), &[0.5, 1.25]);
    }

    #[test]
    fn serde_round_trip_validates() {
        let k = ExpKernel::new(vec![1.0, 2.0], vec![0.5, 3.0], 0.07, 1.0, KernelTarget::Volterra)
            .unwrap();
        let s = serde_json::to_string(&k).unwrap();
        let back: ExpKernel = serde_json::from_str(&s).unwrap();
        assert_eq!(k, back);
        let bad = s.replace("0.5", "-0.5");
        assert!(serde_json::from_str::<ExpKernel>(&bad).is_err());
    }

    #[test]
    fn squared_integral_matches_quadrature() {
        let k = ExpKernel::new(vec![0.7, 1.3], vec![0.4, 5.0], 0.1, 1.0, KernelTarget::Power)
            .unwrap();
        let rule = crate::quad::GaussLegendre::new(30);
        let q = rule.integrate_composite(0.0, 0.8, 8, |u| k.eval(u).powi(2));
        assert!((k.squared_integral(0.8) - q).abs() < 1e-12);
    }
}
