//! Variance and log-price paths for the rough Bergomi model and its
//! `n`-factor Markovian approximation.
//!
//! Both models consume the same [`PathIncrements`], so running them with
//! one seed gives common random numbers.

mod abergomi;
mod affine;
mod rbergomi;

use ndarray::{s, Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid::{simulate_volterra, HybridPlan, NearTerm};
use crate::sim::{sample_increment_block, ModelParams, PathIncrements, TimeGrid};

pub use abergomi::{
    abergomi_driver, abergomi_variance, factor_sum_variance, simulate_ou_factors,
    tabulated_mult_factor_sq, AbergomiConfig, Compensator, MultPlacement, OUFactorState, OuScheme,
    Truncation, VolScale, MULT_FACTOR_SQ,
};
pub use affine::{
    conditional_variance_mc, quadratic_variation_chi, variance_conditional_expectation,
    variance_conditional_expectation_linear,
};
pub use rbergomi::{rbergomi_log_price, rbergomi_variance, terminal_log_price};

/// Spot variance on the grid, `[n_paths × (N+1)]`.
#[derive(Debug, Clone)]
pub struct VariancePaths {
    values: Array2<f64>,
    grid: TimeGrid,
    params: ModelParams,
}

impl VariancePaths {
    /// Wraps a variance matrix after checking its shape and that every entry
    /// is finite and non-negative.
    pub fn new(values: Array2<f64>, grid: TimeGrid, params: ModelParams) -> Result<Self> {
        if values.ncols() != grid.steps() + 1 || values.nrows() == 0 {
            return Err(Error::invalid(format!(
                "variance matrix must be [n_paths x {}]",
                grid.steps() + 1
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Numerical("variance paths contain negative or non-finite values".into()));
        }
        Ok(VariancePaths { values, grid, params })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn n_paths(&self) -> usize {
        self.values.nrows()
    }
}

/// A model that can produce terminal log-prices from shared increments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "model")]
pub enum PricingModel {
    #[serde(rename = "rbergomi")]
    RBergomi { params: ModelParams, near: NearTermSpec },
    #[serde(rename = "abergomi")]
    ABergomi(Box<AbergomiConfig>),
    /// Constant volatility, driven by the price increments `ΔW`.
    #[serde(rename = "bs")]
    BlackScholes { vol: f64 },
}

/// Serializable mirror of [`NearTerm`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NearTermSpec {
    #[default]
    Exact,
    Midpoint,
}

impl From<NearTermSpec> for NearTerm {
    fn from(s: NearTermSpec) -> Self {
        match s {
            NearTermSpec::Exact => NearTerm::Exact,
            NearTermSpec::Midpoint => NearTerm::Midpoint,
        }
    }
}

impl PricingModel {
    fn rho(&self) -> f64 {
        match self {
            PricingModel::RBergomi { params, .. } => params.rho(),
            PricingModel::ABergomi(cfg) => cfg.params.rho(),
            PricingModel::BlackScholes { .. } => 0.0,
        }
    }

    /// Implied-vol multiplier to apply after pricing.
    pub fn smile_factor(&self) -> f64 {
        match self {
            PricingModel::ABergomi(cfg) => cfg.smile_factor(),
            _ => 1.0,
        }
    }

    /// Terminal log-prices for one block of increments.
    pub fn terminal_from_increments(&self, inc: &PathIncrements) -> Result<Array1<f64>> {
        let grid = inc.grid();
        match self {
            PricingModel::RBergomi { params, near } => {
                let plan = HybridPlan::with_near_term(*grid, params.alpha(), (*near).into())?;
                let x = simulate_volterra(&plan, inc)?;
                let v = rbergomi_variance(&x, params)?;
                terminal_log_price(&v, inc)
            }
            PricingModel::ABergomi(cfg) => {
                let y = abergomi_driver(cfg, inc)?;
                let v = abergomi_variance(cfg, grid, &y)?;
                terminal_log_price(&v, inc)
            }
            PricingModel::BlackScholes { vol } => {
                if !(vol.is_finite() && *vol >= 0.0) {
                    return Err(Error::invalid(format!("volatility must be non-negative, got {vol}")));
                }
                let drift = -0.5 * vol * vol * grid.horizon();
                Ok(inc.dw().rows().into_iter().map(|r| drift + vol * r.sum()).collect())
            }
        }
    }
}

/// Number of paths simulated per block by [`simulate_terminal_log_prices`].
pub const PATH_BLOCK: usize = 8192;

/// Terminal log-prices `log S_T` (`S_0 = 1`) for `n_paths` paths, simulated
/// in blocks of [`PATH_BLOCK`] so memory stays bounded. Path `p` always uses
/// random stream `p`, so the output does not depend on the block size.
pub fn simulate_terminal_log_prices(
    model: &PricingModel,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<Array1<f64>> {
    if n_paths == 0 {
        return Err(Error::invalid("need at least one path"));
    }
    let mut out = Array1::zeros(n_paths);
    let mut first = 0;
    while first < n_paths {
        let len = PATH_BLOCK.min(n_paths - first);
        let inc = sample_increment_block(grid, model.rho(), first, len, seed)?;
        let block = model.terminal_from_increments(&inc)?;
        if block.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("simulated log-prices are not finite".into()));
        }
        out.slice_mut(s![first..first + len]).assign(&block);
        first += len;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::closed_form_kernel;
    use crate::sim::make_time_grid;

    #[test]
    fn blocking_does_not_change_results() {
        let grid = make_time_grid(0.5, 20).unwrap();
        let model = PricingModel::RBergomi { params: ModelParams::benchmark(), near: NearTermSpec::Exact };
        let n = PATH_BLOCK + 17;
        let all = simulate_terminal_log_prices(&model, &grid, n, 4).unwrap();
        let inc = sample_increment_block(&grid, -0.9, PATH_BLOCK, 17, 4).unwrap();
        let tail = model.terminal_from_increments(&inc).unwrap();
        assert_eq!(all.slice(s![PATH_BLOCK..]), tail);
    }

    #[test]
    fn black_scholes_uses_price_increments() {
        let grid = make_time_grid(1.0, 10).unwrap();
        let model = PricingModel::BlackScholes { vol: 0.2 };
        let inc = sample_increment_block(&grid, 0.0, 0, 3, 9).unwrap();
        let out = model.terminal_from_increments(&inc).unwrap();
        for p in 0..3 {
            let w: f64 = inc.dw().row(p).sum();
            assert!((out[p] - (-0.02 + 0.2 * w)).abs() < 1e-15);
        }
    }

    #[test]
    fn models_serialize() {
        let grid = make_time_grid(1.0, 100).unwrap();
        let (k, _) = closed_form_kernel(5, 0.07, 1.0).unwrap();
        let cfg = AbergomiConfig::for_grid(k, ModelParams::benchmark(), &grid);
        let model = PricingModel::ABergomi(Box::new(cfg));
        let json = serde_json::to_string(&model).unwrap();
        let back: PricingModel = serde_json::from_str(&json).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn negative_variance_is_rejected() {
        let grid = make_time_grid(1.0, 2).unwrap();
        let v = Array2::from_elem((1, 3), -1.0);
        assert!(VariancePaths::new(v, grid, ModelParams::benchmark()).is_err());
    }
}
