//! Black-Scholes inversion, Monte Carlo smiles, ATM skew and the
//! vol-of-vol expansion.

mod bs;
mod expansion;
mod skew;
mod smile;

pub use bs::{
    bs_otm_price, bs_price, bs_vega, implied_vol, implied_vol_otm, IV_GRID_MATURITIES, IV_GRID_STRIKES, IV_GRID_VOLS,
};
pub use expansion::{
    bs_expansion, helper_functions, rbergomi_c_h, rbergomi_expansion_coeffs, sigma_bs_expansion,
    sigma_bs_first_order, two_factor_coeffs, two_factor_coeffs_quadrature, two_factor_coeffs_variant,
    two_factor_skew_constants, two_factor_skew_shape, BsExpansion, ExpansionCoeffs, Helpers, RbergomiCoeffs,
    TwoFactorParams,
};
pub use skew::{atm_skew, fit_line, PowerLawFit, SkewPoint, SkewReport, DEFAULT_SKEW_BUMP};
pub use smile::{
    default_log_moneyness, mc_smile, smile_rmse, uniform_log_moneyness, SkippedStrike, SmilePoint, SmileResult,
};
