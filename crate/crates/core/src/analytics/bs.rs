//! Black-Scholes call prices and implied volatility, zero rates.

use statrs::function::erf::erfc;

use crate::error::{Error, PriceBound, Result};

/// Strike ratios `K/S0` of the round-trip check grid.
pub const IV_GRID_STRIKES: [f64; 11] = [0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6];
/// Maturities of the round-trip check grid.
pub const IV_GRID_MATURITIES: [f64; 7] = [0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 3.0];
/// Volatilities of the round-trip check grid.
pub const IV_GRID_VOLS: [f64; 7] = [0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0];

fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if !(x.is_finite() && x > 0.0) {
        return Err(Error::invalid(format!("{name} must be positive and finite, got {x}")));
    }
    Ok(())
}

/// Price of the out-of-the-money option: the call when `K >= S0`, else the put.
/// Computing it directly avoids the cancellation in `call - intrinsic`.
fn otm_price(s0: f64, k: f64, t: f64, vol: f64) -> f64 {
    let sd = vol * t.sqrt();
    let d1 = ((s0 / k).ln() + 0.5 * sd * sd) / sd;
    let d2 = d1 - sd;
    if k >= s0 {
        (s0 * norm_cdf(d1) - k * norm_cdf(d2)).max(0.0)
    } else {
        (k * norm_cdf(-d2) - s0 * norm_cdf(-d1)).max(0.0)
    }
}

/// Black-Scholes call value with zero rates and dividends.
///
/// ```
/// let c = roughvol::analytics::bs_price(1.0, 1.0, 1.0, 0.2).unwrap();
/// assert!((c - 0.0796557).abs() < 1e-7);
/// ```
pub fn bs_price(s0: f64, k: f64, t: f64, vol: f64) -> Result<f64> {
    check_positive("spot", s0)?;
    check_positive("strike", k)?;
    check_positive("maturity", t)?;
    check_positive("volatility", vol)?;
    Ok(otm_price(s0, k, t, vol) + (s0 - k).max(0.0))
}

/// `∂C/∂σ`.
pub fn bs_vega(s0: f64, k: f64, t: f64, vol: f64) -> Result<f64> {
    check_positive("spot", s0)?;
    check_positive("strike", k)?;
    check_positive("maturity", t)?;
    check_positive("volatility", vol)?;
    let sd = vol * t.sqrt();
    let d1 = ((s0 / k).ln() + 0.5 * sd * sd) / sd;
    Ok(s0 * norm_pdf(d1) * t.sqrt())
}

/// Price of the out-of-the-money option at strike `k`: the call when
/// `K >= S0`, the put otherwise.
pub fn bs_otm_price(s0: f64, k: f64, t: f64, vol: f64) -> Result<f64> {
    check_positive("spot", s0)?;
    check_positive("strike", k)?;
    check_positive("maturity", t)?;
    check_positive("volatility", vol)?;
    Ok(otm_price(s0, k, t, vol))
}

/// Implied volatility of a call price.
///
/// The time value is matched against the out-of-the-money option, first by
/// bisection on a bracket, then by Newton steps on the log price kept inside
/// the bracket. Prices on or outside `(max(S0 - K, 0), S0)` are rejected with
/// [`Error::PriceOutOfBounds`].
///
/// Deep in the money the call price can hold no time value at all in `f64`
/// (e.g. `K = 0.6`, `T = 0.05`, `σ = 0.2`); such prices sit on the lower
/// bound and cannot be inverted. [`implied_vol_otm`] avoids this.
pub fn implied_vol(price: f64, s0: f64, k: f64, t: f64) -> Result<f64> {
    check_positive("spot", s0)?;
    check_positive("strike", k)?;
    check_positive("maturity", t)?;
    if !price.is_finite() {
        return Err(Error::invalid(format!("price must be finite, got {price}")));
    }
    let intrinsic = (s0 - k).max(0.0);
    if price <= intrinsic {
        return Err(Error::PriceOutOfBounds { price, bound: PriceBound::Lower, limit: intrinsic });
    }
    if price >= s0 {
        return Err(Error::PriceOutOfBounds { price, bound: PriceBound::Upper, limit: s0 });
    }
    solve(price - intrinsic, s0, k, t)
}

/// Implied volatility from the out-of-the-money price (put below the spot,
/// call at or above it), valid on `(0, min(S0, K))`.
pub fn implied_vol_otm(price: f64, s0: f64, k: f64, t: f64) -> Result<f64> {
    check_positive("spot", s0)?;
    check_positive("strike", k)?;
    check_positive("maturity", t)?;
    if !price.is_finite() {
        return Err(Error::invalid(format!("price must be finite, got {price}")));
    }
    if price <= 0.0 {
        return Err(Error::PriceOutOfBounds { price, bound: PriceBound::Lower, limit: 0.0 });
    }
    let upper = if k >= s0 { s0 } else { k };
    if price >= upper {
        return Err(Error::PriceOutOfBounds { price, bound: PriceBound::Upper, limit: upper });
    }
    solve(price, s0, k, t)
}

fn solve(target: f64, s0: f64, k: f64, t: f64) -> Result<f64> {
    let ln_target = target.ln();
    let f = |v: f64| otm_price(s0, k, t, v);

    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while f(hi) < target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Numerical(format!("no volatility reproduces time value {target}")));
        }
    }
    // bisection until the bracket is tight enough for Newton on ln(price)
    for _ in 0..200 {
        if hi - lo <= 1e-3 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut v = 0.5 * (lo + hi);
    for _ in 0..100 {
        let p = f(v);
        if p <= 0.0 {
            lo = v;
            v = 0.5 * (v + hi);
            continue;
        }
        if p < target {
            lo = v;
        } else {
            hi = v;
        }
        let sd = v * t.sqrt();
        let d1 = ((s0 / k).ln() + 0.5 * sd * sd) / sd;
        let vega = s0 * norm_pdf(d1) * t.sqrt();
        let step = (p.ln() - ln_target) * p / vega;
        let mut next = v - step;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        let done = (next - v).abs() <= 1e-15 * v || hi - lo <= 1e-15 * hi;
        v = next;
        if done {
            break;
        }
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atm_reference_value() {
        // 0.2 * sqrt(1) ATM: 2 N(0.1) - 1 = erf(0.1 / sqrt 2)
        let c = bs_price(1.0, 1.0, 1.0, 0.2).unwrap();
        assert!((c - 0.07965567455405796).abs() < 1e-15);
    }

    #[test]
    fn limits() {
        assert!((bs_price(1.2, 1.0, 1.0, 1e-9).unwrap() - 0.2).abs() < 1e-15);
        assert!(bs_price(0.8, 1.0, 1.0, 1e-9).unwrap().abs() < 1e-15);
        assert!((bs_price(1.0, 1e-12, 1.0, 0.3).unwrap() - 1.0).abs() < 1e-11);
    }

    #[test]
    fn bad_inputs() {
        assert!(matches!(bs_price(1.0, 0.0, 1.0, 0.2), Err(Error::InvalidArgument(_))));
        assert!(matches!(bs_price(1.0, 1.0, -1.0, 0.2), Err(Error::InvalidArgument(_))));
        assert!(matches!(bs_price(1.0, 1.0, 1.0, 0.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn round_trip() {
        for &(k, t, v) in &[(1.0, 1.0, 0.2), (0.7, 0.5, 0.4), (1.3, 2.0, 0.15), (1.0, 0.05, 0.05)] {
            let p = bs_price(1.0, k, t, v).unwrap();
            let iv = implied_vol(p, 1.0, k, t).unwrap();
            assert!((iv - v).abs() < 1e-10, "k={k} t={t}: {iv}");
        }
    }

    #[test]
    fn deep_otm_small_price() {
        let k = 0.4f64.exp();
        let p = bs_price(1.0, k, 0.25, 0.3).unwrap();
        assert!(p < 1e-3);
        let iv = implied_vol(p, 1.0, k, 0.25).unwrap();
        assert!((iv - 0.3).abs() < 1e-12);
    }

    #[test]
    fn bounds_are_named() {
        match implied_vol(0.1, 1.2, 1.0, 1.0) {
            Err(Error::PriceOutOfBounds { bound: PriceBound::Lower, .. }) => {}
            other => panic!("{other:?}"),
        }
        match implied_vol(1.0, 1.0, 1.0, 1.0) {
            Err(Error::PriceOutOfBounds { bound: PriceBound::Upper, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn otm_inversion_keeps_deep_itm_information() {
        // the call price is exactly intrinsic here, the put is not
        let (k, t, v) = (0.6, 0.05, 0.2);
        assert_eq!(bs_price(1.0, k, t, v).unwrap(), 0.4);
        let put = bs_otm_price(1.0, k, t, v).unwrap();
        assert!(put > 0.0 && put < 1e-20);
        assert!((implied_vol_otm(put, 1.0, k, t).unwrap() - v).abs() < 1e-12);
        assert!(matches!(
            implied_vol_otm(0.7, 1.0, k, t),
            Err(Error::PriceOutOfBounds { bound: PriceBound::Upper, .. })
        ));
    }

    #[test]
    fn vega_matches_finite_difference() {
        let h = 1e-6;
        let fd = (bs_price(1.0, 1.1, 0.7, 0.3 + h).unwrap() - bs_price(1.0, 1.1, 0.7, 0.3 - h).unwrap()) / (2.0 * h);
        assert!((bs_vega(1.0, 1.1, 0.7, 0.3).unwrap() - fd).abs() < 1e-8);
    }
}
