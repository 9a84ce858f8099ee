//! Monte Carlo smiles from terminal log-prices (`S_0 = 1`, zero rates).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bs::{bs_price, bs_vega, implied_vol};
use crate::error::{Error, Result};

/// `n` log-moneyness points uniform on `[lo, hi]`.
pub fn uniform_log_moneyness(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 || !(lo < hi) {
        return Err(Error::invalid("need at least two points on a non-empty interval"));
    }
    Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
}

/// Default strike grid: 21 points on `[-0.2, 0.2]`.
pub fn default_log_moneyness() -> Vec<f64> {
    uniform_log_moneyness(-0.2, 0.2, 21).unwrap()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmilePoint {
    pub log_moneyness: f64,
    pub strike: f64,
    pub implied_vol: f64,
    /// Call price.
    pub price: f64,
    /// Standard error of `price`.
    pub stderr: f64,
    /// `stderr / vega`, the first-order error of `implied_vol`.
    pub vol_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedStrike {
    pub log_moneyness: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmileResult {
    pub maturity: f64,
    pub points: Vec<SmilePoint>,
    pub skipped: Vec<SkippedStrike>,
    pub n_paths: usize,
    pub model: String,
    pub seed: Option<u64>,
}

impl SmileResult {
    pub fn log_moneyness(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.log_moneyness).collect()
    }

    pub fn implied_vols(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.implied_vol).collect()
    }

    pub fn with_tag(mut self, model: impl Into<String>, seed: Option<u64>) -> Self {
        self.model = model.into();
        self.seed = seed;
        self
    }

    /// Multiplies every implied vol (and its error) by `factor`; prices are
    /// recomputed so they stay consistent with the vols.
    pub fn scale_vols(mut self, factor: f64) -> Result<Self> {
        if factor == 1.0 {
            return Ok(self);
        }
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::invalid(format!("vol factor must be positive, got {factor}")));
        }
        for p in &mut self.points {
            p.implied_vol *= factor;
            p.vol_stderr *= factor;
            p.price = bs_price(1.0, p.strike, self.maturity, p.implied_vol)?;
        }
        Ok(self)
    }

    /// Smile from given vols, e.g. an analytic expansion. Errors are zero.
    pub fn from_vols(maturity: f64, log_moneyness: &[f64], vols: &[f64], model: impl Into<String>) -> Result<Self> {
        if log_moneyness.len() != vols.len() {
            return Err(Error::invalid("strike and vol vectors differ in length"));
        }
        let points = log_moneyness
            .iter()
            .zip(vols)
            .map(|(&k, &v)| {
                let strike = k.exp();
                Ok(SmilePoint {
                    log_moneyness: k,
                    strike,
                    implied_vol: v,
                    price: bs_price(1.0, strike, maturity, v)?,
                    stderr: 0.0,
                    vol_stderr: 0.0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SmileResult { maturity, points, skipped: vec![], n_paths: 0, model: model.into(), seed: None })
    }
}

/// Smile from terminal log-prices.
///
/// Every strike is priced with the call payoff, so differences between
/// neighbouring strikes on the same paths are call spreads with bounded
/// payoff (an out-of-the-money put plus parity would add the sampling error
/// of `E[S_T]` to one side only). Sums run
/// sequentially per strike, so the result does not depend on the thread
/// count. Strikes whose payoffs are all zero, or whose price falls outside
/// the arbitrage bounds, are listed in `skipped`.
pub fn mc_smile(log_prices: &[f64], log_moneyness: &[f64], maturity: f64) -> Result<SmileResult> {
    if log_prices.len() < 2 {
        return Err(Error::invalid("need at least two paths"));
    }
    if !(maturity.is_finite() && maturity > 0.0) {
        return Err(Error::invalid(format!("maturity must be positive, got {maturity}")));
    }
    if log_prices.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("terminal log-prices are not finite".into()));
    }
    let n = log_prices.len() as f64;
    let results: Vec<std::result::Result<SmilePoint, SkippedStrike>> = log_moneyness
        .par_iter()
        .map(|&k| {
            let strike = k.exp();
            let (mut sum, mut sum_sq, mut hits) = (0.0, 0.0, 0usize);
            for &x in log_prices {
                let s = x.exp();
                let pay = (s - strike).max(0.0);
                if pay > 0.0 {
                    hits += 1;
                    sum += pay;
                    sum_sq += pay * pay;
                }
            }
            let skip = |reason: String| SkippedStrike { log_moneyness: k, reason };
            if hits == 0 {
                return Err(skip("all payoffs are zero".into()));
            }
            let mean = sum / n;
            let var = ((sum_sq / n - mean * mean) * n / (n - 1.0)).max(0.0);
            let stderr = (var / n).sqrt();
            let price = mean;
            let iv = implied_vol(price, 1.0, strike, maturity).map_err(|e| skip(e.to_string()))?;
            let vega = bs_vega(1.0, strike, maturity, iv).map_err(|e| skip(e.to_string()))?;
            Ok(SmilePoint { log_moneyness: k, strike, implied_vol: iv, price, stderr, vol_stderr: stderr / vega })
        })
        .collect();
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(p) => points.push(p),
            Err(s) => skipped.push(s),
        }
    }
    Ok(SmileResult { maturity, points, skipped, n_paths: log_prices.len(), model: String::new(), seed: None })
}

/// Root-mean-square difference of implied vols over identical strike grids.
pub fn smile_rmse(a: &SmileResult, b: &SmileResult) -> Result<f64> {
    if (a.maturity - b.maturity).abs() > 1e-12 * a.maturity.abs().max(1.0) {
        return Err(Error::invalid(format!("maturities differ: {} vs {}", a.maturity, b.maturity)));
    }
    if a.points.len() != b.points.len()
        || a.points.iter().zip(&b.points).any(|(p, q)| (p.log_moneyness - q.log_moneyness).abs() > 1e-12)
    {
        return Err(Error::invalid("smiles are on different strike grids"));
    }
    if a.points.is_empty() {
        return Err(Error::invalid("smiles have no points"));
    }
    let ss: f64 = a.points.iter().zip(&b.points).map(|(p, q)| (p.implied_vol - q.implied_vol).powi(2)).sum();
    Ok((ss / a.points.len() as f64).sqrt())
}
