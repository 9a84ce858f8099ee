//! ATM skew `ψ(T) = |∂σ_BS/∂k|_{k=0}` by central differences, and its
//! power-law fit in `T`.

use serde::{Deserialize, Serialize};

use super::smile::SmileResult;
use crate::error::{Error, Result};

pub const DEFAULT_SKEW_BUMP: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewPoint {
    pub maturity: f64,
    /// `|σ(dk) - σ(-dk)| / (2 dk)`.
    pub psi: f64,
    /// Conservative standard error (vol errors added, ignoring the positive
    /// correlation that common random numbers induce).
    pub stderr: f64,
    /// The same estimate with bump `dk / 2`.
    pub psi_half_bump: f64,
    /// `(4 ψ_{dk/2} - ψ_dk) / 3`.
    pub richardson: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub intercept: f64,
    /// RMS residual of `log ψ` about the line.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewReport {
    pub bump: f64,
    /// Maturities with a positive, significant skew estimate.
    pub points: Vec<SkewPoint>,
    /// Estimates that are zero or within two standard errors of zero.
    pub flagged: Vec<SkewPoint>,
    /// `None` when fewer than three maturities survive.
    pub fit: Option<PowerLawFit>,
}

impl SkewReport {
    pub fn maturities(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.maturity).collect()
    }

    pub fn psi(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.psi).collect()
    }
}

fn vol_at(s: &SmileResult, k: f64) -> Result<(f64, f64)> {
    s.points
        .iter()
        .find(|p| (p.log_moneyness - k).abs() < 1e-14)
        .map(|p| (p.implied_vol, p.vol_stderr))
        .ok_or_else(|| Error::Numerical(format!("smile at T = {} has no vol at k = {k}", s.maturity)))
}

/// ATM skew at each maturity. `smile_fn(T, ks)` must return a smile on the
/// requested log-moneyness grid; for Monte Carlo smiles it should price all
/// strikes of one maturity on the same paths.
pub fn atm_skew<F>(mut smile_fn: F, maturities: &[f64], dk: f64) -> Result<SkewReport>
where
    F: FnMut(f64, &[f64]) -> Result<SmileResult>,
{
    if !(dk.is_finite() && dk > 0.0) {
        return Err(Error::invalid(format!("bump must be positive, got {dk}")));
    }
    if maturities.is_empty() || maturities.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(Error::invalid("maturities must be positive"));
    }
    let ks = [-dk, -0.5 * dk, 0.5 * dk, dk];
    let mut points = Vec::new();
    let mut flagged = Vec::new();
    for &t in maturities {
        let smile = smile_fn(t, &ks)?;
        let (vm, em) = vol_at(&smile, -dk)?;
        let (vp, ep) = vol_at(&smile, dk)?;
        let (hm, _) = vol_at(&smile, -0.5 * dk)?;
        let (hp, _) = vol_at(&smile, 0.5 * dk)?;
        let psi = (vp - vm).abs() / (2.0 * dk);
        let psi_half_bump = (hp - hm).abs() / dk;
        let pt = SkewPoint {
            maturity: t,
            psi,
            stderr: (em + ep) / (2.0 * dk),
            psi_half_bump,
            richardson: (4.0 * psi_half_bump - psi) / 3.0,
        };
        if psi > 0.0 && psi >= 2.0 * pt.stderr {
            points.push(pt);
        } else {
            flagged.push(pt);
        }
    }
    let fit = if points.len() >= 3 {
        let x: Vec<f64> = points.iter().map(|p| p.maturity.ln()).collect();
        let y: Vec<f64> = points.iter().map(|p| p.psi.ln()).collect();
        Some(fit_line(&x, &y))
    } else {
        None
    };
    Ok(SkewReport { bump: dk, points, flagged, fit })
}

/// Least-squares line `y = intercept + exponent · x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> PowerLawFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let ss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - exponent * a).powi(2)).sum();
    PowerLawFit { exponent, intercept, residual: (ss / n).sqrt() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn power_smile(t: f64, ks: &[f64]) -> Result<SmileResult> {
        let slope = -0.3 * t.powf(-0.4);
        let vols: Vec<f64> = ks.iter().map(|k| 0.2 + slope * k + 0.5 * k * k).collect();
        SmileResult::from_vols(t, ks, &vols, "toy")
    }

    #[test]
    fn recovers_power_law_exactly() {
        let r = atm_skew(power_smile, &[0.1, 0.5, 1.0, 2.0], 0.01).unwrap();
        let fit = r.fit.unwrap();
        assert!((fit.exponent + 0.4).abs() < 1e-10);
        assert!((fit.intercept - 0.3f64.ln()).abs() < 1e-10);
        assert!(fit.residual < 1e-10);
        for p in &r.points {
            assert!((p.psi - p.psi_half_bump).abs() < 1e-10);
        }
    }

    #[test]
    fn flat_smile_is_flagged() {
        let r = atm_skew(|t, ks| SmileResult::from_vols(t, ks, &vec![0.2; ks.len()], "flat"), &[0.5, 1.0, 2.0], 0.01)
            .unwrap();
        assert!(r.points.is_empty());
        assert_eq!(r.flagged.len(), 3);
        assert!(r.fit.is_none());
    }

    #[test]
    fn bad_inputs() {
        assert!(atm_skew(power_smile, &[1.0], 0.0).is_err());
        assert!(atm_skew(power_smile, &[0.0], 0.01).is_err());
    }
}
