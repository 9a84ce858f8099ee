use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use super::{check_hurst, kernel_l2_error, ExpKernel, KernelTarget, DEFAULT_L2_PANELS};
use crate::error::{Error, Result};

/// Measured `L²([0,T])` distance of a closed-form kernel to `τ^α`, next to
/// the certified bound `C n^{-4H/5}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelErrorCert {
    pub l2_error: f64,
    pub bound: f64,
    pub constant: f64,
    pub pi_n: f64,
}

impl KernelErrorCert {
    pub fn holds(&self) -> bool {
        self.l2_error <= self.bound
    }
}

/// Explicit `n`-term kernel: the measure `μ` is cut into cells
/// `[(i-1)π_n, iπ_n)`, each cell's mass becomes a weight and its first
/// moment ratio a speed.
///
/// ```
/// use roughvol::kernel::closed_form_kernel;
///
/// let (k, cert) = closed_form_kernel(25, 0.07, 1.0).unwrap();
/// assert_eq!(k.n(), 25);
/// assert!(cert.l2_error <= cert.bound);
/// ```
pub fn closed_form_kernel(n: usize, hurst: f64, horizon: f64) -> Result<(ExpKernel, KernelErrorCert)> {
    if n == 0 {
        return Err(Error::invalid("closed-form kernel needs at least one term"));
    }
    check_hurst(hurst)?;
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
    }
    let b = 0.5 - hurst;
    let ratio = 10f64.sqrt() * b / (2.5 - hurst);
    let pi_n = (n as f64).powf(-0.2) / horizon * ratio.powf(0.4);
    let gamma_b = gamma(b);

    let mut weights = Vec::with_capacity(n);
    let mut speeds = Vec::with_capacity(n);
    for i in 1..=n {
        let hi = i as f64 * pi_n;
        let lo = (i - 1) as f64 * pi_n;
        let mass = hi.powf(b) - lo.powf(b);
        let moment = hi.powf(1.5 - hurst) - lo.powf(1.5 - hurst);
        weights.push(mass / (b * gamma_b));
        speeds.push((1.0 - 2.0 * hurst) / (3.0 - 2.0 * hurst) * moment / mass);
    }
    let kernel = ExpKernel::new(weights, speeds, hurst, horizon, KernelTarget::Power)?;

    let constant = 1.0 / (2f64.sqrt() * hurst * gamma_b)
        * horizon.powf(hurst)
        * ratio.powf(-2.5 * hurst)
        * (2.5 / (2.5 - hurst));
    let bound = constant * (n as f64).powf(-0.8 * hurst);
    let l2_error = kernel_l2_error(&kernel, DEFAULT_L2_PANELS)?;
    Ok((kernel, KernelErrorCert { l2_error, bound, constant, pi_n }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_width() {
        // (√10 · 0.43 / 2.43)^{2/5}
        let c = (10f64.sqrt() * 0.43 / 2.43).powf(0.4);
        assert!((c - 0.7928).abs() < 5e-4);
        for n in [1, 5, 25, 100] {
            let (_, cert) = closed_form_kernel(n, 0.07, 1.0).unwrap();
            assert!((cert.pi_n - c * (n as f64).powf(-0.2)).abs() < 1e-14);
        }
    }

    #[test]
    fn speeds_lie_inside_their_cells() {
        for &h in &[0.07, 0.1, 0.3] {
            let (k, cert) = closed_form_kernel(50, h, 1.0).unwrap();
            for (i, x) in k.speeds().iter().enumerate() {
                let lo = i as f64 * cert.pi_n;
                assert!(*x > lo && *x < lo + cert.pi_n, "H {h} i {i}");
            }
        }
    }

    #[test]
    fn single_term_weight() {
        let (k, cert) = closed_form_kernel(1, 0.07, 1.0).unwrap();
        let expect = cert.pi_n.powf(0.43) / (0.43 * gamma(0.43));
        assert!((k.weights()[0] - expect).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(closed_form_kernel(0, 0.07, 1.0).is_err());
        assert!(closed_form_kernel(5, 0.5, 1.0).is_err());
        assert!(closed_form_kernel(5, 0.07, 0.0).is_err());
    }
}
