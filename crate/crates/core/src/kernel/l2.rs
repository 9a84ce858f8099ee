use super::ExpKernel;
use crate::error::{Error, Result};
use crate::quad::GaussLegendre;

/// Default number of mesh cells used by [`kernel_l2_error`].
pub const DEFAULT_L2_PANELS: usize = 200;

const POINTS_PER_PANEL: usize = 10;

/// `‖K^n - K‖_{L²([0,T])}` against the kernel's own target and horizon.
///
/// The mesh is graded towards `τ = 0` through `τ = T v^p` with `v` uniform
/// on `n_quad` cells and `p = q / (2H)`. The factor `τ^{2H-1}` of the
/// squared singular term becomes the polynomial `v^{q-1}`, and `q` is the
/// smallest integer for which the cross term is at least `v^3`.
pub fn kernel_l2_error(k: &ExpKernel, n_quad: usize) -> Result<f64> {
    if n_quad < 100 {
        return Err(Error::invalid(format!("n_quad must be at least 100, got {n_quad}")));
    }
    let h = k.hurst();
    let t = k.horizon();
    let alpha = k.alpha();
    let scale = k.target_scale();
    let mut q = 1.0;
    while q * (h + 0.5) / (2.0 * h) - 1.0 < 3.0 {
        q += 1.0;
    }
    let p = q / (2.0 * h);
    let rule = GaussLegendre::new(POINTS_PER_PANEL);
    let integral = rule.integrate_composite(0.0, 1.0, n_quad, |v| {
        if v <= 0.0 {
            return 0.0;
        }
        let vp1 = v.powf(p - 1.0);
        let tau = t * vp1 * v;
        let jac = t * p * vp1;
        let diff = k.eval(tau) - scale * tau.powf(alpha);
        diff * diff * jac
    });
    Ok(integral.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelTarget;
    use statrs::function::gamma::{gamma, gamma_lr};

    /// `‖K^n - K‖²` expanded into closed-form pieces, using the regularised
    /// lower incomplete gamma function for the cross term.
    fn analytic_l2(k: &ExpKernel) -> f64 {
        let h = k.hurst();
        let t = k.horizon();
        let s = k.target_scale();
        let a = h + 0.5;
        let mut cross = 0.0;
        for (w, x) in k.weights().iter().zip(k.speeds()) {
            cross += w * x.powf(-a) * gamma_lr(a, x * t) * gamma(a);
        }
        (s * s * t.powf(2.0 * h) / (2.0 * h) + k.squared_integral(t) - 2.0 * s * cross).sqrt()
    }

    #[test]
    fn matches_closed_form_expansion() {
        for &h in &[0.07, 0.1, 0.3] {
            for &(w, x) in &[(1.0, 0.5), (2.0, 40.0)] {
                let k = ExpKernel::new(vec![w, 0.3], vec![x, 1e3], h, 1.0, KernelTarget::Power)
                    .unwrap();
                let num = kernel_l2_error(&k, 400).unwrap();
                let ana = analytic_l2(&k);
                assert!((num / ana - 1.0).abs() < 1e-7, "H {h}: {num} vs {ana}");
            }
        }
    }

    #[test]
    fn volterra_target_is_scaled() {
        let k = ExpKernel::new(vec![1.0], vec![2.0], 0.1, 2.0, KernelTarget::Volterra).unwrap();
        let num = kernel_l2_error(&k, 200).unwrap();
        assert!((num / analytic_l2(&k) - 1.0).abs() < 1e-7);
    }

    #[test]
    fn rejects_coarse_mesh() {
        let k = ExpKernel::new(vec![1.0], vec![2.0], 0.1, 1.0, KernelTarget::Power).unwrap();
        assert!(kernel_l2_error(&k, 99).is_err());
    }
}
