use proptest::prelude::*;

use roughvol::analytics::*;
use roughvol::hybrid::{simulate_volterra, HybridPlan};
use roughvol::kernel::{closed_form_kernel, laplace_mu, power_kernel};
use roughvol::models::*;
use roughvol::sim::*;

fn small_grid() -> impl Strategy<Value = (f64, usize)> {
    (0.1f64..3.0, 2usize..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn volterra_is_linear_in_increments((t, n) in small_grid(), alpha in -0.48f64..-0.02, c in -3.0f64..3.0, seed in any::<u64>()) {
        let grid = make_time_grid(t, n).unwrap();
        let plan = HybridPlan::new(grid, alpha).unwrap();
        let inc = sample_correlated_increments(&grid, 0.3, 4, seed).unwrap();
        let x = simulate_volterra(&plan, &inc).unwrap();
        let xc = simulate_volterra(&plan, &inc.scaled(c)).unwrap();
        for (a, b) in x.values().iter().zip(xc.values()) {
            prop_assert!((c * a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
        let zero = simulate_volterra(&plan, &inc.scaled(0.0)).unwrap();
        prop_assert!(zero.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn increments_are_reproducible((t, n) in small_grid(), rho in -1.0f64..=1.0, seed in any::<u64>(), first in 0usize..50) {
        let grid = make_time_grid(t, n).unwrap();
        let a = sample_increment_block(&grid, rho, first, 3, seed).unwrap();
        let b = sample_increment_block(&grid, rho, first, 3, seed).unwrap();
        prop_assert_eq!(a.dw(), b.dw());
        prop_assert_eq!(a.db(), b.db());
        prop_assert_eq!(a.near(), b.near());
    }

    #[test]
    fn variance_is_positive(seed in any::<u64>(), n_terms in 1usize..12, steps in 4usize..60) {
        let params = ModelParams::benchmark();
        let grid = make_time_grid(1.0, steps).unwrap();
        let inc = sample_correlated_increments(&grid, params.rho(), 8, seed).unwrap();
        let plan = HybridPlan::new(grid, params.alpha()).unwrap();
        let v = rbergomi_variance(&simulate_volterra(&plan, &inc).unwrap(), &params).unwrap();
        prop_assert!(v.values().iter().all(|x| *x > 0.0));
        let (k, _) = closed_form_kernel(n_terms, params.hurst(), 1.0).unwrap();
        let cfg = AbergomiConfig::untruncated(k, params);
        let y = abergomi_driver(&cfg, &inc).unwrap();
        let va = abergomi_variance(&cfg, &grid, &y).unwrap();
        prop_assert!(va.values().iter().all(|x| *x > 0.0));
    }

    #[test]
    fn closed_form_kernel_is_certified(n in 1usize..80, hurst in 0.03f64..0.47, horizon in 0.25f64..4.0) {
        let (k, cert) = closed_form_kernel(n, hurst, horizon).unwrap();
        prop_assert!(cert.holds(), "{} > {}", cert.l2_error, cert.bound);
        for i in 1..=20 {
            let tau = horizon * i as f64 / 20.0;
            prop_assert!(k.eval(tau) > 0.0);
            prop_assert!(k.derivative(tau, 1) < 0.0);
            prop_assert!(k.derivative(tau, 2) > 0.0);
        }
    }

    #[test]
    fn otm_implied_vol_round_trip(k in 0.6f64..1.6, t in 0.05f64..3.0, vol in 0.05f64..1.0) {
        let p = bs_otm_price(1.0, k, t, vol).unwrap();
        prop_assume!(p > 1e-280);
        let iv = implied_vol_otm(p, 1.0, k, t).unwrap();
        prop_assert!((iv - vol).abs() <= 1e-8, "{iv} vs {vol}");
    }

    #[test]
    fn call_implied_vol_round_trip_when_time_value_is_resolved(k in 0.6f64..1.6, t in 0.05f64..3.0, vol in 0.05f64..1.0) {
        let p = bs_price(1.0, k, t, vol).unwrap();
        // a vol error of 1e-8 must move the price by more than rounding noise
        prop_assume!(1e-8 * bs_vega(1.0, k, t, vol).unwrap() > 8.0 * f64::EPSILON * p);
        let iv = implied_vol(p, 1.0, k, t).unwrap();
        prop_assert!((iv - vol).abs() <= 1e-8, "{iv} vs {vol}");
    }

    #[test]
    fn smile_rmse_is_a_metric(
        a in prop::collection::vec(0.05f64..1.0, 5),
        b in prop::collection::vec(0.05f64..1.0, 5),
        c in prop::collection::vec(0.05f64..1.0, 5),
    ) {
        let ks = uniform_log_moneyness(-0.2, 0.2, 5).unwrap();
        let sa = SmileResult::from_vols(1.0, &ks, &a, "a").unwrap();
        let sb = SmileResult::from_vols(1.0, &ks, &b, "b").unwrap();
        let sc = SmileResult::from_vols(1.0, &ks, &c, "c").unwrap();
        let ab = smile_rmse(&sa, &sb).unwrap();
        prop_assert_eq!(ab, smile_rmse(&sb, &sa).unwrap());
        prop_assert_eq!(smile_rmse(&sa, &sa).unwrap(), 0.0);
        prop_assert_eq!(ab == 0.0, a == b);
        let ac = smile_rmse(&sa, &sc).unwrap();
        let cb = smile_rmse(&sc, &sb).unwrap();
        prop_assert!(ab <= ac + cb + 1e-15);
    }

    #[test]
    fn expansion_skew_is_recovered_by_finite_differences(
        omega in 0.5f64..3.0,
        theta in 0.0f64..1.0,
        ky in 0.1f64..2.0,
        gap in 0.5f64..10.0,
        rsx in -0.95f64..0.95,
        rsy in -0.95f64..0.95,
        chi in -0.99f64..0.99,
        xi0 in 0.01f64..0.1,
    ) {
        let rxy = rsx * rsy + chi * ((1.0 - rsx * rsx) * (1.0 - rsy * rsy)).sqrt();
        let p = TwoFactorParams::new(omega, theta, ky + gap, ky, rsx, rsy, rxy).unwrap();
        let maturities = [0.25, 0.5, 1.0, 2.0];
        let rep = atm_skew(
            |t, ks| {
                let c = two_factor_coeffs(&p, t, xi0)?;
                let vols: Vec<f64> = ks
                    .iter()
                    .map(|&k| sigma_bs_first_order(c.c_x_xi, xi0 * t, t, k, 1.0))
                    .collect::<roughvol::Result<_>>()?;
                SmileResult::from_vols(t, ks, &vols, "bergomi2f")
            },
            &maturities,
            DEFAULT_SKEW_BUMP,
        )
        .unwrap();
        for pt in rep.points.iter().chain(&rep.flagged) {
            let s = two_factor_skew_shape(&p, pt.maturity).unwrap().abs();
            prop_assert!((pt.psi - s).abs() <= 1e-6 * s.max(1.0), "{} vs {}", pt.psi, s);
        }
    }
}

#[test]
fn laplace_representation_matches_power_kernel() {
    for h in [0.07, 0.1, 0.3] {
        for i in 0..=19 {
            let tau = 0.1 + 0.1 * i as f64;
            let exact = power_kernel(tau, h).unwrap();
            let approx = laplace_mu(tau, h, 2e4, 400_000).unwrap();
            assert!((approx / exact - 1.0).abs() <= 1e-3, "H={h} tau={tau}: {approx} vs {exact}");
        }
    }
}
