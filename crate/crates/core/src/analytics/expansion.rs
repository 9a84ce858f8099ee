//! Second-order vol-of-vol expansion of implied volatility in terms of the
//! autocorrelation functionals `C^{Xξ}`, `C^{ξξ}`, `C^μ`, for a flat initial
//! forward variance curve `ξ0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::GaussLegendre;
use crate::sim::ModelParams;

/// `I(z) = (1-e^{-z})/z`, `J(z) = (z-1+e^{-z})/z²`,
/// `K(z) = (1-e^{-z}-z e^{-z})/z²`, `H(z) = (J(z)-K(z))/z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Helpers {
    pub i: f64,
    pub j: f64,
    pub k: f64,
    pub h: f64,
}

/// Below this the helpers are summed from their Taylor series.
const SERIES_CUTOFF: f64 = 1.0;
const SERIES_TERMS: usize = 30;

/// Evaluates the four helpers. Small arguments use the series
/// `I = Σ (-z)^n/(n+1)!`, `J = Σ (-z)^n/(n+2)!`,
/// `K = Σ (-1)^n (n+1) z^n/(n+2)!`, `H = Σ (-1)^n (n+1) z^n/(n+3)!`,
/// which avoid the cancellation in the closed forms.
///
/// ```
/// let h = roughvol::analytics::helper_functions(0.0).unwrap();
/// assert_eq!((h.i, h.j, h.k), (1.0, 0.5, 0.5));
/// assert!((h.h - 1.0 / 6.0).abs() < 1e-16);
/// ```
pub fn helper_functions(z: f64) -> Result<Helpers> {
    if !(z.is_finite() && z >= 0.0) {
        return Err(Error::invalid(format!("helper argument must be >= 0, got {z}")));
    }
    if z < SERIES_CUTOFF {
        // term_n = (-z)^n / (n+1)!, updated in place
        let (mut i, mut j, mut k, mut h) = (0.0, 0.0, 0.0, 0.0);
        let mut term = 1.0;
        for n in 0..SERIES_TERMS {
            let nf = n as f64;
            let t2 = term / (nf + 2.0);
            let t3 = t2 / (nf + 3.0);
            i += term;
            j += t2;
            k += (nf + 1.0) * t2;
            h += (nf + 1.0) * t3;
            term *= -z / (nf + 2.0);
        }
        return Ok(Helpers { i, j, k, h });
    }
    let e = (-z).exp();
    let z2 = z * z;
    Ok(Helpers {
        i: -(-z).exp_m1() / z,
        j: (z - 1.0 + e) / z2,
        k: (1.0 - e - z * e) / z2,
        h: (z - 2.0 + 2.0 * e + z * e) / (z2 * z),
    })
}

fn helpers(z: f64) -> Helpers {
    helper_functions(z).expect("non-negative argument")
}

/// `(I(y) - I(x)) / (x - y)`, which tends to `K(x)` as `y → x`.
fn i_slope(x: f64, y: f64) -> f64 {
    if (x - y).abs() <= 1e-6 * x.max(y) {
        helpers(0.5 * (x + y)).k
    } else {
        (helpers(y).i - helpers(x).i) / (x - y)
    }
}

/// `C^{Xξ}`, `C^{ξξ}`, `C^μ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionCoeffs {
    pub c_x_xi: f64,
    pub c_xi_xi: f64,
    pub c_mu: f64,
}

/// Two-factor Bergomi model with factors `X`, `Y` of mean-reversion speeds
/// `κ_X > κ_Y`, mixed with weight `θ` on `Y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TwoFactorRepr", into = "TwoFactorRepr")]
pub struct TwoFactorParams {
    omega: f64,
    theta: f64,
    kappa_x: f64,
    kappa_y: f64,
    rho_sx: f64,
    rho_sy: f64,
    rho_xy: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TwoFactorRepr {
    omega: f64,
    theta: f64,
    kappa_x: f64,
    kappa_y: f64,
    rho_sx: f64,
    rho_sy: f64,
    rho_xy: f64,
}

impl TryFrom<TwoFactorRepr> for TwoFactorParams {
    type Error = Error;
    fn try_from(r: TwoFactorRepr) -> Result<Self> {
        TwoFactorParams::new(r.omega, r.theta, r.kappa_x, r.kappa_y, r.rho_sx, r.rho_sy, r.rho_xy)
    }
}

impl From<TwoFactorParams> for TwoFactorRepr {
    fn from(p: TwoFactorParams) -> Self {
        TwoFactorRepr {
            omega: p.omega,
            theta: p.theta,
            kappa_x: p.kappa_x,
            kappa_y: p.kappa_y,
            rho_sx: p.rho_sx,
            rho_sy: p.rho_sy,
            rho_xy: p.rho_xy,
        }
    }
}

impl TwoFactorParams {
    pub fn new(
        omega: f64,
        theta: f64,
        kappa_x: f64,
        kappa_y: f64,
        rho_sx: f64,
        rho_sy: f64,
        rho_xy: f64,
    ) -> Result<Self> {
        let mut bad = Vec::new();
        if !(omega.is_finite() && omega >= 0.0) {
            bad.push(format!("omega must be >= 0, got {omega}"));
        }
        if !(0.0..=1.0).contains(&theta) {
            bad.push(format!("theta must lie in [0, 1], got {theta}"));
        }
        if !(kappa_y.is_finite() && kappa_y > 0.0 && kappa_x.is_finite() && kappa_x > kappa_y) {
            bad.push(format!("need kappa_x > kappa_y > 0, got {kappa_x}, {kappa_y}"));
        }
        for (name, r) in [("rho_sx", rho_sx), ("rho_sy", rho_sy)] {
            if !(r.abs() < 1.0) {
                bad.push(format!("{name} must lie in (-1, 1), got {r}"));
            }
        }
        if !(rho_xy.abs() <= 1.0) {
            bad.push(format!("rho_xy must lie in [-1, 1], got {rho_xy}"));
        }
        if !bad.is_empty() {
            return Err(Error::invalid(bad.join("; ")));
        }
        let p = TwoFactorParams { omega, theta, kappa_x, kappa_y, rho_sx, rho_sy, rho_xy };
        let chi = p.chi();
        if chi.abs() > 1.0 + 1e-12 {
            return Err(Error::invalid(format!("correlations are inconsistent: |chi| = {} > 1", chi.abs())));
        }
        if !p.alpha_theta().is_finite() {
            return Err(Error::invalid("mixing normaliser is infinite (rho_xy = -1, theta = 1/2)"));
        }
        Ok(p)
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn kappa_x(&self) -> f64 {
        self.kappa_x
    }

    pub fn kappa_y(&self) -> f64 {
        self.kappa_y
    }

    pub fn rho_sx(&self) -> f64 {
        self.rho_sx
    }

    pub fn rho_sy(&self) -> f64 {
        self.rho_sy
    }

    pub fn rho_xy(&self) -> f64 {
        self.rho_xy
    }

    /// `((1-θ)² + 2ρ_XY θ(1-θ) + θ²)^{-1/2}`.
    pub fn alpha_theta(&self) -> f64 {
        let t = self.theta;
        ((1.0 - t).powi(2) + 2.0 * self.rho_xy * t * (1.0 - t) + t * t).powf(-0.5)
    }

    /// `(ρ_XY - ρ_SX ρ_SY) / (√(1-ρ_SX²) √(1-ρ_SY²))`.
    pub fn chi(&self) -> f64 {
        (self.rho_xy - self.rho_sx * self.rho_sy)
            / ((1.0 - self.rho_sx.powi(2)).sqrt() * (1.0 - self.rho_sy.powi(2)).sqrt())
    }

    /// Loadings of `X` on the independent drivers `(W¹, W², W³)`, `W¹ = W^S`.
    pub fn loadings_x(&self) -> [f64; 3] {
        let a = 1.0 - self.theta;
        [a * self.rho_sx, a * (1.0 - self.rho_sx.powi(2)).sqrt(), 0.0]
    }

    pub fn loadings_y(&self) -> [f64; 3] {
        let chi = self.chi().clamp(-1.0, 1.0);
        let s = (1.0 - self.rho_sy.powi(2)).sqrt();
        [
            self.theta * self.rho_sy,
            self.theta * chi * s,
            self.theta * ((1.0 - chi * chi) * (1.0 - self.rho_sy.powi(2))).sqrt(),
        ]
    }
}

fn check_t_xi0(t: f64, xi0: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0 && xi0.is_finite() && xi0 > 0.0) {
        return Err(Error::invalid(format!("need T > 0 and xi0 > 0, got {t}, {xi0}")));
    }
    Ok(())
}

struct TwoFactorParts {
    c_x_xi: f64,
    xi_xi_bracket: f64,
    mu1: f64,
    mu1_cross_printed: f64,
    mu2: f64,
    mu2_y_cross_printed: f64,
    scale_xi: f64,
}

fn two_factor_parts(p: &TwoFactorParams, t: f64, xi0: f64) -> Result<TwoFactorParts> {
    check_t_xi0(t, xi0)?;
    let (x, y) = (p.kappa_x * t, p.kappa_y * t);
    let (hx, hy, hxx, hyy, hxy) = (helpers(x), helpers(y), helpers(2.0 * x), helpers(2.0 * y), helpers(x + y));
    let wx = p.loadings_x();
    let wy = p.loadings_y();
    let at = p.alpha_theta();

    let c_x_xi = at * p.omega * xi0.powf(1.5) * t * t * (wx[0] * hx.j + wy[0] * hy.j);

    let (mut w0, mut w_x, mut w_y, mut w_xx, mut w_yy, mut w_xy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..3 {
        let (a, b) = (wx[i] / x, wy[i] / y);
        w0 += (a + b).powi(2);
        w_x -= 2.0 * a * (a + b);
        w_y -= 2.0 * b * (a + b);
        w_xx += a * a;
        w_yy += b * b;
        w_xy += 2.0 * a * b;
    }
    let xi_xi_bracket = w0 + w_x * hx.i + w_y * hy.i + w_xx * hxx.i + w_yy * hyy.i + w_xy * hxy.i;

    let (a, b) = (wx[0], wy[0]);
    let cross = (hx.j - i_slope(x, y)) / y;
    let mu1_common = 0.5 * a * a * hx.h + 0.5 * b * b * hy.h;
    let mu1 = mu1_common + a * b * cross;
    let mu1_cross_printed = mu1_common - a * b * (hy.j - hx.j) / (x + y);
    let rest = (a * a / x + a * b / y) * hx.j - a * a / x * hxx.j - b * b / y * hyy.j - (a * b / x + a * b / y) * hxy.j;
    let mu2 = rest + (b * b / y + a * b / x) * hy.j;
    let mu2_y_cross_printed = rest + (b * b / y + a * b / y) * hy.j;

    Ok(TwoFactorParts {
        c_x_xi,
        xi_xi_bracket,
        mu1,
        mu1_cross_printed,
        mu2,
        mu2_y_cross_printed,
        scale_xi: at * at * xi0 * xi0 * t.powi(3),
    })
}

/// Closed forms of the three functionals for the two-factor model.
///
/// These agree with nested quadrature of the defining integrals (see
/// [`two_factor_coeffs_quadrature`]).
pub fn two_factor_coeffs(p: &TwoFactorParams, t: f64, xi0: f64) -> Result<ExpansionCoeffs> {
    let q = two_factor_parts(p, t, xi0)?;
    let w2 = p.omega * p.omega;
    Ok(ExpansionCoeffs {
        c_x_xi: q.c_x_xi,
        c_xi_xi: w2 * q.scale_xi * q.xi_xi_bracket,
        c_mu: w2 * q.scale_xi * (q.mu1 + q.mu2),
    })
}

/// A commonly reproduced variant of [`two_factor_coeffs`] with a single
/// power of `ω` in `C^{ξξ}`, `ω_1Xω_1Y/(κ_Y T)` in the `J(κ_Y T)` loading and
/// `-ω_1Xω_1Y (J(κ_Y T) - J(κ_X T))/((κ_X+κ_Y)T)` as the cross term of the
/// first `C^μ` part. It does not match the defining integrals and is kept
/// only to quantify the difference.
pub fn two_factor_coeffs_variant(p: &TwoFactorParams, t: f64, xi0: f64) -> Result<ExpansionCoeffs> {
    let q = two_factor_parts(p, t, xi0)?;
    let w2 = p.omega * p.omega;
    Ok(ExpansionCoeffs {
        c_x_xi: q.c_x_xi,
        c_xi_xi: p.omega * q.scale_xi * q.xi_xi_bracket,
        c_mu: w2 * q.scale_xi * (q.mu1_cross_printed + q.mu2_y_cross_printed),
    })
}

/// Nested Gauss-Legendre quadrature of the defining integrals
///
/// * `C^{Xξ} = ∫_0^T du ∫_0^u dt √ξ0 λ_1(t, u)`
/// * `C^{ξξ} = Σ_i ∫_0^T ds (∫_s^T du λ_i(s, u))²`
/// * `C^μ = ∫_0^T ds ∫_s^T du √ξ0 λ_1(s,u) (∫_u^T λ_1(u,t) dt / (2√ξ0) + ∫_s^u √ξ0 ∂λ_1(r,u)/∂ξ0 dr)`
///
/// with `λ_i(t, u) = α_θ ω ξ0 (ω_iX e^{-κ_X(u-t)} + ω_iY e^{-κ_Y(u-t)})`.
/// Every level uses `panels` panels of a 20-point rule.
pub fn two_factor_coeffs_quadrature(p: &TwoFactorParams, t: f64, xi0: f64, panels: usize) -> Result<ExpansionCoeffs> {
    check_t_xi0(t, xi0)?;
    if panels == 0 {
        return Err(Error::invalid("need at least one panel"));
    }
    let rule = GaussLegendre::new(20);
    let wx = p.loadings_x();
    let wy = p.loadings_y();
    let lam0 = p.alpha_theta() * p.omega * xi0;
    let lam = |i: usize, tau: f64| lam0 * (wx[i] * (-p.kappa_x * tau).exp() + wy[i] * (-p.kappa_y * tau).exp());
    let dlam = |tau: f64| lam(0, tau) / xi0;
    let sq = xi0.sqrt();
    let int = |a: f64, b: f64, f: &mut dyn FnMut(f64) -> f64| rule.integrate_composite(a, b, panels, f);

    let c_x_xi = int(0.0, t, &mut |u| int(0.0, u, &mut |s| sq * lam(0, u - s)));
    let mut c_xi_xi = 0.0;
    for i in 0..3 {
        c_xi_xi += int(0.0, t, &mut |s| int(s, t, &mut |u| lam(i, u - s)).powi(2));
    }
    let c_mu = int(0.0, t, &mut |s| {
        int(s, t, &mut |u| {
            let back = int(u, t, &mut |v| lam(0, v - u)) / (2.0 * sq);
            let fwd = int(s, u, &mut |r| sq * dlam(u - r));
            sq * lam(0, u - s) * (back + fwd)
        })
    });
    Ok(ExpansionCoeffs { c_x_xi, c_xi_xi, c_mu })
}

/// Constants `(C_1, C_2)` of the first-order skew
/// `ψ(T) = C_1 (κ_X T - 1 + e^{-κ_X T})/T² + C_2 (κ_Y T - 1 + e^{-κ_Y T})/T²`:
/// `C_1 = α_θ ω ω_1X / (2κ_X²)` and likewise for `Y`.
pub fn two_factor_skew_constants(p: &TwoFactorParams) -> (f64, f64) {
    let s = 0.5 * p.alpha_theta() * p.omega;
    (s * p.loadings_x()[0] / p.kappa_x.powi(2), s * p.loadings_y()[0] / p.kappa_y.powi(2))
}

/// Signed first-order ATM skew of the two-factor model; `ψ(T)` is its
/// absolute value. Equals `C_1 κ_X² J(κ_X T) + C_2 κ_Y² J(κ_Y T)`.
pub fn two_factor_skew_shape(p: &TwoFactorParams, t: f64) -> Result<f64> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::invalid(format!("maturity must be positive, got {t}")));
    }
    let (c1, c2) = two_factor_skew_constants(p);
    let g = |kappa: f64| {
        let z = kappa * t;
        // z - 1 + e^{-z} = z² J(z), written through J to stay accurate for small z
        z * z * helpers(z).j / (t * t)
    };
    Ok(c1 * g(p.kappa_x) + c2 * g(p.kappa_y))
}

/// `C_H = ρ η √(2H) / ((α+1)(α+2))`, so that `C^{Xξ} = C_H ξ0^{3/2} T^{H+3/2}`.
pub fn rbergomi_c_h(params: &ModelParams) -> f64 {
    let a = params.alpha();
    params.rho() * params.eta() * (2.0 * params.hurst()).sqrt() / ((a + 1.0) * (a + 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbergomiCoeffs {
    /// All three functionals by quadrature.
    pub quadrature: ExpansionCoeffs,
    /// `C_H ξ0^{3/2} T^{H+3/2}`.
    pub c_x_xi_closed: f64,
}

/// `∫_a^b (x-a)^p g(x) dx` where `g` may also have a mild power singularity
/// at `b`: `x = a + L v^{1/(p+1)}` removes the first, `v = 1 - (1-r)^4`
/// flattens the second.
fn singular_integral(rule: &GaussLegendre, a: f64, b: f64, p: f64, g: &mut dyn FnMut(f64) -> f64) -> f64 {
    let len = b - a;
    if len <= 0.0 {
        return 0.0;
    }
    let q = 1.0 / (p + 1.0);
    let body = rule.integrate(0.0, 1.0, |r| {
        let w = 1.0 - r;
        let v = 1.0 - w.powi(4);
        4.0 * w.powi(3) * g(a + len * v.powf(q))
    });
    body * len.powf(p + 1.0) * q
}

/// Quadrature of the rBergomi functionals with kernel `(u-s)^α` and a flat
/// curve, plus the closed form of `C^{Xξ}`. `n_quad` is the number of
/// Gauss-Legendre points per level.
pub fn rbergomi_expansion_coeffs(params: &ModelParams, t: f64, n_quad: usize) -> Result<RbergomiCoeffs> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::invalid(format!("maturity must be positive, got {t}")));
    }
    if n_quad < 4 {
        return Err(Error::invalid("need at least 4 quadrature points"));
    }
    let rule = GaussLegendre::new(n_quad);
    let a = params.alpha();
    let xi0 = params.xi0();
    let sq = xi0.sqrt();
    let sv = params.eta() * (2.0 * a + 1.0).sqrt();
    let rho = params.rho();

    let c_x_xi = rho * sv * singular_integral(&rule, 0.0, t, 0.0, &mut |s| {
        sq * singular_integral(&rule, s, t, a, &mut |_u| xi0)
    });
    let c_xi_xi = sv * sv * singular_integral(&rule, 0.0, t, 0.0, &mut |s| {
        singular_integral(&rule, s, t, a, &mut |_u| xi0).powi(2)
    });
    let c_mu = rho * rho * sv * sv * singular_integral(&rule, 0.0, t, 0.0, &mut |s| {
        sq * singular_integral(&rule, s, t, a, &mut |u| {
            let near = crate::quad::integrate_right_singular(&rule, s, u, a, |_r| sq * xi0);
            let far = crate::quad::integrate_left_singular(&rule, u, t, a, |_r| xi0);
            near + 0.5 * sq * far
        })
    });
    let c_x_xi_closed = rbergomi_c_h(params) * xi0.powf(1.5) * t.powf(params.hurst() + 1.5);
    Ok(RbergomiCoeffs { quadrature: ExpansionCoeffs { c_x_xi, c_xi_xi, c_mu }, c_x_xi_closed })
}

/// `σ_BS(k) = atm + skew·k + curvature·k²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BsExpansion {
    /// `√(v/T)`.
    pub sigma_vs: f64,
    pub atm: f64,
    pub skew: f64,
    pub curvature: f64,
}

impl BsExpansion {
    pub fn eval(&self, k: f64) -> f64 {
        self.atm + (self.skew + self.curvature * k) * k
    }
}

/// Second-order expansion coefficients for total variance `v` to `T`.
pub fn bs_expansion(c: &ExpansionCoeffs, v: f64, t: f64, epsilon: f64) -> Result<BsExpansion> {
    if !(v.is_finite() && v > 0.0 && t.is_finite() && t > 0.0) {
        return Err(Error::invalid(format!("need v > 0 and T > 0, got {v}, {t}")));
    }
    let sig = (v / t).sqrt();
    let (cx, cxx, cm) = (c.c_x_xi, c.c_xi_xi, c.c_mu);
    let e2 = epsilon * epsilon;
    let atm = sig
        * (1.0
            + epsilon * cx / (4.0 * v)
            + e2 / (32.0 * v.powi(3)) * (12.0 * cx * cx - v * (v + 4.0) * cxx + 4.0 * v * (v - 4.0) * cm));
    let skew = sig * (epsilon * cx / (2.0 * v * v) + e2 / (8.0 * v.powi(3)) * (4.0 * cm * v - 3.0 * cx * cx));
    let curvature = sig * e2 / (8.0 * v.powi(4)) * (4.0 * cm * v + cxx * v - 6.0 * cx * cx);
    Ok(BsExpansion { sigma_vs: sig, atm, skew, curvature })
}

/// Second-order implied vol at log-moneyness `k`.
pub fn sigma_bs_expansion(c: &ExpansionCoeffs, v: f64, t: f64, k: f64, epsilon: f64) -> Result<f64> {
    Ok(bs_expansion(c, v, t, epsilon)?.eval(k))
}

/// First-order truncation `σ^{VS} (1 + (1/(4v) + k/(2v²)) C^{Xξ} ε)`.
pub fn sigma_bs_first_order(c_x_xi: f64, v: f64, t: f64, k: f64, epsilon: f64) -> Result<f64> {
    if !(v > 0.0 && t > 0.0) {
        return Err(Error::invalid(format!("need v > 0 and T > 0, got {v}, {t}")));
    }
    let sig = (v / t).sqrt();
    Ok(sig + (0.25 / v + 0.5 * k / (v * v)) * c_x_xi * sig * epsilon)
}
