use ndarray::{Array2, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::VariancePaths;
use crate::error::{Error, Result};
use crate::kernel::ExpKernel;
use crate::sim::{ModelParams, PathIncrements, TimeGrid};

/// Squares of the smile multiplication factors, keyed by step count.
pub const MULT_FACTOR_SQ: [(usize, f64); 4] = [
    (50, 0.750323909),
    (100, 0.550447453),
    (150, 0.485093611),
    (200, 0.450392126),
];

/// Tabulated squared multiplication factor for `steps`, if any.
pub fn tabulated_mult_factor_sq(steps: usize) -> Option<f64> {
    MULT_FACTOR_SQ
        .iter()
        .find(|(n, _)| *n == steps)
        .map(|(_, m2)| *m2)
}

/// How the kernel is cut off before the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Truncation {
    /// Speeds `κ_i (1 - θ/T)` and driver scale `√(θ/T)`.
    Scaled { theta: f64 },
    /// The kernel is used as is: speeds `κ_i`, scale 1.
    None,
}

/// Whether `η` multiplies the driver in the variance exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VolScale {
    /// `m η √(θ/T) y_t`.
    #[default]
    Explicit,
    /// `m √(θ/T) y_t`: the vol-of-vol is left to the fitted kernel and the
    /// multiplication factor.
    AbsorbedInFactor,
}

/// Drift correction subtracted in the variance exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Compensator {
    /// `η² t^{2α+1} / 2`, the rBergomi value.
    #[default]
    RoughPower,
    /// Half the exact variance of the exponent under the approximating
    /// kernel, which makes `V` a martingale in continuous time.
    ExactChi,
}

/// Time stepping of the Ornstein-Uhlenbeck factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OuScheme {
    /// `Y_{j+1} = Y_j - κ̃ Y_j Δt + ΔB_j`. Requires `κ̃ Δt < 2`.
    #[default]
    Euler,
    /// `Y_{j+1} = e^{-κ̃ Δt} Y_j + ΔB_j`, stable for any speed.
    Exponential,
}

/// Where the multiplication factor `m` acts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MultPlacement {
    /// Inside the variance exponent.
    #[default]
    Exponent,
    /// On the implied volatilities of the finished smile.
    Smile,
}

/// Everything needed to simulate the `n`-term approximate model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbergomiConfig {
    pub kernel: ExpKernel,
    pub params: ModelParams,
    pub truncation: Truncation,
    pub mult_factor: f64,
    pub vol_scale: VolScale,
    pub compensator: Compensator,
    pub scheme: OuScheme,
    pub placement: MultPlacement,
}

impl AbergomiConfig {
    /// Defaults for `grid`: `θ = T - Δt`, `m = 1`, explicit `η`, rBergomi
    /// compensator, Euler factors, factor inside the exponent.
    pub fn for_grid(kernel: ExpKernel, params: ModelParams, grid: &TimeGrid) -> Self {
        AbergomiConfig {
            kernel,
            params,
            truncation: Truncation::Scaled { theta: grid.horizon() - grid.dt() },
            mult_factor: 1.0,
            vol_scale: VolScale::default(),
            compensator: Compensator::default(),
            scheme: OuScheme::default(),
            placement: MultPlacement::default(),
        }
    }

    /// The kernel without truncation (`θ` unused, speeds as fitted), stepped
    /// with the exponential scheme; otherwise as [`AbergomiConfig::for_grid`].
    /// Here `y` approximates `X̃` directly and the scheme is stable for any
    /// speed.
    pub fn untruncated(kernel: ExpKernel, params: ModelParams) -> Self {
        AbergomiConfig {
            kernel,
            params,
            truncation: Truncation::None,
            mult_factor: 1.0,
            vol_scale: VolScale::Explicit,
            compensator: Compensator::RoughPower,
            scheme: OuScheme::Exponential,
            placement: MultPlacement::Exponent,
        }
    }

    /// Uses `√(table entry)` for this step count as the multiplication factor.
    pub fn with_tabulated_factor(mut self, steps: usize) -> Result<Self> {
        let m2 = tabulated_mult_factor_sq(steps).ok_or_else(|| {
            Error::invalid(format!("no tabulated multiplication factor for {steps} steps"))
        })?;
        self.mult_factor = m2.sqrt();
        Ok(self)
    }

    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.mult_factor.is_finite() && self.mult_factor > 0.0) {
            bad.push(format!("mult_factor must be positive (got {})", self.mult_factor));
        }
        if let Truncation::Scaled { theta } = self.truncation {
            if !(theta > 0.0 && theta < grid.horizon()) {
                bad.push(format!("theta must lie in (0, T) (got {theta}, T = {})", grid.horizon()));
            }
        }
        if (self.kernel.hurst() - self.params.hurst()).abs() > 1e-12 {
            bad.push(format!(
                "kernel targets H = {} but the model has H = {}",
                self.kernel.hurst(),
                self.params.hurst()
            ));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(bad.join("; ")))
        }
    }

    /// `1 - θ/T`, the factor applied to every speed.
    pub fn speed_factor(&self, grid: &TimeGrid) -> f64 {
        match self.truncation {
            Truncation::Scaled { theta } => 1.0 - theta / grid.horizon(),
            Truncation::None => 1.0,
        }
    }

    /// `√(θ/T)`.
    pub fn driver_scale(&self, grid: &TimeGrid) -> f64 {
        match self.truncation {
            Truncation::Scaled { theta } => (theta / grid.horizon()).sqrt(),
            Truncation::None => 1.0,
        }
    }

    /// Speeds actually used by the factors.
    pub fn effective_speeds(&self, grid: &TimeGrid) -> Vec<f64> {
        let f = self.speed_factor(grid);
        self.kernel.speeds().iter().map(|k| k * f).collect()
    }

    fn exponent_scale(&self, grid: &TimeGrid) -> f64 {
        let m = match self.placement {
            MultPlacement::Exponent => self.mult_factor,
            MultPlacement::Smile => 1.0,
        };
        let s = match self.vol_scale {
            VolScale::Explicit => self.params.eta(),
            VolScale::AbsorbedInFactor => 1.0,
        };
        m * s * self.driver_scale(grid)
    }

    /// Smile multiplier to apply after pricing (1 unless the factor is
    /// placed on the smile).
    pub fn smile_factor(&self) -> f64 {
        match self.placement {
            MultPlacement::Exponent => 1.0,
            MultPlacement::Smile => self.mult_factor,
        }
    }

    /// Continuous-time variance of the driver `y_t`.
    pub fn driver_variance(&self, grid: &TimeGrid, t: f64) -> f64 {
        let c = self.kernel.volterra_scale();
        c * c * factor_sum_variance(self, grid, t)
    }

    fn decay_factors(&self, grid: &TimeGrid) -> Result<Vec<f64>> {
        let dt = grid.dt();
        let speeds = self.effective_speeds(grid);
        match self.scheme {
            OuScheme::Euler => {
                if let Some(k) = speeds.iter().find(|k| **k * dt >= 2.0) {
                    return Err(Error::Numerical(format!(
                        "Euler factor step is unstable: speed {k} times dt {dt} is at least 2; \
                         use the exponential scheme or a finer grid"
                    )));
                }
                Ok(speeds.iter().map(|k| 1.0 - k * dt).collect())
            }
            OuScheme::Exponential => Ok(speeds.iter().map(|k| (-k * dt).exp()).collect()),
        }
    }
}

/// Factor levels `Y` (`[n_paths × n_terms]`) at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct OUFactorState {
    pub factors: Array2<f64>,
    pub time: f64,
}

/// Runs the factors over the grid and records their levels at the given
/// step indices (`0` is the all-zero initial state).
pub fn simulate_ou_factors(
    cfg: &AbergomiConfig,
    inc: &PathIncrements,
    record: &[usize],
) -> Result<Vec<OUFactorState>> {
    let grid = inc.grid();
    cfg.validate(grid)?;
    if let Some(r) = record.iter().find(|r| **r > grid.steps()) {
        return Err(Error::invalid(format!("record index {r} is beyond the grid")));
    }
    let decay = cfg.decay_factors(grid)?;
    let n = cfg.kernel.n();
    let mut states: Vec<Array2<f64>> =
        record.iter().map(|_| Array2::zeros((inc.n_paths(), n))).collect();
    let n_paths = inc.n_paths();
    // one pass per path; each recorded matrix gets row `p` written once
    let rows: Vec<Vec<Vec<f64>>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let db = inc.db().row(p);
            let mut y = vec![0.0; n];
            let mut snaps = vec![Vec::new(); record.len()];
            for j in 0..=grid.steps() {
                for (slot, r) in snaps.iter_mut().zip(record) {
                    if *r == j {
                        *slot = y.clone();
                    }
                }
                if j < grid.steps() {
                    for (yi, d) in y.iter_mut().zip(&decay) {
                        *yi = *yi * d + db[j];
                    }
                }
            }
            snaps
        })
        .collect();
    for (p, snaps) in rows.into_iter().enumerate() {
        for (state, snap) in states.iter_mut().zip(snaps) {
            for (i, v) in snap.into_iter().enumerate() {
                state[[p, i]] = v;
            }
        }
    }
    Ok(states
        .into_iter()
        .zip(record)
        .map(|(factors, r)| OUFactorState { factors, time: grid.node(*r) })
        .collect())
}

/// Driver paths `y_{t_j} = c Σ_i α_i Y^i_{t_j}` (`[n_paths × (N+1)]`), with
/// `c` the kernel's Volterra scale so that `y` approximates `X̃` whatever
/// the kernel's target.
pub fn abergomi_driver(cfg: &AbergomiConfig, inc: &PathIncrements) -> Result<Array2<f64>> {
    let grid = inc.grid();
    cfg.validate(grid)?;
    let decay = cfg.decay_factors(grid)?;
    let c = cfg.kernel.volterra_scale();
    let weights: Vec<f64> = cfg.kernel.weights().iter().map(|w| w * c).collect();
    let steps = grid.steps();
    let mut out = Array2::zeros((inc.n_paths(), steps + 1));
    Zip::from(out.rows_mut())
        .and(inc.db().rows())
        .par_for_each(|mut yrow, db| {
            let mut y = vec![0.0; weights.len()];
            for j in 0..steps {
                let mut acc = 0.0;
                for ((yi, d), w) in y.iter_mut().zip(&decay).zip(&weights) {
                    *yi = *yi * d + db[j];
                    acc += w * *yi;
                }
                yrow[j + 1] = acc;
            }
        });
    Ok(out)
}

/// `V_t = ξ0 exp(m s √(θ/T) y_t - comp(t))` with `s = η` or 1 depending on
/// [`VolScale`].
pub fn abergomi_variance(cfg: &AbergomiConfig, grid: &TimeGrid, y: &Array2<f64>) -> Result<VariancePaths> {
    cfg.validate(grid)?;
    if y.ncols() != grid.steps() + 1 {
        return Err(Error::invalid("driver paths do not match the grid"));
    }
    let params = cfg.params;
    let scale = cfg.exponent_scale(grid);
    let comp: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|&t| match cfg.compensator {
            Compensator::RoughPower => {
                0.5 * params.eta() * params.eta() * t.powf(2.0 * params.alpha() + 1.0)
            }
            Compensator::ExactChi => 0.5 * scale * scale * cfg.driver_variance(grid, t),
        })
        .collect();
    let xi0 = params.xi0();
    let mut values = Array2::zeros(y.dim());
    Zip::from(values.rows_mut()).and(y.rows()).par_for_each(|mut v, yr| {
        for (j, (vj, yj)) in v.iter_mut().zip(yr.iter()).enumerate() {
            *vj = xi0 * (scale * yj - comp[j]).exp();
        }
    });
    VariancePaths::new(values, *grid, params)
}

/// `Σ_ij α_i α_j (1 - e^{-(κ_i+κ_j)t}) / (κ_i+κ_j)` under the configured
/// effective speeds, i.e. the exact variance of `Σ α_i Y^i_t` in
/// continuous time (without the Volterra scale).
pub fn factor_sum_variance(cfg: &AbergomiConfig, grid: &TimeGrid, t: f64) -> f64 {
    cfg.kernel.squared_integral_scaled(t, cfg.speed_factor(grid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelTarget;
    use crate::sim::{make_time_grid, sample_correlated_increments};

    fn one_term(speed: f64, hurst: f64) -> ExpKernel {
        ExpKernel::new(vec![1.0], vec![speed], hurst, 1.0, KernelTarget::Volterra).unwrap()
    }

    #[test]
    fn table_lookup() {
        assert_eq!(tabulated_mult_factor_sq(100), Some(0.550447453));
        assert_eq!(tabulated_mult_factor_sq(200), Some(0.450392126));
        assert_eq!(tabulated_mult_factor_sq(120), None);
    }

    #[test]
    fn default_theta_and_limits() {
        let grid = make_time_grid(1.0, 100).unwrap();
        let cfg = AbergomiConfig::for_grid(one_term(1.0, 0.07), ModelParams::benchmark(), &grid);
        assert_eq!(cfg.truncation, Truncation::Scaled { theta: 0.99 });
        assert!((cfg.speed_factor(&grid) - 0.01).abs() < 1e-15);
        assert!((cfg.driver_scale(&grid) - 0.99f64.sqrt()).abs() < 1e-15);
        let fine = make_time_grid(1.0, 1_000_000).unwrap();
        let cfg = AbergomiConfig::for_grid(one_term(1.0, 0.07), ModelParams::benchmark(), &fine);
        assert!((cfg.driver_scale(&fine) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_speed_limit_is_brownian() {
        // with no truncation and a negligible speed, Y is the Brownian level
        let grid = make_time_grid(1.0, 16).unwrap();
        let mut cfg = AbergomiConfig::for_grid(one_term(1e-300, 0.07), ModelParams::benchmark(), &grid);
        cfg.truncation = Truncation::None;
        let inc = sample_correlated_increments(&grid, 0.0, 4, 5).unwrap();
        let y = abergomi_driver(&cfg, &inc).unwrap();
        let b = inc.variance_levels();
        for (a, e) in y.iter().zip(b.iter()) {
            assert!((a - e).abs() < 1e-14);
        }
        let states = simulate_ou_factors(&cfg, &inc, &[0, 16]).unwrap();
        assert!(states[0].factors.iter().all(|v| *v == 0.0));
        for p in 0..4 {
            assert!((states[1].factors[[p, 0]] - b[[p, 16]]).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_noise_gives_zero_factors() {
        let grid = make_time_grid(1.0, 16).unwrap();
        let cfg = AbergomiConfig::for_grid(one_term(3.0, 0.07), ModelParams::benchmark(), &grid);
        let inc = sample_correlated_increments(&grid, 0.0, 4, 5).unwrap().scaled(0.0);
        let y = abergomi_driver(&cfg, &inc).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
        let v = abergomi_variance(&cfg, &grid, &y).unwrap();
        for (j, t) in grid.nodes().iter().enumerate() {
            let expect = 0.026 * (-0.5 * 1.9 * 1.9 * t.powf(0.14)).exp();
            assert!((v.values()[[2, j]] - expect).abs() < 1e-16);
        }
    }

    #[test]
    fn unstable_euler_is_reported() {
        let grid = make_time_grid(1.0, 10).unwrap();
        let mut cfg = AbergomiConfig::for_grid(one_term(50.0, 0.07), ModelParams::benchmark(), &grid);
        cfg.truncation = Truncation::None;
        let inc = sample_correlated_increments(&grid, 0.0, 2, 5).unwrap();
        assert!(matches!(abergomi_driver(&cfg, &inc), Err(Error::Numerical(_))));
        cfg.scheme = OuScheme::Exponential;
        assert!(abergomi_driver(&cfg, &inc).is_ok());
    }

    #[test]
    fn validation_lists_problems() {
        let grid = make_time_grid(1.0, 10).unwrap();
        let mut cfg = AbergomiConfig::for_grid(one_term(1.0, 0.2), ModelParams::benchmark(), &grid);
        cfg.mult_factor = -1.0;
        cfg.truncation = Truncation::Scaled { theta: 2.0 };
        let msg = cfg.validate(&grid).unwrap_err().to_string();
        assert!(msg.contains("mult_factor") && msg.contains("theta") && msg.contains("H ="), "{msg}");
    }
}
