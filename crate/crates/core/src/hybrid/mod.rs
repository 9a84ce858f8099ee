//! Hybrid-scheme simulation of the Volterra process
//! `X̃_t = √(2α+1) ∫_0^t (t-s)^α dB_s` with one exact near-singularity cell.
//!
//! Cell `k ≥ 2` of the kernel is frozen at `g(b_k^* Δt)` with the optimal
//! nodes `b_k^*`, which makes the Riemann part a lower-triangular Toeplitz
//! product evaluated by FFT. The first cell is handled by [`NearTerm`].

mod toeplitz;

use ndarray::{Array2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sim::{PathIncrements, TimeGrid};

pub use toeplitz::{toeplitz_convolve, ConvScratch, ToeplitzConvolver};

/// How the integral over the most recent cell,
/// `∫_{t_{j-1}}^{t_j} (t_j - s)^α dB_s`, is generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NearTerm {
    /// Sampled jointly with `ΔB_j` from their exact bivariate Gaussian law.
    /// Uses the `near` increment stream.
    #[default]
    Exact,
    /// `(Δt/2)^α ΔB_j`. Cheaper, but only carries
    /// `(2α+1) 2^{-2α}` of the cell's true variance (about a quarter at
    /// `α = -0.43`).
    Midpoint,
}

/// `b_k^* = ((k^{α+1} - (k-1)^{α+1}) / (α+1))^{1/α}` for `k = 2..=steps`.
pub fn optimal_nodes(alpha: f64, steps: usize) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    if steps < 2 {
        return Err(Error::invalid(format!("need at least 2 steps, got {steps}")));
    }
    Ok((2..=steps).map(|k| optimal_node(alpha, k)).collect())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > -0.5 && alpha < 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("alpha must lie in (-1/2, 0), got {alpha}")))
    }
}

fn optimal_node(alpha: f64, k: usize) -> f64 {
    let kf = k as f64;
    let lk = kf.ln();
    let lk1 = (kf - 1.0).ln();
    let a1 = alpha + 1.0;
    // (k^{α+1} - (k-1)^{α+1})/(α+1) - 1, formed without cancellation so the
    // 1/α power stays accurate as α → 0
    let excess = (kf * (alpha * lk).exp_m1() - (kf - 1.0) * (alpha * lk1).exp_m1() - alpha) / a1;
    (excess.ln_1p() / alpha).exp()
}

/// Precomputed nodes, kernel weights and FFT plan for one grid and exponent.
#[derive(Debug, Clone)]
pub struct HybridPlan {
    grid: TimeGrid,
    alpha: f64,
    near: NearTerm,
    b_star: Vec<f64>,
    kernel_weights: Vec<f64>,
    conv: ToeplitzConvolver,
}

impl HybridPlan {
    pub fn new(grid: TimeGrid, alpha: f64) -> Result<Self> {
        Self::with_near_term(grid, alpha, NearTerm::default())
    }

    pub fn with_near_term(grid: TimeGrid, alpha: f64, near: NearTerm) -> Result<Self> {
        let b_star = optimal_nodes(alpha, grid.steps())?;
        let dt = grid.dt();
        let kernel_weights: Vec<f64> = b_star.iter().map(|b| (b * dt).powf(alpha)).collect();
        let first = match near {
            NearTerm::Exact => 0.0,
            NearTerm::Midpoint => (0.5 * dt).powf(alpha),
        };
        let mut kernel = Vec::with_capacity(grid.steps());
        kernel.push(first);
        kernel.extend_from_slice(&kernel_weights);
        let conv = ToeplitzConvolver::new(&kernel, grid.steps())?;
        Ok(HybridPlan { grid, alpha, near, b_star, kernel_weights, conv })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn near_term(&self) -> NearTerm {
        self.near
    }

    /// `b_k^*` for `k = 2..=N`.
    pub fn b_star(&self) -> &[f64] {
        &self.b_star
    }

    /// `g(b_k^* Δt) = (b_k^* Δt)^α` for `k = 2..=N`.
    pub fn kernel_weights(&self) -> &[f64] {
        &self.kernel_weights
    }

    /// Coefficients `(a, c)` of the exact near cell,
    /// `∫ (t_j - s)^α dB_s = a ΔB_j + c ΔZ_j` with `ΔZ` independent of `ΔB`.
    fn exact_near_coefficients(&self) -> (f64, f64) {
        let a = self.alpha;
        let dt = self.grid.dt();
        let on_db = dt.powf(a) / (a + 1.0);
        let resid = dt.powf(2.0 * a) * (1.0 / (2.0 * a + 1.0) - 1.0 / ((a + 1.0) * (a + 1.0)));
        (on_db, resid.max(0.0).sqrt())
    }
}

/// Simulated `X̃` on the grid, `[n_paths × (N+1)]` with `X̃_{t_0} = 0`.
#[derive(Debug, Clone)]
pub struct VolterraPaths {
    values: Array2<f64>,
    grid: TimeGrid,
    alpha: f64,
}

impl VolterraPaths {
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n_paths(&self) -> usize {
        self.values.nrows()
    }
}

/// Runs the hybrid scheme over every path of `inc`, using the
/// variance-driving increments `ΔB`. The `√(2α+1)` normalisation is applied
/// here, so the output is the fully normalised `X̃`.
pub fn simulate_volterra(plan: &HybridPlan, inc: &PathIncrements) -> Result<VolterraPaths> {
    if inc.grid() != plan.grid() {
        return Err(Error::invalid("increments and hybrid plan use different grids"));
    }
    let steps = plan.grid.steps();
    let norm = (2.0 * plan.alpha + 1.0).sqrt();
    let (near_db, near_dz) = match plan.near {
        NearTerm::Exact => plan.exact_near_coefficients(),
        NearTerm::Midpoint => (0.0, 0.0),
    };
    let mut values = Array2::zeros((inc.n_paths(), steps + 1));
    values
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(inc.db().axis_iter(Axis(0)).into_par_iter())
        .zip(inc.near().axis_iter(Axis(0)).into_par_iter())
        .for_each_init(
            || plan.conv.scratch(),
            |ws, ((mut row, db), dz)| {
                let mut tail = row.slice_mut(ndarray::s![1..]);
                plan.conv.apply_row(db, tail.view_mut(), ws);
                for j in 0..steps {
                    tail[j] = norm * (tail[j] + near_db * db[j] + near_dz * dz[j]);
                }
            },
        );
    Ok(VolterraPaths { values, grid: plan.grid, alpha: plan.alpha })
}
