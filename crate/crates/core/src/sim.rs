//! Time grids, model parameters and correlated Brownian increments.
//!
//! Every path owns its own random stream: a ChaCha8 generator seeded from the
//! run seed and switched to stream number `path_index`. Path `p` therefore
//! draws the same numbers whether the batch runs on one thread or sixty-four.
//! Gaussians come from the ziggurat sampler of `rand_distr::StandardNormal`,
//! which is exact up to floating point.

use ndarray::{Array2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid `t_j = j T / N`, `j = 0..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
        }
        if steps < 2 {
            return Err(Error::invalid(format!("need at least 2 time steps, got {steps}")));
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// `t_j`; the last node is exactly the horizon.
    pub fn node(&self, j: usize) -> f64 {
        debug_assert!(j <= self.steps);
        if j == self.steps {
            self.horizon
        } else {
            j as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|j| self.node(j)).collect()
    }
}

/// Same as [`TimeGrid::new`].
pub fn make_time_grid(horizon: f64, steps: usize) -> Result<TimeGrid> {
    TimeGrid::new(horizon, steps)
}

/// rBergomi parameters under a flat initial forward-variance curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsRepr", into = "ParamsRepr")]
pub struct ModelParams {
    xi0: f64,
    eta: f64,
    hurst: f64,
    rho: f64,
}

#[derive(Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsRepr {
    xi0: f64,
    eta: f64,
    hurst: f64,
    rho: f64,
}

impl TryFrom<ParamsRepr> for ModelParams {
    type Error = Error;

    fn try_from(r: ParamsRepr) -> Result<Self> {
        ModelParams::new(r.xi0, r.eta, r.hurst, r.rho)
    }
}

impl From<ModelParams> for ParamsRepr {
    fn from(p: ModelParams) -> Self {
        ParamsRepr { xi0: p.xi0, eta: p.eta, hurst: p.hurst, rho: p.rho }
    }
}

impl ModelParams {
    pub fn new(xi0: f64, eta: f64, hurst: f64, rho: f64) -> Result<Self> {
        let mut bad = Vec::new();
        if !(xi0.is_finite() && xi0 > 0.0) {
            bad.push(format!("xi0 must be positive (got {xi0})"));
        }
        if !(eta.is_finite() && eta > 0.0) {
            bad.push(format!("eta must be positive (got {eta})"));
        }
        if !(hurst > 0.0 && hurst < 0.5) {
            bad.push(format!("hurst must lie in (0, 1/2) (got {hurst})"));
        }
        if !(-1.0..=1.0).contains(&rho) {
            bad.push(format!("rho must lie in [-1, 1] (got {rho})"));
        }
        if !bad.is_empty() {
            return Err(Error::InvalidArgument(bad.join("; ")));
        }
        Ok(ModelParams { xi0, eta, hurst, rho })
    }

    /// `ξ0 = 0.026`, `η = 1.9`, `α = -0.43`, together with `ρ = -0.9`.
    pub fn benchmark() -> Self {
        ModelParams {
            xi0: 0.026,
            eta: 1.9,
            hurst: 0.07,
            rho: -0.9,
        }
    }

    pub fn with_rho(self, rho: f64) -> Result<Self> {
        ModelParams::new(self.xi0, self.eta, self.hurst, rho)
    }

    pub fn xi0(&self) -> f64 {
        self.xi0
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `α = H - 1/2`.
    pub fn alpha(&self) -> f64 {
        self.hurst - 0.5
    }

    /// `σ = η √(2α + 1)`, the volatility of the O-U factors.
    pub fn sigma(&self) -> f64 {
        self.eta * (2.0 * self.alpha() + 1.0).sqrt()
    }
}

/// Brownian increments for a batch of paths on a shared grid.
///
/// `dw` drives the price, `db = ρ dw + √(1-ρ²) dz` drives variance, and
/// `near` is a third independent `N(0, dt)` stream consumed by schemes that
/// need one extra Gaussian per step.
#[derive(Debug, Clone)]
pub struct PathIncrements {
    grid: TimeGrid,
    dw: Array2<f64>,
    db: Array2<f64>,
    near: Array2<f64>,
    rho: f64,
    seed: u64,
}

impl PathIncrements {
    /// Assembles increments from explicit matrices, each `[n_paths × N]`.
    pub fn from_parts(
        grid: TimeGrid,
        dw: Array2<f64>,
        db: Array2<f64>,
        near: Array2<f64>,
        rho: f64,
        seed: u64,
    ) -> Result<Self> {
        let shape = dw.dim();
        if shape.1 != grid.steps() || db.dim() != shape || near.dim() != shape {
            return Err(Error::invalid(format!(
                "increment matrices must all be [n_paths x {}]",
                grid.steps()
            )));
        }
        if shape.0 == 0 {
            return Err(Error::invalid("need at least one path"));
        }
        Ok(PathIncrements { grid, dw, db, near, rho, seed })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.dw.nrows()
    }

    pub fn dw(&self) -> &Array2<f64> {
        &self.dw
    }

    pub fn db(&self) -> &Array2<f64> {
        &self.db
    }

    pub fn near(&self) -> &Array2<f64> {
        &self.near
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Every increment multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        PathIncrements {
            grid: self.grid,
            dw: &self.dw * c,
            db: &self.db * c,
            near: &self.near * c,
            rho: self.rho,
            seed: self.seed,
        }
    }

    /// Brownian levels `B_{t_j}` of the variance driver, `[n_paths × (N+1)]`.
    pub fn variance_levels(&self) -> Array2<f64> {
        cumulative(&self.db)
    }

    /// Brownian levels `W_{t_j}` of the price driver, `[n_paths × (N+1)]`.
    pub fn price_levels(&self) -> Array2<f64> {
        cumulative(&self.dw)
    }
}

fn cumulative(inc: &Array2<f64>) -> Array2<f64> {
    let (rows, cols) = inc.dim();
    let mut out = Array2::zeros((rows, cols + 1));
    Zip::from(out.rows_mut()).and(inc.rows()).for_each(|mut o, i| {
        let mut acc = 0.0;
        for (j, x) in i.iter().enumerate() {
            acc += x;
            o[j + 1] = acc;
        }
    });
    out
}

/// Draws `n_paths` rows of correlated increments.
///
/// Identical `(grid, rho, n_paths, seed)` give bit-identical output for any
/// thread count.
pub fn sample_correlated_increments(
    grid: &TimeGrid,
    rho: f64,
    n_paths: usize,
    seed: u64,
) -> Result<PathIncrements> {
    sample_increment_block(grid, rho, 0, n_paths, seed)
}

/// Increments for paths `first..first + n_paths` of a run. Row `r` of the
/// result equals row `first + r` of the full batch, which lets large runs be
/// processed in blocks.
pub fn sample_increment_block(
    grid: &TimeGrid,
    rho: f64,
    first: usize,
    n_paths: usize,
    seed: u64,
) -> Result<PathIncrements> {
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::invalid(format!("correlation must lie in [-1, 1], got {rho}")));
    }
    if n_paths == 0 {
        return Err(Error::invalid("need at least one path"));
    }
    let steps = grid.steps();
    let sqrt_dt = grid.dt().sqrt();
    let rho_perp = (1.0 - rho * rho).sqrt();
    let mut dw = Array2::zeros((n_paths, steps));
    let mut db = Array2::zeros((n_paths, steps));
    let mut near = Array2::zeros((n_paths, steps));

    Zip::indexed(dw.axis_iter_mut(Axis(0)))
        .and(db.axis_iter_mut(Axis(0)))
        .and(near.axis_iter_mut(Axis(0)))
        .par_for_each(|p, mut w_row, mut b_row, mut n_row| {
            let mut rng = path_rng(seed, first + p);
            for j in 0..steps {
                let zw: f64 = rng.sample(StandardNormal);
                let zz: f64 = rng.sample(StandardNormal);
                let zn: f64 = rng.sample(StandardNormal);
                let w = sqrt_dt * zw;
                w_row[j] = w;
                b_row[j] = rho * w + rho_perp * (sqrt_dt * zz);
                n_row[j] = sqrt_dt * zn;
            }
        });

    Ok(PathIncrements { grid: *grid, dw, db, near, rho, seed })
}

/// The random stream owned by path `path` of a run seeded with `seed`.
pub fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}
