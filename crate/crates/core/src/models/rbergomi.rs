use ndarray::{Array1, Array2, Axis, Zip};

use super::VariancePaths;
use crate::error::{Error, Result};
use crate::hybrid::VolterraPaths;
use crate::sim::{ModelParams, PathIncrements};

/// `V_{t_j} = ξ0 exp(η X̃_{t_j} - η² t_j^{2α+1} / 2)`.
pub fn rbergomi_variance(volterra: &VolterraPaths, params: &ModelParams) -> Result<VariancePaths> {
    if (volterra.alpha() - params.alpha()).abs() > 1e-12 {
        return Err(Error::invalid(format!(
            "Volterra paths use alpha {} but the model has alpha {}",
            volterra.alpha(),
            params.alpha()
        )));
    }
    let grid = *volterra.grid();
    let eta = params.eta();
    let xi0 = params.xi0();
    let comp: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|t| 0.5 * eta * eta * t.powf(2.0 * params.alpha() + 1.0))
        .collect();
    let mut values = Array2::zeros(volterra.values().dim());
    Zip::from(values.rows_mut())
        .and(volterra.values().rows())
        .par_for_each(|mut v, x| {
            for (j, (vj, xj)) in v.iter_mut().zip(x.iter()).enumerate() {
                *vj = xi0 * (eta * xj - comp[j]).exp();
            }
        });
    VariancePaths::new(values, grid, *params)
}

/// Left-point Euler scheme for `log S` with `S_0 = 1`:
/// `log S_{j+1} = log S_j + √V_j ΔW_j - V_j Δt / 2`.
pub fn rbergomi_log_price(v: &VariancePaths, inc: &PathIncrements) -> Result<Array2<f64>> {
    check_shapes(v, inc)?;
    let dt = v.grid().dt();
    let mut out = Array2::zeros(v.values().dim());
    Zip::from(out.rows_mut())
        .and(v.values().rows())
        .and(inc.dw().rows())
        .par_for_each(|mut s, var, dw| {
            let mut acc = 0.0;
            for j in 0..dw.len() {
                acc += var[j].sqrt() * dw[j] - 0.5 * var[j] * dt;
                s[j + 1] = acc;
            }
        });
    Ok(out)
}

/// Final column of [`rbergomi_log_price`] without storing the whole path.
pub fn terminal_log_price(v: &VariancePaths, inc: &PathIncrements) -> Result<Array1<f64>> {
    check_shapes(v, inc)?;
    let dt = v.grid().dt();
    let mut out = Array1::zeros(inc.n_paths());
    Zip::from(&mut out)
        .and(v.values().rows())
        .and(inc.dw().rows())
        .par_for_each(|s, var, dw| {
            let mut acc = 0.0;
            for j in 0..dw.len() {
                acc += var[j].sqrt() * dw[j] - 0.5 * var[j] * dt;
            }
            *s = acc;
        });
    Ok(out)
}

fn check_shapes(v: &VariancePaths, inc: &PathIncrements) -> Result<()> {
    if v.grid() != inc.grid() {
        return Err(Error::invalid("variance paths and increments use different grids"));
    }
    if v.values().len_of(Axis(0)) != inc.n_paths() {
        return Err(Error::invalid(format!(
            "variance has {} paths, increments have {}",
            v.n_paths(),
            inc.n_paths()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::{simulate_volterra, HybridPlan};
    use crate::sim::{make_time_grid, sample_correlated_increments};

    #[test]
    fn zero_noise_gives_deterministic_decay() {
        let grid = make_time_grid(1.0, 10).unwrap();
        let params = ModelParams::benchmark();
        let inc = sample_correlated_increments(&grid, -0.9, 2, 1).unwrap().scaled(0.0);
        let plan = HybridPlan::new(grid, params.alpha()).unwrap();
        let x = simulate_volterra(&plan, &inc).unwrap();
        assert!(x.values().iter().all(|v| *v == 0.0));
        let v = rbergomi_variance(&x, &params).unwrap();
        for (j, t) in grid.nodes().iter().enumerate() {
            let expect = 0.026 * (-0.5 * 1.9 * 1.9 * t.powf(0.14)).exp();
            assert!((v.values()[[1, j]] - expect).abs() < 1e-16);
        }
        assert_eq!(v.values()[[0, 0]], 0.026);
        let s = rbergomi_log_price(&v, &inc).unwrap();
        // no Brownian part, only the drift
        assert!(s[[0, 10]] < 0.0);
    }

    #[test]
    fn zero_variance_gives_flat_price() {
        let grid = make_time_grid(1.0, 10).unwrap();
        let params = ModelParams::benchmark();
        let inc = sample_correlated_increments(&grid, 0.0, 3, 1).unwrap();
        let v = VariancePaths::new(Array2::zeros((3, 11)), grid, params).unwrap();
        let s = rbergomi_log_price(&v, &inc).unwrap();
        assert!(s.iter().all(|x| *x == 0.0));
        let t = terminal_log_price(&v, &inc).unwrap();
        assert!(t.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn alpha_mismatch_is_rejected() {
        let grid = make_time_grid(1.0, 10).unwrap();
        let inc = sample_correlated_increments(&grid, 0.0, 3, 1).unwrap();
        let x = simulate_volterra(&HybridPlan::new(grid, -0.3).unwrap(), &inc).unwrap();
        assert!(rbergomi_variance(&x, &ModelParams::benchmark()).is_err());
    }
}
