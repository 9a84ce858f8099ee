use std::fmt;
use std::io;
use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use roughvol::analytics::{
    atm_skew, bs_price, mc_smile, sigma_bs_expansion, sigma_bs_first_order, smile_rmse, two_factor_coeffs,
    SmileResult, TwoFactorParams,
};
use roughvol::kernel::{
    closed_form_kernel, fit_kernel_ls, kernel_l2_error, ls_fit_grid, ls_initial_kernel, ExpKernel, FitOptions,
    DEFAULT_L2_PANELS,
};
use roughvol::models::{
    simulate_terminal_log_prices, tabulated_mult_factor_sq, AbergomiConfig, Compensator, MultPlacement,
    NearTermSpec, OuScheme, PricingModel, Truncation, VolScale,
};
use roughvol::sim::{make_time_grid, ModelParams};

use crate::config::{KernelMethod, ModelTag, RunConfig, SchemaError};
use crate::output::{json_artifact, tag, Cell, CsvTable, Sink};

#[derive(Debug)]
pub enum CliError {
    Schema(SchemaError),
    Numeric(String),
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io { .. } => 4,
        }
    }

    fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Schema(e) => write!(f, "{e}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
            CliError::Io { path, source } => write!(f, "I/O error on {}: {source}", path.display()),
        }
    }
}

impl std::error::Error for CliError {}

impl From<SchemaError> for CliError {
    fn from(e: SchemaError) -> Self {
        CliError::Schema(e)
    }
}

/// Library errors caused by configuration values are schema errors; the
/// rest are numeric failures.
fn lib_err(key: &str) -> impl Fn(roughvol::Error) -> CliError + '_ {
    move |e| match e {
        roughvol::Error::InvalidArgument(m) | roughvol::Error::Domain(m) => {
            CliError::Schema(SchemaError::single(key, m))
        }
        other => CliError::Numeric(other.to_string()),
    }
}

pub type CmdResult = Result<(), CliError>;

fn write(sink: &mut Sink, name: &str, bytes: &[u8]) -> CmdResult {
    sink.write(name, bytes).map(|_| ()).map_err(|e| CliError::io(name, e))
}

fn model_params(cfg: &RunConfig) -> Result<ModelParams, CliError> {
    let p = &cfg.params;
    ModelParams::new(p.xi0, p.eta, p.hurst, p.rho).map_err(lib_err("params"))
}

fn require_model(cfg: &RunConfig, allowed: &[ModelTag], command: &str) -> CmdResult {
    if allowed.contains(&cfg.model) {
        Ok(())
    } else {
        let names: Vec<&str> = allowed.iter().map(|m| m.as_str()).collect();
        Err(SchemaError::single("model", format!("{command} supports {}", names.join(", "))).into())
    }
}

#[derive(Debug, Clone, Serialize)]
struct KernelReport {
    weights: Vec<f64>,
    speeds: Vec<f64>,
    #[serde(rename = "H")]
    hurst: f64,
    #[serde(rename = "T")]
    horizon: f64,
    method: KernelMethod,
    terms: usize,
    grid_points: usize,
    rmse: f64,
    l2_error: f64,
    bound: Option<f64>,
    bound_holds: Option<bool>,
    converged: bool,
    iterations: Option<usize>,
    gradient_norm: Option<f64>,
}

/// Builds a kernel the way the configuration asks. A least-squares fit
/// that runs out of iterations still yields its best iterate, flagged
/// with `converged = false`.
fn build_kernel(
    cfg: &RunConfig,
    terms: usize,
    horizon: f64,
    grid_points: usize,
) -> Result<(ExpKernel, KernelReport), CliError> {
    let hurst = cfg.params.hurst;
    let (kernel, rmse, converged, iterations, gradient_norm, bound): (ExpKernel, f64, bool, _, _, _) =
        match cfg.kernel.method {
            KernelMethod::ClosedForm => {
                let (k, cert) = closed_form_kernel(terms, hurst, horizon).map_err(lib_err("kernel"))?;
                let taus = ls_fit_grid(horizon, grid_points).map_err(lib_err("kernel.grid_points"))?;
                let rmse = k.grid_rmse(&taus);
                (k, rmse, true, None, None, Some(cert.bound))
            }
            KernelMethod::LeastSquares => {
                let init = ls_initial_kernel(hurst, horizon, grid_points, terms).map_err(lib_err("kernel"))?;
                let opts = FitOptions { max_iter: cfg.kernel.max_iterations, ..FitOptions::default() };
                match fit_kernel_ls(hurst, horizon, grid_points, &init, &opts) {
                    Ok(f) => (f.kernel, f.rmse, true, Some(f.iterations), Some(f.gradient_norm), None),
                    Err(roughvol::Error::FitFailure(f)) => {
                        (f.best, f.rmse, false, Some(f.iterations), Some(f.gradient_norm), None)
                    }
                    Err(e) => return Err(lib_err("kernel")(e)),
                }
            }
        };
    let l2_error = kernel_l2_error(&kernel, DEFAULT_L2_PANELS).map_err(lib_err("kernel"))?;
    let report = KernelReport {
        weights: kernel.weights().to_vec(),
        speeds: kernel.speeds().to_vec(),
        hurst,
        horizon,
        method: cfg.kernel.method,
        terms,
        grid_points,
        rmse,
        l2_error,
        bound,
        bound_holds: bound.map(|b| l2_error <= b),
        converged,
        iterations,
        gradient_norm,
    };
    Ok((kernel, report))
}

/// A pricing model for `(T, N)` plus the kernel report when one was built.
fn pricing_model(
    cfg: &RunConfig,
    model: ModelTag,
    terms: usize,
    maturity: f64,
    steps: usize,
) -> Result<(PricingModel, Option<KernelReport>), CliError> {
    let params = model_params(cfg)?;
    Ok(match model {
        ModelTag::Rbergomi => (PricingModel::RBergomi { params, near: NearTermSpec::Exact }, None),
        ModelTag::Bs => (PricingModel::BlackScholes { vol: cfg.bs_vol }, None),
        ModelTag::Abergomi => {
            let (kernel, report) = build_kernel(cfg, terms, maturity, cfg.kernel.grid_points.unwrap_or(steps))?;
            let a = &cfg.abergomi;
            let mut m = AbergomiConfig::untruncated(kernel, params);
            if let Some(theta) = a.truncation {
                m.truncation = Truncation::Scaled { theta };
            }
            m.mult_factor = match a.mult_factor {
                Some(x) => x,
                None => tabulated_mult_factor_sq(steps).map(f64::sqrt).ok_or_else(|| {
                    SchemaError::single(
                        "abergomi.mult_factor",
                        format!("no tabulated factor for {steps} steps; give a number"),
                    )
                })?,
            };
            m.placement = if a.placement == "smile" { MultPlacement::Smile } else { MultPlacement::Exponent };
            m.scheme = if a.scheme == "euler" { OuScheme::Euler } else { OuScheme::Exponential };
            m.vol_scale = if a.vol_scale == "absorbed" { VolScale::AbsorbedInFactor } else { VolScale::Explicit };
            m.compensator =
                if a.compensator == "exact-chi" { Compensator::ExactChi } else { Compensator::RoughPower };
            (PricingModel::ABergomi(Box::new(m)), Some(report))
        }
        ModelTag::Bergomi2f => {
            return Err(SchemaError::single("model", "bergomi2f has no path simulation").into());
        }
    })
}

/// Simulates three times and returns the last paths with the median wall
/// time of the simulation alone.
fn timed_simulation(
    model: &PricingModel,
    maturity: f64,
    steps: usize,
    cfg: &RunConfig,
) -> Result<(Vec<f64>, f64, [f64; 3]), CliError> {
    let grid = make_time_grid(maturity, steps).map_err(lib_err("grid"))?;
    let mut times = [0.0; 3];
    let mut paths = Vec::new();
    for t in times.iter_mut() {
        let t0 = Instant::now();
        let x = simulate_terminal_log_prices(model, &grid, cfg.paths, cfg.seed).map_err(lib_err("model"))?;
        *t = t0.elapsed().as_secs_f64();
        paths = x.to_vec();
    }
    let mut sorted = times;
    sorted.sort_by(|a, b| a.total_cmp(b));
    Ok((paths, sorted[1], times))
}

fn moments(x: &[f64]) -> serde_json::Value {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let m = |p: i32| x.iter().map(|v| (v - mean).powi(p)).sum::<f64>() / n;
    let (m2, m3, m4) = (m(2), m(3), m(4));
    json!({
        "mean": mean,
        "variance": m2 * n / (n - 1.0).max(1.0),
        "skewness": m3 / m2.powf(1.5),
        "excess_kurtosis": m4 / (m2 * m2) - 3.0,
        "mean_price": x.iter().map(|v| v.exp()).sum::<f64>() / n,
    })
}

pub fn simulate(cfg: &RunConfig, sink: &mut Sink) -> CmdResult {
    require_model(cfg, &[ModelTag::Rbergomi, ModelTag::Abergomi, ModelTag::Bs], "simulate")?;
    for &t in &cfg.grid.maturities {
        for &n in &cfg.grid.steps {
            let (model, kernel) = pricing_model(cfg, cfg.model, cfg.kernel.terms, t, n)?;
            let (x, runtime, runtimes) = timed_simulation(&model, t, n, cfg)?;
            let stem = format!("simulate_{}_T{}_N{n}", cfg.model.as_str(), tag(t));
            let mut csv = CsvTable::new(cfg, &["path", "log_price"]);
            for (p, v) in x.iter().enumerate() {
                csv.row(&[Cell::U(p as u64), Cell::F(*v)]);
            }
            write(sink, &format!("{stem}.csv"), csv.as_bytes())?;
            let summary = json!({
                "model": cfg.model,
                "maturity": t,
                "steps": n,
                "paths": cfg.paths,
                "moments": moments(&x),
                "runtime_seconds": runtime,
                "runtimes": runtimes,
                "kernel": kernel,
            });
            write(sink, &format!("{stem}.json"), &json_artifact(cfg, &summary))?;
        }
    }
    Ok(())
}

pub fn fit_kernel(cfg: &RunConfig, sink: &mut Sink) -> CmdResult {
    let grid_points = match cfg.kernel.grid_points {
        Some(g) => vec![g],
        None => cfg.grid.steps.clone(),
    };
    let mut failed = Vec::new();
    for &t in &cfg.grid.maturities {
        for &g in &grid_points {
            let (_, report) = build_kernel(cfg, cfg.kernel.terms, t, g)?;
            let name = format!("kernel_n{}_T{}_N{g}.json", cfg.kernel.terms, tag(t));
            write(sink, &name, &json_artifact(cfg, &report))?;
            if !report.converged {
                failed.push(name);
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "least-squares fit did not converge; best iterate written to {}",
            failed.join(", ")
        )))
    }
}

fn two_factor_params(cfg: &RunConfig) -> Result<TwoFactorParams, CliError> {
    let s = cfg
        .two_factor
        .as_ref()
        .ok_or_else(|| SchemaError::single("two_factor", "required for model bergomi2f"))?;
    TwoFactorParams::new(s.omega, s.theta, s.kappa_x, s.kappa_y, s.rho_sx, s.rho_sy, s.rho_xy)
        .map_err(lib_err("two_factor"))
}

fn analytic_smile(cfg: &RunConfig, p: &TwoFactorParams, t: f64, ks: &[f64], first_order: bool) -> roughvol::Result<SmileResult> {
    let xi0 = cfg.params.xi0;
    let c = two_factor_coeffs(p, t, xi0)?;
    let vols = ks
        .iter()
        .map(|&k| {
            if first_order {
                sigma_bs_first_order(c.c_x_xi, xi0 * t, t, k, 1.0)
            } else {
                sigma_bs_expansion(&c, xi0 * t, t, k, 1.0)
            }
        })
        .collect::<roughvol::Result<Vec<f64>>>()?;
    SmileResult::from_vols(t, ks, &vols, ModelTag::Bergomi2f.as_str())
}

fn smile_csv(cfg: &RunConfig, s: &SmileResult) -> CsvTable {
    let mut csv = CsvTable::new(cfg, &["log_moneyness", "strike", "implied_vol", "price", "stderr"]);
    for p in &s.points {
        csv.row(&[Cell::F(p.log_moneyness), Cell::F(p.strike), Cell::F(p.implied_vol), Cell::F(p.price), Cell::F(p.stderr)]);
    }
    csv
}

fn mc_model_smile(
    cfg: &RunConfig,
    model: ModelTag,
    t: f64,
    n: usize,
    ks: &[f64],
) -> Result<(SmileResult, f64, Option<KernelReport>), CliError> {
    let (pm, kernel) = pricing_model(cfg, model, cfg.kernel.terms, t, n)?;
    let (x, runtime, _) = timed_simulation(&pm, t, n, cfg)?;
    let s = mc_smile(&x, ks, t)
        .and_then(|s| s.scale_vols(pm.smile_factor()))
        .map_err(lib_err("strikes"))?
        .with_tag(model.as_str(), Some(cfg.seed));
    Ok((s, runtime, kernel))
}

pub fn smile(cfg: &RunConfig, sink: &mut Sink) -> CmdResult {
    for &t in &cfg.grid.maturities {
        if cfg.model == ModelTag::Bergomi2f {
            let p = two_factor_params(cfg)?;
            let s = analytic_smile(cfg, &p, t, &cfg.strikes, false).map_err(lib_err("two_factor"))?;
            let mut s = s;
            for pt in s.points.iter_mut() {
                pt.price = bs_price(1.0, pt.strike, t, pt.implied_vol).map_err(lib_err("two_factor"))?;
            }
            let stem = format!("smile_bergomi2f_T{}", tag(t));
            write(sink, &format!("{stem}.csv"), smile_csv(cfg, &s).as_bytes())?;
            let summary = json!({"model": "bergomi2f", "maturity": t, "strikes": cfg.strikes, "skipped": s.skipped});
            write(sink, &format!("{stem}.json"), &json_artifact(cfg, &summary))?;
            continue;
        }
        for &n in &cfg.grid.steps {
            let mut models = vec![cfg.model];
            if cfg.reference && cfg.model != ModelTag::Rbergomi {
                models.push(ModelTag::Rbergomi);
            }
            for m in models {
                let (s, runtime, kernel) = mc_model_smile(cfg, m, t, n, &cfg.strikes)?;
                let stem = format!("smile_{}_T{}_N{n}", m.as_str(), tag(t));
                write(sink, &format!("{stem}.csv"), smile_csv(cfg, &s).as_bytes())?;
                let summary = json!({
                    "model": m,
                    "maturity": t,
                    "steps": n,
                    "paths": cfg.paths,
                    "strikes": cfg.strikes,
                    "skipped": s.skipped,
                    "runtime_seconds": runtime,
                    "kernel": kernel,
                });
                write(sink, &format!("{stem}.json"), &json_artifact(cfg, &summary))?;
            }
        }
    }
    Ok(())
}

/// Restricts both smiles to the strikes priced in each, returning the
/// log-moneyness values that had to be dropped. Monte Carlo smiles can
/// skip far-wing strikes when no path finishes in the money.
fn common_strikes(a: &SmileResult, b: &SmileResult) -> (SmileResult, SmileResult, Vec<f64>) {
    let ka = a.log_moneyness();
    let kb = b.log_moneyness();
    let keep = |s: &SmileResult, other: &[f64]| {
        let mut s = s.clone();
        s.points.retain(|p| other.contains(&p.log_moneyness));
        s
    };
    let mut dropped: Vec<f64> =
        ka.iter().chain(&kb).filter(|k| !(ka.contains(k) && kb.contains(k))).copied().collect();
    dropped.sort_by(f64::total_cmp);
    dropped.dedup();
    (keep(a, &kb), keep(b, &ka), dropped)
}

pub fn compare(cfg: &RunConfig, sink: &mut Sink) -> CmdResult {
    require_model(cfg, &[ModelTag::Abergomi, ModelTag::Rbergomi, ModelTag::Bs], "compare")?;
    for &t in &cfg.grid.maturities {
        let mut csv = CsvTable::new(cfg, &["terms", "steps", "rmse", "runtime_rbergomi", "runtime_abergomi"]);
        let mut rows = Vec::new();
        for &n in &cfg.compare.steps {
            let (reference, rt_ref, _) = mc_model_smile(cfg, ModelTag::Rbergomi, t, n, &cfg.strikes)?;
            let terms: Vec<usize> =
                if cfg.model == ModelTag::Abergomi { cfg.compare.terms.clone() } else { vec![0] };
            for &terms in &terms {
                let mut c = cfg.clone();
                c.kernel.terms = terms.max(1);
                let (cand, rt, _) = mc_model_smile(&c, cfg.model, t, n, &cfg.strikes)?;
                let (r, c, dropped) = common_strikes(&reference, &cand);
                let rmse = smile_rmse(&r, &c).map_err(lib_err("strikes"))?;
                csv.row(&[Cell::U(terms as u64), Cell::U(n as u64), Cell::F(rmse), Cell::F(rt_ref), Cell::F(rt)]);
                rows.push(json!({
                    "terms": terms,
                    "steps": n,
                    "rmse": rmse,
                    "runtime_rbergomi": rt_ref,
                    "runtime_abergomi": rt,
                    "dropped_strikes": dropped,
                }));
            }
        }
        let stem = format!("compare_{}_T{}", cfg.model.as_str(), tag(t));
        write(sink, &format!("{stem}.csv"), csv.as_bytes())?;
        let summary = json!({"model": cfg.model, "maturity": t, "paths": cfg.paths, "rows": rows});
        write(sink, &format!("{stem}.json"), &json_artifact(cfg, &summary))?;
    }
    Ok(())
}

pub fn skew(cfg: &RunConfig, sink: &mut Sink) -> CmdResult {
    require_model(cfg, &[ModelTag::Rbergomi, ModelTag::Bergomi2f], "skew")?;
    let mats = &cfg.skew.maturities;
    if mats.len() < 3 {
        return Err(SchemaError::single("skew.maturities", "need at least 3 maturities to fit a power law").into());
    }
    if cfg.model == ModelTag::Bergomi2f {
        let p = two_factor_params(cfg)?;
        let rep = atm_skew(|t, ks| analytic_smile(cfg, &p, t, ks, true), mats, cfg.skew.bump)
            .map_err(lib_err("skew"))?;
        let body = json!({"model": "bergomi2f", "method": "analytic", "report": rep});
        return write(sink, "skew_bergomi2f.json", &json_artifact(cfg, &body));
    }
    for &n in &cfg.grid.steps {
        let (model, _) = pricing_model(cfg, ModelTag::Rbergomi, cfg.kernel.terms, 1.0, n)?;
        let rep = atm_skew(
            |t, ks| {
                let grid = make_time_grid(t, n)?;
                let x = simulate_terminal_log_prices(&model, &grid, cfg.paths, cfg.seed)?;
                mc_smile(x.as_slice().expect("contiguous"), ks, t)
            },
            mats,
            cfg.skew.bump,
        )
        .map_err(lib_err("skew"))?;
        let body = json!({"model": "rbergomi", "method": "monte-carlo", "steps": n, "paths": cfg.paths, "report": rep});
        write(sink, &format!("skew_rbergomi_N{n}.json"), &json_artifact(cfg, &body))?;
    }
    Ok(())
}
