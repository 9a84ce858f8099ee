use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn roughvol() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_roughvol"));
    c.env_remove("ROUGHVOL_THREADS");
    c
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    roughvol()
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

const SMALL_RB: &str = r#"{"version": 1, "model": "rbergomi", "paths": 2000, "seed": 4,
    "grid": {"maturities": [0.5], "steps": [50]}}"#;

#[test]
fn simulate_writes_csv_and_summary() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL_RB);
    let o = run("simulate", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("out/simulate_rbergomi_T0.5_N50.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# config_sha256="));
    assert!(lines[0].ends_with("seed=4"));
    assert_eq!(lines[1], "path,log_price");
    assert_eq!(lines.len(), 2 + 2000);
    assert!(!csv.contains('\r') && csv.ends_with('\n'));

    let summary = read_json(&dir.path().join("out/simulate_rbergomi_T0.5_N50.json"));
    assert_eq!(summary["seed"], 4);
    assert!(lines[0].contains(summary["config_sha256"].as_str().unwrap()));
    assert_eq!(summary["runtimes"].as_array().unwrap().len(), 3);
    let rt = summary["runtime_seconds"].as_f64().unwrap();
    assert!(rt > 0.0);
    // E[S_T] = 1 up to Monte Carlo noise
    let mean_price = summary["moments"]["mean_price"].as_f64().unwrap();
    assert!((mean_price - 1.0).abs() < 0.02, "{mean_price}");
}

#[test]
fn reruns_are_byte_identical_and_reproducible_from_embedded_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL_RB);
    assert_eq!(code(&run("simulate", &cfg, &dir.path().join("a"), &[])), 0);
    let threads = roughvol()
        .args(["simulate", "--threads", "1", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("b"))
        .output()
        .unwrap();
    assert_eq!(code(&threads), 0);
    let name = "simulate_rbergomi_T0.5_N50.csv";
    let a = fs::read(dir.path().join("a").join(name)).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b").join(name)).unwrap());

    let summary = read_json(&dir.path().join("a/simulate_rbergomi_T0.5_N50.json"));
    let embedded = write_config(dir.path(), "embedded.json", &summary["config"].to_string());
    let env = roughvol()
        .env("ROUGHVOL_THREADS", "3")
        .arg("simulate")
        .arg("--config")
        .arg(&embedded)
        .arg("--out")
        .arg(dir.path().join("c"))
        .output()
        .unwrap();
    assert_eq!(code(&env), 0, "{}", stderr(&env));
    assert_eq!(a, fs::read(dir.path().join("c").join(name)).unwrap());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL_RB);
    assert_eq!(code(&run("simulate", &cfg, &dir.path().join("a"), &["--seed", "99"])), 0);
    let csv = fs::read_to_string(dir.path().join("a/simulate_rbergomi_T0.5_N50.csv")).unwrap();
    assert!(csv.lines().next().unwrap().ends_with("seed=99"));
}

#[test]
fn schema_errors_name_every_key() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        r#"{"version": 1, "model": "rbergomi", "paths": 0, "speed": 3, "params": {"rho": 2}}"#,
    );
    let o = run("simulate", &cfg, dir.path(), &[]);
    assert_eq!(code(&o), 2);
    let e = stderr(&o);
    for key in ["paths", "speed", "params.rho"] {
        assert!(e.contains(key), "{key} missing from: {e}");
    }
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1, "nothing but the config was written");
}

#[test]
fn io_errors_exit_with_4() {
    let dir = TempDir::new().unwrap();
    let o = run("simulate", &dir.path().join("missing.json"), dir.path(), &[]);
    assert_eq!(code(&o), 4);
    let cfg = write_config(dir.path(), "c.json", SMALL_RB);
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = run("simulate", &cfg, &blocker, &[]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn fit_kernel_least_squares_meets_rmse_target() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"version": 1, "model": "abergomi", "kernel": {"terms": 25, "grid_points": 100}}"#,
    );
    let o = run("fit-kernel", &cfg, dir.path(), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let k = read_json(&dir.path().join("kernel_n25_T1_N100.json"));
    assert!(k["rmse"].as_f64().unwrap() <= 2e-5);
    assert_eq!(k["method"], "least-squares");
    assert_eq!(k["weights"].as_array().unwrap().len(), 25);
    assert_eq!(k["H"], 0.07);
    assert_eq!(k["T"], 1.0);
    assert!(k["l2_error"].as_f64().unwrap() > 0.0);
}

#[test]
fn fit_kernel_closed_form_reports_bound() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"version": 1, "model": "abergomi", "kernel": {"terms": 10, "method": "closed-form"}}"#,
    );
    assert_eq!(code(&run("fit-kernel", &cfg, dir.path(), &[])), 0);
    let k = read_json(&dir.path().join("kernel_n10_T1_N100.json"));
    assert_eq!(k["bound_holds"], true);
    assert!(k["l2_error"].as_f64().unwrap() <= k["bound"].as_f64().unwrap());
}

#[test]
fn fit_failure_keeps_best_iterate() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"version": 1, "model": "abergomi", "kernel": {"terms": 25, "max_iterations": 1}}"#,
    );
    let o = run("fit-kernel", &cfg, dir.path(), &[]);
    assert_eq!(code(&o), 3);
    let k = read_json(&dir.path().join("kernel_n25_T1_N100.json"));
    assert_eq!(k["converged"], false);
    assert_eq!(k["weights"].as_array().unwrap().len(), 25);
}

#[test]
fn zero_terms_is_a_schema_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"version": 1, "model": "abergomi", "kernel": {"terms": 0}}"#);
    let o = run("fit-kernel", &cfg, dir.path(), &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("kernel.terms"));
}

#[test]
fn black_scholes_smile_is_flat() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"version": 1, "model": "bs", "bs_vol": 0.2, "paths": 40000, "grid": {"steps": [10]}}"#,
    );
    assert_eq!(code(&run("smile", &cfg, dir.path(), &[])), 0);
    let csv = fs::read_to_string(dir.path().join("smile_bs_T1_N10.csv")).unwrap();
    let mut lines = csv.lines().skip(1);
    assert_eq!(lines.next().unwrap(), "log_moneyness,strike,implied_vol,price,stderr");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 21);
    for r in rows {
        assert!((r[2] - 0.2).abs() < 0.01, "{r:?}");
        assert!((r[1] - r[0].exp()).abs() < 1e-12);
    }
    // defaults are echoed
    let s = read_json(&dir.path().join("smile_bs_T1_N10.json"));
    assert_eq!(s["strikes"].as_array().unwrap().len(), 21);
}

#[test]
fn paired_smiles_share_random_numbers() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"version": 1, "model": "abergomi", "reference": true, "paths": 4000,
            "kernel": {"terms": 10}, "grid": {"steps": [50, 100]}}"#,
    );
    let o = run("smile", &cfg, dir.path(), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for n in [50, 100] {
        for m in ["abergomi", "rbergomi"] {
            assert!(dir.path().join(format!("smile_{m}_T1_N{n}.csv")).exists());
        }
    }
}

#[test]
fn analytic_two_factor_smile_and_skew() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"version": 1, "model": "bergomi2f", "params": {"xi0": 0.04},
            "two_factor": {"omega": 1.5, "theta": 0.3, "kappa_x": 4.0, "kappa_y": 0.5,
                           "rho_sx": -0.7, "rho_sy": -0.5, "rho_xy": 0.3},
            "skew": {"maturities": [0.25, 0.5, 1.0, 2.0]}}"#,
    );
    assert_eq!(code(&run("smile", &cfg, dir.path(), &[])), 0);
    assert!(dir.path().join("smile_bergomi2f_T1.csv").exists());
    let o = run("skew", &cfg, dir.path(), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = read_json(&dir.path().join("skew_bergomi2f.json"));
    let p = roughvol::analytics::TwoFactorParams::new(1.5, 0.3, 4.0, 0.5, -0.7, -0.5, 0.3).unwrap();
    for pt in r["report"]["points"].as_array().unwrap() {
        let t = pt["maturity"].as_f64().unwrap();
        let s = roughvol::analytics::two_factor_skew_shape(&p, t).unwrap().abs();
        assert!((pt["psi"].as_f64().unwrap() - s).abs() < 1e-6);
    }
    assert!(r["report"]["fit"]["exponent"].is_number());
}

#[test]
fn skew_needs_three_maturities() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"version": 1, "model": "rbergomi", "skew": {"maturities": [0.5, 1.0]}}"#,
    );
    let o = run("skew", &cfg, dir.path(), &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("skew.maturities"));
}

#[test]
fn rbergomi_skew_runs() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"version": 1, "model": "rbergomi", "paths": 20000, "grid": {"steps": [50]},
            "skew": {"maturities": [0.25, 0.5, 1.0]}}"#,
    );
    let o = run("skew", &cfg, dir.path(), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = read_json(&dir.path().join("skew_rbergomi_N50.json"));
    assert_eq!(r["report"]["points"].as_array().unwrap().len(), 3);
}

#[test]
fn compare_covers_the_default_grid() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"version": 1, "model": "abergomi", "paths": 1000}"#);
    let o = run("compare", &cfg, dir.path(), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("compare_abergomi_T1.csv")).unwrap();
    let mut lines = csv.lines().skip(1);
    assert_eq!(lines.next().unwrap(), "terms,steps,rmse,runtime_rbergomi,runtime_abergomi");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().any(|r| r[0] == 25.0 && r[1] == 100.0));
    assert!(rows.iter().all(|r| r[2] > 0.0 && r[3] > 0.0 && r[4] > 0.0));
}

#[test]
fn self_compare_has_zero_rmse() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"version": 1, "model": "rbergomi", "paths": 2000, "compare": {"steps": [50]}}"#,
    );
    assert_eq!(code(&run("compare", &cfg, dir.path(), &[])), 0);
    let csv = fs::read_to_string(dir.path().join("compare_rbergomi_T1.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(2).unwrap().split(',').collect();
    assert_eq!(row[..3], ["0", "50", "0"]);
}
