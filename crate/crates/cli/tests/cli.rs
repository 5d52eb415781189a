use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_areaflux"))
}

fn write(dir: &TempDir, name: &str, v: &Value) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn run(cfg: &Path, extra: &[&str]) -> (Output, Value) {
    let out = bin().arg("run").arg(cfg).args(extra).output().unwrap();
    let doc = serde_json::from_slice(&out.stdout).unwrap_or(Value::Null);
    (out, doc)
}

fn bm_sweep() -> Value {
    json!({
        "task": "fpa-laplace",
        "model": { "builtin": "bm_drift", "params": { "mu": 0.0, "sigma": 1.0 } },
        "params": { "a": 0.0, "c": 1.0, "v0": 0.5, "lambda": [0.0, 0.5, 1.0] }
    })
}

fn small_mc(seed: u64) -> Value {
    json!({ "paths": 2000, "dt": 0.002, "seed": seed, "horizon": { "fixed": 200.0 } })
}

#[test]
fn omega_quadratic_drift_value() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "omega.json",
        &json!({
            "task": "omega-prob",
            "model": { "builtin": "quad_drift", "params": { "mu": 1.0 } },
            "omega": "square_negative",
            "params": { "v0": 0.0 }
        }),
    );
    let (out, doc) = run(&cfg, &[]);
    assert!(out.status.success());
    let r3 = 3f64.sqrt();
    let v = doc["result"]["value"].as_f64().unwrap();
    assert!((v - (r3 - 1.0) / (r3 + 1.0)).abs() < 1e-10, "{v}");
    assert!(doc["wall_time_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn lambda_sweep_and_csv() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "bm.json", &bm_sweep());
    let csv = dir.path().join("sweep.csv");
    let out_path = dir.path().join("out.json");
    let (out, _) = run(&cfg, &["--csv", csv.to_str().unwrap(), "--out", out_path.to_str().unwrap()]);
    assert!(out.status.success());
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(doc["input"], "lambda");
    assert_eq!(doc["sweep"], true);
    assert_eq!(doc["results"][0]["value"].as_f64().unwrap(), 0.5);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "input,value,std_error");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0,0.5,"));
    // sinh(sqrt2 / 2) / sinh(sqrt2)
    let r2 = 2f64.sqrt();
    let want = (r2 * 0.5).sinh() / r2.sinh();
    let got: f64 = lines[3].split(',').nth(1).unwrap().parse().unwrap();
    assert!((got - want).abs() < 1e-12);
}

#[test]
fn canonical_config_round_trips() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "bm.json", &bm_sweep());
    let (_, doc) = run(&cfg, &[]);
    let canon = write(&dir, "canon.json", &doc["config"]);
    let (out, again) = run(&canon, &[]);
    assert!(out.status.success());
    assert_eq!(doc["config"], again["config"]);
    assert_eq!(doc["results"], again["results"]);
    // every tolerance in use is echoed
    assert!(doc["config"]["numerics"]["sturm_liouville"]["tolerance"].is_number());
    assert!(doc["config"]["numerics"]["expectation"]["quad"]["rel_tol"].is_number());
}

#[test]
fn simulate_mirrors_task_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let mut c = bm_sweep();
    c["task"] = json!("simulate");
    c["params"]["mirror"] = json!("fpa-laplace");
    c["mc"] = small_mc(1);
    let cfg = write(&dir, "sim.json", &c);
    let (o1, a) = run(&cfg, &["--seed", "11", "--threads", "1"]);
    let (o2, b) = run(&cfg, &["--seed", "11", "--threads", "2"]);
    assert!(o1.status.success() && o2.status.success());
    assert_eq!(a["engine"], "mc");
    assert_eq!(a["config"]["mc"]["seed"], 11);
    assert_eq!(a["results"], b["results"]);
    let first = &a["results"][0];
    assert!(first["std_error"].as_f64().unwrap() > 0.0);
    let v = first["value"].as_f64().unwrap();
    assert!((v - 0.5).abs() < 4.0 * first["std_error"].as_f64().unwrap());
    let (_, c2) = run(&cfg, &["--seed", "12"]);
    assert_ne!(a["results"], c2["results"]);
}

#[test]
fn config_errors_name_the_field() {
    let dir = TempDir::new().unwrap();
    let mut c = bm_sweep();
    c["params"]["c"] = json!(0.3);
    let cfg = write(&dir, "bad.json", &c);
    let out = bin().arg("verify").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("params.c"));

    let mut c = bm_sweep();
    c["params"]["lamda"] = json!(1.0);
    let cfg = write(&dir, "typo.json", &c);
    let (out, _) = run(&cfg, &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lamda"));

    let mut c = bm_sweep();
    c["model"]["params"] = json!({ "mu": 0.0 });
    let cfg = write(&dir, "missing.json", &c);
    let (out, _) = run(&cfg, &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.params.sigma"));

    let out = bin().arg("run").arg(dir.path().join("absent.json")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn numeric_failure_exit_code() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "m.json",
        &json!({
            "task": "fpa-moments",
            "model": { "mu": "0.2 - x", "sigma": 0.5 },
            "weight": "1 + x^2",
            "params": { "a": -0.5, "c": 0.8, "v0": 0.1, "n": 2 },
            "numerics": { "moments": { "initial_degree": 4, "max_degree": 4, "tolerance": 1e-14 } }
        }),
    );
    let (out, doc) = run(&cfg, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(doc["status"], "numeric_failure");
    assert!(doc["message"].as_str().unwrap().contains("degree"));
}

#[test]
fn divergent_expectation_is_null() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "ay.json",
        &json!({
            "task": "ay-time",
            "model": { "builtin": "bm_drift", "params": { "mu": 0.0, "sigma": 1.0 } },
            "params": { "v0": 0.0, "contour": "x / 2 - 1" }
        }),
    );
    let (out, doc) = run(&cfg, &[]);
    assert!(out.status.success());
    assert!(doc["result"]["value"].is_null());
    assert_eq!(doc["result"]["diagnostics"]["diverged"], true);
}

#[test]
fn verify_wald_passes() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "wald.json",
        &json!({
            "task": "tax-ruin-time",
            "model": { "builtin": "bm_drift", "params": { "mu": -0.5, "sigma": 1.0 } },
            "gamma": 0.0,
            "params": { "a": 0.0, "v0": 1.0 },
            "mc": small_mc(3)
        }),
    );
    let out = bin().arg("verify").arg(&cfg).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["status"], "PASS");
    assert!((doc["rows"][0]["analytic"].as_f64().unwrap() - 2.0).abs() < 1e-4);
}

#[test]
fn verify_flags_biased_simulation() {
    // coarse grid without bridge correction misses most drawdowns in time
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "dd.json",
        &json!({
            "task": "drawdown-laplace",
            "model": { "builtin": "bm_drift", "params": { "mu": 0.0, "sigma": 1.0 } },
            "params": { "a_units": 1.0, "v0": 0.0, "beta": 1.0 },
            "mc": { "paths": 4000, "dt": 0.1, "seed": 1, "crossing": "interpolated", "horizon": { "fixed": 200.0 } }
        }),
    );
    let out = bin().arg("verify").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["rows"][0]["status"], "FAIL");
}
