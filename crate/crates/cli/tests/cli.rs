use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

fn scratch(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("larx-cli-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn larx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_larx")).args(args).output().unwrap()
}

fn write_json(path: &Path, v: &Value) {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

fn quarter_end(i: usize) -> String {
    let (y, q) = (2000 + i / 4, i % 4);
    ["03-31", "06-30", "09-30", "12-31"].get(q).map(|d| format!("{y}-{d}")).unwrap()
}

/// A stationary ARX sample `y_t = 0.3 + 0.5 y_{t-1} + 0.8 x_t − 0.4 x_{t-1} + e_t`.
fn arx_csv(dir: &Path, rows: usize, seed: u64) -> (PathBuf, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut y = vec![0.0; rows];
    for t in 1..rows {
        y[t] = 0.3 + 0.5 * y[t - 1] + 0.8 * x[t] - 0.4 * x[t - 1] + 0.2 * rng.random_range(-1.0..1.0);
    }
    let mut text = String::from("date,y,x\n");
    for t in 0..rows {
        text.push_str(&format!("{},{},{}\n", quarter_end(t), y[t], x[t]));
    }
    let p = dir.join("arx.csv");
    std::fs::write(&p, text).unwrap();
    (p, y, x)
}

fn arx_config(dir: &Path, data: &Path) -> PathBuf {
    let cfg = json!({
        "variant": "baseline",
        "data": [data],
        "output_dir": dir.join("out"),
        "model": {
            "dependent": {"proxies": ["y"]},
            "ar": {"lags": [1]},
            "exogenous": [{"name": "g", "proxies": ["x"], "lags": [0, 1]}],
            "sample": {"half_life": 12.0, "min_dof": 20}
        }
    });
    let p = dir.join("arx.json");
    write_json(&p, &cfg);
    p
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn singleton_fit_matches_weighted_arx_regression() {
    let dir = scratch("fit");
    let (data, y, x) = arx_csv(&dir, 120, 1);
    let cfg = arx_config(&dir, &data);
    let out = larx(&["fit", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&read(dir.join("out/fit_report.json"))).unwrap();

    // Weighted normal equations on [1, y_{t-1}, x_t, x_{t-1}] for t ≥ 1.
    let s = y.len() - 1;
    let z = DMatrix::from_fn(s, 4, |r, j| {
        let t = r + 1;
        [1.0, y[t - 1], x[t], x[t - 1]][j]
    });
    let target = DVector::from_fn(s, |r, _| y[r + 1]);
    let w = DVector::from_fn(s, |r, _| (-((s - 1 - r) as f64) / 12.0).exp2());
    let zw = DMatrix::from_fn(s, 4, |r, j| z[(r, j)] * w[r]);
    let coef = (zw.transpose() * &z).lu().solve(&(zw.transpose() * target)).unwrap();

    let c = &report["coefficients"];
    let got = [
        c["c"].as_f64().unwrap(),
        c["phi"][0].as_f64().unwrap(),
        c["beta"][0][0].as_f64().unwrap(),
        c["beta"][0][1].as_f64().unwrap(),
    ];
    for (g, e) in got.iter().zip(coef.iter()) {
        assert!((g - e).abs() < 1e-8, "{got:?} vs {coef}");
    }
    assert_eq!(report["sample"]["rows"], 119);
    assert_eq!(report["convergence"]["converged"], true);
}

#[test]
fn emitted_config_reproduces_the_report() {
    let dir = scratch("roundtrip");
    let (data, _, _) = arx_csv(&dir, 80, 2);
    let cfg = arx_config(&dir, &data);
    assert!(larx(&["fit", "--config", cfg.to_str().unwrap(), "--seed", "5"]).status.success());
    let first = read(dir.join("out/fit_report.json"));
    let report: Value = serde_json::from_str(&first).unwrap();
    assert_eq!(report["config"]["seed"], 5);
    let sub = dir.join("nested");
    std::fs::create_dir_all(&sub).unwrap();
    let again = sub.join("resolved.json");
    write_json(&again, &report["config"]);
    let out2 = sub.join("out");
    assert!(larx(&["fit", "--config", again.to_str().unwrap(), "--out", out2.to_str().unwrap()]).status.success());
    assert_eq!(read(out2.join("fit_report.json")), first);
    assert!(report["config"].get("output_dir").is_none());
}

#[test]
fn forecast_writes_run_csv_and_summary() {
    let dir = scratch("forecast");
    let (data, _, _) = arx_csv(&dir, 80, 3);
    let cfg = arx_config(&dir, &data);
    let out = larx(&["forecast", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.join("out/forecast.csv"));
    assert_eq!(csv.lines().next().unwrap(), "date,actual,forecast,benchmark,skipped,reason");
    assert_eq!(csv.lines().count(), 1 + 78);
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary["oos_r2"].as_f64().unwrap() > 0.0);
    let csv_out = larx(&["forecast", "--config", cfg.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(String::from_utf8(csv_out.stdout).unwrap(), csv);
}

#[test]
fn errors_are_json_with_stable_codes() {
    let dir = scratch("errors");
    let (data, _, _) = arx_csv(&dir, 40, 4);
    let cfg = dir.join("bad.json");
    write_json(&cfg, &json!({
        "variant": "baseline",
        "data": [data],
        "model": {"dependent": {"proxies": ["missing"]}}
    }));
    let out = larx(&["fit", "--config", cfg.to_str().unwrap(), "--out", dir.join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["code"], "unknown_series");

    write_json(&cfg, &json!({
        "variant": "latent_x",
        "data": [data],
        "model": {"dependent": {"proxies": ["y"]}, "exogenous": [{"name": "g", "proxies": ["x"], "lags": [0]}]}
    }));
    let out = larx(&["fit", "--config", cfg.to_str().unwrap()]);
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["code"], "config");

    write_json(&cfg, &json!({"variant": "baseline", "data": [data], "model": {"dependent": {"proxies": ["y"]}}}));
    std::fs::write(dir.join("broken.csv"), "date,y\n2000-03-31,1\n2000-06-30,x\n").unwrap();
    let out = larx(&["fit", "--config", cfg.to_str().unwrap(), "--data", dir.join("broken.csv").to_str().unwrap()]);
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["code"], "csv");
    assert!(err["error"]["message"].as_str().unwrap().contains("line 3"));
}

fn synth_config(dir: &Path) -> PathBuf {
    let src: Value = serde_json::from_str(&read(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/synthetic.json"))).unwrap();
    let mut cfg = src.clone();
    cfg["data"] = json!([dir.join("out/synth.csv")]);
    cfg["output_dir"] = json!(dir.join("out"));
    let p = dir.join("synthetic.json");
    write_json(&p, &cfg);
    p
}

#[test]
fn synth_is_byte_identical_for_a_seed() {
    let dir = scratch("synth");
    let cfg = synth_config(&dir);
    let run = |seed: &str| {
        assert!(larx(&["synth", "--config", cfg.to_str().unwrap(), "--seed", seed]).status.success());
        (read(dir.join("out/synth.csv")), read(dir.join("out/truth.json")))
    };
    let a = run("7");
    let b = run("7");
    let c = run("8");
    assert_eq!(a, b);
    assert_ne!(a.0, c.0);
}

#[test]
fn check_passes_on_the_synthetic_config() {
    let dir = scratch("check");
    let cfg = synth_config(&dir);
    assert!(larx(&["synth", "--config", cfg.to_str().unwrap()]).status.success());
    let out = larx(&["check", "--config", cfg.to_str().unwrap()]);
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(out.status.success(), "{summary}");
    assert_eq!(summary["failed"], 0);
    assert!(summary["passed"].as_u64().unwrap() >= 8);
}

/// Random-walk prices with the column names the empirical configs expect.
fn fake_snapshot(dir: &Path) -> (PathBuf, PathBuf) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut walk = |n: usize, sd: f64| -> Vec<f64> {
        let mut p = 100.0;
        (0..n)
            .map(|_| {
                p *= (sd * rng.random_range(-1.0..1.0f64)).exp();
                p
            })
            .collect()
    };
    let q = ["GDPC1", "PCECC96", "GPDIC1", "GCEC1", "EXPGSC1", "IMPGSC1"];
    let cols: Vec<Vec<f64>> = q.iter().map(|_| walk(144, 0.02)).collect();
    let mut text = format!("date,{}\n", q.join(","));
    for t in 0..144usize {
        let (y, m) = (1989 + t.div_ceil(4), ((t + 3) % 4) * 3 + 1);
        let row: Vec<String> = cols.iter().map(|c| c[t].to_string()).collect();
        text.push_str(&format!("{y}-{m:02}-01,{}\n", row.join(",")));
    }
    let gdp = dir.join("gdp.csv");
    std::fs::write(&gdp, text).unwrap();
    let m = ["US500", "SPNY", "SPLRCM", "SPLRCI", "SPSY", "SPXHC", "SPLRCD", "SPLRCS", "SPLRCL", "SPLRCT", "SPLRCU"];
    let cols: Vec<Vec<f64>> = m.iter().map(|_| walk(432, 0.05)).collect();
    let mut text = format!("date,{}\n", m.join(","));
    for t in 0..432 {
        let (y, mo) = (1989 + (t + 9) / 12, (t + 9) % 12 + 1);
        let next = if mo == 12 { chrono_last(y + 1, 1) } else { chrono_last(y, mo + 1) };
        let row: Vec<String> = cols.iter().map(|c| c[t].to_string()).collect();
        text.push_str(&format!("{next},{}\n", row.join(",")));
    }
    let sp = dir.join("sp500.csv");
    std::fs::write(&sp, text).unwrap();
    (gdp, sp)
}

/// Last day of the month before `(y, m)`.
fn chrono_last(y: usize, m: usize) -> String {
    let d = chrono::NaiveDate::from_ymd_opt(y as i32, m as u32, 1).unwrap().pred_opt().unwrap();
    d.to_string()
}

#[test]
fn every_empirical_config_runs_on_a_snapshot_layout() {
    let dir = scratch("empirical");
    let (gdp, sp) = fake_snapshot(&dir);
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    for v in ["baseline", "latent_x", "latent_y", "latent_both"] {
        for name in [v.to_string(), format!("reversed_{v}")] {
            let cfg = format!("{root}/{name}.json");
            let out_dir = dir.join(&name);
            let out = larx(&[
                "forecast",
                "--config",
                &cfg,
                "--data",
                gdp.to_str().unwrap(),
                "--data",
                sp.to_str().unwrap(),
                "--out",
                out_dir.to_str().unwrap(),
            ]);
            assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
            let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
            assert!(summary["usable"].as_u64().unwrap() >= 2, "{name}: {summary}");
            let first = read(out_dir.join("forecast.csv"));
            let skipped = first.lines().skip(1).filter(|l| l.contains(",true,")).count();
            assert!(skipped > 0, "{name}: the 40-DoF rule should skip early windows");
        }
    }
}
