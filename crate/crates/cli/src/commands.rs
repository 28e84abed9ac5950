//! Command dispatch. Every command returns its artifacts as in-memory text so
//! that output bytes depend only on the inputs.

use larx_core::blockops::BlockStructure;
use larx_core::design::{assemble_dataset, ArSpec, SeriesTable, Target};
use larx_core::diagnostics::{conditional_stderr, fit_gradient, ols_view, Coefficient};
use larx_core::harness::{rolling_oos_forecast, synth_generate};
use larx_core::moments::build_moment_set;
use larx_core::solver_clarx::{fit, predict, FitResult};
use larx_core::special::caa_decompose;
use serde::Serialize;
use serde_json::{json, Value};

use crate::check::run_checks;
use crate::config::RunConfig;
use crate::data::{csv_text, fmt_opt, load_tables, table_csv};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Fit,
    Forecast,
    Caa,
    Synth,
    Check,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub artifacts: Vec<Artifact>,
    /// Printed for `--format json`.
    pub summary: Value,
    /// Printed for `--format csv`.
    pub table: String,
    pub failed_checks: usize,
}

fn pretty(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn artifact(name: &str, contents: String) -> Artifact {
    Artifact { name: name.to_string(), contents }
}

fn split(v: &[f64], sizes: impl Iterator<Item = usize>) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut at = 0;
    for s in sizes {
        out.push(v[at..at + s].to_vec());
        at += s;
    }
    out
}

pub fn run(cmd: Command, cfg: &RunConfig) -> CliResult<Outcome> {
    cfg.validate()?;
    let mut cfg = cfg.clone();
    cfg.model.solver.seed = cfg.seed;
    // Artifacts must not depend on where they are written.
    cfg.output_dir = None;
    match cmd {
        Command::Fit => run_fit(&cfg),
        Command::Forecast => run_forecast(&cfg),
        Command::Caa => run_caa(&cfg),
        Command::Synth => run_synth(&cfg),
        Command::Check => run_check(&cfg),
    }
}

fn load(cfg: &RunConfig) -> CliResult<SeriesTable> {
    load_tables(&cfg.data)
}

fn coefficient_table(f: &FitResult, names: &[String]) -> (Value, Vec<Vec<String>>) {
    let l = &f.problem.layout;
    let omega = split(f.omega.as_slice(), l.groups.iter().map(|g| g.m));
    let beta = split(f.beta.as_slice(), l.groups.iter().map(|g| g.v));
    let mut rows = vec![vec!["c".into(), String::new(), "0".into(), f.c.to_string()]];
    let mut push = |name: &str, group: &str, v: &[f64]| {
        for (i, x) in v.iter().enumerate() {
            rows.push(vec![name.into(), group.into(), i.to_string(), x.to_string()]);
        }
    };
    push("w", "", f.w.as_slice());
    push("phi", "", f.phi.as_slice());
    for (j, label) in names.iter().enumerate() {
        push("omega", label, &omega[j]);
        push("beta", label, &beta[j]);
    }
    let v = json!({"c": f.c, "w": f.w.as_slice(), "phi": f.phi.as_slice(), "omega": omega, "beta": beta});
    (v, rows)
}

fn run_fit(cfg: &RunConfig) -> CliResult<Outcome> {
    let table = load(cfg)?;
    let d = assemble_dataset(&cfg.model, &table)?;
    let f = fit(&d, &cfg.model.solver)?;
    let m = d.moments()?;
    let grad = fit_gradient(&f, &m)?;
    let mut views = Vec::new();
    for which in Coefficient::ALL {
        let v = ols_view(&f, &d, which)?;
        if v.ols_coefficients.is_empty() {
            continue;
        }
        let se = conditional_stderr(&v).ok().map(|s| s.as_slice().to_vec());
        views.push(json!({
            "coefficient": which.name(),
            "ols": v.ols_coefficients.as_slice(),
            "intercept": v.ols_intercept,
            "fit": v.fit_coefficients.as_slice(),
            "agreement_gap": v.agreement_gap,
            "stderr": se,
        }));
    }
    let names: Vec<String> = cfg.model.exogenous.iter().map(|g| g.name.clone()).collect();
    let (coefs, coef_rows) = coefficient_table(&f, &names);
    let report = json!({
        "config": cfg,
        "variant": cfg.variant.label(),
        "sample": {
            "rows": d.len(),
            "first": d.dates.first().map(|x| x.to_string()),
            "last": d.dates.last().map(|x| x.to_string()),
            "parameter_count": f.problem.parameter_count(),
        },
        "targets": &f.problem.constraints,
        "coefficients": coefs,
        "multipliers": {
            "rho_y": f.rho_y,
            "rho_l": f.rho_l,
            "lambda_x": f.lambda_x.as_slice(),
            "lambda_p": f.lambda_p.as_slice(),
        },
        "constraint_residuals": &f.constraint_residuals,
        "convergence": {
            "converged": f.converged,
            "iterations": f.iterations,
            "objective": f.objective,
            "initial_objective": f.initial_objective,
            "pinv_fallback": f.pinv_fallback,
            "gradient_max_norm": grad.max_norm(&f.problem),
        },
        "ols_views": views,
    });
    let p = predict(&f, &d)?;
    let series: Vec<Vec<String>> = (0..d.len())
        .map(|i| vec![d.dates[i].to_string(), p.latent[i].to_string(), p.fitted[i].to_string(), p.residuals[i].to_string()])
        .collect();
    let header = ["date", "actual", "fitted", "residual"].map(String::from);
    let summary = json!({
        "command": "fit",
        "variant": cfg.variant.label(),
        "rows": d.len(),
        "converged": f.converged,
        "iterations": f.iterations,
        "objective": f.objective,
    });
    Ok(Outcome {
        artifacts: vec![artifact("fit_report.json", pretty(&report)), artifact("fitted.csv", csv_text(&header, &series))],
        summary,
        table: csv_text(&["name", "group", "index", "value"].map(String::from), &coef_rows),
        failed_checks: 0,
    })
}

fn run_forecast(cfg: &RunConfig) -> CliResult<Outcome> {
    let table = load(cfg)?;
    let label = cfg.variant.label();
    let run = rolling_oos_forecast(&table, &cfg.model, &label)?;
    let header = ["date", "actual", "forecast", "benchmark", "skipped", "reason"].map(String::from);
    let rows: Vec<Vec<String>> = run
        .records
        .iter()
        .map(|r| {
            vec![
                r.date.to_string(),
                fmt_opt(r.actual),
                fmt_opt(r.forecast),
                fmt_opt(r.benchmark),
                r.skipped.to_string(),
                r.reason.clone().unwrap_or_default(),
            ]
        })
        .collect();
    let first = run.records.iter().find(|r| !r.skipped).map(|r| r.date.to_string());
    let summary = json!({
        "command": "forecast",
        "label": run.label,
        "oos_r2": run.oos_r2,
        "usable": run.usable,
        "windows": run.records.len(),
        "first_forecast": first,
    });
    let report = json!({"config": cfg, "summary": &summary, "records": &run.records});
    let csv = csv_text(&header, &rows);
    Ok(Outcome {
        artifacts: vec![artifact("forecast.csv", csv.clone()), artifact("forecast.json", pretty(&report))],
        summary,
        table: csv,
        failed_checks: 0,
    })
}

/// Canonical autocorrelation of the dependent proxies on the model's sample
/// and weights.
fn run_caa(cfg: &RunConfig) -> CliResult<Outcome> {
    let table = load(cfg)?;
    let mut spec = cfg.model.clone();
    spec.ar = ArSpec { lags: vec![1] };
    spec.exogenous.clear();
    spec.dependent.variance_target = Some(Target::Value(1.0));
    spec.dependent.sum_target = None;
    let d = assemble_dataset(&spec, &table)?;
    let m = build_moment_set(&d.y, &d.a, &d.x, &BlockStructure::new(vec![])?, &d.weights)?;
    let caa = caa_decompose(&m)?;
    let names = &cfg.model.dependent.proxies;
    let mut header = vec!["rank".to_string(), "eigenvalue".to_string()];
    header.extend(names.iter().cloned());
    let rows: Vec<Vec<String>> = caa
        .eigenvalues
        .iter()
        .zip(&caa.eigenvectors)
        .enumerate()
        .map(|(i, (e, v))| {
            let mut r = vec![(i + 1).to_string(), e.to_string()];
            r.extend(v.iter().map(|x| x.to_string()));
            r
        })
        .collect();
    let csv = csv_text(&header, &rows);
    let summary = json!({
        "command": "caa",
        "rows": d.len(),
        "eigenvalues": caa.eigenvalues.as_slice(),
        "stationarity_gap": caa.stationarity_gap,
        "warnings": caa.warnings,
    });
    Ok(Outcome { artifacts: vec![artifact("caa.csv", csv.clone())], summary, table: csv, failed_checks: 0 })
}

fn run_synth(cfg: &RunConfig) -> CliResult<Outcome> {
    let s = cfg.synth.as_ref().ok_or_else(|| CliError::Config("synth needs a \"synth\" section".into()))?;
    let (table, truth) = synth_generate(&cfg.model, &s.params, s.noise_sd, cfg.seed)?;
    let csv = table_csv(&table);
    let summary = json!({"command": "synth", "rows": table.len(), "seed": cfg.seed, "noise_sd": s.noise_sd});
    Ok(Outcome {
        artifacts: vec![artifact("synth.csv", csv.clone()), artifact("truth.json", pretty(&truth))],
        summary,
        table: csv,
        failed_checks: 0,
    })
}

fn run_check(cfg: &RunConfig) -> CliResult<Outcome> {
    let table = if cfg.data.is_empty() { None } else { Some(load(cfg)?) };
    let results = run_checks(cfg, table.as_ref());
    let failed = results.iter().filter(|r| !r.pass).count();
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| vec![r.name.clone(), r.pass.to_string(), r.value.to_string(), r.tolerance.to_string(), r.detail.clone()])
        .collect();
    let summary = json!({"command": "check", "passed": results.len() - failed, "failed": failed, "checks": &results});
    let csv = csv_text(&["name", "pass", "value", "tolerance", "detail"].map(String::from), &rows);
    Ok(Outcome { artifacts: vec![artifact("check.json", pretty(&summary))], summary, table: csv, failed_checks: failed })
}
