//! The property suite behind `larx check`: internal identities on seeded
//! random inputs, plus first-order conditions of the configured model when
//! data or a synthetic section is given.

use larx_core::blockops::{
    bds_transpose_commutes, bds_vec, blockwise_inner, factor_khatri_rao, khatri_rao_vec, BlockStructure, BlockVec,
};
use larx_core::design::{assemble_dataset, Constraints, Dataset, GroupConstraint, GroupDims, Layout, Problem, SeriesTable};
use larx_core::diagnostics::{fit_gradient, weighted_ols};
use larx_core::harness::{pca_redundancy_check, synth_generate};
use larx_core::moments::{build_moment_set, WeightVector};
use larx_core::solver_clarx::{fit, predict};
use larx_core::special::{caa_decompose, cca_decompose, circular_moments, fit_lar1, fit_lvmr, IterOptions};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    /// Worst observed discrepancy, or the statistic being bounded.
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

fn result(name: &str, value: f64, tolerance: f64, at_least: bool, detail: String) -> CheckResult {
    let pass = if at_least { value >= tolerance } else { value <= tolerance };
    CheckResult { name: name.to_string(), pass: pass && value.is_finite(), value, tolerance, detail }
}

fn failed(name: &str, tolerance: f64, detail: String) -> CheckResult {
    CheckResult { name: name.to_string(), pass: false, value: f64::NAN, tolerance, detail }
}

fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(rand_distr::StandardNormal))
}

fn direction_gap(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let a = a.normalize();
    let b = b.normalize();
    (&a - &b).amax().min((&a + &b).amax())
}

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn int_block_vec(rng: &mut ChaCha8Rng, s: &BlockStructure) -> BlockVec {
    let data = DVector::from_fn(s.total(), |_, _| rng.random_range(-9..=9) as f64);
    BlockVec::new(data, s.clone()).expect("matching length")
}

fn operator_identities(rng: &mut ChaCha8Rng, cases: usize) -> CheckResult {
    let mut misses = 0usize;
    for _ in 0..cases {
        let k = rng.random_range(1..=5);
        let sa = BlockStructure::new((0..k).map(|_| rng.random_range(1..=6)).collect()).expect("positive sizes");
        let sb = BlockStructure::new((0..k).map(|_| rng.random_range(1..=6)).collect()).expect("positive sizes");
        let a = int_block_vec(rng, &sa);
        let b = int_block_vec(rng, &sb);
        let a2 = int_block_vec(rng, &sa);
        let kr = khatri_rao_vec(&a, &b).expect("compatible").into_data();
        let (left, right) = factor_khatri_rao(&a, &b).expect("compatible");
        misses += (&left * b.data() != kr) as usize;
        misses += (&right * a.data() != kr) as usize;
        misses += (blockwise_inner(&a, &a2).expect("same structure").into_data() != bds_vec(&a).transpose() * a2.data()) as usize;
        let mats: Vec<DMatrix<f64>> = sa.sizes().iter().map(|&r| {
                let c = rng.random_range(1..=3);
                randn(rng, r, c)
            }).collect();
        misses += !bds_transpose_commutes(&mats) as usize;
    }
    result("operator_identities", misses as f64, 0.0, false, format!("{cases} block configurations"))
}

fn ols_reduction(rng: &mut ChaCha8Rng, cases: usize) -> CheckResult {
    let mut worst = 0.0f64;
    for i in 0..cases {
        let va = rng.random_range(0..=2);
        let k = rng.random_range(if va == 0 { 1 } else { 0 }..=2);
        let groups: Vec<GroupDims> = (0..k).map(|_| GroupDims { m: 1, v: rng.random_range(1..=3) }).collect();
        let layout = Layout { n: 1, va, groups };
        let s = 80;
        let a = randn(rng, s, va);
        let x = randn(rng, s, layout.px());
        let z = DMatrix::from_fn(s, va + layout.px(), |t, j| if j < va { a[(t, j)] } else { x[(t, j - va)] });
        let y = &z * randn(rng, z.ncols(), 1) + randn(rng, s, 1) * 0.5;
        let constraints = Constraints {
            dep_variance: None,
            dep_sum: None,
            groups: (0..k).map(|_| GroupConstraint { variance: None, sum: None, version: 0 }).collect(),
        };
        let run = || -> larx_core::Result<f64> {
            let d = Dataset::from_matrices(y.clone(), a.clone(), x.clone(), Problem { layout, constraints }, 20.0)?;
            let f = fit(&d, &Default::default())?;
            let p = predict(&f, &d)?;
            let (coef, c, _) = weighted_ols(&y.column(0).into_owned(), &z, &d.weights)?;
            Ok((p.fitted - (&z * coef).add_scalar(c)).amax())
        };
        match run() {
            Ok(g) => worst = worst.max(g),
            Err(e) => return failed("ols_reduction", 1e-8, format!("problem {i}: {e}")),
        }
    }
    result("ols_reduction", worst, 1e-8, false, format!("{cases} non-latent problems, fitted-value gap"))
}

fn cca_fixed_point(rng: &mut ChaCha8Rng, cases: usize) -> CheckResult {
    let mut worst = 0.0f64;
    for i in 0..cases {
        let (s, n, p) = (200, rng.random_range(2..=5), rng.random_range(2..=5));
        let zf = randn(rng, s, 1);
        let y = &zf * randn(rng, 1, n) + randn(rng, s, n) * 0.6;
        let x = &zf * randn(rng, 1, p) + randn(rng, s, p) * 0.6;
        let w = WeightVector::equal(s).expect("nonempty");
        let run = || -> larx_core::Result<f64> {
            let f = fit_lvmr(&y, &x, &w, 1.0, IterOptions::default())?;
            let m = build_moment_set(&y, &DMatrix::zeros(s, 0), &x, &BlockStructure::new(vec![p])?, &w)?;
            let top = cca_decompose(&m)?.swap_remove(0);
            Ok((f.rho_y - top.rho2).abs().max(direction_gap(&f.w, &top.w)))
        };
        match run() {
            Ok(g) => worst = worst.max(g),
            Err(e) => return failed("cca_fixed_point", 1e-6, format!("problem {i}: {e}")),
        }
    }
    result("cca_fixed_point", worst, 1e-6, false, format!("{cases} problems, LVMR fixed point vs eigenpair"))
}

fn caa_eigenpair(rng: &mut ChaCha8Rng, cases: usize) -> CheckResult {
    let mut worst = 0.0f64;
    for i in 0..cases {
        let (s, n) = (200, rng.random_range(2..=5));
        let mut f = vec![0.0; s];
        for t in 1..s {
            f[t] = 0.8 * f[t - 1] + rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        let load = randn(rng, 1, n);
        let y = DMatrix::from_fn(s, n, |t, j| f[t] * load[(0, j)]) + randn(rng, s, n) * 0.7;
        let run = || -> larx_core::Result<f64> {
            let m = circular_moments(&y)?;
            let fit = fit_lar1(&m, 1.0, IterOptions::default())?;
            let d = caa_decompose(&m)?;
            Ok((fit.phi - d.eigenvalues[0]).abs().max(direction_gap(&fit.w, &d.eigenvectors[0])))
        };
        match run() {
            Ok(g) => worst = worst.max(g),
            Err(e) => return failed("caa_eigenpair", 1e-6, format!("problem {i}: {e}")),
        }
    }
    result("caa_eigenpair", worst, 1e-6, false, format!("{cases} circular panels, LAR(1) vs eigenpair"))
}

fn pca_redundancy(rng: &mut ChaCha8Rng, cases: usize) -> CheckResult {
    let mut misses = 0usize;
    for _ in 0..cases {
        let x = randn(rng, 60, 5);
        let target = DVector::from_fn(5, |_, _| rng.sample(rand_distr::StandardNormal));
        misses += !matches!(pca_redundancy_check(&x, &target, None), Ok(true)) as usize;
    }
    result("pca_redundancy", misses as f64, 0.0, false, format!("{cases} random samples"))
}

fn model_conditions(cfg: &RunConfig, table: &SeriesTable, prefix: &str) -> Vec<CheckResult> {
    let gname = format!("{prefix}_gradient");
    let cname = format!("{prefix}_constraints");
    let run = || -> larx_core::Result<(f64, f64, bool)> {
        let d = assemble_dataset(&cfg.model, table)?;
        let f = fit(&d, &cfg.model.solver)?;
        let g = fit_gradient(&f, &d.moments()?)?;
        Ok((g.max_norm(&f.problem), f.constraint_residuals.max_relative(&f.problem), f.converged))
    };
    match run() {
        Ok((g, c, conv)) => {
            let note = if conv { "converged" } else { "not converged" };
            vec![result(&gname, g, 1e-6, false, note.into()), result(&cname, c, 1e-8, false, note.into())]
        }
        Err(e) => vec![failed(&gname, 1e-6, e.to_string()), failed(&cname, 1e-8, e.to_string())],
    }
}

fn synthetic(cfg: &RunConfig) -> Vec<CheckResult> {
    let Some(s) = &cfg.synth else {
        return Vec::new();
    };
    let run = || -> larx_core::Result<(SeriesTable, f64)> {
        let (table, truth) = synth_generate(&cfg.model, &s.params, s.noise_sd, cfg.seed)?;
        let d = assemble_dataset(&cfg.model, &table)?;
        let f = fit(&d, &cfg.model.solver)?;
        let fitted = &d.y * &f.w;
        let truth_latent = &d.y * DVector::from_vec(truth.w);
        Ok((table, corr(fitted.as_slice(), truth_latent.as_slice())))
    };
    match run() {
        Ok((table, c)) => {
            let mut out = vec![result("synthetic_recovery", c, 0.99, true, format!("noise_sd {}", s.noise_sd))];
            out.extend(model_conditions(cfg, &table, "synthetic"));
            out
        }
        Err(e) => vec![failed("synthetic_recovery", 0.99, e.to_string())],
    }
}

pub fn run_checks(cfg: &RunConfig, table: Option<&SeriesTable>) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.check.cases.max(1);
    let mut out = vec![
        operator_identities(&mut rng, n),
        ols_reduction(&mut rng, n),
        cca_fixed_point(&mut rng, n),
        caa_eigenpair(&mut rng, n),
        pca_redundancy(&mut rng, n),
    ];
    if let Some(t) = table {
        out.extend(model_conditions(cfg, t, "model"));
    }
    out.extend(synthetic(cfg));
    out
}
