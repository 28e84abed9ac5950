//! Independent oracles and randomized fixtures shared by the integration
//! tests and the acceptance suite.
#![allow(dead_code)]

use std::time::Instant;

use larx_core::blockops::{
    bds_transpose_commutes, bds_vec, blockwise_inner, direct_sum, factor_khatri_rao, khatri_rao_vec, kr_vec_identity,
    BlockStructure, BlockVec,
};
use larx_core::design::{
    assemble_dataset, Constraints, Dataset, GroupConstraint, GroupDims, Layout, ModelSpec, Problem, SolverOptions,
};
use larx_core::diagnostics::{fit_gradient, lagrangian_gradient, ols_view, Coefficient};
use larx_core::harness::{synth_generate, SynthParams};
use larx_core::moments::WeightVector;
use larx_core::solver_clarx::{fit, predict, Multipliers, State};
use larx_core::special::{caa_decompose, cca_decompose, circular_moments, fit_lar1, fit_lsr, fit_lvmr, IterOptions};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::json;

pub type Check = Result<String, String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn randn_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn randint(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-9i32..=9) as f64)
}

pub fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// Runs a criterion and prefixes its detail with the elapsed time, failing
/// when the runtime budget is exceeded.
pub fn timed(budget_s: f64, f: impl FnOnce() -> Check) -> Check {
    let t0 = Instant::now();
    let out = f();
    let dt = t0.elapsed().as_secs_f64();
    match out {
        Ok(d) if dt <= budget_s => Ok(format!("{d} ({dt:.2}s)")),
        Ok(d) => Err(format!("{d} but took {dt:.2}s > {budget_s}s")),
        Err(e) => Err(format!("{e} ({dt:.2}s)")),
    }
}

pub fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Distance between two directions, ignoring scale and sign.
pub fn direction_gap(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let a = a.normalize();
    let b = b.normalize();
    (&a - &b).amax().min((&a + &b).amax())
}

// ---------------------------------------------------------------- oracles

/// Two-pass weighted covariance.
pub fn cov_oracle(a: &DMatrix<f64>, b: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let s = a.nrows();
    let ma: Vec<f64> = (0..a.ncols()).map(|i| (0..s).map(|t| w[t] * a[(t, i)]).sum()).collect();
    let mb: Vec<f64> = (0..b.ncols()).map(|j| (0..s).map(|t| w[t] * b[(t, j)]).sum()).collect();
    DMatrix::from_fn(a.ncols(), b.ncols(), |i, j| (0..s).map(|t| w[t] * (a[(t, i)] - ma[i]) * (b[(t, j)] - mb[j])).sum())
}

/// Weighted least squares with intercept through the raw normal equations.
/// Returns `(intercept, slopes, fitted)`.
pub fn wls_oracle(y: &DVector<f64>, z: &DMatrix<f64>, w: &[f64]) -> (f64, DVector<f64>, DVector<f64>) {
    let s = z.nrows();
    let p = z.ncols() + 1;
    let design = DMatrix::from_fn(s, p, |t, j| if j == 0 { 1.0 } else { z[(t, j - 1)] });
    let wd = DMatrix::from_fn(s, p, |t, j| w[t] * design[(t, j)]);
    let lhs = design.transpose() * &wd;
    let rhs = wd.transpose() * y;
    let coef = lhs.lu().solve(&rhs).expect("nonsingular normal equations");
    let fitted = &design * &coef;
    (coef[0], coef.rows(1, p - 1).into_owned(), fitted)
}

pub fn sym_inv_sqrt(s: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(s.clone());
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|v| 1.0 / v.sqrt()));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

/// Leading canonical correlation squared and the matching dependent weights,
/// from the SVD of the symmetrically whitened cross-covariance.
pub fn cca_oracle(sy: &DMatrix<f64>, syx: &DMatrix<f64>, sx: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let wy = sym_inv_sqrt(sy);
    let k = &wy * syx * sym_inv_sqrt(sx);
    let svd = k.svd(true, false);
    let (i, top) = svd.singular_values.iter().enumerate().fold((0, -1.0), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc });
    let u = svd.u.expect("requested").column(i).into_owned();
    (top * top, wy * u)
}

/// Largest-magnitude eigenpair of `½Σ_Y⁻¹(Σ_AY + Σ_YA)` via symmetric whitening.
pub fn caa_oracle(sy: &DMatrix<f64>, sya: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let wy = sym_inv_sqrt(sy);
    let c = (sya + sya.transpose()) * 0.5;
    let e = SymmetricEigen::new(&wy * c * &wy);
    let i = (0..e.eigenvalues.len()).max_by(|&a, &b| e.eigenvalues[a].abs().total_cmp(&e.eigenvalues[b].abs())).unwrap();
    (e.eigenvalues[i], wy * e.eigenvectors.column(i))
}

pub fn brute_direct_sum(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let r: usize = blocks.iter().map(|b| b.nrows()).sum();
    let c: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(r, c);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        for i in 0..b.nrows() {
            for j in 0..b.ncols() {
                out[(r0 + i, c0 + j)] = b[(i, j)];
            }
        }
        r0 += b.nrows();
        c0 += b.ncols();
    }
    out
}

pub fn brute_kr(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::new();
    for (ai, bi) in a.iter().zip(b) {
        for x in ai {
            for y in bi {
                out.push(x * y);
            }
        }
    }
    out
}

/// Residual series `Yw − A(φ⊗w) − X(β⊙ω)` computed column by column.
pub fn latent_residual(d: &Dataset, st: &State) -> DVector<f64> {
    let l = &d.problem.layout;
    let s = d.len();
    let mut e = &d.y * &st.w;
    for v in 0..l.va {
        e -= d.a.columns(v * l.n, l.n) * &st.w * st.phi[v];
    }
    let (mut col, mut bi, mut oi) = (0, 0, 0);
    for g in &l.groups {
        let om = st.omega.rows(oi, g.m);
        for _ in 0..g.v {
            e -= d.x.columns(col, g.m) * om * st.beta[bi];
            col += g.m;
            bi += 1;
        }
        oi += g.m;
    }
    assert_eq!(e.len(), s);
    e
}

/// Lagrangian built directly from the sample, with the intercept profiled out.
pub fn lagrangian_oracle(d: &Dataset, st: &State, mu: &Multipliers) -> f64 {
    let w = d.weights.values().as_slice();
    let e = latent_residual(d, st);
    let mean: f64 = e.iter().zip(w).map(|(x, w)| x * w).sum();
    let mut v: f64 = e.iter().zip(w).map(|(x, w)| w * (x - mean).powi(2)).sum();
    let c = &d.problem.constraints;
    let l = &d.problem.layout;
    if let Some(s2) = c.dep_variance {
        v += (mu.rho_y - 1.0) * ((st.w.transpose() * cov_oracle(&d.y, &d.y, w) * &st.w)[0] - s2);
    }
    if let Some(ly) = c.dep_sum {
        v += 2.0 * mu.rho_l * (st.w.sum() - ly);
    }
    let (mut col, mut oi) = (0, 0);
    for (j, g) in l.groups.iter().enumerate() {
        let om = st.omega.rows(oi, g.m).into_owned();
        let gc = &c.groups[j];
        let xv = d.x.columns(col + gc.version * g.m, g.m).into_owned();
        if let Some(s2) = gc.variance {
            v += mu.lambda_x[j] * ((om.transpose() * cov_oracle(&xv, &xv, w) * &om)[0] - s2);
        }
        if let Some(lj) = gc.sum {
            v += mu.lambda_p[j] * (om.sum() - lj);
        }
        col += g.m * g.v;
        oi += g.m;
    }
    v
}

fn fd_component(f: &dyn Fn(&DVector<f64>) -> f64, x: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let h = 1e-5 * x[i].abs().max(1.0);
        let mut p = x.clone();
        p[i] += h;
        let up = f(&p);
        p[i] -= 2.0 * h;
        (up - f(&p)) / (2.0 * h)
    })
}

/// Central finite differences of the oracle Lagrangian: `[w, ω, φ, β]`.
pub fn fd_gradient(d: &Dataset, st: &State, mu: &Multipliers) -> [DVector<f64>; 4] {
    let gw = fd_component(&|v| lagrangian_oracle(d, &State { w: v.clone(), ..st.clone() }, mu), &st.w);
    let go = fd_component(&|v| lagrangian_oracle(d, &State { omega: v.clone(), ..st.clone() }, mu), &st.omega);
    let gp = fd_component(&|v| lagrangian_oracle(d, &State { phi: v.clone(), ..st.clone() }, mu), &st.phi);
    let gb = fd_component(&|v| lagrangian_oracle(d, &State { beta: v.clone(), ..st.clone() }, mu), &st.beta);
    [gw, go, gp, gb]
}

// --------------------------------------------------------------- fixtures

pub fn names(prefix: &str, k: usize) -> Vec<String> {
    (0..k).map(|i| format!("{prefix}{i}")).collect()
}

/// A synthetic-data spec: `n` dependent proxies, AR lags `ar`, and one group
/// per entry of `groups` as `(proxies, lags)`. Every latent side carries a
/// unit variance target.
pub fn synth_spec(n: usize, ar: &[usize], groups: &[(usize, &[usize])]) -> ModelSpec {
    let dep = if n > 1 {
        json!({"proxies": names("y", n), "variance_target": 1.0})
    } else {
        json!({"proxies": names("y", n)})
    };
    let ex: Vec<_> = groups
        .iter()
        .enumerate()
        .map(|(j, (m, lags))| json!({"name": format!("g{j}"), "proxies": names(&format!("x{j}_"), *m), "lags": lags}))
        .collect();
    serde_json::from_value(json!({
        "dependent": dep, "ar": {"lags": ar}, "exogenous": ex, "solver": {"max_iter": 5000}
    }))
    .unwrap()
}

pub fn synth_dataset(spec: &ModelSpec, params: &SynthParams, noise: f64, seed: u64) -> (Dataset, larx_core::harness::SynthTruth) {
    let (table, truth) = synth_generate(spec, params, noise, seed).unwrap();
    (assemble_dataset(spec, &table).unwrap(), truth)
}

/// Non-latent ARX problem with random regressors.
pub fn random_arx(rng: &mut ChaCha8Rng) -> Dataset {
    let va = rng.random_range(0..=2usize);
    let k = rng.random_range(if va == 0 { 1 } else { 0 }..=2usize);
    let groups: Vec<GroupDims> = (0..k).map(|_| GroupDims { m: 1, v: rng.random_range(1..=3) }).collect();
    let layout = Layout { n: 1, va, groups };
    let s = rng.random_range(60..=120);
    let a = randn(rng, s, va);
    let x = randn(rng, s, layout.px());
    let y = &a * randn_vec(rng, va) + &x * randn_vec(rng, layout.px()) + randn_vec(rng, s) * 0.5;
    let half_life = if rng.random_bool(0.5) { f64::INFINITY } else { rng.random_range(8.0..40.0) };
    let constraints = Constraints {
        dep_variance: None,
        dep_sum: None,
        groups: (0..k).map(|_| GroupConstraint { variance: None, sum: None, version: 0 }).collect(),
    };
    Dataset::from_matrices(DMatrix::from_column_slice(s, 1, y.as_slice()), a, x, Problem { layout, constraints }, half_life)
        .unwrap()
}

/// Two latent groups plus a latent dependent, each with an active variance
/// and sum target chosen inside the feasible region.
pub fn random_constrained(seed: u64) -> Dataset {
    let spec = synth_spec(3, &[1], &[(3, &[0, 1]), (3, &[0, 1])]);
    let params = SynthParams { phi: vec![0.4], beta: vec![vec![1.0, 0.5], vec![-0.7, 0.3]], c: 0.1, rows: 200, burn_in: 100 };
    let (mut d, _) = synth_dataset(&spec, &params, 0.3, seed);
    let w = d.weights.values().as_slice().to_vec();
    let targets = |m: &DMatrix<f64>, frac: f64| {
        let s = cov_oracle(m, m, &w);
        let k = m.ncols() as f64;
        let var = s.trace() / k;
        let ones = DVector::from_element(m.ncols(), 1.0);
        let q = (ones.transpose() * s.try_inverse().unwrap() * &ones)[0];
        (var, frac * (var * q).sqrt())
    };
    let (dv, dl) = targets(&d.y, 0.5);
    d.problem.constraints.dep_variance = Some(dv);
    d.problem.constraints.dep_sum = Some(dl);
    let mut col = 0;
    for j in 0..2 {
        let g = d.problem.layout.groups[j];
        let (v, l) = targets(&d.x.columns(col, g.m).into_owned(), 0.6);
        d.problem.constraints.groups[j] = GroupConstraint { variance: Some(v), sum: Some(l), version: 0 };
        col += g.m * g.v;
    }
    d
}

// ------------------------------------------------------------- criteria

fn block_cfg(rng: &mut ChaCha8Rng, k: usize) -> BlockStructure {
    BlockStructure::new((0..k).map(|_| rng.random_range(1..=6)).collect()).unwrap()
}

fn block_vec(rng: &mut ChaCha8Rng, s: &BlockStructure, int: bool) -> BlockVec {
    let data = if int { randint(rng, s.total(), 1) } else { randn(rng, s.total(), 1) };
    BlockVec::new(data.column(0).into_owned(), s.clone()).unwrap()
}

fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    a.shape() == b.shape() && (a - b).iter().all(|v| v.abs() <= tol)
}

fn closev(a: &DVector<f64>, b: &DVector<f64>, tol: f64) -> bool {
    a.len() == b.len() && (a - b).iter().all(|v| v.abs() <= tol)
}

/// Direct-sum, block-diagonal and Khatri-Rao identities on randomized block
/// configurations.
pub fn operator_identities(configs: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    for int in [true, false] {
        let tol = if int { 0.0 } else { 1e-12 };
        for cfg in 0..configs {
            let k = rng.random_range(1..=5);
            let shapes: Vec<(usize, usize)> = (0..k).map(|_| (rng.random_range(1..=6), rng.random_range(1..=6))).collect();
            let gen = |rng: &mut ChaCha8Rng, r, c| if int { randint(rng, r, c) } else { randn(rng, r, c) };
            let mats: Vec<DMatrix<f64>> = shapes.iter().map(|&(r, c)| gen(&mut rng, r, c)).collect();
            let ds = direct_sum(&mats).unwrap();
            ensure(close(&ds, &brute_direct_sum(&mats), 0.0), format!("direct sum placement, config {cfg}"))?;
            let tr: Vec<DMatrix<f64>> = mats.iter().map(|m| m.transpose()).collect();
            ensure(
                close(&ds.transpose(), &direct_sum(&tr).unwrap(), tol) && bds_transpose_commutes(&mats),
                format!("direct sum transpose, config {cfg}"),
            )?;

            let sa = block_cfg(&mut rng, k);
            let sb = block_cfg(&mut rng, k);
            let a = block_vec(&mut rng, &sa, int);
            let b = block_vec(&mut rng, &sb, int);
            let ak = kr_vec_identity(&a, &BlockStructure::singletons(k)).unwrap();
            ensure(close(&bds_vec(&a), &ak, tol), format!("block diagonal as a ⊙ I, config {cfg}"))?;

            let b2 = block_vec(&mut rng, &sa, int);
            let lhs = bds_vec(&a).transpose() * b2.data();
            let rhs = bds_vec(&b2).transpose() * a.data();
            let inner = blockwise_inner(&a, &b2).unwrap();
            let loops = DVector::from_fn(k, |i, _| a.block(i).dot(&b2.block(i)));
            ensure(
                closev(&lhs, &rhs, tol) && closev(&lhs, inner.data(), tol) && closev(&loops, inner.data(), tol),
                format!("blockwise inner product symmetry, config {cfg}"),
            )?;

            let ms: Vec<DMatrix<f64>> = shapes
                .iter()
                .map(|&(r, _)| {
                    let rows = rng.random_range(1..=6);
                    gen(&mut rng, rows, r)
                })
                .collect();
            let prods: Vec<DMatrix<f64>> = ms.iter().zip(&mats).map(|(m, a)| m * a).collect();
            ensure(
                close(&direct_sum(&prods).unwrap(), &(direct_sum(&ms).unwrap() * &ds), tol),
                format!("direct sum of products, config {cfg}"),
            )?;

            let kr = khatri_rao_vec(&a, &b).unwrap();
            let blocks = |v: &BlockVec| (0..k).map(|i| v.block(i).iter().copied().collect()).collect::<Vec<Vec<f64>>>();
            let brute = DVector::from_vec(brute_kr(&blocks(&a), &blocks(&b)));
            let (left, right) = factor_khatri_rao(&a, &b).unwrap();
            ensure(
                closev(kr.data(), &brute, tol)
                    && closev(&(left * b.data()), &brute, tol)
                    && closev(&(right * a.data()), &brute, tol)
                    && kr.structure().sizes().iter().zip(sa.sizes().iter().zip(sb.sizes())).all(|(r, (x, y))| *r == x * y),
                format!("Khatri-Rao factorizations, config {cfg}"),
            )?;
        }
    }
    Ok(format!("{configs} integer and {configs} float configurations"))
}

/// Non-latent fits against closed-form weighted OLS.
pub fn ols_reduction(problems: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..problems {
        let d = random_arx(&mut rng);
        let f = fit(&d, &SolverOptions::default()).map_err(|e| format!("problem {i}: {e}"))?;
        let p = predict(&f, &d).unwrap();
        let z = DMatrix::from_fn(d.len(), d.a.ncols() + d.x.ncols(), |t, j| {
            if j < d.a.ncols() { d.a[(t, j)] } else { d.x[(t, j - d.a.ncols())] }
        });
        let (_, _, fitted) = wls_oracle(&d.y.column(0).into_owned(), &z, d.weights.values().as_slice());
        let gap = (&p.fitted - fitted).amax();
        worst = worst.max(gap);
        ensure(f.converged && gap <= 1e-8, format!("problem {i}: converged {} gap {gap:.3e}", f.converged))?;
    }
    Ok(format!("{problems} problems, max fitted gap {worst:.2e}"))
}

/// Data with one dominant shared factor between `Y` and `X`.
pub fn cca_data(rng: &mut ChaCha8Rng, s: usize, n: usize, p: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let z = randn(rng, s, 1);
    let y = &z * randn(rng, 1, n) + randn(rng, s, n) * 0.6;
    let x = &z * randn(rng, 1, p) + randn(rng, s, p) * 0.6;
    (y, x)
}

pub fn cca_equivalence(problems: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let (mut worst_r, mut worst_w): (f64, f64) = (0.0, 0.0);
    for i in 0..problems {
        let n = rng.random_range(3..=6);
        let p = rng.random_range(3..=6);
        let (y, x) = cca_data(&mut rng, 300, n, p);
        let w = WeightVector::equal(300).unwrap();
        let f = fit_lvmr(&y, &x, &w, 1.0, IterOptions::default()).map_err(|e| format!("problem {i}: {e}"))?;
        let ws = vec![1.0 / 300.0; 300];
        let (rho2, wo) = cca_oracle(&cov_oracle(&y, &y, &ws), &cov_oracle(&y, &x, &ws), &cov_oracle(&x, &x, &ws));
        let dr = (f.rho_y - rho2).abs();
        let dw = direction_gap(&f.w, &wo);
        let m = larx_core::moments::build_moment_set(&y, &DMatrix::zeros(300, 0), &x, &BlockStructure::new(vec![p]).unwrap(), &w)
            .unwrap();
        let top = &cca_decompose(&m).unwrap()[0];
        let dr2 = (top.rho2 - rho2).abs();
        let dw2 = direction_gap(&top.w, &wo);
        worst_r = worst_r.max(dr).max(dr2);
        worst_w = worst_w.max(dw).max(dw2);
        ensure(f.converged, format!("problem {i}: LVMR did not converge"))?;
        ensure(dr <= 1e-8 && dr2 <= 1e-8, format!("problem {i}: correlation gap {dr:.3e} / {dr2:.3e}"))?;
        ensure(dw <= 1e-6 && dw2 <= 1e-6, format!("problem {i}: weight gap {dw:.3e} / {dw2:.3e}"))?;
    }
    Ok(format!("{problems} problems, max ρ² gap {worst_r:.2e}, max weight gap {worst_w:.2e}"))
}

/// Latent AR(1) factor mixed into `n` observed series plus white noise.
pub fn persistent_panel(rng: &mut ChaCha8Rng, s: usize, n: usize) -> DMatrix<f64> {
    let mut f = vec![0.0; s];
    for t in 1..s {
        f[t] = 0.8 * f[t - 1] + rng.sample::<f64, _>(StandardNormal);
    }
    let load = randn(rng, 1, n);
    DMatrix::from_fn(s, n, |t, j| f[t] * load[(0, j)]) + randn(rng, s, n) * 0.7
}

pub fn caa_equivalence(problems: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let (mut worst, mut worst_rho): (f64, f64) = (0.0, 0.0);
    for i in 0..problems {
        let n = rng.random_range(2..=5);
        let y = persistent_panel(&mut rng, 200, n);
        let m = circular_moments(&y).unwrap();
        let f = fit_lar1(&m, 1.0, IterOptions::default()).map_err(|e| format!("problem {i}: {e}"))?;
        let (phi, wo) = caa_oracle(&m.sigma_y, &m.sigma_ya);
        // Oracle weights normalized to w'Σ_Y w = 1 with the fit's sign.
        let scale = (wo.transpose() * &m.sigma_y * &wo)[0].sqrt();
        let mut wo = wo / scale;
        if wo.dot(&f.w) < 0.0 {
            wo.neg_mut();
        }
        let dw = (&f.w - &wo).amax();
        let dp = (f.phi - phi).abs();
        let dr = (f.rho_y - phi * phi).abs();
        let d = caa_decompose(&m).unwrap();
        let dd = (d.eigenvalues[0] - phi).abs().max(direction_gap(&d.eigenvectors[0], &wo));
        worst = worst.max(dw).max(dp).max(dd);
        worst_rho = worst_rho.max(dr);
        ensure(dw <= 1e-6 && dp <= 1e-6 && dd <= 1e-6, format!("problem {i}: w gap {dw:.3e}, φ gap {dp:.3e}, eig gap {dd:.3e}"))?;
        ensure(dr <= 1e-8, format!("problem {i}: ρ_y − φ² = {dr:.3e}"))?;
    }
    Ok(format!("{problems} problems, max (w, φ) gap {worst:.2e}, max |ρ_y − φ²| {worst_rho:.2e}"))
}

pub fn kkt_suite(problems: usize, states: usize, seed: u64) -> Check {
    let mut worst_res: f64 = 0.0;
    let mut worst_grad: f64 = 0.0;
    for i in 0..problems {
        let d = random_constrained(seed + i as u64);
        let f = fit(&d, &SolverOptions { max_iter: 5000, ..SolverOptions::default() }).map_err(|e| format!("problem {i}: {e}"))?;
        ensure(f.converged, format!("problem {i}: not converged after {} iterations", f.iterations))?;
        let res = f.constraint_residuals.max_relative(&f.problem);
        let g = fit_gradient(&f, &d.moments().unwrap()).unwrap().max_norm(&f.problem);
        worst_res = worst_res.max(res);
        worst_grad = worst_grad.max(g);
        ensure(res <= 1e-8, format!("problem {i}: constraint residual {res:.3e}"))?;
        ensure(g <= 1e-6, format!("problem {i}: gradient norm {g:.3e}"))?;
    }
    let mut rng = rng(seed ^ 0xfd);
    let mut worst_fd: f64 = 0.0;
    for i in 0..states {
        let d = random_constrained(seed + 1000 + i as u64);
        let l = &d.problem.layout;
        let st = State {
            w: randn_vec(&mut rng, l.n),
            omega: randn_vec(&mut rng, l.omega_len()),
            phi: randn_vec(&mut rng, l.va),
            beta: randn_vec(&mut rng, l.beta_len()),
        };
        let mu = Multipliers {
            rho_y: rng.random_range(0.0..2.0),
            rho_l: rng.random_range(-1.0..1.0),
            lambda_x: randn_vec(&mut rng, l.k()),
            lambda_p: randn_vec(&mut rng, l.k()),
        };
        let an = lagrangian_gradient(&st, &mu, &d.moments().unwrap(), &d.problem).unwrap();
        let fd = fd_gradient(&d, &st, &mu);
        for (name, (a, b)) in ["w", "omega", "phi", "beta"].iter().zip([&an.w, &an.omega, &an.phi, &an.beta].into_iter().zip(&fd)) {
            let rel = (a - b).norm() / b.norm().max(1.0);
            worst_fd = worst_fd.max(rel);
            ensure(rel <= 1e-6, format!("state {i}: {name} gradient differs from finite differences by {rel:.3e}"))?;
        }
    }
    Ok(format!(
        "{problems} fits (max residual {worst_res:.2e}, max gradient {worst_grad:.2e}); {states} states (max FD gap {worst_fd:.2e})"
    ))
}

/// Unconstrained fixtures: latent explanatory only, latent dependent only,
/// both latent, and several lag layouts.
pub fn unconstrained_fixtures() -> Vec<Dataset> {
    let p2 = |rows| SynthParams { phi: vec![0.5], beta: vec![vec![1.0, 0.4]], c: 0.3, rows, burn_in: 100 };
    let p3 = |rows| SynthParams { phi: vec![0.3, 0.2], beta: vec![vec![0.8], vec![-0.5, 0.2, 0.1]], c: 0.0, rows, burn_in: 100 };
    let mut out = Vec::new();
    for seed in 0..3 {
        out.push(synth_dataset(&synth_spec(1, &[1], &[(3, &[0, 1])]), &p2(150), 0.2, seed).0);
        out.push(synth_dataset(&synth_spec(3, &[1], &[(1, &[0, 1])]), &p2(150), 0.2, seed).0);
        out.push(synth_dataset(&synth_spec(3, &[1], &[(3, &[0, 1])]), &p2(150), 0.2, seed).0);
        out.push(synth_dataset(&synth_spec(4, &[1, 2], &[(2, &[1]), (3, &[0, 1, 2])]), &p3(200), 0.2, seed).0);
    }
    out
}

pub fn conditional_ols_consistency() -> Check {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (i, d) in unconstrained_fixtures().iter().enumerate() {
        let f = fit(d, &SolverOptions { max_iter: 5000, ..SolverOptions::default() }).map_err(|e| format!("fixture {i}: {e}"))?;
        if !f.converged {
            return Err(format!("fixture {i}: not converged"));
        }
        count += 1;
        for which in [Coefficient::Phi, Coefficient::Omega, Coefficient::Beta] {
            let v = ols_view(&f, d, which).unwrap();
            worst = worst.max(v.agreement_gap);
            ensure(v.agreement_gap <= 1e-8, format!("fixture {i}: {} gap {:.3e}", which.name(), v.agreement_gap))?;
        }
        if !f.problem.dependent_fixed() {
            // The dependent weights solve the normal equations shifted by
            // the variance multiplier.
            let v = ols_view(&f, d, Coefficient::W).unwrap();
            let w = d.weights.values().as_slice();
            let acol = DMatrix::from_column_slice(v.a.len(), 1, v.a.as_slice());
            let mut r = cov_oracle(&v.b, &v.b, w) * &f.w - cov_oracle(&v.b, &acol, w).column(0)
                + cov_oracle(&d.y, &d.y, w) * &f.w * (f.rho_y - 1.0);
            if f.problem.constraints.dep_sum.is_some() {
                r = r.add_scalar(f.rho_l);
            }
            let gap = r.amax() / f.w.amax();
            worst = worst.max(gap);
            ensure(gap <= 1e-8, format!("fixture {i}: w normal-equation gap {gap:.3e}"))?;
        }
    }
    Ok(format!("{count} converged fixtures, max gap {worst:.2e}"))
}

pub fn recovery_spec() -> (ModelSpec, SynthParams) {
    (synth_spec(3, &[1], &[(3, &[0, 1])]), SynthParams { phi: vec![0.5], beta: vec![vec![1.0, 0.5]], c: 0.2, rows: 500, burn_in: 100 })
}

/// Mean correlation of recovered and true latent dependent over seeds.
pub fn mean_recovery(noise: f64, seeds: u64) -> Result<f64, String> {
    let (spec, params) = recovery_spec();
    let mut total = 0.0;
    for seed in 0..seeds {
        let (d, truth) = synth_dataset(&spec, &params, noise, seed);
        let f = fit(&d, &spec.solver).map_err(|e| format!("seed {seed}: {e}"))?;
        let truth_latent = &d.y * DVector::from_vec(truth.w.clone());
        total += corr((&d.y * &f.w).as_slice(), truth_latent.as_slice());
    }
    Ok(total / seeds as f64)
}

pub fn synthetic_recovery(seeds: u64) -> Check {
    let grid = [(0.0, 0.9999), (0.001, 0.999), (0.01, 0.99)];
    let mut got = Vec::new();
    for (noise, need) in grid {
        let c = mean_recovery(noise, seeds)?;
        ensure(c >= need, format!("noise {noise}: mean correlation {c:.8} < {need}"))?;
        got.push(c);
    }
    ensure(got.windows(2).all(|w| w[0] >= w[1]), format!("not monotone in noise: {got:?}"))?;
    Ok(format!("mean correlations {:.10} / {:.10} / {:.10}", got[0], got[1], got[2]))
}

pub fn lsr_rank_one(seed: u64) -> Check {
    let mut rng = rng(seed);
    let (f, m, s) = (4, 5, 120);
    let beta = randn_vec(&mut rng, f);
    let omega = randn_vec(&mut rng, m);
    let truth = DVector::from_fn(f * m, |i, _| beta[i / m] * omega[i % m]);
    let x = randn(&mut rng, s, f * m);
    let y = (&x * &truth).add_scalar(0.7);
    let fitted = fit_lsr(&y, &x, f, m, &WeightVector::equal(s).unwrap(), IterOptions::default()).map_err(|e| e.to_string())?;
    let gap = (fitted.coefficients() - &truth).amax();
    let params = fitted.slope_parameter_count();
    ensure(gap <= 1e-8, format!("coefficient gap {gap:.3e}"))?;
    ensure((fitted.c - 0.7).abs() <= 1e-8, format!("intercept {}", fitted.c))?;
    ensure(params == f + m, format!("{params} slope parameters"))?;
    Ok(format!("coefficient gap {gap:.2e}, {params} slope parameters"))
}
