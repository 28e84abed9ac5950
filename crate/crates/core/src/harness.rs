//! Rolling out-of-sample evaluation, the naive benchmark, OOS R², a
//! synthetic data generator with known truth, and the PCA redundancy check.

use chrono::NaiveDate;
use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{assemble_dataset, parse_period, Frequency, ModelSpec, SeriesTable, Transform};
use crate::error::{LarxError, Result};
use crate::linalg::sym_eigen_sorted;
use crate::moments::{weighted_cov, WeightVector};
use crate::solver_clarx::{fit, predict_rows};

/// Decay-weighted mean of a history of actuals.
pub fn naive_benchmark(history: &[f64], w: &WeightVector) -> Result<f64> {
    if history.is_empty() {
        return Err(LarxError::EmptySample);
    }
    if w.len() != history.len() {
        return Err(LarxError::Dimension(format!("{} weights for {} values", w.len(), history.len())));
    }
    Ok(history.iter().zip(w.values().iter()).map(|(h, w)| h * w).sum())
}

/// `1 − Σ(actual − forecast)² / Σ(actual − benchmark)²`.
pub fn oos_r2(actual: &[f64], forecast: &[f64], benchmark: &[f64]) -> Result<f64> {
    if actual.len() != forecast.len() || actual.len() != benchmark.len() {
        return Err(LarxError::Dimension("record series differ in length".into()));
    }
    if actual.len() < 2 {
        return Err(LarxError::UndefinedMetric(format!("{} usable records", actual.len())));
    }
    let sse = |other: &[f64]| actual.iter().zip(other).map(|(a, o)| (a - o) * (a - o)).sum::<f64>();
    let bench = sse(benchmark);
    if bench == 0.0 {
        return Err(LarxError::UndefinedMetric("benchmark errors are all zero".into()));
    }
    Ok(1.0 - sse(forecast) / bench)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForecastRecord {
    pub date: NaiveDate,
    pub actual: Option<f64>,
    pub forecast: Option<f64>,
    pub benchmark: Option<f64>,
    pub skipped: bool,
    pub reason: Option<String>,
    /// Rows in the estimation window.
    pub rows: usize,
    pub dof: i64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForecastRun {
    pub label: String,
    pub records: Vec<ForecastRecord>,
    /// `None` when fewer than two windows are usable or the benchmark is exact.
    pub oos_r2: Option<f64>,
    pub usable: usize,
}

impl ForecastRun {
    fn usable_series(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut a = Vec::new();
        let mut f = Vec::new();
        let mut b = Vec::new();
        for r in self.records.iter().filter(|r| !r.skipped) {
            a.push(r.actual.expect("usable record"));
            f.push(r.forecast.expect("usable record"));
            b.push(r.benchmark.expect("usable record"));
        }
        (a, f, b)
    }
}

/// One-step-ahead forecasts from expanding, decay-weighted windows. The
/// actual at each date is the realized dependent proxies weighted by that
/// window's own `ŵ`.
pub fn rolling_oos_forecast(table: &SeriesTable, spec: &ModelSpec, label: &str) -> Result<ForecastRun> {
    let data = assemble_dataset(spec, table)?;
    let freq = table.frequency();
    let s = data.len();
    let start = match &spec.sample.forecast_start {
        Some(p) => {
            let idx = parse_period(p, freq)?;
            data.dates
                .iter()
                .position(|d| freq.period_index(*d) >= idx)
                .ok_or_else(|| LarxError::InvalidSpec(format!("forecast_start {p} is after the last usable row")))?
        }
        None => 1,
    }
    .max(1);
    let params = data.problem.parameter_count() as i64;
    let min_dof = spec.sample.min_dof as i64;

    let records: Vec<ForecastRecord> = (start..s)
        .into_par_iter()
        .map(|i| {
            let date = data.dates[i];
            let dof = i as i64 - params;
            let skip = |reason: String, iterations: usize| ForecastRecord {
                date,
                actual: None,
                forecast: None,
                benchmark: None,
                skipped: true,
                reason: Some(reason),
                rows: i,
                dof,
                iterations,
            };
            if dof < min_dof {
                return skip(format!("degrees of freedom {dof} below minimum {min_dof}"), 0);
            }
            let window = match data.rows(0..i) {
                Ok(w) => w,
                Err(e) => return skip(e.to_string(), 0),
            };
            let result = match fit(&window, &spec.solver) {
                Ok(r) => r,
                Err(e) => return skip(format!("fit failed: {e}"), 0),
            };
            if !result.converged {
                return skip("fit did not converge".into(), result.iterations);
            }
            let row = |m: &DMatrix<f64>| m.rows(i, 1).into_owned();
            let pred = match predict_rows(&result, &row(&data.y), &row(&data.a), &row(&data.x)) {
                Ok(p) => p,
                Err(e) => return skip(e.to_string(), result.iterations),
            };
            let history: Vec<f64> = (&window.y * &result.w).iter().copied().collect();
            let bench = match naive_benchmark(&history, &window.weights) {
                Ok(b) => b,
                Err(e) => return skip(e.to_string(), result.iterations),
            };
            ForecastRecord {
                date,
                actual: Some(pred.latent[0]),
                forecast: Some(pred.fitted[0]),
                benchmark: Some(bench),
                skipped: false,
                reason: None,
                rows: i,
                dof,
                iterations: result.iterations,
            }
        })
        .collect();

    let mut run = ForecastRun { label: label.to_string(), records, oos_r2: None, usable: 0 };
    let (a, f, b) = run.usable_series();
    run.usable = a.len();
    if run.usable == 0 {
        return Err(LarxError::EmptyRun(format!("no usable forecast windows out of {}", run.records.len())));
    }
    run.oos_r2 = oos_r2(&a, &f, &b).ok();
    Ok(run)
}

/// Parameters of a synthetic LARX process in latent units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    /// One coefficient per autoregressive lag of the model.
    pub phi: Vec<f64>,
    /// Per group, one coefficient per lag.
    pub beta: Vec<Vec<f64>>,
    #[serde(default)]
    pub c: f64,
    pub rows: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
}

fn default_burn_in() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthTruth {
    /// Dependent proxy weights recovering the latent dependent exactly.
    pub w: Vec<f64>,
    /// Per group proxy weights recovering the latent driver exactly.
    pub omega: Vec<Vec<f64>>,
    pub phi: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
    pub c: f64,
    pub noise_sd: f64,
    pub seed: u64,
    pub dates: Vec<NaiveDate>,
    pub latent_y: Vec<f64>,
    pub latent_x: Vec<Vec<f64>>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Random well-conditioned mixing matrix whose inverse-transpose first column
/// is not a multiple of a basis vector.
fn mixing(rng: &mut ChaCha8Rng, m: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    for _ in 0..1000 {
        let mix = DMatrix::from_fn(m, m, |i, j| normal(rng) * 0.5 + if i == j { 1.0 } else { 0.0 });
        let sv = mix.singular_values();
        if sv.min() < 0.2 * sv.max() {
            continue;
        }
        let Some(inv) = mix.clone().try_inverse() else { continue };
        let target = inv.transpose().column(0).into_owned();
        let big = target.amax();
        if m > 1 && target.iter().filter(|v| v.abs() > 1e-3 * big).count() < 2 {
            continue;
        }
        return Ok((mix, target));
    }
    Err(LarxError::Numerical("could not draw a well-conditioned mixing matrix".into()))
}

fn check_stable(lags: &[usize], phi: &[f64]) -> Result<()> {
    let Some(&order) = lags.iter().max() else { return Ok(()) };
    let mut comp = DMatrix::zeros(order, order);
    for (l, p) in lags.iter().zip(phi) {
        comp[(0, l - 1)] += p;
    }
    for i in 1..order {
        comp[(i, i - 1)] = 1.0;
    }
    let radius = comp.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    if radius >= 1.0 {
        return Err(LarxError::Domain(format!("autoregression is not stable (spectral radius {radius:.4})")));
    }
    Ok(())
}

/// Simulates the latent process of `spec` and emits its proxies as random
/// invertible mixtures of the latent series and nuisance factors plus
/// measurement noise. With a log-return transform the proxies are emitted as
/// levels whose log returns equal the mixtures.
pub fn synth_generate(spec: &ModelSpec, params: &SynthParams, noise_sd: f64, seed: u64) -> Result<(SeriesTable, SynthTruth)> {
    spec.validate()?;
    if params.phi.len() != spec.ar.lags.len() {
        return Err(LarxError::Structure(format!("{} AR coefficients for {} lags", params.phi.len(), spec.ar.lags.len())));
    }
    if params.beta.len() != spec.exogenous.len()
        || params.beta.iter().zip(&spec.exogenous).any(|(b, g)| b.len() != g.lags.len())
    {
        return Err(LarxError::Structure("beta does not match the exogenous lags".into()));
    }
    if noise_sd.is_nan() || noise_sd < 0.0 || params.rows < 2 {
        return Err(LarxError::InvalidSpec("noise_sd must be nonnegative and rows at least 2".into()));
    }
    check_stable(&spec.ar.lags, &params.phi)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lead = matches!(spec.sample.transform, Transform::LogReturns) as usize;
    let total = params.burn_in + params.rows + lead;
    let k = spec.exogenous.len();
    let latent_x: Vec<Vec<f64>> = (0..k).map(|_| (0..total).map(|_| normal(&mut rng)).collect()).collect();
    let mut ly = vec![0.0; total];
    for t in 0..total {
        let mut v = params.c + noise_sd * normal(&mut rng);
        for (l, p) in spec.ar.lags.iter().zip(&params.phi) {
            if t >= *l {
                v += p * ly[t - l];
            }
        }
        for (j, g) in spec.exogenous.iter().enumerate() {
            for (l, b) in g.lags.iter().zip(&params.beta[j]) {
                if t >= *l {
                    v += b * latent_x[j][t - l];
                }
            }
        }
        ly[t] = v;
    }

    let mut columns = IndexMap::new();
    let keep = params.burn_in..total;
    let mut emit = |rng: &mut ChaCha8Rng, names: &[String], latent: &[f64]| -> Result<Vec<f64>> {
        let m = names.len();
        let (mix, target) = mixing(rng, m)?;
        let factors = DMatrix::from_fn(total, m, |t, i| if i == 0 { latent[t] } else { normal(rng) });
        let proxies = factors * mix.transpose();
        for (i, name) in names.iter().enumerate() {
            let mut col: Vec<f64> =
                keep.clone().map(|t| proxies[(t, i)] + noise_sd * normal(rng)).collect();
            if lead == 1 {
                let mut level = 100.0;
                col = col
                    .iter()
                    .map(|r| {
                        level *= r.exp();
                        level
                    })
                    .collect();
                col.insert(0, 100.0);
                col.pop();
            }
            if columns.insert(name.clone(), col.into_iter().map(Some).collect::<Vec<_>>()).is_some() {
                return Err(LarxError::InvalidSpec(format!("series {name} used twice")));
            }
        }
        Ok(target.iter().copied().collect())
    };
    let w = emit(&mut rng, &spec.dependent.proxies, &ly)?;
    let mut omega = Vec::with_capacity(k);
    for (g, lx) in spec.exogenous.iter().zip(&latent_x) {
        omega.push(emit(&mut rng, &g.proxies, lx)?);
    }

    let first = Frequency::Quarterly.period_index(NaiveDate::from_ymd_opt(2000, 3, 31).expect("valid date"));
    let dates: Vec<NaiveDate> =
        (0..params.rows + lead).map(|i| Frequency::Quarterly.period_end(first + i as i64)).collect();
    let table = SeriesTable::new(dates.clone(), columns, Frequency::Quarterly)?;
    let cut = |v: &[f64]| v[params.burn_in..].to_vec();
    let truth = SynthTruth {
        w,
        omega,
        phi: params.phi.clone(),
        beta: params.beta.clone(),
        c: params.c,
        noise_sd,
        seed,
        dates,
        latent_y: cut(&ly),
        latent_x: latent_x.iter().map(|v| cut(v)).collect(),
    };
    Ok((table, truth))
}

/// Checks that the combination `X·target` is reproduced by the same
/// combination of rotated columns `XΩ`, with `ω* = Ω'·target`.
pub fn rotation_redundancy_check(x: &DMatrix<f64>, rotation: &DMatrix<f64>, target: &DVector<f64>) -> Result<bool> {
    if rotation.nrows() != x.ncols() || target.len() != x.ncols() {
        return Err(LarxError::Dimension("rotation and target must match the columns of X".into()));
    }
    let direct = x * target;
    let omega = rotation.transpose() * target;
    let rotated = x * rotation * omega;
    let scale = direct.amax().max(1.0);
    Ok((rotated - direct).amax() <= 1e-10 * scale)
}

/// Principal-component version of [`rotation_redundancy_check`], optionally
/// keeping only the leading `components` eigenvectors.
pub fn pca_redundancy_check(x: &DMatrix<f64>, target: &DVector<f64>, components: Option<usize>) -> Result<bool> {
    let p = x.ncols();
    let sigma = weighted_cov(x, x, &WeightVector::equal(x.nrows())?)?;
    let (vals, vecs) = sym_eigen_sorted(&sigma);
    if vals[0] <= vals[p - 1] * 1e-12 {
        return Err(LarxError::Singular("X has a rank-deficient covariance".into()));
    }
    let k = components.unwrap_or(p).min(p);
    let omega = DMatrix::from_fn(p, k, |i, j| vecs[(i, p - 1 - j)]);
    rotation_redundancy_check(x, &omega, target)
}
