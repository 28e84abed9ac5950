//! From raw series to the aligned sample matrices `Y`, `A` and `X`: log
//! returns, calendar alignment, lag versions, outlier removal and target
//! resolution.

use chrono::{Datelike, NaiveDate};
use indexmap::IndexMap;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::blockops::BlockStructure;
use crate::error::{LarxError, Result};
use crate::moments::{exp_decay_weights, WeightVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    Monthly,
    Quarterly,
}

impl Frequency {
    /// Consecutive integer index of the period containing `d`.
    pub fn period_index(self, d: NaiveDate) -> i64 {
        let m0 = d.month0() as i64;
        match self {
            Frequency::Monthly => d.year() as i64 * 12 + m0,
            Frequency::Quarterly => d.year() as i64 * 4 + m0 / 3,
        }
    }

    /// Last calendar day of the period with index `idx`.
    pub fn period_end(self, idx: i64) -> NaiveDate {
        let (year, last_month0) = match self {
            Frequency::Monthly => (idx.div_euclid(12), idx.rem_euclid(12)),
            Frequency::Quarterly => (idx.div_euclid(4), idx.rem_euclid(4) * 3 + 2),
        };
        let (ny, nm) = if last_month0 == 11 { (year + 1, 1) } else { (year, last_month0 + 2) };
        NaiveDate::from_ymd_opt(ny as i32, nm as u32, 1).expect("valid calendar date").pred_opt().expect("valid date")
    }
}

/// Parses `YYYY-MM-DD` or `YYYYQn` into a period index.
pub fn parse_period(text: &str, freq: Frequency) -> Result<i64> {
    let t = text.trim();
    if let Some((y, q)) = t.split_once(['Q', 'q']) {
        let year: i64 = y.parse().map_err(|_| LarxError::Domain(format!("bad period '{t}'")))?;
        let q: i64 = q.parse().map_err(|_| LarxError::Domain(format!("bad period '{t}'")))?;
        if !(1..=4).contains(&q) {
            return Err(LarxError::Domain(format!("bad quarter in '{t}'")));
        }
        let month0 = (q - 1) * 3 + 2;
        return Ok(match freq {
            Frequency::Quarterly => year * 4 + q - 1,
            Frequency::Monthly => year * 12 + month0,
        });
    }
    let d = NaiveDate::parse_from_str(t, "%Y-%m-%d")
        .map_err(|_| LarxError::Domain(format!("bad date '{t}'")))?;
    Ok(freq.period_index(d))
}

/// Named, date-indexed series; missing cells are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesTable {
    dates: Vec<NaiveDate>,
    columns: IndexMap<String, Vec<Option<f64>>>,
    frequency: Frequency,
}

impl SeriesTable {
    pub fn new(
        dates: Vec<NaiveDate>,
        columns: IndexMap<String, Vec<Option<f64>>>,
        frequency: Frequency,
    ) -> Result<Self> {
        for w in dates.windows(2) {
            if frequency.period_index(w[1]) <= frequency.period_index(w[0]) {
                return Err(LarxError::Structure(format!(
                    "dates not strictly ascending by period at {}",
                    w[1]
                )));
            }
        }
        for (name, col) in &columns {
            if col.len() != dates.len() {
                return Err(LarxError::Structure(format!(
                    "column {name} has {} values for {} dates",
                    col.len(),
                    dates.len()
                )));
            }
        }
        Ok(Self { dates, columns, frequency })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn frequency(&self) -> Frequency {
        self.frequency
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(|s| s.as_str())
    }

    pub fn column(&self, name: &str) -> Option<&[Option<f64>]> {
        self.columns.get(name).map(|c| c.as_slice())
    }

    pub fn columns(&self) -> &IndexMap<String, Vec<Option<f64>>> {
        &self.columns
    }

    /// Same data on a gap-free grid of period-end dates; inserted periods are
    /// missing in every column.
    pub fn to_regular_grid(&self) -> SeriesTable {
        if self.dates.is_empty() {
            return self.clone();
        }
        let f = self.frequency;
        let first = f.period_index(self.dates[0]);
        let last = f.period_index(*self.dates.last().expect("nonempty"));
        let len = (last - first + 1) as usize;
        let dates = (first..=last).map(|i| f.period_end(i)).collect();
        let mut columns = IndexMap::new();
        for (name, col) in &self.columns {
            let mut out = vec![None; len];
            for (d, v) in self.dates.iter().zip(col) {
                out[(f.period_index(*d) - first) as usize] = *v;
            }
            columns.insert(name.clone(), out);
        }
        SeriesTable { dates, columns, frequency: f }
    }

    /// Outer join on periods. All tables must share a frequency and have
    /// distinct column names.
    pub fn join(tables: &[SeriesTable]) -> Result<SeriesTable> {
        let first = tables.first().ok_or(LarxError::EmptySample)?;
        let f = first.frequency;
        let mut periods: Vec<i64> = Vec::new();
        for t in tables {
            if t.frequency != f {
                return Err(LarxError::Structure("joining tables of different frequency".into()));
            }
            periods.extend(t.dates.iter().map(|d| f.period_index(*d)));
        }
        periods.sort_unstable();
        periods.dedup();
        let pos: std::collections::HashMap<i64, usize> =
            periods.iter().enumerate().map(|(i, p)| (*p, i)).collect();
        let mut columns = IndexMap::new();
        for t in tables {
            for (name, col) in &t.columns {
                if columns.contains_key(name) {
                    return Err(LarxError::Structure(format!("duplicate column {name}")));
                }
                let mut out = vec![None; periods.len()];
                for (d, v) in t.dates.iter().zip(col) {
                    out[pos[&f.period_index(*d)]] = *v;
                }
                columns.insert(name.clone(), out);
            }
        }
        let dates = periods.iter().map(|p| f.period_end(*p)).collect();
        SeriesTable::new(dates, columns, f)
    }
}

/// `r_t = ln(p_t / p_{t-1})`.
pub fn log_returns(levels: &[f64]) -> Result<Vec<f64>> {
    if levels.len() < 2 {
        return Err(LarxError::InsufficientHistory("log returns need two levels".into()));
    }
    if let Some(p) = levels.iter().find(|p| p.is_nan() || **p <= 0.0) {
        return Err(LarxError::Domain(format!("nonpositive level {p}")));
    }
    Ok(levels.windows(2).map(|w| (w[1] / w[0]).ln()).collect())
}

/// Keeps the last monthly observation of each complete calendar quarter,
/// keyed by the quarter-end date. A quarter counts as complete when its final
/// month is present.
pub fn quarter_end_sample(monthly: &SeriesTable) -> Result<SeriesTable> {
    if monthly.frequency != Frequency::Monthly {
        return Err(LarxError::Structure("quarter_end_sample needs a monthly table".into()));
    }
    let mut keep = Vec::new();
    for (i, d) in monthly.dates.iter().enumerate() {
        if d.month() % 3 == 0 {
            keep.push(i);
        }
    }
    let dates = keep
        .iter()
        .map(|&i| Frequency::Quarterly.period_end(Frequency::Quarterly.period_index(monthly.dates[i])))
        .collect();
    let columns = monthly
        .columns
        .iter()
        .map(|(k, col)| (k.clone(), keep.iter().map(|&i| col[i]).collect()))
        .collect();
    SeriesTable::new(dates, columns, Frequency::Quarterly)
}

/// Lagged copies of the columns of `series`, one column block per lag, on the
/// rows where every lag is available.
pub fn build_versions(series: &DMatrix<f64>, lags: &[usize]) -> Result<DMatrix<f64>> {
    let s = series.nrows();
    let m = series.ncols();
    let max_lag = lags.iter().copied().max().unwrap_or(0);
    if max_lag >= s {
        return Err(LarxError::InsufficientHistory(format!("lag {max_lag} with {s} rows")));
    }
    let rows = s - max_lag;
    let mut out = DMatrix::zeros(rows, m * lags.len());
    for (b, &lag) in lags.iter().enumerate() {
        let src = series.rows(max_lag - lag, rows);
        out.columns_mut(b * m, m).copy_from(&src);
    }
    Ok(out)
}

/// A constraint target: a literal, the full-sample variance of the group's
/// single proxy, or the full-sample variance of a named series.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Value(f64),
    FullSample,
    FullSampleOf(String),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TargetRepr {
    Num(f64),
    Text(String),
}

impl Serialize for Target {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Target::Value(v) => TargetRepr::Num(*v),
            Target::FullSample => TargetRepr::Text("full_sample".into()),
            Target::FullSampleOf(c) => TargetRepr::Text(format!("full_sample:{c}")),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Target {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match TargetRepr::deserialize(d)? {
            TargetRepr::Num(v) => Ok(Target::Value(v)),
            TargetRepr::Text(t) if t == "full_sample" => Ok(Target::FullSample),
            TargetRepr::Text(t) => match t.strip_prefix("full_sample:") {
                Some(c) if !c.is_empty() => Ok(Target::FullSampleOf(c.to_string())),
                _ => Err(serde::de::Error::custom(format!("unknown target '{t}'"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DependentSpec {
    pub proxies: Vec<String>,
    #[serde(default)]
    pub variance_target: Option<Target>,
    #[serde(default)]
    pub sum_target: Option<Target>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArSpec {
    #[serde(default)]
    pub lags: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub name: String,
    pub proxies: Vec<String>,
    pub lags: Vec<usize>,
    #[serde(default)]
    pub variance_target: Option<Target>,
    #[serde(default)]
    pub sum_target: Option<Target>,
    #[serde(default)]
    pub constrained_version: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub obj_tol: f64,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iter: 500, tol: 1e-10, obj_tol: 1e-15, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    None,
    LogReturns,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSpec {
    /// Half-life in periods; absent means equal weights.
    pub half_life: Option<f64>,
    pub min_dof: usize,
    pub outliers: Vec<String>,
    pub forecast_start: Option<String>,
    pub transform: Transform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub dependent: DependentSpec,
    #[serde(default)]
    pub ar: ArSpec,
    #[serde(default)]
    pub exogenous: Vec<GroupSpec>,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub sample: SampleSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupDims {
    /// Proxies in the group.
    pub m: usize,
    /// Versions (lags) of the group.
    pub v: usize,
}

/// Dimensions of a LARX problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub n: usize,
    pub va: usize,
    pub groups: Vec<GroupDims>,
}

impl Layout {
    pub fn k(&self) -> usize {
        self.groups.len()
    }

    /// Columns of `X`.
    pub fn px(&self) -> usize {
        self.groups.iter().map(|g| g.m * g.v).sum()
    }

    /// Length of ω.
    pub fn omega_len(&self) -> usize {
        self.groups.iter().map(|g| g.m).sum()
    }

    /// Length of β.
    pub fn beta_len(&self) -> usize {
        self.groups.iter().map(|g| g.v).sum()
    }

    pub fn omega_structure(&self) -> BlockStructure {
        BlockStructure::new(self.groups.iter().map(|g| g.m).collect()).expect("m_j ≥ 1")
    }

    pub fn beta_structure(&self) -> BlockStructure {
        BlockStructure::new(self.groups.iter().map(|g| g.v).collect()).expect("V_j ≥ 1")
    }

    /// Column blocks of `X`, one per (group, version).
    pub fn x_blocks(&self) -> BlockStructure {
        let sizes = self.groups.iter().flat_map(|g| std::iter::repeat_n(g.m, g.v)).collect();
        BlockStructure::new(sizes).expect("m_j ≥ 1")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupConstraint {
    pub variance: Option<f64>,
    pub sum: Option<f64>,
    /// Version whose covariance carries the variance constraint.
    pub version: usize,
}

/// Resolved constraint targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    pub dep_variance: Option<f64>,
    pub dep_sum: Option<f64>,
    pub groups: Vec<GroupConstraint>,
}

/// Dimensions plus resolved constraints: everything the solver needs besides
/// the moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub layout: Layout,
    pub constraints: Constraints,
}

impl Problem {
    pub fn unconstrained(layout: Layout, dep_variance: f64) -> Self {
        let groups = layout
            .groups
            .iter()
            .map(|_| GroupConstraint { variance: None, sum: None, version: 0 })
            .collect();
        Self { layout, constraints: Constraints { dep_variance: Some(dep_variance), dep_sum: None, groups } }
    }

    /// A weight vector of length one without constraints is fixed at 1.
    pub fn dependent_fixed(&self) -> bool {
        self.layout.n == 1 && self.constraints.dep_variance.is_none() && self.constraints.dep_sum.is_none()
    }

    pub fn group_fixed(&self, j: usize) -> bool {
        let c = &self.constraints.groups[j];
        self.layout.groups[j].m == 1 && c.variance.is_none() && c.sum.is_none()
    }

    /// Number of active multipliers on free weight vectors.
    pub fn active_multipliers(&self) -> usize {
        let mut count = 0;
        if !self.dependent_fixed() {
            count += self.constraints.dep_variance.is_some() as usize;
            count += self.constraints.dep_sum.is_some() as usize;
        }
        for (j, c) in self.constraints.groups.iter().enumerate() {
            if !self.group_fixed(j) {
                count += c.variance.is_some() as usize + c.sum.is_some() as usize;
            }
        }
        count
    }

    /// Estimated quantities: intercept, φ, β, free weights and active
    /// multipliers.
    pub fn parameter_count(&self) -> usize {
        let l = &self.layout;
        let mut p = 1 + l.va + l.beta_len();
        if !self.dependent_fixed() {
            p += l.n;
        }
        for (j, g) in l.groups.iter().enumerate() {
            if !self.group_fixed(j) {
                p += g.m;
            }
        }
        p + self.active_multipliers()
    }

    pub fn validate(&self) -> Result<()> {
        let l = &self.layout;
        let c = &self.constraints;
        if l.n == 0 {
            return Err(LarxError::InvalidSpec("dependent needs at least one proxy".into()));
        }
        if l.va == 0 && l.groups.is_empty() {
            return Err(LarxError::InvalidSpec("nothing to fit: no autoregressive lags and no exogenous groups".into()));
        }
        if l.n > 1 && c.dep_variance.is_none() {
            return Err(LarxError::InvalidSpec("a latent dependent needs a variance target".into()));
        }
        if c.groups.len() != l.groups.len() {
            return Err(LarxError::InvalidSpec("one constraint entry per group required".into()));
        }
        let positive = |v: Option<f64>, what: &str| match v {
            Some(x) if !(x > 0.0 && x.is_finite()) => {
                Err(LarxError::InvalidSpec(format!("{what} variance target must be positive, got {x}")))
            }
            _ => Ok(()),
        };
        positive(c.dep_variance, "dependent")?;
        for (j, (g, gc)) in l.groups.iter().zip(&c.groups).enumerate() {
            if g.m == 0 || g.v == 0 {
                return Err(LarxError::InvalidSpec(format!("group {j} needs proxies and versions")));
            }
            if gc.version >= g.v {
                return Err(LarxError::InvalidSpec(format!(
                    "group {j}: constrained version {} out of {} versions",
                    gc.version, g.v
                )));
            }
            positive(gc.variance, &format!("group {j}"))?;
        }
        Ok(())
    }
}

impl ModelSpec {
    pub fn layout(&self) -> Layout {
        Layout {
            n: self.dependent.proxies.len(),
            va: self.ar.lags.len(),
            groups: self.exogenous.iter().map(|g| GroupDims { m: g.proxies.len(), v: g.lags.len() }).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ar.lags.contains(&0) {
            return Err(LarxError::InvalidSpec("autoregressive lags start at 1".into()));
        }
        for g in &self.exogenous {
            if g.lags.is_empty() {
                return Err(LarxError::InvalidSpec(format!("group {} has no lags", g.name)));
            }
        }
        if let Some(h) = self.sample.half_life {
            if h.is_nan() || h <= 0.0 {
                return Err(LarxError::InvalidSpec("half_life must be positive".into()));
            }
        }
        for t in [&self.dependent.sum_target].into_iter().chain(self.exogenous.iter().map(|g| &g.sum_target)) {
            if matches!(t, Some(Target::FullSample) | Some(Target::FullSampleOf(_))) {
                return Err(LarxError::InvalidSpec("sum targets must be literals".into()));
            }
        }
        Ok(())
    }

    fn half_life(&self) -> f64 {
        self.sample.half_life.unwrap_or(f64::INFINITY)
    }
}

/// Aligned sample matrices for one LARX problem.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dates: Vec<NaiveDate>,
    pub y: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub weights: WeightVector,
    pub problem: Problem,
    pub half_life: f64,
}

impl Dataset {
    pub fn from_matrices(
        y: DMatrix<f64>,
        a: DMatrix<f64>,
        x: DMatrix<f64>,
        problem: Problem,
        half_life: f64,
    ) -> Result<Self> {
        let s = y.nrows();
        let l = &problem.layout;
        if y.ncols() != l.n || a.ncols() != l.n * l.va || x.ncols() != l.px() {
            return Err(LarxError::Structure("sample matrices do not match the layout".into()));
        }
        if a.nrows() != s || x.nrows() != s {
            return Err(LarxError::Dimension("sample matrices differ in rows".into()));
        }
        let dates = (0..s as i64).map(|i| Frequency::Quarterly.period_end(i)).collect();
        Ok(Self { dates, y, a, x, weights: exp_decay_weights(s, half_life)?, problem, half_life })
    }

    pub fn len(&self) -> usize {
        self.y.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Consecutive rows with weights recomputed on them.
    pub fn rows(&self, range: std::ops::Range<usize>) -> Result<Dataset> {
        if range.end > self.len() || range.is_empty() {
            return Err(LarxError::EmptySample);
        }
        let k = range.len();
        Ok(Dataset {
            dates: self.dates[range.clone()].to_vec(),
            y: self.y.rows(range.start, k).into_owned(),
            a: self.a.rows(range.start, k).into_owned(),
            x: self.x.rows(range.start, k).into_owned(),
            weights: exp_decay_weights(k, self.half_life)?,
            problem: self.problem.clone(),
            half_life: self.half_life,
        })
    }

    pub fn moments(&self) -> Result<crate::moments::MomentSet> {
        crate::moments::build_moment_set(&self.y, &self.a, &self.x, &self.problem.layout.x_blocks(), &self.weights)
    }
}

fn transformed_column(table: &SeriesTable, name: &str, transform: Transform) -> Result<Vec<Option<f64>>> {
    let col = table.column(name).ok_or_else(|| LarxError::UnknownSeries(name.to_string()))?;
    match transform {
        Transform::None => Ok(col.to_vec()),
        Transform::LogReturns => {
            let mut out = vec![None; col.len()];
            for t in 1..col.len() {
                if let (Some(p0), Some(p1)) = (col[t - 1], col[t]) {
                    let r = log_returns(&[p0, p1]).map_err(|_| {
                        LarxError::Domain(format!("nonpositive level in {name} near {}", table.dates()[t]))
                    })?;
                    out[t] = Some(r[0]);
                }
            }
            Ok(out)
        }
    }
}

fn population_variance(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(LarxError::DegenerateSample("full-sample variance needs two values".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Ok(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n)
}

/// Builds `Y`, `A` and `X` for `spec` from `table`.
pub fn assemble_dataset(spec: &ModelSpec, table: &SeriesTable) -> Result<Dataset> {
    spec.validate()?;
    let grid = table.to_regular_grid();
    let f = grid.frequency();
    let tf = spec.sample.transform;
    let load = |names: &[String]| -> Result<Vec<Vec<Option<f64>>>> {
        names.iter().map(|n| transformed_column(&grid, n, tf)).collect()
    };
    let ycols = load(&spec.dependent.proxies)?;
    let xcols: Vec<Vec<Vec<Option<f64>>>> =
        spec.exogenous.iter().map(|g| load(&g.proxies)).collect::<Result<_>>()?;

    let outliers: Vec<i64> =
        spec.sample.outliers.iter().map(|o| parse_period(o, f)).collect::<Result<_>>()?;
    let period0 = grid.dates().first().map(|d| f.period_index(*d)).unwrap_or(0);
    let is_outlier = |t: usize| outliers.contains(&(period0 + t as i64));

    let max_lag = spec
        .ar
        .lags
        .iter()
        .chain(spec.exogenous.iter().flat_map(|g| g.lags.iter()))
        .copied()
        .max()
        .unwrap_or(0);

    let mut rows = Vec::new();
    'rows: for t in max_lag..grid.len() {
        let mut refs = vec![t];
        refs.extend(spec.ar.lags.iter().map(|l| t - l));
        for g in &spec.exogenous {
            refs.extend(g.lags.iter().map(|l| t - l));
        }
        if refs.iter().any(|&r| is_outlier(r)) {
            continue;
        }
        let dep_ok = |r: usize| ycols.iter().all(|c| c[r].is_some());
        if !dep_ok(t) || spec.ar.lags.iter().any(|l| !dep_ok(t - l)) {
            continue;
        }
        for (g, cols) in spec.exogenous.iter().zip(&xcols) {
            for l in &g.lags {
                if cols.iter().any(|c| c[t - l].is_none()) {
                    continue 'rows;
                }
            }
        }
        rows.push(t);
    }
    if rows.is_empty() {
        return Err(LarxError::EmptySample);
    }
    let layout = spec.layout();
    let s = rows.len();
    let n = layout.n;
    let val = |c: &Vec<Option<f64>>, r: usize| c[r].expect("checked present");
    let y = DMatrix::from_fn(s, n, |i, j| val(&ycols[j], rows[i]));
    let a = DMatrix::from_fn(s, n * layout.va, |i, c| {
        let (v, j) = (c / n, c % n);
        val(&ycols[j], rows[i] - spec.ar.lags[v])
    });
    let mut x = DMatrix::zeros(s, layout.px());
    let mut col = 0;
    for (g, cols) in spec.exogenous.iter().zip(&xcols) {
        for l in &g.lags {
            for c in cols {
                for i in 0..s {
                    x[(i, col)] = val(c, rows[i] - l);
                }
                col += 1;
            }
        }
    }

    let resolve = |target: &Option<Target>, own: &[String], what: &str| -> Result<Option<f64>> {
        match target {
            None => Ok(None),
            Some(Target::Value(v)) => Ok(Some(*v)),
            Some(Target::FullSample) => {
                if own.len() != 1 {
                    return Err(LarxError::InvalidSpec(format!(
                        "{what}: 'full_sample' needs a single proxy; use 'full_sample:<series>'"
                    )));
                }
                let c = transformed_column(&grid, &own[0], tf)?;
                population_variance(&rows.iter().map(|&r| val(&c, r)).collect::<Vec<_>>()).map(Some)
            }
            Some(Target::FullSampleOf(name)) => {
                let c = transformed_column(&grid, name, tf)?;
                let vals: Vec<f64> = rows.iter().filter_map(|&r| c[r]).collect();
                population_variance(&vals).map(Some)
            }
        }
    };
    let constraints = Constraints {
        dep_variance: resolve(&spec.dependent.variance_target, &spec.dependent.proxies, "dependent")?,
        dep_sum: resolve(&spec.dependent.sum_target, &spec.dependent.proxies, "dependent")?,
        groups: spec
            .exogenous
            .iter()
            .map(|g| {
                Ok(GroupConstraint {
                    variance: resolve(&g.variance_target, &g.proxies, &g.name)?,
                    sum: resolve(&g.sum_target, &g.proxies, &g.name)?,
                    version: g.constrained_version,
                })
            })
            .collect::<Result<_>>()?,
    };
    let problem = Problem { layout, constraints };
    problem.validate()?;
    let half_life = spec.half_life();
    Ok(Dataset {
        dates: rows.iter().map(|&r| grid.dates()[r]).collect(),
        y,
        a,
        x,
        weights: exp_decay_weights(s, half_life)?,
        problem,
        half_life,
    })
}
