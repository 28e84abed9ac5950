//! Decay-weighted means and (cross-)covariances.

use nalgebra::{DMatrix, DVector};

use crate::blockops::BlockStructure;
use crate::error::{LarxError, Result};

/// Nonnegative sample weights summing to one, oldest row first.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    values: DVector<f64>,
    half_life: Option<f64>,
}

impl WeightVector {
    /// Normalizes arbitrary nonnegative weights.
    pub fn from_raw(raw: DVector<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(LarxError::EmptySample);
        }
        if raw.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(LarxError::Domain("weights must be finite and nonnegative".into()));
        }
        let total = raw.sum();
        if total <= 0.0 {
            return Err(LarxError::Domain("weights sum to zero".into()));
        }
        Ok(Self { values: raw / total, half_life: None })
    }

    pub fn equal(s: usize) -> Result<Self> {
        exp_decay_weights(s, f64::INFINITY)
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn half_life(&self) -> Option<f64> {
        self.half_life
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Weight-effective sample size `1 / Σ w²`.
    pub fn effective_size(&self) -> f64 {
        1.0 / self.values.dot(&self.values)
    }
}

/// `w_t ∝ 2^{-(s-1-t)/half_life}`; an infinite half-life gives equal weights.
pub fn exp_decay_weights(s: usize, half_life: f64) -> Result<WeightVector> {
    if s == 0 {
        return Err(LarxError::EmptySample);
    }
    if half_life.is_nan() || half_life <= 0.0 {
        return Err(LarxError::Domain(format!("half-life must be positive, got {half_life}")));
    }
    let raw = DVector::from_iterator(
        s,
        (0..s).map(|t| {
            if half_life.is_infinite() {
                1.0
            } else {
                (-((s - 1 - t) as f64) / half_life).exp2()
            }
        }),
    );
    let mut w = WeightVector::from_raw(raw)?;
    w.half_life = half_life.is_finite().then_some(half_life);
    Ok(w)
}

/// Column-wise weighted average.
pub fn weighted_mean(m: &DMatrix<f64>, w: &WeightVector) -> Result<DVector<f64>> {
    if m.nrows() != w.len() {
        return Err(LarxError::Dimension(format!(
            "{} rows against {} weights",
            m.nrows(),
            w.len()
        )));
    }
    Ok(m.tr_mul(w.values()))
}

fn centered_weighted(m: &DMatrix<f64>, w: &WeightVector) -> Result<DMatrix<f64>> {
    let mean = weighted_mean(m, w)?;
    let mut c = m.clone();
    for (j, mut col) in c.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    Ok(c)
}

/// `Σ_AB = (A − 1Ā)' diag(w) (B − 1B̄)`.
pub fn weighted_cov(a: &DMatrix<f64>, b: &DMatrix<f64>, w: &WeightVector) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() || a.nrows() != w.len() {
        return Err(LarxError::Dimension(format!(
            "sample sizes {}, {} and {} weights",
            a.nrows(),
            b.nrows(),
            w.len()
        )));
    }
    if a.nrows() < 2 {
        return Err(LarxError::DegenerateSample(format!("{} rows", a.nrows())));
    }
    let ac = centered_weighted(a, w)?;
    let bc = centered_weighted(b, w)?;
    let wv = w.values();
    // Explicit loop: products and summation order are identical for
    // (A, B) and (B, A), so the cross-covariances are exact transposes.
    let mut out = DMatrix::zeros(a.ncols(), b.ncols());
    for i in 0..a.ncols() {
        for j in 0..b.ncols() {
            let mut acc = 0.0;
            for t in 0..ac.nrows() {
                acc += wv[t] * (ac[(t, i)] * bc[(t, j)]);
            }
            out[(i, j)] = acc;
        }
    }
    Ok(out)
}

fn reject_constant(label: &str, m: &DMatrix<f64>, cov: &DMatrix<f64>, w: &WeightVector) -> Result<()> {
    for j in 0..m.ncols() {
        let second = m.column(j).iter().zip(w.values().iter()).map(|(x, wt)| wt * x * x).sum::<f64>();
        if cov[(j, j)] <= 1e-20 * second || second == 0.0 {
            return Err(LarxError::ZeroVariance(format!("{label} column {j}")));
        }
    }
    Ok(())
}

/// All moments a LARX fit needs, computed once per window.
#[derive(Debug, Clone)]
pub struct MomentSet {
    pub mean_y: DVector<f64>,
    pub mean_a: DVector<f64>,
    pub mean_x: DVector<f64>,
    pub sigma_y: DMatrix<f64>,
    pub sigma_a: DMatrix<f64>,
    pub sigma_x: DMatrix<f64>,
    pub sigma_ya: DMatrix<f64>,
    pub sigma_yx: DMatrix<f64>,
    pub sigma_ax: DMatrix<f64>,
    /// Σ_X restricted to its diagonal (variable, version) blocks.
    pub sigma_x_diag: DMatrix<f64>,
    pub x_blocks: BlockStructure,
}

impl MomentSet {
    pub fn sigma_ay(&self) -> DMatrix<f64> {
        self.sigma_ya.transpose()
    }

    pub fn sigma_xy(&self) -> DMatrix<f64> {
        self.sigma_yx.transpose()
    }

    pub fn sigma_xa(&self) -> DMatrix<f64> {
        self.sigma_ax.transpose()
    }
}

/// Builds the moment set; `x_blocks` gives the column blocks of `X`, one per
/// (variable, version) pair. Use an empty structure when `X` has no columns.
pub fn build_moment_set(
    y: &DMatrix<f64>,
    a: &DMatrix<f64>,
    x: &DMatrix<f64>,
    x_blocks: &BlockStructure,
    w: &WeightVector,
) -> Result<MomentSet> {
    let s = y.nrows();
    if a.nrows() != s || x.nrows() != s {
        return Err(LarxError::Dimension(format!(
            "row counts Y={s}, A={}, X={}",
            a.nrows(),
            x.nrows()
        )));
    }
    if x_blocks.total() != x.ncols() {
        return Err(LarxError::Structure(format!(
            "X has {} columns but its blocks total {}",
            x.ncols(),
            x_blocks.total()
        )));
    }
    let sigma_y = weighted_cov(y, y, w)?;
    let sigma_a = weighted_cov(a, a, w)?;
    let sigma_x = weighted_cov(x, x, w)?;
    reject_constant("Y", y, &sigma_y, w)?;
    reject_constant("A", a, &sigma_a, w)?;
    reject_constant("X", x, &sigma_x, w)?;
    let mut sigma_x_diag = DMatrix::zeros(x.ncols(), x.ncols());
    for i in 0..x_blocks.count() {
        let r = x_blocks.range(i);
        let blk = sigma_x.view((r.start, r.start), (r.len(), r.len()));
        sigma_x_diag.view_mut((r.start, r.start), (r.len(), r.len())).copy_from(&blk);
    }
    Ok(MomentSet {
        mean_y: weighted_mean(y, w)?,
        mean_a: weighted_mean(a, w)?,
        mean_x: weighted_mean(x, w)?,
        sigma_ya: weighted_cov(y, a, w)?,
        sigma_yx: weighted_cov(y, x, w)?,
        sigma_ax: weighted_cov(a, x, w)?,
        sigma_y,
        sigma_a,
        sigma_x,
        sigma_x_diag,
        x_blocks: x_blocks.clone(),
    })
}
