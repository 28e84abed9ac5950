//! Reduced solvers for the special cases of the LARX family: latent shock
//! regression, latent-variable multiple regression (CCA), LAR(1) and
//! canonical autocorrelation analysis, plus the trivial supervised-diffusion
//! models.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::blockops::BlockStructure;
use crate::error::{LarxError, Result};
use crate::linalg::{chol_lower, first_nonzero_positive, inf_norm, inv_spd, lower_solve, lower_t_solve, sym_eigen_sorted, symmetrize};
use crate::moments::{build_moment_set, weighted_cov, weighted_mean, MomentSet, WeightVector};
use crate::diagnostics::weighted_ols;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IterOptions {
    fn default() -> Self {
        Self { tol: 1e-13, max_iter: 100_000 }
    }
}

#[derive(Debug, Clone)]
pub struct LsrFit {
    /// Unit-norm proxy weights, first nonzero entry positive.
    pub omega: DVector<f64>,
    /// One coefficient per lag.
    pub beta: DVector<f64>,
    pub c: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LsrFit {
    /// The implied full coefficient vector `β ⊗ ω` (lag-major).
    pub fn coefficients(&self) -> DVector<f64> {
        let b = DMatrix::from_column_slice(self.beta.len(), 1, self.beta.as_slice());
        let o = DMatrix::from_column_slice(self.omega.len(), 1, self.omega.as_slice());
        b.kronecker(&o).column(0).into_owned()
    }

    pub fn slope_parameter_count(&self) -> usize {
        self.beta.len() + self.omega.len()
    }
}

/// Latent shock regression: `y = c + X(β ⊗ ω)` with `X` holding `f` lag
/// blocks of `m` proxies each.
pub fn fit_lsr(y: &DVector<f64>, x: &DMatrix<f64>, f: usize, m: usize, w: &WeightVector, opts: IterOptions) -> Result<LsrFit> {
    if f == 0 || m == 0 || x.ncols() != f * m {
        return Err(LarxError::Structure(format!("X has {} columns, expected {f}×{m}", x.ncols())));
    }
    if x.nrows() != y.len() {
        return Err(LarxError::Dimension("X and y differ in rows".into()));
    }
    // Start from the leading singular pair of the unrestricted coefficients.
    let (full, _, _) = weighted_ols(y, x, w)?;
    let cmat = DMatrix::from_column_slice(m, f, full.as_slice());
    let svd = cmat.svd(true, false);
    let mut omega = svd.u.expect("requested").column(0).into_owned();
    first_nonzero_positive(&mut omega, 0.0);
    let mut beta = DVector::zeros(f);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=opts.max_iter {
        iterations = it;
        let z = DMatrix::from_fn(x.nrows(), f, |t, tau| x.row(t).columns(tau * m, m).transpose().dot(&omega));
        let new_beta = weighted_ols(y, &z, w)?.0;
        let zb = DMatrix::from_fn(x.nrows(), m, |t, i| (0..f).map(|tau| new_beta[tau] * x[(t, tau * m + i)]).sum());
        let mut new_omega = weighted_ols(y, &zb, w)?.0;
        let mut new_beta = new_beta;
        let norm = new_omega.norm();
        if norm > 0.0 {
            new_omega /= norm;
            new_beta *= norm;
        }
        // Keep β consistent with the rescaled ω: re-solve is unnecessary since
        // the product is unchanged.
        let sign = first_nonzero_positive(&mut new_omega, 1e-14);
        new_beta *= sign;
        let change = inf_norm(&(&new_omega - &omega)).max(inf_norm(&(&new_beta - &beta)) / (1.0 + inf_norm(&new_beta)));
        omega = new_omega;
        beta = new_beta;
        if change <= opts.tol {
            converged = true;
            break;
        }
    }
    let b = DMatrix::from_column_slice(f, 1, beta.as_slice()).kronecker(&DMatrix::from_column_slice(m, 1, omega.as_slice()));
    let ymean = w.values().dot(y);
    let xmean = weighted_mean(x, w)?;
    let c = ymean - xmean.dot(&b.column(0));
    Ok(LsrFit { omega, beta, c, iterations, converged })
}

#[derive(Debug, Clone)]
pub struct LvmrFit {
    pub w: DVector<f64>,
    pub omega: DVector<f64>,
    pub rho_y: f64,
    pub c: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn sign_positive_sum(v: &mut DVector<f64>) -> f64 {
    let l1 = v.iter().map(|x| x.abs()).sum::<f64>();
    let s = v.sum();
    if s.abs() > 1e-12 * l1 {
        if s < 0.0 {
            v.neg_mut();
            return -1.0;
        }
        return 1.0;
    }
    first_nonzero_positive(v, 1e-12 * l1)
}

/// Latent-variable multiple regression `Yw = c + Xω` with `w'Σ_Y w = σ_y²`,
/// iterated to its fixed point.
pub fn fit_lvmr(y: &DMatrix<f64>, x: &DMatrix<f64>, w: &WeightVector, sigma_y2: f64, opts: IterOptions) -> Result<LvmrFit> {
    if sigma_y2.is_nan() || sigma_y2 <= 0.0 {
        return Err(LarxError::InvalidSpec("variance target must be positive".into()));
    }
    let sy = weighted_cov(y, y, w)?;
    let sx = weighted_cov(x, x, w)?;
    let syx = weighted_cov(y, x, w)?;
    let sy_inv = inv_spd(&sy, "Σ_Y")?;
    let sx_inv = inv_spd(&sx, "Σ_X")?;
    let n = y.ncols();
    let scale = |v: &mut DVector<f64>| {
        let q = (v.transpose() * &sy * &*v)[0];
        if q > 0.0 {
            *v *= (sigma_y2 / q).sqrt();
        }
    };
    let mut wv = DVector::from_element(n, 1.0);
    scale(&mut wv);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=opts.max_iter {
        iterations = it;
        let omega = &sx_inv * syx.transpose() * &wv;
        let rho = (wv.transpose() * &syx * &omega)[0] / sigma_y2;
        if rho == 0.0 {
            return Err(LarxError::DegenerateConstraint("rho_y is zero: Y and X are uncorrelated".into()));
        }
        let mut next = &sy_inv * &syx * &omega / rho;
        scale(&mut next);
        sign_positive_sum(&mut next);
        let change = inf_norm(&(&next - &wv));
        wv = next;
        if change <= opts.tol * inf_norm(&wv).max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    let omega = &sx_inv * syx.transpose() * &wv;
    let rho_y = (wv.transpose() * &syx * &omega)[0] / sigma_y2;
    let c = weighted_mean(y, w)?.dot(&wv) - weighted_mean(x, w)?.dot(&omega);
    Ok(LvmrFit { w: wv, omega, rho_y, c, iterations, converged })
}

#[derive(Debug, Clone)]
pub struct CanonicalPair {
    /// Squared canonical correlation.
    pub rho2: f64,
    /// Dependent weights normalized to `w'Σ_Y w = 1`.
    pub w: DVector<f64>,
}

/// Eigenpairs of `Σ_Y⁻¹Σ_YXΣ_X⁻¹Σ_XY`, descending.
pub fn cca_decompose(m: &MomentSet) -> Result<Vec<CanonicalPair>> {
    let ly = chol_lower(&m.sigma_y, "Σ_Y")?;
    let sx_inv = inv_spd(&m.sigma_x, "Σ_X")?;
    let inner = &m.sigma_yx * sx_inv * m.sigma_xy();
    let tmp = lower_solve(&ly, &inner);
    let sym = symmetrize(&lower_solve(&ly, &tmp.transpose()));
    let (vals, vecs) = sym_eigen_sorted(&sym);
    let n = vals.len();
    let mut out = Vec::with_capacity(n);
    for i in (0..n).rev() {
        let mut w = lower_t_solve(&ly, &vecs.columns(i, 1).into_owned()).column(0).into_owned();
        let eps = 1e-14 * inf_norm(&w);
        first_nonzero_positive(&mut w, eps);
        out.push(CanonicalPair { rho2: vals[i].max(0.0), w });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Lar1Fit {
    pub w: DVector<f64>,
    pub phi: f64,
    pub rho_y: f64,
    /// Weighted mean squared residual of `Yw` on `φ·Aw`.
    pub objective: f64,
    pub iterations: usize,
}

fn lar1_from(m: &MomentSet, sigma_y2: f64, phi0: f64, opts: IterOptions) -> Result<Lar1Fit> {
    let ly = chol_lower(&m.sigma_y, "Σ_Y")?;
    let c2 = &m.sigma_ya + m.sigma_ay();
    let mut phi = phi0;
    let mut w = DVector::zeros(m.sigma_y.nrows());
    let mut iterations = 0;
    for it in 1..=opts.max_iter {
        iterations = it;
        let q = &m.sigma_y - &c2 * phi + &m.sigma_a * (phi * phi);
        let tmp = lower_solve(&ly, &q);
        let qw = symmetrize(&lower_solve(&ly, &tmp.transpose()));
        let (_, vecs) = sym_eigen_sorted(&qw);
        let mut next = lower_t_solve(&ly, &vecs.columns(0, 1).into_owned()).column(0).into_owned() * sigma_y2.sqrt();
        sign_positive_sum(&mut next);
        let next_phi = (next.transpose() * m.sigma_ay() * &next)[0] / (next.transpose() * &m.sigma_a * &next)[0];
        let change = inf_norm(&(&next - &w)).max((next_phi - phi).abs());
        w = next;
        phi = next_phi;
        if change <= opts.tol * (1.0 + inf_norm(&w)) {
            break;
        }
    }
    let v1 = (&c2 * &w * phi - &m.sigma_a * &w * (phi * phi)).dot(&w);
    let q = &m.sigma_y - &c2 * phi + &m.sigma_a * (phi * phi);
    let objective = (w.transpose() * q * &w)[0];
    Ok(Lar1Fit { rho_y: v1 / sigma_y2, w, phi, objective, iterations })
}

/// First-order latent autoregression `Yw = c + φ·Aw` with `w'Σ_Y w = σ_y²`,
/// where `A` holds the first lag of `Y`. Two deterministic starts of opposite
/// sign are run and the lower objective kept.
pub fn fit_lar1(m: &MomentSet, sigma_y2: f64, opts: IterOptions) -> Result<Lar1Fit> {
    if m.sigma_a.nrows() != m.sigma_y.nrows() {
        return Err(LarxError::Structure("A must be the first lag of Y".into()));
    }
    let a = lar1_from(m, sigma_y2, 0.5, opts)?;
    let b = lar1_from(m, sigma_y2, -0.5, opts)?;
    Ok(if b.objective < a.objective { b } else { a })
}

#[derive(Debug, Clone)]
pub struct CaaDecomposition {
    /// Autocorrelation coefficients, descending by magnitude.
    pub eigenvalues: DVector<f64>,
    /// Weight vectors with `w'Σ_Y w = 1`, first nonzero entry positive.
    pub eigenvectors: Vec<DVector<f64>>,
    /// `½Σ_Y⁻¹(Σ_AY + Σ_YA)`.
    pub matrix: DMatrix<f64>,
    /// `‖Σ_Y − Σ_A‖ / ‖Σ_Y‖` (Frobenius).
    pub stationarity_gap: f64,
    pub warnings: Vec<String>,
}

pub const STATIONARITY_WARN: f64 = 1e-6;

/// Eigen-decomposition of `½Σ_Y⁻¹(Σ_AY + Σ_YA)`.
pub fn caa_decompose(m: &MomentSet) -> Result<CaaDecomposition> {
    let n = m.sigma_y.nrows();
    if m.sigma_a.nrows() != n {
        return Err(LarxError::Structure("A must be the first lag of Y".into()));
    }
    let ly = chol_lower(&m.sigma_y, "Σ_Y")?;
    let c = (&m.sigma_ya + m.sigma_ay()) * 0.5;
    let tmp = lower_solve(&ly, &c);
    let sym = symmetrize(&lower_solve(&ly, &tmp.transpose()));
    let (vals, vecs) = sym_eigen_sorted(&sym);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| vals[j].abs().total_cmp(&vals[i].abs()));
    let eigenvalues = DVector::from_iterator(n, idx.iter().map(|&i| vals[i]));
    let eigenvectors = idx
        .iter()
        .map(|&i| {
            let mut w = lower_t_solve(&ly, &vecs.columns(i, 1).into_owned()).column(0).into_owned();
            let eps = 1e-14 * inf_norm(&w);
        first_nonzero_positive(&mut w, eps);
            w
        })
        .collect();
    let matrix = inv_spd(&m.sigma_y, "Σ_Y")? * &c;
    let gap = (&m.sigma_y - &m.sigma_a).norm() / m.sigma_y.norm();
    let mut warnings = Vec::new();
    if gap > STATIONARITY_WARN {
        warnings.push(format!("Σ_Y and Σ_A differ by {gap:.3e} (relative); sample is not covariance stationary"));
    }
    Ok(CaaDecomposition { eigenvalues, eigenvectors, matrix, stationarity_gap: gap, warnings })
}

/// The alternative form `½[Σ_A⁻¹Σ_AY + Σ_Y⁻¹Σ_YA]`.
pub fn caa_matrix_alt(m: &MomentSet) -> Result<DMatrix<f64>> {
    let sa_inv = inv_spd(&m.sigma_a, "Σ_A")?;
    let sy_inv = inv_spd(&m.sigma_y, "Σ_Y")?;
    Ok((sa_inv * m.sigma_ay() + sy_inv * &m.sigma_ya) * 0.5)
}

/// Moments of `Y` against its circularly wrapped first lag, with equal
/// weights, so that `Σ_A = Σ_Y` holds exactly.
pub fn circular_moments(y: &DMatrix<f64>) -> Result<MomentSet> {
    let s = y.nrows();
    if s < 2 {
        return Err(LarxError::DegenerateSample(format!("{s} rows")));
    }
    let a = DMatrix::from_fn(s, y.ncols(), |t, j| y[((t + s - 1) % s, j)]);
    let x = DMatrix::zeros(s, 0);
    let mut m = build_moment_set(y, &a, &x, &BlockStructure::new(vec![])?, &WeightVector::equal(s)?)?;
    m.sigma_a = m.sigma_y.clone();
    m.mean_a = m.mean_y.clone();
    Ok(m)
}

/// Lag-one moments of `Y` with the given weights over rows `1..s`.
pub fn lag_one_moments(y: &DMatrix<f64>, w: &WeightVector) -> Result<MomentSet> {
    let s = y.nrows();
    if s < 3 || w.len() != s - 1 {
        return Err(LarxError::Dimension("weights must cover the s−1 lagged rows".into()));
    }
    let cur = y.rows(1, s - 1).into_owned();
    let lag = y.rows(0, s - 1).into_owned();
    build_moment_set(&cur, &lag, &DMatrix::zeros(s - 1, 0), &BlockStructure::new(vec![])?, w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdmMode {
    MinVariancePortfolio,
    PcaMax,
    PcaMin,
}

/// Weight vectors of the trivial supervised-diffusion models.
pub fn trivial_sdm(sigma: &DMatrix<f64>, mode: SdmMode) -> Result<DVector<f64>> {
    let n = sigma.nrows();
    let inv = inv_spd(sigma, "Σ_Y")?;
    match mode {
        SdmMode::MinVariancePortfolio => {
            let raw = inv * DVector::from_element(n, 1.0);
            let total = raw.sum();
            Ok(raw / total)
        }
        SdmMode::PcaMax | SdmMode::PcaMin => {
            let (_, vecs) = sym_eigen_sorted(sigma);
            let col = if mode == SdmMode::PcaMin { 0 } else { n - 1 };
            let mut v = vecs.column(col).into_owned();
            first_nonzero_positive(&mut v, 1e-14);
            Ok(v)
        }
    }
}
