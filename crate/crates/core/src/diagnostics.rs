//! Conditional OLS views of the fitted coefficients and first-order-condition
//! checks of the Lagrangian.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{Dataset, Problem};
use crate::error::{LarxError, Result};
use crate::linalg::{inf_norm, solve_psd, sym_eigen_sorted, COND_LIMIT};
use crate::moments::{weighted_cov, weighted_mean, MomentSet, WeightVector};
use crate::solver_clarx::{compute_shorthands, constrained_cov, objective, Factors, FitResult, Multipliers, State};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coefficient {
    W,
    Phi,
    Omega,
    Beta,
}

impl Coefficient {
    pub const ALL: [Coefficient; 4] = [Coefficient::W, Coefficient::Phi, Coefficient::Omega, Coefficient::Beta];

    pub fn name(self) -> &'static str {
        match self {
            Coefficient::W => "w",
            Coefficient::Phi => "phi",
            Coefficient::Omega => "omega",
            Coefficient::Beta => "beta",
        }
    }
}

impl FromStr for Coefficient {
    type Err = LarxError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "w" => Ok(Coefficient::W),
            "phi" => Ok(Coefficient::Phi),
            "omega" => Ok(Coefficient::Omega),
            "beta" => Ok(Coefficient::Beta),
            other => Err(LarxError::InvalidSpec(format!("unknown coefficient '{other}'"))),
        }
    }
}

/// One coefficient vector re-estimated as a weighted OLS regression with
/// every other coefficient held at its fitted value.
#[derive(Debug, Clone)]
pub struct OlsView {
    pub which: Coefficient,
    pub a: DVector<f64>,
    pub b: DMatrix<f64>,
    pub weights: WeightVector,
    pub ols_coefficients: DVector<f64>,
    pub ols_intercept: f64,
    pub fit_coefficients: DVector<f64>,
    pub residuals: DVector<f64>,
    /// `‖fit coefficient − OLS coefficient‖∞`.
    pub agreement_gap: f64,
}

/// Weighted least squares of `a` on `b` with an intercept.
pub fn weighted_ols(a: &DVector<f64>, b: &DMatrix<f64>, w: &WeightVector) -> Result<(DVector<f64>, f64, DVector<f64>)> {
    let acol = DMatrix::from_column_slice(a.len(), 1, a.as_slice());
    let n = weighted_cov(b, b, w)?;
    let r = weighted_cov(b, &acol, w)?.column(0).into_owned();
    let coef = solve_psd(&n, &r).x;
    let intercept = weighted_mean(&acol, w)?[0] - weighted_mean(b, w)?.dot(&coef);
    let residuals = (a - b * &coef).add_scalar(-intercept);
    Ok((coef, intercept, residuals))
}

/// Builds the conditional regression for `which` and solves it.
pub fn ols_view(fit: &FitResult, dataset: &Dataset, which: Coefficient) -> Result<OlsView> {
    let l = &fit.problem.layout;
    let st = fit.state();
    let f = Factors::new(l, &st)?;
    let (y, a, x) = (&dataset.y, &dataset.a, &dataset.x);
    if y.ncols() != l.n || a.ncols() != l.n * l.va || x.ncols() != l.px() {
        return Err(LarxError::Structure("dataset does not match the fit".into()));
    }
    let xbw = x * &f.bw;
    let yw = y * &fit.w;
    let apw = a * &f.pw;
    let (dep, reg, coef) = match which {
        Coefficient::W => (xbw, y - a * &f.pn, fit.w.clone()),
        Coefficient::Phi => (&yw - &xbw, a * &f.iw, fit.phi.clone()),
        Coefficient::Omega => (&yw - &apw, x * &f.kb, fit.omega.clone()),
        Coefficient::Beta => (&yw - &apw, x * &f.kw, fit.beta.clone()),
    };
    let (ols, intercept, residuals) = weighted_ols(&dep, &reg, &dataset.weights)?;
    let gap = if ols.is_empty() { 0.0 } else { inf_norm(&(&coef - &ols)) };
    Ok(OlsView {
        which,
        a: dep,
        b: reg,
        weights: dataset.weights.clone(),
        ols_coefficients: ols,
        ols_intercept: intercept,
        fit_coefficients: coef,
        residuals,
        agreement_gap: gap,
    })
}

/// Classical weighted-OLS standard errors of the view's slopes, conditional
/// on every other coefficient. The sample size is the weight-effective size
/// `1/Σw²`.
pub fn conditional_stderr(view: &OlsView) -> Result<DVector<f64>> {
    let w = &view.weights;
    let n = weighted_cov(&view.b, &view.b, w)?;
    let p = n.nrows();
    if p == 0 {
        return Ok(DVector::zeros(0));
    }
    let (vals, _) = sym_eigen_sorted(&n);
    if vals[0] <= vals[p - 1] / COND_LIMIT {
        return Err(LarxError::Singular("conditional regressor covariance".into()));
    }
    let n_eff = w.effective_size();
    let k = (p + 1) as f64;
    if n_eff <= k {
        return Err(LarxError::DegenerateSample(format!(
            "effective sample {n_eff:.2} too small for {k} parameters"
        )));
    }
    let msr = view.residuals.iter().zip(w.values().iter()).map(|(e, wt)| wt * e * e).sum::<f64>();
    let sigma2 = n_eff * msr / (n_eff - k);
    let inv = n.try_inverse().ok_or_else(|| LarxError::Singular("conditional regressor covariance".into()))?;
    Ok(inv.diagonal().map(|v| (v * sigma2 / n_eff).sqrt()))
}

/// Lagrangian value: objective plus multiplier-weighted constraint
/// violations, with `λ_y = ρ_y − 1` and `λ_l = 2ρ_l`.
pub fn lagrangian_value(state: &State, mult: &Multipliers, m: &MomentSet, problem: &Problem) -> Result<f64> {
    let l = &problem.layout;
    let c = &problem.constraints;
    let mut v = objective(m, state, l)?;
    let w = &state.w;
    if let Some(s2) = c.dep_variance {
        v += (mult.rho_y - 1.0) * ((w.transpose() * &m.sigma_y * w)[0] - s2);
    }
    if let Some(ly) = c.dep_sum {
        v += 2.0 * mult.rho_l * (w.sum() - ly);
    }
    let os = l.omega_structure();
    for (j, g) in c.groups.iter().enumerate() {
        let r = os.range(j);
        let o = state.omega.rows(r.start, r.len());
        if let Some(s2) = g.variance {
            v += mult.lambda_x[j] * ((o.transpose() * constrained_cov(m, problem, j) * o)[0] - s2);
        }
        if let Some(lj) = g.sum {
            v += mult.lambda_p[j] * (o.sum() - lj);
        }
    }
    Ok(v)
}

#[derive(Debug, Clone)]
pub struct LagrangianGradient {
    pub w: DVector<f64>,
    pub omega: DVector<f64>,
    pub phi: DVector<f64>,
    pub beta: DVector<f64>,
    /// Whether w is estimated (not fixed at one).
    pub w_free: bool,
    /// Per group, whether ω_j is estimated.
    pub omega_free: Vec<bool>,
}

impl LagrangianGradient {
    /// Euclidean norms of the gradients of the estimated vectors:
    /// `[w, ω, φ, β]`, with fixed weight vectors excluded.
    pub fn norms(&self, problem: &Problem) -> [f64; 4] {
        let os = problem.layout.omega_structure();
        let mut om = 0.0;
        for (j, free) in self.omega_free.iter().enumerate() {
            if *free {
                let r = os.range(j);
                om += self.omega.rows(r.start, r.len()).norm_squared();
            }
        }
        [
            if self.w_free { self.w.norm() } else { 0.0 },
            om.sqrt(),
            self.phi.norm(),
            self.beta.norm(),
        ]
    }

    pub fn max_norm(&self, problem: &Problem) -> f64 {
        self.norms(problem).into_iter().fold(0.0, f64::max)
    }
}

/// Analytic partial derivatives of the Lagrangian at an arbitrary state.
pub fn lagrangian_gradient(state: &State, mult: &Multipliers, m: &MomentSet, problem: &Problem) -> Result<LagrangianGradient> {
    let l = &problem.layout;
    let c = &problem.constraints;
    let f = Factors::new(l, state)?;
    let sh = compute_shorthands(m, state, problem)?;
    let w = &state.w;
    let lam_y = if c.dep_variance.is_some() { mult.rho_y - 1.0 } else { 0.0 };
    let rho_l = if c.dep_sum.is_some() { mult.rho_l } else { 0.0 };
    let gw = (&m.sigma_y * w * (1.0 + lam_y) - &sh.v1 - &sh.v2).add_scalar(rho_l) * 2.0;
    let mut go = (&sh.v4 - &sh.v3) * 2.0;
    let os = l.omega_structure();
    for (j, g) in c.groups.iter().enumerate() {
        let r = os.range(j);
        let o = state.omega.rows(r.start, r.len()).into_owned();
        let mut part = go.rows(r.start, r.len()).into_owned();
        if g.variance.is_some() {
            part += constrained_cov(m, problem, j) * &o * (2.0 * mult.lambda_x[j]);
        }
        if g.sum.is_some() {
            part = part.add_scalar(mult.lambda_p[j]);
        }
        go.rows_mut(r.start, r.len()).copy_from(&part);
    }
    let gphi = (f.iw.transpose() * (&m.sigma_a * &f.iw * &state.phi - m.sigma_ay() * w + &m.sigma_ax * &f.bw)) * 2.0;
    let gbeta = (f.kw.transpose() * (&m.sigma_x * &f.kw * &state.beta - m.sigma_xy() * w + m.sigma_xa() * &f.pw)) * 2.0;
    Ok(LagrangianGradient {
        w: gw,
        omega: go,
        phi: gphi,
        beta: gbeta,
        w_free: !problem.dependent_fixed(),
        omega_free: (0..l.k()).map(|j| !problem.group_fixed(j)).collect(),
    })
}

/// Gradient of the Lagrangian at a fitted state with the fitted multipliers.
pub fn fit_gradient(fit: &FitResult, m: &MomentSet) -> Result<LagrangianGradient> {
    lagrangian_gradient(&fit.state(), &fit.multipliers(), m, &fit.problem)
}
