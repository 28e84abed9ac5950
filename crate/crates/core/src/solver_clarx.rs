//! The CLARX estimator: shorthands, the per-coefficient updates and their
//! multipliers, the intercept, the fitting loop and prediction.
//!
//! `fit` runs exact block-coordinate minimization: (φ, β) jointly by least
//! squares, each ω_j over its constraint set, then w over its constraint set.
//! Each block step solves its first-order conditions (the w and ω rows of the
//! fixed-point system) globally, so the objective never increases and any
//! limit point satisfies the whole system with multipliers given by
//! [`update_dependent_multipliers`] and [`update_explanatory_multipliers`].

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::blockops::{bds_vec, kr_identity_vec, kr_vec_identity, khatri_rao_vec, BlockStructure, BlockVec};
use crate::design::{Dataset, Layout, Problem, SolverOptions};
use crate::error::{LarxError, Result};
use crate::linalg::{first_nonzero_positive, inf_norm, inv_spd, solve_general, solve_psd, symmetrize};
use crate::moments::MomentSet;
use crate::qcqp::constrained_min;

/// Current coefficient vectors; `omega` and `beta` are concatenated over
/// groups.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub w: DVector<f64>,
    pub omega: DVector<f64>,
    pub phi: DVector<f64>,
    pub beta: DVector<f64>,
}

/// Transformed multipliers: `rho_y = 1 + λ_y`, `rho_l = λ_l / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub rho_y: f64,
    pub rho_l: f64,
    pub lambda_x: DVector<f64>,
    pub lambda_p: DVector<f64>,
}

impl Multipliers {
    pub fn zero(k: usize) -> Self {
        Self { rho_y: 1.0, rho_l: 0.0, lambda_x: DVector::zeros(k), lambda_p: DVector::zeros(k) }
    }
}

#[derive(Debug, Clone)]
pub struct Shorthands {
    pub v1: DVector<f64>,
    pub v2: DVector<f64>,
    pub v3: DVector<f64>,
    pub v4: DVector<f64>,
    pub theta: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub m1: DMatrix<f64>,
    pub m2: DMatrix<f64>,
    pub u: BlockVec,
}

/// Structured factors built from a state.
pub(crate) struct Factors {
    /// β⊙ω
    pub bw: DVector<f64>,
    /// φ⊗w
    pub pw: DVector<f64>,
    /// β⊙I_ω
    pub kb: DMatrix<f64>,
    /// I_β⊙ω
    pub kw: DMatrix<f64>,
    /// φ⊗I_n
    pub pn: DMatrix<f64>,
    /// I⊗w
    pub iw: DMatrix<f64>,
}

fn check_state(layout: &Layout, s: &State) -> Result<()> {
    if s.w.len() != layout.n
        || s.phi.len() != layout.va
        || s.omega.len() != layout.omega_len()
        || s.beta.len() != layout.beta_len()
    {
        return Err(LarxError::Dimension("state does not match the problem layout".into()));
    }
    Ok(())
}

impl Factors {
    pub(crate) fn new(layout: &Layout, s: &State) -> Result<Self> {
        check_state(layout, s)?;
        let os = layout.omega_structure();
        let bs = layout.beta_structure();
        let omega = BlockVec::new(s.omega.clone(), os.clone())?;
        let beta = BlockVec::new(s.beta.clone(), bs.clone())?;
        let phi_col = DMatrix::from_column_slice(layout.va, 1, s.phi.as_slice());
        let w_col = DMatrix::from_column_slice(layout.n, 1, s.w.as_slice());
        Ok(Self {
            bw: khatri_rao_vec(&beta, &omega)?.into_data(),
            pw: phi_col.kronecker(&w_col).column(0).into_owned(),
            kb: kr_vec_identity(&beta, &os)?,
            kw: kr_identity_vec(&bs, &omega)?,
            pn: phi_col.kronecker(&DMatrix::identity(layout.n, layout.n)),
            iw: DMatrix::identity(layout.va, layout.va).kronecker(&w_col),
        })
    }
}

fn group_ranges(layout: &Layout) -> Vec<std::ops::Range<usize>> {
    let os = layout.omega_structure();
    (0..layout.k()).map(|j| os.range(j)).collect()
}

/// Covariance of the constrained version of group `j`.
pub fn constrained_cov(m: &MomentSet, problem: &Problem, j: usize) -> DMatrix<f64> {
    let l = &problem.layout;
    let mut block = 0;
    for g in &l.groups[..j] {
        block += g.v;
    }
    block += problem.constraints.groups[j].version;
    let r = m.x_blocks.range(block);
    m.sigma_x_diag.view((r.start, r.start), (r.len(), r.len())).into_owned()
}

/// `u`: one unit entry per group at the constrained version.
pub fn version_indicator(problem: &Problem) -> Result<BlockVec> {
    let bs = problem.layout.beta_structure();
    let mut u = DVector::zeros(bs.total());
    for (j, off) in bs.offsets().into_iter().enumerate() {
        u[off + problem.constraints.groups[j].version] = 1.0;
    }
    BlockVec::new(u, bs)
}

pub fn compute_shorthands(m: &MomentSet, state: &State, problem: &Problem) -> Result<Shorthands> {
    let l = &problem.layout;
    let f = Factors::new(l, state)?;
    let w = &state.w;
    let v1 = (f.pn.transpose() * m.sigma_ay() + &m.sigma_ya * &f.pn - f.pn.transpose() * &m.sigma_a * &f.pn) * w;
    let v2 = (&m.sigma_yx - f.pn.transpose() * &m.sigma_ax) * &f.bw;
    let v3 = f.kb.transpose() * (m.sigma_xy() * w - m.sigma_xa() * &f.pw);
    let v4 = f.kb.transpose() * &m.sigma_x * &f.bw;
    let k = l.k();
    let c = &problem.constraints;
    let theta = DMatrix::from_diagonal(&DVector::from_iterator(k, c.groups.iter().map(|g| g.variance.unwrap_or(0.0))));
    let lmat = DMatrix::from_diagonal(&DVector::from_iterator(k, c.groups.iter().map(|g| g.sum.unwrap_or(0.0))));
    let ones = BlockVec::new(DVector::from_element(l.omega_len(), 1.0), l.omega_structure())?;
    let one_bds = bds_vec(&ones);
    let m1 = one_bds.transpose() * &one_bds;
    let u = version_indicator(problem)?;
    let ku = kr_vec_identity(&u, &l.omega_structure())?;
    let m2 = ku.transpose() * &m.sigma_x_diag * &ku;
    Ok(Shorthands { v1, v2, v3, v4, theta, l: lmat, m1, m2, u })
}

/// Normal matrix and right-hand side of the β step.
fn beta_system(m: &MomentSet, state: &State, f: &Factors) -> (DMatrix<f64>, DVector<f64>) {
    let n = symmetrize(&(f.kw.transpose() * &m.sigma_x * &f.kw));
    let r = f.kw.transpose() * (m.sigma_xy() * &state.w - m.sigma_xa() * &f.pw);
    (n, r)
}

fn phi_system(m: &MomentSet, state: &State, f: &Factors) -> (DMatrix<f64>, DVector<f64>) {
    let n = symmetrize(&(f.iw.transpose() * &m.sigma_a * &f.iw));
    let r = f.iw.transpose() * (m.sigma_ay() * &state.w - &m.sigma_ax * &f.bw);
    (n, r)
}

/// β given w, ω, φ; the flag reports a pseudo-inverse fallback.
pub fn update_beta(m: &MomentSet, state: &State, problem: &Problem) -> Result<(DVector<f64>, bool)> {
    let f = Factors::new(&problem.layout, state)?;
    let (n, r) = beta_system(m, state, &f);
    let s = solve_psd(&n, &r);
    Ok((s.x, s.pinv))
}

/// φ given w, ω, β.
pub fn update_phi(m: &MomentSet, state: &State, problem: &Problem) -> Result<(DVector<f64>, bool)> {
    if problem.layout.va == 0 {
        return Err(LarxError::InvalidSpec("no autoregressive versions".into()));
    }
    let f = Factors::new(&problem.layout, state)?;
    let (n, r) = phi_system(m, state, &f);
    let s = solve_psd(&n, &r);
    Ok((s.x, s.pinv))
}

/// φ and β jointly given w and ω.
pub fn update_phi_beta(m: &MomentSet, state: &State, problem: &Problem) -> Result<(DVector<f64>, DVector<f64>, bool)> {
    let l = &problem.layout;
    let f = Factors::new(l, state)?;
    let va = l.va;
    let nb = l.beta_len();
    let mut n = DMatrix::zeros(va + nb, va + nb);
    let (na, ra) = phi_system(m, state, &f);
    let (nx, rx) = beta_system(m, state, &f);
    let cross = f.iw.transpose() * &m.sigma_ax * &f.kw;
    n.view_mut((0, 0), (va, va)).copy_from(&na);
    n.view_mut((va, va), (nb, nb)).copy_from(&nx);
    n.view_mut((0, va), (va, nb)).copy_from(&cross);
    n.view_mut((va, 0), (nb, va)).copy_from(&cross.transpose());
    // Right-hand sides of the separate steps include the other block's
    // contribution; remove it to get the joint system.
    let mut r = DVector::zeros(va + nb);
    r.rows_mut(0, va).copy_from(&(ra + &cross * &state.beta));
    r.rows_mut(va, nb).copy_from(&(rx + cross.transpose() * &state.phi));
    let s = solve_psd(&n, &r);
    Ok((s.x.rows(0, va).into_owned(), s.x.rows(va, nb).into_owned(), s.pinv))
}

/// Literal ω update: `[(β⊙I_ω)'Σ_X(β⊙I_ω) + M2(λ_x⊙I_ω)]⁻¹[v3 − ½ 1_ω^⊕ λ_p]`.
pub fn update_omega(m: &MomentSet, state: &State, mult: &Multipliers, problem: &Problem) -> Result<(DVector<f64>, bool)> {
    let l = &problem.layout;
    let f = Factors::new(l, state)?;
    let sh = compute_shorthands(m, state, problem)?;
    let lam = BlockVec::new(mult.lambda_x.clone(), BlockStructure::singletons(l.k()))?;
    let lam_i = kr_vec_identity(&lam, &l.omega_structure())?;
    let lhs = f.kb.transpose() * &m.sigma_x * &f.kb + &sh.m2 * lam_i;
    let ones = BlockVec::new(DVector::from_element(l.omega_len(), 1.0), l.omega_structure())?;
    let rhs = &sh.v3 - bds_vec(&ones) * &mult.lambda_p * 0.5;
    let s = solve_general(&lhs, &rhs);
    Ok((s.x, s.pinv))
}

/// Literal w update `(1/ρ_y) Σ_Y⁻¹ (v1 + v2 − ρ_l 1)`, rescaled onto the
/// variance constraint when one is present.
pub fn update_w(m: &MomentSet, state: &State, mult: &Multipliers, problem: &Problem) -> Result<DVector<f64>> {
    if mult.rho_y == 0.0 {
        return Err(LarxError::DegenerateConstraint("rho_y is zero".into()));
    }
    let sh = compute_shorthands(m, state, problem)?;
    let n = problem.layout.n;
    let sy_inv = inv_spd(&m.sigma_y, "Σ_Y")?;
    let mut w = sy_inv * (&sh.v1 + &sh.v2 - DVector::from_element(n, mult.rho_l)) / mult.rho_y;
    if let Some(s2) = problem.constraints.dep_variance {
        let v = (w.transpose() * &m.sigma_y * &w)[0];
        if v > 0.0 {
            w *= (s2 / v).sqrt();
        }
    }
    Ok(w)
}

/// `(ρ_y, ρ_l)` from the dependent-side first-order conditions.
pub fn update_dependent_multipliers(m: &MomentSet, state: &State, problem: &Problem) -> Result<(f64, f64)> {
    let c = &problem.constraints;
    if problem.dependent_fixed() {
        return Ok((1.0, 0.0));
    }
    let sh = compute_shorthands(m, state, problem)?;
    let w = &state.w;
    let n = problem.layout.n as f64;
    let v12 = &sh.v1 + &sh.v2;
    let syw = &m.sigma_y * w;
    let ones = DVector::from_element(w.len(), 1.0);
    match (c.dep_variance, c.dep_sum) {
        (Some(s2), None) => Ok((w.dot(&v12) / s2, 0.0)),
        (Some(s2), Some(ly)) => {
            let den = n * s2 - ly * ones.dot(&syw);
            if den.abs() <= 1e-14 * (n * s2).abs().max(f64::MIN_POSITIVE) {
                return Err(LarxError::DegenerateConstraint(
                    "n·σ_y² equals l_y·1'Σ_Y w; ρ_y undefined".into(),
                ));
            }
            let rho_y = (w * n - &ones * ly).dot(&v12) / den;
            let rho_l = (ones.dot(&v12) - rho_y * ones.dot(&syw)) / n;
            Ok((rho_y, rho_l))
        }
        (None, Some(_)) => {
            let rho_l = (ones.dot(&v12) - ones.dot(&syw)) / n;
            Ok((1.0, rho_l))
        }
        (None, None) => Ok((1.0, 0.0)),
    }
}

/// The alternative sum multiplier `ρ_l = w'(v1+v2)/l_y − σ_y² ρ_y / l_y`.
pub fn rho_l_alternative(m: &MomentSet, state: &State, problem: &Problem, rho_y: f64) -> Result<f64> {
    let c = &problem.constraints;
    let (Some(s2), Some(ly)) = (c.dep_variance, c.dep_sum) else {
        return Err(LarxError::InvalidSpec("needs both dependent constraints".into()));
    };
    if ly == 0.0 {
        return Err(LarxError::DegenerateConstraint("l_y = 0".into()));
    }
    let sh = compute_shorthands(m, state, problem)?;
    Ok(state.w.dot(&(&sh.v1 + &sh.v2)) / ly - s2 * rho_y / ly)
}

/// `(λ_x, λ_p)` from the explanatory-side first-order conditions; groups
/// without a variance (sum) target have their λ_x (λ_p) forced to zero.
pub fn update_explanatory_multipliers(
    m: &MomentSet,
    state: &State,
    problem: &Problem,
) -> Result<(DVector<f64>, DVector<f64>, bool)> {
    let l = &problem.layout;
    let k = l.k();
    if k == 0 {
        return Ok((DVector::zeros(0), DVector::zeros(0), false));
    }
    let sh = compute_shorthands(m, state, problem)?;
    let d = &sh.v3 - &sh.v4;
    let os = l.omega_structure();
    let omega_bds = bds_vec(&BlockVec::new(state.omega.clone(), os.clone())?);
    let one_bds = bds_vec(&BlockVec::new(DVector::from_element(l.omega_len(), 1.0), os)?);
    let mut a = &sh.m1 * &sh.theta - &sh.l * one_bds.transpose() * &sh.m2 * &omega_bds;
    let mut rhs = (&omega_bds * &sh.m1 - &one_bds * &sh.l).transpose() * &d;
    let groups = &problem.constraints.groups;
    for j in 0..k {
        if groups[j].variance.is_none() || problem.group_fixed(j) {
            a.row_mut(j).fill(0.0);
            a.column_mut(j).fill(0.0);
            a[(j, j)] = 1.0;
            rhs[j] = 0.0;
        }
    }
    let sol = solve_general(&a, &rhs);
    let lambda_x = sol.x;
    let m1_inv = DMatrix::from_diagonal(&sh.m1.diagonal().map(|v| 1.0 / v));
    let mut lambda_p = m1_inv * one_bds.transpose() * (&d - &sh.m2 * &omega_bds * &lambda_x) * 2.0;
    for j in 0..k {
        if groups[j].sum.is_none() || problem.group_fixed(j) {
            lambda_p[j] = 0.0;
        }
    }
    Ok((lambda_x, lambda_p, sol.pinv))
}

/// `c = Ȳw − Ā(φ⊗w) − X̄(β⊙ω)`.
pub fn intercept(m: &MomentSet, state: &State, layout: &Layout) -> Result<f64> {
    let f = Factors::new(layout, state)?;
    Ok(m.mean_y.dot(&state.w) - m.mean_a.dot(&f.pw) - m.mean_x.dot(&f.bw))
}

/// Weighted mean squared residual (weights sum to one), evaluated from the
/// moments.
pub fn objective(m: &MomentSet, state: &State, layout: &Layout) -> Result<f64> {
    let f = Factors::new(layout, state)?;
    let w = &state.w;
    let q = |a: &DVector<f64>, s: &DMatrix<f64>, b: &DVector<f64>| (a.transpose() * s * b)[0];
    Ok(q(w, &m.sigma_y, w) + q(&f.pw, &m.sigma_a, &f.pw) + q(&f.bw, &m.sigma_x, &f.bw)
        - 2.0 * q(w, &m.sigma_ya, &f.pw)
        - 2.0 * q(w, &m.sigma_yx, &f.bw)
        + 2.0 * q(&f.pw, &m.sigma_ax, &f.bw))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintResiduals {
    pub dep_variance: Option<f64>,
    pub dep_sum: Option<f64>,
    pub group_variance: Vec<Option<f64>>,
    pub group_sum: Vec<Option<f64>>,
}

impl ConstraintResiduals {
    /// Largest residual relative to its target scale (variance residuals
    /// divided by the target, sum residuals absolute).
    pub fn max_relative(&self, problem: &Problem) -> f64 {
        let c = &problem.constraints;
        let mut worst = 0.0f64;
        if let (Some(r), Some(t)) = (self.dep_variance, c.dep_variance) {
            worst = worst.max(r / t);
        }
        if let Some(r) = self.dep_sum {
            worst = worst.max(r);
        }
        for (j, g) in c.groups.iter().enumerate() {
            if let (Some(r), Some(t)) = (self.group_variance[j], g.variance) {
                worst = worst.max(r / t);
            }
            if let Some(r) = self.group_sum[j] {
                worst = worst.max(r);
            }
        }
        worst
    }
}

pub fn constraint_residuals(m: &MomentSet, state: &State, problem: &Problem) -> ConstraintResiduals {
    let c = &problem.constraints;
    let w = &state.w;
    let ranges = group_ranges(&problem.layout);
    ConstraintResiduals {
        dep_variance: c.dep_variance.map(|s2| ((w.transpose() * &m.sigma_y * w)[0] - s2).abs()),
        dep_sum: c.dep_sum.map(|l| (w.sum() - l).abs()),
        group_variance: c
            .groups
            .iter()
            .enumerate()
            .map(|(j, g)| {
                g.variance.map(|s2| {
                    let o = state.omega.rows(ranges[j].start, ranges[j].len());
                    ((o.transpose() * constrained_cov(m, problem, j) * o)[0] - s2).abs()
                })
            })
            .collect(),
        group_sum: c
            .groups
            .iter()
            .enumerate()
            .map(|(j, g)| g.sum.map(|l| (state.omega.rows(ranges[j].start, ranges[j].len()).sum() - l).abs()))
            .collect(),
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub w: DVector<f64>,
    pub omega: DVector<f64>,
    pub phi: DVector<f64>,
    pub beta: DVector<f64>,
    pub c: f64,
    pub rho_y: f64,
    pub rho_l: f64,
    pub lambda_x: DVector<f64>,
    pub lambda_p: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub initial_objective: f64,
    pub constraint_residuals: ConstraintResiduals,
    /// A pseudo-inverse replaced an ill-conditioned solve at some point.
    pub pinv_fallback: bool,
    pub problem: Problem,
}

impl FitResult {
    pub fn state(&self) -> State {
        State { w: self.w.clone(), omega: self.omega.clone(), phi: self.phi.clone(), beta: self.beta.clone() }
    }

    pub fn multipliers(&self) -> Multipliers {
        Multipliers {
            rho_y: self.rho_y,
            rho_l: self.rho_l,
            lambda_x: self.lambda_x.clone(),
            lambda_p: self.lambda_p.clone(),
        }
    }

    pub fn omega_blocks(&self) -> BlockVec {
        BlockVec::new(self.omega.clone(), self.problem.layout.omega_structure()).expect("consistent")
    }

    pub fn beta_blocks(&self) -> BlockVec {
        BlockVec::new(self.beta.clone(), self.problem.layout.beta_structure()).expect("consistent")
    }
}

fn scale_to(v: &mut DVector<f64>, s: &DMatrix<f64>, target: f64) {
    let cur = (v.transpose() * s * &*v)[0];
    if cur > 0.0 {
        *v *= (target / cur).sqrt();
    }
}

/// Deterministic starting point.
pub fn initial_state(m: &MomentSet, problem: &Problem) -> State {
    let l = &problem.layout;
    let c = &problem.constraints;
    let mut w = DVector::from_element(l.n, 1.0);
    if let Some(s2) = c.dep_variance {
        scale_to(&mut w, &m.sigma_y, s2);
    } else if let Some(ly) = c.dep_sum {
        w *= ly / l.n as f64;
    }
    let mut omega = DVector::zeros(l.omega_len());
    for (j, r) in group_ranges(l).into_iter().enumerate() {
        let mj = r.len();
        let g = &c.groups[j];
        let mut o = DVector::from_element(mj, 1.0);
        if let Some(s2) = g.variance {
            scale_to(&mut o, &constrained_cov(m, problem, j), s2);
        } else if let Some(lj) = g.sum.filter(|v| *v != 0.0) {
            o *= lj / mj as f64;
        } else {
            o /= (mj as f64).sqrt();
        }
        omega.rows_mut(r.start, mj).copy_from(&o);
    }
    State { w, omega, phi: DVector::zeros(l.va), beta: DVector::zeros(l.beta_len()) }
}

/// Exact minimization over each free ω_j in turn.
fn minimize_omega(m: &MomentSet, state: &mut State, problem: &Problem) -> Result<bool> {
    let l = &problem.layout;
    if l.k() == 0 {
        return Ok(false);
    }
    let f = Factors::new(l, state)?;
    let g_full = symmetrize(&(f.kb.transpose() * &m.sigma_x * &f.kb));
    let v3 = f.kb.transpose() * (m.sigma_xy() * &state.w - m.sigma_xa() * &f.pw);
    let ranges = group_ranges(l);
    let mut pinv = false;
    for (j, r) in ranges.iter().enumerate() {
        if problem.group_fixed(j) {
            continue;
        }
        let h = g_full.view((r.start, r.start), (r.len(), r.len())).into_owned();
        let mut g = v3.rows(r.start, r.len()).into_owned();
        for (k, rk) in ranges.iter().enumerate() {
            if k != j {
                g -= g_full.view((r.start, rk.start), (r.len(), rk.len())) * state.omega.rows(rk.start, rk.len());
            }
        }
        let gc = &problem.constraints.groups[j];
        let cov = gc.variance.map(|s2| (constrained_cov(m, problem, j), s2));
        let (x, p) = constrained_min(&h, &g, cov.as_ref().map(|(s, v)| (s, *v)), gc.sum)?;
        pinv |= p;
        state.omega.rows_mut(r.start, r.len()).copy_from(&x);
    }
    Ok(pinv)
}

/// Exact minimization over w.
fn minimize_w(m: &MomentSet, state: &mut State, problem: &Problem) -> Result<bool> {
    if problem.dependent_fixed() {
        return Ok(false);
    }
    let f = Factors::new(&problem.layout, state)?;
    let pt = f.pn.transpose();
    let q = symmetrize(
        &(&m.sigma_y - &pt * m.sigma_ay() - &m.sigma_ya * &f.pn + &pt * &m.sigma_a * &f.pn),
    );
    let b = (&m.sigma_yx - &pt * &m.sigma_ax) * &f.bw;
    let c = &problem.constraints;
    let cov = c.dep_variance.map(|s2| (&m.sigma_y, s2));
    let (w, pinv) = constrained_min(&q, &b, cov, c.dep_sum)?;
    state.w = w;
    Ok(pinv)
}

/// Scale and sign conventions that leave the fitted values unchanged.
fn normalize(state: &mut State, problem: &Problem) {
    let l = &problem.layout;
    let c = &problem.constraints;
    let bs = l.beta_structure();
    for (j, r) in group_ranges(l).into_iter().enumerate() {
        if problem.group_fixed(j) {
            continue;
        }
        let g = &c.groups[j];
        let br = bs.range(j);
        let mut o = state.omega.rows(r.start, r.len()).into_owned();
        if g.variance.is_none() && g.sum.is_none_or(|v| v == 0.0) {
            let norm = o.norm();
            if norm > 0.0 {
                o /= norm;
                state.beta.rows_mut(br.start, br.len()).scale_mut(norm);
            }
        }
        if g.sum.is_none_or(|v| v == 0.0) {
            let flip = sign_flip(&o, g.sum.is_some());
            if flip {
                o.neg_mut();
                state.beta.rows_mut(br.start, br.len()).neg_mut();
            }
        }
        state.omega.rows_mut(r.start, r.len()).copy_from(&o);
    }
    if !problem.dependent_fixed() && c.dep_sum.is_none_or(|v| v == 0.0) && sign_flip(&state.w, c.dep_sum.is_some()) {
        state.w.neg_mut();
        state.beta.neg_mut();
    }
}

/// Whether `v` must be negated: positive sum, or first nonzero entry positive
/// when the sum is (or is constrained to be) zero.
fn sign_flip(v: &DVector<f64>, zero_sum: bool) -> bool {
    let l1 = v.iter().map(|x| x.abs()).sum::<f64>();
    let s = v.sum();
    if !zero_sum && s.abs() > 1e-12 * l1 {
        return s < 0.0;
    }
    let mut c = v.clone();
    first_nonzero_positive(&mut c, 1e-12 * l1) < 0.0
}

fn max_change(a: &State, b: &State) -> f64 {
    [&a.w - &b.w, &a.omega - &b.omega, &a.phi - &b.phi, &a.beta - &b.beta]
        .iter()
        .map(inf_norm)
        .fold(0.0, f64::max)
}

/// Fits a CLARX problem from its moments.
pub fn fit_moments(m: &MomentSet, problem: &Problem, opts: &SolverOptions) -> Result<FitResult> {
    problem.validate()?;
    let l = &problem.layout;
    if m.sigma_y.nrows() != l.n || m.sigma_a.nrows() != l.n * l.va || m.sigma_x.nrows() != l.px() {
        return Err(LarxError::Structure("moments do not match the problem layout".into()));
    }
    let mut state = initial_state(m, problem);
    let initial_objective = objective(m, &state, l)?;
    let mut prev_obj = initial_objective;
    let mut pinv = false;
    let mut converged = false;
    let mut iterations = 0;
    let mut obj = initial_objective;
    for it in 1..=opts.max_iter {
        iterations = it;
        let prev = state.clone();
        let (phi, beta, p) = update_phi_beta(m, &state, problem)?;
        state.phi = phi;
        state.beta = beta;
        pinv |= p;
        pinv |= minimize_omega(m, &mut state, problem)?;
        normalize(&mut state, problem);
        pinv |= minimize_w(m, &mut state, problem)?;
        normalize(&mut state, problem);
        obj = objective(m, &state, l)?;
        let change = max_change(&state, &prev);
        let obj_change = (prev_obj - obj).abs() / prev_obj.abs().max(f64::MIN_POSITIVE);
        prev_obj = obj;
        if change <= opts.tol || (it > 1 && obj_change <= opts.obj_tol) {
            converged = true;
            break;
        }
    }
    let (rho_y, rho_l) = update_dependent_multipliers(m, &state, problem)?;
    let (lambda_x, lambda_p, p) = update_explanatory_multipliers(m, &state, problem)?;
    pinv |= p;
    Ok(FitResult {
        c: intercept(m, &state, l)?,
        constraint_residuals: constraint_residuals(m, &state, problem),
        w: state.w,
        omega: state.omega,
        phi: state.phi,
        beta: state.beta,
        rho_y,
        rho_l,
        lambda_x,
        lambda_p,
        iterations,
        converged,
        objective: obj,
        initial_objective,
        pinv_fallback: pinv,
        problem: problem.clone(),
    })
}

/// Fits the dataset's problem on its rows and weights.
pub fn fit(dataset: &Dataset, opts: &SolverOptions) -> Result<FitResult> {
    dataset.problem.validate()?;
    let m = dataset.moments()?;
    fit_moments(&m, &dataset.problem, opts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub latent: DVector<f64>,
    pub fitted: DVector<f64>,
    pub residuals: DVector<f64>,
}

/// Latent dependent `Yw`, fitted values `c + A(φ⊗w) + X(β⊙ω)` and residuals.
pub fn predict(fit: &FitResult, dataset: &Dataset) -> Result<Prediction> {
    predict_rows(fit, &dataset.y, &dataset.a, &dataset.x)
}

pub fn predict_rows(fit: &FitResult, y: &DMatrix<f64>, a: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<Prediction> {
    let l = &fit.problem.layout;
    if y.ncols() != l.n || a.ncols() != l.n * l.va || x.ncols() != l.px() || a.nrows() != y.nrows() || x.nrows() != y.nrows() {
        return Err(LarxError::Structure("dataset does not match the fit".into()));
    }
    let f = Factors::new(l, &fit.state())?;
    let latent = y * &fit.w;
    let fitted = (a * &f.pw + x * &f.bw).add_scalar(fit.c);
    let residuals = &latent - &fitted;
    Ok(Prediction { latent, fitted, residuals })
}
