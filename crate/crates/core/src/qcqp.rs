//! Exact minimization of a quadratic over an ellipsoid and/or a hyperplane:
//! `min x'Hx − 2g'x` subject to optional `x'Sx = σ²` and `1'x = l`.

use nalgebra::{DMatrix, DVector};

use crate::error::{LarxError, Result};
use crate::linalg::{chol_lower, complement_basis, lower_solve, lower_t_solve, solve_psd, sym_eigen_sorted, symmetrize};

/// `min t'Ht − 2g't` subject to `‖t‖² = r2` (global minimizer).
pub fn sphere_min(h: &DMatrix<f64>, g: &DVector<f64>, r2: f64) -> DVector<f64> {
    let p = h.nrows();
    if p == 0 || r2 <= 0.0 {
        return DVector::zeros(p);
    }
    let r = r2.sqrt();
    let (lam, q) = sym_eigen_sorted(h);
    let gt = q.tr_mul(g);
    let gnorm = gt.norm();
    let lscale = lam.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let l1 = lam[0];
    let bottom: Vec<usize> = (0..p).filter(|&i| lam[i] - l1 <= 1e-11 * lscale).collect();
    let g_bottom = bottom.iter().map(|&i| gt[i] * gt[i]).sum::<f64>().sqrt();

    if g_bottom <= 1e-13 * gnorm.max(f64::MIN_POSITIVE) || gnorm == 0.0 {
        // Possible hard case: the bottom eigenspace carries no gradient.
        let mut y = DVector::zeros(p);
        for i in 0..p {
            if !bottom.contains(&i) {
                y[i] = gt[i] / (lam[i] - l1);
            }
        }
        let rest = y.norm_squared();
        if rest <= r2 {
            y[bottom[0]] = (r2 - rest).sqrt();
            return q * y;
        }
    }

    let eval = |mu: f64| {
        let mut n2 = 0.0;
        let mut d3 = 0.0;
        for i in 0..p {
            let den = lam[i] + mu;
            if gt[i] != 0.0 {
                n2 += gt[i] * gt[i] / (den * den);
                d3 += gt[i] * gt[i] / (den * den * den);
            }
        }
        let nx = n2.sqrt();
        // ψ(μ) = 1/‖x(μ)‖ − 1/r, increasing in μ.
        (1.0 / nx - 1.0 / r, d3 / (nx * nx * nx))
    };
    let mut lo = -l1;
    let mut hi = -l1 + gnorm / r;
    let mut mu = hi;
    for _ in 0..500 {
        let (psi, dpsi) = eval(mu);
        if psi.abs() * r <= 1e-15 {
            break;
        }
        if psi < 0.0 {
            lo = mu;
        } else {
            hi = mu;
        }
        let mut next = mu - psi / dpsi;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - mu).abs() <= 1e-16 * (mu.abs() + lscale) {
            mu = next;
            break;
        }
        mu = next;
    }
    let y = DVector::from_iterator(p, (0..p).map(|i| gt[i] / (lam[i] + mu)));
    let mut x = q * y;
    let nx = x.norm();
    if nx > 0.0 {
        x *= r / nx;
    }
    x
}

/// Global minimizer of `x'Hx − 2g'x` under the optional constraints
/// `x'Sx = σ²` (given as `(S, σ²)`) and `1'x = l`. The flag reports whether a
/// pseudo-inverse was needed.
pub fn constrained_min(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    quad: Option<(&DMatrix<f64>, f64)>,
    sum: Option<f64>,
) -> Result<(DVector<f64>, bool)> {
    let p = h.nrows();
    let ones = DVector::from_element(p, 1.0);
    match (quad, sum) {
        (None, None) => {
            let s = solve_psd(h, g);
            Ok((s.x, s.pinv))
        }
        (None, Some(l)) => {
            let x0 = &ones * (l / p as f64);
            let z = complement_basis(&ones);
            if z.ncols() == 0 {
                return Ok((x0, false));
            }
            let hs = symmetrize(&(z.transpose() * h * &z));
            let gs = z.tr_mul(&(g - h * &x0));
            let s = solve_psd(&hs, &gs);
            Ok((x0 + z * s.x, s.pinv))
        }
        (Some((smat, sigma2)), sum) => {
            let l = chol_lower(smat, "constraint covariance")?;
            let tmp = lower_solve(&l, h);
            let hw = symmetrize(&lower_solve(&l, &tmp.transpose()));
            let gw = lower_solve(&l, &DMatrix::from_column_slice(p, 1, g.as_slice())).column(0).into_owned();
            let z = match sum {
                None => sphere_min(&hw, &gw, sigma2),
                Some(target) => {
                    let aw = lower_solve(&l, &DMatrix::from_column_slice(p, 1, ones.as_slice()))
                        .column(0)
                        .into_owned();
                    let z0 = &aw * (target / aw.norm_squared());
                    let r2 = sigma2 - z0.norm_squared();
                    let basis = complement_basis(&aw);
                    if r2 < -1e-9 * sigma2 || (basis.ncols() == 0 && r2 > 1e-9 * sigma2) {
                        return Err(LarxError::Infeasible(format!(
                            "variance target {sigma2} incompatible with sum target {target}"
                        )));
                    }
                    if basis.ncols() == 0 {
                        z0
                    } else {
                        let hs = symmetrize(&(basis.transpose() * &hw * &basis));
                        let gs = basis.tr_mul(&(&gw - &hw * &z0));
                        let t = sphere_min(&hs, &gs, r2.max(0.0));
                        z0 + basis * t
                    }
                }
            };
            let x = lower_t_solve(&l, &DMatrix::from_column_slice(p, 1, z.as_slice())).column(0).into_owned();
            Ok((x, false))
        }
    }
}
