//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{LarxError, Result};

/// Condition-number threshold above which solves switch to the pseudo-inverse.
pub const COND_LIMIT: f64 = 1e12;

/// Solution of a symmetric system together with a flag telling whether the
/// pseudo-inverse fallback was used.
#[derive(Debug, Clone)]
pub struct Solve {
    pub x: DVector<f64>,
    pub pinv: bool,
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Solves `a x = b` for symmetric positive semidefinite `a`.
///
/// Cholesky is used when the crude condition estimate from the factor's
/// diagonal is below [`COND_LIMIT`]; otherwise an eigenvalue based
/// pseudo-inverse with relative cutoff `1/COND_LIMIT`.
pub fn solve_psd(a: &DMatrix<f64>, b: &DVector<f64>) -> Solve {
    let n = a.nrows();
    if n == 0 {
        return Solve { x: DVector::zeros(0), pinv: false };
    }
    if let Some(ch) = Cholesky::new(a.clone()) {
        let d = ch.l_dirty().diagonal();
        let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let dmin = d.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        if dmin > 0.0 && (dmax / dmin).powi(2) < COND_LIMIT {
            return Solve { x: ch.solve(b), pinv: false };
        }
    }
    Solve { x: pinv_sym(a) * b, pinv: true }
}

/// Solves a general square system, falling back to the SVD pseudo-inverse
/// when the condition number exceeds [`COND_LIMIT`].
pub fn solve_general(a: &DMatrix<f64>, b: &DVector<f64>) -> Solve {
    let n = a.nrows();
    if n == 0 {
        return Solve { x: DVector::zeros(0), pinv: false };
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin > 0.0 && smax / smin < COND_LIMIT {
        if let Some(x) = a.clone().lu().solve(b) {
            return Solve { x, pinv: false };
        }
    }
    let x = svd.solve(b, smax / COND_LIMIT).expect("U and V computed");
    Solve { x, pinv: true }
}

/// Moore-Penrose inverse of a symmetric matrix.
pub fn pinv_sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = SymmetricEigen::new(symmetrize(a));
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cut = lmax / COND_LIMIT;
    let mut inv = DMatrix::zeros(n, n);
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l.abs() > cut && l.abs() > 0.0 {
            let q = eig.eigenvectors.column(i);
            inv += (q * q.transpose()) / l;
        }
    }
    inv
}

/// Inverse of a symmetric positive definite matrix; fails when singular.
pub fn inv_spd(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let ch = Cholesky::new(a.clone())
        .ok_or_else(|| LarxError::Singular(format!("{what} is not positive definite")))?;
    Ok(ch.inverse())
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn chol_lower(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Cholesky::new(a.clone())
        .map(|c| c.l())
        .ok_or_else(|| LarxError::Singular(format!("{what} is not positive definite")))
}

/// Solves `l x = b` for lower-triangular `l`.
pub fn lower_solve(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.solve_lower_triangular(b).expect("nonsingular triangular factor")
}

/// Solves `l' x = b` for lower-triangular `l`.
pub fn lower_t_solve(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.tr_solve_lower_triangular(b).expect("nonsingular triangular factor")
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues ascending.
pub fn sym_eigen_sorted(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let eig = SymmetricEigen::new(symmetrize(a));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = DVector::from_iterator(n, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (k, &i) in idx.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Orthonormal basis (columns) of the orthogonal complement of `a`.
pub fn complement_basis(a: &DVector<f64>) -> DMatrix<f64> {
    let p = a.len();
    let norm = a.norm();
    if p == 0 || norm == 0.0 {
        return DMatrix::identity(p, p);
    }
    // Householder reflection mapping a/|a| onto ±e1.
    let u = a / norm;
    let s = if u[0] >= 0.0 { 1.0 } else { -1.0 };
    let mut v = u.clone();
    v[0] += s;
    let vv = v.dot(&v);
    let h = DMatrix::identity(p, p) - (&v * v.transpose()) * (2.0 / vv);
    h.columns(1, p - 1).into_owned()
}

/// Flips `v` so that its first entry with magnitude above `tol` is positive.
/// Returns the applied sign.
pub fn first_nonzero_positive(v: &mut DVector<f64>, tol: f64) -> f64 {
    for i in 0..v.len() {
        if v[i].abs() > tol {
            if v[i] < 0.0 {
                v.neg_mut();
                return -1.0;
            }
            return 1.0;
        }
    }
    1.0
}

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}
