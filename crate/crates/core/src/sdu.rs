//! Decomposition `g = S * D * U` of a square matrix with non-zero leading
//! principal minors: `S` symmetric positive definite, `D` diagonal with
//! `+-1` entries, `U` unit upper triangular.
//!
//! Construction goes through the unpivoted factorization `g = L * Dt * Ut`
//! (`L` unit lower, `Dt` diagonal, `Ut` unit upper), which exists exactly when
//! every leading minor is non-zero. Then
//!
//! ```text
//! D = sign(Dt),   S = L |Dt| L^T,   U = D L^-T D Ut
//! ```
//!
//! `S` is SPD by congruence and `D L^-T D` stays unit upper triangular, so
//! `S D U = L |Dt| D Ut = L Dt Ut = g`. No pivoting is ever applied.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const MINOR_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SduFactors {
    pub s: DMatrix<f64>,
    /// Diagonal of `D`, entries exactly `+1.0` or `-1.0`.
    pub d: DVector<f64>,
    pub u: DMatrix<f64>,
}

impl SduFactors {
    pub fn d_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.d)
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.s * self.d_matrix() * &self.u
    }
}

/// Determinants of the top-left `k x k` blocks, `k = 1..m`.
pub fn leading_minors(g: &DMatrix<f64>) -> DVector<f64> {
    assert!(g.is_square(), "leading_minors needs a square matrix");
    let m = g.nrows();
    DVector::from_iterator(m, (1..=m).map(|k| g.view((0, 0), (k, k)).clone_owned().determinant()))
}

fn minor_signs(g: &DMatrix<f64>) -> Result<DVector<f64>> {
    if !g.is_square() {
        return Err(Error::dims("sdu input (columns)", g.nrows(), g.ncols()));
    }
    let minors = leading_minors(g);
    let scale = g.norm().max(1.0);
    let mut signs = DVector::zeros(g.nrows());
    let mut prev = 1.0_f64;
    for (k, &delta) in minors.iter().enumerate() {
        let tol = MINOR_RTOL * scale.powi(k as i32 + 1);
        if !delta.is_finite() || delta.abs() < tol {
            return Err(Error::SingularMinor(k + 1));
        }
        signs[k] = if (delta > 0.0) == (prev > 0.0) { 1.0 } else { -1.0 };
        prev = delta;
    }
    Ok(signs)
}

/// The `D` factor alone: `D_kk = sign(minor_k / minor_(k-1))`.
pub fn sign_matrix(g: &DMatrix<f64>) -> Result<DVector<f64>> {
    minor_signs(g)
}

/// Unpivoted `g = L * diag(pivots) * Ut`.
fn ldu(g: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let m = g.nrows();
    let mut a = g.clone();
    let mut l = DMatrix::identity(m, m);
    let mut ut = DMatrix::identity(m, m);
    let mut piv = DVector::zeros(m);
    for k in 0..m {
        let p = a[(k, k)];
        piv[k] = p;
        for i in k + 1..m {
            l[(i, k)] = a[(i, k)] / p;
        }
        for j in k + 1..m {
            ut[(k, j)] = a[(k, j)] / p;
        }
        for i in k + 1..m {
            let lik = l[(i, k)];
            for j in k + 1..m {
                a[(i, j)] -= lik * a[(k, j)];
            }
        }
    }
    (l, piv, ut)
}

pub fn sdu_decompose(g: &DMatrix<f64>) -> Result<SduFactors> {
    let d = minor_signs(g)?;
    let m = g.nrows();
    let (l, piv, ut) = ldu(g);
    for k in 0..m {
        if piv[k] == 0.0 || piv[k].signum() != d[k] {
            return Err(Error::SingularMinor(k + 1));
        }
    }

    let abs_piv = piv.map(f64::abs);
    let mut s = &l * DMatrix::from_diagonal(&abs_piv) * l.transpose();
    s = (&s + s.transpose()) * 0.5;

    let l_inv = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(m, m))
        .ok_or_else(|| Error::Numerical("unit lower factor not invertible".into()))?;
    let dm = DMatrix::from_diagonal(&d);
    let mut u = &dm * l_inv.transpose() * &dm * ut;
    for i in 0..m {
        u[(i, i)] = 1.0;
        for j in 0..i {
            u[(i, j)] = 0.0;
        }
    }
    Ok(SduFactors { s, d, u })
}
