//! Small numeric helpers shared by the solvers.
//!
//! Scalar functions go through `libm` so results are identical with and
//! without the `std` feature.

use nalgebra::{DMatrix, DVector};

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline]
pub fn hypot(x: f64, y: f64) -> f64 {
    libm::hypot(x, y)
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn frobenius(a: &DMatrix<f64>) -> f64 {
    sqrt(a.iter().map(|v| v * v).sum())
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(abs(*v)))
}

/// `‖X‖²_W = trace(Xᵀ W X)`.
pub fn weighted_sq_norm(x: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    let wx = w * x;
    x.iter().zip(wx.iter()).map(|(a, b)| a * b).sum()
}

const PIVOT_RTOL: f64 = 1e-12;

/// `log |A|` for a symmetric positive definite `A`; `None` when the
/// Cholesky factorization fails or a pivot is lost to cancellation
/// (squared pivot below `1e-12` of its diagonal entry).
pub fn spd_log_det(a: &DMatrix<f64>) -> Option<f64> {
    let chol = a.clone().cholesky()?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        let d = l[(i, i)];
        if !(d > 0.0) || !d.is_finite() || d * d <= PIVOT_RTOL * a[(i, i)] {
            return None;
        }
        acc += ln(d);
    }
    Some(2.0 * acc)
}

pub fn spd_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = a.clone().cholesky()?;
    let inv = chol.inverse();
    if inv.iter().all(|v| v.is_finite()) {
        Some(inv)
    } else {
        None
    }
}

/// `log |A|` for a general square matrix with positive determinant.
pub fn log_det_positive(a: &DMatrix<f64>) -> Option<f64> {
    let lu = a.clone().lu();
    let mut sign = lu.p().determinant::<f64>();
    let u = lu.u();
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        let d = u[(i, i)];
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        if d < 0.0 {
            sign = -sign;
        }
        acc += ln(abs(d));
    }
    (sign > 0.0).then_some(acc)
}

/// Matrix whose columns are the canonical vectors of `rows` (an `n × rows.len()`
/// selection matrix); `rows` are 0-based row indices.
pub fn selection(n: usize, rows: &[usize]) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(n, rows.len());
    for (j, &i) in rows.iter().enumerate() {
        s[(i, j)] = 1.0;
    }
    s
}

pub fn ones(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0)
}
