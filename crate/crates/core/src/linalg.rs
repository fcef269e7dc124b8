//! Thin bridge between ndarray storage and faer's dense factorizations.

use faer::linalg::solvers::{Llt, Solve};
use faer::{Mat, Side};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::C64;

pub fn to_mat(a: &Array2<C64>) -> Mat<C64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub fn to_array(m: &Mat<C64>) -> Array2<C64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Singular values in non-increasing order.
pub fn singular_values(a: &Mat<C64>) -> Result<Vec<f64>> {
    a.singular_values().map_err(|e| Error::Numerical(format!("singular value decomposition failed: {e:?}")))
}

/// All right singular vectors with their singular values; columns beyond
/// the row count get singular value 0.
pub fn right_singular(a: &Mat<C64>) -> Result<(Vec<f64>, Mat<C64>)> {
    let svd = a.svd().map_err(|e| Error::Numerical(format!("singular value decomposition failed: {e:?}")))?;
    let n = a.ncols();
    let s = svd.S().column_vector();
    let sv = (0..n).map(|i| if i < s.nrows() { s[i].re } else { 0.0 }).collect();
    Ok((sv, svd.V().to_owned()))
}

/// Cholesky factor of a Hermitian positive (semi)definite `H`.
///
/// A failed factorization is retried with a diagonal load of `1e-12` times
/// the mean diagonal, then `1e-9`. Returns the factor and the load used.
pub fn factor_hpd(h: &Mat<C64>) -> Result<(Llt<C64>, f64)> {
    let n = h.nrows();
    let mean_diag = (0..n).map(|i| h[(i, i)].re).sum::<f64>() / n.max(1) as f64;
    for load in [0.0, 1e-12, 1e-9] {
        let shift = load * mean_diag.max(f64::MIN_POSITIVE);
        let res = if shift > 0.0 {
            let hl = Mat::from_fn(n, n, |i, j| if i == j { h[(i, j)] + shift } else { h[(i, j)] });
            hl.llt(Side::Lower)
        } else {
            h.llt(Side::Lower)
        };
        if let Ok(llt) = res {
            let probe = llt.solve(Mat::<C64>::from_fn(n, 1, |_, _| C64::new(1.0, 0.0)));
            if probe.col(0).iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
                return Ok((llt, shift));
            }
        }
    }
    Err(Error::Numerical(format!("{n}x{n} normal matrix is not positive definite even with diagonal loading")))
}

/// Solve `H x = B` through [`factor_hpd`].
pub fn solve_hpd(h: &Mat<C64>, b: &Mat<C64>) -> Result<(Mat<C64>, f64)> {
    let (llt, shift) = factor_hpd(h)?;
    Ok((llt.solve(b), shift))
}

/// Ridge least squares `min |A X - B|^2 + lambda * mean(diag(A^H A)) |X|^2`.
pub fn ridge_lstsq(a: &Mat<C64>, b: &Mat<C64>, lambda: f64) -> Result<Mat<C64>> {
    let mut h = a.adjoint() * a;
    let n = h.nrows();
    let mean = (0..n).map(|i| h[(i, i)].re).sum::<f64>() / n.max(1) as f64;
    for i in 0..n {
        h[(i, i)] += C64::new(lambda * mean, 0.0);
    }
    let rhs = a.adjoint() * b;
    Ok(solve_hpd(&h, &rhs)?.0)
}
