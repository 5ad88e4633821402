//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value cutoff used for pseudo-inverses.
pub const PINV_RTOL: f64 = 1e-12;

/// Moore–Penrose pseudo-inverse with a relative singular-value cutoff.
pub fn pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
    if a.is_empty() {
        return DMatrix::zeros(a.ncols(), a.nrows());
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = if smax > 0.0 { smax * PINV_RTOL * (a.nrows().max(a.ncols()) as f64) } else { 0.0 };
    // pseudo_inverse only fails when eps < 0 or vectors were not computed
    svd.pseudo_inverse(eps).expect("svd with vectors")
}

/// Solves a symmetric positive definite system, reporting singularity.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if !is_well_conditioned(a) {
        return Err(Error::SingularDesign);
    }
    let chol = a.clone().cholesky().ok_or(Error::SingularDesign)?;
    Ok(chol.solve(b))
}

pub fn inverse_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !is_well_conditioned(a) {
        return Err(Error::SingularDesign);
    }
    let chol = a.clone().cholesky().ok_or(Error::SingularDesign)?;
    Ok(chol.inverse())
}

/// Ratio test on the eigenvalues of a symmetric matrix.
pub fn is_well_conditioned(a: &DMatrix<f64>) -> bool {
    if a.nrows() == 0 {
        return false;
    }
    if a.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let eig = a.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.min();
    max > 0.0 && min > max * 1e-13
}

/// Smallest eigenvalue of the symmetric part of `a`.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.min()
}

/// Weighted least squares `argmin Σ wᵢ (yᵢ − xᵢᵀb)²` via the normal equations.
pub fn weighted_least_squares(x: &DMatrix<f64>, y: &[f64], w: Option<&[f64]>) -> Result<DVector<f64>> {
    let (n, k) = x.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!("{} rows vs {} responses", n, y.len())));
    }
    let mut xtx = DMatrix::zeros(k, k);
    let mut xty = DVector::zeros(k);
    for i in 0..n {
        let wi = w.map_or(1.0, |w| w[i]);
        if wi == 0.0 {
            continue;
        }
        for a in 0..k {
            let xa = x[(i, a)] * wi;
            xty[a] += xa * y[i];
            for b in 0..=a {
                xtx[(a, b)] += xa * x[(i, b)];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            xtx[(b, a)] = xtx[(a, b)];
        }
    }
    solve_spd(&xtx, &xty)
}

/// Solves a small square system by LU, `None` when singular.
pub fn solve_square(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().lu().solve(b)
}
