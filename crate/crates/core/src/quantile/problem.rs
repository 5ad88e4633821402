use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Row-major copy of a weighted problem with the weights folded into the rows.
///
/// `w ρ(y − xᵀb) = ρ(w y − (w x)ᵀb)` for `w ≥ 0`, so after scaling every
/// solver only sees unit weights. Zero-weight rows are dropped.
#[derive(Debug, Clone)]
pub(crate) struct Problem {
    pub n: usize,
    pub p: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Problem {
    pub fn new(design: &DMatrix<f64>, y: &[f64], weights: Option<&[f64]>) -> Result<Self> {
        let (n, p) = design.shape();
        if y.len() != n {
            return Err(Error::DimensionMismatch(format!("{} design rows vs {} responses", n, y.len())));
        }
        if let Some(w) = weights {
            if w.len() != n {
                return Err(Error::DimensionMismatch(format!("{} design rows vs {} weights", n, w.len())));
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::NonFinite("weights"));
            }
        }
        if design.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("response"));
        }
        if p == 0 {
            return Err(Error::SingularDesign);
        }
        let mut xs = Vec::with_capacity(n * p);
        let mut ys = Vec::with_capacity(n);
        for i in 0..n {
            let wi = weights.map_or(1.0, |w| w[i]);
            if wi == 0.0 {
                continue;
            }
            for j in 0..p {
                xs.push(wi * design[(i, j)]);
            }
            ys.push(wi * y[i]);
        }
        let m = ys.len();
        if m == 0 {
            return Err(Error::ZeroWeights);
        }
        if m < p {
            return Err(Error::SingularDesign);
        }
        Ok(Self { n: m, p, x: xs, y: ys })
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    #[inline]
    pub fn fitted(&self, i: usize, b: &[f64]) -> f64 {
        dot(self.row(i), b)
    }

    pub fn objective(&self, b: &[f64], tau: f64) -> f64 {
        (0..self.n).map(|i| rho(self.y[i] - self.fitted(i, b), tau)).sum()
    }

    /// Scale used for relative tolerances.
    pub fn scale(&self) -> f64 {
        let s: f64 = self.y.iter().map(|v| v.abs()).sum();
        if s > 0.0 {
            s
        } else {
            1.0
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn rho(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        (tau - 1.0) * u
    } else {
        tau * u
    }
}
