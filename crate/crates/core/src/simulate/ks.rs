//! Kolmogorov–Smirnov checks of standardized Monte Carlo draws.

use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// One-sample KS distance between `sample` and the continuous CDF `cdf`.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut s = sample.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in s.iter().enumerate() {
        let f = cdf(*x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    Ok(d)
}

/// Asymptotic 5% critical value `1.358/√m`.
pub fn ks_critical_5pct(m: usize) -> f64 {
    1.358_098_8 / (m as f64).sqrt()
}

/// KS distance of `√n(β̂ − β)/σ` per coefficient against the standard normal,
/// where `σ²` is the diagonal of `avar`.
pub fn standardized_normality_check(
    draws: &[Vec<f64>],
    beta: &[f64],
    avar: &DMatrix<f64>,
    n: usize,
) -> Result<Vec<f64>> {
    if draws.len() < 50 {
        return Err(Error::InsufficientData(format!("normality check needs at least 50 draws, got {}", draws.len())));
    }
    let p = beta.len();
    if avar.nrows() != p || avar.ncols() != p {
        return Err(Error::DimensionMismatch(format!(
            "variance is {}x{}, coefficients {}",
            avar.nrows(),
            avar.ncols(),
            p
        )));
    }
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let rn = (n as f64).sqrt();
    (0..p)
        .map(|k| {
            let s = avar[(k, k)].sqrt();
            if !(s > 0.0) {
                return Err(Error::ZeroNorm);
            }
            let z: Vec<f64> = draws.iter().map(|b| rn * (b[k] - beta[k]) / s).collect();
            ks_statistic(&z, |x| normal.cdf(x))
        })
        .collect()
}
