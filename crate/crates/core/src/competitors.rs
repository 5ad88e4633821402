//! Comparison ES estimators: linearization, two-step, two-step least squares,
//! quantile averaging and the weighted two-step.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, QuantileLevel};
use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::linalg::weighted_least_squares;
use crate::quantile::{fit_quantile_regression, quantile_process};
use crate::tail::{pseudo_response, sample_variance, EsProcessTable};

pub const DEFAULT_AVERAGE_STEP: f64 = 0.002;
/// Quantile-average levels stop below this.
pub const AVERAGE_MAX_LEVEL: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompetitorConfig {
    pub tau: QuantileLevel,
    pub step: f64,
    /// Weighted two-step denominator floor; `None` uses 1e-6 times the
    /// response standard deviation.
    pub floor: Option<f64>,
}

impl CompetitorConfig {
    pub fn new(tau: QuantileLevel) -> Self {
        Self { tau, step: DEFAULT_AVERAGE_STEP, floor: None }
    }
}

/// Unweighted least squares of each row's ES at `τ` on its covariates.
pub fn fit_linearization(table: &EsProcessTable) -> Result<FitResult> {
    if table.spread.len() != table.bins.len() {
        return Err(Error::DimensionMismatch("ES table carries no per-row values at the target level".into()));
    }
    let v: Vec<f64> = table.spread.iter().map(|s| s.v).collect();
    let beta = weighted_least_squares(&table.representatives, &v, None)?;
    let mut out = FitResult::new("ln", table.grid.tau, beta.iter().copied().collect());
    out.diagnostics.bins = v.len();
    Ok(out)
}

fn first_step(data: &Dataset, tau: QuantileLevel) -> Result<(Vec<f64>, usize)> {
    let sol = fit_quantile_regression(&data.x, &data.y, tau, None)?;
    let q = (&data.x * nalgebra::DVector::from_vec(sol.coefficients)).iter().copied().collect();
    Ok((q, sol.iterations))
}

pub fn fit_two_step(data: &Dataset, tau: QuantileLevel) -> Result<FitResult> {
    let (q, it) = first_step(data, tau)?;
    let z: Vec<f64> = data.y.iter().zip(&q).map(|(&y, &qi)| pseudo_response(y, qi, tau)).collect();
    let beta = weighted_least_squares(&data.x, &z, None)?;
    let mut out = FitResult::new("ts", tau.value(), beta.iter().copied().collect());
    out.diagnostics.iterations = it;
    Ok(out)
}

/// Least squares of `Y` on `x` over observations at or above the fitted
/// quantile plane.
pub fn fit_tsls(data: &Dataset, tau: QuantileLevel) -> Result<FitResult> {
    let (q, it) = first_step(data, tau)?;
    // Interpolated observations sit on the plane up to rounding.
    let tol = 1e-10 * data.y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tail: Vec<usize> = (0..data.n()).filter(|&i| data.y[i] >= q[i] - tol).collect();
    if tail.len() < data.dim() {
        return Err(Error::InsufficientData(format!(
            "{} observations above the fitted quantile, need at least {}",
            tail.len(),
            data.dim()
        )));
    }
    let x = DMatrix::from_fn(tail.len(), data.dim(), |r, c| data.x[(tail[r], c)]);
    let y: Vec<f64> = tail.iter().map(|&i| data.y[i]).collect();
    let beta = weighted_least_squares(&x, &y, None)?;
    let mut out = FitResult::new("tsls", tau.value(), beta.iter().copied().collect());
    out.diagnostics.iterations = it;
    Ok(out)
}

/// Levels `τ, τ+step, …` strictly below [`AVERAGE_MAX_LEVEL`].
pub fn average_levels(tau: QuantileLevel, step: f64) -> Result<Vec<QuantileLevel>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidConfig(format!("step must be positive, got {step}")));
    }
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let s = tau.value() + k as f64 * step;
        if s >= AVERAGE_MAX_LEVEL - 1e-12 {
            break;
        }
        out.push(QuantileLevel::new(s)?);
        k += 1;
    }
    if out.len() < 2 {
        return Err(Error::InvalidConfig(format!("step {step} leaves fewer than two levels above {}", tau.value())));
    }
    Ok(out)
}

/// Average of linear quantile-regression coefficients over the upper levels.
pub fn fit_quantile_average(data: &Dataset, tau: QuantileLevel, step: f64) -> Result<FitResult> {
    let levels = average_levels(tau, step)?;
    let path = quantile_process(&data.x, &data.y, None, &levels)?;
    let mut beta = vec![0.0; data.dim()];
    for b in &path {
        for (acc, v) in beta.iter_mut().zip(b.iter()) {
            *acc += v;
        }
    }
    let k = path.len() as f64;
    beta.iter_mut().for_each(|b| *b /= k);
    let mut out = FitResult::new("qavg", tau.value(), beta);
    out.diagnostics.grid_j = levels.len();
    Ok(out)
}

/// Same as [`fit_quantile_average`] with one independent fit per level, in
/// parallel. Used to cross-check the warm-started sweep.
pub fn fit_quantile_average_independent(data: &Dataset, tau: QuantileLevel, step: f64) -> Result<FitResult> {
    let levels = average_levels(tau, step)?;
    let fits = levels
        .par_iter()
        .map(|&s| fit_quantile_regression(&data.x, &data.y, s, None).map_err(|e| e.at_level(s.value())))
        .collect::<Result<Vec<_>>>()?;
    let k = fits.len() as f64;
    let beta = (0..data.dim()).map(|c| fits.iter().map(|f| f.coefficients[c]).sum::<f64>() / k).collect();
    Ok(FitResult::new("qavg", tau.value(), beta))
}

/// Two-step with inverse squared-spread weights from a first unweighted pass.
pub fn fit_weighted_two_step(data: &Dataset, tau: QuantileLevel, floor: Option<f64>) -> Result<FitResult> {
    let floor = match floor {
        Some(f) if f > 0.0 && f.is_finite() => f,
        Some(f) => return Err(Error::InvalidConfig(format!("floor must be positive, got {f}"))),
        None => {
            let sd = sample_variance(&data.y).sqrt();
            1e-6 * if sd > 0.0 { sd } else { 1.0 }
        }
    };
    let (q, it) = first_step(data, tau)?;
    let z: Vec<f64> = data.y.iter().zip(&q).map(|(&y, &qi)| pseudo_response(y, qi, tau)).collect();
    let tilde = weighted_least_squares(&data.x, &z, None)?;
    let v = &data.x * &tilde;
    let mut clipped = 0;
    let w: Vec<f64> = v
        .iter()
        .zip(&q)
        .map(|(vi, qi)| {
            let d = vi - qi;
            let d = if d < floor {
                clipped += 1;
                floor
            } else {
                d
            };
            1.0 / (d * d)
        })
        .collect();
    let beta = weighted_least_squares(&data.x, &z, Some(&w))?;
    let mut out = FitResult::new("wts", tau.value(), beta.iter().copied().collect());
    out.diagnostics.iterations = it;
    if clipped > 0 {
        out.diagnostics.warnings.push(format!("{clipped} spread estimates clipped at {floor:e}"));
    }
    Ok(out)
}
