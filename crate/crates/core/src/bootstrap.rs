//! Pairs bootstrap standard errors.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{fit_estimator, Estimator, EstimatorConfig};
use crate::simulate::replication_rng;

pub const MIN_BOOTSTRAP: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub standard_errors: Vec<f64>,
    pub requested: usize,
    /// Resamples on which the estimator succeeded.
    pub effective: usize,
    pub first_error: Option<String>,
}

pub(crate) fn check_replicates(b: usize) -> Result<()> {
    if b < MIN_BOOTSTRAP {
        return Err(Error::InvalidConfig(format!("bootstrap needs at least {MIN_BOOTSTRAP} replicates, got {b}")));
    }
    Ok(())
}

pub(crate) fn resample<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Per-coordinate sample standard deviation. Deviations are taken from the
/// first draw so identical draws give exactly zero.
pub(crate) fn spread(draws: &[Vec<f64>]) -> Vec<f64> {
    let p = draws[0].len();
    let b = draws.len() as f64;
    (0..p)
        .map(|k| {
            let d: Vec<f64> = draws.iter().map(|v| v[k] - draws[0][k]).collect();
            let m = d.iter().sum::<f64>() / b;
            (d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (b - 1.0)).sqrt()
        })
        .collect()
}

/// Bootstrap of an arbitrary coefficient map. Replicate `r` draws from its
/// own stream of `seed`, so results do not depend on the thread count.
pub fn bootstrap_with<F>(data: &Dataset, b: usize, seed: u64, fit: F) -> Result<BootstrapResult>
where
    F: Fn(&Dataset) -> Result<Vec<f64>> + Sync,
{
    check_replicates(b)?;
    let fits: Vec<Result<Vec<f64>>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let idx = resample(&mut replication_rng(seed, r as u64), data.n());
            fit(&data.subset(&idx))
        })
        .collect();
    let mut draws = Vec::with_capacity(b);
    let mut first_error = None;
    for f in fits {
        match f {
            Ok(v) if v.iter().all(|x| x.is_finite()) => draws.push(v),
            Ok(_) => {
                first_error.get_or_insert_with(|| "non-finite estimate".to_string());
            }
            Err(e) => {
                first_error.get_or_insert_with(|| e.to_string());
            }
        }
    }
    if draws.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "only {} of {b} bootstrap fits succeeded{}",
            draws.len(),
            first_error.map(|e| format!(": {e}")).unwrap_or_default()
        )));
    }
    Ok(BootstrapResult { standard_errors: spread(&draws), requested: b, effective: draws.len(), first_error })
}

pub fn bootstrap_se(
    data: &Dataset,
    estimator: Estimator,
    config: &EstimatorConfig,
    b: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    bootstrap_with(data, b, seed, |d| fit_estimator(estimator, d, config).map(|f| f.coefficients))
}
