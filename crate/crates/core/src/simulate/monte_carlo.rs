//! Seeded Monte Carlo replication of several estimators on one DGP.

use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::DgpSpec;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{fit_estimator, Estimator, EstimatorConfig};
use crate::tail::QuantileBackend;

type CustomFit = Arc<dyn Fn(&Dataset) -> Result<Vec<f64>> + Send + Sync>;

#[derive(Clone)]
pub enum Fitter {
    Registered(Estimator, EstimatorConfig),
    Custom(CustomFit),
}

/// A labelled estimator taking part in a Monte Carlo run.
#[derive(Clone)]
pub struct Candidate {
    pub label: String,
    pub fitter: Fitter,
}

impl Candidate {
    pub fn new(estimator: Estimator, config: EstimatorConfig) -> Self {
        Self { label: estimator.name().to_string(), fitter: Fitter::Registered(estimator, config) }
    }

    /// i-Rock or weighted i-Rock with a given quantile backend, labelled by it.
    pub fn irock_with(estimator: Estimator, mut config: EstimatorConfig, backend: QuantileBackend) -> Self {
        config.irock.backend = backend;
        let suffix = match backend {
            QuantileBackend::GlobalLinear => "linear",
            QuantileBackend::GlobalBspline => "bspline",
            QuantileBackend::BinLocalLinear => "local",
        };
        Self { label: format!("{}-{}", estimator.name(), suffix), fitter: Fitter::Registered(estimator, config) }
    }

    pub fn custom(label: &str, f: impl Fn(&Dataset) -> Result<Vec<f64>> + Send + Sync + 'static) -> Self {
        Self { label: label.to_string(), fitter: Fitter::Custom(Arc::new(f)) }
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.label = label.to_string();
        self
    }

    fn fit(&self, data: &Dataset) -> Result<Vec<f64>> {
        match &self.fitter {
            Fitter::Registered(e, c) => fit_estimator(*e, data, c).map(|f| f.coefficients),
            Fitter::Custom(f) => f(data),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub label: String,
    pub successes: usize,
    pub failures: usize,
    pub first_error: Option<String>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// `(mean − β)/SD` per coefficient.
    pub relative_bias: Vec<f64>,
    pub rmse: Vec<f64>,
    /// Successful estimates in replication order.
    pub estimates: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub spec: DgpSpec,
    pub n: usize,
    pub replications: usize,
    pub tau: f64,
    pub seed: u64,
    pub true_beta: Vec<f64>,
    pub estimators: Vec<EstimatorSummary>,
}

/// Independent stream for replication `r` of a run seeded with `master`.
pub fn replication_rng(master: u64, r: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(r);
    rng
}

/// `baseline/candidate` with `0/0 = 1` and `x/0 = ∞`.
pub fn guarded_ratio(baseline: f64, candidate: f64) -> f64 {
    if candidate == 0.0 {
        if baseline == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        baseline / candidate
    }
}

fn summarize(label: &str, beta: &[f64], fits: Vec<Result<Vec<f64>>>) -> EstimatorSummary {
    let p = beta.len();
    let mut estimates = Vec::new();
    let mut failures = 0;
    let mut first_error = None;
    for f in fits {
        match f {
            Ok(b) if b.len() == p && b.iter().all(|v| v.is_finite()) => estimates.push(b),
            Ok(b) => {
                failures += 1;
                first_error.get_or_insert_with(|| format!("invalid estimate {b:?}"));
            }
            Err(e) => {
                failures += 1;
                first_error.get_or_insert_with(|| e.to_string());
            }
        }
    }
    let r = estimates.len() as f64;
    let mut mean = vec![f64::NAN; p];
    let mut sd = vec![f64::NAN; p];
    let mut relative_bias = vec![f64::NAN; p];
    let mut rmse = vec![f64::NAN; p];
    if !estimates.is_empty() {
        for k in 0..p {
            // Deviations from the truth keep an exact estimator exact.
            let bias = estimates.iter().map(|b| b[k] - beta[k]).sum::<f64>() / r;
            let ss = estimates.iter().map(|b| (b[k] - beta[k] - bias).powi(2)).sum::<f64>();
            let s = if estimates.len() > 1 { (ss / (r - 1.0)).sqrt() } else { 0.0 };
            mean[k] = beta[k] + bias;
            sd[k] = s;
            relative_bias[k] = if s > 0.0 {
                bias / s
            } else if bias == 0.0 {
                0.0
            } else {
                bias.signum() * f64::INFINITY
            };
            rmse[k] = (estimates.iter().map(|b| (b[k] - beta[k]).powi(2)).sum::<f64>() / r).sqrt();
        }
    }
    EstimatorSummary {
        label: label.to_string(),
        successes: estimates.len(),
        failures,
        first_error,
        mean,
        sd,
        relative_bias,
        rmse,
        estimates,
    }
}

/// Replicates `reps` samples of size `n`, fits every candidate and summarizes.
/// Replications run in parallel; results do not depend on the schedule.
pub fn run_monte_carlo(
    spec: &DgpSpec,
    candidates: &[Candidate],
    reps: usize,
    n: usize,
    tau: f64,
    seed: u64,
) -> Result<McReport> {
    if reps < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 replications, got {reps}")));
    }
    let beta = spec.true_beta(tau)?;
    let per_rep: Vec<Vec<Result<Vec<f64>>>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let data = spec.sample_with(n, &mut replication_rng(seed, r as u64))?;
            Ok(candidates.iter().map(|c| c.fit(&data)).collect())
        })
        .collect::<Result<_>>()?;
    let mut by_candidate: Vec<Vec<Result<Vec<f64>>>> = candidates.iter().map(|_| Vec::with_capacity(reps)).collect();
    for rep in per_rep {
        for (k, f) in rep.into_iter().enumerate() {
            by_candidate[k].push(f);
        }
    }
    let estimators = candidates.iter().zip(by_candidate).map(|(c, fits)| summarize(&c.label, &beta, fits)).collect();
    Ok(McReport { spec: spec.clone(), n, replications: reps, tau, seed, true_beta: beta, estimators })
}

impl McReport {
    pub fn summary(&self, label: &str) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.label == label)
    }

    /// Per-coefficient RMSE of `baseline` over that of `candidate`.
    pub fn rmse_ratio(&self, baseline: &str, candidate: &str) -> Result<Vec<f64>> {
        let b = self.summary(baseline).ok_or_else(|| Error::InvalidConfig(format!("no estimator '{baseline}'")))?;
        let c = self.summary(candidate).ok_or_else(|| Error::InvalidConfig(format!("no estimator '{candidate}'")))?;
        Ok(b.rmse.iter().zip(&c.rmse).map(|(x, y)| guarded_ratio(*x, *y)).collect())
    }

    /// One row per estimator and coefficient.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "estimator",
            "coefficient",
            "truth",
            "mean",
            "sd",
            "relative_bias",
            "rmse",
            "successes",
            "failures",
        ])?;
        for e in &self.estimators {
            for k in 0..self.true_beta.len() {
                w.write_record(&[
                    e.label.clone(),
                    k.to_string(),
                    self.true_beta[k].to_string(),
                    e.mean[k].to_string(),
                    e.sd[k].to_string(),
                    e.relative_bias[k].to_string(),
                    e.rmse[k].to_string(),
                    e.successes.to_string(),
                    e.failures.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// RMSE ratio of every estimator pair, one row per pair and coefficient.
    pub fn write_ratio_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["baseline", "candidate", "coefficient", "rmse_ratio"])?;
        for b in &self.estimators {
            for c in &self.estimators {
                if b.label == c.label {
                    continue;
                }
                for (k, r) in self.rmse_ratio(&b.label, &c.label)?.into_iter().enumerate() {
                    w.write_record(&[b.label.clone(), c.label.clone(), k.to_string(), r.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}
