//! Named estimators behind one entry point, so the Monte Carlo runner, the
//! bootstrap and the command line treat them uniformly.
//!
//! The joint M-estimators (J1, J2) are deliberately absent: their joint loss
//! is neither smooth nor convex. Only their asymptotic variances are provided,
//! in [`crate::avar`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::competitors::{
    fit_linearization, fit_quantile_average, fit_tsls, fit_two_step, fit_weighted_two_step, CompetitorConfig,
};
use crate::data::{Dataset, QuantileLevel};
use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::irock::{binned_es_process, discrete_es_process, fit_irock, fit_irock_weighted, IRockConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    IRock,
    IRockWeighted,
    Linearization,
    TwoStep,
    Tsls,
    QuantileAverage,
    WeightedTwoStep,
}

impl Estimator {
    pub const ALL: [Estimator; 7] = [
        Estimator::IRock,
        Estimator::IRockWeighted,
        Estimator::Linearization,
        Estimator::TwoStep,
        Estimator::Tsls,
        Estimator::QuantileAverage,
        Estimator::WeightedTwoStep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::IRock => "irock",
            Estimator::IRockWeighted => "irock-weighted",
            Estimator::Linearization => "ln",
            Estimator::TwoStep => "ts",
            Estimator::Tsls => "tsls",
            Estimator::QuantileAverage => "qavg",
            Estimator::WeightedTwoStep => "wts",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "j1" || s == "j2" {
            return Err(Error::Unsupported(format!("{s} is available only as an asymptotic variance")));
        }
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown estimator '{s}'")))
    }
}

/// Settings for every estimator at one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub irock: IRockConfig,
    pub competitor: CompetitorConfig,
}

impl EstimatorConfig {
    pub fn new(tau: QuantileLevel) -> Self {
        Self { irock: IRockConfig::new(tau), competitor: CompetitorConfig::new(tau) }
    }

    pub fn tau(&self) -> QuantileLevel {
        self.irock.tau
    }

    /// The same settings at another level.
    pub fn at_level(&self, tau: QuantileLevel) -> Self {
        let mut c = self.clone();
        c.irock.tau = tau;
        c.competitor.tau = tau;
        c
    }
}

pub fn fit_estimator(est: Estimator, data: &Dataset, config: &EstimatorConfig) -> Result<FitResult> {
    let tau = config.tau();
    match est {
        Estimator::IRock => fit_irock(data, &config.irock),
        Estimator::IRockWeighted => fit_irock_weighted(data, &config.irock),
        Estimator::Linearization => {
            let table = if data.all_discrete() {
                discrete_es_process(data, &config.irock)?
            } else {
                binned_es_process(data, &config.irock)?.0
            };
            fit_linearization(&table)
        }
        Estimator::TwoStep => fit_two_step(data, tau),
        Estimator::Tsls => fit_tsls(data, tau),
        Estimator::QuantileAverage => fit_quantile_average(data, tau, config.competitor.step),
        Estimator::WeightedTwoStep => fit_weighted_two_step(data, tau, config.competitor.floor),
    }
}
