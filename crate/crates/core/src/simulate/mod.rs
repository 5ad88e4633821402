//! Data-generating processes, the superquantile counterexample and the Monte
//! Carlo harness.

mod dgp;
mod ks;
mod monte_carlo;
mod skewt;
mod superquantile;

pub use dgp::{DgpSpec, PointFunctionals, CASE52_LEVEL};
pub use ks::{ks_critical_5pct, ks_statistic, standardized_normality_check};
pub use monte_carlo::{guarded_ratio, replication_rng, run_monte_carlo, Candidate, EstimatorSummary, Fitter, McReport};
pub use skewt::SkewedT;
pub use superquantile::{
    dilog, population_derivative, superquantile_fit, superquantile_objective, superquantile_population_slope,
    superquantile_sample_fit,
};

#[cfg(test)]
pub(crate) use skewt::{adaptive_simpson, integrate_to_infinity};

#[cfg(test)]
mod tests;
