//! Linear expected-shortfall regression.
//!
//! The i-Rock estimators turn ES regression into a single weighted quantile
//! regression over an estimated ES process. Alongside them live the usual
//! competitors, closed-form asymptotic variances and a Monte Carlo harness.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod avar;
pub mod binning;
pub mod bootstrap;
pub mod competitors;
pub mod data;
pub mod disparity;
pub mod error;
pub mod estimator;
pub mod fit;
pub mod irock;
pub mod linalg;
pub mod load;
pub mod quantile;
pub mod simulate;
pub mod tail;

pub use data::{ColumnKind, Dataset, QuantileLevel};
pub use error::{Error, Result};
pub use fit::{Diagnostics, FitResult};
