use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Bins or covariate groups entering the final solve.
    pub bins: usize,
    /// Grid intervals `J`.
    pub grid_j: usize,
    pub iterations: usize,
    pub dropped_bins: usize,
    pub warnings: Vec<String>,
}

/// Output shared by every estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub method: String,
    pub tau: f64,
    pub coefficients: Vec<f64>,
    pub standard_errors: Option<Vec<f64>>,
    pub objective: f64,
    pub diagnostics: Diagnostics,
}

impl FitResult {
    pub(crate) fn new(method: &str, tau: f64, coefficients: Vec<f64>) -> Self {
        Self {
            method: method.to_string(),
            tau,
            coefficients,
            standard_errors: None,
            objective: 0.0,
            diagnostics: Diagnostics::default(),
        }
    }
}
