//! Shared domain types: quantile levels and regression datasets.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A level strictly inside `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.0 && value < 1.0 {
            Ok(Self(value))
        } else {
            Err(Error::InvalidLevel(value))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for QuantileLevel {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Discrete,
}

/// Covariates (with a leading all-ones intercept column) and a response.
///
/// `kinds` and `names` describe the covariate columns only, so both have
/// length `x.ncols() - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub kinds: Vec<ColumnKind>,
    pub names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from raw covariate rows, prepending the intercept.
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>, kinds: Vec<ColumnKind>) -> Result<Self> {
        let n = rows.len();
        if n != y.len() {
            return Err(Error::DimensionMismatch(format!("{} covariate rows vs {} responses", n, y.len())));
        }
        let p = kinds.len();
        let mut x = DMatrix::zeros(n, p + 1);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(Error::DimensionMismatch(format!(
                    "row {} has {} covariates, expected {}",
                    i,
                    row.len(),
                    p
                )));
            }
            x[(i, 0)] = 1.0;
            for (j, v) in row.iter().enumerate() {
                x[(i, j + 1)] = *v;
            }
        }
        let names = (1..=p).map(|j| format!("x{j}")).collect();
        let d = Self { x, y, kinds, names };
        d.validate()?;
        Ok(d)
    }

    /// Wraps a full design that already carries the intercept column.
    pub fn from_design(x: DMatrix<f64>, y: Vec<f64>, kinds: Vec<ColumnKind>) -> Result<Self> {
        let names = (1..x.ncols()).map(|j| format!("x{j}")).collect();
        let d = Self { x, y, kinds, names };
        d.validate()?;
        Ok(d)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Self {
        self.names = names;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.x.nrows() != self.y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} design rows vs {} responses",
                self.x.nrows(),
                self.y.len()
            )));
        }
        if self.x.ncols() != self.kinds.len() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "{} design columns vs {} covariate kinds plus intercept",
                self.x.ncols(),
                self.kinds.len()
            )));
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design"));
        }
        if self.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("response"));
        }
        Ok(())
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of coefficients, intercept included.
    #[inline]
    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Number of covariates, intercept excluded.
    #[inline]
    pub fn n_covariates(&self) -> usize {
        self.kinds.len()
    }

    /// Covariate value of row `i`, covariate `j` (0-based, intercept excluded).
    #[inline]
    pub fn covariate(&self, i: usize, j: usize) -> f64 {
        self.x[(i, j + 1)]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    pub fn all_discrete(&self) -> bool {
        self.kinds.iter().all(|k| *k == ColumnKind::Discrete)
    }

    /// Rows selected by `idx`, in that order (duplicates allowed).
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let x = DMatrix::from_fn(idx.len(), self.dim(), |r, c| self.x[(idx[r], c)]);
        let y = idx.iter().map(|&i| self.y[i]).collect();
        Dataset { x, y, kinds: self.kinds.clone(), names: self.names.clone() }
    }

    /// Same covariates with a transformed response.
    pub fn map_response(&self, f: impl Fn(f64) -> f64) -> Dataset {
        Dataset {
            x: self.x.clone(),
            y: self.y.iter().map(|&v| f(v)).collect(),
            kinds: self.kinds.clone(),
            names: self.names.clone(),
        }
    }
}
