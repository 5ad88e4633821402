//! Check loss, sample quantiles and weighted linear quantile regression.

mod ip;
mod problem;
mod simplex;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::QuantileLevel;
use crate::error::{Error, Result};
use problem::Problem;
use simplex::Simplex;

/// Relative duality gap at which the interior point stops.
pub const IP_TOLERANCE: f64 = 1e-11;
const IP_MAX_ITER: usize = 100;
const MM_MAX_ITER: usize = 2000;

/// `{τ − 1(u<0)}·u`.
#[inline]
pub fn check_loss(u: f64, tau: QuantileLevel) -> f64 {
    problem::rho(u, tau.value())
}

/// The `⌈n·s⌉`-th order statistic.
pub fn empirical_quantile(values: &[f64], s: QuantileLevel) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut v = values.to_vec();
    let k = order_index(v.len(), s.value());
    let (_, q, _) = v.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
    Ok(*q)
}

/// Zero-based index of the `⌈n·s⌉`-th order statistic.
#[inline]
pub(crate) fn order_index(n: usize, s: f64) -> usize {
    let ns = n as f64 * s;
    // guard against ns landing a hair above an integer through rounding
    let r = ns.round();
    let c = if (ns - r).abs() <= 1e-9 * ns.max(1.0) { r } else { ns.ceil() };
    (c as usize).clamp(1, n) - 1
}

/// Design matrix, optionally flagged as carrying an intercept in column 0.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDesign {
    pub matrix: DMatrix<f64>,
    pub intercept: bool,
}

impl RegressionDesign {
    pub fn new(matrix: DMatrix<f64>, intercept: bool) -> Result<Self> {
        if intercept && (matrix.ncols() == 0 || matrix.column(0).iter().any(|v| *v != 1.0)) {
            return Err(Error::DimensionMismatch("intercept column must be identically one".into()));
        }
        Ok(Self { matrix, intercept })
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrSolution {
    pub coefficients: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// `Σ wᵢ ρ_τ(yᵢ − xᵢᵀb)`.
pub fn weighted_check_loss(
    design: &DMatrix<f64>,
    y: &[f64],
    b: &[f64],
    tau: QuantileLevel,
    weights: Option<&[f64]>,
) -> f64 {
    let t = tau.value();
    (0..design.nrows())
        .map(|i| {
            let fit: f64 = (0..design.ncols()).map(|j| design[(i, j)] * b[j]).sum();
            weights.map_or(1.0, |w| w[i]) * problem::rho(y[i] - fit, t)
        })
        .sum()
}

/// Minimizes `Σ wᵢ ρ_τ(yᵢ − xᵢᵀb)`.
///
/// An interior point gets close to the optimum; a vertex simplex then
/// finishes exactly. When the minimizer is not unique and both agree on the
/// objective, the interior-point (central) solution is kept.
pub fn fit_quantile_regression(
    design: &DMatrix<f64>,
    y: &[f64],
    tau: QuantileLevel,
    weights: Option<&[f64]>,
) -> Result<QrSolution> {
    let pb = Problem::new(design, y, weights)?;
    let t = tau.value();
    let start = interior_point(&pb, t)?;
    let ip_obj = pb.objective(&start.beta, t);
    let scale = pb.scale();

    let mut best = start.beta.clone();
    let mut best_obj = ip_obj;
    let mut iterations = start.iterations;
    match polish(&pb, &start.beta, t) {
        Ok((b, pivots)) => {
            let obj = pb.objective(&b, t);
            iterations += pivots;
            if obj < ip_obj - 1e-13 * scale || !start.converged {
                best = b;
                best_obj = obj;
            }
        }
        Err(Error::SingularDesign) => return Err(Error::SingularDesign),
        Err(e) => {
            if !start.converged {
                return Err(e);
            }
            log::debug!("simplex polish failed: {e}");
        }
    }
    if best.iter().any(|v| !v.is_finite()) {
        return Err(Error::NoConvergence("non-finite coefficients".into()));
    }
    Ok(QrSolution { coefficients: best, objective: best_obj, iterations })
}

fn interior_point(pb: &Problem, tau: f64) -> Result<ip::IpOutcome> {
    let out = ip::solve(pb, tau, IP_TOLERANCE, IP_MAX_ITER)?;
    if out.converged {
        return Ok(out);
    }
    log::debug!("interior point stalled after {} iterations, switching to majorize-minimize", out.iterations);
    let mm = ip::mm_fallback(pb, tau, MM_MAX_ITER)?;
    if pb.objective(&mm.beta, tau) < pb.objective(&out.beta, tau) || !out.beta.iter().all(|v| v.is_finite()) {
        Ok(mm)
    } else {
        Ok(out)
    }
}

fn polish(pb: &Problem, start: &[f64], tau: f64) -> Result<(Vec<f64>, usize)> {
    let mut sx = Simplex::from_point(pb, start)?;
    sx.optimize(tau, pivot_cap(pb))?;
    Ok((sx.beta.clone(), sx.pivots))
}

fn pivot_cap(pb: &Problem) -> usize {
    50 * pb.n + 1000
}

/// Solutions at increasing levels, each warm-started from the previous vertex.
///
/// Returns one coefficient vector per entry of `levels`, which must be
/// strictly increasing.
pub fn quantile_process(
    design: &DMatrix<f64>,
    y: &[f64],
    weights: Option<&[f64]>,
    levels: &[QuantileLevel],
) -> Result<Vec<DVector<f64>>> {
    if levels.is_empty() {
        return Ok(Vec::new());
    }
    if levels.windows(2).any(|w| w[1].value() <= w[0].value()) {
        return Err(Error::InvalidConfig("levels must be strictly increasing".into()));
    }
    let pb = Problem::new(design, y, weights)?;
    let first = levels[0].value();
    let start = interior_point(&pb, first).map_err(|e| e.at_level(first))?;
    let mut sx = Simplex::from_point(&pb, &start.beta).map_err(|e| e.at_level(first))?;
    let mut out = Vec::with_capacity(levels.len());
    for lv in levels {
        let t = lv.value();
        if let Err(e) = sx.optimize(t, pivot_cap(&pb)) {
            log::debug!("simplex sweep failed at level {t}: {e}; restarting from interior point");
            let restart = interior_point(&pb, t).map_err(|e| e.at_level(t))?;
            sx = Simplex::from_point(&pb, &restart.beta).map_err(|e| e.at_level(t))?;
            sx.optimize(t, pivot_cap(&pb)).map_err(|e| e.at_level(t))?;
        }
        out.push(DVector::from_column_slice(&sx.beta));
    }
    Ok(out)
}

/// Knots at the 1/3 and 2/3 sample quantiles of each column.
pub fn default_knots(x_raw: &DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
    let third = QuantileLevel::new(1.0 / 3.0)?;
    let two_thirds = QuantileLevel::new(2.0 / 3.0)?;
    x_raw
        .column_iter()
        .map(|c| {
            let v: Vec<f64> = c.iter().copied().collect();
            Ok((empirical_quantile(&v, third)?, empirical_quantile(&v, two_thirds)?))
        })
        .collect()
}

/// Additive piecewise-linear design: intercept, then `x, (x−k₁)₊, (x−k₂)₊`
/// for every raw column.
pub fn bspline_design(x_raw: &DMatrix<f64>, knots: &[(f64, f64)]) -> Result<RegressionDesign> {
    let (n, p) = x_raw.shape();
    if knots.len() != p {
        return Err(Error::DimensionMismatch(format!("{} knot pairs for {} columns", knots.len(), p)));
    }
    for (j, &(k1, k2)) in knots.iter().enumerate() {
        let col = x_raw.column(j);
        let (lo, hi) = (col.min(), col.max());
        if !(k1 < k2) || k1 < lo || k2 > hi {
            return Err(Error::InvalidKnots { column: j, k1, k2 });
        }
    }
    let mut m = DMatrix::zeros(n, 1 + 3 * p);
    for i in 0..n {
        m[(i, 0)] = 1.0;
        for (j, &(k1, k2)) in knots.iter().enumerate() {
            let x = x_raw[(i, j)];
            m[(i, 1 + 3 * j)] = x;
            m[(i, 2 + 3 * j)] = (x - k1).max(0.0);
            m[(i, 3 + 3 * j)] = (x - k2).max(0.0);
        }
    }
    RegressionDesign::new(m, true)
}

#[cfg(test)]
mod tests;
