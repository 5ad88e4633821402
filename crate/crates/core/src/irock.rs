//! i-Rock estimators: a single τ-th quantile regression of a stacked ES
//! process on the bin (or group) covariates.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::binning::{bin_moments, build_partition, BinningConfig};
use crate::data::{Dataset, QuantileLevel};
use crate::error::{Error, Result};
use crate::fit::{Diagnostics, FitResult};
use crate::linalg::is_well_conditioned;
use crate::quantile::fit_quantile_regression;
use crate::tail::{
    build_es_process, rearrange, EsConvention, EsProcessTable, QuantileBackend, QuantileGrid, SortedSample, TailSpread,
    DEFAULT_DELTA,
};

/// Default `δ` for discrete covariates: the grid spans nearly all of `(0, 1)`.
/// With few observations per covariate value, the `δ = 0.5` truncation lets
/// the tightest groups drift entirely below the fit.
pub const DISCRETE_DELTA: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinWeighting {
    /// Schur-complement weights `γ̂ₘ`.
    #[default]
    Gamma,
    /// Bin masses `π̂ₘ = nₘ/n`.
    Mass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IRockConfig {
    pub tau: QuantileLevel,
    /// Grid half-width factor. Unset means [`DISCRETE_DELTA`] for the
    /// discrete algorithm and [`DEFAULT_DELTA`] for the binned one.
    pub delta: Option<f64>,
    pub grid_j: Option<usize>,
    pub binning: BinningConfig,
    pub backend: QuantileBackend,
    pub convention: EsConvention,
    pub bin_weighting: BinWeighting,
    /// Extra per-row weights `ωₘ`, in the row order of the ES table.
    pub extra_weights: Option<Vec<f64>>,
    /// Bins with fewer members are dropped.
    pub min_bin_size: usize,
    /// Optimal weights are floored at this fraction of their median.
    pub omega_floor: f64,
}

impl IRockConfig {
    pub fn new(tau: QuantileLevel) -> Self {
        Self {
            tau,
            delta: None,
            grid_j: None,
            binning: BinningConfig::default(),
            backend: QuantileBackend::default(),
            convention: EsConvention::default(),
            bin_weighting: BinWeighting::default(),
            extra_weights: None,
            min_bin_size: 2,
            omega_floor: 1e-8,
        }
    }
}

/// Solves `min_θ Σₘ Σⱼ wₘ ρ_τ(v̂ₘⱼ − xₘᵀθ)`. Tied values within a row are
/// merged into one weighted observation.
pub fn fit_irock_process(table: &EsProcessTable, tau: QuantileLevel, extra: Option<&[f64]>) -> Result<FitResult> {
    let m = table.bins.len();
    if let Some(e) = extra {
        if e.len() != m {
            return Err(Error::DimensionMismatch(format!("{} extra weights for {} rows", e.len(), m)));
        }
    }
    let p = table.representatives.ncols();
    let width = table.values.ncols();
    let mut rows: Vec<usize> = Vec::new();
    let mut y = Vec::new();
    let mut w = Vec::new();
    for r in 0..m {
        let wr = table.weights[r] * extra.map_or(1.0, |e| e[r]);
        if !(wr > 0.0) {
            if wr.is_nan() || wr < 0.0 {
                return Err(Error::NonFinite("bin weights"));
            }
            continue;
        }
        let mut j = 0;
        while j < width {
            let v = table.values[(r, j)];
            let mut k = j + 1;
            while k < width && table.values[(r, k)] == v {
                k += 1;
            }
            rows.push(r);
            y.push(v);
            w.push(wr * (k - j) as f64);
            j = k;
        }
    }
    if rows.is_empty() {
        return Err(Error::ZeroWeights);
    }
    let design = DMatrix::from_fn(rows.len(), p, |i, c| table.representatives[(rows[i], c)]);
    let sol = fit_quantile_regression(&design, &y, tau, Some(&w))?;
    let mut out = FitResult::new("irock", tau.value(), sol.coefficients);
    out.objective = sol.objective / width as f64;
    out.diagnostics = Diagnostics {
        bins: (0..m).filter(|&r| table.weights[r] * extra.map_or(1.0, |e| e[r]) > 0.0).count(),
        grid_j: table.grid.j,
        iterations: sol.iterations,
        ..Default::default()
    };
    Ok(out)
}

/// Rows grouped by identical covariate vectors, in lexicographic order.
pub(crate) fn covariate_groups(data: &Dataset) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<Vec<u64>, Vec<usize>> = BTreeMap::new();
    for i in 0..data.n() {
        let key: Vec<u64> = (0..data.n_covariates()).map(|j| order_key(data.covariate(i, j))).collect();
        groups.entry(key).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Monotone map from f64 to u64 so keys sort numerically.
fn order_key(v: f64) -> u64 {
    let v = if v == 0.0 { 0.0 } else { v };
    let b = v.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

/// ES process of a design with repeated covariate values: empirical ES of
/// each group at every grid level.
pub fn discrete_es_process(data: &Dataset, config: &IRockConfig) -> Result<EsProcessTable> {
    let groups = covariate_groups(data);
    for g in &groups {
        if g.len() < 2 {
            let x: Vec<f64> = data.row(g[0]);
            return Err(Error::InsufficientData(format!("covariate value {:?} has a single observation", &x[1..])));
        }
    }
    let reps = DMatrix::from_fn(groups.len(), data.dim(), |r, c| data.x[(groups[r][0], c)]);
    if !is_well_conditioned(&(reps.transpose() * &reps)) {
        return Err(Error::SingularDesign);
    }
    let grid = QuantileGrid::new(config.tau, config.delta.unwrap_or(DISCRETE_DELTA), data.n(), config.grid_j)?;
    let tau = config.tau.value();
    let mut values = DMatrix::zeros(groups.len(), grid.levels.len());
    let mut spread = Vec::with_capacity(groups.len());
    for (r, g) in groups.iter().enumerate() {
        let ys: Vec<f64> = g.iter().map(|&i| data.y[i]).collect();
        let ss = SortedSample::new(&ys)?;
        let mut row = grid
            .levels
            .iter()
            .map(|&s| ss.es(s, config.convention).map_err(|e| e.at_level(s)))
            .collect::<Result<Vec<f64>>>()?;
        rearrange(&mut row);
        for (j, v) in row.into_iter().enumerate() {
            values[(r, j)] = v;
        }
        spread.push(TailSpread {
            q: ss.quantile(tau),
            v: ss.es(tau, config.convention)?,
            tail_var: ss.tail_variance(tau),
        });
    }
    let weights = match config.bin_weighting {
        BinWeighting::Gamma => groups.iter().map(|g| g.len() as f64).collect(),
        BinWeighting::Mass => groups.iter().map(|g| g.len() as f64 / data.n() as f64).collect(),
    };
    Ok(EsProcessTable { grid, bins: (0..groups.len()).collect(), values, weights, representatives: reps, spread })
}

pub fn fit_irock_discrete(data: &Dataset, config: &IRockConfig) -> Result<FitResult> {
    let table = discrete_es_process(data, config)?;
    let mut fit = fit_irock_process(&table, config.tau, config.extra_weights.as_deref())?;
    fit.method = "irock-discrete".into();
    Ok(fit)
}

/// Binned ES process with the row weights of the final solve.
pub fn binned_es_process(data: &Dataset, config: &IRockConfig) -> Result<(EsProcessTable, Diagnostics)> {
    let part = build_partition(data, &config.binning)?;
    let moments = bin_moments(&part, data);
    let mut diag = Diagnostics { warnings: part.warnings.clone(), ..Default::default() };
    let mut active = Vec::new();
    for m in 0..part.bins.len() {
        if part.counts[m] >= config.min_bin_size {
            active.push(m);
        } else {
            diag.dropped_bins += 1;
        }
    }
    if diag.dropped_bins > 0 {
        let w = format!("{} bins with fewer than {} members dropped", diag.dropped_bins, config.min_bin_size);
        log::warn!("{w}");
        diag.warnings.push(w);
    }
    let weights: Vec<f64> = active
        .iter()
        .map(|&m| match config.bin_weighting {
            BinWeighting::Gamma => moments[m].gamma,
            BinWeighting::Mass => moments[m].s0,
        })
        .collect();
    if weights.iter().all(|w| *w <= 0.0) {
        return Err(Error::ZeroWeights);
    }
    let grid = QuantileGrid::new(config.tau, config.delta.unwrap_or(DEFAULT_DELTA), data.n(), config.grid_j)?;
    let table = build_es_process(data, &part, &grid, config.backend, &active, &weights)?;
    Ok((table, diag))
}

fn merge_diag(fit: &mut FitResult, diag: Diagnostics) {
    fit.diagnostics.dropped_bins = diag.dropped_bins;
    fit.diagnostics.warnings.extend(diag.warnings);
}

pub fn fit_irock_binned(data: &Dataset, config: &IRockConfig) -> Result<FitResult> {
    let (table, diag) = binned_es_process(data, config)?;
    let mut fit = fit_irock_process(&table, config.tau, config.extra_weights.as_deref())?;
    fit.method = "irock".into();
    merge_diag(&mut fit, diag);
    Ok(fit)
}

/// Plug-in optimal weights `(v̂ − q̂)/σ̂²` with
/// `σ̂² = (1−τ)⁻¹[tail variance + τ(v̂ − q̂)²]`, floored at a fraction of
/// their median. Returns the weights and the number of floored rows.
pub fn optimal_weights(spread: &[TailSpread], tau: f64, floor: f64) -> (Vec<f64>, usize) {
    let raw: Vec<Option<f64>> = spread
        .iter()
        .map(|s| {
            let gap = s.v - s.q;
            let sigma2 = (s.tail_var + tau * gap * gap) / (1.0 - tau);
            let w = gap / sigma2;
            (gap > 0.0 && sigma2 > 0.0 && w.is_finite()).then_some(w)
        })
        .collect();
    let mut valid: Vec<f64> = raw.iter().flatten().copied().collect();
    valid.sort_by(|a, b| a.total_cmp(b));
    let median = if valid.is_empty() { 1.0 } else { valid[valid.len() / 2] };
    let lo = floor * median;
    let mut floored = 0;
    let w = raw
        .into_iter()
        .map(|w| match w {
            Some(v) if v >= lo => v,
            _ => {
                floored += 1;
                lo
            }
        })
        .collect();
    (w, floored)
}

/// i-Rock with plug-in optimal bin weights. Uses the discrete-group process
/// when every covariate is discrete.
pub fn fit_irock_weighted(data: &Dataset, config: &IRockConfig) -> Result<FitResult> {
    let (table, diag) = if data.all_discrete() {
        (discrete_es_process(data, config)?, Diagnostics::default())
    } else {
        binned_es_process(data, config)?
    };
    let (omega, floored) = optimal_weights(&table.spread, config.tau.value(), config.omega_floor);
    let mut fit = fit_irock_process(&table, config.tau, Some(&omega))?;
    fit.method = "irock-weighted".into();
    merge_diag(&mut fit, diag);
    if floored > 0 {
        let w = format!("{floored} bins had a nonpositive spread estimate; weight floored");
        log::warn!("{w}");
        fit.diagnostics.warnings.push(w);
    }
    Ok(fit)
}

/// Discrete algorithm when every covariate is discrete, binned otherwise.
pub fn fit_irock(data: &Dataset, config: &IRockConfig) -> Result<FitResult> {
    if data.all_discrete() {
        fit_irock_discrete(data, config)
    } else {
        fit_irock_binned(data, config)
    }
}
