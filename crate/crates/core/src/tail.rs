//! Initial expected-shortfall estimates: one-sample empirical ES, pseudo
//! responses, bin-wise local-linear ES and the ES process over a level grid.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binning::Partition;
use crate::data::{ColumnKind, Dataset, QuantileLevel};
use crate::error::{Error, Result};
use crate::linalg::pinv;
use crate::quantile::{bspline_design, default_knots, order_index, quantile_process};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EsConvention {
    /// Mean of the observations at or above the sample quantile.
    #[default]
    CountNormalized,
    /// Tail sum divided by `(1−s)·n`.
    LevelNormalized,
}

/// A sorted sample with suffix sums, for ES at many levels.
#[derive(Debug, Clone)]
pub struct SortedSample {
    sorted: Vec<f64>,
    suffix: Vec<f64>,
}

impl SortedSample {
    pub fn new(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySample);
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let mut suffix = vec![0.0; sorted.len() + 1];
        for i in (0..sorted.len()).rev() {
            suffix[i] = suffix[i + 1] + sorted[i];
        }
        Ok(Self { sorted, suffix })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn quantile(&self, s: f64) -> f64 {
        self.sorted[order_index(self.sorted.len(), s)]
    }

    pub fn es(&self, s: f64, convention: EsConvention) -> Result<f64> {
        let n = self.sorted.len();
        let q = self.quantile(s);
        let lb = self.sorted.partition_point(|v| *v < q);
        if lb == n {
            return Err(Error::EmptyTail { level: s });
        }
        let tail = self.suffix[lb];
        Ok(match convention {
            EsConvention::CountNormalized => tail / (n - lb) as f64,
            EsConvention::LevelNormalized => tail / ((1.0 - s) * n as f64),
        })
    }

    /// Sample variance of the observations at or above the `s` quantile.
    pub fn tail_variance(&self, s: f64) -> f64 {
        let q = self.quantile(s);
        let lb = self.sorted.partition_point(|v| *v < q);
        sample_variance(&self.sorted[lb..])
    }
}

pub(crate) fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

pub fn empirical_es(values: &[f64], s: QuantileLevel, convention: EsConvention) -> Result<f64> {
    SortedSample::new(values)?.es(s.value(), convention)
}

/// `(1−s)⁻¹(y − q)·1(y ≥ q) + q`.
#[inline]
pub fn pseudo_response(y: f64, q_hat: f64, s: QuantileLevel) -> f64 {
    pseudo(y, q_hat, s.value())
}

#[inline]
fn pseudo(y: f64, q: f64, s: f64) -> f64 {
    if y >= q {
        (y - q) / (1.0 - s) + q
    } else {
        q
    }
}

/// Weights `ℓ` with `ℓᵀz` the intercept of the least-squares fit of `z` on
/// `[1, x − center]`. Rank deficiency is resolved by the pseudo-inverse.
pub fn local_linear_weights(x: &DMatrix<f64>, center: &[f64]) -> Vec<f64> {
    let (n, p) = x.shape();
    if n == 0 {
        return Vec::new();
    }
    let d = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] - center[j - 1] });
    let pi = pinv(&d);
    pi.row(0).iter().copied().collect()
}

/// Intercept of the bin-wise linear fit of `z` on `x − center`.
pub fn local_linear_es(x: &DMatrix<f64>, z: &[f64], center: &[f64]) -> f64 {
    local_linear_weights(x, center).iter().zip(z).map(|(l, v)| l * v).sum()
}

/// Sorts a row in place.
pub fn rearrange(row: &mut [f64]) {
    row.sort_by(|a, b| a.total_cmp(b));
}

pub const DEFAULT_DELTA: f64 = 0.5;

/// `⌈√(70·n·ln n)⌉`, at least 1.
pub fn grid_count(n: usize) -> usize {
    let nf = n as f64;
    if n < 2 {
        return 1;
    }
    ((70.0 * nf * nf.ln()).sqrt().ceil() as usize).max(1)
}

/// Equally spaced levels on `[τ−δτ, τ+δ(1−τ)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileGrid {
    pub tau: f64,
    pub delta: f64,
    pub j: usize,
    pub levels: Vec<f64>,
    /// First level at or above `τ − δτ/2`; lower levels are winsorized.
    pub cutoff: usize,
}

impl QuantileGrid {
    pub fn new(tau: QuantileLevel, delta: f64, n: usize, j_override: Option<usize>) -> Result<Self> {
        let t = tau.value();
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::InvalidConfig(format!("delta must lie in (0, 1], got {delta}")));
        }
        let lo = t - delta * t;
        let hi = t + delta * (1.0 - t);
        if lo <= 0.0 || hi >= 1.0 {
            return Err(Error::InvalidConfig(format!("grid [{lo}, {hi}] must lie strictly inside (0, 1)")));
        }
        let j = j_override.unwrap_or_else(|| grid_count(n));
        if j == 0 {
            return Err(Error::InvalidConfig("grid needs at least one interval".into()));
        }
        let levels: Vec<f64> = (0..=j).map(|k| lo + (hi - lo) * k as f64 / j as f64).collect();
        let floor = t - 0.5 * delta * t;
        let cutoff = levels.iter().position(|s| *s >= floor - 1e-12).unwrap_or(j);
        Ok(Self { tau: t, delta, j, levels, cutoff })
    }

    /// Grid index closest to `s`.
    pub fn nearest(&self, s: f64) -> usize {
        let mut best = 0;
        for (k, l) in self.levels.iter().enumerate() {
            if (l - s).abs() < (self.levels[best] - s).abs() {
                best = k;
            }
        }
        best
    }

    /// Levels that are estimated rather than filled.
    pub fn computed(&self) -> &[f64] {
        &self.levels[self.cutoff..]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantileBackend {
    /// Linear quantile regression on all data.
    #[default]
    GlobalLinear,
    /// Additive piecewise-linear quantile regression on all data.
    GlobalBspline,
    /// Linear quantile regression within each bin.
    BinLocalLinear,
}

/// Fitted conditional quantiles `q̂(s, X_i)` at a fixed set of levels.
pub enum FittedBackend {
    Global { design: DMatrix<f64>, path: Vec<DVector<f64>> },
    Local { designs: Vec<DMatrix<f64>>, paths: Vec<Vec<DVector<f64>>>, slot: Vec<(usize, usize)> },
}

fn bspline_backend_design(data: &Dataset) -> Result<DMatrix<f64>> {
    let cont: Vec<usize> = (0..data.n_covariates()).filter(|&j| data.kinds[j] == ColumnKind::Continuous).collect();
    let disc: Vec<usize> = (0..data.n_covariates()).filter(|&j| data.kinds[j] == ColumnKind::Discrete).collect();
    let raw = DMatrix::from_fn(data.n(), cont.len(), |i, c| data.covariate(i, cont[c]));
    let spline = bspline_design(&raw, &default_knots(&raw)?)?.matrix;
    let k = spline.ncols();
    Ok(DMatrix::from_fn(
        data.n(),
        k + disc.len(),
        |i, c| if c < k { spline[(i, c)] } else { data.covariate(i, disc[c - k]) },
    ))
}

impl FittedBackend {
    /// Fits `backend` at every level in `levels` (increasing).
    pub fn fit(
        backend: QuantileBackend,
        data: &Dataset,
        partition: &Partition,
        bins: &[usize],
        levels: &[f64],
    ) -> Result<Self> {
        let lv: Vec<QuantileLevel> = levels.iter().map(|&s| QuantileLevel::new(s)).collect::<Result<_>>()?;
        match backend {
            QuantileBackend::GlobalLinear => {
                let path = quantile_process(&data.x, &data.y, None, &lv)?;
                Ok(FittedBackend::Global { design: data.x.clone(), path })
            }
            QuantileBackend::GlobalBspline => {
                let design = bspline_backend_design(data)?;
                let path = quantile_process(&design, &data.y, None, &lv)?;
                Ok(FittedBackend::Global { design, path })
            }
            QuantileBackend::BinLocalLinear => {
                let cont = &partition.continuous;
                let mut slot = vec![(usize::MAX, 0); data.n()];
                let fits: Vec<(DMatrix<f64>, Vec<DVector<f64>>)> = bins
                    .par_iter()
                    .map(|&m| {
                        let members = &partition.members[m];
                        let full = DMatrix::from_fn(members.len(), cont.len() + 1, |r, c| {
                            if c == 0 {
                                1.0
                            } else {
                                data.covariate(members[r], cont[c - 1]) - partition.centers[(m, cont[c - 1] + 1)]
                            }
                        });
                        let y: Vec<f64> = members.iter().map(|&i| data.y[i]).collect();
                        match quantile_process(&full, &y, None, &lv) {
                            Ok(path) => Ok((full, path)),
                            Err(Error::SingularDesign) | Err(Error::AtLevel { .. }) => {
                                // too few distinct points for a local slope
                                let ones = DMatrix::from_element(members.len(), 1, 1.0);
                                let path = quantile_process(&ones, &y, None, &lv)?;
                                Ok((ones, path))
                            }
                            Err(e) => Err(e),
                        }
                    })
                    .collect::<Result<_>>()?;
                let mut designs = Vec::with_capacity(fits.len());
                let mut paths = Vec::with_capacity(fits.len());
                for (b, (d, p)) in fits.into_iter().enumerate() {
                    for (r, &i) in partition.members[bins[b]].iter().enumerate() {
                        slot[i] = (b, r);
                    }
                    designs.push(d);
                    paths.push(p);
                }
                Ok(FittedBackend::Local { designs, paths, slot })
            }
        }
    }

    /// `q̂` at level index `k` for observation `i`.
    #[inline]
    pub fn predict(&self, k: usize, i: usize) -> f64 {
        match self {
            FittedBackend::Global { design, path } => {
                let b = &path[k];
                (0..design.ncols()).map(|c| design[(i, c)] * b[c]).sum()
            }
            FittedBackend::Local { designs, paths, slot } => {
                let (b, r) = slot[i];
                let d = &designs[b];
                let th = &paths[b][k];
                (0..d.ncols()).map(|c| d[(r, c)] * th[c]).sum()
            }
        }
    }
}

/// Per-bin plug-in quantities at the grid level nearest `τ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailSpread {
    pub q: f64,
    pub v: f64,
    /// Sample variance of `Y − q̂(τ, X)` over bin members at or above the quantile.
    pub tail_var: f64,
}

/// `M × (J+1)` table of initial ES values at the bin representatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsProcessTable {
    pub grid: QuantileGrid,
    /// Partition bin ids of the rows.
    pub bins: Vec<usize>,
    pub values: DMatrix<f64>,
    pub weights: Vec<f64>,
    /// Representative covariate rows, intercept included.
    pub representatives: DMatrix<f64>,
    pub spread: Vec<TailSpread>,
}

impl EsProcessTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin", "level", "value", "weight"])?;
        for (r, &b) in self.bins.iter().enumerate() {
            for (j, s) in self.grid.levels.iter().enumerate() {
                w.write_record(&[
                    b.to_string(),
                    s.to_string(),
                    self.values[(r, j)].to_string(),
                    self.weights[r].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn is_monotone(&self) -> bool {
        self.values.row_iter().all(|row| row.iter().zip(row.iter().skip(1)).all(|(a, b)| a <= b))
    }
}

/// Local-linear ES at every computed level and every bin in `bins`, then
/// winsorization below the cutoff and monotone rearrangement of each row.
pub fn build_es_process(
    data: &Dataset,
    partition: &Partition,
    grid: &QuantileGrid,
    backend: QuantileBackend,
    bins: &[usize],
    weights: &[f64],
) -> Result<EsProcessTable> {
    if weights.len() != bins.len() {
        return Err(Error::DimensionMismatch(format!("{} weights for {} bins", weights.len(), bins.len())));
    }
    let levels = grid.computed().to_vec();
    let fitted = FittedBackend::fit(backend, data, partition, bins, &levels)?;
    let cont = &partition.continuous;

    let ell: Vec<Vec<f64>> = bins
        .iter()
        .map(|&m| {
            let members = &partition.members[m];
            let rep = partition.representatives[m];
            let x = DMatrix::from_fn(members.len(), cont.len(), |r, c| data.covariate(members[r], cont[c]));
            let center: Vec<f64> = cont.iter().map(|&j| data.covariate(rep, j)).collect();
            local_linear_weights(&x, &center)
        })
        .collect();

    let columns: Vec<Vec<f64>> = (0..levels.len())
        .into_par_iter()
        .map(|k| {
            let s = levels[k];
            bins.iter()
                .zip(&ell)
                .map(|(&m, l)| {
                    partition.members[m]
                        .iter()
                        .zip(l)
                        .map(|(&i, li)| li * pseudo(data.y[i], fitted.predict(k, i), s))
                        .sum::<f64>()
                })
                .collect()
        })
        .collect();

    let mm = bins.len();
    let width = grid.levels.len();
    let mut values = DMatrix::zeros(mm, width);
    for (k, col) in columns.iter().enumerate() {
        for (r, v) in col.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite("initial ES").at_level(levels[k]));
            }
            values[(r, grid.cutoff + k)] = *v;
        }
    }
    for r in 0..mm {
        let fill = values[(r, grid.cutoff)];
        for j in 0..grid.cutoff {
            values[(r, j)] = fill;
        }
        let mut row: Vec<f64> = values.row(r).iter().copied().collect();
        rearrange(&mut row);
        for (j, v) in row.into_iter().enumerate() {
            values[(r, j)] = v;
        }
    }

    let jt = grid.nearest(grid.tau).max(grid.cutoff);
    let kt = jt - grid.cutoff;
    let spread = bins
        .iter()
        .enumerate()
        .map(|(r, &m)| {
            let rep = partition.representatives[m];
            let resid: Vec<f64> = partition.members[m]
                .iter()
                .filter_map(|&i| {
                    let q = fitted.predict(kt, i);
                    (data.y[i] >= q).then(|| data.y[i] - q)
                })
                .collect();
            TailSpread { q: fitted.predict(kt, rep), v: values[(r, jt)], tail_var: sample_variance(&resid) }
        })
        .collect();

    let representatives = DMatrix::from_fn(mm, data.dim(), |r, c| data.x[(partition.representatives[bins[r]], c)]);
    Ok(EsProcessTable {
        grid: grid.clone(),
        bins: bins.to_vec(),
        values,
        weights: weights.to_vec(),
        representatives,
        spread,
    })
}
