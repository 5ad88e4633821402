//! Partition of the covariate space into disjoint bins.
//!
//! Discrete covariates split on their distinct values; continuous ones on
//! equally spaced sample quantiles. Bins are the nonempty cells of the
//! cross product.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, Dataset, QuantileLevel};
use crate::error::{Error, Result};
use crate::linalg::pinv;
use crate::quantile::empirical_quantile;

pub const DEFAULT_BINS_CONSTANT: f64 = 1.6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinningConfig {
    /// Constant `c` in `k = ⌈c·√p·(√n/ln n)^{1/p}⌉`.
    pub constant: f64,
    /// Fixed slice count per continuous covariate, overriding the formula.
    pub slices: Option<usize>,
}

impl Default for BinningConfig {
    fn default() -> Self {
        Self { constant: DEFAULT_BINS_CONSTANT, slices: None }
    }
}

/// Slices per continuous covariate for `p` continuous covariates.
pub fn slice_count(n: usize, p: usize, constant: f64) -> usize {
    if p == 0 || n < 3 {
        return 1;
    }
    let (nf, pf) = (n as f64, p as f64);
    let k = (constant * pf.sqrt() * (nf.sqrt() / nf.ln()).powf(1.0 / pf)).ceil();
    (k as usize).clamp(1, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BinCoord {
    /// Right-closed slice `(lo, hi]`; the first slice also contains `lo`.
    Interval {
        lo: f64,
        hi: f64,
    },
    Category(f64),
}

impl BinCoord {
    pub fn center(&self) -> f64 {
        match *self {
            BinCoord::Interval { lo, hi } => 0.5 * (lo + hi),
            BinCoord::Category(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    /// Per bin, one coordinate description per covariate.
    pub bins: Vec<Vec<BinCoord>>,
    /// Geometric centers with a leading intercept, `M × (p+1)`.
    pub centers: DMatrix<f64>,
    /// Observation index of each bin's representative.
    pub representatives: Vec<usize>,
    pub counts: Vec<usize>,
    /// Bin of every observation.
    pub member_index: Vec<usize>,
    /// Members of every bin in increasing observation order.
    pub members: Vec<Vec<usize>>,
    /// Covariates that were sliced as continuous.
    pub continuous: Vec<usize>,
    /// Slice count used for continuous covariates.
    pub slices: usize,
    pub warnings: Vec<String>,
}

enum Splitter {
    Slices { breaks: Vec<f64>, lo: f64, hi: f64 },
    Values(Vec<f64>),
}

impl Splitter {
    fn index(&self, v: f64) -> usize {
        match self {
            Splitter::Slices { breaks, .. } => breaks.partition_point(|b| *b < v),
            Splitter::Values(vals) => vals.partition_point(|b| *b < v),
        }
    }

    fn coord(&self, idx: usize) -> BinCoord {
        match self {
            Splitter::Slices { breaks, lo, hi } => {
                let l = if idx == 0 { *lo } else { breaks[idx - 1] };
                let h = if idx == breaks.len() { *hi } else { breaks[idx] };
                BinCoord::Interval { lo: l, hi: h }
            }
            Splitter::Values(vals) => BinCoord::Category(vals[idx]),
        }
    }
}

pub fn build_partition(data: &Dataset, config: &BinningConfig) -> Result<Partition> {
    let n = data.n();
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let p = data.n_covariates();
    if p == 0 {
        return Err(Error::InsufficientData("binning needs at least one covariate".into()));
    }
    let mut warnings = Vec::new();
    let mut continuous = Vec::new();
    for j in 0..p {
        if data.kinds[j] == ColumnKind::Continuous {
            let first = data.covariate(0, j);
            if (0..n).all(|i| data.covariate(i, j) == first) {
                let w = format!("continuous covariate {} has zero variance; treated as discrete", data.names[j]);
                log::warn!("{w}");
                warnings.push(w);
            } else {
                continuous.push(j);
            }
        }
    }
    let k = config.slices.unwrap_or_else(|| slice_count(n, continuous.len(), config.constant)).max(1);

    let mut splitters = Vec::with_capacity(p);
    for j in 0..p {
        let col: Vec<f64> = (0..n).map(|i| data.covariate(i, j)).collect();
        if continuous.contains(&j) {
            let mut breaks = Vec::with_capacity(k.saturating_sub(1));
            for l in 1..k {
                breaks.push(empirical_quantile(&col, QuantileLevel::new(l as f64 / k as f64)?)?);
            }
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            splitters.push(Splitter::Slices { breaks, lo, hi });
        } else {
            let mut vals = col;
            vals.sort_by(|a, b| a.total_cmp(b));
            vals.dedup();
            splitters.push(Splitter::Values(vals));
        }
    }

    let mut cells: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let key: Vec<usize> = (0..p).map(|j| splitters[j].index(data.covariate(i, j))).collect();
        cells.entry(key).or_default().push(i);
    }

    let m = cells.len();
    let mut bins = Vec::with_capacity(m);
    let mut centers = DMatrix::zeros(m, p + 1);
    let mut members = Vec::with_capacity(m);
    let mut counts = Vec::with_capacity(m);
    let mut member_index = vec![0; n];
    for (b, (key, idx)) in cells.into_iter().enumerate() {
        let coords: Vec<BinCoord> = key.iter().enumerate().map(|(j, &c)| splitters[j].coord(c)).collect();
        centers[(b, 0)] = 1.0;
        for (j, c) in coords.iter().enumerate() {
            centers[(b, j + 1)] = c.center();
        }
        for &i in &idx {
            member_index[i] = b;
        }
        counts.push(idx.len());
        members.push(idx);
        bins.push(coords);
    }
    let mut part = Partition {
        bins,
        centers,
        representatives: vec![0; m],
        counts,
        member_index,
        members,
        continuous,
        slices: k,
        warnings,
    };
    for b in 0..m {
        part.representatives[b] = closest_member(&part, data, b)?;
    }
    Ok(part)
}

fn closest_member(part: &Partition, data: &Dataset, m: usize) -> Result<usize> {
    let members = part.members.get(m).ok_or(Error::EmptyBin(m))?;
    let p = data.n_covariates();
    let mut best = None;
    let mut best_d = f64::INFINITY;
    for &i in members {
        let d: f64 = (0..p).map(|j| (data.covariate(i, j) - part.centers[(m, j + 1)]).powi(2)).sum();
        // members are sorted, so strict improvement keeps the lowest index on ties
        if d < best_d {
            best_d = d;
            best = Some(i);
        }
    }
    best.ok_or(Error::EmptyBin(m))
}

/// Covariate row (intercept included) of the member closest to bin `m`'s center.
pub fn representative(partition: &Partition, data: &Dataset, m: usize) -> Result<Vec<f64>> {
    if partition.members.get(m).is_none_or(|v| v.is_empty()) {
        return Err(Error::EmptyBin(m));
    }
    Ok(data.row(partition.representatives[m]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinMoments {
    pub s0: f64,
    pub s1: DVector<f64>,
    pub s2: DMatrix<f64>,
    pub gamma: f64,
}

/// Moment blocks over the continuous coordinates, centered at each bin's
/// geometric center.
pub fn bin_moments(partition: &Partition, data: &Dataset) -> Vec<BinMoments> {
    let n = data.n() as f64;
    let cont = &partition.continuous;
    let pc = cont.len();
    (0..partition.bins.len())
        .map(|m| {
            let mut s1 = DVector::zeros(pc);
            let mut s2 = DMatrix::zeros(pc, pc);
            for &i in &partition.members[m] {
                let d = DVector::from_iterator(
                    pc,
                    cont.iter().map(|&j| data.covariate(i, j) - partition.centers[(m, j + 1)]),
                );
                s1 += &d;
                s2 += &d * d.transpose();
            }
            s1 /= n;
            s2 /= n;
            let s0 = partition.members[m].len() as f64 / n;
            let gamma = if pc == 0 {
                s0
            } else {
                let q = (s1.transpose() * pinv(&s2) * &s1)[(0, 0)];
                (s0 - q).clamp(0.0, s0)
            };
            BinMoments { s0, s1, s2, gamma }
        })
        .collect()
}

/// One diagnostic row per bin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinSummary {
    pub bin: usize,
    pub bounds: String,
    pub count: usize,
    pub gamma: f64,
}

pub fn partition_summary(partition: &Partition, moments: &[BinMoments]) -> Vec<BinSummary> {
    partition
        .bins
        .iter()
        .enumerate()
        .map(|(m, coords)| {
            let bounds = coords
                .iter()
                .map(|c| match *c {
                    BinCoord::Interval { lo, hi } => format!("({lo}, {hi}]"),
                    BinCoord::Category(v) => format!("{v}"),
                })
                .collect::<Vec<_>>()
                .join(" x ");
            BinSummary { bin: m, bounds, count: partition.counts[m], gamma: moments[m].gamma }
        })
        .collect()
}
