//! Per-group ES regressions and their contrasts against a baseline group.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{check_replicates, resample, spread};
use crate::data::{Dataset, QuantileLevel};
use crate::error::{Error, Result};
use crate::estimator::{fit_estimator, Estimator, EstimatorConfig};
use crate::fit::FitResult;
use crate::simulate::replication_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tail {
    #[default]
    Upper,
    /// `E[Y | Y ≤ q_τ]`, fitted as the upper `1−τ` tail of `−Y`.
    Lower,
}

/// Fits `estimator` on the requested tail at the configured level.
pub fn fit_tail(estimator: Estimator, data: &Dataset, config: &EstimatorConfig, tail: Tail) -> Result<FitResult> {
    match tail {
        Tail::Upper => fit_estimator(estimator, data, config),
        Tail::Lower => {
            let tau = config.tau();
            let flipped = config.at_level(QuantileLevel::new(1.0 - tau.value())?);
            let mut f = fit_estimator(estimator, &data.map_response(|v| -v), &flipped)?;
            f.coefficients.iter_mut().for_each(|b| *b = -*b);
            f.tau = tau.value();
            Ok(f)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupFit {
    pub group: String,
    pub n: usize,
    pub fit: FitResult,
}

/// `β_group − β_baseline`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Contrast {
    pub group: String,
    pub difference: Vec<f64>,
    pub standard_errors: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DisparityResult {
    pub estimator: String,
    pub tau: f64,
    pub tail: Tail,
    pub baseline: String,
    pub names: Vec<String>,
    pub groups: Vec<GroupFit>,
    pub contrasts: Vec<Contrast>,
    pub bootstrap_requested: usize,
    pub bootstrap_effective: usize,
}

impl DisparityResult {
    /// Disparity `xᵀ(β_group − β_baseline)` at covariates `x` (intercept first).
    pub fn disparity(&self, group: &str, x: &[f64]) -> Option<f64> {
        let c = self.contrasts.iter().find(|c| c.group == group)?;
        Some(c.difference.iter().zip(x).map(|(a, b)| a * b).sum())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DisparityOptions<'a> {
    pub estimator: Estimator,
    pub config: &'a EstimatorConfig,
    pub tail: Tail,
    pub baseline: &'a str,
    /// Bootstrap replicates and seed.
    pub bootstrap: Option<(usize, u64)>,
}

/// Fits the estimator within each group and contrasts every other group with
/// the baseline. Bootstrap replicates resample within groups.
type Se = Vec<f64>;

pub fn fit_disparity(data: &Dataset, groups: &[String], opts: &DisparityOptions) -> Result<DisparityResult> {
    if groups.len() != data.n() {
        return Err(Error::DimensionMismatch(format!("{} group labels for {} rows", groups.len(), data.n())));
    }
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        members.entry(g).or_default().push(i);
    }
    if members.len() < 2 {
        return Err(Error::InsufficientData(format!("disparity needs at least two groups, found {}", members.len())));
    }
    if !members.contains_key(opts.baseline) {
        return Err(Error::InvalidConfig(format!("baseline group '{}' not found", opts.baseline)));
    }
    let min = 2 * data.dim();
    for (g, idx) in &members {
        if idx.len() < min {
            return Err(Error::InsufficientData(format!("group '{g}' has {} rows, need at least {min}", idx.len())));
        }
    }
    // Baseline first, then the others in sorted order.
    let order: Vec<(&str, &Vec<usize>)> = std::iter::once((opts.baseline, &members[opts.baseline]))
        .chain(members.iter().filter(|(g, _)| **g != opts.baseline).map(|(g, i)| (*g, i)))
        .collect();
    let subsets: Vec<Dataset> = order.iter().map(|(_, idx)| data.subset(idx)).collect();
    let fit_all = |sets: &[Dataset]| -> Result<Vec<Vec<f64>>> {
        sets.iter()
            .zip(&order)
            .map(|(d, (g, _))| {
                fit_tail(opts.estimator, d, opts.config, opts.tail)
                    .map(|f| f.coefficients)
                    .map_err(|e| Error::InsufficientData(format!("group '{g}': {e}")))
            })
            .collect()
    };

    let mut fits = Vec::with_capacity(order.len());
    for ((g, idx), d) in order.iter().zip(&subsets) {
        let f = fit_tail(opts.estimator, d, opts.config, opts.tail)
            .map_err(|e| Error::InsufficientData(format!("group '{g}': {e}")))?;
        fits.push(GroupFit { group: g.to_string(), n: idx.len(), fit: f });
    }

    let (mut requested, mut effective) = (0, 0);
    // Standard errors per group, then per contrast.
    let mut boot_se: Option<(Vec<Se>, Vec<Se>)> = None;
    if let Some((b, seed)) = opts.bootstrap {
        check_replicates(b)?;
        requested = b;
        let draws: Vec<Option<Vec<Vec<f64>>>> = (0..b)
            .into_par_iter()
            .map(|r| {
                let mut rng = replication_rng(seed, r as u64);
                let sets: Vec<Dataset> = subsets.iter().map(|d| d.subset(&resample(&mut rng, d.n()))).collect();
                fit_all(&sets).ok()
            })
            .collect();
        let ok: Vec<Vec<Vec<f64>>> = draws.into_iter().flatten().collect();
        effective = ok.len();
        if effective < 2 {
            return Err(Error::InsufficientData(format!("only {effective} of {b} bootstrap replicates succeeded")));
        }
        let group_se = (0..order.len()).map(|k| spread(&ok.iter().map(|d| d[k].clone()).collect::<Vec<_>>())).collect();
        let contrast_se = (1..order.len())
            .map(|k| {
                let diffs: Vec<Vec<f64>> =
                    ok.iter().map(|d| d[k].iter().zip(&d[0]).map(|(a, b)| a - b).collect()).collect();
                spread(&diffs)
            })
            .collect();
        boot_se = Some((group_se, contrast_se));
    }

    let mut contrasts: Vec<Contrast> = fits[1..]
        .iter()
        .map(|g| Contrast {
            group: g.group.clone(),
            difference: g.fit.coefficients.iter().zip(&fits[0].fit.coefficients).map(|(a, b)| a - b).collect(),
            standard_errors: None,
        })
        .collect();
    if let Some((group_se, contrast_se)) = boot_se {
        for (g, se) in fits.iter_mut().zip(group_se) {
            g.fit.standard_errors = Some(se);
        }
        for (c, se) in contrasts.iter_mut().zip(contrast_se) {
            c.standard_errors = Some(se);
        }
    }
    let mut names = vec!["(intercept)".to_string()];
    names.extend(data.names.iter().cloned());
    Ok(DisparityResult {
        estimator: opts.estimator.name().to_string(),
        tau: opts.config.tau().value(),
        tail: opts.tail,
        baseline: opts.baseline.to_string(),
        names,
        groups: fits,
        contrasts,
        bootstrap_requested: requested,
        bootstrap_effective: effective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ColumnKind;
    use crate::simulate::DgpSpec;
    use crate::tail::{EsConvention, SortedSample};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_groups(n: usize, shift: [f64; 3], seed: u64) -> (Dataset, Vec<String>) {
        let a = DgpSpec::Case53.sample(n, seed).unwrap();
        let b = DgpSpec::Case53.sample(n, seed + 1).unwrap();
        let mut rows = Vec::new();
        let mut y = Vec::new();
        let mut g = Vec::new();
        for (label, d, s) in [("a", &a, [0.0; 3]), ("b", &b, shift)] {
            for i in 0..d.n() {
                rows.push(vec![d.covariate(i, 0), d.covariate(i, 1)]);
                y.push(d.y[i] + s[0] + s[1] * d.covariate(i, 0) + s[2] * d.covariate(i, 1));
                g.push(label.to_string());
            }
        }
        (Dataset::from_rows(&rows, y, vec![ColumnKind::Discrete; 2]).unwrap(), g)
    }

    #[test]
    fn known_contrast() {
        let shift = [2.0, -1.0, 0.5];
        let (d, g) = two_groups(20_000, shift, 1);
        let config = EstimatorConfig::new(QuantileLevel::new(0.9).unwrap());
        let opts = DisparityOptions {
            estimator: Estimator::IRock,
            config: &config,
            tail: Tail::Upper,
            baseline: "a",
            bootstrap: Some((40, 3)),
        };
        let r = fit_disparity(&d, &g, &opts).unwrap();
        let c = &r.contrasts[0];
        let se = c.standard_errors.as_ref().unwrap();
        for k in 0..3 {
            assert!(
                (c.difference[k] - shift[k]).abs() < 4.0 * se[k],
                "{k}: {} vs {} (se {})",
                c.difference[k],
                shift[k],
                se[k]
            );
        }
        assert_eq!(r.bootstrap_effective, 40);
        assert!(r.groups.iter().all(|g| g.fit.standard_errors.is_some()));
        assert!((r.disparity("b", &[1.0, 0.0, 0.0]).unwrap() - c.difference[0]).abs() < 1e-15);
    }

    #[test]
    fn identical_groups_cancel() {
        let d = DgpSpec::Case53.sample(3000, 2).unwrap();
        let both = Dataset::from_design(
            nalgebra::DMatrix::from_fn(2 * d.n(), 3, |r, c| d.x[(r % d.n(), c)]),
            d.y.iter().chain(&d.y).copied().collect(),
            d.kinds.clone(),
        )
        .unwrap();
        let g: Vec<String> = (0..2 * d.n()).map(|i| if i < d.n() { "p" } else { "q" }.to_string()).collect();
        let config = EstimatorConfig::new(QuantileLevel::new(0.9).unwrap());
        let opts = DisparityOptions {
            estimator: Estimator::TwoStep,
            config: &config,
            tail: Tail::Lower,
            baseline: "q",
            bootstrap: None,
        };
        let r = fit_disparity(&both, &g, &opts).unwrap();
        assert_eq!(r.groups[0].group, "q");
        assert!(r.contrasts[0].difference.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn group_errors() {
        let (d, mut g) = two_groups(200, [0.0; 3], 3);
        let config = EstimatorConfig::new(QuantileLevel::new(0.9).unwrap());
        let opts = DisparityOptions {
            estimator: Estimator::TwoStep,
            config: &config,
            tail: Tail::Upper,
            baseline: "a",
            bootstrap: None,
        };
        for label in g.iter_mut().skip(200).take(196) {
            *label = "a".into();
        }
        match fit_disparity(&d, &g, &opts) {
            Err(Error::InsufficientData(m)) => assert!(m.contains("'b'"), "{m}"),
            other => panic!("{other:?}"),
        }
        let single = vec!["a".to_string(); d.n()];
        assert!(fit_disparity(&d, &single, &opts).is_err());
        let bad = DisparityOptions { baseline: "zzz", ..opts };
        assert!(fit_disparity(&d, &two_groups(200, [0.0; 3], 3).1, &bad).is_err());
    }

    #[test]
    fn lower_tail_negation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let y: Vec<f64> = (0..205).map(|_| rng.random::<f64>() * 10.0 - 3.0).collect();
            let tau = 0.1;
            let mut s = y.clone();
            s.sort_by(|a, b| a.total_cmp(b));
            let lower = s[..21].iter().sum::<f64>() / 21.0;
            let neg: Vec<f64> = y.iter().map(|v| -v).collect();
            let upper = SortedSample::new(&neg).unwrap().es(1.0 - tau, EsConvention::CountNormalized).unwrap();
            assert!((lower + upper).abs() < 1e-12, "{lower} {upper}");
        }
        let d = Dataset::from_rows(&vec![vec![]; 205], (0..205).map(|i| i as f64).collect(), vec![]).unwrap();
        let config = EstimatorConfig::new(QuantileLevel::new(0.1).unwrap());
        let f = fit_tail(Estimator::TwoStep, &d, &config, Tail::Lower).unwrap();
        // Two-step intercept: q + Σ(q − y)₊/(nτ) with q = 20.
        let expected = 20.0 - 210.0 / (205.0 * 0.1);
        assert!((f.coefficients[0] - expected).abs() < 1e-9, "{:?}", f.coefficients);
        assert_eq!(f.tau, 0.1);
    }
}
