//! The four subcommands. Each resolves its defaults into the configuration
//! first, so the manifest records exactly what ran.

use std::path::PathBuf;

use irock::avar::{
    are, avar as compute_avar, functionals_from_dgp, location_scale_are, AreNorm, AvarMethod, CovariateSource,
    DEFAULT_SAMPLE_SIZE,
};
use irock::bootstrap::{bootstrap_with, BootstrapResult};
use irock::disparity::{fit_disparity, fit_tail, DisparityOptions};
use irock::estimator::{Estimator, EstimatorConfig};
use irock::irock::{fit_irock, IRockConfig};
use irock::load::{load_csv, ColumnRoles};
use irock::simulate::{
    run_monte_carlo, superquantile_population_slope, superquantile_sample_fit, Candidate, DgpSpec, CASE52_LEVEL,
};
use irock::tail::QuantileBackend;
use irock::QuantileLevel;
use rayon::prelude::*;
use serde_json::json;

use crate::config::RunConfig;
use crate::output::{manifest, num, sibling, Table};
use crate::CliError;

const DEFAULT_TAU: f64 = 0.9;
const DEFAULT_SEED: u64 = 1;

fn usage(m: impl Into<String>) -> CliError {
    CliError::Usage(m.into())
}

fn estimator_config(cfg: &RunConfig) -> Result<EstimatorConfig, CliError> {
    let mut c = EstimatorConfig::new(QuantileLevel::new(cfg.tau.unwrap_or(DEFAULT_TAU))?);
    if let Some(d) = cfg.delta {
        c.irock.delta = Some(d);
    }
    if let Some(b) = cfg.bins_constant {
        c.irock.binning.constant = b;
    }
    c.irock.grid_j = cfg.grid_j;
    if let Some(b) = cfg.backend {
        c.irock.backend = b;
    }
    Ok(c)
}

/// `irock-linear`, `irock-bspline` and `irock-local` (also for
/// `irock-weighted-…`) pick the quantile backend in the name.
fn parse_candidate(name: &str, config: &EstimatorConfig) -> Result<Candidate, CliError> {
    let backends = [
        ("-linear", QuantileBackend::GlobalLinear),
        ("-bspline", QuantileBackend::GlobalBspline),
        ("-local", QuantileBackend::BinLocalLinear),
    ];
    for (suffix, backend) in backends {
        if let Some(base) = name.strip_suffix(suffix) {
            if let Ok(e @ (Estimator::IRock | Estimator::IRockWeighted)) = base.parse::<Estimator>() {
                return Ok(Candidate::irock_with(e, config.clone(), backend));
            }
        }
    }
    Ok(Candidate::new(name.parse::<Estimator>()?, config.clone()))
}

fn coefficient_names(data: &irock::Dataset) -> Vec<String> {
    std::iter::once("(intercept)".to_string()).chain(data.names.iter().cloned()).collect()
}

pub fn fit(mut cfg: RunConfig) -> Result<bool, CliError> {
    let input = cfg.input.clone().ok_or_else(|| usage("fit needs --input"))?;
    let response = cfg.response.clone().ok_or_else(|| usage("fit needs --response"))?;
    cfg.tau.get_or_insert(DEFAULT_TAU);
    cfg.seed.get_or_insert(DEFAULT_SEED);
    cfg.missing.get_or_insert_with(Default::default);
    cfg.tail.get_or_insert_with(Default::default);
    if cfg.estimators.is_empty() {
        cfg.estimators = vec![Estimator::IRock.name().into()];
    }
    let config = estimator_config(&cfg)?;
    let estimators = cfg.estimators.iter().map(|e| e.parse::<Estimator>()).collect::<irock::Result<Vec<_>>>()?;
    let roles = ColumnRoles {
        response,
        covariates: cfg.covariates.clone(),
        group: cfg.group.clone(),
        missing: cfg.missing.unwrap_or_default(),
    };
    let loaded = load_csv(&input, &roles)?;
    eprintln!("read {} rows, kept {}, dropped {}", loaded.rows_read, loaded.data.n(), loaded.dropped);
    for w in loaded.warnings.iter().take(10) {
        eprintln!("warning: {w}");
    }
    if loaded.warnings.len() > 10 {
        eprintln!("warning: {} more dropped rows", loaded.warnings.len() - 10);
    }
    let data = &loaded.data;
    let tail = cfg.tail.unwrap_or_default();
    let seed = cfg.seed.unwrap_or(DEFAULT_SEED);
    let names = coefficient_names(data);
    let mut ok = true;
    let mut status = Vec::new();

    let mut table = if cfg.group.is_some() {
        Table::new(&["estimator", "group", "kind", "coefficient", "estimate", "std_error"])
    } else {
        Table::new(&["estimator", "coefficient", "estimate", "std_error"])
    };
    let se_cell = |se: Option<&Vec<f64>>, k: usize| se.map(|s| num(s[k])).unwrap_or_default();

    if let Some(groups) = &loaded.groups {
        let baseline = match &cfg.baseline {
            Some(b) => b.clone(),
            None => groups.iter().min().cloned().expect("non-empty data"),
        };
        cfg.baseline = Some(baseline.clone());
        for est in &estimators {
            let opts = DisparityOptions {
                estimator: *est,
                config: &config,
                tail,
                baseline: &baseline,
                bootstrap: cfg.bootstrap.map(|b| (b, seed)),
            };
            match fit_disparity(data, groups, &opts) {
                Ok(r) => {
                    for g in &r.groups {
                        for (k, b) in g.fit.coefficients.iter().enumerate() {
                            table.push(vec![
                                est.name().into(),
                                g.group.clone(),
                                "fit".into(),
                                names[k].clone(),
                                num(*b),
                                se_cell(g.fit.standard_errors.as_ref(), k),
                            ]);
                        }
                    }
                    for c in &r.contrasts {
                        for (k, d) in c.difference.iter().enumerate() {
                            table.push(vec![
                                est.name().into(),
                                c.group.clone(),
                                "contrast".into(),
                                names[k].clone(),
                                num(*d),
                                se_cell(c.standard_errors.as_ref(), k),
                            ]);
                        }
                    }
                    status.push(
                        json!({"estimator": est.name(), "ok": true, "bootstrap_effective": r.bootstrap_effective}),
                    );
                }
                Err(e) => {
                    eprintln!("{}: {e}", est.name());
                    ok = false;
                    status.push(json!({"estimator": est.name(), "ok": false, "error": e.to_string()}));
                }
            }
        }
    } else {
        for est in &estimators {
            let result = fit_tail(*est, data, &config, tail).and_then(|mut f| {
                let boot: Option<BootstrapResult> = match cfg.bootstrap {
                    Some(b) => Some(bootstrap_with(data, b, seed, |d| {
                        fit_tail(*est, d, &config, tail).map(|f| f.coefficients)
                    })?),
                    None => None,
                };
                f.standard_errors = boot.as_ref().map(|b| b.standard_errors.clone());
                Ok((f, boot.map(|b| b.effective)))
            });
            match result {
                Ok((f, effective)) => {
                    for (k, b) in f.coefficients.iter().enumerate() {
                        table.push(vec![
                            est.name().into(),
                            names[k].clone(),
                            num(*b),
                            se_cell(f.standard_errors.as_ref(), k),
                        ]);
                    }
                    for w in &f.diagnostics.warnings {
                        eprintln!("{}: {w}", est.name());
                    }
                    status.push(json!({"estimator": est.name(), "ok": true, "bootstrap_effective": effective}));
                }
                Err(e) => {
                    eprintln!("{}: {e}", est.name());
                    ok = false;
                    status.push(json!({"estimator": est.name(), "ok": false, "error": e.to_string()}));
                }
            }
        }
    }
    table.print();
    let mut outputs = Vec::new();
    if let Some(o) = &cfg.output {
        table.write(o, cfg.format.unwrap_or_default())?;
        outputs.push(o.clone());
    }
    let summary = json!({
        "rows_read": loaded.rows_read,
        "rows_used": data.n(),
        "rows_dropped": loaded.dropped,
        "tail": tail,
        "estimators": status,
    });
    manifest(&cfg, &outputs, ok, summary)?;
    Ok(ok)
}

pub fn simulate(mut cfg: RunConfig) -> Result<bool, CliError> {
    let name = cfg.spec.clone().ok_or_else(|| usage("simulate needs a model name"))?;
    let spec = DgpSpec::from_name(&name)?;
    let tau = *cfg.tau.get_or_insert(if spec == DgpSpec::Case52 { CASE52_LEVEL } else { DEFAULT_TAU });
    let n = *cfg.n.get_or_insert(1000);
    let reps = *cfg.reps.get_or_insert(200);
    let seed = *cfg.seed.get_or_insert(DEFAULT_SEED);
    if cfg.estimators.is_empty() {
        cfg.estimators = vec![Estimator::IRock.name().into(), Estimator::TwoStep.name().into()];
    }
    let config = estimator_config(&cfg)?;
    let candidates = cfg.estimators.iter().map(|e| parse_candidate(e, &config)).collect::<Result<Vec<_>, _>>()?;
    let report = run_monte_carlo(&spec, &candidates, reps, n, tau, seed)?;

    let mut summary = Table::new(&[
        "estimator",
        "coefficient",
        "truth",
        "mean",
        "sd",
        "relative_bias",
        "rmse",
        "successes",
        "failures",
    ]);
    let mut ok = true;
    for e in &report.estimators {
        if e.failures > 0 {
            ok = false;
            eprintln!(
                "{}: {} of {} replications failed; first error: {}",
                e.label,
                e.failures,
                reps,
                e.first_error.as_deref().unwrap_or("?")
            );
        }
        for k in 0..report.true_beta.len() {
            summary.push(vec![
                e.label.clone(),
                format!("b{k}"),
                num(report.true_beta[k]),
                num(e.mean[k]),
                num(e.sd[k]),
                num(e.relative_bias[k]),
                num(e.rmse[k]),
                e.successes.to_string(),
                e.failures.to_string(),
            ]);
        }
    }
    let baseline = if report.summary("ts").is_some() { "ts".to_string() } else { report.estimators[0].label.clone() };
    let mut ratios = Table::new(&["baseline", "candidate", "coefficient", "rmse_ratio"]);
    for e in report.estimators.iter().filter(|e| e.label != baseline) {
        for (k, r) in report.rmse_ratio(&baseline, &e.label)?.into_iter().enumerate() {
            ratios.push(vec![baseline.clone(), e.label.clone(), format!("b{k}"), num(r)]);
        }
    }
    println!("{} n={n} reps={reps} tau={tau} seed={seed}", spec.name());
    summary.print();
    println!();
    println!("RMSE ratio (baseline over candidate; above 1 favours the candidate)");
    ratios.print();

    let mut outputs = Vec::new();
    if let Some(o) = &cfg.output {
        let format = cfg.format.unwrap_or_default();
        summary.write(o, format)?;
        let r = sibling(o, "ratios");
        ratios.write(&r, format)?;
        outputs.extend([o.clone(), r]);
    }
    manifest(&cfg, &outputs, ok, json!({"true_beta": report.true_beta}))?;
    Ok(ok)
}

pub fn avar(mut cfg: RunConfig) -> Result<bool, CliError> {
    let tau = *cfg.tau.get_or_insert(DEFAULT_TAU);
    let seed = *cfg.seed.get_or_insert(DEFAULT_SEED);
    let mut outputs = Vec::new();
    let mut ok = true;
    let mut summary = serde_json::Map::new();

    if let Some(name) = cfg.spec.clone() {
        let spec = DgpSpec::from_name(&name)?;
        let source = if spec.support().is_some() {
            CovariateSource::Support
        } else {
            CovariateSource::Sample { size: *cfg.sample_size.get_or_insert(DEFAULT_SAMPLE_SIZE), seed }
        };
        if cfg.methods.is_empty() {
            cfg.methods = AvarMethod::standard().iter().map(|m| m.name().to_string()).collect();
        }
        let methods = cfg.methods.iter().map(|m| m.parse::<AvarMethod>()).collect::<irock::Result<Vec<_>>>()?;
        let fm = functionals_from_dgp(&spec, tau, &source)?;
        let ts = compute_avar(&AvarMethod::Tsn, &fm, tau)?;
        let mut overview = Table::new(&["method", "are_frobenius", "are_determinant", "diagonal"]);
        let mut matrices = Table::new(&["method", "row", "col", "value"]);
        for m in &methods {
            match compute_avar(m, &fm, tau) {
                Ok(r) => {
                    let diag: Vec<String> = (0..fm.dim()).map(|k| format!("{:.4}", r.sandwich[(k, k)])).collect();
                    overview.push(vec![
                        m.name().into(),
                        num(are(&r, &ts, AreNorm::Frobenius)?),
                        num(are(&r, &ts, AreNorm::Determinant)?),
                        diag.join(" "),
                    ]);
                    for i in 0..fm.dim() {
                        for j in 0..fm.dim() {
                            matrices.push(vec![
                                m.name().into(),
                                i.to_string(),
                                j.to_string(),
                                r.sandwich[(i, j)].to_string(),
                            ]);
                        }
                    }
                }
                Err(e) => {
                    ok = false;
                    eprintln!("{}: {e}", m.name());
                }
            }
        }
        println!("{} tau={tau}; ARE is relative to the unweighted two-step", spec.name());
        overview.print();
        if let Some(o) = &cfg.output {
            matrices.write(o, cfg.format.unwrap_or_default())?;
            outputs.push(o.clone());
        }
    }

    if let Some(draws) = cfg.are_draws {
        let p = *cfg.are_dim.get_or_insert(3);
        let res = location_scale_are(tau, p, draws, seed)?;
        let share = |k: usize| res.iter().filter(|d| d.irock[k] > 1.0).count() as f64 / res.len().max(1) as f64;
        let (fro, det) = (share(0), share(1));
        println!("location-scale experiment: {draws} draws, p={p}, tau={tau}");
        println!("share with ARE(i-Rock vs two-step) > 1: frobenius {fro:.3}, determinant {det:.3}");
        summary.insert("are_share_frobenius".into(), json!(fro));
        summary.insert("are_share_determinant".into(), json!(det));
        let mut t = Table::new(&["draw", "method", "frobenius", "determinant"]);
        for (k, d) in res.iter().enumerate() {
            for (m, r) in [("irock", Some(d.irock)), ("j1", d.j1), ("j2", d.j2)] {
                if let Some(r) = r {
                    t.push(vec![k.to_string(), m.into(), r[0].to_string(), r[1].to_string()]);
                }
            }
        }
        if let Some(o) = &cfg.output {
            let path = if cfg.spec.is_some() { sibling(o, "are") } else { o.clone() };
            t.write(&path, cfg.format.unwrap_or_default())?;
            outputs.push(path);
        }
    }
    if cfg.spec.is_none() && cfg.are_draws.is_none() {
        return Err(usage("avar needs a model name or --are-draws"));
    }
    manifest(&cfg, &outputs, ok, serde_json::Value::Object(summary))?;
    Ok(ok)
}

pub fn counterexample(mut cfg: RunConfig) -> Result<bool, CliError> {
    let seed = *cfg.seed.get_or_insert(DEFAULT_SEED);
    let reps = *cfg.reps.get_or_insert(200);
    let sample_n = *cfg.sample_n.get_or_insert(1000);
    let irock_n = *cfg.irock_n.get_or_insert(100_000);
    cfg.tau = Some(0.5);
    let population = superquantile_population_slope()?;
    // Replication r uses seed + r.
    let slopes = (0..reps as u64)
        .into_par_iter()
        .map(|r| superquantile_sample_fit(sample_n, seed.wrapping_add(r), 100))
        .collect::<irock::Result<Vec<f64>>>()?;
    let mean = slopes.iter().sum::<f64>() / slopes.len().max(1) as f64;
    let sd = (slopes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (slopes.len().max(2) - 1) as f64).sqrt();
    let data = DgpSpec::Counterexample.sample(irock_n, seed)?;
    let mut ic = IRockConfig::new(QuantileLevel::new(0.5)?);
    if let Some(d) = cfg.delta {
        ic.delta = Some(d);
    }
    ic.grid_j = cfg.grid_j;
    let fit = fit_irock(&data, &ic)?;

    let mut t = Table::new(&["quantity", "value"]);
    t.push(vec!["true ES slope".into(), num(0.5)]);
    t.push(vec!["superquantile population slope".into(), num(population)]);
    t.push(vec![format!("superquantile sample slope, mean of {reps} fits at n={sample_n}"), num(mean)]);
    t.push(vec!["superquantile sample slope, sd".into(), num(sd)]);
    t.push(vec![format!("i-Rock intercept at n={irock_n}"), num(fit.coefficients[0])]);
    t.push(vec![format!("i-Rock slope at n={irock_n}"), num(fit.coefficients[1])]);
    t.print();
    let mut outputs: Vec<PathBuf> = Vec::new();
    if let Some(o) = &cfg.output {
        t.write(o, cfg.format.unwrap_or_default())?;
        outputs.push(o.clone());
    }
    let summary = json!({
        "population_slope": population,
        "sample_slope_mean": mean,
        "sample_slope_sd": sd,
        "irock_coefficients": fit.coefficients,
    });
    manifest(&cfg, &outputs, true, summary)?;
    Ok(true)
}
