use std::collections::BTreeMap;
use std::f64::consts::{LN_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::*;
use crate::data::QuantileLevel;
use crate::error::Error;
use crate::estimator::{Estimator, EstimatorConfig};

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn empirical_es(mut v: Vec<f64>, tau: f64) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let k = (tau * v.len() as f64).ceil() as usize;
    let tail = &v[k..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

#[test]
fn zero_latent_gives_base_line() {
    for x in [[0.0, 0.0], [1.7, 1.0], [4.0, 0.0]] {
        let y = DgpSpec::Case51.response(&x, 0.0).unwrap();
        assert_eq!(y, 1.0 + 2.0 * x[0] + 3.0 * x[1]);
    }
}

#[test]
fn true_coefficients() {
    assert!(close(&DgpSpec::Case51.true_beta(0.9).unwrap(), &[1.95, 3.9, 5.85], 1e-12));
    let q = 10f64.ln();
    let b = DgpSpec::Case53.true_beta(0.9).unwrap();
    assert!(close(&b, &[1.0 + q + 1.0, 3.9, 3.0 + 30.0 * (q + 1.0)], 1e-12));
    assert!(close(&b, &[4.302585, 3.9, 102.07755], 1e-5));
    assert!(close(&DgpSpec::Counterexample.true_beta(0.5).unwrap(), &[1.0, 0.5], 1e-15));
    assert!(close(&DgpSpec::Case52.true_beta(0.9).unwrap(), &[-1.0, 2.0, -3.0], 1e-15));
    assert!(matches!(DgpSpec::Case52.true_beta(0.8), Err(Error::Unsupported(_))));
    assert!(DgpSpec::Case51.true_beta(1.0).is_err());
}

#[test]
fn names_round_trip() {
    let all = [
        DgpSpec::Case51,
        DgpSpec::Case52,
        DgpSpec::Case53,
        DgpSpec::Counterexample,
        DgpSpec::GaussianX,
        DgpSpec::CorrelatedX,
    ];
    for s in all {
        assert_eq!(DgpSpec::from_name(s.name()).unwrap(), s);
    }
    assert!(DgpSpec::from_name("case99").is_err());
}

#[test]
fn seeded_sampling_is_reproducible() {
    for spec in [DgpSpec::Case51, DgpSpec::Case52, DgpSpec::Case53, DgpSpec::Counterexample] {
        let a = spec.sample(500, 11).unwrap();
        let b = spec.sample(500, 11).unwrap();
        let c = spec.sample(500, 12).unwrap();
        assert!(a.y.iter().zip(&b.y).all(|(u, v)| u.to_bits() == v.to_bits()));
        assert_eq!(a.x, b.x);
        assert_ne!(a.y, c.y);
    }
    assert!(DgpSpec::Case51.sample(0, 1).is_err());
}

#[test]
fn counterexample_residual_is_laplace() {
    // X̃ε with X̃ ~ Gamma(2,1), ε ~ U(−1,1) has density e^{−|w|}/2.
    let n = 100_000;
    let d = DgpSpec::Counterexample.sample(n, 5).unwrap();
    let w: Vec<f64> = d.y.iter().map(|y| y - 1.0).collect();
    let cdf = |w: f64| if w < 0.0 { 0.5 * w.exp() } else { 1.0 - 0.5 * (-w).exp() };
    let ks = ks_statistic(&w, cdf).unwrap();
    assert!(ks < ks_critical_5pct(n), "{ks}");
    // A unit normal is rejected at the same size.
    let normal = statrs::distribution::Normal::new(0.0, 2f64.sqrt()).unwrap();
    let alt = ks_statistic(&w, |v| statrs::distribution::ContinuousCDF::cdf(&normal, v)).unwrap();
    assert!(alt > ks_critical_5pct(n));
}

#[test]
fn symmetric_t_has_zero_skewness() {
    let st = SkewedT::new(5.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draws: Vec<f64> = (0..1_000_000).map(|_| st.sample(&mut rng)).collect();
    let m = draws.iter().sum::<f64>() / draws.len() as f64;
    let m2 = draws.iter().map(|v| (v - m).powi(2)).sum::<f64>() / draws.len() as f64;
    let m3 = draws.iter().map(|v| (v - m).powi(3)).sum::<f64>() / draws.len() as f64;
    let skew = m3 / m2.powf(1.5);
    assert!(skew.abs() < 0.05, "{skew}");
    assert!(m.abs() < 5e-3 && (m2 - 1.0).abs() < 0.02);
}

#[test]
fn skewed_t_tail_functionals() {
    let st = SkewedT::new(5.0, 2.0).unwrap();
    assert!(st.es(0.95) > st.es(0.9));
    for tau in [0.1, 0.5, 0.9, 0.95] {
        let q = st.quantile(tau);
        let numeric = integrate_to_infinity(|x| x * st.pdf(x), q, 1e-12) / (1.0 - tau);
        assert!((numeric - st.es(tau)).abs() < 1e-8, "{tau}: {numeric} vs {}", st.es(tau));
        let mass = integrate_to_infinity(|x| st.pdf(x), q, 1e-12);
        assert!((mass - (1.0 - tau)).abs() < 1e-9);
    }
    let mean = integrate_to_infinity(|x| x * st.pdf(x), -200.0, 1e-12);
    let second = integrate_to_infinity(|x| x * x * st.pdf(x), -200.0, 1e-12);
    assert!(mean.abs() < 1e-6 && (second - 1.0).abs() < 1e-4, "{mean} {second}");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let draws: Vec<f64> = (0..1_000_000).map(|_| st.sample(&mut rng)).collect();
    let mc = empirical_es(draws, 0.9);
    assert!((mc - st.es(0.9)).abs() / st.es(0.9) < 0.01, "{mc} vs {}", st.es(0.9));
}

#[test]
fn dilogarithm_values() {
    assert!((dilog(0.5) - (PI * PI / 12.0 - 0.5 * LN_2 * LN_2)).abs() < 1e-13);
    assert!((dilog(-1.0) + PI * PI / 12.0).abs() < 1e-13);
    assert!((dilog(1.0) - PI * PI / 6.0).abs() < 1e-15);
    assert_eq!(dilog(0.0), 0.0);
    for x in [-3.0, -0.8, -0.3, 0.2, 0.7, 0.95] {
        let integral = -adaptive_simpson(&|z: f64| if z == 0.0 { -1.0 } else { (1.0 - z).ln() / z }, 0.0, x, 1e-14);
        assert!((dilog(x) - integral).abs() < 1e-12, "{x}");
    }
}

#[test]
fn superquantile_slope() {
    assert_eq!(population_derivative(0.0), -1.0);
    let s = superquantile_population_slope().unwrap();
    assert!((s - 0.7041).abs() < 5e-4, "{s}");
    assert!(population_derivative(s).abs() < 1e-10);
    let sample = superquantile_sample_fit(20_000, 3, 100).unwrap();
    assert!((sample - s).abs() < 0.05, "{sample}");
    assert!(superquantile_sample_fit(50, 3, 100).is_err());
}

#[test]
fn conditional_es_on_huge_samples() {
    let tau = 0.9;
    // Discrete design: group a large sample by covariate cell.
    let d = DgpSpec::Case53.sample(1_000_000, 9).unwrap();
    let beta = DgpSpec::Case53.true_beta(tau).unwrap();
    let mut cells: BTreeMap<(u8, u8), Vec<f64>> = BTreeMap::new();
    for i in 0..d.n() {
        cells.entry((d.x[(i, 1)] as u8, d.x[(i, 2)] as u8)).or_default().push(d.y[i]);
    }
    assert_eq!(cells.len(), 9);
    for ((a, b), ys) in cells {
        let truth = beta[0] + beta[1] * a as f64 + beta[2] * b as f64;
        let es = empirical_es(ys, tau);
        assert!((es - truth).abs() / truth.abs() < 0.01, "({a},{b}): {es} vs {truth}");
    }
    // Fixed covariate points for the remaining models.
    let ls = DgpSpec::location_scale(vec![0.0, 1.0, 2.0], vec![3.0, 1.0, 2.0], tau).unwrap();
    let cases: Vec<(DgpSpec, f64, Vec<f64>)> = vec![
        (DgpSpec::Case51, tau, vec![2.5, 1.0]),
        (DgpSpec::Counterexample, 0.5, vec![1.5]),
        (ls, tau, vec![0.4, 0.7]),
        (DgpSpec::GaussianX, tau, vec![0.8]),
    ];
    for (k, (spec, t, x)) in cases.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + k as u64);
        let ys: Vec<f64> = (0..1_000_000).map(|_| spec.response(&x, rng.random()).unwrap()).collect();
        let b = spec.true_beta(t).unwrap();
        let truth = b[0] + b[1..].iter().zip(&x).map(|(u, v)| u * v).sum::<f64>();
        let es = empirical_es(ys, t);
        assert!((es - truth).abs() / truth.abs() < 0.01, "{}: {es} vs {truth}", spec.name());
    }
    // Skewed-t model through its own sampler.
    let st = SkewedT::new(5.0, 2.0).unwrap();
    let nu0 = st.es(CASE52_LEVEL);
    let x = [1.5, -0.5];
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let scale = 24.0 * x[0] * x[0] + 12.0 * x[1] * x[1] + 5.0;
    let ys: Vec<f64> =
        (0..1_000_000).map(|_| -1.0 + 2.0 * x[0] - 3.0 * x[1] + scale * (st.sample(&mut rng) - nu0)).collect();
    let truth = -1.0 + 2.0 * x[0] - 3.0 * x[1];
    let es = empirical_es(ys, CASE52_LEVEL);
    assert!((es - truth).abs() / truth.abs() < 0.01 * scale, "{es} vs {truth}");
}

#[test]
fn functionals_match_truth() {
    for spec in [DgpSpec::Case51, DgpSpec::Case52, DgpSpec::Case53, DgpSpec::GaussianX] {
        let b = spec.true_beta(0.9).unwrap();
        let x = vec![0.5; spec.n_covariates()];
        let f = spec.functionals(&x, 0.9).unwrap();
        let v = b[0] + b[1..].iter().zip(&x).map(|(u, w)| u * w).sum::<f64>();
        assert!((f.v - v).abs() < 1e-9 * v.abs().max(1.0), "{}", spec.name());
        assert!((f.m2 - (f.v - f.q)).abs() < 1e-9 && f.m1 > 0.0 && f.f > 0.0);
    }
}

#[test]
fn oracle_and_self_ratios() {
    let spec = DgpSpec::Case51;
    let tau = 0.9;
    let beta = spec.true_beta(tau).unwrap();
    let config = EstimatorConfig::new(QuantileLevel::new(tau).unwrap());
    let candidates = vec![
        Candidate::custom("oracle", move |_| Ok(beta.clone())),
        Candidate::new(Estimator::TwoStep, config.clone()),
        Candidate::custom("broken", |_| Err(Error::EmptySample)),
    ];
    let r = run_monte_carlo(&spec, &candidates, 8, 400, tau, 4).unwrap();
    let o = r.summary("oracle").unwrap();
    assert!(o.relative_bias.iter().all(|v| *v == 0.0) && o.rmse.iter().all(|v| *v == 0.0));
    assert!(r.rmse_ratio("ts", "oracle").unwrap().iter().all(|v| v.is_infinite()));
    assert!(r.rmse_ratio("oracle", "oracle").unwrap().iter().all(|v| *v == 1.0));
    assert!(r.rmse_ratio("ts", "ts").unwrap().iter().all(|v| *v == 1.0));
    let ts = r.summary("ts").unwrap();
    for k in 0..3 {
        assert!(ts.rmse[k] >= (ts.mean[k] - r.true_beta[k]).abs());
    }
    let broken = r.summary("broken").unwrap();
    assert_eq!((broken.successes, broken.failures), (0, 8));
    assert!(broken.first_error.is_some());
    assert!(run_monte_carlo(&spec, &candidates, 1, 400, tau, 4).is_err());
    assert_eq!(guarded_ratio(0.0, 0.0), 1.0);
}

#[test]
fn monte_carlo_is_schedule_independent() {
    let spec = DgpSpec::Case53;
    let config = EstimatorConfig::new(QuantileLevel::new(0.8).unwrap());
    let candidates = vec![Candidate::new(Estimator::IRock, config.clone()), Candidate::new(Estimator::Tsls, config)];
    let a = run_monte_carlo(&spec, &candidates, 6, 600, 0.8, 21).unwrap();
    let b = run_monte_carlo(&spec, &candidates, 6, 600, 0.8, 21).unwrap();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let c = one.install(|| run_monte_carlo(&spec, &candidates, 6, 600, 0.8, 21).unwrap());
    let s = |r: &McReport| serde_json::to_string(r).unwrap();
    assert_eq!(s(&a), s(&b));
    assert_eq!(s(&a), s(&c));
    let mut buf = Vec::new();
    a.write_summary_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 2 * 3);
}

#[test]
fn ks_calibration() {
    let beta = [1.0, -2.0];
    let avar = nalgebra::DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 0.25]);
    let n = 400;
    let accepted: usize = (0..200u64)
        .into_par_iter()
        .map(|m| {
            let mut rng = replication_rng(31, m);
            let draws: Vec<Vec<f64>> = (0..200)
                .map(|_| {
                    let z0: f64 = StandardNormal.sample(&mut rng);
                    let z1: f64 = StandardNormal.sample(&mut rng);
                    vec![beta[0] + 2.0 * z0 / (n as f64).sqrt(), beta[1] + 0.5 * z1 / (n as f64).sqrt()]
                })
                .collect();
            let ks = standardized_normality_check(&draws, &beta, &avar, n).unwrap();
            usize::from(ks[0] < ks_critical_5pct(200))
        })
        .sum();
    assert!(accepted >= 180, "{accepted}");

    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let shifted: Vec<Vec<f64>> = (0..200)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            vec![beta[0] + 2.0 * (z + 3.0) / (n as f64).sqrt(), beta[1]]
        })
        .collect();
    let mut a2 = avar.clone();
    a2[(1, 1)] = 1.0;
    assert!(standardized_normality_check(&shifted, &beta, &a2, n).unwrap()[0] > ks_critical_5pct(200));
    assert!(standardized_normality_check(&shifted[..10], &beta, &a2, n).is_err());
    let mut zero = avar.clone();
    zero[(0, 0)] = 0.0;
    assert!(matches!(standardized_normality_check(&shifted, &beta, &zero, n), Err(Error::ZeroNorm)));
}

#[test]
fn location_scale_validation() {
    assert!(DgpSpec::location_scale(vec![0.0, 1.0], vec![0.5, -1.0], 0.9).is_err());
    assert!(DgpSpec::location_scale(vec![0.0, 1.0], vec![0.5], 0.9).is_err());
    let ok = DgpSpec::location_scale(vec![0.0, 1.0], vec![0.5, 1.0], 0.9).unwrap();
    let d = ok.sample(100, 1).unwrap();
    assert!((0..100).all(|i| ok.in_support(&[d.x[(i, 1)]])));
}

#[test]
fn scaled_normal_is_normalized() {
    let ls = DgpSpec::location_scale(vec![0.0, 0.0], vec![1.0, 0.0], 0.9).unwrap();
    let f = ls.functionals(&[0.3], 0.9).unwrap();
    assert!(f.v.abs() < 1e-12 && (f.m1 - 1.0).abs() < 1e-12);
}
