//! Closed-form asymptotic covariance matrices and relative efficiencies.
//!
//! Every method except two-step least squares is a weighted least-squares
//! sandwich `(1−τ)⁻¹ E[wXXᵀ]⁻¹ E[w²XXᵀ(m₁ + τm₂²)] E[wXXᵀ]⁻¹` for its own
//! weight `w`.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::min_eigenvalue;
use crate::simulate::{DgpSpec, PointFunctionals};

/// Points per parallel chunk when averaging; fixed so sums do not depend on
/// the thread count.
const CHUNK: usize = 4096;
pub const DEFAULT_SAMPLE_SIZE: usize = 1_000_000;

/// Conditional tail functionals at a set of covariate points with masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFunctionals {
    /// Covariate rows, intercept included.
    pub points: DMatrix<f64>,
    pub masses: Vec<f64>,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
    /// Conditional density at the quantile; only two-step least squares
    /// needs it.
    pub f: Option<Vec<f64>>,
}

impl ModelFunctionals {
    pub fn new(points: DMatrix<f64>, masses: Vec<f64>, values: &[PointFunctionals]) -> Result<Self> {
        let fm = Self {
            points,
            masses,
            q: values.iter().map(|p| p.q).collect(),
            v: values.iter().map(|p| p.v).collect(),
            m1: values.iter().map(|p| p.m1).collect(),
            m2: values.iter().map(|p| p.m2).collect(),
            f: Some(values.iter().map(|p| p.f).collect()),
        };
        fm.validate()?;
        Ok(fm)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.points.nrows();
        let lens = [self.masses.len(), self.q.len(), self.v.len(), self.m1.len(), self.m2.len()];
        if lens.iter().any(|&l| l != k) || self.f.as_ref().is_some_and(|f| f.len() != k) {
            return Err(Error::DimensionMismatch(format!("{k} points but functional lengths {lens:?}")));
        }
        let all = self.masses.iter().chain(&self.q).chain(&self.v).chain(&self.m1).chain(&self.m2);
        if all.clone().any(|v| !v.is_finite()) || self.points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model functionals"));
        }
        if self.m1.iter().any(|&m| m < 0.0) || self.m2.iter().any(|&m| m <= 0.0) {
            return Err(Error::InvalidConfig("functionals need m1 ≥ 0 and m2 > 0 at every point".into()));
        }
        let total: f64 = self.masses.iter().sum();
        if self.masses.iter().any(|&m| m < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("masses must be nonnegative and sum to 1, got {total}")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// `Σᵢ massᵢ g(i) xᵢxᵢᵀ`, summed chunk by chunk in a fixed order.
    pub fn expect(&self, g: impl Fn(usize) -> f64 + Sync) -> DMatrix<f64> {
        let d = self.dim();
        let k = self.points.nrows();
        let partial: Vec<DMatrix<f64>> = (0..k.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut acc = DMatrix::zeros(d, d);
                for i in c * CHUNK..((c + 1) * CHUNK).min(k) {
                    let w = self.masses[i] * g(i);
                    if w == 0.0 {
                        continue;
                    }
                    for a in 0..d {
                        let xa = self.points[(i, a)] * w;
                        for b in 0..=a {
                            acc[(a, b)] += xa * self.points[(i, b)];
                        }
                    }
                }
                acc
            })
            .collect();
        let mut out = DMatrix::zeros(d, d);
        for p in partial {
            out += p;
        }
        for a in 0..d {
            for b in 0..a {
                out[(b, a)] = out[(a, b)];
            }
        }
        out
    }

    /// `m₁ + τm₂²`, the conditional variance scale shared by all methods.
    fn spread(&self, i: usize, tau: f64) -> f64 {
        self.m1[i] + tau * self.m2[i] * self.m2[i]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AvarMethod {
    IRock,
    /// i-Rock with the optimal extra weights `(v − q)/σ²`.
    IRockWeighted,
    /// Unweighted two-step.
    Tsn,
    Tsls,
    Ln,
    J1,
    J2,
    /// Weighted least squares with per-point weights.
    Wls(Vec<f64>),
    MJointOptimal,
}

impl AvarMethod {
    pub fn name(&self) -> &'static str {
        match self {
            AvarMethod::IRock => "irock",
            AvarMethod::IRockWeighted => "irock-weighted",
            AvarMethod::Tsn => "tsn",
            AvarMethod::Tsls => "tsls",
            AvarMethod::Ln => "ln",
            AvarMethod::J1 => "j1",
            AvarMethod::J2 => "j2",
            AvarMethod::Wls(_) => "wls",
            AvarMethod::MJointOptimal => "m-joint-optimal",
        }
    }

    /// Methods that need no extra input.
    pub fn standard() -> Vec<AvarMethod> {
        use AvarMethod::*;
        vec![IRock, IRockWeighted, Tsn, Tsls, Ln, J1, J2, MJointOptimal]
    }
}

impl std::str::FromStr for AvarMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let s = if s == "ts" { "tsn".to_string() } else { s };
        AvarMethod::standard()
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variance method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvarReport {
    pub method: String,
    pub bread: DMatrix<f64>,
    pub meat: DMatrix<f64>,
    pub sandwich: DMatrix<f64>,
}

impl AvarReport {
    pub fn is_symmetric(&self, tol: f64) -> bool {
        let s = &self.sandwich;
        (0..s.nrows()).all(|a| (0..a).all(|b| (s[(a, b)] - s[(b, a)]).abs() <= tol * (1.0 + s[(a, b)].abs())))
    }

    pub fn is_psd(&self) -> bool {
        min_eigenvalue(&self.sandwich) >= -1e-10 * self.sandwich.trace().abs().max(1.0)
    }
}

fn inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sv = a.clone().svd(false, false).singular_values;
    if !(sv.min() > 1e-13 * sv.max()) {
        return Err(Error::DegenerateDesign);
    }
    a.clone().try_inverse().ok_or(Error::DegenerateDesign)
}

fn sandwich(method: &str, bread: DMatrix<f64>, meat: DMatrix<f64>) -> Result<AvarReport> {
    let bi = inverse(&bread)?;
    let s = &bi * &meat * &bi;
    let sandwich = (&s + s.transpose()) * 0.5;
    Ok(AvarReport { method: method.to_string(), bread, meat, sandwich })
}

fn wls(name: &str, fm: &ModelFunctionals, tau: f64, w: &[f64]) -> Result<AvarReport> {
    if w.len() != fm.points.nrows() {
        return Err(Error::DimensionMismatch(format!("{} weights for {} points", w.len(), fm.points.nrows())));
    }
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidConfig("weights must be finite and nonnegative".into()));
    }
    let bread = fm.expect(|i| w[i]);
    let meat = fm.expect(|i| w[i] * w[i] * fm.spread(i, tau) / (1.0 - tau));
    sandwich(name, bread, meat)
}

pub fn avar(method: &AvarMethod, fm: &ModelFunctionals, tau: f64) -> Result<AvarReport> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidLevel(tau));
    }
    fm.validate()?;
    let k = fm.points.nrows();
    let name = method.name();
    match method {
        AvarMethod::Tsn | AvarMethod::Ln => wls(name, fm, tau, &vec![1.0; k]),
        AvarMethod::IRock => wls(name, fm, tau, &fm.m2.iter().map(|m| 1.0 / m).collect::<Vec<_>>()),
        AvarMethod::IRockWeighted => {
            let w: Vec<f64> = (0..k).map(|i| (1.0 / fm.m2[i]) * fm.m2[i] * (1.0 - tau) / fm.spread(i, tau)).collect();
            wls(name, fm, tau, &w)
        }
        AvarMethod::J1 => {
            if fm.v.contains(&0.0) {
                return Err(Error::InvalidConfig("J1 weights need a nonzero ES at every point".into()));
            }
            wls(name, fm, tau, &fm.v.iter().map(|v| v.powi(-2)).collect::<Vec<_>>())
        }
        AvarMethod::J2 => {
            if fm.v.iter().any(|&v| v <= 0.0) {
                return Err(Error::InvalidConfig("J2 weights need a positive ES at every point".into()));
            }
            wls(name, fm, tau, &fm.v.iter().map(|v| v.powf(-1.5)).collect::<Vec<_>>())
        }
        AvarMethod::Wls(w) => wls(name, fm, tau, w),
        AvarMethod::MJointOptimal => {
            let bread = fm.expect(|i| (1.0 - tau) / fm.spread(i, tau));
            sandwich(name, bread.clone(), bread)
        }
        AvarMethod::Tsls => {
            let f = fm.f.as_ref().ok_or_else(|| {
                Error::InvalidConfig("two-step least squares needs the conditional density at the quantile".into())
            })?;
            if f.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::InvalidConfig("densities must be positive and finite".into()));
            }
            // Estimating equation E[x1{Y ≥ xᵀη}(Y − xᵀβ)] = 0 with a plug-in
            // quantile fit: the η-derivative is E[f m₂ XXᵀ].
            let exx = fm.expect(|_| 1.0);
            let b = inverse(&fm.expect(|i| f[i]))?;
            let c = fm.expect(|i| f[i] * fm.m2[i]);
            let cb = &c * &b;
            let meat = fm.expect(|i| fm.m1[i]) * (1.0 - tau) + &cb * &exx * cb.transpose() * (tau * (1.0 - tau));
            sandwich(name, exx * (1.0 - tau), meat)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AreNorm {
    Frobenius,
    Determinant,
}

/// Efficiency of `a` relative to `b`: `‖b‖/‖a‖`.
pub fn are(a: &AvarReport, b: &AvarReport, norm: AreNorm) -> Result<f64> {
    if a.sandwich.shape() != b.sandwich.shape() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", a.sandwich.shape(), b.sandwich.shape())));
    }
    let n = |m: &DMatrix<f64>| match norm {
        AreNorm::Frobenius => m.norm(),
        AreNorm::Determinant => m.determinant(),
    };
    let na = n(&a.sandwich);
    if na == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(n(&b.sandwich) / na)
}

/// `a ⪯ b` in the PSD order, up to a trace-scaled tolerance.
pub fn psd_leq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let scale = a.trace().abs().max(b.trace().abs()).max(1e-300);
    min_eigenvalue(&(b - a)) >= -1e-8 * scale
}

/// Where expectations over the covariates come from.
#[derive(Debug, Clone, PartialEq)]
pub enum CovariateSource {
    /// The spec's finite support, exactly.
    Support,
    /// Sample average over drawn covariates.
    Sample { size: usize, seed: u64 },
    /// Explicit covariate rows (intercept excluded) with masses.
    Points(Vec<Vec<f64>>, Vec<f64>),
}

pub fn functionals_from_dgp(spec: &DgpSpec, tau: f64, source: &CovariateSource) -> Result<ModelFunctionals> {
    let (rows, masses) = match source {
        CovariateSource::Support => spec
            .support()
            .ok_or_else(|| Error::Unsupported(format!("{} has no finite covariate support", spec.name())))?,
        CovariateSource::Points(p, m) => (p.clone(), m.clone()),
        CovariateSource::Sample { size, seed } => {
            if *size == 0 {
                return Err(Error::InvalidConfig("sample size must be positive".into()));
            }
            let data = spec.sample(*size, *seed)?;
            let rows = (0..*size).map(|i| (0..data.n_covariates()).map(|j| data.covariate(i, j)).collect()).collect();
            (rows, vec![1.0 / *size as f64; *size])
        }
    };
    let p = spec.n_covariates();
    if rows.iter().any(|r: &Vec<f64>| r.len() != p) || rows.len() != masses.len() {
        return Err(Error::DimensionMismatch(format!("expected {p} covariates per point")));
    }
    let values = rows.par_iter().map(|r| spec.functionals(r, tau)).collect::<Result<Vec<_>>>()?;
    let points = DMatrix::from_fn(rows.len(), p + 1, |i, c| if c == 0 { 1.0 } else { rows[i][c - 1] });
    ModelFunctionals::new(points, masses, &values)
}

/// One parameter draw of the location-scale efficiency experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreDraw {
    pub gamma1: Vec<f64>,
    pub gamma2: Vec<f64>,
    /// ARE of i-Rock relative to the two-step, Frobenius then determinant.
    pub irock: [f64; 2],
    /// Same for J1 and J2, when their weights are defined.
    pub j1: Option<[f64; 2]>,
    pub j2: Option<[f64; 2]>,
}

/// Location-scale model on `{0, 0.1, …, 1}^p` with intercepts `γ₁₀ = γ₂₀ = 3`
/// and slopes drawn uniformly on `[−1, 3]^p`; ARE against the two-step.
pub fn location_scale_are(tau: f64, p: usize, draws: usize, seed: u64) -> Result<Vec<AreDraw>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: Vec<(Vec<f64>, Vec<f64>)> = (0..draws)
        .map(|_| {
            let mut g1 = vec![3.0];
            let mut g2 = vec![3.0];
            g1.extend((0..p).map(|_| rng.random_range(-1.0..3.0)));
            g2.extend((0..p).map(|_| rng.random_range(-1.0..3.0)));
            (g1, g2)
        })
        .collect();
    params
        .into_iter()
        .map(|(g1, g2)| {
            let spec = DgpSpec::location_scale(g1.clone(), g2.clone(), tau)?;
            let fm = functionals_from_dgp(&spec, tau, &CovariateSource::Support)?;
            let ts = avar(&AvarMethod::Tsn, &fm, tau)?;
            let pair = |m: &AvarMethod| -> Result<[f64; 2]> {
                let r = avar(m, &fm, tau)?;
                Ok([are(&r, &ts, AreNorm::Frobenius)?, are(&r, &ts, AreNorm::Determinant)?])
            };
            Ok(AreDraw {
                irock: pair(&AvarMethod::IRock)?,
                j1: pair(&AvarMethod::J1).ok(),
                j2: pair(&AvarMethod::J2).ok(),
                gamma1: g1,
                gamma2: g2,
            })
        })
        .collect()
}

pub fn write_are_csv<W: Write>(draws: &[AreDraw], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["draw", "method", "frobenius", "determinant", "gamma1", "gamma2"])?;
    let fmt = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    for (k, d) in draws.iter().enumerate() {
        for (m, r) in [("irock", Some(d.irock)), ("j1", d.j1), ("j2", d.j2)] {
            if let Some(r) = r {
                w.write_record(&[
                    k.to_string(),
                    m.into(),
                    r[0].to_string(),
                    r[1].to_string(),
                    fmt(&d.gamma1),
                    fmt(&d.gamma2),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes a sandwich as `row,col,value` triples.
pub fn write_matrix_csv<W: Write>(report: &AvarReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "row", "col", "value"])?;
    let s = &report.sandwich;
    for a in 0..s.nrows() {
        for b in 0..s.ncols() {
            w.write_record(&[report.method.clone(), a.to_string(), b.to_string(), s[(a, b)].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
