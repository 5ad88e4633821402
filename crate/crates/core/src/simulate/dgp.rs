//! Data-generating processes with analytic conditional ES.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::skewt::SkewedT;
use crate::data::{ColumnKind, Dataset, QuantileLevel};
use crate::error::{Error, Result};

/// Level at which the skewed-t model has a linear conditional ES.
pub const CASE52_LEVEL: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DgpSpec {
    /// `Y = (1+U)(1 + 2X₁ + 3X₂)`, `X₁ ~ U(0,4)`, `X₂ ~ Bernoulli(½)`.
    Case51,
    /// `Y = −1 + 2X₁ − 3X₂ + (24X₁² + 12X₂² + 5)(ε − ν₀)`, `X ~ U[−1,2]²`,
    /// `ε` standardized two-piece skewed t₅ with skew 2.
    Case52,
    /// `Y = 1 − log(1−U) + (2+2U)X₁ + (3 − 30 log(1−U))X₂`, `Xⱼ ~ Bin(2, ½)`.
    Case53,
    /// `Y = xᵀγ₁ + (xᵀγ₂)ε` with covariates uniform on `{0, 0.1, …, 1}` and
    /// `ε` a scaled normal with zero ES and unit tail variance at `level`.
    LocationScale { gamma1: Vec<f64>, gamma2: Vec<f64>, level: f64 },
    /// `Y = 1 + X̃ε`, `X̃ ~ Gamma(2,1)`, `ε ~ U(−1,1)`.
    Counterexample,
    /// The `Case53` response with one covariate `|Z|`, `Z ~ N(0,1)`.
    GaussianX,
    /// The `Case51` response with `X₁ | X₂ ~ U(0, 3 + X₂)`.
    CorrelatedX,
}

/// Conditional tail functionals at one covariate point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointFunctionals {
    pub q: f64,
    pub v: f64,
    /// `var(Y | Y ≥ q, x)`.
    pub m1: f64,
    /// `v − q`.
    pub m2: f64,
    /// Conditional density at `q`.
    pub f: f64,
}

/// Standard normal scaled to zero ES and unit tail variance at `level`:
/// `ε = a(Z − λ)` with `λ = φ(z)/(1−level)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ScaledNormal {
    a: f64,
    lambda: f64,
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid normal")
}

impl ScaledNormal {
    pub(crate) fn new(level: f64) -> Self {
        let n = std_normal();
        let z = n.inverse_cdf(level);
        let lambda = n.pdf(z) / (1.0 - level);
        let tail_var = 1.0 + z * lambda - lambda * lambda;
        Self { a: 1.0 / tail_var.sqrt(), lambda }
    }

    fn tail(&self, s: f64) -> PointFunctionals {
        let n = std_normal();
        let z = n.inverse_cdf(s);
        let lam = n.pdf(z) / (1.0 - s);
        let q = self.a * (z - self.lambda);
        let v = self.a * (lam - self.lambda);
        let m1 = self.a * self.a * (1.0 + z * lam - lam * lam);
        PointFunctionals { q, v, m1, m2: v - q, f: n.pdf(z) / self.a }
    }
}

fn is_unit(x: &[f64]) -> bool {
    x.iter().all(|v| (0.0..=1.0).contains(v))
}

impl DgpSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DgpSpec::Case51 => "case51",
            DgpSpec::Case52 => "case52",
            DgpSpec::Case53 => "case53",
            DgpSpec::LocationScale { .. } => "location-scale",
            DgpSpec::Counterexample => "counterexample",
            DgpSpec::GaussianX => "gaussian-x",
            DgpSpec::CorrelatedX => "correlated-x",
        }
    }

    /// Parses the named specs that take no parameters.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name.trim().to_ascii_lowercase().as_str() {
            "case51" => DgpSpec::Case51,
            "case52" => DgpSpec::Case52,
            "case53" => DgpSpec::Case53,
            "counterexample" => DgpSpec::Counterexample,
            "gaussian-x" => DgpSpec::GaussianX,
            "correlated-x" => DgpSpec::CorrelatedX,
            other => return Err(Error::InvalidConfig(format!("unknown data-generating process '{other}'"))),
        })
    }

    /// Location-scale model; the scale must stay positive on `[0,1]^p`.
    pub fn location_scale(gamma1: Vec<f64>, gamma2: Vec<f64>, level: f64) -> Result<Self> {
        if gamma1.len() != gamma2.len() || gamma1.is_empty() {
            return Err(Error::DimensionMismatch(format!("gamma lengths {} and {}", gamma1.len(), gamma2.len())));
        }
        QuantileLevel::new(level)?;
        let min_scale = gamma2[0] + gamma2[1..].iter().map(|g| g.min(0.0)).sum::<f64>();
        if !(min_scale > 0.0) {
            return Err(Error::InvalidConfig(format!("scale xᵀγ₂ reaches {min_scale} on the covariate support")));
        }
        Ok(DgpSpec::LocationScale { gamma1, gamma2, level })
    }

    /// Number of covariates, intercept excluded.
    pub fn n_covariates(&self) -> usize {
        match self {
            DgpSpec::LocationScale { gamma1, .. } => gamma1.len() - 1,
            DgpSpec::Counterexample | DgpSpec::GaussianX => 1,
            _ => 2,
        }
    }

    pub fn kinds(&self) -> Vec<ColumnKind> {
        use ColumnKind::*;
        match self {
            DgpSpec::Case51 | DgpSpec::CorrelatedX => vec![Continuous, Discrete],
            DgpSpec::Case52 => vec![Continuous, Continuous],
            DgpSpec::Case53 => vec![Discrete, Discrete],
            DgpSpec::LocationScale { gamma1, .. } => vec![Discrete; gamma1.len() - 1],
            DgpSpec::Counterexample | DgpSpec::GaussianX => vec![Continuous],
        }
    }

    fn skewed_t() -> SkewedT {
        SkewedT::new(5.0, 2.0).expect("valid skewed t")
    }

    fn draw_covariates<R: Rng>(&self, rng: &mut R, out: &mut Vec<f64>) {
        out.clear();
        match self {
            DgpSpec::Case51 => {
                out.push(4.0 * rng.random::<f64>());
                out.push(if rng.random::<bool>() { 1.0 } else { 0.0 });
            }
            DgpSpec::CorrelatedX => {
                let x2 = if rng.random::<bool>() { 1.0 } else { 0.0 };
                out.push((3.0 + x2) * rng.random::<f64>());
                out.push(x2);
            }
            DgpSpec::Case52 => {
                out.push(-1.0 + 3.0 * rng.random::<f64>());
                out.push(-1.0 + 3.0 * rng.random::<f64>());
            }
            DgpSpec::Case53 => {
                for _ in 0..2 {
                    let b = rng.random::<bool>() as u8 + rng.random::<bool>() as u8;
                    out.push(b as f64);
                }
            }
            DgpSpec::LocationScale { gamma1, .. } => {
                for _ in 1..gamma1.len() {
                    out.push(rng.random_range(0..=10u32) as f64 / 10.0);
                }
            }
            DgpSpec::Counterexample => {
                out.push(Gamma::new(2.0, 1.0).expect("valid gamma").sample(rng));
            }
            DgpSpec::GaussianX => {
                let z: f64 = StandardNormal.sample(rng);
                out.push(z.abs());
            }
        }
    }

    /// Response at covariates `x` (intercept excluded) for latent uniform
    /// `u`. Every spec except `Case52` is comonotone in `u`.
    pub fn response(&self, x: &[f64], u: f64) -> Result<f64> {
        let e = -(1.0 - u).ln();
        Ok(match self {
            DgpSpec::Case51 | DgpSpec::CorrelatedX => (1.0 + u) * (1.0 + 2.0 * x[0] + 3.0 * x[1]),
            DgpSpec::Case53 => 1.0 + e + (2.0 + 2.0 * u) * x[0] + (3.0 + 30.0 * e) * x[1],
            DgpSpec::GaussianX => 1.0 + e + (3.0 + 30.0 * e) * x[0],
            DgpSpec::Counterexample => 1.0 + x[0] * (2.0 * u - 1.0),
            DgpSpec::LocationScale { gamma1, gamma2, level } => {
                let sn = ScaledNormal::new(*level);
                let eps = sn.a * (std_normal().inverse_cdf(u) - sn.lambda);
                dot1(gamma1, x) + dot1(gamma2, x) * eps
            }
            DgpSpec::Case52 => {
                let st = Self::skewed_t();
                case52_response(x, st.quantile(u), st.es(CASE52_LEVEL))
            }
        })
    }

    /// `n` i.i.d. rows; identical seeds give identical datasets.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        self.sample_with(n, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn sample_with<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::InsufficientData("sample size must be at least 1".into()));
        }
        let p = self.n_covariates();
        let mut x = DMatrix::zeros(n, p + 1);
        let mut y = Vec::with_capacity(n);
        let mut row = Vec::with_capacity(p);
        let st = matches!(self, DgpSpec::Case52).then(Self::skewed_t);
        let nu0 = st.as_ref().map(|s| s.es(CASE52_LEVEL));
        let ls = match self {
            DgpSpec::LocationScale { level, .. } => Some(ScaledNormal::new(*level)),
            _ => None,
        };
        for i in 0..n {
            self.draw_covariates(rng, &mut row);
            x[(i, 0)] = 1.0;
            for (j, v) in row.iter().enumerate() {
                x[(i, j + 1)] = *v;
            }
            let yi = match (self, &st, &ls) {
                (DgpSpec::Case52, Some(st), _) => case52_response(&row, st.sample(rng), nu0.unwrap()),
                (DgpSpec::LocationScale { gamma1, gamma2, .. }, _, Some(sn)) => {
                    let z: f64 = StandardNormal.sample(rng);
                    dot1(gamma1, &row) + dot1(gamma2, &row) * sn.a * (z - sn.lambda)
                }
                _ => {
                    let u: f64 = rng.random();
                    self.response(&row, u)?
                }
            };
            y.push(yi);
        }
        Dataset::from_design(x, y, self.kinds())
    }

    /// True ES regression coefficients at `tau`, intercept first.
    pub fn true_beta(&self, tau: f64) -> Result<Vec<f64>> {
        QuantileLevel::new(tau)?;
        let half = (1.0 + tau) / 2.0;
        let qe = -(1.0 - tau).ln();
        Ok(match self {
            DgpSpec::Case51 | DgpSpec::CorrelatedX => vec![1.0 + half, 2.0 * (1.0 + half), 3.0 * (1.0 + half)],
            DgpSpec::Case53 => vec![1.0 + (qe + 1.0), 2.0 + 2.0 * half, 3.0 + 30.0 * (qe + 1.0)],
            DgpSpec::GaussianX => vec![1.0 + (qe + 1.0), 3.0 + 30.0 * (qe + 1.0)],
            DgpSpec::Counterexample => vec![1.0, tau],
            DgpSpec::LocationScale { gamma1, gamma2, level } => {
                let v = ScaledNormal::new(*level).tail(tau).v;
                gamma1.iter().zip(gamma2).map(|(a, b)| a + b * v).collect()
            }
            DgpSpec::Case52 => {
                if (tau - CASE52_LEVEL).abs() > 1e-12 {
                    return Err(Error::Unsupported(format!(
                        "case52 has a linear conditional ES only at level {CASE52_LEVEL}"
                    )));
                }
                vec![-1.0, 2.0, -3.0]
            }
        })
    }

    /// Conditional tail functionals at covariates `x` (intercept excluded).
    pub fn functionals(&self, x: &[f64], tau: f64) -> Result<PointFunctionals> {
        QuantileLevel::new(tau)?;
        let qe = -(1.0 - tau).ln();
        let uni_var = (1.0 - tau).powi(2) / 12.0;
        Ok(match self {
            DgpSpec::Case51 | DgpSpec::CorrelatedX => {
                let b = 1.0 + 2.0 * x[0] + 3.0 * x[1];
                PointFunctionals {
                    q: b * (1.0 + tau),
                    v: b * (1.0 + (1.0 + tau) / 2.0),
                    m1: b * b * uni_var,
                    m2: b * (1.0 - tau) / 2.0,
                    f: 1.0 / b,
                }
            }
            DgpSpec::Case53 | DgpSpec::GaussianX => {
                let (base, c, d) = match self {
                    DgpSpec::Case53 => (1.0 + 2.0 * x[0] + 3.0 * x[1], 1.0 + 30.0 * x[1], 2.0 * x[0]),
                    _ => (1.0 + 3.0 * x[0], 1.0 + 30.0 * x[0], 0.0),
                };
                let m2 = c + d * (1.0 - tau) / 2.0;
                let q = base + c * qe + d * tau;
                PointFunctionals {
                    q,
                    v: q + m2,
                    m1: c * c + d * d * uni_var + c * d * (1.0 - tau) / 2.0,
                    m2,
                    f: 1.0 / (c / (1.0 - tau) + d),
                }
            }
            DgpSpec::Counterexample => {
                let s = x[0];
                if !(s > 0.0) {
                    return Err(Error::InvalidConfig("counterexample covariate must be positive".into()));
                }
                PointFunctionals {
                    q: 1.0 + s * (2.0 * tau - 1.0),
                    v: 1.0 + s * tau,
                    m1: 4.0 * s * s * uni_var,
                    m2: s * (1.0 - tau),
                    f: 1.0 / (2.0 * s),
                }
            }
            DgpSpec::LocationScale { gamma1, gamma2, level } => {
                let e = ScaledNormal::new(*level).tail(tau);
                let (loc, s) = (dot1(gamma1, x), dot1(gamma2, x));
                PointFunctionals { q: loc + s * e.q, v: loc + s * e.v, m1: s * s * e.m1, m2: s * e.m2, f: e.f / s }
            }
            DgpSpec::Case52 => {
                let st = Self::skewed_t();
                let nu0 = st.es(CASE52_LEVEL);
                let s = case52_scale(x);
                let qe = st.quantile(tau) - nu0;
                let ve = st.es(tau) - nu0;
                let loc = -1.0 + 2.0 * x[0] - 3.0 * x[1];
                PointFunctionals {
                    q: loc + s * qe,
                    v: loc + s * ve,
                    m1: s * s * st.tail_variance(tau),
                    m2: s * (ve - qe),
                    f: st.pdf(st.quantile(tau)) / s,
                }
            }
        })
    }

    /// Finite covariate support with probabilities, when there is one.
    pub fn support(&self) -> Option<(Vec<Vec<f64>>, Vec<f64>)> {
        match self {
            DgpSpec::Case53 => {
                let pr = [0.25, 0.5, 0.25];
                let mut pts = Vec::new();
                let mut w = Vec::new();
                for a in 0..3 {
                    for b in 0..3 {
                        pts.push(vec![a as f64, b as f64]);
                        w.push(pr[a] * pr[b]);
                    }
                }
                Some((pts, w))
            }
            DgpSpec::LocationScale { gamma1, .. } => {
                let p = gamma1.len() - 1;
                let total = 11usize.pow(p as u32);
                let pts: Vec<Vec<f64>> = (0..total)
                    .map(|mut k| {
                        (0..p)
                            .map(|_| {
                                let d = k % 11;
                                k /= 11;
                                d as f64 / 10.0
                            })
                            .collect()
                    })
                    .collect();
                Some((pts, vec![1.0 / total as f64; total]))
            }
            _ => None,
        }
    }

    /// Whether `x` lies in the covariate support.
    pub fn in_support(&self, x: &[f64]) -> bool {
        match self {
            DgpSpec::Case52 => x.iter().all(|v| (-1.0..=2.0).contains(v)),
            DgpSpec::LocationScale { .. } => is_unit(x),
            _ => true,
        }
    }
}

fn case52_scale(x: &[f64]) -> f64 {
    24.0 * x[0] * x[0] + 12.0 * x[1] * x[1] + 5.0
}

fn case52_response(x: &[f64], eps: f64, nu0: f64) -> f64 {
    -1.0 + 2.0 * x[0] - 3.0 * x[1] + case52_scale(x) * (eps - nu0)
}

/// `g₀ + Σ gⱼ xⱼ` for covariates without the intercept.
fn dot1(g: &[f64], x: &[f64]) -> f64 {
    g[0] + g[1..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
}
