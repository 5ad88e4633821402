//! Superquantile (Rockafellar–Royset) regression on the counterexample model
//! `Y = 1 + X̃ε`: the population slope solves a dilogarithm equation and
//! differs from the ES slope 0.5.

use std::f64::consts::{LN_2, PI};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dgp::DgpSpec;
use crate::error::{Error, Result};
use crate::tail::{EsConvention, SortedSample};

/// Dilogarithm `Li₂(x) = −∫₀ˣ log(1−z)/z dz` for `x ≤ 1`.
pub fn dilog(x: f64) -> f64 {
    if x == 1.0 {
        return PI * PI / 6.0;
    }
    if x > 0.5 {
        return PI * PI / 6.0 - x.ln() * (1.0 - x).ln() - dilog(1.0 - x);
    }
    if x < -1.0 {
        let l = (-x).ln();
        return -PI * PI / 6.0 - 0.5 * l * l - dilog(1.0 / x);
    }
    if x < -0.5 {
        // Li₂(x) = −Li₂(x/(x−1)) − ½ log²(1−x), mapping into (1/3, 1/2].
        let l = (1.0 - x).ln();
        return -dilog(x / (x - 1.0)) - 0.5 * l * l;
    }
    let mut term = x;
    let mut sum = 0.0f64;
    let mut k = 1.0;
    while term.abs() > 1e-18 * sum.abs().max(1e-300) || k < 2.0 {
        sum += term / (k * k);
        k += 1.0;
        term *= x;
        if k > 200.0 {
            break;
        }
    }
    sum
}

/// Derivative of the population superquantile loss in the slope at level ½.
pub fn population_derivative(theta: f64) -> f64 {
    if theta <= 0.0 {
        -1.0 - (1.0 - theta).ln()
    } else {
        2.0 * (-0.5 - dilog(0.5) + dilog((theta + 1.0) / 2.0) + (0.5 - LN_2) * (1.0 + theta).ln())
    }
}

/// Root of [`population_derivative`] in `(0, 1)`.
pub fn superquantile_population_slope() -> Result<f64> {
    let (mut lo, mut hi) = (1e-12, 1.0);
    if population_derivative(lo).signum() == population_derivative(hi).signum() {
        return Err(Error::NotBracketed { lo, hi });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if population_derivative(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Sample superquantile objective in the slope: `x̄θ + (1−τ)⁻¹∫_τ^1 v̂_{Y−θX̃}(α)dα`
/// with a midpoint rule on `grid` levels.
pub fn superquantile_objective(x: &[f64], y: &[f64], theta: f64, tau: f64, grid: usize) -> Result<f64> {
    let z: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - theta * b).collect();
    let ss = SortedSample::new(&z)?;
    let h = (1.0 - tau) / grid as f64;
    let mut integral = 0.0;
    for k in 0..grid {
        integral += ss.es(tau + (k as f64 + 0.5) * h, EsConvention::CountNormalized)? * h;
    }
    let xbar = x.iter().sum::<f64>() / x.len() as f64;
    Ok(xbar * theta + integral / (1.0 - tau))
}

/// Golden-section minimizer of a convex function on `[a, b]`.
pub(crate) fn golden_section(mut f: impl FnMut(f64) -> Result<f64>, mut a: f64, mut b: f64, tol: f64) -> Result<f64> {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (a + b))
}

/// Superquantile regression `(θ₀, θ₁)` at level `tau` for one covariate.
pub fn superquantile_fit(x: &[f64], y: &[f64], tau: f64, grid: usize) -> Result<(f64, f64)> {
    if grid == 0 {
        return Err(Error::InvalidConfig("grid needs at least one point".into()));
    }
    let theta = golden_section(|t| superquantile_objective(x, y, t, tau, grid), -2.0, 3.0, 1e-7)?;
    let z: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - theta * b).collect();
    let theta0 = SortedSample::new(&z)?.es(tau, EsConvention::CountNormalized)?;
    Ok((theta0, theta))
}

/// Slope of the sample superquantile regression on one counterexample draw.
pub fn superquantile_sample_fit(n: usize, seed: u64, grid: usize) -> Result<f64> {
    if n < 100 {
        return Err(Error::InsufficientData(format!("superquantile fit needs n ≥ 100, got {n}")));
    }
    let data = DgpSpec::Counterexample.sample_with(n, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let x: Vec<f64> = (0..n).map(|i| data.covariate(i, 0)).collect();
    Ok(superquantile_fit(&x, &data.y, 0.5, grid)?.1)
}
