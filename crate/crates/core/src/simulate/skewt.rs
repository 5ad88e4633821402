//! Fernández–Steel two-piece skewed Student t, standardized to mean 0 and
//! variance 1.

use rand::Rng;
use rand_distr::{Distribution, StudentT};
use statrs::distribution::{Continuous, ContinuousCDF, StudentsT};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SkewedT {
    pub nu: f64,
    /// Two-piece skew parameter; 1 is the symmetric t.
    pub skew: f64,
    mean: f64,
    sd: f64,
    t: StudentsT,
    sampler: StudentT<f64>,
}

impl SkewedT {
    pub fn new(nu: f64, skew: f64) -> Result<Self> {
        if !(nu > 2.0) || !(skew > 0.0) || !nu.is_finite() || !skew.is_finite() {
            return Err(Error::InvalidConfig(format!("skewed t needs nu > 2 and skew > 0, got {nu}, {skew}")));
        }
        let g = skew;
        let abs_mean = 2.0 * nu.sqrt() * (ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0)).exp()
            / (std::f64::consts::PI.sqrt() * (nu - 1.0));
        let mean = abs_mean * (g - 1.0 / g);
        let second = nu / (nu - 2.0) * (g.powi(3) + g.powi(-3)) / (g + 1.0 / g);
        let sd = (second - mean * mean).sqrt();
        Ok(Self {
            nu,
            skew,
            mean,
            sd,
            t: StudentsT::new(0.0, 1.0, nu).expect("valid t"),
            sampler: StudentT::new(nu).expect("valid t"),
        })
    }

    /// Probability of the left piece.
    fn left_mass(&self) -> f64 {
        1.0 / (1.0 + self.skew * self.skew)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let t: f64 = self.sampler.sample(rng).abs();
        let z = if rng.random::<f64>() < self.left_mass() { -t / self.skew } else { t * self.skew };
        (z - self.mean) / self.sd
    }

    /// Density of the unstandardized two-piece variable.
    fn raw_pdf(&self, z: f64) -> f64 {
        let g = self.skew;
        let c = 2.0 / (g + 1.0 / g);
        if z >= 0.0 {
            c * self.t.pdf(z / g)
        } else {
            c * self.t.pdf(z * g)
        }
    }

    fn raw_quantile(&self, a: f64) -> f64 {
        let g = self.skew;
        let pl = self.left_mass();
        if a < pl {
            self.t.inverse_cdf(a / (2.0 * pl)) / g
        } else {
            g * self.t.inverse_cdf(0.5 + (a - pl) / (2.0 * (1.0 - pl)))
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.sd * self.raw_pdf(x * self.sd + self.mean)
    }

    pub fn quantile(&self, a: f64) -> f64 {
        (self.raw_quantile(a) - self.mean) / self.sd
    }

    /// Upper-tail expected shortfall at level `tau`, in closed form.
    pub fn es(&self, tau: f64) -> f64 {
        let q = self.raw_quantile(tau);
        let g = self.skew;
        let pl = self.left_mass();
        let nu = self.nu;
        // E[Z 1{Z ≥ q}] piecewise: the right piece is g|T|, the left −|T|/g.
        let t_tail = |c: f64| (nu + c * c) / (nu - 1.0) * self.t.pdf(c);
        let partial = if q >= 0.0 {
            2.0 * (1.0 - pl) * g * t_tail(q / g)
        } else {
            2.0 * (1.0 - pl) * g * t_tail(0.0) - 2.0 * pl / g * (t_tail(0.0) - t_tail(q * g))
        };
        let raw = partial / (1.0 - tau);
        (raw - self.mean) / self.sd
    }

    /// Variance of the standardized variable above its `tau` quantile.
    pub fn tail_variance(&self, tau: f64) -> f64 {
        let q = self.quantile(tau);
        let v = self.es(tau);
        let f = |x: f64| (x - v).powi(2) * self.pdf(x);
        integrate_to_infinity(f, q, 1e-10) / (1.0 - tau)
    }
}

/// `∫_a^∞ f` by mapping `[a, ∞)` onto `[0, 1)` and adaptive Simpson.
pub(crate) fn integrate_to_infinity(f: impl Fn(f64) -> f64, a: f64, tol: f64) -> f64 {
    let g = |t: f64| {
        if t >= 1.0 {
            return 0.0;
        }
        let x = a + t / (1.0 - t);
        f(x) / ((1.0 - t) * (1.0 - t))
    };
    adaptive_simpson(&g, 0.0, 1.0, tol)
}

pub(crate) fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn step(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 50)
}
