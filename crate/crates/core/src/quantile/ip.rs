//! Frisch–Newton interior point for quantile regression, with Mehrotra
//! predictor–corrector steps.
//!
//! Works on the bounded LP `min cᵀa  s.t.  Xᵀa = (1−τ)Xᵀ1,  0 ≤ a ≤ 1`
//! with `c = −y`. The regression coefficients are the negated dual variables.

use nalgebra::{DMatrix, DVector};

use super::problem::{dot, Problem};
use crate::error::{Error, Result};

const STEP: f64 = 0.9995;

#[derive(Debug, Clone)]
pub(crate) struct IpOutcome {
    pub beta: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn bound(v: &[f64], dv: &[f64]) -> f64 {
    let mut m = f64::INFINITY;
    for (a, d) in v.iter().zip(dv) {
        if *d < 0.0 {
            m = m.min(-a / d);
        }
    }
    m
}

fn normal_matrix(pb: &Problem, q: &[f64]) -> DMatrix<f64> {
    let p = pb.p;
    let mut m = DMatrix::zeros(p, p);
    for i in 0..pb.n {
        let xi = pb.row(i);
        let qi = q[i];
        for a in 0..p {
            let v = qi * xi[a];
            for b in 0..=a {
                m[(a, b)] += v * xi[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            m[(b, a)] = m[(a, b)];
        }
    }
    m
}

fn xt_times(pb: &Problem, v: &[f64]) -> DVector<f64> {
    let mut out = DVector::zeros(pb.p);
    for i in 0..pb.n {
        let xi = pb.row(i);
        for a in 0..pb.p {
            out[a] += xi[a] * v[i];
        }
    }
    out
}

pub(crate) fn solve(pb: &Problem, tau: f64, rel_tol: f64, max_it: usize) -> Result<IpOutcome> {
    let n = pb.n;
    let c: Vec<f64> = pb.y.iter().map(|v| -v).collect();
    let mut x = vec![1.0 - tau; n];
    let mut s = vec![tau; n];
    let b = xt_times(pb, &x);

    let ones = vec![1.0; n];
    let gram = normal_matrix(pb, &ones);
    if !crate::linalg::is_well_conditioned(&gram) {
        return Err(Error::SingularDesign);
    }
    let chol = gram.cholesky().ok_or(Error::SingularDesign)?;
    let mut y = chol.solve(&xt_times(pb, &c));

    let mut z = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut r = c[i] - dot(pb.row(i), y.as_slice());
        if r == 0.0 {
            r = 0.001;
        }
        z[i] = r.max(0.0);
        w[i] = z[i] - r;
    }

    let scale = pb.scale();
    let gap_of = |x: &[f64], y: &DVector<f64>, w: &[f64]| -> f64 { dot(&c, x) - y.dot(&b) + w.iter().sum::<f64>() };
    let mut gap = gap_of(&x, &y, &w);

    let mut q = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut dx = vec![0.0; n];
    let mut ds = vec![0.0; n];
    let mut dz = vec![0.0; n];
    let mut dw = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut it = 0;
    while gap > rel_tol * scale && it < max_it {
        it += 1;
        for i in 0..n {
            q[i] = 1.0 / (z[i] / x[i] + w[i] / s[i]);
            r[i] = z[i] - w[i];
            rhs[i] = q[i] * r[i];
        }
        let m = normal_matrix(pb, &q);
        let Some(chol) = m.cholesky() else { break };
        let mut dy = chol.solve(&xt_times(pb, &rhs));
        for i in 0..n {
            dx[i] = q[i] * (dot(pb.row(i), dy.as_slice()) - r[i]);
            ds[i] = -dx[i];
            dz[i] = -z[i] * (dx[i] / x[i] + 1.0);
            dw[i] = -w[i] * (ds[i] / s[i] + 1.0);
        }
        let mut fp = (STEP * bound(&x, &dx).min(bound(&s, &ds))).min(1.0);
        let mut fd = (STEP * bound(&w, &dw).min(bound(&z, &dz))).min(1.0);

        if fp.min(fd) < 1.0 {
            let mu0 = dot(&z, &x) + dot(&w, &s);
            let mut g = 0.0;
            for i in 0..n {
                g += (z[i] + fd * dz[i]) * (x[i] + fp * dx[i]) + (w[i] + fd * dw[i]) * (s[i] + fp * ds[i]);
            }
            let mu = mu0 * (g / mu0).powi(3) / (2.0 * n as f64);
            for i in 0..n {
                let dxdz = dx[i] * dz[i];
                let dsdw = ds[i] * dw[i];
                let xi = mu * (1.0 / x[i] - 1.0 / s[i]);
                rhs[i] += q[i] * (dxdz - dsdw - xi);
                // stash the corrector terms for the back substitution below
                dz[i] = dxdz;
                dw[i] = dsdw;
                ds[i] = xi;
            }
            dy = chol.solve(&xt_times(pb, &rhs));
            for i in 0..n {
                let (dxdz, dsdw, xi) = (dz[i], dw[i], ds[i]);
                dx[i] = q[i] * (dot(pb.row(i), dy.as_slice()) - r[i] - dxdz + dsdw + xi);
                ds[i] = -dx[i];
                dz[i] = mu / x[i] - z[i] - z[i] * dx[i] / x[i] - dxdz;
                dw[i] = mu / s[i] - w[i] - w[i] * ds[i] / s[i] - dsdw;
            }
            fp = (STEP * bound(&x, &dx).min(bound(&s, &ds))).min(1.0);
            fd = (STEP * bound(&w, &dw).min(bound(&z, &dz))).min(1.0);
        }

        for i in 0..n {
            x[i] += fp * dx[i];
            s[i] += fp * ds[i];
            w[i] += fd * dw[i];
            z[i] += fd * dz[i];
        }
        y += dy * fd;
        let next = gap_of(&x, &y, &w);
        if !next.is_finite() {
            break;
        }
        gap = next;
    }

    let beta: Vec<f64> = y.iter().map(|v| -v).collect();
    let converged = gap <= rel_tol * scale && beta.iter().all(|v| v.is_finite());
    Ok(IpOutcome { beta, iterations: it, converged })
}

/// Majorize–minimize on a smoothed check loss. Slow but robust; used only
/// when the interior point stalls.
pub(crate) fn mm_fallback(pb: &Problem, tau: f64, max_it: usize) -> Result<IpOutcome> {
    let (n, p) = (pb.n, pb.p);
    let ones = vec![1.0; n];
    let gram = normal_matrix(pb, &ones);
    let chol = gram.cholesky().ok_or(Error::SingularDesign)?;
    let mut beta = chol.solve(&xt_times(pb, &pb.y));
    let colsum = xt_times(pb, &ones);
    let scale = pb.scale() / n as f64;
    let mut eps = 1e-3 * scale.max(f64::MIN_POSITIVE);
    let mut wts = vec![0.0; n];
    let mut wy = vec![0.0; n];
    let mut it = 0;
    while it < max_it {
        it += 1;
        for i in 0..n {
            let r = pb.y[i] - dot(pb.row(i), beta.as_slice());
            wts[i] = 1.0 / (eps + r.abs());
            wy[i] = wts[i] * pb.y[i];
        }
        let m = normal_matrix(pb, &wts);
        let Some(ch) = m.cholesky() else { break };
        let rhs = xt_times(pb, &wy) + &colsum * (2.0 * tau - 1.0);
        let next = ch.solve(&rhs);
        let change = (&next - &beta).amax();
        beta = next;
        if change <= 1e-12 * (1.0 + beta.amax()) {
            if eps <= 1e-10 * scale {
                break;
            }
            eps *= 0.1;
        }
    }
    debug_assert_eq!(beta.len(), p);
    let converged = beta.iter().all(|v| v.is_finite());
    Ok(IpOutcome { beta: beta.iter().copied().collect(), iterations: it, converged })
}
