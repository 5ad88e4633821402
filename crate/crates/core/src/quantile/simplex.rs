//! Vertex-walking simplex for the check loss, used to polish interior-point
//! solutions and to follow the solution path across increasing levels.
//!
//! A vertex is a set `h` of `p` observations fitted exactly. Leaving it along
//! the edge that frees observation `h[k]` moves `b` by `t·d` with
//! `d = σ X_h⁻¹ e_k`; the loss along the edge is convex piecewise linear and
//! the line search stops at the first residual sign change that makes the
//! slope nonnegative.
//!
//! Only a working set of small-residual observations is scanned per pivot.
//! Every other observation satisfies `|r_i| ≥ ‖x_i‖·cut` at the last rebuild
//! and can only have moved by `‖x_i‖·drift` since, so it cannot change sign
//! before `t·‖d‖ = cut − drift`. A pivot that would step further triggers a
//! rebuild.

use nalgebra::{DMatrix, DVector};

use super::problem::{dot, Problem};
use crate::error::{Error, Result};

pub(crate) struct Simplex<'a> {
    pb: &'a Problem,
    norms: Vec<f64>,
    col_sum: Vec<f64>,
    pub beta: Vec<f64>,
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    binv: DMatrix<f64>,
    r: Vec<f64>,
    neg: Vec<bool>,
    neg_sum: Vec<f64>,
    window: Vec<usize>,
    cut: f64,
    drift: f64,
    zero_tol: f64,
    slope_tol: f64,
    window_size: usize,
    pub pivots: usize,
    cand: Vec<(f64, f64, usize)>,
}

impl<'a> Simplex<'a> {
    /// Starts from the vertex nearest to `start`: observations are taken in
    /// order of increasing scaled residual while they add rank.
    pub fn from_point(pb: &'a Problem, start: &[f64]) -> Result<Self> {
        let (n, p) = (pb.n, pb.p);
        let norms: Vec<f64> = (0..n).map(|i| dot(pb.row(i), pb.row(i)).sqrt()).collect();
        let mut order: Vec<(f64, usize)> =
            (0..n).filter(|&i| norms[i] > 0.0).map(|i| ((pb.y[i] - pb.fitted(i, start)).abs() / norms[i], i)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut q: Vec<Vec<f64>> = Vec::with_capacity(p);
        let mut basis = Vec::with_capacity(p);
        for &(_, i) in &order {
            let mut v = pb.row(i).to_vec();
            for _ in 0..2 {
                for u in &q {
                    let c = dot(u, &v);
                    for (vj, uj) in v.iter_mut().zip(u) {
                        *vj -= c * uj;
                    }
                }
            }
            let nv = dot(&v, &v).sqrt();
            if nv > 1e-9 * norms[i] {
                v.iter_mut().for_each(|e| *e /= nv);
                q.push(v);
                basis.push(i);
                if basis.len() == p {
                    break;
                }
            }
        }
        if basis.len() < p {
            return Err(Error::SingularDesign);
        }
        Self::from_basis(pb, basis, norms)
    }

    fn from_basis(pb: &'a Problem, basis: Vec<usize>, norms: Vec<f64>) -> Result<Self> {
        let (n, p) = (pb.n, pb.p);
        let mut col_sum = vec![0.0; p];
        for i in 0..n {
            for (c, x) in col_sum.iter_mut().zip(pb.row(i)) {
                *c += x;
            }
        }
        let mut in_basis = vec![false; n];
        for &i in &basis {
            in_basis[i] = true;
        }
        let ymax = pb.y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mean_norm = norms.iter().sum::<f64>() / n as f64;
        let mut s = Self {
            pb,
            norms,
            col_sum,
            beta: vec![0.0; p],
            basis,
            in_basis,
            binv: DMatrix::zeros(p, p),
            r: vec![0.0; n],
            neg: vec![false; n],
            neg_sum: vec![0.0; p],
            window: Vec::new(),
            cut: f64::INFINITY,
            drift: 0.0,
            zero_tol: 1e-12 * ymax.max(f64::MIN_POSITIVE),
            slope_tol: 1e-10 * mean_norm.max(1e-300),
            window_size: n.min((64 * p).max(n / 16)).max(p + 1),
            pivots: 0,
            cand: Vec::new(),
        };
        s.refactor()?;
        s.rebuild();
        Ok(s)
    }

    /// Recomputes `X_h⁻¹` and the vertex coefficients.
    fn refactor(&mut self) -> Result<()> {
        let p = self.pb.p;
        let xh = DMatrix::from_fn(p, p, |r, c| self.pb.row(self.basis[r])[c]);
        let inv = xh.try_inverse().ok_or(Error::SingularDesign)?;
        if inv.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularDesign);
        }
        let yh = DVector::from_iterator(p, self.basis.iter().map(|&i| self.pb.y[i]));
        self.beta = (&inv * yh).iter().copied().collect();
        self.binv = inv;
        Ok(())
    }

    #[inline]
    fn residual(&self, i: usize) -> f64 {
        if self.in_basis[i] {
            return 0.0;
        }
        let r = self.pb.y[i] - self.pb.fitted(i, &self.beta);
        if r.abs() <= self.zero_tol {
            0.0
        } else {
            r
        }
    }

    /// Full pass: all residuals, sign sums and a fresh working set.
    fn rebuild(&mut self) {
        let n = self.pb.n;
        self.neg_sum.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let r = self.residual(i);
            self.r[i] = r;
            self.neg[i] = r < 0.0;
            if self.neg[i] {
                for (s, x) in self.neg_sum.iter_mut().zip(self.pb.row(i)) {
                    *s += x;
                }
            }
        }
        self.drift = 0.0;
        if self.window_size >= n {
            self.window = (0..n).collect();
            self.cut = f64::INFINITY;
            return;
        }
        let mut keyed: Vec<(f64, usize)> = (0..n)
            .map(|i| {
                let k = if self.in_basis[i] || self.norms[i] == 0.0 { 0.0 } else { self.r[i].abs() / self.norms[i] };
                (k, i)
            })
            .collect();
        let m = self.window_size;
        keyed.select_nth_unstable_by(m, |a, b| a.0.total_cmp(&b.0));
        self.cut = keyed[m].0;
        let mut w: Vec<usize> = keyed[..m].iter().map(|e| e.1).collect();
        for &b in &self.basis {
            if !w.contains(&b) {
                w.push(b);
            }
        }
        w.sort_unstable();
        self.window = w;
    }

    fn gradient(&self, tau: f64) -> DVector<f64> {
        let p = self.pb.p;
        let mut g = DVector::zeros(p);
        for a in 0..p {
            let mut nonbasic = self.col_sum[a];
            for &h in &self.basis {
                nonbasic -= self.pb.row(h)[a];
            }
            g[a] = tau * nonbasic - self.neg_sum[a];
        }
        g
    }

    /// Runs pivots at level `tau` until no edge improves the loss.
    pub fn optimize(&mut self, tau: f64, max_pivots: usize) -> Result<()> {
        let mut count = 0;
        loop {
            match self.pivot(tau)? {
                Step::Optimal => return Ok(()),
                Step::Moved => {
                    count += 1;
                    if count > max_pivots {
                        return Err(Error::NoConvergence(format!("simplex exceeded {max_pivots} pivots")));
                    }
                }
            }
        }
    }

    fn edge_slopes(&self, a: &DVector<f64>, tau: f64) -> Vec<(f64, usize, f64, f64)> {
        let p = self.pb.p;
        let zeros: Vec<usize> =
            self.window.iter().copied().filter(|&i| !self.in_basis[i] && self.r[i] == 0.0).collect();
        let mut out = Vec::new();
        for k in 0..p {
            for sigma in [1.0, -1.0] {
                let s0 = if sigma > 0.0 { (1.0 - tau) - a[k] } else { tau + a[k] };
                if s0 >= -self.slope_tol {
                    continue;
                }
                // degenerate vertex: zero residuals that turn negative add slope at t = 0
                let mut s = s0;
                for &i in &zeros {
                    let z: f64 = sigma * (0..p).map(|c| self.pb.row(i)[c] * self.binv[(c, k)]).sum::<f64>();
                    if z > 0.0 {
                        s += z;
                    }
                }
                if s < -self.slope_tol {
                    out.push((s, k, sigma, s0));
                }
            }
        }
        out.sort_by(|x, y| x.0.total_cmp(&y.0));
        out
    }

    fn pivot(&mut self, tau: f64) -> Result<Step> {
        let p = self.pb.p;
        'retry: loop {
            let a = self.binv.transpose() * self.gradient(tau);
            let edges = self.edge_slopes(&a, tau);
            for &(_, k, sigma, s0) in &edges {
                let d: Vec<f64> = (0..p).map(|c| sigma * self.binv[(c, k)]).collect();
                let dnorm = dot(&d, &d).sqrt();
                self.cand.clear();
                for &i in &self.window {
                    if self.in_basis[i] {
                        continue;
                    }
                    let z = dot(self.pb.row(i), &d);
                    let r = self.r[i];
                    if (r >= 0.0 && z > 0.0) || (r < 0.0 && z < 0.0) {
                        self.cand.push((r / z, z.abs(), i));
                    }
                }
                let found = line_search(&mut self.cand, s0, self.slope_tol);
                let Some((t, enter)) = found else {
                    if self.cut.is_finite() {
                        self.refresh();
                        continue 'retry;
                    }
                    return Err(Error::NoConvergence("unbounded edge in quantile simplex".into()));
                };
                if t <= 0.0 {
                    continue;
                }
                if self.cut.is_finite() && self.drift + t * dnorm > self.cut {
                    self.refresh();
                    continue 'retry;
                }
                self.apply(k, enter, t * dnorm)?;
                return Ok(Step::Moved);
            }
            return Ok(Step::Optimal);
        }
    }

    /// Rebuilds the working set; grows it when a fresh one was not enough.
    fn refresh(&mut self) {
        if self.drift == 0.0 {
            self.window_size = (self.window_size * 2).min(self.pb.n);
        }
        self.rebuild();
    }

    fn apply(&mut self, k: usize, enter: usize, moved: f64) -> Result<()> {
        let leave = self.basis[k];
        let old_beta = self.beta.clone();
        self.basis[k] = enter;
        self.in_basis[leave] = false;
        self.in_basis[enter] = true;
        if let Err(e) = self.refactor() {
            self.basis[k] = leave;
            self.in_basis[leave] = true;
            self.in_basis[enter] = false;
            self.refactor()?;
            return Err(e);
        }
        let step: f64 = old_beta.iter().zip(&self.beta).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        self.drift += step.max(moved);
        for idx in 0..self.window.len() {
            let i = self.window[idx];
            let r = self.residual(i);
            self.r[i] = r;
            let now = r < 0.0;
            if now != self.neg[i] {
                let sign = if now { 1.0 } else { -1.0 };
                for (s, x) in self.neg_sum.iter_mut().zip(self.pb.row(i)) {
                    *s += sign * x;
                }
                self.neg[i] = now;
            }
        }
        self.pivots += 1;
        Ok(())
    }
}

enum Step {
    Optimal,
    Moved,
}

/// Walks breakpoints `(t, slope increment, index)` in increasing `t` and
/// returns the first at which the slope becomes nonnegative.
fn line_search(cand: &mut [(f64, f64, usize)], mut slope: f64, tol: f64) -> Option<(f64, usize)> {
    let mut start = 0;
    let mut chunk = 8;
    while start < cand.len() {
        let rest = &mut cand[start..];
        let take = chunk.min(rest.len());
        if take < rest.len() {
            rest.select_nth_unstable_by(take, |a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
        }
        rest[..take].sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
        for &(t, inc, i) in &rest[..take] {
            slope += inc;
            if slope >= -tol {
                return Some((t, i));
            }
        }
        start += take;
        chunk *= 4;
    }
    None
}
