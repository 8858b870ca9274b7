//! One-cut equilibrium measures.
//!
//! A measure is stored as `dμ(x) = S(x) √((x−a)(b−x)) dx` with `S` a
//! Chebyshev series on `[a, b]`. After the change of variables
//! `x = c + r t` the weight becomes the Chebyshev-U weight, so Stieltjes
//! transforms, logarithmic potentials and the CDF all have closed forms in
//! terms of the U-coefficients `σ_n` of `S`.

use crate::chebyshev::{clenshaw_t, clenshaw_u, t_to_u, u_to_t, GaussU};
use crate::error::{Error, Result};
use crate::potentials::{poly_axpy, poly_deflate, poly_deriv, poly_eval, poly_mul, Potential};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Solver knobs for [`solve_equilibrium_with`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Degree of the Chebyshev series for `S`.
    pub degree: usize,
    pub damping: f64,
    /// Required movement of endpoints and density between iterates.
    pub tolerance: f64,
    /// Iteration continues past `tolerance` until this movement, if cheap.
    pub polish_tolerance: f64,
    pub max_iterations: usize,
    /// Smallest admissible value of `S`.
    pub density_floor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            degree: 64,
            damping: 0.5,
            tolerance: 1e-10,
            polish_tolerance: 1e-14,
            max_iterations: 200,
            density_floor: 1e-8,
        }
    }
}

/// Equilibrium measure of a one-cut potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureRecord")]
pub struct EquilibriumMeasure {
    a: f64,
    b: f64,
    beta: f64,
    /// `S` in the T basis of `[a, b]`.
    s_coeffs: Vec<f64>,
    #[serde(skip)]
    sigma: Vec<f64>,
}

#[derive(Deserialize)]
struct MeasureRecord {
    a: f64,
    b: f64,
    beta: f64,
    s_coeffs: Vec<f64>,
}

impl TryFrom<MeasureRecord> for EquilibriumMeasure {
    type Error = Error;
    fn try_from(r: MeasureRecord) -> Result<Self> {
        Self::new(r.a, r.b, r.beta, r.s_coeffs)
    }
}

/// Quadrature rule for integrals against `μ`.
#[derive(Debug, Clone)]
pub struct MuQuadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl MuQuadrature {
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

impl EquilibriumMeasure {
    pub fn new(a: f64, b: f64, beta: f64, s_coeffs: Vec<f64>) -> Result<Self> {
        if !(b > a) || !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidSupport { a, b });
        }
        if !(beta > 0.0) {
            return Err(Error::InvalidInput(format!("beta must be positive, got {beta}")));
        }
        if s_coeffs.is_empty() || s_coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("density coefficients must be finite".into()));
        }
        let sigma = t_to_u(&s_coeffs);
        Ok(Self {
            a,
            b,
            beta,
            s_coeffs,
            sigma,
        })
    }

    /// The semicircle of radius `r` centred at `c`.
    pub fn semicircle(c: f64, r: f64, beta: f64) -> Result<Self> {
        Self::new(c - r, c + r, beta, vec![2.0 / (PI * r * r)])
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn support(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn s_coeffs(&self) -> &[f64] {
        &self.s_coeffs
    }

    /// U-basis coefficients of `S`.
    pub fn s_u_coeffs(&self) -> &[f64] {
        &self.sigma
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.b - self.a)
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.a + self.b)
    }

    #[inline]
    pub fn to_unit(&self, x: f64) -> f64 {
        (x - self.center()) / self.half_width()
    }

    #[inline]
    pub fn from_unit(&self, s: f64) -> f64 {
        self.center() + self.half_width() * s
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.a && x <= self.b
    }

    /// `S(x)`, polynomially continued outside the support.
    pub fn density_factor(&self, x: f64) -> f64 {
        clenshaw_t(&self.s_coeffs, self.to_unit(x))
    }

    /// `ρ(x) = S(x)√((x−a)(b−x))`, zero outside the support.
    pub fn density(&self, x: f64) -> f64 {
        if x <= self.a || x >= self.b {
            return 0.0;
        }
        self.density_factor(x) * ((x - self.a) * (self.b - x)).sqrt()
    }

    pub fn mass(&self) -> f64 {
        let r = self.half_width();
        r * r * 0.5 * PI * self.sigma[0]
    }

    /// `μ((−∞, x])`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.a {
            return 0.0;
        }
        if x >= self.b {
            return self.mass();
        }
        let th = self.to_unit(x).clamp(-1.0, 1.0).acos();
        // ∫_θ^π cos(mφ) dφ
        let c = |m: usize| {
            if m == 0 {
                PI - th
            } else {
                -(m as f64 * th).sin() / m as f64
            }
        };
        let r = self.half_width();
        let acc: f64 = self
            .sigma
            .iter()
            .enumerate()
            .map(|(n, s)| s * (c(n) - c(n + 2)))
            .sum();
        (0.5 * r * r * acc).clamp(0.0, 1.0)
    }

    /// Inverse of [`Self::cdf`] for `p ∈ [0, 1]`.
    pub fn quantile(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return self.a;
        }
        if p >= self.mass() {
            return self.b;
        }
        let (mut lo, mut hi) = (self.a, self.b);
        let mut x = self.from_unit(2.0 * p - 1.0);
        for _ in 0..200 {
            let f = self.cdf(x) - p;
            if f > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let d = self.density(x);
            let mut nx = if d > 0.0 { x - f / d } else { 0.5 * (lo + hi) };
            if !(nx > lo && nx < hi) {
                nx = 0.5 * (lo + hi);
            }
            if (nx - x).abs() <= 1e-15 * (1.0 + x.abs()) || hi - lo < 1e-15 {
                return nx;
            }
            x = nx;
        }
        x
    }

    /// Gauss rule with `n` nodes for `∫ f dμ`.
    pub fn quadrature(&self, n: usize) -> MuQuadrature {
        let q = GaussU::new(n);
        let r = self.half_width();
        let nodes: Vec<f64> = q.nodes.iter().map(|&s| self.from_unit(s)).collect();
        let weights = q
            .nodes
            .iter()
            .zip(&q.weights)
            .map(|(&s, &w)| r * r * w * clenshaw_u(&self.sigma, s))
            .collect();
        MuQuadrature { nodes, weights }
    }

    /// A quadrature size that integrates `S·p` exactly for `deg p ≤ extra`.
    pub fn default_quadrature_size(&self, extra: usize) -> usize {
        (self.sigma.len() + extra) / 2 + 8
    }

    /// `∫ y^k dμ(y)` for `k < count`.
    pub fn moments(&self, count: usize) -> Vec<f64> {
        let q = self.quadrature(self.default_quadrature_size(count));
        moments_from_rule(&q.nodes, &q.weights, count)
    }

    /// Stieltjes transform `G(z) = ∫ dμ(y)/(z−y)` for `z` off the support.
    pub fn stieltjes(&self, z: Complex64) -> Result<Complex64> {
        if z.im == 0.0 && self.contains(z.re) {
            return Err(Error::Domain(z.re));
        }
        let r = self.half_width();
        let s = (z - self.center()) / r;
        let w = (s + (s - 1.0).sqrt() * (s + 1.0).sqrt()).inv();
        let mut acc = Complex64::new(0.0, 0.0);
        for &sn in self.sigma.iter().rev() {
            acc = acc * w + sn;
        }
        Ok(acc * w * (r * PI))
    }

    /// `∫ dμ(y)/(x−y)` for real `x`, as a principal value on the support.
    pub fn hilbert(&self, x: f64) -> f64 {
        let r = self.half_width();
        let s = self.to_unit(x);
        if s.abs() <= 1.0 {
            // PV∫ U_n(t)√(1−t²)/(s−t) dt = π T_{n+1}(s)
            let mut shifted = Vec::with_capacity(self.sigma.len() + 1);
            shifted.push(0.0);
            shifted.extend_from_slice(&self.sigma);
            r * PI * clenshaw_t(&shifted, s)
        } else {
            let w = exterior_w(s);
            r * PI * w * power_series(&self.sigma, w)
        }
    }

    /// `∫ log|x−y| dμ(y)`.
    pub fn log_potential(&self, x: f64) -> f64 {
        let r = self.half_width();
        let s = self.to_unit(x);
        let m = self.sigma.len() + 2;
        let mut lam = vec![0.0; m];
        if s.abs() <= 1.0 {
            lam[0] = -std::f64::consts::LN_2;
            let (mut t0, mut t1) = (1.0, s);
            for (k, l) in lam.iter_mut().enumerate().skip(1) {
                *l = -t1 / k as f64;
                let t2 = 2.0 * s * t1 - t0;
                t0 = t1;
                t1 = t2;
            }
        } else {
            let w = exterior_w(s);
            lam[0] = -(2.0 * w.abs()).ln();
            let mut wk = 1.0;
            for (k, l) in lam.iter_mut().enumerate().skip(1) {
                wk *= w;
                *l = -wk / k as f64;
            }
        }
        let acc: f64 = self
            .sigma
            .iter()
            .enumerate()
            .map(|(n, sn)| sn * (lam[n] - lam[n + 2]))
            .sum();
        self.mass() * r.ln() + r * r * 0.5 * PI * acc
    }

    /// `U_V(x) = V(x) − β ∫ log|x−y| dμ(y)`.
    pub fn effective_potential(&self, v: &Potential, x: f64) -> f64 {
        v.value(x) - self.beta * self.log_potential(x)
    }

    /// `I_V(μ) = ∫ V dμ − (β/2) ∬ log|x−y| dμ dμ`.
    pub fn energy(&self, v: &Potential) -> f64 {
        let q = self.quadrature(self.default_quadrature_size(2 * self.sigma.len() + v.degree() + 4));
        let ev = q.integrate(|x| v.value(x));
        let el = q.integrate(|x| self.log_potential(x));
        ev - 0.5 * self.beta * el
    }

    /// Energy of the pushforward of `μ` under an increasing map `t`.
    ///
    /// Uses `log|T(x)−T(y)| = log|x−y| + log D_T(x,y)` with the divided
    /// difference `D_T`, whose diagonal is `T'`.
    pub fn energy_pushforward(
        &self,
        v: &Potential,
        t: impl Fn(f64) -> f64,
        t_prime: impl Fn(f64) -> f64,
        n: usize,
    ) -> f64 {
        let q = self.quadrature(n);
        let ev = q.integrate(|x| v.value(t(x)));
        let el = q.integrate(|x| self.log_potential(x));
        let tx: Vec<f64> = q.nodes.iter().map(|&x| t(x)).collect();
        let mut ed = 0.0;
        for i in 0..q.nodes.len() {
            for j in 0..q.nodes.len() {
                let d = if i == j {
                    t_prime(q.nodes[i])
                } else {
                    (tx[i] - tx[j]) / (q.nodes[i] - q.nodes[j])
                };
                ed += q.weights[i] * q.weights[j] * d.ln();
            }
        }
        ev - 0.5 * self.beta * (el + ed)
    }

    /// `max |β·PV∫dμ/(x−y) − V'(x)|` over interior Gauss nodes.
    pub fn variational_residual(&self, v: &Potential) -> f64 {
        let q = GaussU::new(64);
        q.nodes
            .iter()
            .map(|&s| {
                let x = self.from_unit(s);
                (self.beta * self.hilbert(x) - v.d1(x)).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Minimum of `S` over a fine Chebyshev grid including the endpoints.
    pub fn min_density_factor(&self) -> f64 {
        let m = 4 * self.s_coeffs.len().max(16);
        (0..=m)
            .map(|k| clenshaw_t(&self.s_coeffs, (k as f64 * PI / m as f64).cos()))
            .fold(f64::INFINITY, f64::min)
    }
}

/// The root `w` of `w² − 2sw + 1` with `|w| < 1`, for real `|s| > 1`.
pub(crate) fn exterior_w(s: f64) -> f64 {
    1.0 / (s + s.signum() * (s * s - 1.0).sqrt())
}

/// `Σ c_n w^n`.
pub(crate) fn power_series(c: &[f64], w: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &cn| acc * w + cn)
}

fn moments_from_rule(nodes: &[f64], weights: &[f64], count: usize) -> Vec<f64> {
    let mut m = vec![0.0; count];
    for (&x, &w) in nodes.iter().zip(weights) {
        let mut p = w;
        for mk in m.iter_mut() {
            *mk += p;
            p *= x;
        }
    }
    m
}

/// `F(x) = −∫ (V'(x) − V'(y))/(x − y) dμ(y)` as monomial coefficients.
fn f_polynomial(dv: &[f64], moments: &[f64]) -> Vec<f64> {
    let n = dv.len();
    if n <= 1 {
        return vec![0.0];
    }
    let mut f = vec![0.0; n - 1];
    for (j, fj) in f.iter_mut().enumerate() {
        for k in j + 1..n {
            *fj -= dv[k] * moments[k - 1 - j];
        }
    }
    f
}

/// `P = V'² + 2βF`, whose zeros are the endpoints and which equals
/// `−(βπρ)²` on the support.
fn p_polynomial(v: &Potential, moments: &[f64]) -> Vec<f64> {
    let dv = poly_deriv(v.coeffs());
    let mut p = poly_mul(&dv, &dv);
    poly_axpy(&mut p, 2.0 * v.beta(), &f_polynomial(&dv, moments));
    p
}

/// `V'(x)² + 2βF(x)` for a solved measure.
pub fn endpoint_polynomial(mu: &EquilibriumMeasure, v: &Potential) -> Vec<f64> {
    p_polynomial(v, &mu.moments(v.degree()))
}

/// Solve with default settings.
pub fn solve_equilibrium(v: &Potential) -> Result<EquilibriumMeasure> {
    solve_equilibrium_with(v, &SolverConfig::default())
}

/// Damped fixed-point iteration on `(a, b, S)`.
///
/// Each step computes `P = V'² + 2βF` from the current measure, takes the
/// zeros of `P` enclosing its negative region as the new endpoints and sets
/// `S = √(P/((x−a)(x−b)))/(βπ)` at the Gauss nodes.
pub fn solve_equilibrium_with(v: &Potential, cfg: &SolverConfig) -> Result<EquilibriumMeasure> {
    v.check_confining()?;
    if !(cfg.damping > 0.0 && cfg.damping <= 1.0) || cfg.degree < 2 {
        return Err(Error::Config("invalid solver configuration".into()));
    }
    let beta = v.beta();
    let n = cfg.degree + 1;
    let q = GaussU::new(n);
    let count = v.degree();

    let (c0, r0) = initial_semicircle(v, &q);
    let (mut a, mut b) = (c0 - r0, c0 + r0);
    let mut s_vals = vec![2.0 / (PI * r0 * r0); n];
    let mut movement = f64::INFINITY;
    let mut converged_at = None;

    for it in 0..cfg.max_iterations {
        let r = 0.5 * (b - a);
        let c = 0.5 * (a + b);
        let nodes: Vec<f64> = q.nodes.iter().map(|&s| c + r * s).collect();
        let weights: Vec<f64> = q
            .weights
            .iter()
            .zip(&s_vals)
            .map(|(w, s)| r * r * w * s)
            .collect();
        let p = p_polynomial(v, &moments_from_rule(&nodes, &weights, count));
        let (an, bn) = bracket_endpoints(&p, &nodes, r)?;

        let (q1, _) = poly_deflate(&p, an);
        let (qq, _) = poly_deflate(&q1, bn);
        let rn = 0.5 * (bn - an);
        let cn = 0.5 * (an + bn);
        let scale = 1.0 / (beta * PI);
        let mut new_vals = Vec::with_capacity(n);
        for &s in &q.nodes {
            let s2 = poly_eval(&qq, cn + rn * s);
            if s2 <= 0.0 {
                return Err(Error::Criticality {
                    min_s: -(-s2).sqrt() * scale,
                });
            }
            new_vals.push(s2.sqrt() * scale);
        }
        let mass = rn * rn * q.integrate(&new_vals);
        new_vals.iter_mut().for_each(|s| *s /= mass);

        movement = (an - a).abs().max((bn - b).abs());
        for (o, nv) in s_vals.iter().zip(&new_vals) {
            movement = movement.max((o - nv).abs());
        }
        let d = if it == 0 { 1.0 } else { cfg.damping };
        a += d * (an - a);
        b += d * (bn - b);
        for (o, nv) in s_vals.iter_mut().zip(&new_vals) {
            *o += d * (nv - *o);
        }
        log::trace!("equilibrium iteration {it}: [{a}, {b}] movement {movement:e}");

        if movement < cfg.tolerance && converged_at.is_none() {
            converged_at = Some(it);
        }
        // Keep polishing for a bounded number of extra steps.
        if movement < cfg.polish_tolerance
            || converged_at.is_some_and(|k| it >= k + 40)
        {
            break;
        }
    }
    if converged_at.is_none() {
        return Err(Error::NonConvergence {
            iterations: cfg.max_iterations,
            movement,
        });
    }

    let mut s_coeffs = u_to_t(&q.project_u(&s_vals));
    let cmax = s_coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    while s_coeffs.len() > 1 && s_coeffs.last().is_some_and(|c| c.abs() < 1e-14 * cmax) {
        s_coeffs.pop();
    }
    let mu = EquilibriumMeasure::new(a, b, beta, s_coeffs)?;
    let mass = mu.mass();
    let mu = EquilibriumMeasure::new(
        a,
        b,
        beta,
        mu.s_coeffs.iter().map(|c| c / mass).collect(),
    )?;
    let min_s = mu.min_density_factor();
    if min_s < cfg.density_floor {
        return Err(Error::Criticality { min_s });
    }
    Ok(mu)
}

/// Semicircle centre and radius matching the first two Euler–Lagrange
/// moment conditions `∫V' dμ = 0` and `∫V'(x)(x−c) dμ = β/2`.
fn initial_semicircle(v: &Potential, q: &GaussU) -> (f64, f64) {
    let dv = poly_deriv(v.coeffs());
    let d2 = poly_deriv(&dv);
    // Semicircle averages of a polynomial.
    let avg = |p: &[f64], c: f64, r: f64| -> f64 {
        q.nodes
            .iter()
            .zip(&q.weights)
            .map(|(&s, &w)| w * poly_eval(p, c + r * s))
            .sum::<f64>()
            * 2.0
            / PI
    };
    let virial = |c: f64, r: f64| -> f64 {
        q.nodes
            .iter()
            .zip(&q.weights)
            .map(|(&s, &w)| w * poly_eval(&dv, c + r * s) * r * s)
            .sum::<f64>()
            * 2.0
            / PI
    };
    let target = 0.5 * v.beta();
    let radius = |c: f64| -> f64 {
        let mut hi = 1.0;
        while virial(c, hi) < target && hi < 1e8 {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let m = 0.5 * (lo + hi);
            if virial(c, m) < target {
                lo = m;
            } else {
                hi = m;
            }
        }
        0.5 * (lo + hi)
    };

    let mut c = argmin_polynomial(v.coeffs());
    let mut r = radius(c);
    for _ in 0..100 {
        let c_old = c;
        for _ in 0..50 {
            let e2 = avg(&d2, c, r);
            if e2 <= 0.0 {
                break;
            }
            let step = avg(&dv, c, r) / e2;
            c -= step;
            if step.abs() < 1e-15 * (1.0 + c.abs()) {
                break;
            }
        }
        r = radius(c);
        if (c - c_old).abs() < 1e-13 * (1.0 + c.abs()) {
            break;
        }
    }
    (c, r)
}

/// Global minimiser of a confining polynomial, smallest `|x|` on ties.
fn argmin_polynomial(p: &[f64]) -> f64 {
    let dp = poly_deriv(p);
    let bound = 1.0
        + p.iter().take(p.len() - 1).map(|c| c.abs()).fold(0.0, f64::max) / p[p.len() - 1].abs();
    let m = 4000;
    let mut best: (f64, f64) = (f64::INFINITY, 0.0);
    let mut prev = poly_eval(&dp, -bound);
    for k in 1..=m {
        let x = -bound + 2.0 * bound * k as f64 / m as f64;
        let cur = poly_eval(&dp, x);
        if prev < 0.0 && cur >= 0.0 {
            let xl = x - 2.0 * bound / m as f64;
            let root = bisect(|y| poly_eval(&dp, y), xl, x);
            let val = poly_eval(p, root);
            if val < best.0 - 1e-12 * (1.0 + val.abs())
                || ((val - best.0).abs() <= 1e-12 * (1.0 + val.abs()) && root.abs() < best.1.abs())
            {
                best = (val, root);
            }
        }
        prev = cur;
    }
    best.1
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        if (f(m) < 0.0) == (flo < 0.0) {
            lo = m;
        } else {
            hi = m;
        }
        if hi - lo <= 4.0 * f64::EPSILON * (1.0 + m.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// The two zeros of `p` enclosing the most negative node value.
fn bracket_endpoints(p: &[f64], nodes: &[f64], r: f64) -> Result<(f64, f64)> {
    let (start, pmin) = nodes
        .iter()
        .map(|&x| (x, poly_eval(p, x)))
        .fold((0.0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
    if !(pmin < 0.0) {
        return Err(Error::NoOneCut(format!(
            "V'^2 + 2 beta F is nonnegative on the current support (min {pmin:e})"
        )));
    }
    let dp = poly_deriv(p);
    let mut ends = [0.0; 2];
    for (slot, dir) in ends.iter_mut().zip([-1.0, 1.0]) {
        let mut h = 0.02 * r;
        let mut inner = start;
        let mut outer = start + dir * h;
        let mut found = false;
        for _ in 0..200 {
            if poly_eval(p, outer) > 0.0 {
                found = true;
                break;
            }
            inner = outer;
            h *= 1.3;
            outer += dir * h;
        }
        if !found {
            return Err(Error::NoOneCut(format!(
                "no sign change of V'^2 + 2 beta F {} of {start}",
                if dir < 0.0 { "left" } else { "right" }
            )));
        }
        *slot = safeguarded_root(p, &dp, inner, outer);
    }
    Ok((ends[0], ends[1]))
}

/// Newton's method safeguarded by bisection on a sign-change bracket.
fn safeguarded_root(p: &[f64], dp: &[f64], x0: f64, x1: f64) -> f64 {
    let (mut lo, mut hi) = if poly_eval(p, x0) < 0.0 { (x0, x1) } else { (x1, x0) };
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = poly_eval(p, x);
        if f == 0.0 {
            return x;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = poly_eval(dp, x);
        let mut nx = x - f / d;
        let (l, h) = if lo < hi { (lo, hi) } else { (hi, lo) };
        if !(nx > l && nx < h) || !nx.is_finite() {
            nx = 0.5 * (lo + hi);
        }
        if (nx - x).abs() <= 2.0 * f64::EPSILON * (1.0 + x.abs()) {
            return nx;
        }
        x = nx;
    }
    x
}

/// Diagnostics for the one-cut and confinement hypotheses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub one_cut: bool,
    pub min_density_factor: f64,
    pub effective_potential_ok: bool,
    pub details: String,
}

impl HypothesisReport {
    pub fn passed(&self) -> bool {
        self.one_cut && self.effective_potential_ok
    }
}

/// Check positivity of `S` and that `U_V` is minimal at the endpoints over
/// a geometric exterior grid reaching `10·max(|a|, |b|)`.
pub fn check_hypotheses(mu: &EquilibriumMeasure, v: &Potential) -> HypothesisReport {
    let floor = SolverConfig::default().density_floor;
    let min_s = mu.min_density_factor();
    let one_cut = min_s >= floor;
    let (a, b) = mu.support();
    let reach = 10.0 * a.abs().max(b.abs()).max(1.0);
    let r = mu.half_width();
    let mut violations = Vec::new();
    for (edge, dir) in [(a, -1.0), (b, 1.0)] {
        let u_edge = mu.effective_potential(v, edge);
        let tol = 1e-9 * (1.0 + u_edge.abs());
        let d_min = 1e-6 * r;
        let d_max = (reach - dir * edge).max(2.0 * d_min);
        let ratio = (d_max / d_min).powf(1.0 / 511.0);
        let mut worst = (0.0, f64::INFINITY);
        let mut d = d_min;
        for _ in 0..512 {
            let x = edge + dir * d;
            let gap = mu.effective_potential(v, x) - u_edge;
            if gap < worst.1 {
                worst = (x, gap);
            }
            d *= ratio;
        }
        if worst.1 < -tol {
            violations.push(format!(
                "U_V({:.6}) is below its endpoint value by {:.3e}",
                worst.0, -worst.1
            ));
        }
    }
    let effective_potential_ok = violations.is_empty();
    let mut details = format!("support [{a:.10}, {b:.10}], min S = {min_s:.6e}");
    if !one_cut {
        details.push_str("; density factor below floor");
    }
    for v in &violations {
        details.push_str("; ");
        details.push_str(v);
    }
    HypothesisReport {
        one_cut,
        min_density_factor: min_s,
        effective_potential_ok,
        details,
    }
}

/// `(1−t)μ_0 + tμ_1` for measures on a common support.
pub fn interpolated_measure(
    mu0: &EquilibriumMeasure,
    mu1: &EquilibriumMeasure,
    t: f64,
) -> Result<EquilibriumMeasure> {
    if (mu0.a - mu1.a).abs() > 1e-8 || (mu0.b - mu1.b).abs() > 1e-8 {
        return Err(Error::InvalidInput(format!(
            "supports differ: [{}, {}] vs [{}, {}]",
            mu0.a, mu0.b, mu1.a, mu1.b
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidInput(format!("t = {t} outside [0, 1]")));
    }
    if t == 0.0 {
        return Ok(mu0.clone());
    }
    if t == 1.0 {
        return Ok(mu1.clone());
    }
    let n = mu0.s_coeffs.len().max(mu1.s_coeffs.len());
    let mut c = vec![0.0; n];
    for (i, v) in mu0.s_coeffs.iter().enumerate() {
        c[i] += (1.0 - t) * v;
    }
    for (i, v) in mu1.s_coeffs.iter().enumerate() {
        c[i] += t * v;
    }
    EquilibriumMeasure::new(mu0.a, mu0.b, mu0.beta, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn semicircle_closed_forms() {
        let mu = EquilibriumMeasure::semicircle(0.0, 2.0, 2.0).unwrap();
        assert_abs_diff_eq!(mu.mass(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(mu.cdf(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(mu.quantile(mu.cdf(1.3)), 1.3, epsilon = 1e-12);
        // (z − √(z²−4))/2 at z = 3
        assert_abs_diff_eq!(mu.hilbert(3.0), (3.0 - 5f64.sqrt()) / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(mu.hilbert(0.7), 0.35, epsilon = 1e-15);
        // ∫ log|x−y| dμ = x²/4 − 1/2 on [−2, 2]
        assert_abs_diff_eq!(mu.log_potential(1.0), -0.25, epsilon = 1e-14);
        let x: f64 = 3.0;
        let expect = x * x / 4.0 - x * (x * x - 4.0).sqrt() / 4.0 + ((x + (x * x - 4.0).sqrt()) / 2.0).ln() - 0.5;
        assert_abs_diff_eq!(mu.log_potential(x), expect, epsilon = 1e-14);
    }

    #[test]
    fn f_polynomial_for_gaussian() {
        let v = Potential::gaussian(2.0).unwrap();
        let mu = EquilibriumMeasure::semicircle(0.0, 2.0, 2.0).unwrap();
        let p = endpoint_polynomial(&mu, &v);
        assert_abs_diff_eq!(poly_eval(&p, 2.0), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(poly_eval(&p, 0.0), -4.0, epsilon = 1e-14);
    }

    #[test]
    fn argmin_prefers_central_minimiser() {
        assert_abs_diff_eq!(argmin_polynomial(&[0.0, 0.0, 1.0]), 0.0, epsilon = 1e-12);
        let m = argmin_polynomial(&[0.0, 0.0, -1.0, 0.0, 0.25]);
        assert_abs_diff_eq!(m.abs(), 2f64.sqrt(), epsilon = 1e-9);
    }
}
