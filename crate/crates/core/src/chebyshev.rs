//! Chebyshev machinery shared by the equilibrium solver and the Ξ operator.
//!
//! Two node families are used. Functions living on a support `[a, b]` are
//! sampled at the zeros of `U_n` (Gauss–Chebyshev nodes of the second kind),
//! where the square-root weight `√((x−a)(b−x))` is exactly the quadrature
//! weight. Functions on wider boxes are sampled at Chebyshev–Lobatto points
//! and interpolated barycentrically.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Gauss quadrature for `∫₋₁¹ h(s) √(1−s²) ds` with `n` nodes.
///
/// Exact for polynomials of degree `≤ 2n − 1`. Nodes are `cos(kπ/(n+1))`,
/// `k = 1..=n`, in decreasing order.
#[derive(Debug, Clone)]
pub struct GaussU {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    thetas: Vec<f64>,
}

impl GaussU {
    pub fn new(n: usize) -> Self {
        assert!(n > 0);
        let h = PI / (n + 1) as f64;
        let thetas: Vec<f64> = (1..=n).map(|k| k as f64 * h).collect();
        let nodes = thetas.iter().map(|t| t.cos()).collect();
        let weights = thetas.iter().map(|t| h * t.sin().powi(2)).collect();
        Self {
            nodes,
            weights,
            thetas,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Coefficients `c_m`, `m < n`, of the degree-`n−1` interpolant
    /// `Σ c_m U_m` through `values` given at the nodes.
    pub fn project_u(&self, values: &[f64]) -> Vec<f64> {
        assert_eq!(values.len(), self.len());
        let n = self.len();
        let mut out = vec![0.0; n];
        for (k, (&th, &v)) in self.thetas.iter().zip(values).enumerate() {
            // U_m(cos θ) sin²θ = sin((m+1)θ) sin θ
            let wv = self.weights[k] * v / th.sin();
            for (m, c) in out.iter_mut().enumerate() {
                *c += wv * ((m + 1) as f64 * th).sin();
            }
        }
        for c in &mut out {
            *c *= 2.0 / PI;
        }
        out
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

/// `Σ c_k T_k(s)` by Clenshaw's recurrence.
pub fn clenshaw_t(c: &[f64], s: f64) -> f64 {
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for &ck in c.iter().skip(1).rev() {
        let b0 = 2.0 * s * b1 - b2 + ck;
        b2 = b1;
        b1 = b0;
    }
    match c.first() {
        Some(&c0) => s * b1 - b2 + c0,
        None => 0.0,
    }
}

/// `Σ c_k U_k(s)` by Clenshaw's recurrence.
pub fn clenshaw_u(c: &[f64], s: f64) -> f64 {
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for &ck in c.iter().rev() {
        let b0 = 2.0 * s * b1 - b2 + ck;
        b2 = b1;
        b1 = b0;
    }
    b1
}

/// Rewrite a `U`-series in the `T` basis.
pub fn u_to_t(u: &[f64]) -> Vec<f64> {
    let mut t = vec![0.0; u.len()];
    for (n, &c) in u.iter().enumerate() {
        // U_n = 2(T_n + T_{n-2} + ...) with the T_0 term counted once.
        let mut j = n as isize;
        while j >= 0 {
            if j == 0 {
                t[0] += c;
            } else {
                t[j as usize] += 2.0 * c;
            }
            j -= 2;
        }
    }
    t
}

/// Rewrite a `T`-series in the `U` basis.
pub fn t_to_u(t: &[f64]) -> Vec<f64> {
    let mut u = vec![0.0; t.len()];
    for (n, &c) in t.iter().enumerate() {
        match n {
            0 => u[0] += c,
            1 => u[1] += 0.5 * c,
            _ => {
                u[n] += 0.5 * c;
                u[n - 2] -= 0.5 * c;
            }
        }
    }
    u
}

/// Derivative of `Σ c_k T_k(s)` with respect to `s`, as a `T`-series.
pub fn t_derivative(c: &[f64]) -> Vec<f64> {
    let n = c.len();
    if n <= 1 {
        return vec![0.0];
    }
    let mut d = vec![0.0; n + 1];
    for k in (1..n).rev() {
        d[k - 1] = d[k + 1] + 2.0 * k as f64 * c[k];
    }
    d[0] *= 0.5;
    d.truncate(n - 1);
    d
}

/// Chebyshev–Lobatto points `center + half·cos(jπ/(m−1))`, decreasing.
pub fn lobatto_points(m: usize, lo: f64, hi: f64) -> Vec<f64> {
    assert!(m >= 2);
    let c = 0.5 * (lo + hi);
    let h = 0.5 * (hi - lo);
    (0..m)
        .map(|j| c + h * (j as f64 * PI / (m - 1) as f64).cos())
        .collect()
}

/// A truncated Chebyshev series on an interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChebSeries {
    pub lo: f64,
    pub hi: f64,
    pub coeffs: Vec<f64>,
}

impl ChebSeries {
    pub fn new(lo: f64, hi: f64, coeffs: Vec<f64>) -> Self {
        Self { lo, hi, coeffs }
    }

    pub fn zero(lo: f64, hi: f64) -> Self {
        Self::new(lo, hi, vec![0.0])
    }

    /// Interpolate `f` at `m` Lobatto points.
    pub fn from_fn(lo: f64, hi: f64, m: usize, f: impl Fn(f64) -> f64) -> Self {
        let values: Vec<f64> = lobatto_points(m, lo, hi).into_iter().map(f).collect();
        Self::from_lobatto_values(lo, hi, &values)
    }

    /// Interpolant through values given at [`lobatto_points`].
    pub fn from_lobatto_values(lo: f64, hi: f64, values: &[f64]) -> Self {
        let m = values.len();
        assert!(m >= 2);
        let deg = m - 1;
        let mut coeffs = vec![0.0; m];
        for (k, ck) in coeffs.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, &v) in values.iter().enumerate() {
                let w = if j == 0 || j == deg { 0.5 } else { 1.0 };
                acc += w * v * ((j * k) as f64 * PI / deg as f64).cos();
            }
            *ck = 2.0 * acc / deg as f64;
        }
        coeffs[0] *= 0.5;
        coeffs[deg] *= 0.5;
        Self::new(lo, hi, coeffs)
    }

    #[inline]
    pub fn to_unit(&self, x: f64) -> f64 {
        (2.0 * x - self.lo - self.hi) / (self.hi - self.lo)
    }

    pub fn eval(&self, x: f64) -> f64 {
        clenshaw_t(&self.coeffs, self.to_unit(x))
    }

    pub fn derivative(&self) -> Self {
        let scale = 2.0 / (self.hi - self.lo);
        let coeffs = t_derivative(&self.coeffs)
            .into_iter()
            .map(|c| c * scale)
            .collect();
        Self::new(self.lo, self.hi, coeffs)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// `self * a + other * b` on a common interval.
    pub fn axpby(&self, a: f64, other: &Self, b: f64) -> Self {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut coeffs = vec![0.0; n];
        for (i, c) in self.coeffs.iter().enumerate() {
            coeffs[i] += a * c;
        }
        for (i, c) in other.coeffs.iter().enumerate() {
            coeffs[i] += b * c;
        }
        Self::new(self.lo, self.hi, coeffs)
    }
}

/// Barycentric interpolation on Chebyshev–Lobatto points.
#[derive(Debug, Clone, PartialEq)]
pub struct BaryGrid {
    pub lo: f64,
    pub hi: f64,
    pub nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl BaryGrid {
    pub fn new(m: usize, lo: f64, hi: f64) -> Self {
        let nodes = lobatto_points(m, lo, hi);
        let weights = (0..m)
            .map(|j| {
                let s = if j % 2 == 0 { 1.0 } else { -1.0 };
                if j == 0 || j == m - 1 {
                    0.5 * s
                } else {
                    s
                }
            })
            .collect();
        Self {
            lo,
            hi,
            nodes,
            weights,
        }
    }

    /// The same grid with nodes in increasing order.
    pub fn ascending(m: usize, lo: f64, hi: f64) -> Self {
        let mut g = Self::new(m, lo, hi);
        g.nodes.reverse();
        g.weights.reverse();
        g
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    fn hit(&self, x: f64) -> Option<usize> {
        let tol = 1e-14 * (self.hi - self.lo);
        self.nodes.iter().position(|&xj| (x - xj).abs() <= tol)
    }

    /// Lagrange cardinal values `ℓ_j(x)`.
    pub fn cardinals(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.len());
        if let Some(j) = self.hit(x) {
            out.iter_mut().for_each(|v| *v = 0.0);
            out[j] = 1.0;
            return;
        }
        let mut denom = 0.0;
        for ((o, &xj), &wj) in out.iter_mut().zip(&self.nodes).zip(&self.weights) {
            *o = wj / (x - xj);
            denom += *o;
        }
        out.iter_mut().for_each(|v| *v /= denom);
    }

    /// Cardinal values and their derivatives `ℓ_j'(x)`.
    pub fn cardinals_with_derivative(&self, x: f64, val: &mut [f64], der: &mut [f64]) {
        let m = self.len();
        if let Some(j) = self.hit(x) {
            val.iter_mut().for_each(|v| *v = 0.0);
            val[j] = 1.0;
            // Row j of the barycentric differentiation matrix.
            let mut diag = 0.0;
            for k in 0..m {
                if k == j {
                    continue;
                }
                let d = (self.weights[k] / self.weights[j]) / (self.nodes[j] - self.nodes[k]);
                der[k] = d;
                diag -= d;
            }
            der[j] = diag;
            return;
        }
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for k in 0..m {
            let r = 1.0 / (x - self.nodes[k]);
            let q = self.weights[k] * r;
            val[k] = q;
            der[k] = -q * r;
            d0 += q;
            d1 -= q * r;
        }
        for k in 0..m {
            let q = val[k];
            der[k] = (der[k] * d0 - q * d1) / (d0 * d0);
            val[k] = q / d0;
        }
    }

    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let mut c = vec![0.0; self.len()];
        self.cardinals(x, &mut c);
        c.iter().zip(values).map(|(a, b)| a * b).sum()
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}
