//! The operator `Ξf(x) = −β∫(f(x)−f(y))/(x−y) dμ(y) + V'(x) f(x)`.
//!
//! On the support `Ξf = β·PV∫ f(y)/(x−y) dμ(y)`, which in the U-basis of
//! `f·S` is `βrπ Σ c_n T_{n+1}`. Off the support `Ξf = βH − fℓ` with
//! `H = ∫ f dμ/(x−·)` and `ℓ = βG − V'`. Inversion follows the airfoil
//! (Tricomi) route on the support and `f = (βH − g − c_g)/ℓ` outside.

use crate::chebyshev::{clenshaw_t, u_to_t, ChebSeries, GaussU};
use crate::equilibrium::{endpoint_polynomial, exterior_w, power_series, EquilibriumMeasure};
use crate::error::{Error, Result};
use crate::potentials::{poly_deriv, poly_eval, Potential};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

/// A real function with a derivative.
pub trait RealFn: Send + Sync {
    fn eval(&self, x: f64) -> f64;
    fn deriv(&self, x: f64) -> f64;
}

impl RealFn for Potential {
    fn eval(&self, x: f64) -> f64 {
        self.value(x)
    }
    fn deriv(&self, x: f64) -> f64 {
        self.d1(x)
    }
}

impl RealFn for ChebSeries {
    fn eval(&self, x: f64) -> f64 {
        ChebSeries::eval(self, x)
    }
    fn deriv(&self, x: f64) -> f64 {
        self.derivative().eval(x)
    }
}

impl<T: RealFn + ?Sized> RealFn for Arc<T> {
    fn eval(&self, x: f64) -> f64 {
        (**self).eval(x)
    }
    fn deriv(&self, x: f64) -> f64 {
        (**self).deriv(x)
    }
}

impl<T: RealFn + ?Sized> RealFn for &T {
    fn eval(&self, x: f64) -> f64 {
        (**self).eval(x)
    }
    fn deriv(&self, x: f64) -> f64 {
        (**self).deriv(x)
    }
}

/// Polynomial in monomial coefficients, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial(pub Vec<f64>);

impl RealFn for Polynomial {
    fn eval(&self, x: f64) -> f64 {
        poly_eval(&self.0, x)
    }
    fn deriv(&self, x: f64) -> f64 {
        poly_eval(&poly_deriv(&self.0), x)
    }
}

/// A function given by a pair of closures.
pub struct FnPair<F, D> {
    pub f: F,
    pub d: D,
}

impl<F, D> RealFn for FnPair<F, D>
where
    F: Fn(f64) -> f64 + Send + Sync,
    D: Fn(f64) -> f64 + Send + Sync,
{
    fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }
    fn deriv(&self, x: f64) -> f64 {
        (self.d)(x)
    }
}

/// `x ↦ Σ c_n U_n((x−c)/r)` on a given support, polynomially continued.
#[derive(Debug, Clone)]
pub struct UPolynomial {
    pub center: f64,
    pub half_width: f64,
    pub coeffs: Vec<f64>,
}

impl RealFn for UPolynomial {
    fn eval(&self, x: f64) -> f64 {
        crate::chebyshev::clenshaw_u(&self.coeffs, (x - self.center) / self.half_width)
    }
    fn deriv(&self, x: f64) -> f64 {
        let t = u_to_t(&self.coeffs);
        clenshaw_t(&crate::chebyshev::t_derivative(&t), (x - self.center) / self.half_width)
            / self.half_width
    }
}

#[derive(Clone)]
struct Exterior {
    g: Arc<dyn RealFn>,
    c_g: f64,
    p: Vec<f64>,
    dp: Vec<f64>,
}

/// A function on ℝ represented by a Chebyshev series on `[a, b]` and the
/// exterior rule `f = (βH − g − c_g)/ℓ`.
#[derive(Clone)]
pub struct SupportFunction {
    a: f64,
    b: f64,
    beta: f64,
    interior: Vec<f64>,
    interior_d: Vec<f64>,
    interior_dd: Vec<f64>,
    /// U-coefficients of `f·S` on `[a, b]`.
    fs_u: Vec<f64>,
    exterior: Option<Exterior>,
}

impl fmt::Debug for SupportFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SupportFunction")
            .field("support", &(self.a, self.b))
            .field("interior", &self.interior)
            .field("c_g", &self.constant())
            .finish()
    }
}

/// Relative width of the endpoint zones in which exterior values and
/// derivatives are taken from the interior Taylor expansion.
const VALUE_ZONE: f64 = 1e-6;
const DERIV_ZONE: f64 = 1e-3;

impl SupportFunction {
    /// The zero function.
    pub fn zero(a: f64, b: f64, beta: f64) -> Self {
        Self {
            a,
            b,
            beta,
            interior: vec![0.0],
            interior_d: vec![0.0],
            interior_dd: vec![0.0],
            fs_u: vec![0.0],
            exterior: None,
        }
    }

    /// Reassemble a function produced by [`XiOperator::invert`] from its
    /// stored pieces: interior T-coefficients, U-coefficients of `f·S`, the
    /// right-hand side `g`, its constant and the polynomial `V'² + 2βF`.
    pub fn from_coefficients(
        support: (f64, f64),
        beta: f64,
        interior: Vec<f64>,
        fs_u: Vec<f64>,
        g: Arc<dyn RealFn>,
        c_g: f64,
        endpoint_poly: Vec<f64>,
    ) -> Self {
        let interior_d = crate::chebyshev::t_derivative(&interior);
        let interior_dd = crate::chebyshev::t_derivative(&interior_d);
        let dp = poly_deriv(&endpoint_poly);
        Self {
            a: support.0,
            b: support.1,
            beta,
            interior,
            interior_d,
            interior_dd,
            fs_u,
            exterior: Some(Exterior {
                g,
                c_g,
                p: endpoint_poly,
                dp,
            }),
        }
    }

    pub fn support(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    /// U-coefficients of `f·S` on `[a, b]`.
    pub fn fs_u_coeffs(&self) -> &[f64] {
        &self.fs_u
    }

    /// The constant `c_g` attached by the inversion that produced `f`.
    pub fn constant(&self) -> f64 {
        self.exterior.as_ref().map_or(0.0, |e| e.c_g)
    }

    /// Chebyshev coefficients of `f` on `[a, b]`.
    pub fn interior_coeffs(&self) -> &[f64] {
        &self.interior
    }

    pub fn is_zero(&self) -> bool {
        self.interior.iter().all(|&c| c == 0.0) && self.exterior.is_none()
    }

    fn r(&self) -> f64 {
        0.5 * (self.b - self.a)
    }

    fn unit(&self, x: f64) -> f64 {
        (2.0 * x - self.a - self.b) / (self.b - self.a)
    }

    fn interior_value(&self, x: f64) -> f64 {
        clenshaw_t(&self.interior, self.unit(x))
    }

    fn interior_deriv(&self, x: f64) -> f64 {
        clenshaw_t(&self.interior_d, self.unit(x)) / self.r()
    }

    fn interior_deriv2(&self, x: f64) -> f64 {
        clenshaw_t(&self.interior_dd, self.unit(x)) / (self.r() * self.r())
    }

    fn nearest_endpoint(&self, x: f64) -> f64 {
        if x < self.a {
            self.a
        } else {
            self.b
        }
    }

    /// `(H(x), H'(x))` for `x` off the support.
    fn h_and_derivative(&self, x: f64) -> (f64, f64) {
        let r = self.r();
        let s = self.unit(x);
        let w = exterior_w(s);
        let q = s.signum() * (s * s - 1.0).sqrt();
        let h = r * PI * w * power_series(&self.fs_u, w);
        let mut acc = 0.0;
        for (n, c) in self.fs_u.iter().enumerate().rev() {
            acc = acc * w + (n + 1) as f64 * c;
        }
        // d/dx w^{n+1} = (n+1) w^n · (−w/q) / r
        let dh = PI * acc * (-w / q);
        (h, dh)
    }

    fn ell(ext: &Exterior, x: f64, center: f64) -> (f64, f64) {
        let p = poly_eval(&ext.p, x).max(0.0);
        let sq = p.sqrt();
        let sgn = if x > center { 1.0 } else { -1.0 };
        let dl = if sq > 0.0 {
            -sgn * poly_eval(&ext.dp, x) / (2.0 * sq)
        } else {
            0.0
        };
        (-sgn * sq, dl)
    }

    fn exterior_value(&self, ext: &Exterior, x: f64) -> f64 {
        let (h, _) = self.h_and_derivative(x);
        let k = self.beta * h - ext.g.eval(x) - ext.c_g;
        let (l, _) = Self::ell(ext, x, 0.5 * (self.a + self.b));
        k / l
    }
}

impl RealFn for SupportFunction {
    fn eval(&self, x: f64) -> f64 {
        if x >= self.a && x <= self.b {
            return self.interior_value(x);
        }
        let e = self.nearest_endpoint(x);
        let ext = match &self.exterior {
            Some(ext) if (x - e).abs() >= VALUE_ZONE * self.r() => ext,
            Some(_) => return self.interior_value(e) + self.interior_deriv(e) * (x - e),
            None => return 0.0,
        };
        self.exterior_value(ext, x)
    }

    fn deriv(&self, x: f64) -> f64 {
        if x >= self.a && x <= self.b {
            return self.interior_deriv(x);
        }
        let e = self.nearest_endpoint(x);
        let ext = match &self.exterior {
            Some(ext) if (x - e).abs() >= DERIV_ZONE * self.r() => ext,
            Some(_) => return self.interior_deriv(e) + self.interior_deriv2(e) * (x - e),
            None => return 0.0,
        };
        let (h, dh) = self.h_and_derivative(x);
        let k = self.beta * h - ext.g.eval(x) - ext.c_g;
        let dk = self.beta * dh - ext.g.deriv(x);
        let (l, dl) = Self::ell(ext, x, 0.5 * (self.a + self.b));
        let f = k / l;
        (dk - f * dl) / l
    }
}

/// `Ξ` for a fixed `(μ, V)` pair with precomputed quadrature data.
#[derive(Debug, Clone)]
pub struct XiOperator {
    mu: EquilibriumMeasure,
    v: Potential,
    quad: GaussU,
    nodes: Vec<f64>,
    s_nodes: Vec<f64>,
    p: Vec<f64>,
    dp: Vec<f64>,
}

/// Default number of Gauss–U nodes used by [`XiOperator`].
pub const DEFAULT_RESOLUTION: usize = 64;

impl XiOperator {
    pub fn new(mu: &EquilibriumMeasure, v: &Potential) -> Result<Self> {
        Self::with_resolution(mu, v, DEFAULT_RESOLUTION)
    }

    pub fn with_resolution(mu: &EquilibriumMeasure, v: &Potential, n: usize) -> Result<Self> {
        if (mu.beta() - v.beta()).abs() > 1e-12 * v.beta() {
            return Err(Error::Config("measure and potential have different beta".into()));
        }
        if n < 4 {
            return Err(Error::Config(format!("resolution {n} too small")));
        }
        let quad = GaussU::new(n);
        let nodes: Vec<f64> = quad.nodes.iter().map(|&s| mu.from_unit(s)).collect();
        let s_nodes: Vec<f64> = nodes.iter().map(|&x| mu.density_factor(x)).collect();
        let min_s = s_nodes.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_s < 1e-8 {
            return Err(Error::Criticality { min_s });
        }
        let p = endpoint_polynomial(mu, v);
        let dp = poly_deriv(&p);
        let op = Self {
            mu: mu.clone(),
            v: v.clone(),
            quad,
            nodes,
            s_nodes,
            p,
            dp,
        };
        op.check_exterior_factor()?;
        Ok(op)
    }

    pub fn measure(&self) -> &EquilibriumMeasure {
        &self.mu
    }

    pub fn potential(&self) -> &Potential {
        &self.v
    }

    pub fn resolution(&self) -> usize {
        self.quad.len()
    }

    /// Gauss–U nodes on the support used by the inversion.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// `ℓ(x) = βG(x) − V'(x)` off the support, from `−sgn·√(V'² + 2βF)`.
    pub fn ell(&self, x: f64) -> Result<f64> {
        if self.mu.contains(x) {
            return Err(Error::Domain(x));
        }
        let p = poly_eval(&self.p, x);
        if p < 0.0 {
            log::warn!("V'^2 + 2 beta F = {p:e} < 0 at {x}; clamped to zero");
        }
        let sgn = if x > self.mu.center() { 1.0 } else { -1.0 };
        Ok(-sgn * p.max(0.0).sqrt())
    }

    fn check_exterior_factor(&self) -> Result<()> {
        let (a, b) = self.mu.support();
        let r = self.mu.half_width();
        let reach = 10.0 * a.abs().max(b.abs()).max(1.0);
        for (edge, dir) in [(a, -1.0), (b, 1.0)] {
            let d_min = 1e-3 * r;
            let d_max = (reach - dir * edge).max(2.0 * d_min);
            let ratio = (d_max / d_min).powf(1.0 / 511.0);
            let mut d = d_min;
            for _ in 0..512 {
                let x = edge + dir * d;
                if poly_eval(&self.p, x) <= 0.0 {
                    return Err(Error::NoOneCut(format!("exterior factor vanishes near {x}")));
                }
                d *= ratio;
            }
        }
        Ok(())
    }

    /// U-coefficients of `f·S` from values of `f` at the nodes.
    fn fs_coeffs(&self, f_nodes: &[f64]) -> Vec<f64> {
        let vals: Vec<f64> = f_nodes.iter().zip(&self.s_nodes).map(|(f, s)| f * s).collect();
        self.quad.project_u(&vals)
    }

    /// `Ξf` as a function on ℝ.
    pub fn apply<'a>(&'a self, f: &'a dyn RealFn) -> XiImage<'a> {
        let vals: Vec<f64> = self.nodes.iter().map(|&x| f.eval(x)).collect();
        XiImage {
            op: self,
            f,
            fs_u: self.fs_coeffs(&vals),
        }
    }

    /// `h₀(x) = ∫ √((y−a)(b−y)) (g(y) − g(x))/(y − x) dy`.
    pub fn h0(&self, g: &dyn RealFn, x: f64) -> f64 {
        let vals: Vec<f64> = self.nodes.iter().map(|&y| g.eval(y)).collect();
        self.h0_with(g, &vals, x)
    }

    fn h0_with(&self, g: &dyn RealFn, g_nodes: &[f64], x: f64) -> f64 {
        let r = self.mu.half_width();
        let gx = g.eval(x);
        let tol = 1e-9 * r;
        let mut acc = 0.0;
        for ((&y, &gy), &w) in self.nodes.iter().zip(g_nodes).zip(&self.quad.weights) {
            let dd = if (y - x).abs() < tol {
                g.deriv(0.5 * (x + y))
            } else {
                (gy - gx) / (y - x)
            };
            acc += w * dd;
        }
        r * r * acc
    }

    /// Solve `Ξf = g + c_g` on ℝ.
    pub fn invert(&self, g: Arc<dyn RealFn>) -> Result<(SupportFunction, f64)> {
        let (a, b) = self.mu.support();
        let r = self.mu.half_width();
        let c = self.mu.center();
        let beta = self.mu.beta();
        let n = self.nodes.len();

        let g_nodes: Vec<f64> = self.nodes.iter().map(|&x| g.eval(x)).collect();
        let dg_nodes: Vec<f64> = self.nodes.iter().map(|&x| g.deriv(x)).collect();
        let mut h0 = vec![0.0; n];
        for k in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                let dd = if j == k {
                    dg_nodes[k]
                } else {
                    (g_nodes[j] - g_nodes[k]) / (self.nodes[j] - self.nodes[k])
                };
                acc += self.quad.weights[j] * dd;
            }
            h0[k] = r * r * acc;
        }
        let (ga, gb) = (g.eval(a), g.eval(b));
        let h0a = self.h0_with(g.as_ref(), &g_nodes, a);
        let h0b = self.h0_with(g.as_ref(), &g_nodes, b);

        // h(x) = h₀(x) − π(x − c)(g(x) + c_g) + c₂ vanishes at a and b.
        let c_g = (h0b - h0a) / (2.0 * PI * r) - 0.5 * (ga + gb);
        let c2 = -h0a - PI * r * (ga + c_g);
        let ha = h0a + PI * r * (ga + c_g) + c2;
        let hb = h0b - PI * r * (gb + c_g) + c2;
        let scale = 1.0 + h0a.abs().max(h0b.abs()) + PI * r * (ga + c_g).abs().max((gb + c_g).abs());
        let resid = ha.abs().max(hb.abs()) / scale;
        if !(resid <= 1e-8) {
            return Err(Error::InversionFailure(resid));
        }

        let f_nodes: Vec<f64> = (0..n)
            .map(|k| {
                let x = self.nodes[k];
                let h = h0[k] - PI * (x - c) * (g_nodes[k] + c_g) + c2;
                h / (beta * PI * PI * (x - a) * (b - x) * self.s_nodes[k])
            })
            .collect();
        if f_nodes.iter().any(|v| !v.is_finite()) {
            return Err(Error::InversionFailure(f64::NAN));
        }

        let interior = u_to_t(&self.quad.project_u(&f_nodes));
        let interior_d = crate::chebyshev::t_derivative(&interior);
        let interior_dd = crate::chebyshev::t_derivative(&interior_d);
        let f = SupportFunction {
            a,
            b,
            beta,
            interior,
            interior_d,
            interior_dd,
            fs_u: self.fs_coeffs(&f_nodes),
            exterior: Some(Exterior {
                g,
                c_g,
                p: self.p.clone(),
                dp: self.dp.clone(),
            }),
        };
        Ok((f, c_g))
    }
}

/// `Ξf` for a fixed `f`, evaluable on ℝ.
pub struct XiImage<'a> {
    op: &'a XiOperator,
    f: &'a dyn RealFn,
    fs_u: Vec<f64>,
}

impl XiImage<'_> {
    pub fn eval(&self, x: f64) -> f64 {
        let mu = &self.op.mu;
        let beta = mu.beta();
        let r = mu.half_width();
        let s = mu.to_unit(x);
        let fx = self.f.eval(x);
        let h = if s.abs() <= 1.0 {
            let mut shifted = Vec::with_capacity(self.fs_u.len() + 1);
            shifted.push(0.0);
            shifted.extend_from_slice(&self.fs_u);
            r * PI * clenshaw_t(&shifted, s)
        } else {
            let w = exterior_w(s);
            r * PI * w * power_series(&self.fs_u, w)
        };
        beta * h - fx * (beta * mu.hilbert(x) - self.op.v.d1(x))
    }
}

/// `Ξf` on ℝ.
pub fn apply_xi<'a>(f: &'a dyn RealFn, op: &'a XiOperator) -> XiImage<'a> {
    op.apply(f)
}

/// Solve `Ξf = g + c_g`, returning `(f, c_g)`.
pub fn invert_xi(
    g: Arc<dyn RealFn>,
    mu: &EquilibriumMeasure,
    v: &Potential,
) -> Result<(SupportFunction, f64)> {
    XiOperator::new(mu, v)?.invert(g)
}

/// `h₀` on `[a, b]` as a Chebyshev series of the given degree.
pub fn airfoil_h0(g: &dyn RealFn, support: (f64, f64), degree: usize) -> Result<ChebSeries> {
    let (a, b) = support;
    if !(b > a) {
        return Err(Error::InvalidSupport { a, b });
    }
    let quad = GaussU::new(degree.max(8) + 8);
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let ys: Vec<f64> = quad.nodes.iter().map(|s| c + r * s).collect();
    let gy: Vec<f64> = ys.iter().map(|&y| g.eval(y)).collect();
    let h0 = |x: f64| {
        let gx = g.eval(x);
        let mut acc = 0.0;
        for ((&y, &v), &w) in ys.iter().zip(&gy).zip(&quad.weights) {
            let dd = if (y - x).abs() < 1e-9 * r {
                g.deriv(0.5 * (x + y))
            } else {
                (v - gx) / (y - x)
            };
            acc += w * dd;
        }
        r * r * acc
    };
    Ok(ChebSeries::from_fn(a, b, degree + 1, h0))
}

/// `ℓ(x)` off the support.
pub fn exterior_ell(mu: &EquilibriumMeasure, v: &Potential, x: f64) -> Result<f64> {
    if mu.contains(x) {
        return Err(Error::Domain(x));
    }
    let p = poly_eval(&endpoint_polynomial(mu, v), x);
    if p < 0.0 {
        log::warn!("V'^2 + 2 beta F = {p:e} < 0 at {x}; clamped to zero");
    }
    let sgn = if x > mu.center() { 1.0 } else { -1.0 };
    Ok(-sgn * p.max(0.0).sqrt())
}

/// Values of `ℓ` on an exterior grid.
#[derive(Debug, Clone)]
pub struct ExteriorFactor {
    pub xs: Vec<f64>,
    pub values: Vec<f64>,
}

impl ExteriorFactor {
    pub fn sample(op: &XiOperator, xs: &[f64]) -> Result<Self> {
        let values = xs.iter().map(|&x| op.ell(x)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            xs: xs.to_vec(),
            values,
        })
    }

    pub fn nonvanishing(&self) -> bool {
        self.values.iter().all(|&v| v != 0.0)
    }
}
