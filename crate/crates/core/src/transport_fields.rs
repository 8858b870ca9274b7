//! The ansatz fields `y₀,t`, `z_t`, `y₁,t` and the residual `ℛᴺ_t`.
//!
//! For each time on a Chebyshev–Lobatto grid in `[0, 1]` the fields solve
//!
//! ```text
//! Ξ_t y₀       = −W + c
//! Ξ_t z(·, y)  = (β/2)(y₀(x) − y₀(y))/(x − y) + c(y)
//! Ξ_t y₁       = −(β/2 − 1)(y₀' + ∫∂₁z(u, ·) dμ_t(u)) + c'
//! ```
//!
//! and are tabulated on the box `[a − margin, b + margin]`. Values at
//! intermediate times come from barycentric interpolation in `t`.

use crate::chebyshev::{gauss_legendre, BaryGrid, ChebSeries};
use crate::equilibrium::{endpoint_polynomial, interpolated_measure, EquilibriumMeasure};
use crate::error::{Error, Result};
use crate::master_operator::{RealFn, SupportFunction, XiOperator};
use crate::potentials::{poly_deriv, poly_eval, Potential};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

/// Version tag written into serialized field bundles.
pub const FIELD_BUNDLE_VERSION: u32 = 1;

static EXTRAPOLATION_WARNED: AtomicBool = AtomicBool::new(false);

fn warn_extrapolation(x: f64, lo: f64, hi: f64) {
    if !EXTRAPOLATION_WARNED.swap(true, Ordering::Relaxed) {
        log::warn!(
            "field evaluated at {x}, outside the tabulation box [{lo}, {hi}]; \
             extrapolating with 1/V' decay (further occurrences not reported)"
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldBuildConfig {
    /// Number of Chebyshev–Lobatto times on `[0, 1]`.
    pub n_times: usize,
    /// Fields are tabulated on `[a − box_margin, b + box_margin]`.
    pub box_margin: f64,
    /// Lobatto nodes for `y₀` and `y₁` on the box.
    pub series_nodes: usize,
    /// Lobatto nodes per axis for `z`.
    pub z_nodes: usize,
    /// Gauss–Legendre nodes for the divided difference of `y₀` near the diagonal.
    pub alpha_nodes: usize,
    /// Gauss–U nodes used by each Ξ inversion.
    pub xi_resolution: usize,
    /// Nodes of the quadrature against `μ_t`.
    pub quadrature_nodes: usize,
}

impl Default for FieldBuildConfig {
    fn default() -> Self {
        Self {
            n_times: 17,
            box_margin: 1.0,
            series_nodes: 97,
            z_nodes: 48,
            alpha_nodes: 16,
            xi_resolution: 64,
            quadrature_nodes: 96,
        }
    }
}

impl FieldBuildConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("field build: {what}")));
        if self.n_times < 2 {
            return bad("n_times must be at least 2");
        }
        if !(self.box_margin > 0.0 && self.box_margin.is_finite()) {
            return bad("box_margin must be positive");
        }
        if self.series_nodes < 8 || self.z_nodes < 8 {
            return bad("series_nodes and z_nodes must be at least 8");
        }
        if self.alpha_nodes < 2 || self.xi_resolution < 8 || self.quadrature_nodes < 8 {
            return bad("alpha_nodes, xi_resolution and quadrature_nodes are too small");
        }
        Ok(())
    }
}

/// A Chebyshev series with its first two derivatives.
#[derive(Debug, Clone)]
struct Jet {
    f: ChebSeries,
    d: ChebSeries,
    dd: ChebSeries,
}

impl Jet {
    fn new(f: ChebSeries) -> Self {
        let d = f.derivative();
        let dd = d.derivative();
        Self { f, d, dd }
    }
}

/// `(β/2)(y₀(u) − y₀(y))/(u − y)` as a function of `u`.
struct DividedDifference {
    jet: Arc<Jet>,
    y: f64,
    fy: f64,
    scale: f64,
    near: f64,
    gl: Arc<(Vec<f64>, Vec<f64>)>,
}

impl RealFn for DividedDifference {
    fn eval(&self, u: f64) -> f64 {
        let h = u - self.y;
        if h.abs() < self.near {
            let (xs, ws) = &*self.gl;
            let mut acc = 0.0;
            for (x, w) in xs.iter().zip(ws) {
                let al = 0.5 * (1.0 + x);
                acc += 0.5 * w * self.jet.d.eval(self.y + al * h);
            }
            self.scale * acc
        } else {
            self.scale * (self.jet.f.eval(u) - self.fy) / h
        }
    }

    fn deriv(&self, u: f64) -> f64 {
        let h = u - self.y;
        if h.abs() < self.near {
            let (xs, ws) = &*self.gl;
            let mut acc = 0.0;
            for (x, w) in xs.iter().zip(ws) {
                let al = 0.5 * (1.0 + x);
                acc += 0.5 * w * al * self.jet.dd.eval(self.y + al * h);
            }
            self.scale * acc
        } else {
            let dd = (self.jet.f.eval(u) - self.fy) / h;
            self.scale * (self.jet.d.eval(u) - dd) / h
        }
    }
}

/// `−(β/2 − 1)(y₀'(u) + φ(u))` with `φ` given at the `z` grid nodes.
struct Y1Source {
    jet: Arc<Jet>,
    grid: BaryGrid,
    phi: Vec<f64>,
    prefactor: f64,
}

impl RealFn for Y1Source {
    fn eval(&self, u: f64) -> f64 {
        self.prefactor * (self.jet.d.eval(u) + self.grid.interpolate(&self.phi, u))
    }

    fn deriv(&self, u: f64) -> f64 {
        let m = self.grid.len();
        let (mut v, mut d) = (vec![0.0; m], vec![0.0; m]);
        self.grid.cardinals_with_derivative(u, &mut v, &mut d);
        let dphi: f64 = d.iter().zip(&self.phi).map(|(a, b)| a * b).sum();
        self.prefactor * (self.jet.dd.eval(u) + dphi)
    }
}

/// `(V'(e)/V'(x), d/dx of it)`, or `(1, 0)` when `V'` changes sign.
fn decay(vprime: &[f64], edge: f64, x: f64) -> (f64, f64) {
    let ve = poly_eval(vprime, edge);
    let vx = poly_eval(vprime, x);
    if !(ve * vx > 0.0) {
        return (1.0, 0.0);
    }
    let vpp = poly_eval(&poly_deriv(vprime), x);
    (ve / vx, -ve * vpp / (vx * vx))
}

/// `z(x, y)` on a tensor Lobatto grid over the box, with the constants `c(y)`.
///
/// Beyond the box the first variable decays like `1/V'` from the edge value
/// and the second variable is clamped.
#[derive(Debug, Clone)]
pub struct ZField {
    grid: BaryGrid,
    /// `values[i·m + j] = z(x_i, y_j)`.
    values: Vec<f64>,
    constants: Vec<f64>,
    vprime: Vec<f64>,
}

impl ZField {
    pub fn zero(grid: BaryGrid, vprime: Vec<f64>) -> Self {
        let m = grid.len();
        Self {
            grid,
            values: vec![0.0; m * m],
            constants: vec![0.0; m],
            vprime,
        }
    }

    pub fn grid(&self) -> &BaryGrid {
        &self.grid
    }

    /// Row-major node values `z(x_i, y_j)`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `c(y_j)` at the grid nodes.
    pub fn constants(&self) -> &[f64] {
        &self.constants
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn constant(&self, y: f64) -> f64 {
        self.grid
            .interpolate(&self.constants, y.clamp(self.grid.lo, self.grid.hi))
    }

    pub(crate) fn first_basis(&self, x: f64, val: &mut [f64], der: &mut [f64]) {
        let (lo, hi) = (self.grid.lo, self.grid.hi);
        if x >= lo && x <= hi {
            self.grid.cardinals_with_derivative(x, val, der);
            return;
        }
        warn_extrapolation(x, lo, hi);
        let e = x.clamp(lo, hi);
        self.grid.cardinals(e, val);
        let (q, dq) = decay(&self.vprime, e, x);
        for (v, d) in val.iter_mut().zip(der.iter_mut()) {
            *d = *v * dq;
            *v *= q;
        }
    }

    pub(crate) fn second_basis(&self, y: f64, val: &mut [f64], der: &mut [f64]) {
        let (lo, hi) = (self.grid.lo, self.grid.hi);
        if y >= lo && y <= hi {
            self.grid.cardinals_with_derivative(y, val, der);
        } else {
            warn_extrapolation(y, lo, hi);
            self.grid.cardinals(y.clamp(lo, hi), val);
            der.iter_mut().for_each(|d| *d = 0.0);
        }
    }

    /// `Z·u`.
    pub(crate) fn apply_right(&self, u: &[f64]) -> Vec<f64> {
        let m = self.grid.len();
        (0..m)
            .map(|i| {
                self.values[i * m..(i + 1) * m]
                    .iter()
                    .zip(u)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// `Zᵀ·v`.
    pub(crate) fn apply_left(&self, v: &[f64]) -> Vec<f64> {
        let m = self.grid.len();
        let mut out = vec![0.0; m];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (o, z) in out.iter_mut().zip(&self.values[i * m..(i + 1) * m]) {
                *o += vi * z;
            }
        }
        out
    }

    fn contract(&self, ex: &[f64], ey: &[f64]) -> f64 {
        dot(ex, &self.apply_right(ey))
    }

    fn bases(&self, x: f64, y: f64) -> [Vec<f64>; 4] {
        let m = self.grid.len();
        let mut b = [vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]];
        let [ex, dx, ey, dy] = &mut b;
        self.first_basis(x, ex, dx);
        self.second_basis(y, ey, dy);
        b
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let [ex, _, ey, _] = self.bases(x, y);
        self.contract(&ex, &ey)
    }

    /// `∂₁z(x, y)`.
    pub fn d1(&self, x: f64, y: f64) -> f64 {
        let [_, dx, ey, _] = self.bases(x, y);
        self.contract(&dx, &ey)
    }

    /// `∂₂z(x, y)`.
    pub fn d2(&self, x: f64, y: f64) -> f64 {
        let [ex, _, _, dy] = self.bases(x, y);
        self.contract(&ex, &dy)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `z(·, y)` for fixed `y`.
pub struct ZColumn<'a> {
    pub z: &'a ZField,
    pub y: f64,
}

impl RealFn for ZColumn<'_> {
    fn eval(&self, x: f64) -> f64 {
        self.z.eval(x, self.y)
    }
    fn deriv(&self, x: f64) -> f64 {
        self.z.d1(x, self.y)
    }
}

/// `y₀,t = Ξ_t⁻¹(−W)` with its constant `c`.
pub fn build_y0(op: &XiOperator, w: &Potential) -> Result<(SupportFunction, f64)> {
    op.invert(Arc::new(w.scaled(-1.0)))
}

fn divided_difference(
    jet: &Arc<Jet>,
    y: f64,
    beta: f64,
    near: f64,
    gl: &Arc<(Vec<f64>, Vec<f64>)>,
) -> DividedDifference {
    DividedDifference {
        jet: jet.clone(),
        y,
        fy: jet.f.eval(y),
        scale: 0.5 * beta,
        near,
        gl: gl.clone(),
    }
}

/// `z_t` on `grid × grid`: one inversion of the divided difference of `y₀`
/// per node `y_j`.
pub fn build_z(op: &XiOperator, y0: &ChebSeries, grid: &BaryGrid, alpha_nodes: usize) -> Result<ZField> {
    let vprime = op.potential().derivative_coeffs();
    if y0.coeffs.iter().all(|&c| c == 0.0) {
        return Ok(ZField::zero(grid.clone(), vprime));
    }
    let jet = Arc::new(Jet::new(y0.clone()));
    let gl = Arc::new(gauss_legendre(alpha_nodes));
    let beta = op.measure().beta();
    let near = 1e-2 * op.measure().half_width();
    let columns: Vec<(Vec<f64>, f64)> = grid
        .nodes
        .par_iter()
        .map(|&y| {
            let k = divided_difference(&jet, y, beta, near, &gl);
            let (f, c) = op.invert(Arc::new(k))?;
            Ok((grid.nodes.iter().map(|&x| f.eval(x)).collect(), c))
        })
        .collect::<Result<_>>()?;
    let m = grid.len();
    let mut values = vec![0.0; m * m];
    let mut constants = vec![0.0; m];
    for (j, (col, c)) in columns.into_iter().enumerate() {
        for (i, v) in col.into_iter().enumerate() {
            values[i * m + j] = v;
        }
        constants[j] = c;
    }
    Ok(ZField {
        grid: grid.clone(),
        values,
        constants,
        vprime,
    })
}

/// `(∫ℓ_j dμ, ∫ℓ_j' dμ)` for the cardinal functions of `grid`.
fn measure_weights(mu: &EquilibriumMeasure, grid: &BaryGrid, n: usize) -> (Vec<f64>, Vec<f64>) {
    let q = mu.quadrature(n);
    let m = grid.len();
    let (mut mw, mut dw) = (vec![0.0; m], vec![0.0; m]);
    let (mut v, mut d) = (vec![0.0; m], vec![0.0; m]);
    for (&x, &w) in q.nodes.iter().zip(&q.weights) {
        grid.cardinals_with_derivative(x, &mut v, &mut d);
        for j in 0..m {
            mw[j] += w * v[j];
            dw[j] += w * d[j];
        }
    }
    (mw, dw)
}

/// `φ(y_j) = ∫∂₁z(u, y_j) dμ(u)` from the derivative weights.
fn phi_nodes(z: &ZField, dmu_weights: &[f64]) -> Vec<f64> {
    z.apply_left(dmu_weights)
}

fn y1_source(jet: Arc<Jet>, z: &ZField, dmu_weights: &[f64], beta: f64) -> Y1Source {
    Y1Source {
        jet,
        grid: z.grid.clone(),
        phi: phi_nodes(z, dmu_weights),
        prefactor: -(0.5 * beta - 1.0),
    }
}

/// `y₁,t` with its constant `c'`. Vanishes identically at `β = 2`.
pub fn build_y1(
    op: &XiOperator,
    y0: &ChebSeries,
    z: &ZField,
    quadrature_nodes: usize,
) -> Result<(SupportFunction, f64)> {
    let mu = op.measure();
    let beta = mu.beta();
    if beta == 2.0 || (y0.coeffs.iter().all(|&c| c == 0.0) && z.is_zero()) {
        let (a, b) = mu.support();
        return Ok((SupportFunction::zero(a, b, beta), 0.0));
    }
    let (_, dw) = measure_weights(mu, &z.grid, quadrature_nodes);
    let src = y1_source(Arc::new(Jet::new(y0.clone())), z, &dw, beta);
    op.invert(Arc::new(src))
}

/// Per-time data; everything here is linear in `t` up to the equations
/// themselves, so intermediate times are obtained by combining records.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SliceRecord {
    t: f64,
    /// Chebyshev coefficients of `y₀` and `y₁` on the box.
    y0: Vec<f64>,
    y1: Vec<f64>,
    /// Interior T-coefficients of `y₀` on `[a, b]` and U-coefficients of
    /// `y₀·S`, for the exact exterior rule beyond the box.
    y0_interior: Vec<f64>,
    y0_fs_u: Vec<f64>,
    endpoint_poly: Vec<f64>,
    z: Vec<f64>,
    z_constants: Vec<f64>,
    c: f64,
    c_prime: f64,
    mu_weights: Vec<f64>,
    dmu_weights: Vec<f64>,
}

fn combine(weights: &[f64], parts: &[&[f64]]) -> Vec<f64> {
    let n = parts.iter().map(|p| p.len()).max().unwrap_or(0);
    let mut out = vec![0.0; n];
    for (&w, p) in weights.iter().zip(parts) {
        if w == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(p.iter()) {
            *o += w * v;
        }
    }
    out
}

impl SliceRecord {
    fn combine(t: f64, weights: &[f64], recs: &[&SliceRecord]) -> Self {
        let field = |f: fn(&SliceRecord) -> &[f64]| {
            let parts: Vec<&[f64]> = recs.iter().map(|r| f(r)).collect();
            combine(weights, &parts)
        };
        let scalar = |f: fn(&SliceRecord) -> f64| -> f64 {
            weights.iter().zip(recs).map(|(w, r)| w * f(r)).sum()
        };
        Self {
            t,
            y0: field(|r| &r.y0),
            y1: field(|r| &r.y1),
            y0_interior: field(|r| &r.y0_interior),
            y0_fs_u: field(|r| &r.y0_fs_u),
            endpoint_poly: field(|r| &r.endpoint_poly),
            z: field(|r| &r.z),
            z_constants: field(|r| &r.z_constants),
            c: scalar(|r| r.c),
            c_prime: scalar(|r| r.c_prime),
            mu_weights: field(|r| &r.mu_weights),
            dmu_weights: field(|r| &r.dmu_weights),
        }
    }
}

/// `y₀,t` on ℝ: the box series inside, the exact exterior rule outside.
#[derive(Debug, Clone)]
pub struct Y0Field {
    jet: Jet,
    outer: SupportFunction,
}

impl Y0Field {
    fn inside(&self, x: f64) -> bool {
        self.jet.f.contains(x)
    }

    pub fn value(&self, x: f64) -> f64 {
        if self.inside(x) {
            self.jet.f.eval(x)
        } else {
            self.outer.eval(x)
        }
    }

    pub fn deriv(&self, x: f64) -> f64 {
        if self.inside(x) {
            self.jet.d.eval(x)
        } else {
            self.outer.deriv(x)
        }
    }

    pub fn deriv2(&self, x: f64) -> f64 {
        if self.inside(x) {
            self.jet.dd.eval(x)
        } else {
            let h = 1e-5 * (1.0 + x.abs());
            (self.outer.deriv(x + h) - self.outer.deriv(x - h)) / (2.0 * h)
        }
    }

    /// The tabulated series on the box.
    pub fn series(&self) -> &ChebSeries {
        &self.jet.f
    }
}

/// Shared, time-independent data of a field set.
#[derive(Debug, Clone)]
struct Frame {
    v: Potential,
    w: Potential,
    mu0: EquilibriumMeasure,
    mu1: EquilibriumMeasure,
    lo: f64,
    hi: f64,
    z_grid: BaryGrid,
}

impl Frame {
    fn y0_field(&self, rec: &SliceRecord) -> Y0Field {
        let mu = &self.mu0;
        Y0Field {
            jet: Jet::new(ChebSeries::new(self.lo, self.hi, rec.y0.clone())),
            outer: SupportFunction::from_coefficients(
                mu.support(),
                mu.beta(),
                rec.y0_interior.clone(),
                rec.y0_fs_u.clone(),
                Arc::new(self.w.scaled(-1.0)),
                rec.c,
                rec.endpoint_poly.clone(),
            ),
        }
    }

    fn assemble(&self, rec: SliceRecord) -> FieldSlice {
        let vt = self.v.axpy(rec.t, &self.w);
        let y1 = ChebSeries::new(self.lo, self.hi, rec.y1.clone());
        let y1_d = y1.derivative();
        let z = ZField {
            grid: self.z_grid.clone(),
            values: rec.z.clone(),
            constants: rec.z_constants.clone(),
            vprime: vt.derivative_coeffs(),
        };
        FieldSlice {
            y0: self.y0_field(&rec),
            vt,
            y1,
            y1_d,
            z,
            rec,
        }
    }
}

/// All fields at one time `t`.
#[derive(Debug, Clone)]
pub struct FieldSlice {
    rec: SliceRecord,
    vt: Potential,
    y0: Y0Field,
    y1: ChebSeries,
    y1_d: ChebSeries,
    z: ZField,
}

impl FieldSlice {
    pub fn t(&self) -> f64 {
        self.rec.t
    }

    /// `V_t = V + tW`.
    pub fn potential(&self) -> &Potential {
        &self.vt
    }

    pub fn y0(&self) -> &Y0Field {
        &self.y0
    }

    pub fn y1_series(&self) -> &ChebSeries {
        &self.y1
    }

    pub fn z(&self) -> &ZField {
        &self.z
    }

    /// The constant of the `y₀` equation.
    pub fn c(&self) -> f64 {
        self.rec.c
    }

    /// The constant of the `y₁` equation.
    pub fn c_prime(&self) -> f64 {
        self.rec.c_prime
    }

    /// `∫ℓ_j dμ_t` for the cardinals of the `z` grid.
    pub fn mu_weights(&self) -> &[f64] {
        &self.rec.mu_weights
    }

    fn y1_decay(&self, x: f64) -> (f64, f64) {
        let e = x.clamp(self.y1.lo, self.y1.hi);
        warn_extrapolation(x, self.y1.lo, self.y1.hi);
        let (q, dq) = decay(&self.z.vprime, e, x);
        let v = self.y1.eval(e);
        (v * q, v * dq)
    }

    pub fn y1_value(&self, x: f64) -> f64 {
        if self.y1.contains(x) {
            self.y1.eval(x)
        } else {
            self.y1_decay(x).0
        }
    }

    pub fn y1_deriv(&self, x: f64) -> f64 {
        if self.y1.contains(x) {
            self.y1_d.eval(x)
        } else {
            self.y1_decay(x).1
        }
    }

    /// `∫z(x, y) dμ_t(y)`.
    pub fn z_mean(&self, x: f64) -> f64 {
        let m = self.z.grid.len();
        let (mut ex, mut dx) = (vec![0.0; m], vec![0.0; m]);
        self.z.first_basis(x, &mut ex, &mut dx);
        self.z.contract(&ex, &self.rec.mu_weights)
    }

    /// `(1/N)Σ_j ℓ_j(λ) − ∫ℓ_j dμ_t`, the second-variable pairing with `M_N/N`.
    fn pairing(&self, lambdas: &[f64]) -> Vec<f64> {
        let m = self.z.grid.len();
        let inv_n = 1.0 / lambdas.len() as f64;
        let (mut ey, mut dy) = (vec![0.0; m], vec![0.0; m]);
        let mut u = vec![0.0; m];
        for &l in lambdas {
            self.z.second_basis(l, &mut ey, &mut dy);
            for (a, b) in u.iter_mut().zip(&ey) {
                *a += b;
            }
        }
        for (a, w) in u.iter_mut().zip(&self.rec.mu_weights) {
            *a = *a * inv_n - w;
        }
        u
    }

    /// The components `Yᴺ_i` at a configuration.
    pub fn evaluate(&self, lambdas: &[f64]) -> Vec<f64> {
        if lambdas.is_empty() {
            return Vec::new();
        }
        let m = self.z.grid.len();
        let inv_n = 1.0 / lambdas.len() as f64;
        let zu = self.z.apply_right(&self.pairing(lambdas));
        let (mut ex, mut dx) = (vec![0.0; m], vec![0.0; m]);
        lambdas
            .iter()
            .map(|&l| {
                self.z.first_basis(l, &mut ex, &mut dx);
                self.y0.value(l) + inv_n * self.y1_value(l) + dot(&ex, &zu)
            })
            .collect()
    }

    /// `div Yᴺ = Σ_i ∂Yᴺ_i/∂λ_i`.
    pub fn divergence(&self, lambdas: &[f64]) -> f64 {
        if lambdas.is_empty() {
            return 0.0;
        }
        let m = self.z.grid.len();
        let inv_n = 1.0 / lambdas.len() as f64;
        let zu = self.z.apply_right(&self.pairing(lambdas));
        let (mut ex, mut dx) = (vec![0.0; m], vec![0.0; m]);
        let (mut ey, mut dy) = (vec![0.0; m], vec![0.0; m]);
        let mut acc = 0.0;
        for &l in lambdas {
            self.z.first_basis(l, &mut ex, &mut dx);
            self.z.second_basis(l, &mut ey, &mut dy);
            acc += self.y0.deriv(l) + inv_n * self.y1_deriv(l) + dot(&dx, &zu);
            if !self.z.is_zero() {
                acc += inv_n * self.z.contract(&ex, &dy);
            }
        }
        acc
    }

    fn y1_source(&self, beta: f64) -> Y1Source {
        y1_source(Arc::new(self.y0.jet.clone()), &self.z, &self.rec.dmu_weights, beta)
    }
}

/// One evaluation of `ℛᴺ_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualSample {
    pub value: f64,
    pub n: usize,
    pub t: f64,
}

/// Maximal residuals of the three defining equations at check nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldResiduals {
    pub t: f64,
    pub y0: f64,
    pub z: f64,
    pub y1: f64,
}

impl FieldResiduals {
    pub fn max(&self) -> f64 {
        self.y0.max(self.z).max(self.y1)
    }
}

/// The fields on the whole time grid for a matched pair `(V, W)`.
#[derive(Debug, Clone)]
pub struct TransportFieldSet {
    config: FieldBuildConfig,
    frame: Frame,
    time_grid: BaryGrid,
    slices: Vec<FieldSlice>,
}

#[derive(Serialize, Deserialize)]
struct Bundle {
    version: u32,
    config: FieldBuildConfig,
    v: Potential,
    w: Potential,
    mu0: EquilibriumMeasure,
    mu1: EquilibriumMeasure,
    box_lo: f64,
    box_hi: f64,
    slices: Vec<SliceRecord>,
}

fn build_slice(frame: &Frame, cfg: &FieldBuildConfig, t: f64) -> Result<SliceRecord> {
    let mu = interpolated_measure(&frame.mu0, &frame.mu1, t)?;
    let vt = frame.v.axpy(t, &frame.w);
    let op = XiOperator::with_resolution(&mu, &vt, cfg.xi_resolution)?;
    let (y0f, c) = build_y0(&op, &frame.w)?;
    let y0 = ChebSeries::from_fn(frame.lo, frame.hi, cfg.series_nodes, |x| y0f.eval(x));
    let z = build_z(&op, &y0, &frame.z_grid, cfg.alpha_nodes)?;
    let (y1f, c_prime) = build_y1(&op, &y0, &z, cfg.quadrature_nodes)?;
    let y1 = if y1f.is_zero() {
        vec![0.0]
    } else {
        ChebSeries::from_fn(frame.lo, frame.hi, cfg.series_nodes, |x| y1f.eval(x)).coeffs
    };
    let (mu_weights, dmu_weights) = measure_weights(&mu, &frame.z_grid, cfg.quadrature_nodes);
    log::debug!("fields built at t = {t:.4}: c = {c:.6e}, c' = {c_prime:.6e}");
    Ok(SliceRecord {
        t,
        y0: y0.coeffs,
        y1,
        y0_interior: y0f.interior_coeffs().to_vec(),
        y0_fs_u: y0f.fs_u_coeffs().to_vec(),
        endpoint_poly: endpoint_polynomial(&mu, &vt),
        z: z.values,
        z_constants: z.constants,
        c,
        c_prime,
        mu_weights,
        dmu_weights,
    })
}

fn check_nodes(lo: f64, hi: f64, count: usize, offset: f64) -> Vec<f64> {
    (0..count)
        .map(|k| lo + (hi - lo) * (k as f64 + offset) / count as f64)
        .collect()
}

impl TransportFieldSet {
    /// Build the fields for `V_t = V + tW`, where `mu0 = μ_V` and
    /// `mu1 = μ_{V+W}` share their support.
    pub fn build(
        v: &Potential,
        w: &Potential,
        mu0: &EquilibriumMeasure,
        mu1: &EquilibriumMeasure,
        config: &FieldBuildConfig,
    ) -> Result<Self> {
        config.validate()?;
        v.check_same_beta(w)?;
        if (mu0.beta() - v.beta()).abs() > 1e-12 * v.beta() {
            return Err(Error::Config("measure and potential have different beta".into()));
        }
        interpolated_measure(mu0, mu1, 0.5)?;
        let (a, b) = mu0.support();
        let lo = a - config.box_margin;
        let hi = b + config.box_margin;
        let frame = Frame {
            v: v.clone(),
            w: w.clone(),
            mu0: mu0.clone(),
            mu1: mu1.clone(),
            lo,
            hi,
            z_grid: BaryGrid::new(config.z_nodes, lo, hi),
        };
        let time_grid = BaryGrid::ascending(config.n_times, 0.0, 1.0);
        let started = std::time::Instant::now();
        let records: Vec<SliceRecord> = time_grid
            .nodes
            .par_iter()
            .map(|&t| build_slice(&frame, config, t))
            .collect::<Result<_>>()?;
        log::info!(
            "built transport fields on {} times in {:.2?}",
            records.len(),
            started.elapsed()
        );
        let slices = records.into_iter().map(|r| frame.assemble(r)).collect();
        Ok(Self {
            config: *config,
            frame,
            time_grid,
            slices,
        })
    }

    pub fn config(&self) -> &FieldBuildConfig {
        &self.config
    }

    /// The source potential `V`.
    pub fn source(&self) -> &Potential {
        &self.frame.v
    }

    /// The (matched) perturbation `W`.
    pub fn perturbation(&self) -> &Potential {
        &self.frame.w
    }

    pub fn beta(&self) -> f64 {
        self.frame.v.beta()
    }

    pub fn measure_source(&self) -> &EquilibriumMeasure {
        &self.frame.mu0
    }

    pub fn measure_target(&self) -> &EquilibriumMeasure {
        &self.frame.mu1
    }

    /// `μ_t = (1 − t)μ_0 + tμ_1`.
    pub fn measure_at(&self, t: f64) -> Result<EquilibriumMeasure> {
        interpolated_measure(&self.frame.mu0, &self.frame.mu1, t)
    }

    pub fn potential_at(&self, t: f64) -> Potential {
        self.frame.v.axpy(t, &self.frame.w)
    }

    /// The tabulation box `[a − margin, b + margin]`.
    pub fn tabulation_box(&self) -> (f64, f64) {
        (self.frame.lo, self.frame.hi)
    }

    /// Grid times in increasing order.
    pub fn times(&self) -> &[f64] {
        &self.time_grid.nodes
    }

    pub fn slices(&self) -> &[FieldSlice] {
        &self.slices
    }

    /// True when every tabulated field vanishes.
    pub fn is_trivial(&self) -> bool {
        self.slices.iter().all(|s| {
            s.rec.y0.iter().all(|&c| c == 0.0) && s.rec.y1.iter().all(|&c| c == 0.0) && s.z.is_zero()
        })
    }

    fn time_weights(&self, t: f64) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidInput(format!("time {t} outside [0, 1]")));
        }
        let mut w = vec![0.0; self.time_grid.len()];
        self.time_grid.cardinals(t, &mut w);
        Ok(w)
    }

    fn node_index(w: &[f64]) -> Option<usize> {
        let k = w.iter().position(|&x| x == 1.0)?;
        w.iter()
            .enumerate()
            .all(|(j, &x)| j == k || x == 0.0)
            .then_some(k)
    }

    /// All fields at time `t`.
    pub fn slice_at(&self, t: f64) -> Result<FieldSlice> {
        let w = self.time_weights(t)?;
        if let Some(k) = Self::node_index(&w) {
            return Ok(self.slices[k].clone());
        }
        let recs: Vec<&SliceRecord> = self.slices.iter().map(|s| &s.rec).collect();
        Ok(self.frame.assemble(SliceRecord::combine(t, &w, &recs)))
    }

    /// `y₀,t` alone, cheaper than [`Self::slice_at`].
    pub fn y0_at(&self, t: f64) -> Result<Y0Field> {
        let w = self.time_weights(t)?;
        if let Some(k) = Self::node_index(&w) {
            return Ok(self.slices[k].y0.clone());
        }
        let pick = |f: fn(&SliceRecord) -> &[f64]| {
            let parts: Vec<&[f64]> = self.slices.iter().map(|s| f(&s.rec)).collect();
            combine(&w, &parts)
        };
        let rec = SliceRecord {
            t,
            y0: pick(|r| &r.y0),
            y1: Vec::new(),
            y0_interior: pick(|r| &r.y0_interior),
            y0_fs_u: pick(|r| &r.y0_fs_u),
            endpoint_poly: pick(|r| &r.endpoint_poly),
            z: Vec::new(),
            z_constants: Vec::new(),
            c: w.iter().zip(&self.slices).map(|(a, s)| a * s.rec.c).sum(),
            c_prime: 0.0,
            mu_weights: Vec::new(),
            dmu_weights: Vec::new(),
        };
        Ok(self.frame.y0_field(&rec))
    }

    /// `Yᴺ_{i,t}` at a configuration.
    pub fn evaluate_field(&self, t: f64, i: usize, lambdas: &[f64]) -> Result<f64> {
        if i >= lambdas.len() {
            return Err(Error::IndexOutOfRange(format!(
                "component {i} of a {}-point configuration",
                lambdas.len()
            )));
        }
        Ok(self.slice_at(t)?.evaluate(lambdas)[i])
    }

    /// `ℛᴺ_t` at a configuration, with the centering constant `c_hat`.
    pub fn residual(&self, t: f64, lambdas: &[f64], c_hat: f64) -> Result<ResidualSample> {
        let slice = self.slice_at(t)?;
        self.residual_with(&slice, lambdas, c_hat)
    }

    /// As [`Self::residual`] with a precomputed slice.
    pub fn residual_with(&self, slice: &FieldSlice, lambdas: &[f64], c_hat: f64) -> Result<ResidualSample> {
        let n = lambdas.len();
        let beta = self.beta();
        let y = slice.evaluate(lambdas);
        let mut pairs = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let d = lambdas[i] - lambdas[j];
                if d.abs() < 1e-12 {
                    return Err(Error::DegenerateConfiguration { i, j });
                }
                pairs += (y[i] - y[j]) / d;
            }
        }
        let nf = n as f64;
        let w = &self.frame.w;
        let vt = &slice.vt;
        let mut linear = 0.0;
        for (&l, &yi) in lambdas.iter().zip(&y) {
            linear += w.value(l) + vt.d1(l) * yi;
        }
        let value = c_hat - beta * pairs + nf * linear - slice.divergence(lambdas);
        if !value.is_finite() {
            return Err(Error::InvalidInput("non-finite residual".into()));
        }
        Ok(ResidualSample {
            value,
            n,
            t: slice.t(),
        })
    }

    /// Residuals of the three defining equations at the `k`-th grid time,
    /// measured with an independent Ξ of twice the build resolution on
    /// 12 interior nodes (12×12 for `z`) and 4 exterior nodes.
    pub fn verify_equations(&self, k: usize) -> Result<FieldResiduals> {
        let slice = self
            .slices
            .get(k)
            .ok_or_else(|| Error::IndexOutOfRange(format!("time index {k}")))?;
        let t = slice.t();
        let mu = self.measure_at(t)?;
        let op = XiOperator::with_resolution(&mu, &slice.vt, 2 * self.config.xi_resolution)?;
        let (a, b) = mu.support();
        let beta = mu.beta();
        let xs = check_nodes(a, b, 12, 0.5);
        let ys = check_nodes(a, b, 12, 0.2);
        let margin = self.config.box_margin;
        let mut outer = xs.clone();
        outer.extend([a - 0.8 * margin, a - 0.2 * margin, b + 0.2 * margin, b + 0.8 * margin]);

        let y0 = &slice.y0.jet.f;
        let img = op.apply(y0);
        let w = &self.frame.w;
        let r0 = outer
            .iter()
            .map(|&x| (img.eval(x) + w.value(x) - slice.c()).abs())
            .fold(0.0, f64::max);

        let mut rz = 0.0f64;
        for &yv in &ys {
            let col = ZColumn { z: &slice.z, y: yv };
            let img = op.apply(&col);
            let cy = slice.z.constant(yv);
            let fy = y0.eval(yv);
            for &x in &xs {
                let dd = if (x - yv).abs() < 1e-9 {
                    slice.y0.jet.d.eval(x)
                } else {
                    (y0.eval(x) - fy) / (x - yv)
                };
                rz = rz.max((img.eval(x) - 0.5 * beta * dd - cy).abs());
            }
        }

        let r1 = if slice.rec.y1.iter().all(|&c| c == 0.0) && beta == 2.0 {
            0.0
        } else {
            let src = slice.y1_source(beta);
            let img = op.apply(&slice.y1);
            outer
                .iter()
                .map(|&x| (img.eval(x) - src.eval(x) - slice.c_prime()).abs())
                .fold(0.0, f64::max)
        };
        Ok(FieldResiduals {
            t,
            y0: r0,
            z: rz,
            y1: r1,
        })
    }

    /// [`Self::verify_equations`] at every grid time.
    pub fn verify_all(&self) -> Result<Vec<FieldResiduals>> {
        (0..self.slices.len())
            .into_par_iter()
            .map(|k| self.verify_equations(k))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let bundle = Bundle {
            version: FIELD_BUNDLE_VERSION,
            config: self.config,
            v: self.frame.v.clone(),
            w: self.frame.w.clone(),
            mu0: self.frame.mu0.clone(),
            mu1: self.frame.mu1.clone(),
            box_lo: self.frame.lo,
            box_hi: self.frame.hi,
            slices: self.slices.iter().map(|s| s.rec.clone()).collect(),
        };
        Ok(serde_json::to_string(&bundle)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let b: Bundle = serde_json::from_str(s)?;
        if b.version != FIELD_BUNDLE_VERSION {
            return Err(Error::Config(format!(
                "field bundle version {} is not supported (expected {FIELD_BUNDLE_VERSION})",
                b.version
            )));
        }
        b.config.validate()?;
        let time_grid = BaryGrid::ascending(b.config.n_times, 0.0, 1.0);
        if b.slices.len() != time_grid.len() {
            return Err(Error::Config("field bundle has the wrong number of slices".into()));
        }
        let m = b.config.z_nodes;
        if b.slices.iter().any(|s| s.z.len() != m * m || s.mu_weights.len() != m) {
            return Err(Error::Config("field bundle has malformed z data".into()));
        }
        let frame = Frame {
            v: b.v,
            w: b.w,
            mu0: b.mu0,
            mu1: b.mu1,
            lo: b.box_lo,
            hi: b.box_hi,
            z_grid: BaryGrid::new(m, b.box_lo, b.box_hi),
        };
        let slices = b.slices.into_iter().map(|r| frame.assemble(r)).collect();
        Ok(Self {
            config: b.config,
            frame,
            time_grid,
            slices,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
