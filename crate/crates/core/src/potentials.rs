//! Polynomial confining potentials and affine support matching.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Polynomial potential `Σ c_k x^k` together with the inverse temperature β.
///
/// A `Potential` used as the confining part of a model must satisfy
/// [`Potential::check_confining`]; perturbations `W` need only be finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PotentialRecord")]
pub struct Potential {
    coeffs: Vec<f64>,
    beta: f64,
}

#[derive(Deserialize)]
struct PotentialRecord {
    coeffs: Vec<f64>,
    beta: f64,
}

impl TryFrom<PotentialRecord> for Potential {
    type Error = Error;
    fn try_from(r: PotentialRecord) -> Result<Self> {
        Self::perturbation(r.coeffs, r.beta)
    }
}

impl Potential {
    /// A confining potential: even degree at least 2 with positive leading
    /// coefficient, and β > 0.
    pub fn new(coeffs: Vec<f64>, beta: f64) -> Result<Self> {
        let p = Self::perturbation(coeffs, beta)?;
        p.check_confining()?;
        Ok(p)
    }

    /// An arbitrary finite polynomial, used for perturbations `W`.
    pub fn perturbation(coeffs: Vec<f64>, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!("beta must be positive, got {beta}")));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("non-finite potential coefficient".into()));
        }
        Ok(Self::from_parts(coeffs, beta))
    }

    pub(crate) fn from_parts(mut coeffs: Vec<f64>, beta: f64) -> Self {
        while coeffs.len() > 1 && coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Self { coeffs, beta }
    }

    /// The Gaussian potential `βx²/4`, whose equilibrium measure is the
    /// semicircle on `[-2, 2]`.
    pub fn gaussian(beta: f64) -> Result<Self> {
        Self::new(vec![0.0, 0.0, beta / 4.0], beta)
    }

    pub fn zero(beta: f64) -> Self {
        Self::from_parts(vec![0.0], beta)
    }

    pub fn check_confining(&self) -> Result<()> {
        let d = self.degree();
        if !(self.beta > 0.0) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if d < 2 || d % 2 == 1 {
            return Err(Error::Config(format!(
                "confining potential needs even degree >= 2, got degree {d}"
            )));
        }
        if self.coeffs[d] <= 0.0 {
            return Err(Error::Config(
                "confining potential needs a positive leading coefficient".into(),
            ));
        }
        Ok(())
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// True when every coefficient of positive degree vanishes.
    pub fn is_constant(&self) -> bool {
        self.coeffs.iter().skip(1).all(|&c| c == 0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    /// `d^order V / dx^order` at `x`.
    pub fn evaluate(&self, x: f64, order: usize) -> Result<f64> {
        if order > 4 {
            return Err(Error::UnsupportedOrder(order));
        }
        Ok(self.derivative_at(x, order))
    }

    pub fn value(&self, x: f64) -> f64 {
        poly_eval(&self.coeffs, x)
    }

    pub fn d1(&self, x: f64) -> f64 {
        self.derivative_at(x, 1)
    }

    pub fn d2(&self, x: f64) -> f64 {
        self.derivative_at(x, 2)
    }

    fn derivative_at(&self, x: f64, order: usize) -> f64 {
        let mut acc = 0.0;
        for k in (order..self.coeffs.len()).rev() {
            acc = acc * x + self.coeffs[k] * falling(k, order);
        }
        acc
    }

    /// Coefficients of `V'`.
    pub fn derivative_coeffs(&self) -> Vec<f64> {
        poly_deriv(&self.coeffs)
    }

    /// `V + tW`.
    pub fn interpolate(&self, w: &Potential, t: f64) -> Result<Potential> {
        self.check_same_beta(w)?;
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Config(format!("interpolation time {t} outside [0, 1]")));
        }
        Ok(self.axpy(t, w))
    }

    /// `self + t·other`, no checks.
    pub fn axpy(&self, t: f64, other: &Potential) -> Potential {
        let mut c = self.coeffs.clone();
        poly_axpy(&mut c, t, &other.coeffs);
        Self::from_parts(c, self.beta)
    }

    pub fn scaled(&self, s: f64) -> Potential {
        Self::from_parts(self.coeffs.iter().map(|c| c * s).collect(), self.beta)
    }

    /// `x ↦ V(L(x))`.
    pub fn compose(&self, l: &AffineMap) -> Potential {
        Self::from_parts(poly_compose_affine(&self.coeffs, l.scale, l.shift), self.beta)
    }

    pub fn check_same_beta(&self, other: &Potential) -> Result<()> {
        if (self.beta - other.beta).abs() > 1e-12 * self.beta.abs().max(1.0) {
            return Err(Error::Config(format!(
                "mismatched beta: {} vs {}",
                self.beta, other.beta
            )));
        }
        Ok(())
    }
}

fn falling(k: usize, order: usize) -> f64 {
    (0..order).map(|j| (k - j) as f64).product()
}

/// `x ↦ scale·x + shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub scale: f64,
    pub shift: f64,
}

impl AffineMap {
    pub fn new(scale: f64, shift: f64) -> Result<Self> {
        if scale == 0.0 || !scale.is_finite() || !shift.is_finite() {
            return Err(Error::Config(format!("degenerate affine map scale {scale}")));
        }
        Ok(Self { scale, shift })
    }

    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            shift: 0.0,
        }
    }

    /// The increasing affine map sending `[from.0, from.1]` onto `[to.0, to.1]`.
    pub fn between(from: (f64, f64), to: (f64, f64)) -> Result<Self> {
        for (a, b) in [from, to] {
            if !(b > a) {
                return Err(Error::InvalidSupport { a, b });
            }
        }
        let scale = (to.1 - to.0) / (from.1 - from.0);
        Ok(Self {
            scale,
            shift: to.0 - scale * from.0,
        })
    }

    pub fn apply(&self, x: f64) -> f64 {
        self.scale * x + self.shift
    }

    pub fn inverse(&self) -> Self {
        Self {
            scale: 1.0 / self.scale,
            shift: -self.shift / self.scale,
        }
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &AffineMap) -> Self {
        Self {
            scale: self.scale * other.scale,
            shift: self.scale * other.shift + self.shift,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.scale == 1.0 && self.shift == 0.0
    }
}

/// Affine support matching.
///
/// Returns `L` sending `supp_vw` onto `supp_v` and the matched perturbation
/// `W̃ = V∘L⁻¹ + W∘L⁻¹ − V`, so that `V + W̃` has its equilibrium support on
/// `supp_v`.
pub fn match_supports(
    v: &Potential,
    w: &Potential,
    supp_v: (f64, f64),
    supp_vw: (f64, f64),
) -> Result<(AffineMap, Potential)> {
    v.check_same_beta(w)?;
    let l = AffineMap::between(supp_vw, supp_v)?;
    if l.is_identity() {
        return Ok((l, w.clone()));
    }
    let linv = l.inverse();
    let wt = v.axpy(1.0, w).compose(&linv).axpy(-1.0, v);
    Ok((l, wt))
}

pub fn poly_eval(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ck| acc * x + ck)
}

pub fn poly_deriv(c: &[f64]) -> Vec<f64> {
    if c.len() <= 1 {
        return vec![0.0];
    }
    c.iter()
        .enumerate()
        .skip(1)
        .map(|(k, &ck)| k as f64 * ck)
        .collect()
}

pub fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

/// `a += t·b`, growing `a` as needed.
pub fn poly_axpy(a: &mut Vec<f64>, t: f64, b: &[f64]) {
    if a.len() < b.len() {
        a.resize(b.len(), 0.0);
    }
    for (ai, &bi) in a.iter_mut().zip(b) {
        *ai += t * bi;
    }
}

/// Coefficients of `x ↦ p(s·x + h)`.
pub fn poly_compose_affine(p: &[f64], s: f64, h: f64) -> Vec<f64> {
    let mut out = vec![0.0];
    for &ck in p.iter().rev() {
        out = poly_mul(&out, &[h, s]);
        out[0] += ck;
    }
    out
}

/// Synthetic division by `(x − r)`; returns quotient and remainder.
pub fn poly_deflate(p: &[f64], r: f64) -> (Vec<f64>, f64) {
    let n = p.len();
    if n <= 1 {
        return (vec![0.0], p.first().copied().unwrap_or(0.0));
    }
    let mut q = vec![0.0; n - 1];
    let mut acc = p[n - 1];
    for k in (0..n - 1).rev() {
        q[k] = acc;
        acc = p[k] + acc * r;
    }
    (q, acc)
}
