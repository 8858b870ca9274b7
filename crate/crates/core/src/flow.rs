//! The scalar flow `X₀,t`, the linear correction `X₁,tᴺ`, and the assembled
//! approximate transport map `Tᴺ = L⁻¹∘(X₀,₁ + X₁,₁ᴺ/N)`.

use crate::equilibrium::{solve_equilibrium, EquilibriumMeasure};
use crate::error::{Error, Result};
use crate::ode::{dopri45, OdeOptions};
use crate::potentials::{match_supports, AffineMap, Potential};
use crate::samplers::EigenSample;
use crate::transport_fields::{FieldBuildConfig, TransportFieldSet};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

static OUTSIDE_TABLE: AtomicBool = AtomicBool::new(false);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    /// Equispaced nodes of the `X₀,₁` table over the tabulation box.
    pub table_nodes: usize,
    pub scalar_rtol: f64,
    pub scalar_atol: f64,
    pub correction_rtol: f64,
    pub correction_atol: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            table_nodes: 512,
            scalar_rtol: 1e-10,
            scalar_atol: 1e-12,
            correction_rtol: 1e-8,
            correction_atol: 1e-10,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.table_nodes < 2 {
            return Err(Error::Config("table_nodes must be at least 2".into()));
        }
        for (name, v) in [
            ("scalar_rtol", self.scalar_rtol),
            ("scalar_atol", self.scalar_atol),
            ("correction_rtol", self.correction_rtol),
            ("correction_atol", self.correction_atol),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        Ok(())
    }

    fn scalar_options(&self) -> OdeOptions {
        OdeOptions::with_tolerances(self.scalar_rtol, self.scalar_atol)
    }

    fn correction_options(&self) -> OdeOptions {
        OdeOptions::with_tolerances(self.correction_rtol, self.correction_atol)
    }
}

/// A source potential, a perturbation, and everything support matching needs.
#[derive(Debug, Clone)]
pub struct MatchedPair {
    pub source: Potential,
    /// The perturbation `W` as given.
    pub perturbation: Potential,
    /// `W̃`, for which `V + W̃` has the support of `μ_V`.
    pub matched: Potential,
    /// `L`, sending the support of `μ_{V+W}` onto the support of `μ_V`.
    pub matching: AffineMap,
    pub mu_source: EquilibriumMeasure,
    /// `μ_{V+W}`.
    pub mu_target: EquilibriumMeasure,
    /// `μ_{V+W̃}`.
    pub mu_matched: EquilibriumMeasure,
}

impl MatchedPair {
    pub fn new(v: &Potential, w: &Potential) -> Result<Self> {
        v.check_same_beta(w)?;
        let mu_source = solve_equilibrium(v)?;
        let mu_target = solve_equilibrium(&v.axpy(1.0, w))?;
        let (matching, matched) = match_supports(v, w, mu_source.support(), mu_target.support())?;
        let mu_matched = solve_equilibrium(&v.axpy(1.0, &matched))?;
        Ok(Self {
            source: v.clone(),
            perturbation: w.clone(),
            matched,
            matching,
            mu_source,
            mu_target,
            mu_matched,
        })
    }

    pub fn build_fields(&self, cfg: &FieldBuildConfig) -> Result<TransportFieldSet> {
        TransportFieldSet::build(&self.source, &self.matched, &self.mu_source, &self.mu_matched, cfg)
    }
}

/// `X₀,₁(λ)` and `X₀,₁'(λ)` by integrating the flow of `y₀,t` and its
/// variational equation.
pub fn flow_scalar(fields: &TransportFieldSet, lambda: f64) -> Result<(f64, f64)> {
    flow_scalar_with(fields, lambda, &FlowConfig::default().scalar_options())
}

fn flow_scalar_with(fields: &TransportFieldSet, lambda: f64, opts: &OdeOptions) -> Result<(f64, f64)> {
    if !lambda.is_finite() {
        return Err(Error::Domain(lambda));
    }
    if fields.is_trivial() {
        return Ok((lambda, 1.0));
    }
    let mut y = [lambda, 1.0];
    let mut failure = None;
    dopri45(
        |t, s, d| match fields.y0_at(t) {
            Ok(f) => {
                d[0] = f.value(s[0]);
                d[1] = f.deriv(s[0]) * s[1];
            }
            Err(e) => {
                failure.get_or_insert(e);
                d.iter_mut().for_each(|v| *v = 0.0);
            }
        },
        0.0,
        1.0,
        &mut y,
        opts,
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok((y[0], y[1])),
    }
}

/// `X₀,₁` with its first two derivatives at equispaced nodes, interpolated by
/// quintic Hermite pieces.
#[derive(Debug, Clone)]
struct FlowTable {
    lo: f64,
    h: f64,
    x: Vec<f64>,
    dx: Vec<f64>,
    ddx: Vec<f64>,
}

impl FlowTable {
    fn identity(lo: f64, hi: f64, n: usize) -> Self {
        let h = (hi - lo) / (n - 1) as f64;
        Self {
            lo,
            h,
            x: (0..n).map(|i| lo + h * i as f64).collect(),
            dx: vec![1.0; n],
            ddx: vec![0.0; n],
        }
    }

    fn hi(&self) -> f64 {
        self.lo + self.h * (self.x.len() - 1) as f64
    }

    fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi()
    }

    /// Integrates `X`, `X'`, `X''` for every node as one system.
    fn integrate(fields: &TransportFieldSet, n: usize, opts: &OdeOptions) -> Result<Self> {
        let (lo, hi) = fields.tabulation_box();
        let mut table = Self::identity(lo, hi, n);
        if fields.is_trivial() {
            return Ok(table);
        }
        let mut state = Vec::with_capacity(3 * n);
        state.extend_from_slice(&table.x);
        state.extend_from_slice(&table.dx);
        state.extend_from_slice(&table.ddx);
        let mut failure = None;
        dopri45(
            |t, s, d| {
                let f = match fields.y0_at(t) {
                    Ok(f) => f,
                    Err(e) => {
                        failure.get_or_insert(e);
                        d.iter_mut().for_each(|v| *v = 0.0);
                        return;
                    }
                };
                for i in 0..n {
                    let (x, p, q) = (s[i], s[n + i], s[2 * n + i]);
                    let (d1, d2) = (f.deriv(x), f.deriv2(x));
                    d[i] = f.value(x);
                    d[n + i] = d1 * p;
                    d[2 * n + i] = d2 * p * p + d1 * q;
                }
            },
            0.0,
            1.0,
            &mut state,
            opts,
        )?;
        if let Some(e) = failure {
            return Err(e);
        }
        table.x.copy_from_slice(&state[..n]);
        table.dx.copy_from_slice(&state[n..2 * n]);
        table.ddx.copy_from_slice(&state[2 * n..]);
        Ok(table)
    }

    fn eval(&self, x: f64) -> (f64, f64) {
        let last = self.x.len() - 2;
        let k = (((x - self.lo) / self.h).floor().max(0.0) as usize).min(last);
        let h = self.h;
        let s = (x - (self.lo + h * k as f64)) / h;
        let (s2, s3) = (s * s, s * s * s);
        let (s4, s5) = (s3 * s, s3 * s2);
        let (f0, f1) = (self.x[k], self.x[k + 1]);
        let (d0, d1) = (self.dx[k] * h, self.dx[k + 1] * h);
        let (c0, c1) = (self.ddx[k] * h * h, self.ddx[k + 1] * h * h);
        let v = f0 * (1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5)
            + d0 * (s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5)
            + c0 * 0.5 * (s2 - 3.0 * s3 + 3.0 * s4 - s5)
            + f1 * (10.0 * s3 - 15.0 * s4 + 6.0 * s5)
            + d1 * (-4.0 * s3 + 7.0 * s4 - 3.0 * s5)
            + c1 * 0.5 * (s3 - 2.0 * s4 + s5);
        let dv = f0 * (-30.0 * s2 + 60.0 * s3 - 30.0 * s4)
            + d0 * (1.0 - 18.0 * s2 + 32.0 * s3 - 15.0 * s4)
            + c0 * 0.5 * (2.0 * s - 9.0 * s2 + 12.0 * s3 - 5.0 * s4)
            + f1 * (30.0 * s2 - 60.0 * s3 + 30.0 * s4)
            + d1 * (-12.0 * s2 + 28.0 * s3 - 15.0 * s4)
            + c1 * 0.5 * (3.0 * s2 - 8.0 * s3 + 5.0 * s4);
        (v, dv / h)
    }
}

/// Trajectories of the correction system: `X₀,₁(λ_k)` and `X₁,₁ᵏ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
}

/// `X₁,₁ᴺ(λ̂)` for an ordered configuration.
pub fn flow_correction(fields: &TransportFieldSet, lambdas: &[f64]) -> Result<Vec<f64>> {
    Ok(integrate_correction(fields, lambdas, 1.0, &FlowConfig::default().correction_options())?.x1)
}

/// As [`flow_correction`], with the inhomogeneous terms multiplied by
/// `forcing` and explicit ODE options. Returns both trajectories.
pub fn integrate_correction(
    fields: &TransportFieldSet,
    lambdas: &[f64],
    forcing: f64,
    opts: &OdeOptions,
) -> Result<Correction> {
    let n = lambdas.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty configuration".into()));
    }
    if let Some(&x) = lambdas.iter().find(|x| !x.is_finite()) {
        return Err(Error::Domain(x));
    }
    if fields.is_trivial() {
        return Ok(Correction {
            x0: lambdas.to_vec(),
            x1: vec![0.0; n],
        });
    }
    let nf = n as f64;
    let mut state = vec![0.0; 2 * n];
    state[..n].copy_from_slice(lambdas);
    let mut failure = None;
    let m = fields.slices()[0].z().grid().len();
    let mut ex = vec![vec![0.0; m]; n];
    let mut dx = vec![0.0; m];
    let (mut ey, mut dy) = (vec![0.0; m], vec![0.0; m]);
    let mut u = vec![0.0; m];
    dopri45(
        |t, s, d| {
            let slice = match fields.slice_at(t) {
                Ok(sl) => sl,
                Err(e) => {
                    failure.get_or_insert(e);
                    d.iter_mut().for_each(|v| *v = 0.0);
                    return;
                }
            };
            let z = slice.z();
            // u = Σ_i ℓ(X₀ⁱ) − N∫ℓ dμ_t + (1/N)Σ_j ℓ'(X₀ʲ)X₁ʲ
            u.iter_mut()
                .zip(slice.mu_weights())
                .for_each(|(a, w)| *a = -forcing * nf * w);
            for k in 0..n {
                z.second_basis(s[k], &mut ey, &mut dy);
                let x1 = s[n + k] / nf;
                for j in 0..m {
                    u[j] += forcing * ey[j] + dy[j] * x1;
                }
                z.first_basis(s[k], &mut ex[k], &mut dx);
            }
            let zu = z.apply_right(&u);
            let y0 = slice.y0();
            for k in 0..n {
                let x = s[k];
                let pair: f64 = ex[k].iter().zip(&zu).map(|(a, b)| a * b).sum();
                d[k] = y0.value(x);
                d[n + k] = y0.deriv(x) * s[n + k] + forcing * slice.y1_value(x) + pair;
            }
        },
        0.0,
        1.0,
        &mut state,
        opts,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(Correction {
        x0: state[..n].to_vec(),
        x1: state[n..].to_vec(),
    })
}

/// `Tᴺ(λ̂)` for one sample, with the correction and the order check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappedSample {
    pub input: EigenSample,
    pub output: Vec<f64>,
    /// `X₁,₁ᴺ(λ̂)`.
    pub correction: Vec<f64>,
    pub order_preserved: bool,
}

impl MappedSample {
    /// The output passed through the order map.
    pub fn sorted_output(&self) -> Vec<f64> {
        crate::samplers::order_map(&self.output)
    }
}

#[derive(Serialize, Deserialize)]
struct MapBundle {
    version: u32,
    matching: AffineMap,
    config: FlowConfig,
    fields: serde_json::Value,
}

const MAP_BUNDLE_VERSION: u32 = 1;

/// The approximate transport map from `P_V` to `P_{V+W}`.
#[derive(Debug, Clone)]
pub struct TransportMap {
    fields: Arc<TransportFieldSet>,
    matching: AffineMap,
    config: FlowConfig,
    table: FlowTable,
    lipschitz: f64,
    trivial: bool,
}

impl TransportMap {
    /// Matches supports, builds the fields and tabulates `X₀,₁`.
    pub fn build(v: &Potential, w: &Potential, fields: &FieldBuildConfig, flow: &FlowConfig) -> Result<Self> {
        let pair = MatchedPair::new(v, w)?;
        let set = pair.build_fields(fields)?;
        Self::from_fields(Arc::new(set), pair.matching, flow)
    }

    pub fn from_fields(fields: Arc<TransportFieldSet>, matching: AffineMap, config: &FlowConfig) -> Result<Self> {
        config.validate()?;
        let table = FlowTable::integrate(&fields, config.table_nodes, &config.scalar_options())?;
        let lipschitz = measure_lipschitz(&fields, &table)?;
        let map = Self {
            trivial: fields.is_trivial(),
            fields,
            matching,
            config: *config,
            table,
            lipschitz,
        };
        let (lo, hi) = map.derivative_bounds();
        let slack = 1e-8;
        if let Some(p) = map.table.dx.iter().find(|&&p| p < lo * (1.0 - slack) || p > hi * (1.0 + slack)) {
            log::warn!("tabulated X' = {p} outside [{lo}, {hi}]; the Lipschitz estimate is too coarse");
        }
        Ok(map)
    }

    pub fn fields(&self) -> &TransportFieldSet {
        &self.fields
    }

    pub fn fields_arc(&self) -> Arc<TransportFieldSet> {
        Arc::clone(&self.fields)
    }

    /// `L`, sending the support of `μ_{V+W}` onto the support of `μ_V`.
    pub fn matching(&self) -> AffineMap {
        self.matching
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    /// `max_t sup|y₀,t'|` over the time grid and the region swept by the table.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// `[e^{−L}, e^{L}]`, which must contain every value of `X₀,₁'`.
    pub fn derivative_bounds(&self) -> (f64, f64) {
        ((-self.lipschitz).exp(), self.lipschitz.exp())
    }

    /// Table nodes with `(x, X₀,₁(x), X₀,₁'(x))`.
    pub fn table(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let t = &self.table;
        (0..t.x.len()).map(move |i| (t.lo + t.h * i as f64, t.x[i], t.dx[i]))
    }

    /// `(X₀,₁(x), X₀,₁'(x))`, from the table inside the box and by direct
    /// integration outside.
    pub fn scalar_flow(&self, x: f64) -> Result<(f64, f64)> {
        if self.trivial {
            return Ok((x, 1.0));
        }
        if self.table.contains(x) {
            return Ok(self.table.eval(x));
        }
        if !OUTSIDE_TABLE.swap(true, Ordering::Relaxed) {
            log::warn!(
                "point {x} outside the tabulated range [{}, {}]; integrating the flow directly",
                self.table.lo,
                self.table.hi()
            );
        }
        flow_scalar_with(&self.fields, x, &self.config.scalar_options())
    }

    /// `T₀ = L⁻¹∘X₀,₁`.
    pub fn t0(&self, x: f64) -> Result<f64> {
        Ok(self.matching.inverse().apply(self.scalar_flow(x)?.0))
    }

    /// `T₀'(x) = X₀,₁'(x)/scale(L)`.
    pub fn derivative_at(&self, x: f64) -> Result<f64> {
        Ok(self.scalar_flow(x)?.1 / self.matching.scale)
    }

    /// `X₁,₁ᴺ` at the configuration.
    pub fn correction(&self, lambdas: &[f64]) -> Result<Vec<f64>> {
        Ok(integrate_correction(&self.fields, lambdas, 1.0, &self.config.correction_options())?.x1)
    }

    /// `λ_k ↦ L⁻¹(X₀,₁(λ_k) + X₁,₁ᵏ(λ̂)/N)`.
    pub fn apply(&self, sample: &EigenSample) -> Result<MappedSample> {
        let n = sample.n();
        let x1 = self.correction(&sample.lambdas)?;
        let linv = self.matching.inverse();
        let output = sample
            .lambdas
            .iter()
            .zip(&x1)
            .map(|(&l, &c)| Ok(linv.apply(self.scalar_flow(l)?.0 + c / n as f64)))
            .collect::<Result<Vec<f64>>>()?;
        let order_preserved = output.windows(2).all(|w| w[0] < w[1]);
        Ok(MappedSample {
            input: sample.clone(),
            output,
            correction: x1,
            order_preserved,
        })
    }

    /// [`Self::apply`] over many samples in parallel.
    pub fn apply_all(&self, samples: &[EigenSample]) -> Result<Vec<MappedSample>> {
        samples.par_iter().map(|s| self.apply(s)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let bundle = MapBundle {
            version: MAP_BUNDLE_VERSION,
            matching: self.matching,
            config: self.config,
            fields: serde_json::from_str(&self.fields.to_json()?)?,
        };
        Ok(serde_json::to_string(&bundle)?)
    }

    /// Restores a map; the table is recomputed from the stored fields.
    pub fn from_json(s: &str) -> Result<Self> {
        let bundle: MapBundle = serde_json::from_str(s)?;
        if bundle.version != MAP_BUNDLE_VERSION {
            return Err(Error::Config(format!(
                "map bundle version {} is not supported (expected {MAP_BUNDLE_VERSION})",
                bundle.version
            )));
        }
        let fields = TransportFieldSet::from_json(&bundle.fields.to_string())?;
        Self::from_fields(Arc::new(fields), bundle.matching, &bundle.config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn apply_map(map: &TransportMap, sample: &EigenSample) -> Result<MappedSample> {
    map.apply(sample)
}

pub fn map_derivative_at(map: &TransportMap, x: f64) -> Result<f64> {
    map.derivative_at(x)
}

fn measure_lipschitz(fields: &TransportFieldSet, table: &FlowTable) -> Result<f64> {
    if fields.is_trivial() {
        return Ok(0.0);
    }
    let lo = table.lo.min(table.x[0]);
    let hi = table.hi().max(*table.x.last().unwrap());
    let mut l = 0.0f64;
    for s in fields.slices() {
        for k in 0..=2000 {
            let x = lo + (hi - lo) * k as f64 / 2000.0;
            l = l.max(s.y0().deriv(x).abs());
        }
    }
    Ok(l)
}
