//! End-to-end experiments: universality comparisons with null calibration,
//! the residual study and the correction-size study.

use crate::error::{Error, Result};
use crate::flow::{FlowConfig, MatchedPair, TransportMap};
use crate::potentials::Potential;
use crate::samplers::{sample_gaussian_tridiagonal, sample_mcmc, EigenSample, SamplerConfig};
use crate::statistics::{
    bulk_gaps, calibrate_null, compare_distributions_with, edge_values_at, ks_statistic, mean_se, ComparisonReport,
    EdgeSide, NullCalibration, DEFAULT_BOOTSTRAP,
};
use crate::transport_fields::{FieldBuildConfig, TransportFieldSet};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::sync::Arc;

/// Sampler settings without a seed; seeds are derived from the experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSettings {
    pub n_samples: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub proposal_scale: f64,
    pub chains: usize,
}

impl Default for SamplingSettings {
    fn default() -> Self {
        let c = SamplerConfig::new(1000, 0);
        Self {
            n_samples: c.n_samples,
            burn_in: c.burn_in,
            thinning: c.thinning,
            proposal_scale: c.proposal_scale,
            chains: c.chains,
        }
    }
}

impl SamplingSettings {
    pub fn with_seed(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            n_samples: self.n_samples,
            burn_in: self.burn_in,
            thinning: self.thinning,
            proposal_scale: self.proposal_scale,
            chains: self.chains,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatisticsSettings {
    /// Bulk window `m`.
    pub bulk_window: usize,
    /// One-based bulk index; `None` means `N/2`.
    pub bulk_index: Option<usize>,
    pub edge_window: usize,
    /// Independent `W ≡ 0` runs used to calibrate pass thresholds.
    pub null_replicates: usize,
    pub level: f64,
    pub bootstrap: usize,
    /// Times at which the residual study evaluates `ℛᴺ_t`.
    pub residual_times: Vec<f64>,
}

impl Default for StatisticsSettings {
    fn default() -> Self {
        Self {
            bulk_window: 4,
            bulk_index: None,
            edge_window: 1,
            null_replicates: 20,
            level: 0.99,
            bootstrap: DEFAULT_BOOTSTRAP,
            residual_times: vec![0.0, 0.5, 1.0],
        }
    }
}

/// One self-contained experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Monomial coefficients of `V`.
    pub source: Vec<f64>,
    /// Monomial coefficients of `W`.
    pub perturbation: Vec<f64>,
    pub beta: f64,
    pub n_list: Vec<usize>,
    #[serde(default)]
    pub sampler: SamplingSettings,
    #[serde(default)]
    pub fields: FieldBuildConfig,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub statistics: StatisticsSettings,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn potentials(&self) -> Result<(Potential, Potential)> {
        let v = Potential::new(self.source.clone(), self.beta)?;
        let w = Potential::perturbation(self.perturbation.clone(), self.beta)?;
        Ok((v, w))
    }

    /// Checks everything that can be checked before any numerical work.
    pub fn validate(&self) -> Result<()> {
        let (v, w) = self.potentials()?;
        v.axpy(1.0, &w).check_confining()?;
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            return Err(Error::Config("n_list must be nonempty with positive entries".into()));
        }
        self.sampler.with_seed(self.seed).validate()?;
        self.fields.validate()?;
        self.flow.validate()?;
        let s = &self.statistics;
        if s.bulk_window == 0 || s.edge_window == 0 {
            return Err(Error::Config("statistic windows must be positive".into()));
        }
        if !(s.level > 0.0 && s.level < 1.0) {
            return Err(Error::Config(format!("level {} outside (0, 1)", s.level)));
        }
        if s.null_replicates == 0 {
            return Err(Error::Config("null_replicates must be positive".into()));
        }
        if s.residual_times.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Config("residual times must lie in [0, 1]".into()));
        }
        for &n in &self.n_list {
            let i = s.bulk_index.unwrap_or(n / 2).max(1);
            if i + s.bulk_window > n || s.edge_window > n {
                return Err(Error::Config(format!("statistic windows do not fit N = {n}")));
            }
        }
        Ok(())
    }
}

/// A seed for a named stage, derived from the experiment seed.
pub fn derive_seed(seed: u64, stage: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage.wrapping_add(1 << 32));
    rng.next_u64()
}

fn is_gaussian(v: &Potential) -> bool {
    let c = v.coeffs();
    c.len() == 3 && c[0] == 0.0 && c[1] == 0.0 && c[2] == v.beta() / 4.0
}

/// Samples of `P_Vᴺ`: exact for the Gaussian potential, Metropolis otherwise.
pub fn sample_law(v: &Potential, n: usize, settings: &SamplingSettings, seed: u64) -> Result<Vec<EigenSample>> {
    if is_gaussian(v) {
        sample_gaussian_tridiagonal(n, v.beta(), settings.n_samples, seed)
    } else {
        sample_mcmc(v, n, &settings.with_seed(seed))
    }
}

/// One KS gate: the comparison and the null calibration it is judged against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub name: String,
    pub report: ComparisonReport,
    pub null: NullCalibration,
}

impl Gate {
    pub fn passed(&self) -> bool {
        self.report.passed == Some(true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniversalityReport {
    pub n: usize,
    pub n_samples: usize,
    pub bulk_index: usize,
    /// `T₀'(a_V)`.
    pub edge_rescale: f64,
    /// One gate per `k = 1..m`.
    pub bulk: Vec<Gate>,
    pub edge: Vec<Gate>,
    pub transported_bulk: Vec<Gate>,
    pub transported_edge: Vec<Gate>,
    pub order_preserved_fraction: f64,
    /// Per-gate statistic values `(gate name, source side, target side)`,
    /// kept for histograms and not serialized.
    #[serde(skip)]
    pub samples: Vec<(String, Vec<f64>, Vec<f64>)>,
}

impl UniversalityReport {
    pub fn gates(&self) -> impl Iterator<Item = &Gate> {
        self.bulk
            .iter()
            .chain(&self.edge)
            .chain(&self.transported_bulk)
            .chain(&self.transported_edge)
    }

    pub fn passed(&self) -> bool {
        self.gates().all(Gate::passed)
    }
}

/// Per-sample statistics: bulk gaps `k = 1..m` and left-edge values.
struct Columns {
    bulk: Vec<Vec<f64>>,
    edge: Vec<Vec<f64>>,
}

fn columns<'a>(
    configs: impl Iterator<Item = &'a [f64]>,
    i: usize,
    m: usize,
    edge: f64,
    me: usize,
    bulk_scale: impl Fn(&[f64]) -> Result<f64>,
    edge_scale: f64,
) -> Result<Columns> {
    let mut c = Columns {
        bulk: vec![Vec::new(); m],
        edge: vec![Vec::new(); me],
    };
    for l in configs {
        let s = bulk_scale(l)?;
        for (k, v) in bulk_gaps(l, i, m)?.values.into_iter().enumerate() {
            c.bulk[k].push(s * v);
        }
        for (k, v) in edge_values_at(l, edge, me, EdgeSide::Left)?.values.into_iter().enumerate() {
            c.edge[k].push(edge_scale * v);
        }
    }
    Ok(c)
}

fn null_columns(
    v: &Potential,
    n: usize,
    settings: &SamplingSettings,
    stats: &StatisticsSettings,
    edge: f64,
    seed: u64,
) -> Result<Vec<(Columns, Columns)>> {
    let i = stats.bulk_index.unwrap_or(n / 2);
    (0..stats.null_replicates)
        .map(|r| {
            let r = r as u64;
            let src = sample_law(v, n, settings, derive_seed(seed, 2 * r))?;
            let tgt = sample_mcmc(v, n, &settings.with_seed(derive_seed(seed, 2 * r + 1)))?;
            let one = |_: &[f64]| Ok(1.0);
            let a = columns(src.iter().map(|s| &s.lambdas[..]), i, stats.bulk_window, edge, stats.edge_window, one, 1.0)?;
            let b = columns(tgt.iter().map(|s| &s.lambdas[..]), i, stats.bulk_window, edge, stats.edge_window, one, 1.0)?;
            Ok((a, b))
        })
        .collect()
}

/// The `W ≡ 0` null distribution of every KS statistic of the experiment.
pub fn null_calibration(
    v: &Potential,
    n: usize,
    settings: &SamplingSettings,
    stats: &StatisticsSettings,
    seed: u64,
) -> Result<(Vec<NullCalibration>, Vec<NullCalibration>)> {
    let edge = crate::equilibrium::solve_equilibrium(v)?.a();
    let reps = null_columns(v, n, settings, stats, edge, seed)?;
    let calibrate = |pick: &dyn Fn(&Columns) -> &Vec<Vec<f64>>, k: usize| {
        let ks: Vec<f64> = reps.iter().map(|(a, b)| ks_statistic(&pick(a)[k], &pick(b)[k])).collect();
        let (na, nb) = (pick(&reps[0].0)[k].len(), pick(&reps[0].1)[k].len());
        calibrate_null(&ks, na, nb, stats.level)
    };
    let bulk = (0..stats.bulk_window)
        .map(|k| calibrate(&|c: &Columns| &c.bulk, k))
        .collect::<Result<Vec<_>>>()?;
    let edge = (0..stats.edge_window)
        .map(|k| calibrate(&|c: &Columns| &c.edge, k))
        .collect::<Result<Vec<_>>>()?;
    Ok((bulk, edge))
}

fn gates(
    name: &str,
    xs: &[Vec<f64>],
    ys: &[Vec<f64>],
    nulls: &[NullCalibration],
    bootstrap: usize,
    seed: u64,
) -> Result<Vec<Gate>> {
    xs.iter()
        .zip(ys)
        .zip(nulls)
        .enumerate()
        .map(|(k, ((x, y), null))| {
            let report = compare_distributions_with(x, y, bootstrap, derive_seed(seed, k as u64))?
                .with_tolerance(null.threshold);
            Ok(Gate {
                name: format!("{name}[k={}]", k + 1),
                report,
                null: null.clone(),
            })
        })
        .collect()
}

/// Local-statistics comparison between transported `P_V` and direct `P_{V+W}`.
///
/// Bulk gaps at `i` rescaled by `T₀'(λ_i)` and left-edge values rescaled by
/// `T₀'(a_V)` under `P_V` are compared with the raw statistics under
/// `P_{V+W}`; then `Tᴺ`-mapped `P_V` samples are compared unrescaled. Every
/// gate is judged against the null calibration at identical sample sizes.
pub fn universality_experiment(
    map: &TransportMap,
    pair: &MatchedPair,
    n: usize,
    settings: &SamplingSettings,
    stats: &StatisticsSettings,
    seed: u64,
) -> Result<UniversalityReport> {
    let v = &pair.source;
    let vw = v.axpy(1.0, &pair.perturbation);
    let i = stats.bulk_index.unwrap_or(n / 2);
    let (m, me) = (stats.bulk_window, stats.edge_window);
    let (a_v, a_vw) = (pair.mu_source.a(), pair.mu_target.a());

    let src = sample_law(v, n, settings, derive_seed(seed, 100))?;
    let tgt = sample_mcmc(&vw, n, &settings.with_seed(derive_seed(seed, 101)))?;
    let edge_rescale = map.derivative_at(a_v)?;
    let rescaled = columns(
        src.iter().map(|s| &s.lambdas[..]),
        i,
        m,
        a_v,
        me,
        |l| map.derivative_at(l[i - 1]),
        edge_rescale,
    )?;
    let one = |_: &[f64]| Ok(1.0);
    let target = columns(tgt.iter().map(|s| &s.lambdas[..]), i, m, a_vw, me, one, 1.0)?;

    let mapped = map.apply_all(&src)?;
    let preserved = mapped.iter().filter(|s| s.order_preserved).count();
    let sorted: Vec<Vec<f64>> = mapped.iter().map(|s| s.sorted_output()).collect();
    let transported = columns(sorted.iter().map(|s| &s[..]), i, m, a_vw, me, one, 1.0)?;

    let (null_bulk, null_edge) = null_calibration(v, n, settings, stats, derive_seed(seed, 200))?;
    let b = stats.bootstrap;
    let mut samples = Vec::new();
    for (name, xs, ys) in [
        ("bulk", &rescaled.bulk, &target.bulk),
        ("edge", &rescaled.edge, &target.edge),
        ("transported_bulk", &transported.bulk, &target.bulk),
        ("transported_edge", &transported.edge, &target.edge),
    ] {
        for (k, (x, y)) in xs.iter().zip(ys).enumerate() {
            samples.push((format!("{name}[k={}]", k + 1), x.clone(), y.clone()));
        }
    }
    Ok(UniversalityReport {
        n,
        n_samples: settings.n_samples,
        bulk_index: i,
        edge_rescale,
        bulk: gates("bulk", &rescaled.bulk, &target.bulk, &null_bulk, b, derive_seed(seed, 300))?,
        edge: gates("edge", &rescaled.edge, &target.edge, &null_edge, b, derive_seed(seed, 301))?,
        transported_bulk: gates(
            "transported_bulk",
            &transported.bulk,
            &target.bulk,
            &null_bulk,
            b,
            derive_seed(seed, 302),
        )?,
        transported_edge: gates(
            "transported_edge",
            &transported.edge,
            &target.edge,
            &null_edge,
            b,
            derive_seed(seed, 303),
        )?,
        order_preserved_fraction: preserved as f64 / mapped.len() as f64,
        samples,
    })
}

/// `mean|ℛᴺ_t − mean|` with its standard error at one `(N, t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub n: usize,
    pub t: f64,
    pub mean_abs_deviation: f64,
    pub se: f64,
    /// The empirical centering constant.
    pub c_hat: f64,
}

/// Residuals under `P_{V_t}ᴺ`, centred by their empirical mean.
pub fn residual_study(
    fields: &TransportFieldSet,
    n_list: &[usize],
    times: &[f64],
    settings: &SamplingSettings,
    seed: u64,
) -> Result<Vec<ResidualRow>> {
    let mut rows = Vec::new();
    let mut ns = n_list.to_vec();
    ns.sort_unstable();
    for (a, &n) in ns.iter().enumerate() {
        for (b, &t) in times.iter().enumerate() {
            let vt = fields.potential_at(t);
            let slice = fields.slice_at(t)?;
            let stage = 1000 + 100 * a as u64 + b as u64;
            let samples = sample_law(&vt, n, settings, derive_seed(seed, stage))?;
            let values = samples
                .par_iter()
                .map(|s| Ok(fields.residual_with(&slice, &s.lambdas, 0.0)?.value))
                .collect::<Result<Vec<f64>>>()?;
            let c_hat = values.iter().sum::<f64>() / values.len() as f64;
            let dev: Vec<f64> = values.iter().map(|v| (v - c_hat).abs()).collect();
            let (mean, se) = mean_se(&dev);
            rows.push(ResidualRow {
                n,
                t,
                mean_abs_deviation: mean,
                se,
                c_hat,
            });
        }
    }
    Ok(rows)
}

/// Size of `X₁,₁ᴺ` over samples of `P_Vᴺ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionRow {
    pub n: usize,
    /// `max_k` of the sample mean of `|X₁ᵏ|`.
    pub max_mean_abs: f64,
    pub argmax: usize,
    /// `max |X₁ᵏ − X₁ᵏ⁺¹| / (√N log N |λ_k − λ_{k+1}|)` over samples.
    pub pairing_ratio: f64,
}

pub fn correction_study(
    map: &TransportMap,
    n_list: &[usize],
    settings: &SamplingSettings,
    seed: u64,
) -> Result<Vec<CorrectionRow>> {
    let v = map.fields().source().clone();
    let mut ns = n_list.to_vec();
    ns.sort_unstable();
    ns.iter()
        .enumerate()
        .map(|(a, &n)| {
            let samples = sample_law(&v, n, settings, derive_seed(seed, 2000 + a as u64))?;
            let corr = samples
                .par_iter()
                .map(|s| map.correction(&s.lambdas))
                .collect::<Result<Vec<Vec<f64>>>>()?;
            let mut mean = vec![0.0; n];
            for c in &corr {
                for (m, x) in mean.iter_mut().zip(c) {
                    *m += x.abs() / corr.len() as f64;
                }
            }
            let (argmax, &max_mean_abs) = mean
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .ok_or_else(|| Error::InvalidInput("empty configuration".into()))?;
            let nf = n as f64;
            let norm = nf.sqrt() * nf.ln().max(1.0);
            let mut pairing_ratio = 0.0f64;
            for (s, c) in samples.iter().zip(&corr) {
                for k in 0..n.saturating_sub(1) {
                    let dl = s.lambdas[k + 1] - s.lambdas[k];
                    if dl > 0.0 {
                        pairing_ratio = pairing_ratio.max((c[k + 1] - c[k]).abs() / (norm * dl));
                    }
                }
            }
            Ok(CorrectionRow {
                n,
                max_mean_abs,
                argmax,
                pairing_ratio,
            })
        })
        .collect()
}

/// Builds the matched pair and the transport map for a configuration.
pub fn build_pipeline(cfg: &ExperimentConfig) -> Result<(MatchedPair, TransportMap)> {
    let (v, w) = cfg.potentials()?;
    let pair = MatchedPair::new(&v, &w)?;
    let fields = pair.build_fields(&cfg.fields)?;
    let map = TransportMap::from_fields(Arc::new(fields), pair.matching, &cfg.flow)?;
    Ok((pair, map))
}

/// Log-log least-squares slope of `ys` against `xs`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}
