//! Samplers for the β-ensemble `P_Vᴺ(dλ) ∝ ∏|λ_i − λ_j|^β e^{−NΣV(λ_i)} dλ`.
//!
//! The Gaussian potential `βx²/4` is sampled exactly through the
//! tridiagonal β-Hermite model; general polynomial potentials through
//! single-coordinate random-walk Metropolis.

use crate::equilibrium::solve_equilibrium;
use crate::error::{Error, Result};
use crate::potentials::Potential;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Tridiagonal,
    Mcmc,
}

/// One ordered eigenvalue configuration with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSample {
    pub lambdas: Vec<f64>,
    pub beta: f64,
    pub potential_id: String,
    pub seed: u64,
    pub sampler: SamplerKind,
    /// Chain acceptance rate after tuning (MCMC only).
    pub acceptance_rate: Option<f64>,
    /// Batch-means effective sample size of the emitting chain (MCMC only).
    pub ess: Option<f64>,
}

impl EigenSample {
    pub fn n(&self) -> usize {
        self.lambdas.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_samples: usize,
    /// Burn-in sweeps per chain; the proposal scale is tuned during burn-in.
    pub burn_in: usize,
    /// Sweeps between emitted samples; `0` means `max(1, N/10)`.
    #[serde(default)]
    pub thinning: usize,
    /// Initial proposal standard deviation in units of `1/N`.
    pub proposal_scale: f64,
    pub chains: usize,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn new(n_samples: usize, seed: u64) -> Self {
        Self {
            n_samples,
            burn_in: 2000,
            thinning: 0,
            proposal_scale: 1.0,
            chains: 4,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.chains == 0 {
            return Err(Error::Config("n_samples and chains must be positive".into()));
        }
        if !(self.proposal_scale > 0.0 && self.proposal_scale.is_finite()) {
            return Err(Error::Config("proposal_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn thinning_for(&self, n: usize) -> usize {
        if self.thinning > 0 {
            self.thinning
        } else {
            (n / 10).max(1)
        }
    }
}

/// Eigenvalues of the symmetric tridiagonal matrix with diagonal `d` and
/// off-diagonal `e` (`e.len() == d.len() − 1`), by implicit QL with
/// Wilkinson shifts. Returned unsorted.
pub fn tridiagonal_eigenvalues(d: &[f64], e: &[f64]) -> Result<Vec<f64>> {
    let n = d.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    if e.len() + 1 != n {
        return Err(Error::InvalidInput(format!(
            "off-diagonal has length {}, expected {}",
            e.len(),
            n - 1
        )));
    }
    let mut d = d.to_vec();
    let mut e: Vec<f64> = e.iter().copied().chain(std::iter::once(0.0)).collect();
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::InvalidInput("tridiagonal QL did not converge".into()));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(d)
}

/// Ascending sort, the map `[R(x)]_i = min_{#J=i} max_{j∈J} x_j`.
pub fn order_map(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn chain_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Exact samples of `P_Vᴺ` for `V(x) = βx²/4`.
///
/// Diagonal entries are `N(0, 2/(βN))` and the `k`-th off-diagonal entry is
/// `χ_{β(N−k)}/√(βN)`. Sample `s` uses ChaCha8 stream `s` of `seed`.
pub fn sample_gaussian_tridiagonal(
    n: usize,
    beta: f64,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<EigenSample>> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!("beta must be positive, got {beta}")));
    }
    if n == 0 {
        return Err(Error::Config("N must be positive".into()));
    }
    let scale = 1.0 / (beta * n as f64).sqrt();
    let chis = (1..n)
        .map(|k| ChiSquared::new(beta * (n - k) as f64))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Config(format!("chi distribution: {e}")))?;
    (0..n_samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = chain_rng(seed, s as u64);
            let d: Vec<f64> = (0..n)
                .map(|_| std::f64::consts::SQRT_2 * scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let e: Vec<f64> = chis.iter().map(|c| scale * c.sample(&mut rng).sqrt()).collect();
            let lambdas = order_map(&tridiagonal_eigenvalues(&d, &e)?);
            Ok(EigenSample {
                lambdas,
                beta,
                potential_id: format!("gaussian(beta={beta})"),
                seed,
                sampler: SamplerKind::Tridiagonal,
                acceptance_rate: None,
                ess: None,
            })
        })
        .collect()
}

/// A short human-readable id for a potential.
pub fn potential_id(v: &Potential) -> String {
    let terms: Vec<String> = v.coeffs().iter().map(|c| format!("{c}")).collect();
    format!("poly[{}](beta={})", terms.join(","), v.beta())
}

struct Chain<'a> {
    v: &'a Potential,
    beta: f64,
    n: f64,
    x: Vec<f64>,
    sigma: f64,
    accepted: u64,
    proposed: u64,
}

impl Chain<'_> {
    /// Log-density change for moving coordinate `k` to `y`, or `None` when
    /// the move collides with another coordinate.
    fn delta(&self, k: usize, y: f64) -> Option<f64> {
        let xk = self.x[k];
        let mut log_ratio = 0.0;
        let mut prod = 1.0f64;
        let mut count = 0;
        for (j, &xj) in self.x.iter().enumerate() {
            if j == k {
                continue;
            }
            let num = y - xj;
            if num.abs() < 1e-14 {
                return None;
            }
            prod *= num / (xk - xj);
            count += 1;
            if count == 8 {
                log_ratio += prod.abs().ln();
                prod = 1.0;
                count = 0;
            }
        }
        log_ratio += prod.abs().ln();
        Some(self.beta * log_ratio - self.n * (self.v.value(y) - self.v.value(xk)))
    }

    fn sweep(&mut self, rng: &mut ChaCha8Rng) {
        let step = self.sigma / self.n;
        for k in 0..self.x.len() {
            let y = self.x[k] + step * rng.sample::<f64, _>(StandardNormal);
            self.proposed += 1;
            if let Some(d) = self.delta(k, y) {
                if d >= 0.0 || rng.random::<f64>() < d.exp() {
                    self.x[k] = y;
                    self.accepted += 1;
                }
            }
        }
    }

    fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Batch-means effective sample size of a scalar series.
pub fn batch_means_ess(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 4 {
        return n as f64;
    }
    let b = (n as f64).sqrt().floor() as usize;
    let batches = n / b;
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 || batches < 2 {
        return n as f64;
    }
    let bm: Vec<f64> = (0..batches)
        .map(|i| values[i * b..(i + 1) * b].iter().sum::<f64>() / b as f64)
        .collect();
    let bmean = bm.iter().sum::<f64>() / batches as f64;
    let bvar = bm.iter().map(|v| (v - bmean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    let tau = (b as f64 * bvar / var).max(1e-12);
    (n as f64 / tau).min(n as f64)
}

const TARGET_ACCEPTANCE: f64 = 0.4;

fn run_chain(v: &Potential, n: usize, cfg: &SamplerConfig, chain: usize, count: usize, init: &[f64]) -> Vec<EigenSample> {
    let mut rng = chain_rng(cfg.seed, chain as u64);
    let mut c = Chain {
        v,
        beta: v.beta(),
        n: n as f64,
        x: init.to_vec(),
        sigma: cfg.proposal_scale,
        accepted: 0,
        proposed: 0,
    };
    // Robbins–Monro on log σ during burn-in.
    for it in 0..cfg.burn_in {
        let (a0, p0) = (c.accepted, c.proposed);
        c.sweep(&mut rng);
        let rate = (c.accepted - a0) as f64 / (c.proposed - p0) as f64;
        let gain = 1.0 / ((it + 1) as f64).powf(0.6);
        c.sigma *= (gain * (rate - TARGET_ACCEPTANCE)).exp();
    }
    c.accepted = 0;
    c.proposed = 0;
    let thin = cfg.thinning_for(n);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        for _ in 0..thin {
            c.sweep(&mut rng);
        }
        out.push(order_map(&c.x));
    }
    let rate = c.rate();
    if !(0.1..=0.7).contains(&rate) {
        log::warn!("chain {chain}: acceptance rate {rate:.3} outside [0.1, 0.7] after tuning");
    }
    let summary: Vec<f64> = out.iter().map(|x| x.iter().map(|v| v * v).sum()).collect();
    let ess = batch_means_ess(&summary);
    let id = potential_id(v);
    out.into_iter()
        .map(|lambdas| EigenSample {
            lambdas,
            beta: v.beta(),
            potential_id: id.clone(),
            seed: cfg.seed,
            sampler: SamplerKind::Mcmc,
            acceptance_rate: Some(rate),
            ess: Some(ess),
        })
        .collect()
}

/// Metropolis samples of `P_Vᴺ`. Chain `c` uses ChaCha8 stream `c` of the
/// seed, so the output does not depend on the thread count.
pub fn sample_mcmc(v: &Potential, n: usize, cfg: &SamplerConfig) -> Result<Vec<EigenSample>> {
    cfg.validate()?;
    v.check_confining()?;
    if n == 0 {
        return Err(Error::Config("N must be positive".into()));
    }
    let init: Vec<f64> = match solve_equilibrium(v) {
        Ok(mu) => (0..n).map(|k| mu.quantile((k as f64 + 0.5) / n as f64)).collect(),
        Err(e) => {
            log::warn!("no equilibrium measure for the initial state ({e}); starting from a grid");
            (0..n).map(|k| -1.0 + 2.0 * (k as f64 + 0.5) / n as f64).collect()
        }
    };
    let per_chain = cfg.n_samples.div_ceil(cfg.chains);
    let mut chains: Vec<Vec<EigenSample>> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_chain(v, n, cfg, c, per_chain, &init))
        .collect();
    let mut out: Vec<EigenSample> = chains.iter_mut().flat_map(std::mem::take).collect();
    out.truncate(cfg.n_samples);
    Ok(out)
}
