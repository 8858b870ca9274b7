//! Local eigenvalue statistics and two-sample distribution comparisons.

use crate::equilibrium::EquilibriumMeasure;
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// `N(λ_{i+k} − λ_i)` for `k = 1..m`, optionally rescaled by `T₀'(λ_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapStatistic {
    /// One-based base index `i`.
    pub index: usize,
    pub window: usize,
    pub values: Vec<f64>,
    pub rescale: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeSide {
    Left,
    Right,
}

/// `N^{2/3}(λ_k − e)` at the chosen edge, `k = 1..m` counted from that edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeStatistic {
    pub edge: f64,
    pub side: EdgeSide,
    pub values: Vec<f64>,
    pub rescale: Option<f64>,
}

/// Bulk gaps at one-based index `i` with window `m` of an ordered sample.
pub fn bulk_gaps(lambdas: &[f64], i: usize, m: usize) -> Result<GapStatistic> {
    let n = lambdas.len();
    if i == 0 || i + m > n {
        return Err(Error::IndexOutOfRange(format!(
            "gap window i = {i}, m = {m} in a sample of size {n}"
        )));
    }
    let base = lambdas[i - 1];
    let nf = n as f64;
    Ok(GapStatistic {
        index: i,
        window: m,
        values: (1..=m).map(|k| nf * (lambdas[i - 1 + k] - base)).collect(),
        rescale: None,
    })
}

/// Multiply every gap by `t0prime > 0`.
pub fn rescale_gaps(g: &GapStatistic, t0prime: f64) -> Result<GapStatistic> {
    if !(t0prime > 0.0 && t0prime.is_finite()) {
        return Err(Error::InvalidInput(format!("rescale factor {t0prime} must be positive")));
    }
    Ok(GapStatistic {
        values: g.values.iter().map(|v| v * t0prime).collect(),
        rescale: Some(g.rescale.unwrap_or(1.0) * t0prime),
        ..g.clone()
    })
}

/// Edge values measured from an explicit edge point.
pub fn edge_values_at(lambdas: &[f64], edge: f64, m: usize, side: EdgeSide) -> Result<EdgeStatistic> {
    let n = lambdas.len();
    if m == 0 || m > n {
        return Err(Error::IndexOutOfRange(format!("edge window {m} in a sample of size {n}")));
    }
    let s = (n as f64).powf(2.0 / 3.0);
    let values = (0..m)
        .map(|k| {
            let l = match side {
                EdgeSide::Left => lambdas[k],
                EdgeSide::Right => lambdas[n - 1 - k],
            };
            s * (l - edge)
        })
        .collect();
    Ok(EdgeStatistic {
        edge,
        side,
        values,
        rescale: None,
    })
}

/// Edge values at the support endpoint of `mu` on the chosen side.
pub fn edge_values(lambdas: &[f64], mu: &EquilibriumMeasure, m: usize, side: EdgeSide) -> Result<EdgeStatistic> {
    let edge = match side {
        EdgeSide::Left => mu.a(),
        EdgeSide::Right => mu.b(),
    };
    edge_values_at(lambdas, edge, m, side)
}

pub fn rescale_edge(e: &EdgeStatistic, t0prime: f64) -> Result<EdgeStatistic> {
    if !(t0prime > 0.0 && t0prime.is_finite()) {
        return Err(Error::InvalidInput(format!("rescale factor {t0prime} must be positive")));
    }
    Ok(EdgeStatistic {
        values: e.values.iter().map(|v| v * t0prime).collect(),
        rescale: Some(e.rescale.unwrap_or(1.0) * t0prime),
        ..e.clone()
    })
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Two-sample Kolmogorov–Smirnov statistic `sup|F_x − F_y|`.
pub fn ks_statistic(xs: &[f64], ys: &[f64]) -> f64 {
    ks_sorted(&sorted(xs), &sorted(ys))
}

fn ks_sorted(x: &[f64], y: &[f64]) -> f64 {
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// `∫|F_x − F_y| dt` between the two empirical distributions.
pub fn wasserstein1(xs: &[f64], ys: &[f64]) -> f64 {
    w1_sorted(&sorted(xs), &sorted(ys))
}

fn w1_sorted(x: &[f64], y: &[f64]) -> f64 {
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut acc = 0.0;
    let mut prev = x[0].min(y[0]);
    while i < x.len() || j < y.len() {
        let v = match (x.get(i), y.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        acc += (i as f64 / n - j as f64 / m).abs() * (v - prev);
        prev = v;
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
    }
    acc
}

/// `P(K > λ)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn effective_n(n: f64, m: f64) -> f64 {
    (n * m / (n + m)).sqrt()
}

/// Asymptotic two-sample KS p-value with the Stephens small-sample correction.
pub fn ks_p_value(d: f64, n: usize, m: usize) -> f64 {
    let en = effective_n(n as f64, m as f64);
    kolmogorov_survival((en + 0.12 + 0.11 / en) * d)
}

/// Critical KS distance at level `alpha` for sample sizes `n`, `m`.
pub fn ks_critical_value(alpha: f64, n: usize, m: usize) -> f64 {
    let (mut lo, mut hi) = (0.2, 5.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_survival(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let en = effective_n(n as f64, m as f64);
    0.5 * (lo + hi) / (en + 0.12 + 0.11 / en)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub ks: f64,
    pub ks_p_value: f64,
    pub w1: f64,
    pub ks_se: f64,
    pub w1_se: f64,
    pub n_x: usize,
    pub n_y: usize,
    /// KS tolerance the report was judged against, if any.
    pub tolerance: Option<f64>,
    pub passed: Option<bool>,
}

impl ComparisonReport {
    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = Some(tolerance);
        self.passed = Some(self.ks <= tolerance);
        self
    }
}

pub const DEFAULT_BOOTSTRAP: usize = 200;

/// KS and `W₁` with bootstrap standard errors from 200 resamples.
pub fn compare_distributions(xs: &[f64], ys: &[f64]) -> Result<ComparisonReport> {
    compare_distributions_with(xs, ys, DEFAULT_BOOTSTRAP, 0)
}

fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn compare_distributions_with(
    xs: &[f64],
    ys: &[f64],
    replicates: usize,
    seed: u64,
) -> Result<ComparisonReport> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::InvalidInput("empty sample in comparison".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value in comparison".into()));
    }
    let (x, y) = (sorted(xs), sorted(ys));
    let ks = ks_sorted(&x, &y);
    let w1 = w1_sorted(&x, &y);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ks_b = Vec::with_capacity(replicates);
    let mut w1_b = Vec::with_capacity(replicates);
    let mut bx = vec![0.0; x.len()];
    let mut by = vec![0.0; y.len()];
    for _ in 0..replicates {
        bx.iter_mut().for_each(|v| *v = x[rng.random_range(0..x.len())]);
        by.iter_mut().for_each(|v| *v = y[rng.random_range(0..y.len())]);
        bx.sort_by(f64::total_cmp);
        by.sort_by(f64::total_cmp);
        ks_b.push(ks_sorted(&bx, &by));
        w1_b.push(w1_sorted(&bx, &by));
    }
    Ok(ComparisonReport {
        ks,
        ks_p_value: ks_p_value(ks, x.len(), y.len()),
        w1,
        ks_se: sd(&ks_b),
        w1_se: sd(&w1_b),
        n_x: x.len(),
        n_y: y.len(),
        tolerance: None,
        passed: None,
    })
}

/// Pass threshold for KS distances derived from null (same-law) comparisons.
///
/// The null KS values are compared to the Kolmogorov law at the same sample
/// sizes; their median ratio (at least 1) inflates the asymptotic critical
/// value. The threshold is never below the empirical null quantile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullCalibration {
    pub null_ks: Vec<f64>,
    pub inflation: f64,
    pub level: f64,
    pub threshold: f64,
}

/// Median of the Kolmogorov distribution.
const KOLMOGOROV_MEDIAN: f64 = 0.827_573_555_19;

pub fn calibrate_null(null_ks: &[f64], n: usize, m: usize, level: f64) -> Result<NullCalibration> {
    if null_ks.is_empty() {
        return Err(Error::InvalidInput("no null comparisons".into()));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidInput(format!("level {level} outside (0, 1)")));
    }
    let v = sorted(null_ks);
    let median = quantile_sorted(&v, 0.5);
    let en = effective_n(n as f64, m as f64);
    let scale = en + 0.12 + 0.11 / en;
    let inflation = (median * scale / KOLMOGOROV_MEDIAN).max(1.0);
    let asymptotic = inflation * ks_critical_value(1.0 - level, n, m);
    let threshold = asymptotic.max(quantile_sorted(&v, level));
    Ok(NullCalibration {
        null_ks: null_ks.to_vec(),
        inflation,
        level,
        threshold,
    })
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let k = pos.floor() as usize;
    let frac = pos - k as f64;
    if k + 1 < v.len() {
        v[k] + frac * (v[k + 1] - v[k])
    } else {
        v[k]
    }
}

/// Mean and standard error.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, sd(v) / n.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_and_w1_basic() {
        let x = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(ks_statistic(&x, &x), 0.0);
        assert_eq!(wasserstein1(&x, &x), 0.0);
        let y: Vec<f64> = x.iter().map(|v| v + 0.25).collect();
        assert!((wasserstein1(&x, &y) - 0.25).abs() < 1e-15);
        assert!((ks_statistic(&x, &y) - 0.25).abs() < 1e-15);
        assert_eq!(ks_statistic(&[0.0], &[1.0]), 1.0);
        assert!((wasserstein1(&[0.0], &[1.0, 3.0]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn kolmogorov_values() {
        // P(K > 1.3581) = 0.05, P(K > 1.6276) = 0.01
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_survival(1.6276) - 0.01).abs() < 1e-4);
        assert!((kolmogorov_survival(KOLMOGOROV_MEDIAN) - 0.5).abs() < 1e-6);
        let c = ks_critical_value(0.01, 1_000_000, 1_000_000);
        assert!((c * (500_000f64).sqrt() - 1.6276).abs() < 1e-3);
    }
}
