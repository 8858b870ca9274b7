use beta_transport::equilibrium::solve_equilibrium;
use beta_transport::samplers::{
    order_map, sample_gaussian_tridiagonal, sample_mcmc, tridiagonal_eigenvalues, SamplerKind,
};
use beta_transport::statistics::{bulk_gaps, ks_critical_value, ks_statistic, wasserstein1};
use beta_transport::{Potential, SamplerConfig};
use proptest::prelude::*;

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn single_particle_tridiagonal_is_gaussian() {
    for beta in [1.0, 2.0, 4.0] {
        let s = sample_gaussian_tridiagonal(1, beta, 20_000, 7).unwrap();
        let xs: Vec<f64> = s.iter().map(|e| e.lambdas[0]).collect();
        let (m, var) = mean_var(&xs);
        let target = 2.0 / beta;
        // standard error of the variance is target·√(2/n) ≈ 0.01·target
        assert!((var / target - 1.0).abs() < 0.04, "beta {beta}: {var}");
        assert!(m.abs() < 4.0 * (target / 20_000.0).sqrt());
    }
}

#[test]
fn tridiagonal_mean_spectral_measure_is_semicircle() {
    let beta = 2.0;
    let mu = solve_equilibrium(&Potential::gaussian(beta).unwrap()).unwrap();
    assert!((mu.a() + 2.0).abs() < 1e-10 && (mu.b() - 2.0).abs() < 1e-10);
    let samples = sample_gaussian_tridiagonal(200, beta, 1000, 3).unwrap();
    let pooled: Vec<f64> = samples.iter().flat_map(|s| s.lambdas.iter().copied()).collect();
    let reference: Vec<f64> = (0..40_000)
        .map(|k| mu.quantile((k as f64 + 0.5) / 40_000.0))
        .collect();
    let w1 = wasserstein1(&pooled, &reference);
    assert!(w1 <= 0.01, "W1 = {w1}");
}

#[test]
fn tridiagonal_trace_moments() {
    // E Σλ² = E tr H² = N·2/(βN) + 2Σ_k β(N−k)/(βN) = 2/β + (N − 1)
    let (n, beta) = (30, 1.0);
    let samples = sample_gaussian_tridiagonal(n, beta, 4000, 9).unwrap();
    let tr2: Vec<f64> = samples.iter().map(|s| s.lambdas.iter().map(|x| x * x).sum()).collect();
    let (m, var) = mean_var(&tr2);
    let expect = 2.0 / beta + (n - 1) as f64;
    assert!((m - expect).abs() < 4.0 * (var / 4000.0).sqrt(), "{m} vs {expect}");
}

#[test]
fn mcmc_single_particle_moments() {
    let beta = 1.0;
    let v = Potential::gaussian(beta).unwrap();
    let mut cfg = SamplerConfig::new(40_000, 5);
    cfg.thinning = 3;
    let s = sample_mcmc(&v, 1, &cfg).unwrap();
    assert_eq!(s.len(), 40_000);
    assert!(s.iter().all(|e| e.sampler == SamplerKind::Mcmc));
    let rate = s[0].acceptance_rate.unwrap();
    assert!((0.2..0.6).contains(&rate), "rate {rate}");
    let xs: Vec<f64> = s.iter().map(|e| e.lambdas[0]).collect();
    let (m, var) = mean_var(&xs);
    assert!(m.abs() < 0.05, "mean {m}");
    assert!((var - 2.0).abs() < 0.1, "var {var}");
}

#[test]
fn mcmc_quartic_single_particle_moment() {
    // density ∝ e^{−x⁴}: E x² = Γ(3/4)/Γ(1/4)
    let v = Potential::new(vec![0.0, 0.0, 0.0, 0.0, 1.0], 2.0).unwrap();
    let mut cfg = SamplerConfig::new(40_000, 17);
    cfg.thinning = 3;
    let s = sample_mcmc(&v, 1, &cfg).unwrap();
    let xs: Vec<f64> = s.iter().map(|e| e.lambdas[0] * e.lambdas[0]).collect();
    let (m, _) = mean_var(&xs);
    let expect = 0.337_989_120_788_172_6;
    assert!((m - expect).abs() < 0.01, "{m} vs {expect}");
}

#[test]
fn mcmc_agrees_with_tridiagonal_gaps() {
    let (n, beta) = (20, 2.0);
    let v = Potential::gaussian(beta).unwrap();
    let exact = sample_gaussian_tridiagonal(n, beta, 3000, 21).unwrap();
    let mut cfg = SamplerConfig::new(3000, 22);
    cfg.thinning = 4;
    let chain = sample_mcmc(&v, n, &cfg).unwrap();
    let gap = |s: &[beta_transport::EigenSample]| -> Vec<f64> {
        s.iter().map(|e| bulk_gaps(&e.lambdas, n / 2, 1).unwrap().values[0]).collect()
    };
    let d = ks_statistic(&gap(&exact), &gap(&chain));
    // allow for the chain's autocorrelation on top of the 0.1% level
    let crit = 1.5 * ks_critical_value(0.001, 3000, 3000);
    assert!(d < crit, "KS {d} vs {crit}");
    let top = |s: &[beta_transport::EigenSample]| -> Vec<f64> { s.iter().map(|e| e.lambdas[n - 1]).collect() };
    let d = ks_statistic(&top(&exact), &top(&chain));
    assert!(d < crit, "edge KS {d} vs {crit}");
}

#[test]
fn mcmc_is_stationary_across_halves() {
    let n = 16;
    let v = Potential::new(vec![0.0, 0.0, 0.5, 0.0, 0.25], 1.0).unwrap();
    let mut cfg = SamplerConfig::new(4000, 8);
    cfg.chains = 1;
    let s = sample_mcmc(&v, n, &cfg).unwrap();
    let ess = s[0].ess.unwrap();
    assert!(ess > 100.0, "ess {ess}");
    let stat: Vec<f64> = s.iter().map(|e| e.lambdas.iter().map(|x| x * x).sum()).collect();
    let (a, b) = stat.split_at(2000);
    let d = ks_statistic(a, b);
    let n_eff = (ess / 2.0).max(2.0) as usize;
    assert!(d < ks_critical_value(0.001, n_eff, n_eff), "KS {d}");
}

#[test]
fn samplers_are_deterministic_and_thread_independent() {
    let v = Potential::new(vec![0.0, 0.0, 0.5, 0.0, 0.1], 1.0).unwrap();
    let mut cfg = SamplerConfig::new(40, 99);
    cfg.burn_in = 200;
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            (
                sample_mcmc(&v, 12, &cfg).unwrap(),
                sample_gaussian_tridiagonal(12, 1.0, 40, 99).unwrap(),
            )
        })
    };
    let (m1, t1) = run(1);
    let (m3, t3) = run(3);
    assert_eq!(m1, m3);
    assert_eq!(t1, t3);
    let other = sample_gaussian_tridiagonal(12, 1.0, 40, 100).unwrap();
    assert_ne!(t1, other);
    assert!(m1.iter().chain(&t1).all(|s| s.lambdas.windows(2).all(|w| w[0] <= w[1])));
}

#[test]
fn invalid_configurations_are_rejected() {
    let v = Potential::gaussian(1.0).unwrap();
    let mut cfg = SamplerConfig::new(10, 0);
    cfg.chains = 0;
    assert!(sample_mcmc(&v, 5, &cfg).is_err());
    assert!(sample_gaussian_tridiagonal(0, 1.0, 1, 0).is_err());
    assert!(sample_gaussian_tridiagonal(4, -1.0, 1, 0).is_err());
    assert!(tridiagonal_eigenvalues(&[1.0, 2.0], &[]).is_err());
}

#[test]
fn order_map_examples() {
    assert_eq!(order_map(&[3.0, -1.0, 2.0]), vec![-1.0, 2.0, 3.0]);
    assert_eq!(order_map(&[]), Vec::<f64>::new());
    assert_eq!(order_map(&[1.0, 1.0, 0.0]), vec![0.0, 1.0, 1.0]);
}

proptest! {
    #[test]
    fn order_map_is_one_lipschitz(
        pairs in prop::collection::vec((-10.0f64..10.0, -1.0f64..1.0), 1..30)
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.0 + p.1).collect();
        let sup = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        let (rx, ry) = (order_map(&x), order_map(&y));
        prop_assert!(sup(&rx, &ry) <= sup(&x, &y) + 1e-15);
        let mut rev = x.clone();
        rev.reverse();
        prop_assert_eq!(order_map(&rev), rx);
    }

    #[test]
    fn tridiagonal_eigenvalues_preserve_trace_invariants(
        d in prop::collection::vec(-5.0f64..5.0, 1..25),
        seed in prop::collection::vec(-3.0f64..3.0, 25),
    ) {
        let e: Vec<f64> = seed[..d.len() - 1].to_vec();
        let ev = tridiagonal_eigenvalues(&d, &e).unwrap();
        let tr: f64 = d.iter().sum();
        let fro: f64 = d.iter().map(|x| x * x).sum::<f64>() + 2.0 * e.iter().map(|x| x * x).sum::<f64>();
        prop_assert!((ev.iter().sum::<f64>() - tr).abs() < 1e-10 * (1.0 + fro));
        prop_assert!((ev.iter().map(|x| x * x).sum::<f64>() - fro).abs() < 1e-10 * (1.0 + fro));
    }
}
