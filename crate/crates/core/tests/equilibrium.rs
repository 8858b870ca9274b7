use approx::assert_abs_diff_eq;
use beta_transport::equilibrium::{
    check_hypotheses, endpoint_polynomial, interpolated_measure, solve_equilibrium,
};
use beta_transport::potentials::{match_supports, poly_eval};
use beta_transport::{EquilibriumMeasure, Error, Potential};
use num_complex::Complex64;
use std::f64::consts::PI;

fn quartic(beta: f64) -> Potential {
    Potential::new(vec![0.0, 0.0, 0.5, 0.0, 0.1], beta).unwrap()
}

#[test]
fn gaussian_is_semicircle() {
    for beta in [1.0, 2.0, 4.0] {
        let v = Potential::gaussian(beta).unwrap();
        let mu = solve_equilibrium(&v).unwrap();
        assert_abs_diff_eq!(mu.a(), -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mu.b(), 2.0, epsilon = 1e-12);
        for k in 0..=40 {
            let x = -2.0 + 4.0 * k as f64 / 40.0;
            assert_abs_diff_eq!(mu.density_factor(x), 1.0 / (2.0 * PI), epsilon = 1e-12);
        }
        assert!(mu.variational_residual(&v) < 1e-10);
    }
    let v = Potential::new(vec![0.0, 0.0, 0.5], 2.0).unwrap();
    let mu = solve_equilibrium(&v).unwrap();
    assert_abs_diff_eq!(mu.b(), 2.0, epsilon = 1e-12);
}

#[test]
fn quartic_matches_moment_condition() {
    // For V = x²/2 + g x⁴ the one-cut radius solves r²/2 + 3g r⁴/2 = β.
    let mu = solve_equilibrium(&quartic(1.0)).unwrap();
    let r = mu.b();
    assert_abs_diff_eq!(r * r / 2.0 + 1.5 * 0.1 * r.powi(4), 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(r, 1.185_965_774_842_8, epsilon = 1e-10);
    assert_abs_diff_eq!(mu.a(), -r, epsilon = 1e-12);
    assert_abs_diff_eq!(mu.mass(), 1.0, epsilon = 1e-12);
}

#[test]
fn invariants_on_a_non_symmetric_quartic() {
    let v = Potential::new(vec![0.0, 0.3, 0.5, 0.2, 0.1], 2.0).unwrap();
    let mu = solve_equilibrium(&v).unwrap();
    assert_abs_diff_eq!(mu.mass(), 1.0, epsilon = 1e-10);
    assert!(mu.variational_residual(&v) < 1e-8);
    let p = endpoint_polynomial(&mu, &v);
    assert!(poly_eval(&p, mu.a()).abs() < 1e-8);
    assert!(poly_eval(&p, mu.b()).abs() < 1e-8);

    // ∫V'f dμ = (β/2)∬(f(x)−f(y))/(x−y) for monomials f = x^k.
    let q = mu.quadrature(80);
    for k in 1..=10 {
        let lhs = q.integrate(|x| v.d1(x) * x.powi(k));
        let mut rhs = 0.0;
        for (i, &x) in q.nodes.iter().enumerate() {
            for (j, &y) in q.nodes.iter().enumerate() {
                let dd: f64 = (0..k).map(|m| x.powi(m) * y.powi(k - 1 - m)).sum();
                rhs += q.weights[i] * q.weights[j] * dd;
            }
        }
        assert_abs_diff_eq!(lhs, 0.5 * v.beta() * rhs, epsilon = 1e-8);
    }

    let u_a = mu.effective_potential(&v, mu.a());
    for k in 1..50 {
        let x = mu.from_unit(-1.0 + 2.0 * k as f64 / 50.0);
        assert_abs_diff_eq!(mu.effective_potential(&v, x), u_a, epsilon = 1e-9);
    }
    let report = check_hypotheses(&mu, &v);
    assert!(report.passed(), "{}", report.details);
}

#[test]
fn zero_quartic_term_is_continuous() {
    let a = solve_equilibrium(&Potential::new(vec![0.0, 0.0, 0.5, 0.0, 0.0], 2.0).unwrap()).unwrap();
    let b = solve_equilibrium(&Potential::gaussian(2.0).unwrap()).unwrap();
    assert_abs_diff_eq!(a.b(), b.b(), epsilon = 1e-12);
}

#[test]
fn stieltjes_transform() {
    let mu = solve_equilibrium(&Potential::gaussian(2.0).unwrap()).unwrap();
    let g = mu.stieltjes(Complex64::new(0.0, 2.0)).unwrap();
    assert_abs_diff_eq!(g.re, 0.0, epsilon = 1e-13);
    assert_abs_diff_eq!(g.im, 1.0 - 2f64.sqrt(), epsilon = 1e-13);
    let z = Complex64::new(1e6, 3.0);
    assert!((z * mu.stieltjes(z).unwrap() - 1.0).norm() < 1e-5);
    let z = Complex64::new(0.4, -0.7);
    let lhs = mu.stieltjes(z).unwrap().conj();
    let rhs = mu.stieltjes(z.conj()).unwrap();
    assert_abs_diff_eq!(lhs.re, rhs.re, epsilon = 1e-14);
    assert_abs_diff_eq!(lhs.im, rhs.im, epsilon = 1e-14);
    assert!(matches!(
        mu.stieltjes(Complex64::new(1.0, 0.0)),
        Err(Error::Domain(_))
    ));
    // Agreement with direct quadrature away from the support.
    let z = Complex64::new(0.3, 0.5);
    let q = mu.quadrature(400);
    let mut direct = Complex64::new(0.0, 0.0);
    for (x, w) in q.nodes.iter().zip(&q.weights) {
        direct += *w / (z - x);
    }
    assert!((direct - mu.stieltjes(z).unwrap()).norm() < 1e-8);
}

#[test]
fn effective_potential_examples() {
    let v = Potential::gaussian(1.0).unwrap();
    let mu = solve_equilibrium(&v).unwrap();
    let u0 = mu.effective_potential(&v, 0.0);
    for k in 0..50 {
        let x = -2.0 + 4.0 * (k as f64 + 0.5) / 50.0;
        assert_abs_diff_eq!(mu.effective_potential(&v, x), u0, epsilon = 1e-6);
    }
    assert!(mu.effective_potential(&v, 5.0) > mu.effective_potential(&v, 2.0));
    for x in [0.3, 1.7, 2.5, 7.0] {
        assert_abs_diff_eq!(
            mu.effective_potential(&v, x),
            mu.effective_potential(&v, -x),
            epsilon = 1e-8
        );
    }
    // Direct quadrature outside the support.
    let q = mu.quadrature(300);
    let direct = v.value(3.5) - q.integrate(|y| (3.5 - y).abs().ln());
    assert_abs_diff_eq!(mu.effective_potential(&v, 3.5), direct, epsilon = 1e-10);
}

#[test]
fn hypotheses_for_gaussian() {
    let v = Potential::gaussian(2.0).unwrap();
    let mu = solve_equilibrium(&v).unwrap();
    let r = check_hypotheses(&mu, &v);
    assert!(r.one_cut && r.effective_potential_ok);
    assert_abs_diff_eq!(r.min_density_factor, 1.0 / (2.0 * PI), epsilon = 1e-12);
}

#[test]
fn double_well_is_rejected() {
    // x⁴/4 − x² is two-cut at β = 1. The iteration either fails or settles
    // in one well, in which case the other well lowers U_V below its
    // endpoint value.
    let v = Potential::new(vec![0.0, 0.0, -1.0, 0.0, 0.25], 1.0).unwrap();
    match solve_equilibrium(&v) {
        Err(e) => assert!(e.is_hypothesis_failure(), "{e}"),
        Ok(mu) => assert!(!check_hypotheses(&mu, &v).passed()),
    }
}

#[test]
fn energy_values() {
    let v = Potential::new(vec![0.0, 0.0, 0.5], 2.0).unwrap();
    let mu = solve_equilibrium(&v).unwrap();
    // ∫x²/2 dμ = 1/2 and ∬log|x−y| = −1/4 for the unit-variance semicircle.
    assert_abs_diff_eq!(mu.energy(&v), 0.75, epsilon = 1e-10);
    // Midpoint rule in the angle variable for the log potential inside the
    // support, where the kernel is singular.
    let m = 400_000;
    let x0 = 0.7;
    let mut direct = 0.0;
    for k in 0..m {
        let th = std::f64::consts::PI * (k as f64 + 0.5) / m as f64;
        let y = 2.0 * th.cos();
        direct += (x0 - y).abs().ln() * mu.density(y) * 2.0 * th.sin();
    }
    direct *= std::f64::consts::PI / m as f64;
    assert_abs_diff_eq!(mu.log_potential(x0), direct, epsilon = 1e-4);

    let id = mu.energy_pushforward(&v, |x| x, |_| 1.0, 60);
    assert_abs_diff_eq!(id, mu.energy(&v), epsilon = 1e-10);
    let eps = 0.01;
    let pushed = mu.energy_pushforward(&v, |x| x + eps * x * x, |x| 1.0 + 2.0 * eps * x, 60);
    assert!(pushed > mu.energy(&v));
}

#[test]
fn interpolated_measure_matches_resolve() {
    let beta = 2.0;
    let v = Potential::gaussian(beta).unwrap();
    let w = Potential::perturbation(vec![0.0, 0.0, 0.0, 0.0, 0.1], beta).unwrap();
    let mu_v = solve_equilibrium(&v).unwrap();
    let mu_vw = solve_equilibrium(&v.axpy(1.0, &w)).unwrap();
    let (_, wt) = match_supports(&v, &w, mu_v.support(), mu_vw.support()).unwrap();
    let mu_1 = solve_equilibrium(&v.axpy(1.0, &wt)).unwrap();
    assert_abs_diff_eq!(mu_1.a(), -2.0, epsilon = 1e-9);
    assert_abs_diff_eq!(mu_1.b(), 2.0, epsilon = 1e-9);

    assert_eq!(interpolated_measure(&mu_v, &mu_1, 0.0).unwrap(), mu_v);
    assert_eq!(interpolated_measure(&mu_v, &mu_1, 1.0).unwrap(), mu_1);
    let mid = interpolated_measure(&mu_v, &mu_1, 0.5).unwrap();
    let direct = solve_equilibrium(&v.interpolate(&wt, 0.5).unwrap()).unwrap();
    for k in 0..=100 {
        let x = -2.0 + 4.0 * k as f64 / 100.0;
        assert_abs_diff_eq!(mid.density(x), direct.density(x), epsilon = 1e-6);
    }
    assert!(matches!(
        interpolated_measure(&mu_v, &mu_vw, 0.5),
        Err(Error::InvalidInput(_))
    ));
}

#[test]
fn variance_matching_by_scaling() {
    // V + W with W = βx²/4 has support [−√2, √2].
    let beta = 2.0;
    let v = Potential::gaussian(beta).unwrap();
    let w = Potential::perturbation(vec![0.0, 0.0, beta / 4.0], beta).unwrap();
    let mu_vw = solve_equilibrium(&v.axpy(1.0, &w)).unwrap();
    assert_abs_diff_eq!(mu_vw.b(), 2f64.sqrt(), epsilon = 1e-10);
    let (l, wt) = match_supports(&v, &w, (-2.0, 2.0), mu_vw.support()).unwrap();
    assert_abs_diff_eq!(l.scale, 2f64.sqrt(), epsilon = 1e-10);
    let mu = solve_equilibrium(&v.axpy(1.0, &wt)).unwrap();
    assert_abs_diff_eq!(mu.a(), -2.0, epsilon = 1e-6);
    assert_abs_diff_eq!(mu.b(), 2.0, epsilon = 1e-6);
}

#[test]
fn json_round_trip() {
    let mu = solve_equilibrium(&quartic(2.0)).unwrap();
    let s = serde_json::to_string(&mu).unwrap();
    assert!(s.contains("\"s_coeffs\""));
    let back: EquilibriumMeasure = serde_json::from_str(&s).unwrap();
    assert_eq!(back, mu);
    assert!(serde_json::from_str::<EquilibriumMeasure>(r#"{"a":1,"b":0,"beta":1,"s_coeffs":[1]}"#).is_err());
}

#[test]
fn cdf_and_quantile_agree_with_density() {
    let mu = solve_equilibrium(&Potential::new(vec![0.0, 0.3, 0.5, 0.2, 0.1], 1.0).unwrap()).unwrap();
    let q = mu.quadrature(200);
    for x in [mu.a() + 0.1, mu.center(), mu.b() - 0.3] {
        // ∫ 1{y ≤ x} dμ by fine trapezoid on the density
        let m = 200_000;
        let h = (x - mu.a()) / m as f64;
        let direct: f64 = (1..m).map(|k| mu.density(mu.a() + k as f64 * h)).sum::<f64>() * h
            + 0.5 * h * mu.density(x);
        assert_abs_diff_eq!(mu.cdf(x), direct, epsilon = 1e-7);
        assert_abs_diff_eq!(mu.quantile(mu.cdf(x)), x, epsilon = 1e-10);
    }
    assert_abs_diff_eq!(q.integrate(|_| 1.0), 1.0, epsilon = 1e-12);
}
