mod common;

use common::{interval_grid, oracle_bounds, TailOracle};
use proptest::prelude::*;
use qkd_core::stats::{binomial_bounds, binomial_cdf, binomial_sf, poisson_pmf, poisson_tail_mass};

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

#[test]
fn exact_intervals_match_independent_oracle() {
    let cases = interval_grid();
    assert!(cases.len() >= 500, "{} cases", cases.len());
    let mut worst = 0.0f64;
    for (k, n, eps) in cases {
        let ci = binomial_bounds(k, n, eps).unwrap();
        let (lo, hi) = oracle_bounds(k, n, eps);
        let (dl, du) = (rel(ci.lower, lo), rel(ci.upper, hi));
        worst = worst.max(dl).max(du);
        assert!(
            dl < 1e-9,
            "lower k={k} n={n} eps={eps}: {} vs {lo}",
            ci.lower
        );
        assert!(
            du < 1e-9,
            "upper k={k} n={n} eps={eps}: {} vs {hi}",
            ci.upper
        );
        // conservative side of the bracket
        assert!(ci.lower <= k as f64 / n as f64 && ci.upper >= k as f64 / n as f64);
    }
    eprintln!("worst relative deviation {worst:.3e}");
}

#[test]
fn zero_successes_upper_is_closed_form() {
    for n in [1u64, 10, 1_000, 95_220_000] {
        for eps in [1e-7, 0.05] {
            let ci = binomial_bounds(0, n, eps).unwrap();
            assert_eq!(ci.lower, 0.0);
            let exact = -(eps.ln() / n as f64).exp_m1();
            assert!(rel(ci.upper, exact) < 1e-12, "{} vs {exact}", ci.upper);
        }
    }
}

#[test]
fn tails_match_summation() {
    for &(k, n, p) in &[
        (129u64, 95_220_000u64, 1.3e-6),
        (9431, 254_610_000, 3.7e-5),
        (190_000, 1_720_170_000, 1.1e-4),
        (3, 50, 0.2),
        (500, 1000, 0.49),
    ] {
        let o = TailOracle::new(n, k);
        let cdf = binomial_cdf(k, n, p);
        let sf = binomial_sf(k, n, p);
        assert!(rel(cdf, o.lower_tail(p)) < 1e-9, "cdf {k} {n} {p}");
        assert!(rel(sf, o.upper_tail(p)) < 1e-9, "sf {k} {n} {p}");
    }
}

#[test]
fn poisson_tail_complements_pmf() {
    for mu in [0.001, 0.0639, 0.487, 0.8] {
        let head: f64 = (0..=6).map(|n| poisson_pmf(n, mu).unwrap()).sum();
        assert!((poisson_tail_mass(6, mu).unwrap() - (1.0 - head)).abs() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn interval_contains_estimate_and_shrinks_with_confidence(
        n in 1u64..2_000_000_000,
        frac in 0.0f64..1.0,
        e_exp in 1.0f64..10.0,
    ) {
        let k = ((n as f64) * frac * 1e-3).floor() as u64;
        let eps = 10f64.powf(-e_exp);
        let ci = binomial_bounds(k, n, eps).unwrap();
        let phat = k as f64 / n as f64;
        prop_assert!(ci.lower <= phat && phat <= ci.upper);
        let wider = binomial_bounds(k, n, eps / 10.0).unwrap();
        prop_assert!(wider.lower <= ci.lower && wider.upper >= ci.upper);
    }

    #[test]
    fn bound_tail_equals_epsilon(n in 20u64..100_000, frac in 0.05f64..0.95, e_exp in 1.0f64..9.0) {
        let k = ((n as f64) * frac) as u64;
        prop_assume!(k > 0 && k < n);
        let eps = 10f64.powf(-e_exp);
        let ci = binomial_bounds(k, n, eps).unwrap();
        prop_assert!(rel(binomial_cdf(k, n, ci.upper), eps) < 1e-6);
        prop_assert!(rel(binomial_sf(k, n, ci.lower), eps) < 1e-6);
    }
}
