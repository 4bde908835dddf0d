mod common;

use common::{hamming, random_metric, random_source, rng};
use proptest::prelude::*;
use swexp_core::dual::*;
use swexp_core::model::example_source;
use swexp_core::primal::*;
use swexp_core::{DecodingMetric, JointSource};

const CAP: f64 = DEFAULT_RHO_CAP;

fn quick() -> PrimalConfig {
    PrimalConfig::new(4, 7)
}

fn bsc_like() -> JointSource {
    JointSource::new(&[vec![0.42, 0.08], vec![0.12, 0.38]]).unwrap()
}

fn xlogx_ratio(a: f64, b: f64) -> f64 {
    if a <= 0.0 {
        0.0
    } else {
        a * (a / b).ln()
    }
}

/// `D(P~||P) + |R - H(X~|Y~)|^+` recomputed from a dense `[1, X, Y]` minimizer.
fn r_objective(source: &JointSource, sol: &PrimalSolution, rate: f64) -> f64 {
    let (xs, ys) = (sol.dims[1], sol.dims[2]);
    let p = |x: usize, y: usize| sol.minimizer[x * ys + y];
    let mut d = 0.0;
    let mut h = 0.0;
    for y in 0..ys {
        let py: f64 = (0..xs).map(|x| p(x, y)).sum();
        for x in 0..xs {
            d += xlogx_ratio(p(x, y), source.p(x, y));
            if p(x, y) > 0.0 {
                h -= p(x, y) * (p(x, y) / py).ln();
            }
        }
    }
    d + (rate - h).max(0.0)
}

#[test]
fn random_coding_primal_matches_gallager() {
    let p = example_source();
    for i in 0..10 {
        let rate = 0.5 + 0.06 * i as f64;
        let primal = exponent_r_primal(&p, rate).unwrap();
        let dual = exponent_r_gallager(&p, rate).unwrap().value;
        assert!(
            (primal.value - dual).abs() < 1e-3,
            "rate {rate}: {} vs {dual}",
            primal.value
        );
        assert!((r_objective(&p, &primal, rate) - primal.value).abs() < 1e-9);
        assert!((primal.minimizer.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn sphere_packing_primal_matches_dual_and_turns_infeasible() {
    let p = example_source();
    for rate in [0.6, 0.8, 1.0] {
        let primal = exponent_sp_primal(&p, rate).unwrap();
        let dual = exponent_sp(&p, rate, CAP).unwrap();
        assert!(primal.feasible);
        assert!((primal.value - dual.value).abs() < 1e-3, "rate {rate}");
    }
    let above = exponent_sp_primal(&p, 3f64.ln() + 0.01).unwrap();
    assert!(!above.feasible);
    assert!(
        exponent_sp(&p, 3f64.ln() + 0.01, CAP)
            .unwrap()
            .saturated_rho
    );
}

#[test]
fn expurgated_primal_matches_matched_duals_on_binary_source() {
    let p = bsc_like();
    for rate in [0.3, 0.45, 0.6, 0.68] {
        // the primal form goes negative where the expurgated bound is inactive
        let primal = exponent_ex_primal(&p, rate).unwrap().value.max(0.0);
        let tt = matched_ex_tt(&p, rate, CAP).unwrap().value;
        let std = matched_ex_std(&p, rate, CAP).unwrap().value;
        assert!(
            (primal - tt).abs() < 5e-3,
            "rate {rate}: primal {primal} tt {tt}"
        );
        assert!(std <= tt + 1e-6);
    }
}

#[test]
fn bhattacharyya_distance_examples() {
    let p = bsc_like();
    assert_eq!(bhattacharyya_distance(&p, 0, 0), 0.0);
    let py0: [f64; 2] = [0.42 / 0.5, 0.08 / 0.5];
    let py1: [f64; 2] = [0.12 / 0.5, 0.38 / 0.5];
    let want = -((py0[0] * py1[0]).sqrt() + (py0[1] * py1[1]).sqrt()).ln();
    assert!((bhattacharyya_distance(&p, 0, 1) - want).abs() < 1e-14);
    let disjoint = JointSource::new(&[vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap();
    assert!(bhattacharyya_distance(&disjoint, 0, 1).is_infinite());
}

#[test]
fn ck_random_coding_with_matched_metric_is_gallager() {
    let p = example_source();
    let q = DecodingMetric::matched(&p);
    for rate in [0.7, 0.9, 1.05] {
        let ck = ck_rc_primal_with(&p, &q, rate, &quick()).unwrap().value;
        let gal = exponent_r_gallager(&p, rate).unwrap().value;
        assert!((ck - gal).abs() < 1e-3, "rate {rate}: {ck} vs {gal}");
    }
}

#[test]
fn ck_duality_on_example() {
    let p = example_source();
    let q = hamming(0.1);
    let report = verify_duality(&p, &q, &[0.6, 0.85, 1.05], 5e-3, CAP, &quick()).unwrap();
    assert!(report.pass, "{report:?}");
    for row in &report.rows {
        assert!((row.primal - row.primal_rc.max(row.primal_ex)).abs() < 1e-15);
        assert!((row.dual - row.dual_rc.max(row.dual_ex)).abs() < 1e-15);
    }
}

#[test]
fn ck_metric_constraint_is_reported() {
    let p = example_source();
    let q = hamming(0.1);
    let sol = ck_rc_primal_with(&p, &q, 0.9, &quick()).unwrap();
    assert!(sol.feasible);
    assert!(sol.max_violation <= FEASIBILITY_TOL);
    let slack = sol.metric_slack.unwrap();
    assert!(slack >= -FEASIBILITY_TOL);
    assert_eq!(sol.metric_constraint_active, Some(slack.abs() <= 1e-6));
    assert_eq!(sol.dims, vec![3, 3, 3]);
    assert_eq!(sol.starts, 2 + 1 + 4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn more_restarts_never_hurt(seed in 0u64..10_000, rate in 0.3f64..0.69) {
        let mut r = rng(seed);
        let p = random_source(&mut r, 2, 2);
        let q = random_metric(&mut r, 2, 2);
        let base = PrimalConfig::new(3, seed);
        let a = ck_rc_primal_with(&p, &q, rate, &base).unwrap();
        let b = ck_rc_primal_with(&p, &q, rate, &base.doubled()).unwrap();
        prop_assert!(b.value <= a.value + 1e-12, "{} {}", a.value, b.value);
        prop_assert_eq!(b.starts, a.starts + 3);
    }

    #[test]
    fn primal_minimizer_reevaluates(seed in 0u64..10_000, rate in 0.2f64..1.0) {
        let mut r = rng(seed);
        let p = random_source(&mut r, 3, 2);
        let sol = exponent_r_primal_with(&p, rate, &quick()).unwrap();
        prop_assert!((r_objective(&p, &sol, rate) - sol.value).abs() < 1e-9);
        let dual = exponent_r_gallager(&p, rate).unwrap().value;
        prop_assert!((sol.value - dual).abs() < 1e-3, "{} {}", sol.value, dual);
    }

    #[test]
    fn ck_values_are_deterministic(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let p = random_source(&mut r, 2, 2);
        let q = random_metric(&mut r, 2, 2);
        let a = ck_ex_primal_with(&p, &q, 0.5, &quick()).unwrap();
        let b = ck_ex_primal_with(&p, &q, 0.5, &quick()).unwrap();
        prop_assert_eq!(a, b);
    }
}
