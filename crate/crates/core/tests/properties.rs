//! Property tests for the closed forms, the comparison rules and the normal helpers.

mod common;

use common::{mv, rel_err};
use proptest::prelude::*;
use xdesign::engine::{effect_summary, power_for_sigma};
use xdesign::model::{normal_cdf, normal_quantile, GroupScenario, GroupSizes, PopulationSpec, TestConfig};
use xdesign::rules::{
    compare, dilution_equal_variance_check, dilution_general_sides, dilution_master_sides, dilution_theta_check,
    dual_control_lhs_rhs, dual_control_rhs_equal_variance,
};
use xdesign::SetupKind;
use GroupScenario::*;

fn size() -> impl Strategy<Value = f64> {
    prop_oneof![1 => Just(0.0), 9 => (0.0f64..6.0).prop_map(|e| 10f64.powf(e).round())]
}

fn positive_size() -> impl Strategy<Value = f64> {
    (0.0f64..6.0).prop_map(|e| 10f64.powf(e).round())
}

fn moments() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-5.0f64..5.0, (-2.0f64..2.0).prop_map(|e| 10f64.powf(e))), 8)
}

fn build(n: GroupSizes, m: Vec<(f64, f64)>) -> PopulationSpec {
    let mut spec = PopulationSpec::uniform(n, 0.0, 1.0);
    for (g, (mean, var)) in GroupScenario::ALL.into_iter().zip(m) {
        spec.set(g, mean, var);
    }
    spec
}

/// Populations where every setup except possibly the intersection-only one applies.
fn spec() -> impl Strategy<Value = PopulationSpec> {
    (size(), size(), size(), size(), moments())
        .prop_filter("dual control needs n1+n3 and n2+n3", |(_, n1, n2, n3, _)| {
            n1 + n3 > 0.0 && n2 + n3 > 0.0
        })
        .prop_map(|(n0, n1, n2, n3, m)| build(GroupSizes::new(n0, n1, n2, n3), m))
}

fn config() -> impl Strategy<Value = TestConfig> {
    (0.001f64..0.2, 0.5f64..0.99).prop_map(|(a, p)| TestConfig::new(a, p).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn scaling_sizes_keeps_delta_and_shrinks_theta(spec in spec(), k in 1.5f64..1000.0) {
        let cfg = TestConfig::default();
        let scaled = spec.with_sizes(spec.n.scaled(k));
        for setup in SetupKind::ALL {
            let (Ok(a), Ok(b)) = (effect_summary(setup, &spec, &cfg), effect_summary(setup, &scaled, &cfg)) else { continue };
            prop_assert!(rel_err(a.delta, b.delta) < 1e-12 || (a.delta - b.delta).abs() < 1e-15);
            prop_assert!(rel_err(b.theta_star, a.theta_star / k.sqrt()) < 1e-9);
        }
    }

    #[test]
    fn dual_control_never_has_the_smaller_mde(spec in spec(), cfg in config()) {
        let s4 = effect_summary(SetupKind::DualControl, &spec, &cfg).unwrap();
        let s3 = effect_summary(SetupKind::QualifiedOnly, &spec, &cfg).unwrap();
        prop_assert!(s4.theta_star > s3.theta_star);
    }

    #[test]
    fn effect_gap_rewrite_holds(spec in spec()) {
        let cfg = TestConfig::default();
        let s4 = effect_summary(SetupKind::DualControl, &spec, &cfg).unwrap();
        let s3 = effect_summary(SetupKind::QualifiedOnly, &spec, &cfg).unwrap();
        let n = spec.n;
        let m = |g| mv(&spec, g).0;
        let a_a = (n.g1 * (m(I1) - m(C1)) + n.g3 * (m(IPhi) - m(C3))) / (n.g1 + n.g3);
        let a_b = (n.g2 * (m(I2) - m(C2)) + n.g3 * (m(IPsi) - m(C3))) / (n.g2 + n.g3);
        let gap = (n.g1 * a_b - n.g2 * a_a) / n.qualified();
        let scale = s4.delta.abs().max(s3.delta.abs()).max(1.0);
        prop_assert!(((s4.delta - s3.delta) - gap).abs() < 1e-9 * scale);
    }

    #[test]
    fn compare_is_antisymmetric(spec in spec(), cfg in config(), i in 0usize..4, j in 0usize..4) {
        let (a, b) = (SetupKind::ALL[i], SetupKind::ALL[j]);
        let (Ok(sa), Ok(sb)) = (effect_summary(a, &spec, &cfg), effect_summary(b, &spec, &cfg)) else { return Ok(()) };
        let x = compare(&sa, &sb).unwrap();
        let y = compare(&sb, &sa).unwrap();
        prop_assert_eq!(x.winner, y.winner);
        prop_assert_eq!(x.criterion, y.criterion);
        if let Some(w) = x.winner {
            prop_assert!(w == a || w == b);
            prop_assert!(x.delta_gap - x.theta_gap > 0.0 || (x.delta_gap > 0.0 && x.theta_gap < 0.0));
        }
        if a == b {
            prop_assert!(x.is_inconclusive());
        }
    }

    #[test]
    fn master_and_general_dilution_tests_agree_when_rhs_positive(spec in spec(), cfg in config()) {
        prop_assume!(spec.n.g0 > 0.0);
        let (ml, mr) = dilution_master_sides(&spec, &cfg).unwrap();
        prop_assume!(mr > 0.0 && rel_err(ml, mr) > 1e-9);
        let (gl, gr) = dilution_general_sides(&spec, &cfg).unwrap();
        prop_assume!(rel_err(gl, gr) > 1e-9);
        prop_assert_eq!(ml > mr, gl > gr);
    }

    #[test]
    fn equal_variance_shortcuts_match_the_general_forms(
        n0 in positive_size(), n1 in size(), n2 in size(), n3 in size(),
        var_s in 0.01f64..100.0, var_c0 in 0.01f64..100.0, means in prop::collection::vec(-5.0f64..5.0, 8),
    ) {
        prop_assume!(n1 + n3 > 0.0 && n2 + n3 > 0.0);
        let mut spec = PopulationSpec::uniform(GroupSizes::new(n0, n1, n2, n3), 0.0, var_s);
        for (g, mean) in GroupScenario::ALL.into_iter().zip(means) {
            spec.set(g, mean, if g == C0 { var_c0 } else { var_s });
        }
        let cfg = TestConfig::default();
        let general = dilution_theta_check(&spec).unwrap();
        prop_assert_eq!(general, dilution_equal_variance_check(var_s, var_c0, &spec.n));
        let (_, rhs) = dual_control_lhs_rhs(&spec, &cfg).unwrap();
        prop_assert!(rel_err(rhs, dual_control_rhs_equal_variance(&spec.n, &cfg)) < 1e-9);
    }

    #[test]
    fn power_is_pi_min_at_the_mde_and_monotone(sigma in 1e-4f64..1e3, cfg in config(), a in 0.0f64..10.0, b in 0.0f64..10.0) {
        let theta = xdesign::model::z_margin(&cfg) * sigma;
        prop_assert!((power_for_sigma(sigma, theta, &cfg) - cfg.pi_min).abs() < 1e-12);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(power_for_sigma(sigma, lo * sigma, &cfg) <= power_for_sigma(sigma, hi * sigma, &cfg));
    }

    #[test]
    fn quantile_and_cdf_are_inverse(q in 1e-12f64..(1.0 - 1e-12)) {
        let z = normal_quantile(q).unwrap();
        let back = normal_cdf(z);
        let ok = if q < 0.5 { rel_err(back, q) < 1e-12 } else { (back - q).abs() < 1e-15 };
        prop_assert!(ok, "q={} back={}", q, back);
    }
}

/// Populations with unqualified users, for the dilution rules.
fn diluted_spec() -> impl Strategy<Value = PopulationSpec> {
    (positive_size(), size(), size(), size(), moments())
        .prop_filter("qualified users needed", |(_, n1, n2, n3, _)| {
            n1 + n2 + n3 > 0.0 && n1 + n3 > 0.0 && n2 + n3 > 0.0
        })
        .prop_map(|(n0, n1, n2, n3, m)| build(GroupSizes::new(n0, n1, n2, n3), m))
}

fn scale_moments(spec: &PopulationSpec, c: f64) -> PopulationSpec {
    let mut out = spec.clone();
    for g in GroupScenario::ALL {
        let (m, v) = mv(spec, g);
        out.set(g, c * m, c * c * v);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn dilution_terms_reproduce_qualified_only_summary(spec in diluted_spec(), cfg in config()) {
        let t = xdesign::rules::DilutionTerms::new(&spec, &cfg).unwrap();
        let s3 = effect_summary(SetupKind::QualifiedOnly, &spec, &cfg).unwrap();
        let scale = s3.delta.abs().max(1e-300);
        prop_assert!((t.delta_qualified(&spec.n) - s3.delta).abs() <= 1e-12 * scale.max(1e-6));
        prop_assert!(rel_err(t.theta_qualified(&spec.n), s3.theta_star) < 1e-12);
    }

    #[test]
    fn every_sufficient_dilution_rule_agrees_with_the_direct_comparison(spec in diluted_spec(), cfg in config()) {
        let v = match xdesign::rules::dilution_verdict(&spec, &cfg) {
            Ok(v) => v,
            Err(_) => return Ok(()),
        };
        let s3 = effect_summary(SetupKind::QualifiedOnly, &spec, &cfg).unwrap();
        let s2 = effect_summary(SetupKind::AllSamples, &spec, &cfg).unwrap();
        let direct = compare(&s3, &s2).unwrap().winner == Some(SetupKind::QualifiedOnly);
        prop_assert_eq!(v.undiluted_superior, direct);

        // Each shortcut is sufficient on its own, so their order cannot change the verdict.
        let (delta, theta) = (v.delta_qualified, v.theta_qualified);
        let n = spec.n;
        let trivial = n.total() / n.g0 * theta <= delta;
        let powered = theta <= delta;
        let smaller_mde = dilution_theta_check(&spec).unwrap();
        if smaller_mde || trivial || powered {
            prop_assert!(direct);
        }
        // The trivial case implies the adequately-powered one and the master inequality.
        if trivial {
            prop_assert!(powered);
            let (ml, mr) = dilution_master_sides(&spec, &cfg).unwrap();
            prop_assert!(ml > mr);
        }
    }

    #[test]
    fn verdicts_are_invariant_to_response_scale(spec in diluted_spec(), cfg in config(), c in 0.01f64..100.0) {
        let scaled = scale_moments(&spec, c);
        let (l, r) = dual_control_lhs_rhs(&spec, &cfg).unwrap();
        let (ls, rs) = dual_control_lhs_rhs(&scaled, &cfg).unwrap();
        prop_assert!(rel_err(l, ls) < 1e-9 || (l - ls).abs() < 1e-9);
        prop_assert!(rel_err(r, rs) < 1e-9);
        prop_assume!(rel_err(l, r) > 1e-6);
        prop_assert_eq!(l > r, ls > rs);
        if let (Ok(a), Ok(b)) = (xdesign::rules::dilution_verdict(&spec, &cfg), xdesign::rules::dilution_verdict(&scaled, &cfg)) {
            let (ml, mr) = dilution_master_sides(&spec, &cfg).unwrap();
            prop_assume!(rel_err(ml, mr) > 1e-6);
            prop_assert_eq!(a.undiluted_superior, b.undiluted_superior);
        }
    }
}

#[test]
fn required_n_threshold_flips_the_dual_control_verdict() {
    use xdesign::rules::{required_n, SimplifiedAssumptions};
    let cfg = TestConfig::default();
    for (var, diff) in [(0.16, 0.005), (1.0, 0.02), (4.0, -0.1), (0.5, 0.3)] {
        let a = SimplifiedAssumptions {
            sigma_sq_s: var,
            n_common: 1.0,
            delta_diff: diff,
        };
        let threshold = required_n(&a, &cfg).unwrap().value();
        for (factor, expect) in [(0.99, false), (1.01, true)] {
            let n = threshold * factor;
            let mut spec = PopulationSpec::uniform(GroupSizes::new(0.0, n, n, n), 0.3, var);
            // Only the group-2 lift differs, so the lift difference equals `diff`.
            spec.set(I2, 0.3 + diff, var);
            let (lhs, rhs) = dual_control_lhs_rhs(&spec, &cfg).unwrap();
            // The simplified criterion is on the magnitude of the difference.
            assert_eq!(lhs.abs() > rhs, expect, "var={var} diff={diff} factor={factor}");
        }
    }
}
