mod common;

use bellcert::certification::Certifier;
use bellcert::entropy::{
    analytic_lower_bound, certified_min_entropy, certified_shannon_min, entropy_report, shannon, Distribution4,
    OutcomeBounds,
};
use bellcert::npa::{bell_functional, LinearFunctional, Relaxation};
use bellcert::scenario::{
    canonical_key, classical_bound, expression_at, expression_count, expression_ordinal, is_canonical, Protocol,
    Symmetry,
};
use bellcert::sdp::{solve, Direction, SdpProblem, SolverOptions};
use bellcert::search::{histogram, Measure};
use bellcert::{CoefficientMatrix, Level, Scenario, Spot};
use proptest::prelude::*;

fn scenario() -> impl Strategy<Value = Scenario> {
    (1usize..=4, 1usize..=3).prop_map(|(n, m)| Scenario::new(n, m).unwrap())
}

fn nonzero_alpha(s: Scenario) -> impl Strategy<Value = CoefficientMatrix> {
    (0..expression_count(s)).prop_map(move |k| expression_at(s, k).unwrap())
}

fn small_alpha() -> impl Strategy<Value = CoefficientMatrix> {
    (2usize..=3, 2usize..=3).prop_flat_map(|(n, m)| nonzero_alpha(Scenario::new(n, m).unwrap()))
}

fn shuffled(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

fn signs(n: usize) -> impl Strategy<Value = Vec<i8>> {
    proptest::collection::vec(prop_oneof![Just(1i8), Just(-1i8)], n)
}

/// An expression with a random relabeling of it.
fn relabeling() -> impl Strategy<Value = (CoefficientMatrix, CoefficientMatrix)> {
    scenario().prop_flat_map(|s| {
        (nonzero_alpha(s), shuffled(s.n_alice()), shuffled(s.n_bob()), signs(s.n_alice()), signs(s.n_bob())).prop_map(
            |(a, rp, cp, rs, cs)| {
                let b = a.relabeled(&rp, &cp, &rs, &cs);
                (a, b)
            },
        )
    })
}

fn simplex_point() -> impl Strategy<Value = [f64; 4]> {
    proptest::array::uniform4(0.0f64..1.0).prop_filter_map("nonzero mass", |v| {
        let t: f64 = v.iter().sum();
        (t > 1e-3).then(|| v.map(|x| x / t))
    })
}

fn outcome_box() -> impl Strategy<Value = OutcomeBounds<f64>> {
    (simplex_point(), proptest::array::uniform4(0.0f64..0.5), proptest::array::uniform4(0.0f64..0.5)).prop_map(
        |(q, down, up)| {
            let lower: [f64; 4] = std::array::from_fn(|k| (q[k] - down[k]).max(0.0));
            let upper: [f64; 4] = std::array::from_fn(|k| (q[k] + up[k]).min(1.0));
            OutcomeBounds::new(lower, upper).unwrap()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn ordinal_round_trip(s in scenario(), k in any::<u64>()) {
        let k = k % expression_count(s);
        let a = expression_at(s, k).unwrap();
        prop_assert_eq!(expression_ordinal(&a), k);
        prop_assert!(a.l1_norm() > 0);
        prop_assert_eq!(a.to_string().parse::<CoefficientMatrix>().unwrap(), a);
    }

    #[test]
    fn classical_bound_respects_symmetries((a, b) in relabeling()) {
        let c = classical_bound(&a);
        prop_assert_eq!(classical_bound(&b), c);
        prop_assert_eq!(classical_bound(&a.negated()), c);
        prop_assert!(c >= 1 && c <= a.l1_norm() as i64);
    }

    #[test]
    fn canonical_key_is_a_class_invariant((a, b) in relabeling()) {
        prop_assert_eq!(canonical_key(&a, Symmetry::Full), canonical_key(&b, Symmetry::Full));
        prop_assert_eq!(canonical_key(&a, Symmetry::GlobalSign), canonical_key(&a.negated(), Symmetry::GlobalSign));
        let rep = canonical_key(&a, Symmetry::Full).representative();
        prop_assert!(is_canonical(&rep, Symmetry::Full));
        prop_assert_eq!(canonical_key(&rep, Symmetry::Full), canonical_key(&a, Symmetry::Full));
    }

    #[test]
    fn certified_shannon_is_a_lower_bound(b in outcome_box(), t in proptest::array::uniform4(0.0f64..1.0)) {
        let (h, witness) = certified_shannon_min(&b).unwrap();
        prop_assert!(b.contains(&witness, 1e-9));
        prop_assert!((shannon(&witness) - h).abs() < 1e-9);
        // any box point: pull towards the witness until inside
        let tsum: f64 = t.iter().sum();
        if tsum > 1e-6 {
            let p = Distribution4::new(t.map(|v| v / tsum)).unwrap();
            if b.contains(&p, 0.0) {
                prop_assert!(shannon(&p) >= h - 1e-9);
            }
        }
    }

    #[test]
    fn entropy_report_ordering(b in outcome_box()) {
        let r = entropy_report(&b).unwrap();
        prop_assert!(r.min_entropy_certified <= r.shannon_certified + 1e-9);
        prop_assert!(r.min_entropy_certified >= -1e-12 && r.shannon_certified <= 2.0 + 1e-12);
        if let Some(gap) = r.ansatz_gap() {
            prop_assert!(gap >= -1e-9);
        }
        let analytic = analytic_lower_bound(r.u_max.max(0.25)).unwrap();
        prop_assert!(analytic <= r.shannon_certified + 1e-9);
        prop_assert!((certified_min_entropy(&b).unwrap() - r.min_entropy_certified).abs() < 1e-12);
    }

    #[test]
    fn histogram_conserves_records(values in proptest::collection::vec(0.0f64..=2.0, 1..200), width in 0.01f64..0.5) {
        let records: Vec<_> = values.iter().map(|&h| record_with_entropy(h)).collect();
        let bins = histogram(&records, Measure::Shannon, 0.1, width).unwrap();
        prop_assert_eq!(bins.iter().map(|b| b.count).sum::<u64>(), values.len() as u64);
        prop_assert!((bins.last().unwrap().hi - 2.0).abs() < 1e-12);
    }
}

fn record_with_entropy(h: f64) -> bellcert::search::ProtocolRecord {
    let line = format!(
        r#"{{"version":"bef-record/1","index":0,"ordinal":0,"scenario":{{"n_alice":2,"n_bob":2}},"alpha":"1,1;1,-1","spot":[1,1],"level":"1+AB","tolerance":1e-8,"psd_tolerance":1e-7,"classical_bound":2,"tsirelson":2.8284271247461903,"non_certifying":false,"infeasible":false,"spot_correlator_in_expression":true,"noise":[{{"p":0.1,"sub_classical":false,"lower":null,"upper":null,"shannon":{h},"min_entropy":null,"shannon_ansatz":null,"shannon_raw":null,"min_entropy_raw":null,"shannon_ansatz_raw":null,"analytic_bound":null,"ansatz_permutation":null,"classification_mismatch":false,"flex":null,"error":null}}],"error":null}}"#
    );
    serde_json::from_str(&line).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bound_lies_between_classical_and_algebraic(a in small_alpha()) {
        let c = Certifier::<f64>::new(a.scenario(), Level::OnePlusAB);
        let b = c.tsirelson_bound(&a).unwrap();
        prop_assert!(b >= classical_bound(&a) as f64 - 1e-7, "{} < classical", b);
        prop_assert!(b <= a.l1_norm() as f64 + 1e-7);
        prop_assert!((c.tsirelson_bound(&a.negated()).unwrap() - b).abs() < 1e-6);
    }

    #[test]
    fn bound_is_relabeling_invariant((a, b) in relabeling().prop_filter("small", |(a, _)| a.scenario().n_pairs() <= 9)) {
        let c = Certifier::<f64>::new(a.scenario(), Level::OnePlusAB);
        prop_assert!((c.tsirelson_bound(&a).unwrap() - c.tsirelson_bound(&b).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn levels_tighten_monotonically(a in small_alpha()) {
        let bound = |l| Certifier::<f64>::new(a.scenario(), l).tsirelson_bound(&a).unwrap();
        let (one, mid, two) = (bound(Level::One), bound(Level::OnePlusAB), bound(Level::Two));
        prop_assert!(one >= mid - 1e-6 && mid >= two - 1e-6, "{} {} {}", one, mid, two);
    }

    #[test]
    fn qubit_strategies_stay_below_the_bound(a in small_alpha()) {
        let b = Certifier::<f64>::new(a.scenario(), Level::Two).tsirelson_bound(&a).unwrap();
        prop_assert!(common::qubit_bell_value(&a, 4, 0) <= b + 1e-6);
    }

    #[test]
    fn solver_respects_scaling_and_shift(scale in 0.1f64..10.0, shift in -5.0f64..5.0, coefs in proptest::collection::vec(-2.0f64..2.0, 8)) {
        let rel = Relaxation::<f64>::new(Scenario::new(2, 2).unwrap(), Level::OnePlusAB);
        let n = rel.structure().n_variables();
        let mut f = LinearFunctional::constant(0.0);
        for (k, c) in coefs.iter().enumerate() {
            f.add_term(1 + k % (n - 1), *c);
        }
        let opts = SolverOptions::default();
        let solve_with = |g: LinearFunctional<f64>, d| solve(&SdpProblem::new(rel.layout().clone(), g), d, &opts).unwrap();
        let base = solve_with(f.clone(), Direction::Maximize);
        prop_assume!(base.is_optimal());
        let scaled = solve_with(f.scaled(scale).plus(&LinearFunctional::constant(shift)), Direction::Maximize);
        prop_assert!((scaled.value - (scale * base.value + shift)).abs() < 1e-6 * (1.0 + scaled.value.abs()));
        let low = solve_with(f.clone(), Direction::Minimize);
        prop_assert!(low.value <= base.value + 1e-7);
        // dual side bounds the primal side
        prop_assert!(base.dual_value >= base.value - 1e-6);
        let again = solve_with(f, Direction::Maximize);
        prop_assert_eq!(again.value.to_bits(), base.value.to_bits());
    }

    #[test]
    fn boxes_hold_a_distribution(p in 0.0f64..0.4, spot in (0usize..2, 0usize..2)) {
        let a: CoefficientMatrix = "1,1;1,-1".parse().unwrap();
        let c = Certifier::<f64>::new(a.scenario(), Level::OnePlusAB);
        let b = c.tsirelson_bound(&a).unwrap();
        let pr = Protocol::new(a.clone(), b, Spot::new(spot.0, spot.1)).unwrap();
        let bx = c.probability_box(&pr, p).unwrap();
        prop_assert!(bx.lower.iter().sum::<f64>() <= 1.0 + 1e-9);
        prop_assert!(bx.upper.iter().sum::<f64>() >= 1.0 - 1e-9);
        for k in 0..4 {
            prop_assert!(bx.lower[k] >= 0.0 && bx.lower[k] <= bx.upper[k] && bx.upper[k] <= 1.0);
        }
        let cert = c.certify(&pr, p).unwrap();
        prop_assert!(cert.min_entropy <= cert.shannon + 1e-9);
        prop_assert_eq!(cert.sub_classical, (1.0 - p) * b <= 2.0 + 1e-7);
    }

    #[test]
    fn flex_grows_with_noise(p1 in 0.0f64..0.2, dp in 0.01f64..0.1) {
        let a: CoefficientMatrix = "1,1;1,-1".parse().unwrap();
        let c = Certifier::<f64>::new(a.scenario(), Level::OnePlusAB);
        let b = c.tsirelson_bound(&a).unwrap();
        let f1 = c.flex(&a, b, p1).unwrap().flex;
        let f2 = c.flex(&a, b, p1 + dp).unwrap().flex;
        prop_assert!(f2 >= f1 - 1e-6, "{} then {}", f1, f2);
        prop_assert!(f1 >= 1.0 - 1e-6 && f2 <= 4.0 + 1e-9);
    }
}

#[test]
fn bell_functional_matches_correlators() {
    let s = Scenario::new(2, 2).unwrap();
    let rel = Relaxation::<f64>::new(s, Level::One);
    let a: CoefficientMatrix = "1,1;1,-1".parse().unwrap();
    let g = bell_functional::<f64>(&a, rel.structure()).unwrap();
    // deterministic strategy A = B = +1 everywhere: all projectors are 1
    let m = rel.structure().assignment(|_| 1.0);
    assert!((g.evaluate(&m) - 2.0).abs() < 1e-12);
    // the uniform strategy has zero correlators
    let m = rel.structure().assignment(|w| {
        if w.is_identity() {
            1.0
        } else if w.len() == 1 {
            0.5
        } else {
            0.25
        }
    });
    assert!(g.evaluate(&m).abs() < 1e-12);
}
