use std::collections::HashSet;

use cvgp::bench::{gen_truth, term_census, BenchmarkConfig, OperandSet};
use cvgp::combinatorics::{count_exact, enumerate_all};
use cvgp::gp::NodeLibrary;
use cvgp::metrics::compute_metrics;
use cvgp::seed;
use cvgp::{ConstStatus, ExpressionTree, Node, Operator};
use num_traits::ToPrimitive;
use proptest::prelude::*;
use rand::Rng;

fn random_tree(rng: &mut impl Rng) -> ExpressionTree {
    let lib = NodeLibrary {
        operators: Operator::ALL.to_vec(),
        variables: (0..5).collect(),
        constants: true,
    };
    let mut nodes = lib.grow(rng.random_range(1..7), rng).nodes().to_vec();
    for n in nodes.iter_mut() {
        match n {
            Node::Op { frozen, .. } | Node::Var { frozen, .. } => *frozen = rng.random_bool(0.3),
            Node::Const(c) => {
                c.status = [ConstStatus::Open, ConstStatus::Standalone, ConstStatus::Expandable][rng.random_range(0..3)];
                c.value = match rng.random_range(0..4) {
                    0 => rng.random_range(-1e-300..1e-300),
                    1 => rng.random_range(-1e12..1e12),
                    2 => rng.random_range(-1.0..1.0f64).round(),
                    _ => rng.random::<f64>() - 0.5,
                };
            }
        }
    }
    ExpressionTree::from_nodes(nodes).unwrap()
}

#[test]
fn text_round_trip_1000_trees() {
    let mut rng = seed::rng(11);
    for _ in 0..1000 {
        let t = random_tree(&mut rng);
        let text = t.to_string();
        let back: ExpressionTree = text.parse().unwrap_or_else(|e| panic!("{text}: {e:?}"));
        assert_eq!(back.nodes().len(), t.nodes().len(), "{text}");
        for (a, b) in back.nodes().iter().zip(t.nodes()) {
            match (a, b) {
                (Node::Const(x), Node::Const(y)) => {
                    assert_eq!(x.value.to_bits(), y.value.to_bits(), "{text}");
                    assert_eq!(x.status, y.status, "{text}");
                }
                _ => assert_eq!(a, b, "{text}"),
            }
        }
        assert_eq!(back.to_string(), text);
    }
}

#[test]
fn generated_truths_match_their_census() {
    let sets: Vec<OperandSet> = ["+,-,*", "inv,+,-,*", "sin,cos,+,-,*", "sin,cos,inv,+,-,*"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    let mut rng = seed::rng(5);
    let mut checked = 0;
    while checked < 1000 {
        let a = rng.random_range(1..=5);
        let b = rng.random_range(0..=a);
        let c = rng.random_range(0..=a);
        let cfg = BenchmarkConfig {
            operands: sets[rng.random_range(0..sets.len())].clone(),
            a,
            b,
            c,
            sigma: 0.0,
            seed: rng.random(),
        };
        if cfg.validate().is_err() {
            continue;
        }
        let truth = gen_truth(&cfg).unwrap_or_else(|e| panic!("{cfg:?}: {e}"));
        let census = term_census(&truth).unwrap();
        assert_eq!((census.singular, census.cross), (b, c), "{truth}");
        assert_eq!(census.variables, (0..a).collect(), "{truth}");
        assert!(truth.is_closed());
        assert!(truth.operators().iter().all(|o| cfg.operands.0.contains(o)));
        assert_eq!(gen_truth(&cfg).unwrap(), truth);
        checked += 1;
    }
}

#[test]
fn enumeration_matches_closed_form() {
    for l in (1..=7).step_by(2) {
        for m in 1..=2 {
            for o in 1..=2 {
                let trees: Vec<_> = enumerate_all(l, m, o).unwrap().collect();
                let distinct: HashSet<String> = trees.iter().map(|t| t.to_string()).collect();
                let count = count_exact(l, m, o).unwrap();
                assert_eq!(distinct.len(), trees.len());
                assert_eq!(trees.len(), count.s.to_usize().unwrap(), "l={l} m={m} o={o}");
                let exact = trees.iter().filter(|t| t.node_count() == l).count();
                assert_eq!(exact, count.a.to_usize().unwrap());
            }
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn vectors() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..64).prop_flat_map(|n| {
        (
            prop::collection::vec(-1e3..1e3f64, n),
            prop::collection::vec(-1e3..1e3f64, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn metric_identities((pred, y) in vectors(), scale in prop_oneof![1e-3..1e3f64, -1e3..-1e-3f64]) {
        let Ok(m) = compute_metrics(&pred, &y) else { return Ok(()) };
        prop_assert_eq!(m.neg_mse, -m.mse);
        if m.nrmse > 0.0 {
            prop_assert!(rel(m.nrmse * m.inv_nrmse, 1.0) <= 1e-12);
        }
        let sp: Vec<f64> = pred.iter().map(|v| v * scale).collect();
        let sy: Vec<f64> = y.iter().map(|v| v * scale).collect();
        let s = compute_metrics(&sp, &sy).unwrap();
        prop_assert!(rel(s.nmse, m.nmse) <= 1e-12, "{} vs {}", s.nmse, m.nmse);
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let c = compute_metrics(&vec![mean; y.len()], &y).unwrap();
        prop_assert!(rel(c.nmse, 1.0) <= 1e-12, "{}", c.nmse);
    }
}
