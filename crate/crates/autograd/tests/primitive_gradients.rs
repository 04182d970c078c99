use masa_autograd::gradcheck::{primitive_suite, DEFAULT_STEP};
use masa_autograd::{Graph, Tensor};
use proptest::prelude::*;

#[test]
fn every_primitive_matches_central_differences() {
    for seed in [0, 1, 2] {
        let checks = primitive_suite(seed, DEFAULT_STEP).unwrap();
        assert!(checks.len() >= 20);
        for c in checks {
            assert!(
                c.report.max_rel_error < 1e-6,
                "{} (seed {seed}): {:?}",
                c.op,
                c.report
            );
        }
    }
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(xs in prop::collection::vec(-50.0f64..50.0, 1..24)) {
        let mut g = Graph::no_grad();
        let x = g.constant(Tensor::row(&xs));
        let y = g.softmax(x);
        let total: f64 = g.value(y).data().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(g.value(y).data().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn l2_normalized_rows_have_unit_norm(xs in prop::collection::vec(-10.0f64..10.0, 2..16)) {
        prop_assume!(xs.iter().any(|v| v.abs() > 1e-3));
        let mut g = Graph::no_grad();
        let x = g.constant(Tensor::row(&xs));
        let y = g.l2_normalize(x);
        let norm: f64 = g.value(y).data().iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() < 1e-12);
    }
}
