use ntl_core::gbdt::{BoostedEnsemble, Direction, TrainConfig, TreeNode};
use ntl_core::shap::{brute_force_shap, TreeExplainer};
use proptest::prelude::*;

fn tree(p: usize, depth: u32) -> BoxedStrategy<TreeNode> {
    let leaf = (-10.0f64..10.0, 1u64..40).prop_map(|(v, c)| TreeNode::leaf(v, c));
    leaf.prop_recursive(depth, 32, 2, move |inner| {
        (0..p, -1.0f64..1.0, any::<bool>(), inner.clone(), inner).prop_map(|(f, t, left, l, r)| {
            TreeNode::split(f, t, if left { Direction::Left } else { Direction::Right }, l, r)
        })
    })
    .boxed()
}

fn ensemble(p: usize) -> impl Strategy<Value = BoostedEnsemble> {
    (prop::collection::vec(tree(p, 4), 1..6), -3.0f64..3.0, 0.05f64..1.0).prop_map(move |(trees, base, lr)| {
        BoostedEnsemble {
            base_score: base,
            learning_rate: lr,
            trees,
            feature_names: (0..p).map(|i| format!("f{i}")).collect(),
            config: TrainConfig::default(),
        }
    })
}

fn model_and_row() -> impl Strategy<Value = (BoostedEnsemble, Vec<Option<f64>>)> {
    (1usize..7).prop_flat_map(|p| (ensemble(p), prop::collection::vec(prop::option::weighted(0.8, -1.2f64..1.2), p)))
}

proptest! {
    #[test]
    fn matches_brute_force((model, row) in model_and_row()) {
        let fast = TreeExplainer::new(&model).explain(&row);
        let slow = brute_force_shap(&model, &row).unwrap();
        for (a, b) in fast.phi.iter().zip(&slow.phi) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
        }
        prop_assert!((fast.base_value - slow.base_value).abs() <= 1e-9 * (1.0 + slow.base_value.abs()));
    }

    #[test]
    fn local_accuracy((model, row) in model_and_row()) {
        let r = TreeExplainer::new(&model).explain(&row);
        prop_assert!(r.local_accuracy_gap() <= 1e-9 * (1.0 + r.prediction.abs()));
    }

    #[test]
    fn features_off_every_path_get_zero((model, row) in model_and_row()) {
        let used: Vec<usize> = model.trees.iter().flat_map(|t| t.used_features()).collect();
        let r = TreeExplainer::new(&model).explain(&row);
        for (f, phi) in r.phi.iter().enumerate() {
            if !used.contains(&f) {
                prop_assert_eq!(*phi, 0.0);
            }
        }
    }

    #[test]
    fn scaling_learning_rate_scales_phi((model, row) in model_and_row(), factor in 0.1f64..3.0) {
        let scaled = BoostedEnsemble { learning_rate: model.learning_rate * factor, ..model.clone() };
        let a = TreeExplainer::new(&model).explain(&row);
        let b = TreeExplainer::new(&scaled).explain(&row);
        for (x, y) in a.phi.iter().zip(&b.phi) {
            prop_assert!((x * factor - y).abs() <= 1e-9 * (1.0 + y.abs()));
        }
    }
}
