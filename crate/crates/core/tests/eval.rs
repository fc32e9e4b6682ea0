use std::collections::BTreeSet;

use proptest::prelude::*;

use seggroup::eval::{instance_iou, semantic_iou};
use seggroup::pipeline::PseudoLabels;
use seggroup::scene::GroundTruth;

/// Set-based IoU: for each class seen on a scored point, intersection over
/// union of the point sets `{gt = c}` and `{pred = c}` restricted to points
/// whose ground truth is not ignored.
fn reference_iou(pred: &[i64], gt: &[i64]) -> Vec<(u32, f64)> {
    let scored: Vec<usize> = (0..gt.len()).filter(|&i| gt[i] >= 0).collect();
    let classes: BTreeSet<i64> = scored.iter().flat_map(|&i| [gt[i], pred[i]]).filter(|&c| c >= 0).collect();
    classes
        .into_iter()
        .map(|c| {
            let a: BTreeSet<usize> = scored.iter().copied().filter(|&i| gt[i] == c).collect();
            let b: BTreeSet<usize> = scored.iter().copied().filter(|&i| pred[i] == c).collect();
            let inter = a.intersection(&b).count() as f64;
            let union = a.union(&b).count() as f64;
            (c as u32, inter / union)
        })
        .collect()
}

fn labels(n: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<i64>, Vec<i64>)> {
    n.prop_flat_map(|n| {
        (
            prop::collection::vec(-1i64..5, n),
            prop::collection::vec(-1i64..5, n),
        )
    })
}

fn truth(semantic: &[i64]) -> GroundTruth {
    GroundTruth::new(semantic.to_vec(), semantic.to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn semantic_iou_matches_set_reference((pred, gt) in labels(0..60)) {
        let report = semantic_iou(&pred, &truth(&gt)).unwrap();
        let expected = reference_iou(&pred, &gt);
        prop_assert_eq!(report.per_class.len(), expected.len());
        for (c, v) in expected {
            prop_assert!((report.per_class[&c] - v).abs() < 1e-12, "class {c}: {} vs {v}", report.per_class[&c]);
        }
        if !report.per_class.is_empty() {
            let mean = report.per_class.values().sum::<f64>() / report.per_class.len() as f64;
            prop_assert!((report.mean - mean).abs() < 1e-12);
        }
        prop_assert!(report.per_class.values().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn semantic_iou_is_symmetric_without_ignored_points((pred, gt) in labels(1..60)) {
        let pred: Vec<i64> = pred.iter().map(|&p| p.max(0)).collect();
        let gt: Vec<i64> = gt.iter().map(|&p| p.max(0)).collect();
        let ab = semantic_iou(&pred, &truth(&gt)).unwrap();
        let ba = semantic_iou(&gt, &truth(&pred)).unwrap();
        prop_assert_eq!(ab.per_class.keys().collect::<Vec<_>>(), ba.per_class.keys().collect::<Vec<_>>());
        for (c, v) in &ab.per_class {
            prop_assert!((v - ba.per_class[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn scores_ignore_point_order((pred, gt) in labels(1..60), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut order: Vec<usize> = (0..gt.len()).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let pp: Vec<i64> = order.iter().map(|&i| pred[i]).collect();
        let gp: Vec<i64> = order.iter().map(|&i| gt[i]).collect();
        let a = semantic_iou(&pred, &truth(&gt)).unwrap();
        let b = semantic_iou(&pp, &truth(&gp)).unwrap();
        prop_assert_eq!(a.per_class.keys().collect::<Vec<_>>(), b.per_class.keys().collect::<Vec<_>>());
        for (c, v) in &a.per_class {
            prop_assert!((v - b.per_class[c]).abs() < 1e-12);
        }
        let labels = PseudoLabels { semantic: pred.clone(), instance: pred.clone() };
        let permuted = PseudoLabels { semantic: pp.clone(), instance: pp };
        let ia = instance_iou(&labels, &truth(&gt)).unwrap();
        let ib = instance_iou(&permuted, &truth(&gp)).unwrap();
        prop_assert!((ia.mean - ib.mean).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_scores_one(gt in prop::collection::vec(-1i64..5, 1..60)) {
        let report = semantic_iou(&gt, &truth(&gt)).unwrap();
        prop_assert!(report.per_class.values().all(|&v| v == 1.0));
        let labels = PseudoLabels { semantic: gt.clone(), instance: gt.clone() };
        let inst = instance_iou(&labels, &truth(&gt)).unwrap();
        prop_assert!(inst.unmatched.is_empty());
        if gt.iter().any(|&g| g >= 0) {
            prop_assert_eq!(inst.mean, 1.0);
        }
    }
}

#[test]
fn unlabeled_prediction_only_lowers_its_true_class() {
    let gt = truth(&[0, 0, 1, 1]);
    let r = semantic_iou(&[0, -1, 1, 1], &gt).unwrap();
    assert_eq!(r.per_class[&0], 0.5);
    assert_eq!(r.per_class[&1], 1.0);
    assert_eq!(r.coverage, 0.75);
}

#[test]
fn length_mismatch_is_rejected() {
    assert!(semantic_iou(&[0, 1], &truth(&[0])).is_err());
}
