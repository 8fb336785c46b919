mod common;

use common::reference;
use hiero::eval::{average_precision, hungarian, interval_iou, map_at_iou, procedure_f1_iou, recall_at_iou, threshold_key, RankedQuery};
use hiero::io::{StepAnnotation, StepInterval, StepPrediction, VideoPredictions};
use hiero::DenseMatrix;
use proptest::prelude::*;

fn cost_matrix() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..=7, 1usize..=7).prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(-50.0f64..50.0, r * c)))
}

fn interval() -> impl Strategy<Value = (f64, f64)> {
    (0.0f64..50.0, 0.1f64..20.0).prop_map(|(s, l)| (s, s + l))
}

fn query() -> impl Strategy<Value = RankedQuery> {
    (prop::collection::vec(interval(), 0..6), interval()).prop_map(|(ranked, gt)| RankedQuery { ranked, gt: Some(gt) })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn hungarian_matches_brute_force((r, c, data) in cost_matrix()) {
        let m = DenseMatrix::from_vec(r, c, data).unwrap();
        let got = hungarian(&m).unwrap();
        let want = reference::brute_force_assignment(&reference::to_rows(&m));
        prop_assert!((got.total_cost - want).abs() <= 1e-9, "{} vs {}", got.total_cost, want);
        // the reported matching is injective and realizes the reported cost
        let mut cols: Vec<usize> = got.row_to_col.iter().flatten().copied().collect();
        let cost: f64 = got.row_to_col.iter().enumerate().filter_map(|(i, j)| j.map(|j| m.get(i, j))).sum();
        prop_assert!((cost - got.total_cost).abs() <= 1e-9);
        cols.sort_unstable();
        cols.dedup();
        prop_assert_eq!(cols.len(), r.min(c));
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in interval(), b in interval()) {
        let x = interval_iou(a, b);
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(x, interval_iou(b, a));
        prop_assert!((interval_iou(a, a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn recall_is_monotone(queries in prop::collection::vec(query(), 1..12)) {
        let ks = [1, 2, 5];
        let thresholds = [0.1, 0.3, 0.5, 0.7, 0.9];
        let rep = recall_at_iou(&queries, &ks, &thresholds);
        let at = |k: usize, t: f64| rep.metrics[&format!("R@{k}@{}", threshold_key(t))];
        for &k in &ks {
            for w in thresholds.windows(2) {
                prop_assert!(at(k, w[1]) <= at(k, w[0]));
            }
        }
        for &t in &thresholds {
            prop_assert!(at(1, t) <= at(2, t) && at(2, t) <= at(5, t));
        }
    }

    #[test]
    fn map_is_monotone_in_threshold(
        gts in prop::collection::vec((interval(), 0usize..3), 1..8),
        preds in prop::collection::vec((interval(), 0usize..3, 0.0f64..1.0), 0..12),
    ) {
        let gt = vec![StepAnnotation {
            video_id: "v".into(),
            intervals: gts.iter().map(|&((s, e), l)| StepInterval { start: s, end: e, label: Some(l) }).collect(),
        }];
        let pv = vec![VideoPredictions {
            video_id: "v".into(),
            predictions: preds.iter().map(|&((s, e), l, score)| StepPrediction { start: s, end: e, label: Some(l), score }).collect(),
        }];
        let thresholds = [0.1, 0.3, 0.5, 0.7];
        let rep = map_at_iou(&pv, &gt, &thresholds);
        let vals: Vec<f64> = thresholds.iter().map(|&t| rep.metrics[&format!("mAP@{}", threshold_key(t))]).collect();
        for w in vals.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "{vals:?}");
        }
        prop_assert!(vals.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn procedure_matching_ignores_cluster_names(labels in prop::collection::vec(0usize..4, 1..60), shift in 1usize..4) {
        let gt: Vec<Option<usize>> = labels.iter().map(|&l| (l < 3).then_some(l)).collect();
        let pred: Vec<Option<usize>> = labels.iter().enumerate().map(|(i, &l)| Some((l + i / 7) % 4)).collect();
        let renamed: Vec<Option<usize>> = pred.iter().map(|p| p.map(|c| (c + shift) % 4)).collect();
        let a = procedure_f1_iou(&pred, &gt, 3).unwrap();
        let b = procedure_f1_iou(&renamed, &gt, 3).unwrap();
        // tied matchings may pair steps differently, but the matched overlap is optimal either way
        let matched = |sc: &hiero::eval::ProcedureScores| -> f64 {
            sc.steps.iter().map(|s| s.recall * gt.iter().filter(|g| **g == Some(s.step)).count() as f64).sum()
        };
        prop_assert!((matched(&a) - matched(&b)).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&a.f1) && a.iou <= a.f1 + 1e-12);
    }
}

#[test]
fn perfect_clustering_scores_one() {
    let gt: Vec<Option<usize>> = [0, 0, 1, 1, 2, 2, 0].iter().map(|&l| Some(l)).collect();
    let pred: Vec<Option<usize>> = [5, 5, 3, 3, 0, 0, 5].iter().map(|&l| Some(l)).collect();
    let s = procedure_f1_iou(&pred, &gt, 3).unwrap();
    assert!((s.f1 - 1.0).abs() < 1e-12 && (s.iou - 1.0).abs() < 1e-12);
}

#[test]
fn average_precision_hand_values() {
    assert!((average_precision(&[true, false, true], 2) - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    assert!((average_precision(&[false, true], 1) - 0.5).abs() < 1e-12);
    assert_eq!(average_precision(&[], 3), 0.0);
}
