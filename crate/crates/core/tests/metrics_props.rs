use evifusion::metrics::{auprc, auroc, brier, confusion, nll, rates, Confusion};
use evifusion::seed::substream;
use proptest::prelude::*;
use rand::Rng;

/// Pairwise AUROC counting ties as one half.
fn brute_force_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            total += if si > sj {
                1.0
            } else if si == sj {
                0.5
            } else {
                0.0
            };
        }
    }
    total / pairs
}

/// Scores on a coarse grid so ties are common, with both classes present.
fn ranking(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    prop::collection::vec((0u32..40, any::<bool>()), 2..=max).prop_map(|rows| {
        let scores: Vec<f64> = rows.iter().map(|r| r.0 as f64 / 40.0).collect();
        let mut labels: Vec<bool> = rows.iter().map(|r| r.1).collect();
        labels[0] = true;
        labels[1] = false;
        (scores, labels)
    })
}

fn distinct_ranking() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    prop::collection::vec(any::<bool>(), 2..300).prop_perturb(|mut labels, mut rng| {
        let n = labels.len();
        labels[0] = true;
        labels[1] = false;
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let scores = order.iter().map(|&r| r as f64 / n as f64).collect();
        (scores, labels)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn rank_auroc_matches_pairwise(case in ranking(500)) {
        let (scores, labels) = case;
        let fast = auroc(&scores, &labels).unwrap();
        prop_assert!((fast - brute_force_auroc(&scores, &labels)).abs() <= 1e-12);
    }

    #[test]
    fn auroc_ignores_increasing_transforms(case in ranking(200)) {
        let (scores, labels) = case;
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert_eq!(auroc(&scores, &labels).unwrap(), auroc(&warped, &labels).unwrap());
    }

    #[test]
    fn negated_scores_mirror_auroc(case in distinct_ranking()) {
        let (scores, labels) = case;
        let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
        let sum = auroc(&scores, &labels).unwrap() + auroc(&negated, &labels).unwrap();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn calibration_scores_are_bounded(rows in prop::collection::vec((0.0..=1.0f64, any::<bool>()), 1..200)) {
        let probs: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let labels: Vec<bool> = rows.iter().map(|r| r.1).collect();
        let b = brier(&probs, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&b));
        prop_assert!(nll(&probs, &labels).unwrap() >= 0.0);
    }

    #[test]
    fn rate_identities(tp in 0u64..1000, tn in 0u64..1000, fp in 0u64..1000, fn_ in 0u64..1000) {
        let c = Confusion { tp, tn, fp, fn_ };
        let r = rates(&c);
        if tp > 0 {
            let f1 = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
            prop_assert!((r.f1 - f1).abs() <= 1e-12);
            let harmonic = 2.0 / (1.0 / r.precision + 1.0 / r.recall);
            prop_assert!((r.f1 - harmonic).abs() <= 1e-12);
        }
        if tp + fn_ > 0 && tn + fp > 0 {
            prop_assert!((r.bacc - (r.recall + r.specificity) / 2.0).abs() <= 1e-15);
            prop_assert!(r.undefined.iter().all(|u| u != "bacc"));
        }
        for v in [r.precision, r.recall, r.specificity, r.npv, r.bacc, r.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn confusion_counts_partition_the_samples(rows in prop::collection::vec((any::<bool>(), any::<bool>()), 0..100)) {
        let labels: Vec<bool> = rows.iter().map(|r| r.0).collect();
        let predicted: Vec<bool> = rows.iter().map(|r| r.1).collect();
        let c = confusion(&labels, &predicted).unwrap();
        prop_assert_eq!((c.tp + c.tn + c.fp + c.fn_) as usize, rows.len());
        prop_assert_eq!((c.tp + c.fn_) as usize, labels.iter().filter(|&&y| y).count());
    }
}

#[test]
fn random_scores_give_prevalence_auprc() {
    let mut rng = substream(3, "metrics-test");
    let prevalence = 0.118;
    let n = 10_000;
    let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(prevalence)).collect();
    let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let value = auprc(&scores, &labels).unwrap();
    assert!((value - prevalence).abs() < 0.05, "auprc {value}");
}
