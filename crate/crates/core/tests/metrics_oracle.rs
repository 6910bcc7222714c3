#[path = "support/metric_oracle.rs"]
mod metric_oracle;

use epd_core::datamodel::{ImageRecord, ObjectInstance, RelationInstance};
use epd_core::metrics::{mean_metric, mean_recall_at_k, recall_at_k, PredictionSet, Triplet};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn library_matches_brute_force(seed in any::<u64>()) {
        let inst = metric_oracle::random_instance(&mut ChaCha8Rng::seed_from_u64(seed));
        if let Err(msg) = metric_oracle::check(&inst) {
            return Err(TestCaseError::fail(msg));
        }
    }
}

#[test]
fn published_mean_fixture() {
    let m = mean_metric(&[54.1, 56.0], &[36.3, 38.8]).unwrap();
    assert!((m - 46.3).abs() < 0.05, "{m}");
    assert_eq!(format!("{m:.1}"), "46.3");
}

fn image_with(gt: &[(usize, usize, usize)]) -> ImageRecord {
    let n = gt.iter().map(|&(s, o, _)| s.max(o)).max().unwrap_or(1) + 1;
    ImageRecord {
        image_id: "fixture".into(),
        objects: (0..n)
            .map(|_| ObjectInstance {
                label: 0,
                bbox: [0.0; 4],
                visual: Vec::new(),
            })
            .collect(),
        relations: gt
            .iter()
            .map(|&(subj, obj, predicate)| RelationInstance {
                subj,
                obj,
                predicate,
                union: Vec::new(),
            })
            .collect(),
    }
}

/// 120 pairs, each predicting its true class, with confidence falling by
/// pair index. Under the graph constraint only the first K pairs count.
#[test]
fn large_k_fixture() {
    let gt: Vec<(usize, usize, usize)> = (0..120).map(|i| (i, i + 1, 1 + i % 4)).collect();
    let images = vec![image_with(&gt)];
    let preds = PredictionSet {
        images: vec![gt
            .iter()
            .enumerate()
            .map(|(i, &(subj, obj, predicate))| Triplet {
                subj,
                obj,
                predicate,
                confidence: 1.0 - i as f32 / 1000.0,
            })
            .collect()],
    };
    assert_eq!(recall_at_k(&images, &preds, 50, true).unwrap(), 50.0 / 120.0);
    assert_eq!(recall_at_k(&images, &preds, 100, true).unwrap(), 100.0 / 120.0);
    // class c has 30 instances; the first 100 pairs hold 25 of each
    let (mr, per_class) = mean_recall_at_k(&images, &preds, 100, true).unwrap();
    assert!(per_class.values().all(|r| r.count == 30 && r.hits == 25));
    assert_eq!(mr, 25.0 / 30.0);
    let (mr50, per_class50) = mean_recall_at_k(&images, &preds, 50, true).unwrap();
    let hits: Vec<usize> = per_class50.values().map(|r| r.hits).collect();
    assert_eq!(hits, vec![13, 13, 12, 12]);
    assert_eq!(mr50, (13.0 / 30.0 + 13.0 / 30.0 + 12.0 / 30.0 + 12.0 / 30.0) / 4.0);
}
