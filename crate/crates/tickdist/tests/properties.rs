//! Property tests for the spec-level invariants: split/fold partitioning,
//! augmentation range preservation, attention-map homogeneity, attention
//! loss bounds, and the fast-vs-brute-force ROC-AUC agreement.

use proptest::prelude::*;

use tickdist::data::{DatasetManifest, ManifestRow, SampleSource};
use tickdist::distill::{at_loss, attention_map, AttentionMap, AT_EPSILON};
use tickdist::metrics::{roc_auc, ScoredSample};
use tickdist::train::{augment_with, kfold, split_dataset, AugmentParams};
use tickdist::Tensor;

fn manifest(labels: &[u8]) -> DatasetManifest {
    let rows = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| ManifestRow {
            id: i as u32,
            source: SampleSource::Synthetic {
                seed: i as u64,
                height: 8,
                width: 8,
            },
            label,
            split: None,
        })
        .collect();
    DatasetManifest::new(rows).unwrap()
}

fn roc_auc_brute(samples: &[ScoredSample]) -> f64 {
    let mut wins = 0.0f64;
    let mut pairs = 0.0f64;
    for p in samples.iter().filter(|s| s.label == 1) {
        for n in samples.iter().filter(|s| s.label == 0) {
            pairs += 1.0;
            if p.score > n.score {
                wins += 1.0;
            } else if p.score == n.score {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_is_disjoint_and_exhaustive_for_all_seeds(
        labels in prop::collection::vec(0u8..2, 12..400),
        seed in any::<u64>(),
    ) {
        let m = manifest(&labels);
        let (train, test) = split_dataset(&m, 11, 1, seed).unwrap();
        prop_assert_eq!(train.len() + test.len(), labels.len());
        let mut all: Vec<u32> = train.iter().chain(test.iter()).copied().collect();
        all.sort_unstable();
        all.dedup();
        prop_assert_eq!(all.len(), labels.len());
        prop_assert!(!train.is_empty());
    }

    #[test]
    fn kfold_partitions_for_all_seeds(
        n in 6usize..200,
        k in 2usize..6,
        seed in any::<u64>(),
    ) {
        prop_assume!(k <= n);
        let ids: Vec<u32> = (0..n as u32).collect();
        let folds = kfold(&ids, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen = Vec::new();
        let max = folds.iter().map(|(_, v)| v.len()).max().unwrap();
        let min = folds.iter().map(|(_, v)| v.len()).min().unwrap();
        prop_assert!(max - min <= 1, "fold sizes {min}..{max}");
        for (train, val) in &folds {
            prop_assert_eq!(train.len() + val.len(), n);
            for id in val {
                prop_assert!(train.binary_search(id).is_err());
            }
            seen.extend_from_slice(val);
        }
        seen.sort_unstable();
        prop_assert_eq!(seen, ids);
    }

    #[test]
    fn augmentation_preserves_shape_and_range(
        angle in 0.0..std::f64::consts::TAU,
        flip_h in any::<bool>(),
        flip_v in any::<bool>(),
        zoom in 0.5f64..2.0,
        fill in prop::collection::vec(0.0f32..=1.0, 3 * 12 * 12),
    ) {
        let image = Tensor::from_vec(vec![3, 12, 12], fill).unwrap();
        let params = AugmentParams { angle, flip_horizontal: flip_h, flip_vertical: flip_v, zoom };
        let out = augment_with(&image, &params).unwrap();
        prop_assert_eq!(out.shape(), image.shape());
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn attention_map_is_nonnegative_and_positively_homogeneous(
        data in prop::collection::vec(-2.0f64..2.0, 2 * 3 * 3),
        alpha in -3.0f64..3.0,
    ) {
        let a = Tensor::from_vec(vec![2, 3, 3], data.clone()).unwrap();
        let q = attention_map(&a).unwrap();
        prop_assert!(q.map().data().iter().all(|&v| v >= 0.0));
        // Q(alpha * A) = |alpha| * Q(A)
        let scaled = Tensor::from_vec(vec![2, 3, 3], data.iter().map(|v| v * alpha).collect()).unwrap();
        let q_scaled = attention_map(&scaled).unwrap();
        for (s, q) in q_scaled.map().data().iter().zip(q.map().data()) {
            prop_assert!((s - alpha.abs() * q).abs() < 1e-9);
        }
    }

    #[test]
    fn at_loss_range_symmetry_and_scale_invariance(
        a in prop::collection::vec(0.0f64..5.0, 9),
        b in prop::collection::vec(0.0f64..5.0, 9),
        c in 1e-3f64..1e3,
    ) {
        let qa = AttentionMap::from_raw(Tensor::from_vec(vec![3, 3], a.clone()).unwrap()).unwrap();
        let qb = AttentionMap::from_raw(Tensor::from_vec(vec![3, 3], b).unwrap()).unwrap();
        let l = at_loss(&qa, &qb, AT_EPSILON).unwrap();
        prop_assert!((0.0..=2f64.sqrt() + 1e-9).contains(&l), "loss {l}");
        prop_assert_eq!(l, at_loss(&qb, &qa, AT_EPSILON).unwrap());
        let qc = AttentionMap::from_raw(
            Tensor::from_vec(vec![3, 3], a.iter().map(|v| v * c).collect()).unwrap(),
        ).unwrap();
        prop_assert!(at_loss(&qa, &qc, AT_EPSILON).unwrap() < 1e-7, "scale {c}");
    }

    #[test]
    fn fast_roc_auc_equals_brute_force(
        entries in prop::collection::vec((0u8..2, 0u32..=20), 4..500),
    ) {
        let samples: Vec<ScoredSample> = entries
            .iter()
            .enumerate()
            .map(|(i, &(label, grid))| ScoredSample::new(i as u32, grid as f64 / 20.0, label))
            .collect();
        let has_pos = samples.iter().any(|s| s.label == 1);
        let has_neg = samples.iter().any(|s| s.label == 0);
        prop_assume!(has_pos && has_neg);
        let fast = roc_auc(&samples).unwrap();
        let brute = roc_auc_brute(&samples);
        prop_assert!((fast - brute).abs() < 1e-9, "{fast} vs {brute}");
    }

    #[test]
    fn accuracy_and_confusion_are_permutation_invariant(
        entries in prop::collection::vec((0u8..2, 0.0f64..1.0), 2..100),
        rotation in 0usize..100,
    ) {
        let samples: Vec<ScoredSample> = entries
            .iter()
            .enumerate()
            .map(|(i, &(label, score))| ScoredSample::new(i as u32, score, label))
            .collect();
        let mut rotated = samples.clone();
        rotated.rotate_left(rotation % samples.len());
        let acc_a = tickdist::metrics::accuracy(&samples, 0.5).unwrap();
        let acc_b = tickdist::metrics::accuracy(&rotated, 0.5).unwrap();
        prop_assert_eq!(acc_a, acc_b);
        let c_a = tickdist::metrics::confusion_matrix(&samples, 0.5).unwrap();
        let c_b = tickdist::metrics::confusion_matrix(&rotated, 0.5).unwrap();
        prop_assert_eq!(c_a, c_b);
    }

    #[test]
    fn roc_auc_is_invariant_under_monotone_transforms(
        entries in prop::collection::vec((0u8..2, 0.0f64..1.0), 4..120),
    ) {
        let samples: Vec<ScoredSample> = entries
            .iter()
            .enumerate()
            .map(|(i, &(label, score))| ScoredSample::new(i as u32, score, label))
            .collect();
        prop_assume!(samples.iter().any(|s| s.label == 1) && samples.iter().any(|s| s.label == 0));
        let base = roc_auc(&samples).unwrap();
        // strictly monotone map of scores into [0, 1]: x -> x^3 scaled
        let transformed: Vec<ScoredSample> = samples
            .iter()
            .map(|s| ScoredSample::new(s.id, s.score.powi(3), s.label))
            .collect();
        let mapped = roc_auc(&transformed).unwrap();
        prop_assert!((base - mapped).abs() < 1e-12, "{base} vs {mapped}");
    }
}
