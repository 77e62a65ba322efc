//! Property tests over randomized inputs.

use proptest::prelude::*;

use tio_core::bundle::{load_bundle, write_bundle, EmbeddingBundle};
use tio_core::gat::{attention, kernel_weights, normalize_distances, GatLayer};
use tio_core::graph::{build_graph, RelationPolicy};
use tio_core::metrics::{auc, average_precision_default, DetectionOutcome};
use tio_core::synth::{generate_synthetic_bundle, SynthSpec};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Attention rows are stochastic and every score stays in (0, 1].
    #[test]
    fn attention_rows_are_stochastic(
        seed in 0u64..1000,
        frames in 1usize..5,
        objects in 0usize..4,
        keywords in 1usize..4,
    ) {
        let spec = SynthSpec {
            num_videos: 1,
            frames_per_video: frames,
            dim: 6,
            num_classes: keywords.max(2),
            class_separation: 3.0,
            objects_per_frame: objects.max(1),
        };
        let mut bundle: EmbeddingBundle<f64> = generate_synthetic_bundle(seed, &spec).unwrap();
        if objects == 0 {
            for f in &mut bundle.videos[0].frames {
                f.objects.clear();
            }
        }
        let g = build_graph(&bundle, 0, RelationPolicy::All).unwrap();
        let report = attention(&g, &GatLayer::frozen_default()).unwrap();
        for u in 0..g.node_count() {
            let entries = report.node_entries(u);
            if entries.is_empty() {
                continue;
            }
            let sum: f64 = entries.iter().map(|e| e.alpha).sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            for e in entries {
                prop_assert!(e.alpha > 0.0 && e.alpha <= 1.0);
                prop_assert!(e.weight > 0.0 && e.weight <= 1.0);
                prop_assert!(e.normalized >= 0.0 && e.normalized <= 1.0);
            }
        }
    }

    /// Interval normalization pins the extremes; kernel weights live in
    /// (0, 1] and hit 1 exactly at zero normalized distance.
    #[test]
    fn normalization_and_kernel_bounds(
        values in prop::collection::vec(0.0f64..1e6, 1..40),
        sigma in 0.05f64..5.0,
    ) {
        let normalized = normalize_distances(&values).unwrap();
        let lo = normalized.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = normalized.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let constant = values.iter().all(|&v| v == values[0]);
        if constant {
            prop_assert_eq!(lo, 0.0);
            prop_assert_eq!(hi, 0.0);
        } else {
            prop_assert_eq!(lo, 0.0);
            prop_assert_eq!(hi, 1.0);
        }
        for (&d, w) in normalized.iter().zip(kernel_weights(&normalized, sigma)) {
            prop_assert!(w > 0.0 && w <= 1.0);
            if d == 0.0 {
                prop_assert_eq!(w, 1.0);
            }
        }
    }

    /// Generated bundles survive the on-disk round trip bit-exactly.
    #[test]
    fn bundle_round_trip_is_identity(
        seed in 0u64..500,
        videos in 1usize..4,
        frames in 1usize..4,
        dim in 2usize..12,
    ) {
        let spec = SynthSpec {
            num_videos: videos,
            frames_per_video: frames,
            dim,
            num_classes: 2,
            class_separation: 2.0,
            objects_per_frame: 1,
        };
        let bundle: EmbeddingBundle<f64> = generate_synthetic_bundle(seed, &spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&bundle, dir.path()).unwrap();
        let loaded: EmbeddingBundle<f64> = load_bundle(dir.path()).unwrap();
        prop_assert_eq!(loaded, bundle);
    }

    /// AP and AUC are invariant under strictly increasing score
    /// transforms that preserve [0, 1].
    #[test]
    fn rank_metrics_invariant_under_monotone_transform(
        raw in prop::collection::vec((0u8..=100, prop::bool::ANY), 2..16),
        power in 1u32..4,
    ) {
        let scores: Vec<f64> = raw.iter().map(|&(s, _)| s as f64 / 100.0).collect();
        let mut truths: Vec<bool> = raw.iter().map(|&(_, t)| t).collect();
        if truths.iter().all(|&t| t) {
            truths[0] = false;
        }
        if truths.iter().all(|&t| !t) {
            truths[0] = true;
        }
        let transformed: Vec<f64> = scores.iter().map(|&s| s.powi(power as i32)).collect();
        let a = DetectionOutcome::new(scores, truths.clone()).unwrap();
        let b = DetectionOutcome::new(transformed, truths).unwrap();
        prop_assert!((average_precision_default(&a).unwrap() - average_precision_default(&b).unwrap()).abs() < 1e-9);
        prop_assert!((auc(&a).unwrap() - auc(&b).unwrap()).abs() < 1e-9);
    }
}
