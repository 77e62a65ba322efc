//! Embedding-level engine for weakly supervised video anomaly detection
//! and retrieval: knowledge-graph construction over precomputed frame /
//! keyword / object embeddings, distance-kernel graph attention, a
//! lightweight temporal encoder, joint classification/retrieval training
//! with triple-based explanations, and a scoring-cost benchmark.
//!
//! All numeric code is generic over [`scalar::Real`] (`f32` or `f64`);
//! the aliases below pin the `f64` instantiations the CLI and the
//! on-disk formats use.

pub mod bench;
pub mod bundle;
pub mod explain;
pub mod gat;
pub mod grad;
pub mod graph;
pub mod heads;
pub mod infer;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod scalar;
pub mod synth;
pub mod temporal;
pub mod train;

pub use scalar::Real;

/// f64 instantiations used throughout the CLI and file formats.
pub type Bundle64 = bundle::EmbeddingBundle<f64>;
pub type Graph64 = graph::KnowledgeGraph<f64>;
pub type GatLayer64 = gat::GatLayer<f64>;
pub type AttentionReport64 = gat::AttentionReport<f64>;
pub type TemporalEncoder64 = temporal::TemporalEncoder<f64>;
pub type Classifier64 = heads::Classifier<f64>;
pub type Model64 = model::Model<f64>;
pub type TrainOutcome64 = train::TrainOutcome<f64>;
pub type DetectionOutcome64 = metrics::DetectionOutcome<f64>;

/// f32 variants for callers that keep data in single precision.
pub type Bundle32 = bundle::EmbeddingBundle<f32>;
pub type Graph32 = graph::KnowledgeGraph<f32>;
pub type Model32 = model::Model<f32>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::RelationPolicy;
    use crate::synth::{generate_synthetic_bundle, SynthSpec};

    #[test]
    fn shared_types_are_send_and_sync() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<Bundle64>();
        assert_send_sync::<Graph64>();
        assert_send_sync::<Model64>();
        assert_send_sync::<AttentionReport64>();
        assert_send_sync::<TrainOutcome64>();
    }

    #[test]
    fn f32_training_path_compiles_and_runs() {
        let spec = SynthSpec {
            num_videos: 4,
            frames_per_video: 3,
            dim: 6,
            num_classes: 2,
            class_separation: 4.0,
            objects_per_frame: 1,
        };
        let bundle: Bundle32 = generate_synthetic_bundle(1, &spec).unwrap();
        let cfg = train::TrainConfig {
            epochs: 3,
            ..train::TrainConfig::default()
        };
        let outcome = train::train::<f32>(&bundle, &cfg).unwrap();
        assert_eq!(outcome.history.len(), 3);
        assert!(outcome
            .history
            .iter()
            .all(|r| r.report.l_total.is_finite()));
        let scores = infer::score_video(&bundle, 0, &outcome.model).unwrap();
        assert!(scores.video_score.is_finite());
    }

    #[test]
    fn f32_instantiation_runs_end_to_end() {
        let spec = SynthSpec {
            num_videos: 2,
            frames_per_video: 3,
            dim: 4,
            num_classes: 2,
            class_separation: 2.0,
            objects_per_frame: 1,
        };
        let bundle: Bundle32 = generate_synthetic_bundle(0, &spec).unwrap();
        let g: Graph32 = graph::build_graph(&bundle, 0, RelationPolicy::All).unwrap();
        let layer = gat::GatLayer::<f32>::frozen_default();
        let h = gat::refine_frames(&g, &layer).unwrap();
        let enc = temporal::TemporalEncoder::<f32>::seeded_default(4, 0);
        let out = temporal::encode(&h, &enc).unwrap();
        assert_eq!(out.video_embedding.len(), 4);
        assert!(out.video_embedding.iter().all(|v| v.is_finite()));
    }
}
