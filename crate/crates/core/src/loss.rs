//! Training losses: classification cross-entropy, margin retrieval loss,
//! attention regularization, and their weighted total.

use ndarray::Array1;
use thiserror::Error;

use crate::gat::AttentionReport;
use crate::graph::{GraphError, KnowledgeGraph, NodeId};
use crate::scalar::{real, Real};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Probabilities (and log targets) are clamped here before logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// Node pairs that should / should not be connected, used by the
/// attention regularizer.
#[derive(Debug, Clone, Default)]
pub struct EdgeSupervision {
    pub positives: Vec<(NodeId, NodeId)>,
    pub negatives: Vec<(NodeId, NodeId)>,
}

/// Per-batch loss components. `l_total` is the weighted sum; skipped
/// negatives are pairs the softmax never scored.
#[derive(Debug, Clone, Copy)]
pub struct LossReport<T> {
    pub l_cls: T,
    pub l_ret: T,
    pub l_gat: T,
    pub l_total: T,
    pub skipped_negatives: usize,
}

/// One retrieval training pair: query embedding, matching text embedding,
/// non-matching text embedding.
#[derive(Debug, Clone)]
pub struct RetrievalTriplet<T> {
    pub query: Array1<T>,
    pub positive: Array1<T>,
    pub negative: Array1<T>,
}

/// Mean negative log-likelihood over (probability vector, label) pairs.
pub fn cls_loss<T: Real>(batch: &[(Array1<T>, usize)]) -> Result<T, LossError> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let clamp = real::<T>(PROB_CLAMP);
    let mut acc = T::zero();
    for (probs, label) in batch {
        acc -= probs[*label].max(clamp).ln();
    }
    Ok(acc / real(batch.len() as f64))
}

pub(crate) fn euclidean<T: Real>(a: &Array1<T>, b: &Array1<T>) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b.iter()) {
        let d = x - y;
        acc += d * d;
    }
    acc.sqrt()
}

/// Margin retrieval loss: sum of max(0, margin + D(q, t+) - D(q, t-)),
/// with D the Euclidean norm.
pub fn ret_loss<T: Real>(pairs: &[RetrievalTriplet<T>], margin: T) -> T {
    let mut acc = T::zero();
    for pair in pairs {
        let pos = euclidean(&pair.query, &pair.positive);
        let neg = euclidean(&pair.query, &pair.negative);
        let hinge = margin + pos - neg;
        if hinge > T::zero() {
            acc += hinge;
        }
    }
    acc
}

/// Attention regularizer over supervised node pairs:
/// lambda * (sum over E+ of -log alpha + sum over E- of -log(1 - alpha)),
/// alpha clamped to [1e-12, 1 - 1e-12]. The alpha of a pair is the total
/// softmax mass the head node assigns to the tail. Negative pairs the
/// softmax never scores are skipped and counted.
pub fn gat_reg_loss<T: Real>(
    g: &KnowledgeGraph<T>,
    report: &AttentionReport<T>,
    sup: &EdgeSupervision,
    lambda: T,
) -> Result<(T, usize), LossError> {
    let clamp_lo = real::<T>(PROB_CLAMP);
    let clamp_hi = T::one() - clamp_lo;
    let clamp = |a: T| a.max(clamp_lo).min(clamp_hi);
    let index = |id: NodeId| g.node_index(id).ok_or(GraphError::UnknownNode(id));

    let mut acc = T::zero();
    for &(u, v) in &sup.positives {
        let (ui, vi) = (index(u)?, index(v)?);
        // positives are graph edges; absent mass clamps to the floor
        let alpha = report.pair_mass(ui, vi).unwrap_or(T::zero());
        acc -= clamp(alpha).ln();
    }
    let mut skipped = 0usize;
    for &(u, v) in &sup.negatives {
        let (ui, vi) = (index(u)?, index(v)?);
        match report.pair_mass(ui, vi) {
            Some(alpha) => acc -= (T::one() - clamp(alpha)).max(clamp_lo).ln(),
            None => skipped += 1,
        }
    }
    Ok((lambda * acc, skipped))
}

/// Loss weights (and the margin / lambda hyperparameters they ride with).
#[derive(Debug, Clone, Copy)]
pub struct LossWeights<T> {
    pub w_cls: T,
    pub w_ret: T,
    pub w_gat: T,
}

impl<T: Real> Default for LossWeights<T> {
    fn default() -> Self {
        LossWeights {
            w_cls: real(1.4),
            w_ret: real(1.3),
            w_gat: real(1.0),
        }
    }
}

/// Weighted total: w_cls * l_cls + w_ret * l_ret + w_gat * l_gat.
pub fn total_loss<T: Real>(l_cls: T, l_ret: T, l_gat: T, weights: &LossWeights<T>) -> T {
    weights.w_cls * l_cls + weights.w_ret * l_ret + weights.w_gat * l_gat
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gat::{attention, GatLayer};
    use crate::graph::{build_graph, RelationPolicy};
    use ndarray::array;

    #[test]
    fn cls_loss_cases() {
        // perfect prediction
        let batch = vec![(array![1.0f64, 0.0], 0usize)];
        assert!(cls_loss(&batch).unwrap() < 1.3e-11);

        // uniform over two classes -> ln 2
        let batch = vec![(array![0.5f64, 0.5], 1usize)];
        assert!((cls_loss(&batch).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);

        // duplicating the batch leaves the mean unchanged
        let batch = vec![(array![0.7f64, 0.3], 0usize), (array![0.2f64, 0.8], 1usize)];
        let doubled: Vec<_> = batch.iter().cloned().chain(batch.iter().cloned()).collect();
        assert!((cls_loss(&batch).unwrap() - cls_loss(&doubled).unwrap()).abs() < 1e-12);

        assert!(matches!(
            cls_loss::<f64>(&[]),
            Err(LossError::EmptyBatch)
        ));
    }

    #[test]
    fn ret_loss_cases() {
        let q = array![0.0f64, 0.0];
        // D+ = 0.2, D- = 1.5: hinge inactive
        let pairs = vec![RetrievalTriplet {
            query: q.clone(),
            positive: array![0.2, 0.0],
            negative: array![1.5, 0.0],
        }];
        assert_eq!(ret_loss(&pairs, 0.9), 0.0);

        // D+ = 1.0, D- = 1.2: 0.9 + 1.0 - 1.2 = 0.7
        let pairs = vec![RetrievalTriplet {
            query: q.clone(),
            positive: array![1.0, 0.0],
            negative: array![1.2, 0.0],
        }];
        assert!((ret_loss(&pairs, 0.9) - 0.7).abs() < 1e-12);

        // identical positive and negative: loss = margin per pair
        let pairs = vec![
            RetrievalTriplet {
                query: q.clone(),
                positive: array![0.3, 0.4],
                negative: array![0.3, 0.4],
            };
            3
        ];
        assert!((ret_loss(&pairs, 0.9) - 2.7).abs() < 1e-12);
    }

    fn toy_graph() -> (crate::bundle::EmbeddingBundle<f64>, KnowledgeGraph<f64>) {
        use crate::bundle::*;
        let bundle = EmbeddingBundle {
            dim: 2,
            class_names: vec!["class_0".into(), "normal".into()],
            keywords: vec![KeywordRelation {
                id: "kw".into(),
                text: "kw".into(),
                embedding: vec![0.0, 0.0],
                source_label_index: 0,
            }],
            videos: vec![VideoRecord {
                id: "v".into(),
                label_index: 0,
                frames: vec![
                    FrameRecord {
                        t: 1,
                        embedding: vec![0.0, 0.0],
                        objects: vec![
                            ObjectEntity {
                                class_name: "a".into(),
                                bbox: [0.0, 0.0, 1.0, 1.0],
                                embedding: vec![1.0, 0.0],
                            },
                            ObjectEntity {
                                class_name: "b".into(),
                                bbox: [0.0, 0.0, 1.0, 1.0],
                                embedding: vec![0.0, 2.0],
                            },
                        ],
                    },
                    FrameRecord {
                        t: 2,
                        embedding: vec![3.0, 0.0],
                        objects: vec![],
                    },
                ],
            }],
        };
        let g = build_graph(&bundle, 0, RelationPolicy::All).unwrap();
        (bundle, g)
    }

    #[test]
    fn gat_reg_cases() {
        let (_b, g) = toy_graph();
        let report = attention(&g, &GatLayer::frozen_default()).unwrap();
        let frame = NodeId::Frame { video: 0, t: 1 };
        let obj_a = NodeId::Object { video: 0, t: 1, index: 0 };
        let obj_b = NodeId::Object { video: 0, t: 1, index: 1 };

        // full mass on a single positive: near-zero loss after clamping
        let sup = EdgeSupervision {
            positives: vec![(frame, obj_a), (frame, obj_b)],
            negatives: vec![],
        };
        let (loss, skipped) = gat_reg_loss(&g, &report, &sup, 1.0).unwrap();
        assert_eq!(skipped, 0);
        // two objects share the frame's mass; each -log alpha > 0
        assert!(loss > 0.0);

        // a pair with alpha = 0.5 contributes ln 2 (symmetric distances)
        let ai = g.node_index(obj_a).unwrap();
        let alpha = report.pair_mass(0, ai).unwrap();
        let expected = -alpha.ln() - report.pair_mass(0, g.node_index(obj_b).unwrap()).unwrap().ln();
        assert!((loss - expected).abs() < 1e-12);

        // cross-frame negative: never scored, so skipped
        let frame2 = NodeId::Frame { video: 0, t: 2 };
        let sup = EdgeSupervision {
            positives: vec![],
            negatives: vec![(frame2, obj_a)],
        };
        let (loss, skipped) = gat_reg_loss(&g, &report, &sup, 1.0).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(skipped, 1);

        // lambda scales linearly
        let sup = EdgeSupervision {
            positives: vec![(frame, obj_a)],
            negatives: vec![],
        };
        let (l1, _) = gat_reg_loss(&g, &report, &sup, 1.0).unwrap();
        let (l3, _) = gat_reg_loss(&g, &report, &sup, 3.0).unwrap();
        assert!((l3 - 3.0 * l1).abs() < 1e-12);
    }

    #[test]
    fn full_mass_positive_is_zero_after_clamp() {
        // one frame, one object: the frame's whole softmax mass sits on
        // the only edge, so -log(clamp(1)) stays under lambda * 1.2e-11
        use crate::bundle::*;
        let bundle = EmbeddingBundle::<f64> {
            dim: 2,
            class_names: vec!["c".into(), "normal".into()],
            keywords: vec![KeywordRelation {
                id: "kw".into(),
                text: "kw".into(),
                embedding: vec![0.0, 0.0],
                source_label_index: 0,
            }],
            videos: vec![VideoRecord {
                id: "v".into(),
                label_index: 0,
                frames: vec![FrameRecord {
                    t: 1,
                    embedding: vec![0.0, 0.0],
                    objects: vec![ObjectEntity {
                        class_name: "a".into(),
                        bbox: [0.0, 0.0, 1.0, 1.0],
                        embedding: vec![1.0, 1.0],
                    }],
                }],
            }],
        };
        let g = build_graph(&bundle, 0, RelationPolicy::All).unwrap();
        let report = attention(&g, &GatLayer::frozen_default()).unwrap();
        let sup = EdgeSupervision {
            positives: vec![(
                NodeId::Frame { video: 0, t: 1 },
                NodeId::Object { video: 0, t: 1, index: 0 },
            )],
            negatives: vec![],
        };
        let (loss, skipped) = gat_reg_loss(&g, &report, &sup, 1.0).unwrap();
        assert_eq!(skipped, 0);
        assert!(loss >= 0.0 && loss <= 1.2e-11, "loss {loss}");
    }

    #[test]
    fn single_positive_half_mass_is_ln2() {
        // hand-built report via a symmetric two-object frame
        use crate::bundle::*;
        let bundle = EmbeddingBundle::<f64> {
            dim: 1,
            class_names: vec!["c".into(), "normal".into()],
            keywords: vec![KeywordRelation {
                id: "kw".into(),
                text: "kw".into(),
                embedding: vec![0.0],
                source_label_index: 0,
            }],
            videos: vec![VideoRecord {
                id: "v".into(),
                label_index: 0,
                frames: vec![FrameRecord {
                    t: 1,
                    embedding: vec![0.0],
                    objects: vec![
                        ObjectEntity {
                            class_name: "a".into(),
                            bbox: [0.0, 0.0, 1.0, 1.0],
                            embedding: vec![1.0],
                        },
                        ObjectEntity {
                            class_name: "b".into(),
                            bbox: [0.0, 0.0, 1.0, 1.0],
                            embedding: vec![-1.0],
                        },
                    ],
                }],
            }],
        };
        let g = build_graph(&bundle, 0, RelationPolicy::All).unwrap();
        let report = attention(&g, &GatLayer::frozen_default()).unwrap();
        let sup = EdgeSupervision {
            positives: vec![(
                NodeId::Frame { video: 0, t: 1 },
                NodeId::Object { video: 0, t: 1, index: 0 },
            )],
            negatives: vec![],
        };
        let (loss, _) = gat_reg_loss(&g, &report, &sup, 1.0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn total_loss_cases() {
        let w = LossWeights::<f64>::default();
        assert_eq!(total_loss(0.0, 0.0, 0.0, &w), 0.0);
        assert!((total_loss(1.0, 1.0, 1.0, &w) - 3.7).abs() < 1e-12);
        assert!((total_loss(0.5, 0.0, 0.0, &w) - 0.7).abs() < 1e-12);
    }
}
