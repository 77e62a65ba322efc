//! Triple-based explanations: for a frame, the incident triples ranked by
//! attention weight.

use serde::Serialize;

use crate::bundle::EmbeddingBundle;
use crate::gat::AttentionReport;
use crate::graph::{GraphError, KnowledgeGraph, NodeId};
use crate::scalar::Real;

/// One explanation line: the frame's strongest keyword-typed links.
#[derive(Debug, Clone, Serialize)]
pub struct Explanation {
    /// Frame reference "video_id:t".
    pub head: String,
    /// Keyword text.
    pub relation: String,
    /// Object class.
    pub tail: String,
    pub alpha: f64,
    pub bbox: [f64; 4],
}

/// Top-k incident triples of frame `t`, sorted by attention weight
/// descending (ties keep report order). `topk` is clamped to the number
/// of incident edges.
pub fn explain_frame<T: Real>(
    bundle: &EmbeddingBundle<T>,
    g: &KnowledgeGraph<T>,
    report: &AttentionReport<T>,
    t: usize,
    topk: usize,
) -> Result<Vec<Explanation>, GraphError> {
    let u = g.frame_node(t)?;
    let video = &bundle.videos[g.video_index()];
    let mut ranked: Vec<(usize, &crate::gat::AttentionEntry<T>)> =
        report.node_entries(u).iter().enumerate().collect();
    ranked.sort_by(|(ia, a), (ib, b)| {
        b.alpha
            .partial_cmp(&a.alpha)
            .expect("alpha is finite")
            .then(ia.cmp(ib))
    });
    Ok(ranked
        .into_iter()
        .take(topk)
        .map(|(_, entry)| {
            let (obj_t, obj_index) = match g.node_id(entry.neighbor) {
                NodeId::Object { t, index, .. } => (t, index),
                NodeId::Frame { .. } => unreachable!("frame neighbors are objects"),
            };
            let obj = &video.frames[obj_t - 1].objects[obj_index];
            Explanation {
                head: format!("{}:{}", video.id, t),
                relation: bundle.keywords[entry.relation].text.clone(),
                tail: obj.class_name.clone(),
                alpha: entry.alpha.to_f64().expect("alpha fits f64"),
                bbox: obj.bbox,
            }
        })
        .collect())
}

/// JSON Lines rendering of an explanation list.
pub fn explanations_to_jsonl(explanations: &[Explanation]) -> String {
    let mut out = String::new();
    for e in explanations {
        out.push_str(&serde_json::to_string(e).expect("explanation serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gat::{attention, GatLayer};
    use crate::graph::{build_graph, RelationPolicy};
    use crate::synth::{generate_synthetic_bundle, SynthSpec};

    fn setup(objects: usize) -> (EmbeddingBundle<f64>, KnowledgeGraph<f64>, AttentionReport<f64>) {
        let bundle = generate_synthetic_bundle(
            9,
            &SynthSpec {
                num_videos: 1,
                frames_per_video: 3,
                dim: 6,
                num_classes: 2,
                class_separation: 2.0,
                objects_per_frame: objects.max(1),
            },
        )
        .unwrap();
        let mut bundle = bundle;
        if objects == 0 {
            for f in &mut bundle.videos[0].frames {
                f.objects.clear();
            }
        }
        let g = build_graph(&bundle, 0, RelationPolicy::All).unwrap();
        let report = attention(&g, &GatLayer::frozen_default()).unwrap();
        (bundle, g, report)
    }

    #[test]
    fn object_free_frame_yields_empty_output() {
        let (bundle, g, report) = setup(0);
        let out = explain_frame(&bundle, &g, &report, 1, 10).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn topk_clamps_to_incident_edges() {
        let (bundle, g, report) = setup(3);
        // 3 objects x 2 keywords = 6 incident entries
        let out = explain_frame(&bundle, &g, &report, 1, 100).unwrap();
        assert_eq!(out.len(), 6);
        let out = explain_frame(&bundle, &g, &report, 1, 2).unwrap();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn alphas_match_report_and_sort_descending() {
        let (bundle, g, report) = setup(2);
        let out = explain_frame(&bundle, &g, &report, 2, 10).unwrap();
        let mut expected: Vec<f64> = report
            .node_entries(g.frame_node(2).unwrap())
            .iter()
            .map(|e| e.alpha)
            .collect();
        expected.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let got: Vec<f64> = out.iter().map(|e| e.alpha).collect();
        assert_eq!(got, expected);
        for w in got.windows(2) {
            assert!(w[0] >= w[1]);
        }
        // references resolve inside the bundle
        for e in &out {
            assert!(bundle.keywords.iter().any(|kw| kw.text == e.relation));
            assert!(bundle.videos[0]
                .frames
                .iter()
                .flat_map(|f| &f.objects)
                .any(|o| o.class_name == e.tail));
            assert!(e.head.starts_with("video_000:"));
        }
    }

    #[test]
    fn unknown_frame_rejected() {
        let (bundle, g, report) = setup(1);
        assert!(matches!(
            explain_frame(&bundle, &g, &report, 9, 1),
            Err(GraphError::UnknownFrame(9))
        ));
    }

    #[test]
    fn jsonl_round_trips() {
        let (bundle, g, report) = setup(2);
        let out = explain_frame(&bundle, &g, &report, 1, 10).unwrap();
        let jsonl = explanations_to_jsonl(&out);
        assert_eq!(jsonl.lines().count(), out.len());
        for line in jsonl.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v.get("alpha").unwrap().as_f64().is_some());
        }
    }
}
