//! Per-video multimodal knowledge graph.
//!
//! Nodes are frames and detected objects; edges are keyword-typed triples
//! (frame, keyword, object) restricted to objects of the same frame. The
//! triple set is also held as a sparse boolean adjacency tensor over
//! (node, node, relation). Storage is directed frame -> object; attention
//! traverses edges in both directions so object features can refine frame
//! features.

use std::collections::{HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::bundle::EmbeddingBundle;
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("video {0} has no frames")]
    EmptyGraph(usize),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("video index {0} out of range")]
    UnknownVideo(usize),
    #[error("bundle has no keywords but triple construction was requested")]
    NoKeywords,
    #[error("frame {0} not present in graph")]
    UnknownFrame(usize),
}

/// Identity of a graph node. Frame nodes carry no object index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeId {
    Frame { video: usize, t: usize },
    Object { video: usize, t: usize, index: usize },
}

impl NodeId {
    pub fn is_frame(&self) -> bool {
        matches!(self, NodeId::Frame { .. })
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Frame { video, t } => write!(f, "video{video}/frame{t}"),
            NodeId::Object { video, t, index } => {
                write!(f, "video{video}/frame{t}/object{index}")
            }
        }
    }
}

/// A typed edge: (frame head, keyword relation, object tail).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple {
    pub head: NodeId,
    pub relation: usize,
    pub tail: NodeId,
}

/// How relations are assigned when aggregating triples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RelationPolicy {
    /// Every frame-object pair is linked under every keyword.
    #[default]
    All,
    /// Each frame-object pair keeps only the keyword whose embedding is
    /// nearest (Euclidean) to the object embedding.
    NearestKeyword,
}

pub(crate) type TripleIdx = (usize, usize, usize); // (head node, relation, tail node)

/// Immutable per-video knowledge graph.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph<T> {
    video_index: usize,
    dim: usize,
    num_frames: usize,
    node_ids: Vec<NodeId>,
    features: Vec<Vec<T>>,
    id_index: HashMap<NodeId, usize>,
    triples: Vec<TripleIdx>,
    adjacency: HashSet<TripleIdx>,
    /// Per node: (neighbor node index, relation index), deterministic order.
    neighbors: Vec<Vec<(usize, usize)>>,
}

impl<T: Real> KnowledgeGraph<T> {
    pub fn video_index(&self) -> usize {
        self.video_index
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn adjacency_set_entries(&self) -> usize {
        self.adjacency.len()
    }

    pub fn node_id(&self, index: usize) -> NodeId {
        self.node_ids[index]
    }

    pub fn node_index(&self, id: NodeId) -> Option<usize> {
        self.id_index.get(&id).copied()
    }

    /// Node index of frame `t` (1-based).
    pub fn frame_node(&self, t: usize) -> Result<usize, GraphError> {
        if t >= 1 && t <= self.num_frames {
            Ok(t - 1)
        } else {
            Err(GraphError::UnknownFrame(t))
        }
    }

    pub fn feature(&self, index: usize) -> &[T] {
        &self.features[index]
    }

    pub fn neighbors(&self, index: usize) -> &[(usize, usize)] {
        &self.neighbors[index]
    }

    pub fn triples(&self) -> impl Iterator<Item = Triple> + '_ {
        self.triples.iter().map(|&(h, j, t)| Triple {
            head: self.node_ids[h],
            relation: j,
            tail: self.node_ids[t],
        })
    }

    pub(crate) fn triple_indices(&self) -> &[TripleIdx] {
        &self.triples
    }
}

/// Build the knowledge graph of one video.
pub fn build_graph<T: Real>(
    bundle: &EmbeddingBundle<T>,
    video_index: usize,
    policy: RelationPolicy,
) -> Result<KnowledgeGraph<T>, GraphError> {
    let video = bundle
        .videos
        .get(video_index)
        .ok_or(GraphError::UnknownVideo(video_index))?;
    if video.frames.is_empty() {
        return Err(GraphError::EmptyGraph(video_index));
    }
    let has_objects = video.frames.iter().any(|f| !f.objects.is_empty());
    if has_objects && bundle.keywords.is_empty() {
        return Err(GraphError::NoKeywords);
    }

    let mut node_ids = Vec::new();
    let mut features = Vec::new();
    for frame in &video.frames {
        node_ids.push(NodeId::Frame {
            video: video_index,
            t: frame.t,
        });
        features.push(frame.embedding.clone());
    }
    for frame in &video.frames {
        for (i, obj) in frame.objects.iter().enumerate() {
            node_ids.push(NodeId::Object {
                video: video_index,
                t: frame.t,
                index: i,
            });
            features.push(obj.embedding.clone());
        }
    }
    let id_index: HashMap<NodeId, usize> = node_ids
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i))
        .collect();

    let mut triples = Vec::new();
    let mut adjacency = HashSet::new();
    let mut object_cursor = video.frames.len();
    for frame in &video.frames {
        for (i, obj) in frame.objects.iter().enumerate() {
            let head = frame.t - 1;
            let tail = object_cursor + i;
            let relations: Vec<usize> = match policy {
                RelationPolicy::All => (0..bundle.keywords.len()).collect(),
                RelationPolicy::NearestKeyword => {
                    vec![nearest_keyword(bundle, &obj.embedding)]
                }
            };
            for j in relations {
                let triple = (head, j, tail);
                if adjacency.insert(triple) {
                    triples.push(triple);
                }
            }
        }
        object_cursor += frame.objects.len();
    }

    let mut neighbors = vec![Vec::new(); node_ids.len()];
    for &(h, j, t) in &triples {
        neighbors[h].push((t, j));
        neighbors[t].push((h, j));
    }

    Ok(KnowledgeGraph {
        video_index,
        dim: bundle.dim,
        num_frames: video.frames.len(),
        node_ids,
        features,
        id_index,
        triples,
        adjacency,
        neighbors,
    })
}

fn nearest_keyword<T: Real>(bundle: &EmbeddingBundle<T>, object: &[T]) -> usize {
    let mut best = 0;
    let mut best_dist = T::infinity();
    for (j, kw) in bundle.keywords.iter().enumerate() {
        let dist = object
            .iter()
            .zip(&kw.embedding)
            .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
        if dist < best_dist {
            best_dist = dist;
            best = j;
        }
    }
    best
}

/// True iff the triple (u, k_j, v) exists; direction matters.
pub fn adjacency_entry<T: Real>(
    g: &KnowledgeGraph<T>,
    u: NodeId,
    v: NodeId,
    relation: usize,
) -> Result<bool, GraphError> {
    let ui = g.node_index(u).ok_or(GraphError::UnknownNode(u))?;
    let vi = g.node_index(v).ok_or(GraphError::UnknownNode(v))?;
    Ok(g.adjacency.contains(&(ui, relation, vi)))
}

/// Human-readable triple for explanation output.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ExportedTriple {
    /// Weak label of the video the frame belongs to.
    pub head: String,
    /// Keyword text of the relation.
    pub relation: String,
    /// Object class of the tail entity.
    pub tail: String,
    pub bbox: [f64; 4],
}

/// Flatten the graph into readable triples, in graph order.
pub fn export_triples<T: Real>(
    g: &KnowledgeGraph<T>,
    bundle: &EmbeddingBundle<T>,
) -> Vec<ExportedTriple> {
    let video = &bundle.videos[g.video_index];
    let label = &bundle.class_names[video.label_index];
    g.triples()
        .map(|triple| {
            let (t, index) = match triple.tail {
                NodeId::Object { t, index, .. } => (t, index),
                NodeId::Frame { .. } => unreachable!("tails are object nodes"),
            };
            let obj = &video.frames[t - 1].objects[index];
            ExportedTriple {
                head: label.clone(),
                relation: bundle.keywords[triple.relation].text.clone(),
                tail: obj.class_name.clone(),
                bbox: obj.bbox,
            }
        })
        .collect()
}

/// JSON Lines serialization of `export_triples`.
pub fn export_triples_jsonl<T: Real>(g: &KnowledgeGraph<T>, bundle: &EmbeddingBundle<T>) -> String {
    let mut out = String::new();
    for triple in export_triples(g, bundle) {
        out.push_str(&serde_json::to_string(&triple).expect("triple serializes"));
        out.push('\n');
    }
    out
}
