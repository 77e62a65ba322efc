//! Distance-kernel graph attention.
//!
//! Attention scores come solely from node geometry: squared Euclidean
//! distances per edge, interval-normalized over the graph's edge set,
//! pushed through a Gaussian kernel, then softmaxed over each node's
//! neighborhood. No query/key projections and no feature similarity term.
//! A multi-head dot-product baseline is kept alongside for cost
//! comparison.
//!
//! With the optional learnable projection enabled, distances are computed
//! on projected features while aggregation still mixes the raw features;
//! attention stays a pure function of geometric separation in projected
//! space.

use ndarray::{Array1, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::graph::KnowledgeGraph;
use crate::scalar::{real, Real};

#[derive(Debug, Error)]
pub enum GatError {
    #[error("vector length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty edge set")]
    EmptyEdgeSet,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Activation applied in the node update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    ReLU,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(&self, x: T) -> T {
        match self {
            Activation::ReLU => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            Activation::Identity => x,
        }
    }
}

/// Distance-kernel attention layer state.
#[derive(Debug, Clone)]
pub struct GatLayer<T> {
    /// Gaussian kernel bandwidth (distinct from the temporal decay).
    pub sigma_kernel: T,
    /// Optional learnable d x d projection applied before distance
    /// computation. Off in the frozen faithful mode; on for training so
    /// the regularizer has parameters to update.
    pub projection: Option<Array2<T>>,
    pub activation: Activation,
}

impl<T: Real> GatLayer<T> {
    pub fn new(sigma_kernel: T) -> Self {
        assert!(
            sigma_kernel > T::zero() && sigma_kernel.is_finite(),
            "sigma_kernel must be positive"
        );
        GatLayer {
            sigma_kernel,
            projection: None,
            activation: Activation::ReLU,
        }
    }

    /// Frozen layer with the default bandwidth 0.25.
    pub fn frozen_default() -> Self {
        Self::new(real(0.25))
    }

    /// Trainable layer: identity-initialized projection, so the first
    /// forward pass matches the frozen layer exactly.
    pub fn trainable(sigma_kernel: T, dim: usize) -> Self {
        let mut layer = Self::new(sigma_kernel);
        layer.projection = Some(Array2::eye(dim));
        layer
    }
}

/// One scored neighborhood entry of the attention report.
#[derive(Debug, Clone, Copy)]
pub struct AttentionEntry<T> {
    pub neighbor: usize,
    pub relation: usize,
    pub raw_distance: T,
    pub normalized: T,
    pub weight: T,
    pub alpha: T,
}

/// Per-node attention: for every node `u`, the scored list over its
/// neighborhood entries (one entry per incident (neighbor, relation)).
#[derive(Debug, Clone)]
pub struct AttentionReport<T> {
    entries: Vec<Vec<AttentionEntry<T>>>,
}

impl<T: Real> AttentionReport<T> {
    pub fn node_entries(&self, node: usize) -> &[AttentionEntry<T>] {
        &self.entries[node]
    }

    pub fn node_count(&self) -> usize {
        self.entries.len()
    }

    /// Total softmax mass node `u` assigns to node `v`, summed over
    /// relation entries. `None` when `v` never appears in `u`'s
    /// neighborhood.
    pub fn pair_mass(&self, u: usize, v: usize) -> Option<T> {
        let mut mass = T::zero();
        let mut seen = false;
        for e in &self.entries[u] {
            if e.neighbor == v {
                mass += e.alpha;
                seen = true;
            }
        }
        seen.then_some(mass)
    }

    /// JSON Lines serialization: one object per (head, tail, relation).
    pub fn to_jsonl(&self, g: &KnowledgeGraph<T>) -> String {
        let mut out = String::new();
        for (u, entries) in self.entries.iter().enumerate() {
            for e in entries {
                let line = serde_json::json!({
                    "head": g.node_id(u).to_string(),
                    "tail": g.node_id(e.neighbor).to_string(),
                    "relation": e.relation,
                    "alpha": e.alpha.to_f64(),
                    "distance": e.raw_distance.to_f64(),
                });
                out.push_str(&line.to_string());
                out.push('\n');
            }
        }
        out
    }
}

/// Squared Euclidean distance between two equal-length vectors.
pub fn pairwise_distance<T: Real>(a: &[T], b: &[T]) -> Result<T, GatError> {
    if a.len() != b.len() {
        return Err(GatError::LengthMismatch(a.len(), b.len()));
    }
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    Ok(acc)
}

/// Interval normalization over the edge set: d' = (d - min) / (max - min).
/// All zeros when every distance is equal.
pub fn normalize_distances<T: Real>(distances: &[T]) -> Result<Vec<T>, GatError> {
    if distances.is_empty() {
        return Err(GatError::EmptyEdgeSet);
    }
    let mut min = distances[0];
    let mut max = distances[0];
    for &d in distances {
        if d < min {
            min = d;
        }
        if d > max {
            max = d;
        }
    }
    let denom = max - min;
    if denom == T::zero() {
        return Ok(vec![T::zero(); distances.len()]);
    }
    Ok(distances.iter().map(|&d| (d - min) / denom).collect())
}

/// Gaussian kernel edge weight: w = exp(-(d')^2 / sigma^2).
pub fn kernel_weights<T: Real>(normalized: &[T], sigma: T) -> Vec<T> {
    let inv_sigma_sq = T::one() / (sigma * sigma);
    normalized
        .iter()
        .map(|&d| (-(d * d) * inv_sigma_sq).exp())
        .collect()
}

/// Edge-level quantities shared by the report and the training backward
/// pass. Pairs are unique (head, tail) endpoint pairs in first-appearance
/// order; relation multiplicity does not change the distance.
#[derive(Debug, Clone)]
pub(crate) struct EdgeGeometry<T> {
    pub pairs: Vec<(usize, usize)>,
    pub raw: Vec<T>,
    pub normalized: Vec<T>,
    pub weights: Vec<T>,
    pub argmin: usize,
    pub argmax: usize,
    /// max - min of raw distances; zero in the degenerate case.
    pub denom: T,
    /// Projected node features when the layer has a projection.
    pub projected: Option<Vec<Vec<T>>>,
    /// Lookup from node pair (either direction) to pair index.
    pair_of: std::collections::HashMap<(usize, usize), usize>,
}

impl<T: Real> EdgeGeometry<T> {
    pub fn pair_index(&self, u: usize, v: usize) -> Option<usize> {
        self.pair_of.get(&(u, v)).copied()
    }
}

pub(crate) fn edge_geometry<T: Real>(
    g: &KnowledgeGraph<T>,
    layer: &GatLayer<T>,
) -> Result<EdgeGeometry<T>, GatError> {
    let projected = match &layer.projection {
        Some(p) => {
            if p.nrows() != g.dim() || p.ncols() != g.dim() {
                return Err(GatError::ShapeMismatch(format!(
                    "projection is {}x{}, graph dim is {}",
                    p.nrows(),
                    p.ncols(),
                    g.dim()
                )));
            }
            let mut rows = Vec::with_capacity(g.node_count());
            for u in 0..g.node_count() {
                let x = g.feature(u);
                let mut row = vec![T::zero(); g.dim()];
                for (r, out) in row.iter_mut().enumerate() {
                    let mut acc = T::zero();
                    for (c, &xc) in x.iter().enumerate() {
                        acc += p[[r, c]] * xc;
                    }
                    *out = acc;
                }
                rows.push(row);
            }
            Some(rows)
        }
        None => None,
    };

    let mut pairs = Vec::new();
    let mut pair_of = std::collections::HashMap::new();
    for &(h, _, t) in g.triple_indices() {
        if !pair_of.contains_key(&(h, t)) {
            let idx = pairs.len();
            pairs.push((h, t));
            pair_of.insert((h, t), idx);
            pair_of.insert((t, h), idx);
        }
    }

    let feat = |u: usize| -> &[T] {
        match &projected {
            Some(rows) => &rows[u],
            None => g.feature(u),
        }
    };
    let raw: Vec<T> = pairs
        .iter()
        .map(|&(a, b)| pairwise_distance(feat(a), feat(b)).expect("graph features share dim"))
        .collect();

    let (mut argmin, mut argmax) = (0usize, 0usize);
    for (i, &d) in raw.iter().enumerate() {
        if d < raw[argmin] {
            argmin = i;
        }
        if d > raw[argmax] {
            argmax = i;
        }
    }
    let (normalized, denom) = if raw.is_empty() {
        (Vec::new(), T::zero())
    } else {
        let denom = raw[argmax] - raw[argmin];
        let normalized = if denom == T::zero() {
            vec![T::zero(); raw.len()]
        } else {
            raw.iter().map(|&d| (d - raw[argmin]) / denom).collect()
        };
        (normalized, denom)
    };
    let weights = kernel_weights(&normalized, layer.sigma_kernel);

    Ok(EdgeGeometry {
        pairs,
        raw,
        normalized,
        weights,
        argmin,
        argmax,
        denom,
        projected,
        pair_of,
    })
}

/// Score every node's neighborhood: e_{u,v} = w_{u,v}, softmaxed over the
/// neighborhood entries of `u`. Isolated nodes get an empty entry list.
pub fn attention<T: Real>(
    g: &KnowledgeGraph<T>,
    layer: &GatLayer<T>,
) -> Result<AttentionReport<T>, GatError> {
    let geom = edge_geometry(g, layer)?;
    Ok(attention_from_geometry(g, &geom))
}

pub(crate) fn attention_from_geometry<T: Real>(
    g: &KnowledgeGraph<T>,
    geom: &EdgeGeometry<T>,
) -> AttentionReport<T> {
    let mut entries = Vec::with_capacity(g.node_count());
    for u in 0..g.node_count() {
        let nbrs = g.neighbors(u);
        if nbrs.is_empty() {
            entries.push(Vec::new());
            continue;
        }
        // scores are bounded in (0, 1]; plain exp is safe
        let mut exp_sum = T::zero();
        let mut scored = Vec::with_capacity(nbrs.len());
        for &(v, j) in nbrs {
            let p = geom.pair_index(u, v).expect("neighbor implies pair");
            let e = geom.weights[p].exp();
            exp_sum += e;
            scored.push((v, j, p, e));
        }
        entries.push(
            scored
                .into_iter()
                .map(|(v, j, p, e)| AttentionEntry {
                    neighbor: v,
                    relation: j,
                    raw_distance: geom.raw[p],
                    normalized: geom.normalized[p],
                    weight: geom.weights[p],
                    alpha: e / exp_sum,
                })
                .collect(),
        );
    }
    AttentionReport { entries }
}

/// Update node features: h'_u = activation(sum_v alpha_{u,v} h_v);
/// isolated nodes pass through unchanged.
pub fn node_update<T: Real>(
    g: &KnowledgeGraph<T>,
    report: &AttentionReport<T>,
    layer: &GatLayer<T>,
) -> Vec<Vec<T>> {
    (0..g.node_count())
        .map(|u| {
            let entries = report.node_entries(u);
            if entries.is_empty() {
                return g.feature(u).to_vec();
            }
            let mut acc = vec![T::zero(); g.dim()];
            for e in entries {
                let hv = g.feature(e.neighbor);
                for (a, &x) in acc.iter_mut().zip(hv) {
                    *a += e.alpha * x;
                }
            }
            for a in &mut acc {
                *a = layer.activation.apply(*a);
            }
            acc
        })
        .collect()
}

/// One attention + update pass, returning refined frame-node features in
/// frame order (N x d).
pub fn refine_frames<T: Real>(
    g: &KnowledgeGraph<T>,
    layer: &GatLayer<T>,
) -> Result<Array2<T>, GatError> {
    Ok(refine_frames_cached(g, layer)?.h)
}

/// Refinement forward pass with everything the backward pass needs.
#[derive(Debug, Clone)]
pub(crate) struct GatForwardCache<T> {
    pub geom: EdgeGeometry<T>,
    pub report: AttentionReport<T>,
    /// Per frame node: the aggregation sum before the activation, or
    /// `None` for isolated (pass-through) frames.
    pub pre_acts: Vec<Option<Vec<T>>>,
    /// Refined frame features, frame order (N x d).
    pub h: Array2<T>,
}

pub(crate) fn refine_frames_cached<T: Real>(
    g: &KnowledgeGraph<T>,
    layer: &GatLayer<T>,
) -> Result<GatForwardCache<T>, GatError> {
    let geom = edge_geometry(g, layer)?;
    let report = attention_from_geometry(g, &geom);
    let n = g.num_frames();
    let mut pre_acts = Vec::with_capacity(n);
    let mut h = Array2::zeros((n, g.dim()));
    for t in 1..=n {
        let u = t - 1;
        let entries = report.node_entries(u);
        if entries.is_empty() {
            for (c, &x) in g.feature(u).iter().enumerate() {
                h[[t - 1, c]] = x;
            }
            pre_acts.push(None);
            continue;
        }
        let mut acc = vec![T::zero(); g.dim()];
        for e in entries {
            let hv = g.feature(e.neighbor);
            for (a, &x) in acc.iter_mut().zip(hv) {
                *a += e.alpha * x;
            }
        }
        for (c, &s) in acc.iter().enumerate() {
            h[[t - 1, c]] = layer.activation.apply(s);
        }
        pre_acts.push(Some(acc));
    }
    Ok(GatForwardCache {
        geom,
        report,
        pre_acts,
        h,
    })
}

/// Multi-head dot-product baseline used for cost comparison.
#[derive(Debug, Clone)]
pub struct MultiHeadBaseline<T> {
    pub num_heads: usize,
    pub head_dim: usize,
    /// Per-head query/key projections, each head_dim x input_dim.
    pub w_q: Vec<Array2<T>>,
    pub w_k: Vec<Array2<T>>,
}

impl<T: Real> MultiHeadBaseline<T> {
    pub fn identity(input_dim: usize) -> Self {
        MultiHeadBaseline {
            num_heads: 1,
            head_dim: input_dim,
            w_q: vec![Array2::eye(input_dim)],
            w_k: vec![Array2::eye(input_dim)],
        }
    }

    pub fn seeded(seed: u64, num_heads: usize, head_dim: usize, input_dim: usize) -> Self {
        assert!(num_heads >= 1 && head_dim >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (input_dim as f64).sqrt()).unwrap();
        let mut mat = || {
            Array2::from_shape_fn((head_dim, input_dim), |_| real::<T>(normal.sample(&mut rng)))
        };
        let w_q = (0..num_heads).map(|_| mat()).collect();
        let w_k = (0..num_heads).map(|_| mat()).collect();
        MultiHeadBaseline {
            num_heads,
            head_dim,
            w_q,
            w_k,
        }
    }
}

/// Unscaled dot-product scores q_i . k_j for all ordered pairs and heads
/// (N x N x H).
pub fn multihead_baseline_attention<T: Real>(
    features: &Array2<T>,
    baseline: &MultiHeadBaseline<T>,
) -> Result<Array3<T>, GatError> {
    let (n, input_dim) = features.dim();
    for (name, mats) in [("w_q", &baseline.w_q), ("w_k", &baseline.w_k)] {
        if mats.len() != baseline.num_heads {
            return Err(GatError::ShapeMismatch(format!(
                "{name} holds {} heads, expected {}",
                mats.len(),
                baseline.num_heads
            )));
        }
        for m in mats.iter() {
            if m.dim() != (baseline.head_dim, input_dim) {
                return Err(GatError::ShapeMismatch(format!(
                    "{name} head is {:?}, expected ({}, {input_dim})",
                    m.dim(),
                    baseline.head_dim
                )));
            }
        }
    }
    let mut scores = Array3::zeros((n, n, baseline.num_heads));
    for h in 0..baseline.num_heads {
        let q = features.dot(&baseline.w_q[h].t()); // n x head_dim
        let k = features.dot(&baseline.w_k[h].t());
        let gram = q.dot(&k.t()); // n x n
        for i in 0..n {
            for j in 0..n {
                scores[[i, j, h]] = gram[[i, j]];
            }
        }
    }
    Ok(scores)
}

/// Projection of a single feature vector, used by oracle tests.
pub fn project_feature<T: Real>(p: &Array2<T>, x: &[T]) -> Array1<T> {
    let xv = Array1::from_vec(x.to_vec());
    p.dot(&xv)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::bundle::{EmbeddingBundle, FrameRecord, KeywordRelation, ObjectEntity, VideoRecord};
    use crate::graph::{build_graph, RelationPolicy};
    use rand::{Rng, SeedableRng};

    fn random_bundle(seed: u64, frames: usize, objects: usize, keywords: usize) -> EmbeddingBundle<f64> {
        let dim = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut emb = || -> Vec<f64> { (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect() };
        let kws = (0..keywords)
            .map(|j| KeywordRelation {
                id: format!("kw_{j}"),
                text: format!("keyword {j}"),
                embedding: emb(),
                source_label_index: 0,
            })
            .collect();
        let frames = (1..=frames)
            .map(|t| FrameRecord {
                t,
                embedding: emb(),
                objects: (0..objects)
                    .map(|i| ObjectEntity {
                        class_name: format!("obj_{i}"),
                        bbox: [0.0, 0.0, 1.0, 1.0],
                        embedding: emb(),
                    })
                    .collect(),
            })
            .collect();
        EmbeddingBundle {
            dim,
            class_names: vec!["class_0".into(), "normal".into()],
            keywords: kws,
            videos: vec![VideoRecord {
                id: "v".into(),
                label_index: 0,
                frames,
            }],
        }
    }

    /// Brute-force reimplementation of the distance -> normalize ->
    /// kernel -> softmax pipeline, straight off the edge list.
    fn oracle_attention(
        g: &KnowledgeGraph<f64>,
        sigma: f64,
        projection: Option<&Array2<f64>>,
    ) -> Vec<Vec<(usize, usize, f64)>> {
        let feat = |u: usize| -> Vec<f64> {
            match projection {
                Some(p) => project_feature(p, g.feature(u)).to_vec(),
                None => g.feature(u).to_vec(),
            }
        };
        let mut pair_d: std::collections::HashMap<(usize, usize), f64> = Default::default();
        for tr in g.triples() {
            let h = g.node_index(tr.head).unwrap();
            let t = g.node_index(tr.tail).unwrap();
            let d: f64 = feat(h)
                .iter()
                .zip(feat(t))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            pair_d.insert((h, t), d);
            pair_d.insert((t, h), d);
        }
        let vals: Vec<f64> = {
            let mut seen = std::collections::HashSet::new();
            let mut v = Vec::new();
            for tr in g.triples() {
                let h = g.node_index(tr.head).unwrap();
                let t = g.node_index(tr.tail).unwrap();
                if seen.insert((h, t)) {
                    v.push(pair_d[&(h, t)]);
                }
            }
            v
        };
        let (dmin, dmax) = vals
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| {
                (lo.min(d), hi.max(d))
            });
        let norm = |d: f64| -> f64 {
            if dmax == dmin {
                0.0
            } else {
                (d - dmin) / (dmax - dmin)
            }
        };
        let weight = |d: f64| -> f64 {
            let dp = norm(d);
            (-(dp * dp) / (sigma * sigma)).exp()
        };
        (0..g.node_count())
            .map(|u| {
                let nbrs = g.neighbors(u);
                let exps: Vec<f64> = nbrs
                    .iter()
                    .map(|&(v, _)| weight(pair_d[&(u, v)]).exp())
                    .collect();
                let sum: f64 = exps.iter().sum();
                nbrs.iter()
                    .zip(exps)
                    .map(|(&(v, j), e)| (v, j, e / sum))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn pairwise_distance_cases() {
        assert_eq!(pairwise_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(pairwise_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 25.0);
        assert!(matches!(
            pairwise_distance(&[1.0], &[1.0, 2.0]),
            Err(GatError::LengthMismatch(1, 2))
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let a: Vec<f64> = (0..8).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let b: Vec<f64> = (0..8).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let mut oracle = 0.0;
            for i in 0..8 {
                oracle += (a[i] - b[i]) * (a[i] - b[i]);
            }
            assert!((pairwise_distance(&a, &b).unwrap() - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn normalization_cases() {
        let out = normalize_distances(&[1.0, 3.0, 5.0]).unwrap();
        assert_eq!(out, vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize_distances(&[2.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(
            normalize_distances::<f64>(&[]),
            Err(GatError::EmptyEdgeSet)
        ));
        let out = normalize_distances(&[4.0, 9.0, 7.0, 2.0]).unwrap();
        let (lo, hi) = out
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| {
                (lo.min(d), hi.max(d))
            });
        assert_eq!((lo, hi), (0.0, 1.0));
    }

    #[test]
    fn kernel_scalar_values() {
        let w = kernel_weights(&[0.0f64, 1.0, 0.5], 0.25);
        assert_eq!(w[0], 1.0);
        assert!((w[1] - 1.1253517471925912e-7).abs() < 1e-19);
        assert!((w[2] - 1.831563888873418e-2).abs() < 1e-14);
    }

    #[test]
    fn singleton_and_symmetric_neighborhoods() {
        let b = random_bundle(3, 1, 1, 1);
        let g = build_graph(&b, 0, RelationPolicy::All).unwrap();
        let report = attention(&g, &GatLayer::frozen_default()).unwrap();
        // frame node has exactly one neighbor entry
        assert_eq!(report.node_entries(0).len(), 1);
        assert_eq!(report.node_entries(0)[0].alpha, 1.0);

        // two neighbors at equal distance -> 0.5 each: duplicate object embedding
        let mut b2 = random_bundle(4, 1, 2, 1);
        let dup = b2.videos[0].frames[0].objects[0].embedding.clone();
        b2.videos[0].frames[0].objects[1].embedding = dup;
        let g2 = build_graph(&b2, 0, RelationPolicy::All).unwrap();
        let report2 = attention(&g2, &GatLayer::frozen_default()).unwrap();
        for e in report2.node_entries(0) {
            assert!((e.alpha - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_oracle_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for seed in 0..30u64 {
            let frames = rng.gen_range(1..4);
            let objects = rng.gen_range(0..4);
            let keywords = rng.gen_range(1..3);
            let b = random_bundle(seed, frames, objects, keywords);
            let g = build_graph(&b, 0, RelationPolicy::All).unwrap();
            let layer = GatLayer::frozen_default();
            let report = attention(&g, &layer).unwrap();
            let oracle = oracle_attention(&g, 0.25, None);
            for u in 0..g.node_count() {
                let got = report.node_entries(u);
                assert_eq!(got.len(), oracle[u].len());
                for (e, &(v, j, alpha)) in got.iter().zip(&oracle[u]) {
                    assert_eq!((e.neighbor, e.relation), (v, j));
                    assert!((e.alpha - alpha).abs() < 1e-10);
                    assert!(e.weight > 0.0 && e.weight <= 1.0);
                }
                if !got.is_empty() {
                    let sum: f64 = got.iter().map(|e| e.alpha).sum();
                    assert!((sum - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn projected_attention_matches_oracle() {
        let b = random_bundle(15, 3, 2, 2);
        let g = build_graph(&b, 0, RelationPolicy::All).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = Array2::from_shape_fn((5, 5), |_| rng.gen_range(-1.0..1.0));
        let mut layer = GatLayer::frozen_default();
        layer.projection = Some(p.clone());
        let report = attention(&g, &layer).unwrap();
        let oracle = oracle_attention(&g, 0.25, Some(&p));
        for u in 0..g.node_count() {
            for (e, &(_, _, alpha)) in report.node_entries(u).iter().zip(&oracle[u]) {
                assert!((e.alpha - alpha).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn node_update_cases() {
        // isolated node passes through
        let b = random_bundle(8, 2, 0, 1);
        let g = build_graph(&b, 0, RelationPolicy::All).unwrap();
        let layer = GatLayer::frozen_default();
        let report = attention(&g, &layer).unwrap();
        let updated = node_update(&g, &report, &layer);
        for u in 0..g.node_count() {
            assert_eq!(updated[u], g.feature(u));
        }

        // single neighbor with identity activation copies the neighbor
        let b = random_bundle(9, 1, 1, 1);
        let g = build_graph(&b, 0, RelationPolicy::All).unwrap();
        let mut layer = GatLayer::frozen_default();
        layer.activation = Activation::Identity;
        let report = attention(&g, &layer).unwrap();
        let updated = node_update(&g, &report, &layer);
        assert_eq!(updated[0], g.feature(1));

        // random graph with ReLU matches sum-then-clamp oracle
        let b = random_bundle(10, 2, 2, 2);
        let g = build_graph(&b, 0, RelationPolicy::All).unwrap();
        let layer = GatLayer::frozen_default();
        let report = attention(&g, &layer).unwrap();
        let updated = node_update(&g, &report, &layer);
        for u in 0..g.node_count() {
            if report.node_entries(u).is_empty() {
                continue;
            }
            for c in 0..g.dim() {
                let mut acc = 0.0;
                for e in report.node_entries(u) {
                    acc += e.alpha * g.feature(e.neighbor)[c];
                }
                assert!((updated[u][c] - acc.max(0.0)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn refine_frames_shape_and_ordering() {
        let b = random_bundle(12, 4, 0, 1);
        let g = build_graph(&b, 0, RelationPolicy::All).unwrap();
        let h = refine_frames(&g, &GatLayer::frozen_default()).unwrap();
        assert_eq!(h.dim(), (4, 5));
        // all nodes isolated: rows equal the input frame embeddings, in order
        for t in 1..=4 {
            for c in 0..5 {
                assert_eq!(h[[t - 1, c]], b.videos[0].frames[t - 1].embedding[c]);
            }
        }

        for seed in 40..90u64 {
            let b = random_bundle(seed, 3, 2, 2);
            let g = build_graph(&b, 0, RelationPolicy::All).unwrap();
            let h = refine_frames(&g, &GatLayer::frozen_default()).unwrap();
            assert_eq!(h.dim(), (3, 5));
            assert!(h.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn raising_one_distance_never_raises_its_alpha() {
        // operate on the scalar pipeline directly
        let base = vec![2.0, 5.0, 9.0, 4.0];
        let alpha_of = |d: &[f64], edge: usize| -> f64 {
            let norm = normalize_distances(d).unwrap();
            let w = kernel_weights(&norm, 0.25);
            // softmax over all edges as one neighborhood
            let exps: Vec<f64> = w.iter().map(|&x| x.exp()).collect();
            let sum: f64 = exps.iter().sum();
            exps[edge] / sum
        };
        for edge in 0..base.len() {
            let mut prev = alpha_of(&base, edge);
            for bump in [0.5, 2.0, 5.0, 20.0] {
                let mut d = base.clone();
                d[edge] += bump;
                let cur = alpha_of(&d, edge);
                assert!(
                    cur <= prev + 1e-12,
                    "alpha rose from {prev} to {cur} at bump {bump}"
                );
                prev = cur;
            }
        }
    }

    #[test]
    fn attention_invariant_to_global_feature_scaling() {
        let b = random_bundle(31, 2, 2, 2);
        let mut scaled = b.clone();
        for v in &mut scaled.videos {
            for f in &mut v.frames {
                for x in &mut f.embedding {
                    *x *= 3.5;
                }
                for o in &mut f.objects {
                    for x in &mut o.embedding {
                        *x *= 3.5;
                    }
                }
            }
        }
        let g1 = build_graph(&b, 0, RelationPolicy::All).unwrap();
        let g2 = build_graph(&scaled, 0, RelationPolicy::All).unwrap();
        let layer = GatLayer::frozen_default();
        let r1 = attention(&g1, &layer).unwrap();
        let r2 = attention(&g2, &layer).unwrap();
        for u in 0..g1.node_count() {
            for (a, b) in r1.node_entries(u).iter().zip(r2.node_entries(u)) {
                assert!((a.alpha - b.alpha).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn permuting_objects_permutes_alpha_and_preserves_update() {
        let b = random_bundle(50, 1, 3, 1);
        let mut permuted = b.clone();
        permuted.videos[0].frames[0].objects.reverse();
        let g1 = build_graph(&b, 0, RelationPolicy::All).unwrap();
        let g2 = build_graph(&permuted, 0, RelationPolicy::All).unwrap();
        let layer = GatLayer::frozen_default();
        let r1 = attention(&g1, &layer).unwrap();
        let r2 = attention(&g2, &layer).unwrap();
        let mut a1: Vec<f64> = r1.node_entries(0).iter().map(|e| e.alpha).collect();
        let mut a2: Vec<f64> = r2.node_entries(0).iter().map(|e| e.alpha).collect();
        a2.reverse();
        for (x, y) in a1.iter_mut().zip(&a2) {
            assert!((*x - *y).abs() < 1e-12);
        }
        let u1 = node_update(&g1, &r1, &layer);
        let u2 = node_update(&g2, &r2, &layer);
        for c in 0..5 {
            assert!((u1[0][c] - u2[0][c]).abs() < 1e-12);
        }
    }

    #[test]
    fn multihead_identity_gives_gram_matrix() {
        let x = Array2::from_shape_vec((3, 2), vec![1.0f64, 0.0, 0.0, 2.0, 1.0, 1.0]).unwrap();
        let scores = multihead_baseline_attention(&x, &MultiHeadBaseline::identity(2)).unwrap();
        let gram = x.dot(&x.t());
        for i in 0..3 {
            for j in 0..3 {
                assert!((scores[[i, j, 0]] - gram[[i, j]]).abs() < 1e-12);
            }
        }

        let zeros = Array2::<f64>::zeros((4, 2));
        let scores = multihead_baseline_attention(&zeros, &MultiHeadBaseline::identity(2)).unwrap();
        assert!(scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn multihead_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = Array2::from_shape_fn((3, 4), |_| rng.gen_range(-1.0..1.0));
        let baseline = MultiHeadBaseline::<f64>::seeded(2, 2, 3, 4);
        let scores = multihead_baseline_attention(&x, &baseline).unwrap();
        for h in 0..2 {
            for i in 0..3 {
                for j in 0..3 {
                    let mut acc = 0.0;
                    for r in 0..3 {
                        let mut qi = 0.0;
                        let mut kj = 0.0;
                        for c in 0..4 {
                            qi += baseline.w_q[h][[r, c]] * x[[i, c]];
                            kj += baseline.w_k[h][[r, c]] * x[[j, c]];
                        }
                        acc += qi * kj;
                    }
                    assert!((scores[[i, j, h]] - acc).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn report_jsonl_lines_mirror_entries() {
        let b = random_bundle(60, 2, 2, 2);
        let g = build_graph(&b, 0, RelationPolicy::All).unwrap();
        let report = attention(&g, &GatLayer::frozen_default()).unwrap();
        let jsonl = report.to_jsonl(&g);
        let expected: usize = (0..g.node_count()).map(|u| report.node_entries(u).len()).sum();
        assert_eq!(jsonl.lines().count(), expected);
        let first: serde_json::Value = serde_json::from_str(jsonl.lines().next().unwrap()).unwrap();
        for key in ["head", "tail", "relation", "alpha", "distance"] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn multihead_rejects_bad_shapes() {
        let x = Array2::<f64>::zeros((3, 4));
        let baseline = MultiHeadBaseline::<f64>::seeded(2, 2, 3, 5);
        assert!(matches!(
            multihead_baseline_attention(&x, &baseline),
            Err(GatError::ShapeMismatch(_))
        ));
    }
}
