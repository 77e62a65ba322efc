//! Batch forward/backward: analytic gradients of the weighted total loss
//! with respect to every trainable parameter.
//!
//! The backward pass mirrors the cached forward stage by stage:
//! classifier and retrieval gradients flow into the video embedding, back
//! through mean pooling, the second layer norm, the FFN residual block,
//! the first layer norm, the fusion matmul, and into the refined frame
//! features; from there through the attention softmax, the Gaussian
//! kernel, the interval normalization (min/max treated as locally fixed),
//! and the squared distances into the projection matrix. The attention
//! regularizer injects its gradient directly at the softmax outputs.
//!
//! `batch_loss` and `batch_gradients` share one forward implementation,
//! so finite differences of the former are a valid oracle for the latter.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bundle::EmbeddingBundle;
use crate::gat::{refine_frames_cached, Activation, GatError, GatForwardCache};
use crate::graph::{build_graph, GraphError, KnowledgeGraph, NodeId, RelationPolicy};
use crate::heads::{classify, HeadError};
use crate::loss::{
    cls_loss, gat_reg_loss, ret_loss, total_loss, EdgeSupervision, LossError, LossReport,
    LossWeights, RetrievalTriplet, PROB_CLAMP,
};
use crate::model::{Model, ModelGrads};
use crate::scalar::{real, Real};
use crate::temporal::{encode_cached, TemporalCache, TemporalError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("bundle must provide at least 2 classes")]
    InsufficientClasses,
    #[error("invalid bundle: {0}")]
    InvalidBundle(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Gat(#[from] GatError),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// Loss hyperparameters in scalar form.
#[derive(Debug, Clone, Copy)]
pub struct LossHyper<T> {
    pub weights: LossWeights<T>,
    pub margin: T,
    pub lambda: T,
}

impl<T: Real> Default for LossHyper<T> {
    fn default() -> Self {
        LossHyper {
            weights: LossWeights::default(),
            margin: real(0.9),
            lambda: T::one(),
        }
    }
}

/// One prepared video: its graph plus the weak label.
#[derive(Debug, Clone)]
pub struct TrainItem<T> {
    pub graph: KnowledgeGraph<T>,
    pub label: usize,
    pub video_index: usize,
}

/// Graphs and retrieval targets for a set of videos.
#[derive(Debug, Clone)]
pub struct TrainData<T> {
    pub items: Vec<TrainItem<T>>,
    pub keyword_embeddings: Vec<Array1<T>>,
    pub keyword_class: Vec<usize>,
    pub num_classes: usize,
}

impl<T: Real> TrainData<T> {
    pub fn prepare(
        bundle: &EmbeddingBundle<T>,
        video_indices: &[usize],
        policy: RelationPolicy,
    ) -> Result<Self, TrainError> {
        if video_indices.is_empty() {
            return Err(TrainError::EmptyBatch);
        }
        let items = video_indices
            .iter()
            .map(|&v| {
                Ok(TrainItem {
                    graph: build_graph(bundle, v, policy)?,
                    label: bundle.videos[v].label_index,
                    video_index: v,
                })
            })
            .collect::<Result<Vec<_>, TrainError>>()?;
        Ok(TrainData {
            items,
            keyword_embeddings: bundle
                .keywords
                .iter()
                .map(|kw| Array1::from_vec(kw.embedding.clone()))
                .collect(),
            keyword_class: bundle.keywords.iter().map(|kw| kw.source_label_index).collect(),
            num_classes: bundle.class_names.len(),
        })
    }
}

/// One retrieval pair: query video item, matching keyword, mismatching
/// keyword.
#[derive(Debug, Clone, Copy)]
pub struct RetPairPlan {
    pub item: usize,
    pub positive_kw: usize,
    pub negative_kw: usize,
}

/// Everything sampled for one epoch: processing order, retrieval pairs,
/// and edge supervision per item.
#[derive(Debug, Clone)]
pub struct EpochPlan {
    pub order: Vec<usize>,
    pub ret_pairs: Vec<RetPairPlan>,
    /// Indexed by item, not by order position.
    pub supervision: Vec<EdgeSupervision>,
}

impl EpochPlan {
    /// Sample an epoch plan with the run's RNG: shuffled video order,
    /// uniformly drawn positive/negative keywords, and for every graph
    /// the full positive edge set plus an equal-size uniform sample of
    /// cross-frame non-edges.
    pub fn sample<T: Real>(data: &TrainData<T>, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..data.items.len()).collect();
        order.shuffle(rng);

        let mut ret_pairs = Vec::new();
        for &i in &order {
            let label = data.items[i].label;
            let own: Vec<usize> = (0..data.keyword_class.len())
                .filter(|&k| data.keyword_class[k] == label)
                .collect();
            let other: Vec<usize> = (0..data.keyword_class.len())
                .filter(|&k| data.keyword_class[k] != label)
                .collect();
            if own.is_empty() || other.is_empty() {
                continue;
            }
            ret_pairs.push(RetPairPlan {
                item: i,
                positive_kw: own[rng.gen_range(0..own.len())],
                negative_kw: other[rng.gen_range(0..other.len())],
            });
        }

        let supervision = data
            .items
            .iter()
            .map(|item| sample_supervision(&item.graph, rng))
            .collect();
        EpochPlan {
            order,
            ret_pairs,
            supervision,
        }
    }

    /// Deterministic plan without sampling: identity order, first
    /// own-class / other-class keywords, positives only. Used by tests
    /// and the gradient-check harness.
    pub fn fixed<T: Real>(data: &TrainData<T>) -> Self {
        let order: Vec<usize> = (0..data.items.len()).collect();
        let mut ret_pairs = Vec::new();
        for &i in &order {
            let label = data.items[i].label;
            let own = data.keyword_class.iter().position(|&c| c == label);
            let other = data.keyword_class.iter().position(|&c| c != label);
            if let (Some(p), Some(n)) = (own, other) {
                ret_pairs.push(RetPairPlan {
                    item: i,
                    positive_kw: p,
                    negative_kw: n,
                });
            }
        }
        let supervision = data
            .items
            .iter()
            .map(|item| EdgeSupervision {
                positives: positive_pairs(&item.graph),
                negatives: Vec::new(),
            })
            .collect();
        EpochPlan {
            order,
            ret_pairs,
            supervision,
        }
    }
}

/// Unique (frame, object) edges of a graph, in triple order.
fn positive_pairs<T: Real>(g: &KnowledgeGraph<T>) -> Vec<(NodeId, NodeId)> {
    let mut seen = std::collections::HashSet::new();
    let mut pairs = Vec::new();
    for tr in g.triples() {
        if seen.insert((tr.head, tr.tail)) {
            pairs.push((tr.head, tr.tail));
        }
    }
    pairs
}

fn sample_supervision<T: Real>(g: &KnowledgeGraph<T>, rng: &mut ChaCha8Rng) -> EdgeSupervision {
    let positives = positive_pairs(g);
    // cross-frame (frame, object) pairs are never edges in a per-video
    // graph; sample an equal-size set of them
    let mut object_nodes: Vec<NodeId> = Vec::new();
    for u in 0..g.node_count() {
        if let id @ NodeId::Object { .. } = g.node_id(u) {
            object_nodes.push(id);
        }
    }
    let n_frames = g.num_frames();
    let mut negatives = std::collections::BTreeSet::new();
    if n_frames > 1 && !object_nodes.is_empty() {
        let target = positives.len();
        let mut attempts = 0;
        while negatives.len() < target && attempts < 20 * target.max(1) {
            attempts += 1;
            let t = rng.gen_range(1..=n_frames);
            let obj = object_nodes[rng.gen_range(0..object_nodes.len())];
            let obj_t = match obj {
                NodeId::Object { t, .. } => t,
                NodeId::Frame { .. } => unreachable!(),
            };
            if obj_t != t {
                let frame = g.node_id(t - 1);
                negatives.insert((frame, obj));
            }
        }
    }
    EdgeSupervision {
        positives,
        negatives: negatives.into_iter().collect(),
    }
}

/// Cached forward pass of one video through the full pipeline.
pub(crate) struct VideoForward<T> {
    pub gat: GatForwardCache<T>,
    pub temporal: TemporalCache<T>,
    pub probs: Array1<T>,
}

pub(crate) fn forward_video<T: Real>(
    graph: &KnowledgeGraph<T>,
    model: &Model<T>,
) -> Result<VideoForward<T>, TrainError> {
    let gat = refine_frames_cached(graph, &model.gat)?;
    let temporal = encode_cached(&gat.h, &model.temporal)?;
    let probs = classify(&temporal.z, &model.classifier)?;
    Ok(VideoForward {
        gat,
        temporal,
        probs,
    })
}

fn assemble_losses<T: Real>(
    data: &TrainData<T>,
    plan: &EpochPlan,
    hyper: &LossHyper<T>,
    forwards: &[VideoForward<T>],
) -> Result<LossReport<T>, TrainError> {
    let batch: Vec<(Array1<T>, usize)> = plan
        .order
        .iter()
        .map(|&i| (forwards[i].probs.clone(), data.items[i].label))
        .collect();
    let l_cls = cls_loss(&batch)?;

    let triplets: Vec<RetrievalTriplet<T>> = plan
        .ret_pairs
        .iter()
        .map(|p| RetrievalTriplet {
            query: forwards[p.item].temporal.z.clone(),
            positive: data.keyword_embeddings[p.positive_kw].clone(),
            negative: data.keyword_embeddings[p.negative_kw].clone(),
        })
        .collect();
    let l_ret = ret_loss(&triplets, hyper.margin);

    let mut l_gat = T::zero();
    let mut skipped = 0usize;
    for &i in &plan.order {
        let (l, s) = gat_reg_loss(
            &data.items[i].graph,
            &forwards[i].gat.report,
            &plan.supervision[i],
            hyper.lambda,
        )?;
        l_gat += l;
        skipped += s;
    }

    let l_total = total_loss(l_cls, l_ret, l_gat, &hyper.weights);
    Ok(LossReport {
        l_cls,
        l_ret,
        l_gat,
        l_total,
        skipped_negatives: skipped,
    })
}

/// Evaluate the weighted total loss of a batch without gradients.
pub fn batch_loss<T: Real>(
    data: &TrainData<T>,
    plan: &EpochPlan,
    model: &Model<T>,
    hyper: &LossHyper<T>,
) -> Result<LossReport<T>, TrainError> {
    if plan.order.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let forwards = data
        .items
        .iter()
        .map(|item| forward_video(&item.graph, model))
        .collect::<Result<Vec<_>, _>>()?;
    assemble_losses(data, plan, hyper, &forwards)
}

/// Evaluate the batch loss and its gradient with respect to every
/// trainable parameter. Aborts with `NonFiniteGradient` if any component
/// is NaN or infinite.
pub fn batch_gradients<T: Real>(
    data: &TrainData<T>,
    plan: &EpochPlan,
    model: &Model<T>,
    hyper: &LossHyper<T>,
) -> Result<(ModelGrads<T>, LossReport<T>), TrainError> {
    if plan.order.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let forwards = data
        .items
        .iter()
        .map(|item| forward_video(&item.graph, model))
        .collect::<Result<Vec<_>, _>>()?;
    let report = assemble_losses(data, plan, hyper, &forwards)?;

    // group retrieval pairs by item so each video is backpropagated once
    let mut ret_by_item: Vec<Vec<&RetPairPlan>> = vec![Vec::new(); data.items.len()];
    for pair in &plan.ret_pairs {
        ret_by_item[pair.item].push(pair);
    }

    let mut grads = ModelGrads::zeros_like(model);
    let batch_size = real::<T>(plan.order.len() as f64);
    for &i in &plan.order {
        backward_video(
            &data.items[i],
            &forwards[i],
            data,
            model,
            hyper,
            batch_size,
            &ret_by_item[i],
            &plan.supervision[i],
            &mut grads,
        );
    }
    if !grads.is_finite() {
        return Err(TrainError::NonFiniteGradient);
    }
    Ok((grads, report))
}

#[allow(clippy::too_many_arguments)]
fn backward_video<T: Real>(
    item: &TrainItem<T>,
    fwd: &VideoForward<T>,
    data: &TrainData<T>,
    model: &Model<T>,
    hyper: &LossHyper<T>,
    batch_size: T,
    ret_pairs: &[&RetPairPlan],
    sup: &EdgeSupervision,
    grads: &mut ModelGrads<T>,
) {
    let d = model.dim();
    let n = item.graph.num_frames();
    let z = &fwd.temporal.z;

    // classifier: d(-log p_y)/dlogit = p - onehot, scaled by w_cls / B
    let scale = hyper.weights.w_cls / batch_size;
    let mut g_logits = fwd.probs.clone();
    g_logits[item.label] -= T::one();
    g_logits.mapv_inplace(|v| v * scale);
    for c in 0..model.num_classes() {
        for k in 0..d {
            grads.clf_w[[c, k]] += g_logits[c] * z[k];
        }
        grads.clf_b[c] += g_logits[c];
    }
    let mut g_z = model.classifier.weights.t().dot(&g_logits);

    // retrieval hinge: d/dz [ D(z,t+) - D(z,t-) ] where the hinge is active
    for pair in ret_pairs {
        let pos = &data.keyword_embeddings[pair.positive_kw];
        let neg = &data.keyword_embeddings[pair.negative_kw];
        let d_pos = crate::loss::euclidean(z, pos);
        let d_neg = crate::loss::euclidean(z, neg);
        if hyper.margin + d_pos - d_neg > T::zero() {
            if d_pos > T::zero() {
                for k in 0..d {
                    g_z[k] += hyper.weights.w_ret * (z[k] - pos[k]) / d_pos;
                }
            }
            if d_neg > T::zero() {
                for k in 0..d {
                    g_z[k] -= hyper.weights.w_ret * (z[k] - neg[k]) / d_neg;
                }
            }
        }
    }

    // pooling: every H3 row receives g_z / N
    let inv_n = T::one() / real::<T>(n as f64);
    let g_h3 = Array2::from_shape_fn((n, d), |(_, c)| g_z[c] * inv_n);

    // LN2 backward
    let (g_ln2_in, ln2_gain_grad, ln2_bias_grad) = layer_norm_backward(
        &g_h3,
        &fwd.temporal.ln2_xhat,
        &fwd.temporal.ln2_inv_std,
        &model.temporal.ln2.gain,
    );
    grads.ln2_gain += &ln2_gain_grad;
    grads.ln2_bias += &ln2_bias_grad;

    // residual split: LN2 input is FFN(H2) + H2
    let g_f = &g_ln2_in;
    let mut g_h2 = g_ln2_in.clone();

    // FFN backward
    let g_a = g_f.dot(&model.temporal.w2.t());
    grads.w2 += &fwd.temporal.a.t().dot(g_f);
    grads.b2 += &g_f.sum_axis(ndarray::Axis(0));
    let g_zpre = Array2::from_shape_fn(g_a.raw_dim(), |(i, j)| {
        if fwd.temporal.z_pre[[i, j]] > T::zero() {
            g_a[[i, j]]
        } else {
            T::zero()
        }
    });
    grads.w1 += &fwd.temporal.h2.t().dot(&g_zpre);
    grads.b1 += &g_zpre.sum_axis(ndarray::Axis(0));
    g_h2 += &g_zpre.dot(&model.temporal.w1.t());

    // LN1 backward
    let (g_h1, ln1_gain_grad, ln1_bias_grad) = layer_norm_backward(
        &g_h2,
        &fwd.temporal.ln1_xhat,
        &fwd.temporal.ln1_inv_std,
        &model.temporal.ln1.gain,
    );
    grads.ln1_gain += &ln1_gain_grad;
    grads.ln1_bias += &ln1_bias_grad;

    // fusion: H1 = S H, S constant
    let g_h = fwd.temporal.s.t().dot(&g_h1);

    backward_gat(item, fwd, model, hyper, sup, &g_h, grads);
}

/// Returns (g_input, gain_grad, bias_grad) for a row-wise layer norm.
fn layer_norm_backward<T: Real>(
    g_out: &Array2<T>,
    xhat: &Array2<T>,
    inv_std: &[T],
    gain: &Array1<T>,
) -> (Array2<T>, Array1<T>, Array1<T>) {
    let (n, d) = g_out.dim();
    let dn = real::<T>(d as f64);
    let mut g_in = Array2::zeros((n, d));
    let mut gain_grad = Array1::zeros(d);
    let mut bias_grad = Array1::zeros(d);
    for i in 0..n {
        let mut mean_gx = T::zero();
        let mut mean_gx_xhat = T::zero();
        for c in 0..d {
            let go = g_out[[i, c]];
            gain_grad[c] += go * xhat[[i, c]];
            bias_grad[c] += go;
            let gx = go * gain[c];
            mean_gx += gx;
            mean_gx_xhat += gx * xhat[[i, c]];
        }
        mean_gx /= dn;
        mean_gx_xhat /= dn;
        for c in 0..d {
            let gx = g_out[[i, c]] * gain[c];
            g_in[[i, c]] = inv_std[i] * (gx - mean_gx - xhat[[i, c]] * mean_gx_xhat);
        }
    }
    (g_in, gain_grad, bias_grad)
}

#[allow(clippy::needless_range_loop)] // u, p index several parallel structures
fn backward_gat<T: Real>(
    item: &TrainItem<T>,
    fwd: &VideoForward<T>,
    model: &Model<T>,
    hyper: &LossHyper<T>,
    sup: &EdgeSupervision,
    g_h: &Array2<T>,
    grads: &mut ModelGrads<T>,
) {
    let g = &item.graph;
    let geom = &fwd.gat.geom;
    let report = &fwd.gat.report;
    let n = g.num_frames();
    let clamp_lo = real::<T>(PROB_CLAMP);
    let clamp_hi = T::one() - clamp_lo;
    let w_gat_lambda = hyper.weights.w_gat * hyper.lambda;

    // alpha gradients per frame node, aligned with report entries
    let mut g_alpha: Vec<Vec<T>> = (0..n)
        .map(|u| vec![T::zero(); report.node_entries(u).len()])
        .collect();

    // (a) aggregation: h_row = act(sum alpha x_v)
    for t in 1..=n {
        let u = t - 1;
        let Some(pre) = &fwd.gat.pre_acts[u] else {
            continue;
        };
        let entries = report.node_entries(u);
        let mut g_s = vec![T::zero(); g.dim()];
        for c in 0..g.dim() {
            let pass = match model.gat.activation {
                Activation::ReLU => pre[c] > T::zero(),
                Activation::Identity => true,
            };
            if pass {
                g_s[c] = g_h[[t - 1, c]];
            }
        }
        for (idx, e) in entries.iter().enumerate() {
            let xv = g.feature(e.neighbor);
            let mut dot = T::zero();
            for c in 0..g.dim() {
                dot += g_s[c] * xv[c];
            }
            g_alpha[u][idx] += dot;
        }
    }

    // (b) attention regularizer, injected at the softmax outputs; the
    // alpha of a pair is the summed mass over its relation entries
    let inject = |g_alpha: &mut Vec<Vec<T>>, u: usize, v: usize, coeff: T| {
        for (idx, e) in report.node_entries(u).iter().enumerate() {
            if e.neighbor == v {
                g_alpha[u][idx] += coeff;
            }
        }
    };
    for &(hid, tid) in &sup.positives {
        let (Some(u), Some(v)) = (g.node_index(hid), g.node_index(tid)) else {
            continue;
        };
        if u >= n {
            continue; // mass is defined on the frame side
        }
        if let Some(mass) = report.pair_mass(u, v) {
            if mass > clamp_lo && mass < clamp_hi {
                inject(&mut g_alpha, u, v, -w_gat_lambda / mass);
            }
        }
    }
    for &(hid, tid) in &sup.negatives {
        let (Some(u), Some(v)) = (g.node_index(hid), g.node_index(tid)) else {
            continue;
        };
        if u >= n {
            continue;
        }
        if let Some(mass) = report.pair_mass(u, v) {
            if mass > clamp_lo && mass < clamp_hi && T::one() - mass > clamp_lo {
                inject(&mut g_alpha, u, v, w_gat_lambda / (T::one() - mass));
            }
        }
    }

    // nothing upstream of alpha is trainable without the projection
    if model.gat.projection.is_none() {
        return;
    }

    // (c) softmax backward per frame node, accumulated onto pair weights
    let mut g_w_pair = vec![T::zero(); geom.pairs.len()];
    for u in 0..n {
        let entries = report.node_entries(u);
        if entries.is_empty() {
            continue;
        }
        let mut dot = T::zero();
        for (idx, e) in entries.iter().enumerate() {
            dot += e.alpha * g_alpha[u][idx];
        }
        for (idx, e) in entries.iter().enumerate() {
            let g_e = e.alpha * (g_alpha[u][idx] - dot);
            let p = geom.pair_index(u, e.neighbor).expect("entry implies pair");
            g_w_pair[p] += g_e;
        }
    }

    // (d) kernel: w = exp(-(d')^2 / sigma^2)
    let sigma = model.gat.sigma_kernel;
    let inv_sigma_sq = T::one() / (sigma * sigma);
    let two = real::<T>(2.0);
    let mut g_dprime = vec![T::zero(); geom.pairs.len()];
    for p in 0..geom.pairs.len() {
        g_dprime[p] =
            g_w_pair[p] * geom.weights[p] * (-two * geom.normalized[p] * inv_sigma_sq);
    }

    // (e) interval normalization, argmin/argmax locally fixed
    let mut g_d = vec![T::zero(); geom.pairs.len()];
    if geom.denom > T::zero() {
        let mut sum_gdp = T::zero();
        let mut sum_gdp_dprime = T::zero();
        for p in 0..geom.pairs.len() {
            sum_gdp += g_dprime[p];
            sum_gdp_dprime += g_dprime[p] * geom.normalized[p];
        }
        for p in 0..geom.pairs.len() {
            g_d[p] = g_dprime[p] / geom.denom;
        }
        g_d[geom.argmin] += (sum_gdp_dprime - sum_gdp) / geom.denom;
        g_d[geom.argmax] -= sum_gdp_dprime / geom.denom;
    }

    // (f) squared distances on projected features, then into P
    let projected = geom.projected.as_ref().expect("projection present");
    let mut g_proj: Vec<Option<Vec<T>>> = vec![None; g.node_count()];
    for (p, &(a, b)) in geom.pairs.iter().enumerate() {
        if g_d[p] == T::zero() {
            continue;
        }
        let coeff = two * g_d[p];
        let pa = &projected[a];
        let pb = &projected[b];
        let ga = g_proj[a].get_or_insert_with(|| vec![T::zero(); g.dim()]);
        for c in 0..g.dim() {
            ga[c] += coeff * (pa[c] - pb[c]);
        }
        let gb = g_proj[b].get_or_insert_with(|| vec![T::zero(); g.dim()]);
        for c in 0..g.dim() {
            gb[c] -= coeff * (pa[c] - pb[c]);
        }
    }
    let grad_p = grads.projection.as_mut().expect("projection present");
    for u in 0..g.node_count() {
        let Some(gp) = &g_proj[u] else { continue };
        let xu = g.feature(u);
        for r in 0..g.dim() {
            for c in 0..g.dim() {
                grad_p[[r, c]] += gp[r] * xu[c];
            }
        }
    }
}
