//! Inference: frame-level and video-level anomaly scores, video
//! embeddings, and keyword-gallery retrieval for one video.

use ndarray::Array1;
use thiserror::Error;

use crate::bundle::EmbeddingBundle;
use crate::gat::{refine_frames, GatError};
use crate::graph::{build_graph, GraphError};
use crate::heads::{anomaly_score, classify, HeadError};
use crate::metrics::{rank_gallery, MetricError, RetrievalRanking};
use crate::model::Model;
use crate::scalar::Real;
use crate::temporal::{encode, TemporalError};

#[derive(Debug, Error)]
pub enum InferError {
    #[error("bundle dim {bundle} does not match model dim {model}")]
    DimensionMismatch { bundle: usize, model: usize },
    #[error("unknown video id {0:?}")]
    UnknownVideoId(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Gat(#[from] GatError),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Scores for one video: anomaly score per frame plus the video-level
/// score and embedding.
#[derive(Debug, Clone)]
pub struct VideoScores<T> {
    pub video_id: String,
    pub frame_scores: Vec<T>,
    pub video_score: T,
    pub embedding: Array1<T>,
}

/// Run one video through graph -> attention refinement -> temporal
/// encoder -> classifier.
pub fn score_video<T: Real>(
    bundle: &EmbeddingBundle<T>,
    video_index: usize,
    model: &Model<T>,
) -> Result<VideoScores<T>, InferError> {
    if bundle.dim != model.dim() {
        return Err(InferError::DimensionMismatch {
            bundle: bundle.dim,
            model: model.dim(),
        });
    }
    let graph = build_graph(bundle, video_index, model.relation_policy)?;
    let refined = refine_frames(&graph, &model.gat)?;
    let encoding = encode(&refined, &model.temporal)?;
    let frame_scores = encoding
        .frame_features
        .rows()
        .into_iter()
        .map(|row| {
            let probs = classify(&row.to_owned(), &model.classifier)?;
            Ok(anomaly_score(&probs))
        })
        .collect::<Result<Vec<T>, InferError>>()?;
    let video_probs = classify(&encoding.video_embedding, &model.classifier)?;
    Ok(VideoScores {
        video_id: bundle.videos[video_index].id.clone(),
        frame_scores,
        video_score: anomaly_score(&video_probs),
        embedding: encoding.video_embedding,
    })
}

pub fn video_index_by_id<T: Real>(
    bundle: &EmbeddingBundle<T>,
    id: &str,
) -> Result<usize, InferError> {
    bundle
        .videos
        .iter()
        .position(|v| v.id == id)
        .ok_or_else(|| InferError::UnknownVideoId(id.to_string()))
}

/// Rank the bundle's keywords against a video's embedding. Relevance
/// marks keywords of the video's own class.
pub fn retrieve_keywords<T: Real>(
    bundle: &EmbeddingBundle<T>,
    video_index: usize,
    model: &Model<T>,
) -> Result<(VideoScores<T>, RetrievalRanking<T>), InferError> {
    let scores = score_video(bundle, video_index, model)?;
    let gallery: Vec<(String, Vec<T>)> = bundle
        .keywords
        .iter()
        .map(|kw| (kw.id.clone(), kw.embedding.clone()))
        .collect();
    let label = bundle.videos[video_index].label_index;
    let relevance: Vec<bool> = bundle
        .keywords
        .iter()
        .map(|kw| kw.source_label_index == label)
        .collect();
    let ranking = rank_gallery(scores.embedding.as_slice().expect("contiguous"), &gallery)?
        .with_relevance(relevance)?;
    Ok((scores, ranking))
}
