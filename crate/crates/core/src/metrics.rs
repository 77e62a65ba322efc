//! Evaluation metrics: threshold confusion counts, average precision over
//! a descending threshold grid, ROC AUC, and recall@k over a ranked
//! gallery.

use thiserror::Error;

use crate::scalar::{real, Real};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("invalid outcome: {0}")]
    InvalidOutcome(String),
    #[error("empty threshold grid")]
    EmptyGrid,
    #[error("invalid threshold grid: {0}")]
    InvalidGrid(String),
    #[error("truths contain a single class only")]
    DegenerateClasses,
    #[error("no relevant items in the gallery")]
    NoRelevantItems,
    #[error("k = {k} out of range for a gallery of {n}")]
    InvalidK { k: usize, n: usize },
}

/// Per-segment scores in [0, 1] with binary ground truth.
#[derive(Debug, Clone)]
pub struct DetectionOutcome<T> {
    scores: Vec<T>,
    truths: Vec<bool>,
}

impl<T: Real> DetectionOutcome<T> {
    pub fn new(scores: Vec<T>, truths: Vec<bool>) -> Result<Self, MetricError> {
        if scores.is_empty() || scores.len() != truths.len() {
            return Err(MetricError::InvalidOutcome(format!(
                "need equal non-zero lengths, got {} scores and {} truths",
                scores.len(),
                truths.len()
            )));
        }
        if scores
            .iter()
            .any(|&s| !(s >= T::zero() && s <= T::one()))
        {
            return Err(MetricError::InvalidOutcome(
                "scores must lie in [0, 1]".into(),
            ));
        }
        Ok(DetectionOutcome { scores, truths })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[T] {
        &self.scores
    }

    pub fn truths(&self) -> &[bool] {
        &self.truths
    }
}

/// Cumulative confusion counts at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Threshold the scores at `theta` (predict positive iff score >= theta)
/// and accumulate TP/TN/FP/FN.
pub fn confusion_counts<T: Real>(outcome: &DetectionOutcome<T>, theta: T) -> ConfusionCounts {
    let mut c = ConfusionCounts {
        tp: 0,
        tn: 0,
        fp: 0,
        fn_: 0,
    };
    for (&score, &truth) in outcome.scores.iter().zip(&outcome.truths) {
        let predicted = score >= theta;
        match (truth, predicted) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    c
}

/// Default grid: sorted unique scores plus the {0, 1} endpoints, in
/// descending order so recall is non-decreasing along the grid.
pub fn default_threshold_grid<T: Real>(outcome: &DetectionOutcome<T>) -> Vec<T> {
    let mut grid: Vec<T> = outcome.scores.clone();
    grid.push(T::zero());
    grid.push(T::one());
    grid.sort_by(|a, b| b.partial_cmp(a).expect("scores are finite"));
    grid.dedup();
    grid
}

/// Precision at a threshold, defined as 1 when nothing is predicted
/// positive; recall alongside it.
fn precision_recall<T: Real>(outcome: &DetectionOutcome<T>, theta: T) -> (T, T) {
    let c = confusion_counts(outcome, theta);
    let precision = if c.tp + c.fp == 0 {
        T::one()
    } else {
        real::<T>(c.tp as f64) / real((c.tp + c.fp) as f64)
    };
    let recall = if c.tp + c.fn_ == 0 {
        T::zero()
    } else {
        real::<T>(c.tp as f64) / real((c.tp + c.fn_) as f64)
    };
    (precision, recall)
}

/// Average precision: sum over the descending grid of
/// (R(theta_{j+1}) - R(theta_j)) * P(theta_{j+1}).
pub fn average_precision<T: Real>(
    outcome: &DetectionOutcome<T>,
    thresholds: &[T],
) -> Result<T, MetricError> {
    if thresholds.is_empty() {
        return Err(MetricError::EmptyGrid);
    }
    if thresholds[0] != T::one() || *thresholds.last().unwrap() != T::zero() {
        return Err(MetricError::InvalidGrid(
            "grid must run from 1 down to 0".into(),
        ));
    }
    for w in thresholds.windows(2) {
        if w[1] >= w[0] {
            return Err(MetricError::InvalidGrid(
                "grid must be strictly descending".into(),
            ));
        }
    }
    let mut ap = T::zero();
    let mut prev_recall = precision_recall(outcome, thresholds[0]).1;
    for &theta in &thresholds[1..] {
        let (precision, recall) = precision_recall(outcome, theta);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// AP over the default grid.
pub fn average_precision_default<T: Real>(outcome: &DetectionOutcome<T>) -> Result<T, MetricError> {
    let grid = default_threshold_grid(outcome);
    average_precision(outcome, &grid)
}

/// ROC AUC by trapezoid over the threshold sweep; ties are grouped, so
/// the value equals the Mann-Whitney statistic (ties count one half).
pub fn auc<T: Real>(outcome: &DetectionOutcome<T>) -> Result<T, MetricError> {
    let positives = outcome.truths.iter().filter(|&&t| t).count();
    let negatives = outcome.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::DegenerateClasses);
    }
    let grid = default_threshold_grid(outcome);
    let p = real::<T>(positives as f64);
    let n = real::<T>(negatives as f64);
    // sweep from the strictest threshold: start at (0, 0); theta = 0
    // predicts everything positive, ending at (1, 1)
    let mut area = T::zero();
    let mut prev_fpr = T::zero();
    let mut prev_tpr = T::zero();
    let half = real::<T>(0.5);
    for &theta in &grid {
        let c = confusion_counts(outcome, theta);
        let tpr = real::<T>(c.tp as f64) / p;
        let fpr = real::<T>(c.fp as f64) / n;
        area += (fpr - prev_fpr) * (tpr + prev_tpr) * half;
        prev_fpr = fpr;
        prev_tpr = tpr;
    }
    Ok(area)
}

/// A gallery ranked by descending similarity, ties broken by gallery
/// index.
#[derive(Debug, Clone)]
pub struct RetrievalRanking<T> {
    /// Similarity per gallery item, in gallery order.
    pub similarities: Vec<T>,
    /// Ground-truth relevance per gallery item, in gallery order.
    pub relevance: Vec<bool>,
    /// Permutation: `order[r]` is the gallery index at rank r (0-based).
    pub order: Vec<usize>,
}

impl<T: Real> RetrievalRanking<T> {
    pub fn with_relevance(mut self, relevance: Vec<bool>) -> Result<Self, MetricError> {
        if relevance.len() != self.similarities.len() {
            return Err(MetricError::InvalidOutcome(
                "relevance length differs from gallery size".into(),
            ));
        }
        self.relevance = relevance;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Rank a gallery against a query. Similarity is the negative Euclidean
/// distance, so descending similarity means ascending distance,
/// consistent with the retrieval training distance.
pub fn rank_gallery<T: Real>(
    query: &[T],
    gallery: &[(String, Vec<T>)],
) -> Result<RetrievalRanking<T>, MetricError> {
    if gallery.is_empty() {
        return Err(MetricError::InvalidOutcome("empty gallery".into()));
    }
    let similarities: Vec<T> = gallery
        .iter()
        .map(|(_, emb)| {
            let mut acc = T::zero();
            for (&a, &b) in query.iter().zip(emb) {
                let d = a - b;
                acc += d * d;
            }
            -acc.sqrt()
        })
        .collect();
    let mut order: Vec<usize> = (0..gallery.len()).collect();
    order.sort_by(|&a, &b| {
        similarities[b]
            .partial_cmp(&similarities[a])
            .expect("similarities are finite")
            .then(a.cmp(&b))
    });
    Ok(RetrievalRanking {
        similarities,
        relevance: vec![false; gallery.len()],
        order,
    })
}

/// Fraction of all relevant items appearing in the top-k of the ranking.
pub fn recall_at_k<T: Real>(ranking: &RetrievalRanking<T>, k: usize) -> Result<T, MetricError> {
    let n = ranking.len();
    if k == 0 || k > n {
        return Err(MetricError::InvalidK { k, n });
    }
    let total_relevant = ranking.relevance.iter().filter(|&&r| r).count();
    if total_relevant == 0 {
        return Err(MetricError::NoRelevantItems);
    }
    let hit = ranking.order[..k]
        .iter()
        .filter(|&&idx| ranking.relevance[idx])
        .count();
    Ok(real::<T>(hit as f64) / real(total_relevant as f64))
}

/// CSV rows `metric,name,value` with 12 significant digits.
pub fn metrics_csv<T: Real>(rows: &[(&str, &str, T)]) -> String {
    let mut out = String::from("metric,name,value\n");
    for (metric, name, value) in rows {
        out.push_str(&format!(
            "{},{},{:.11e}\n",
            metric,
            name,
            value.to_f64().expect("metric value fits f64")
        ));
    }
    out
}
