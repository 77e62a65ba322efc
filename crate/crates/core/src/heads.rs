//! Classifier head and anomaly-score mapping.

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum HeadError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Linear softmax classifier over video (or frame) embeddings.
#[derive(Debug, Clone)]
pub struct Classifier<T> {
    /// C x d.
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Classifier<T> {
    /// Zero-initialized classifier: uniform probabilities until trained.
    pub fn zeros(num_classes: usize, dim: usize) -> Self {
        Classifier {
            weights: Array2::zeros((num_classes, dim)),
            bias: Array1::zeros(num_classes),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }
}

/// softmax(W z + b): strictly positive, sums to 1.
pub fn classify<T: Real>(z: &Array1<T>, clf: &Classifier<T>) -> Result<Array1<T>, HeadError> {
    if z.len() != clf.dim() {
        return Err(HeadError::ShapeMismatch(format!(
            "embedding has {} components, classifier expects {}",
            z.len(),
            clf.dim()
        )));
    }
    let logits = clf.weights.dot(z) + &clf.bias;
    Ok(softmax(&logits))
}

pub(crate) fn softmax<T: Real>(logits: &Array1<T>) -> Array1<T> {
    let max = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let exps = logits.mapv(|v| (v - max).exp());
    let sum = exps.sum();
    exps.mapv(|v| v / sum)
}

/// Anomaly score: 1 - p(non-violence class), clamped into [0, 1]. The
/// non-violence class is the last probability by bundle contract.
pub fn anomaly_score<T: Real>(probs: &Array1<T>) -> T {
    let p_normal = probs[probs.len() - 1];
    (T::one() - p_normal).max(T::zero()).min(T::one())
}
