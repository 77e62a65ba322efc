//! Adam with bias correction, applied block-wise over the model's
//! trainable parameters.

use thiserror::Error;

use crate::model::{Model, ModelGrads};
use crate::scalar::{real, Real};

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("shape mismatch between parameters and gradients in block {0}")]
    ShapeMismatch(&'static str),
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamParams<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> Default for AdamParams<T> {
    fn default() -> Self {
        AdamParams {
            beta1: real(0.9),
            beta2: real(0.999),
            eps: real(1e-8),
        }
    }
}

/// First/second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: ModelGrads<T>,
    pub v: ModelGrads<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(model: &Model<T>) -> Self {
        AdamState {
            m: ModelGrads::zeros_like(model),
            v: ModelGrads::zeros_like(model),
            t: 0,
        }
    }
}

/// One Adam update of every trainable block, in place.
pub fn adam_step<T: Real>(
    model: &mut Model<T>,
    grads: &ModelGrads<T>,
    state: &mut AdamState<T>,
    lr: T,
    params: &AdamParams<T>,
) -> Result<(), OptimError> {
    state.t += 1;
    let t = state.t as i32;
    let bc1 = T::one() - params.beta1.powi(t);
    let bc2 = T::one() - params.beta2.powi(t);
    let one = T::one();

    let mut param_blocks = model.param_blocks_mut();
    let grad_blocks = grads.blocks();
    let mut m_blocks = state.m.blocks_mut();
    let mut v_blocks = state.v.blocks_mut();
    if param_blocks.len() != grad_blocks.len() {
        return Err(OptimError::ShapeMismatch("block count"));
    }
    for (((p, g), m), v) in param_blocks
        .iter_mut()
        .zip(grad_blocks.iter())
        .zip(m_blocks.iter_mut())
        .zip(v_blocks.iter_mut())
    {
        if p.0 != g.0 || p.1.len() != g.1.len() {
            return Err(OptimError::ShapeMismatch(p.0));
        }
        for i in 0..p.1.len() {
            let grad = g.1[i];
            m.1[i] = params.beta1 * m.1[i] + (one - params.beta1) * grad;
            v.1[i] = params.beta2 * v.1[i] + (one - params.beta2) * grad * grad;
            let m_hat = m.1[i] / bc1;
            let v_hat = v.1[i] / bc2;
            p.1[i] -= lr * m_hat / (v_hat.sqrt() + params.eps);
        }
    }
    Ok(())
}
