//! Mean-squared-error loss and the Adam optimizer.

use crate::nets::ParameterSet;
use crate::tensor::Tensor;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    #[error("prediction shape {left:?} does not match target shape {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("non-finite value in loss inputs")]
    NonFinite,
    #[error("optimizer state layout {state:#x} does not match gradient layout {grad:#x}")]
    LayoutMismatch { state: u64, grad: u64 },
    #[error("max_norm must be positive, got {0}")]
    BadClipNorm(f64),
}

/// Loss = sum((y_hat - y)^2) / (2T); gradient = (y_hat - y) / T.
///
/// The normalization is over timesteps so the loss scale does not depend on
/// the window length.
pub fn mse_loss(y_hat: &Tensor, y: &Tensor) -> Result<(f64, Tensor), OptimError> {
    if y_hat.shape() != y.shape() {
        return Err(OptimError::ShapeMismatch {
            left: y_hat.shape().to_vec(),
            right: y.shape().to_vec(),
        });
    }
    if !y_hat.is_finite() || !y.is_finite() {
        return Err(OptimError::NonFinite);
    }
    let t = y_hat.shape()[0] as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(y.shape().to_vec());
    for (g, (&a, &b)) in grad
        .data_mut()
        .iter_mut()
        .zip(y_hat.data().iter().zip(y.data()))
    {
        let diff = a - b;
        loss += diff * diff;
        *g = diff / t;
    }
    Ok((loss / (2.0 * t), grad))
}

/// Adam first/second moment state. Owned by exactly one training loop.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: ParameterSet,
    pub v: ParameterSet,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    /// Fresh state with the canonical defaults (beta1 0.9, beta2 0.999,
    /// epsilon 1e-8) and zeroed moments matching `params`.
    pub fn new(params: &ParameterSet, learning_rate: f64) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate,
        }
    }
}

/// One Adam update, in place:
/// m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g^2;
/// theta <- theta - lr * (m/(1-b1^t)) / (sqrt(v/(1-b2^t)) + eps).
pub fn adam_step(
    params: &mut ParameterSet,
    grad: &ParameterSet,
    state: &mut AdamState,
) -> Result<(), OptimError> {
    if !params.same_layout(grad) || !state.m.same_layout(grad) {
        return Err(OptimError::LayoutMismatch {
            state: state.m.layout_id(),
            grad: grad.layout_id(),
        });
    }
    state.t += 1;
    let bias1 = 1.0 - state.beta1.powi(state.t as i32);
    let bias2 = 1.0 - state.beta2.powi(state.t as i32);
    for idx in 0..params.len() {
        let g = grad.tensor(idx).data();
        let m = state.m.values_mut(idx);
        for (mv, &gv) in m.iter_mut().zip(g) {
            *mv = state.beta1 * *mv + (1.0 - state.beta1) * gv;
        }
        let v = state.v.values_mut(idx);
        for (vv, &gv) in v.iter_mut().zip(g) {
            *vv = state.beta2 * *vv + (1.0 - state.beta2) * gv * gv;
        }
        let m = state.m.tensor(idx).data();
        let v = state.v.tensor(idx).data();
        let theta = params.values_mut(idx);
        for ((tv, &mv), &vv) in theta.iter_mut().zip(m).zip(v) {
            let m_hat = mv / bias1;
            let v_hat = vv / bias2;
            *tv -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

/// Scale the whole gradient down if its global L2 norm exceeds `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grad: &mut ParameterSet, max_norm: f64) -> Result<f64, OptimError> {
    if max_norm.is_nan() || max_norm <= 0.0 {
        return Err(OptimError::BadClipNorm(max_norm));
    }
    let mut sum_sq = 0.0;
    for (_, t) in grad.entries() {
        for &v in t.data() {
            sum_sq += v * v;
        }
    }
    let norm = sum_sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for idx in 0..grad.len() {
            for v in grad.values_mut(idx) {
                *v *= scale;
            }
        }
    }
    Ok(norm)
}
