//! The single training loop shared by centralized runs and federated
//! clients: one optimizer step per window (forward, MSE, BPTT, global-norm
//! clip, Adam), walking the windows in their given order. Keeping this in
//! one place is what makes a one-client federated run bit-identical to the
//! centralized run.

use crate::nets::{backward, forward, NetError, NetworkConfig, ParameterSet};
use crate::optim::{adam_step, clip_global_norm, mse_loss, AdamState, OptimError};
use crate::tensor::Tensor;
use thiserror::Error;

/// Global L2 clip applied to every BPTT gradient before the Adam update.
pub const GRADIENT_CLIP_NORM: f64 = 5.0;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training windows; sequences are shorter than one window")]
    NoWindows,
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

/// Run `epochs` passes over `windows` in order, updating `params` and
/// `adam` in place. Returns the mean window loss of the final epoch.
pub fn train_on_windows(
    params: &mut ParameterSet,
    adam: &mut AdamState,
    config: &NetworkConfig,
    windows: &[(Tensor, Tensor)],
    epochs: usize,
) -> Result<f64, TrainError> {
    if windows.is_empty() {
        return Err(TrainError::NoWindows);
    }
    let mut last_epoch_loss = f64::NAN;
    for _ in 0..epochs {
        let mut epoch_loss = 0.0;
        for (x, y) in windows {
            let (y_hat, tape) = forward(params, config, x)?;
            let (loss, grad_y) = mse_loss(&y_hat, y)?;
            let mut grads = backward(params, config, tape, &grad_y)?;
            clip_global_norm(&mut grads, GRADIENT_CLIP_NORM)?;
            adam_step(params, &grads, adam)?;
            epoch_loss += loss;
        }
        last_epoch_loss = epoch_loss / windows.len() as f64;
    }
    Ok(last_epoch_loss)
}

/// Mean window loss without touching the parameters.
pub fn evaluate_loss(
    params: &ParameterSet,
    config: &NetworkConfig,
    windows: &[(Tensor, Tensor)],
) -> Result<f64, TrainError> {
    if windows.is_empty() {
        return Err(TrainError::NoWindows);
    }
    let mut total = 0.0;
    for (x, y) in windows {
        let (y_hat, _) = forward(params, config, x)?;
        let (loss, _) = mse_loss(&y_hat, y)?;
        total += loss;
    }
    Ok(total / windows.len() as f64)
}
