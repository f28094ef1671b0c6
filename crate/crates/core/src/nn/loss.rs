use super::Tensor;
use crate::error::{Error, Result};

/// Mean squared error and its gradient `2 (pred - target) / n`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("mse_loss", pred.shape(), target.shape()));
    }
    if pred.is_empty() {
        return Err(Error::Argument("mse_loss of empty tensors".into()));
    }
    let n = pred.len() as f64;
    let diff = pred.sub(target)?;
    let loss = diff.sum_squares() / n;
    if !loss.is_finite() {
        return Err(Error::Numeric("mse_loss"));
    }
    let grad = diff.map(|d| 2.0 * d / n);
    Ok((loss, grad))
}
