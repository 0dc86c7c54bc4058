//! Sigmoid cross-entropy over attribute vectors.
//!
//! Per region the loss averages the binary cross-entropy over the `n`
//! attributes; over a batch the per-region losses are summed. The gradient is
//! taken with respect to the pre-sigmoid logits, where it reduces to
//! `(prediction - target) / n`.

use crate::error::{Error, Result};
use crate::net::tensor::Tensor;

/// Clamp applied to predictions inside the log terms.
pub const LOSS_EPS: f64 = 1e-7;

/// Loss and logit gradient for one region.
pub fn phoc_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::InvalidInput(format!(
            "prediction has {} attributes, target {}",
            pred.len(),
            target.len()
        )));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.iter().zip(target) {
        let pc = p.clamp(LOSS_EPS, 1.0 - LOSS_EPS);
        loss -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        grad.push((p - t) / n);
    }
    Ok((loss / n, grad))
}

/// Summed loss over a batch of regions, with the per-row logit gradients.
pub fn batch_phoc_loss(pred: &Tensor, targets: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape != targets.shape {
        return Err(Error::InvalidInput(format!(
            "prediction shape {:?} differs from target shape {:?}",
            pred.shape, targets.shape
        )));
    }
    let (rows, _) = pred.dims2();
    let mut total = 0.0;
    let mut grad = Tensor::zeros(&pred.shape);
    for r in 0..rows {
        let (l, g) = phoc_loss(pred.row(r), targets.row(r))?;
        total += l;
        grad.row_mut(r).copy_from_slice(&g);
    }
    Ok((total, grad))
}
