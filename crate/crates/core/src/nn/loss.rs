use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Predictions are clamped to `[BCE_EPS, 1 - BCE_EPS]` before the log.
pub const BCE_EPS: f64 = 1e-7;

pub(crate) fn check_targets(target: &Tensor) -> Result<()> {
    match target.data().iter().find(|&&y| y != 0.0 && y != 1.0) {
        Some(&bad) => Err(Error::InvalidTarget(bad)),
        None => Ok(()),
    }
}

pub(crate) fn bce_value(pred: &[f64], target: &[f64]) -> f64 {
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -y * p.ln() - (1.0 - y) * (1.0 - p).ln()
        })
        .sum();
    total / pred.len() as f64
}

/// Binary cross-entropy averaged over classes and over the batch.
///
/// `pred` and `target` share a shape (`[C]` or `[N, C]`); targets must be 0
/// or 1.
pub fn bce_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    pred.expect_same_shape(target)?;
    check_targets(target)?;
    if pred.is_empty() {
        return Err(Error::Shape("bce over an empty tensor".into()));
    }
    Ok(bce_value(pred.data(), target.data()))
}
