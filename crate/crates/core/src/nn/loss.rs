//! Binary cross-entropy and the dice overlap metric.

use crate::error::{Error, Result};
use crate::raster::BinaryMask;
use crate::tensor::Tensor;

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before taking logs.
pub const BCE_CLAMP: f64 = 1e-7;

#[inline]
fn clamp_prob(p: f32) -> f64 {
    (p as f64).clamp(BCE_CLAMP, 1.0 - BCE_CLAMP)
}

/// Mean binary cross-entropy, accumulated in `f64`.
pub fn bce_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    pred.check_same_shape(target, "bce_loss")?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = clamp_prob(p);
            let t = t as f64;
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Gradient of [`bce_loss`] with respect to `pred`. Zero where the clamp is active.
pub fn bce_backward(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    pred.check_same_shape(target, "bce_backward")?;
    let n = pred.len() as f64;
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let raw = p as f64;
            if raw < BCE_CLAMP || raw > 1.0 - BCE_CLAMP {
                return 0.0;
            }
            let t = t as f64;
            ((raw - t) / (raw * (1.0 - raw)) / n) as f32
        })
        .collect();
    Tensor::new(pred.shape().to_vec(), data)
}

/// Gradient of `bce_loss(sigmoid(z), t)` with respect to the logits `z`,
/// written in terms of `p = sigmoid(z)`: `(p − t) / n`.
pub fn bce_logit_grad(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    pred.check_same_shape(target, "bce_logit_grad")?;
    let n = pred.len() as f32;
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p - t) / n)
        .collect();
    Tensor::new(pred.shape().to_vec(), data)
}

/// Dice coefficient `2|A∩B| / (|A|+|B|)`; `1.0` when both masks are empty.
pub fn dice_coefficient(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.check_extents(b, "dice_coefficient")?;
    Ok(dice_slices(a.data(), b.data()))
}

pub(crate) fn dice_counts(a: &[bool], b: &[bool]) -> (usize, usize, usize) {
    let mut inter = 0;
    let mut na = 0;
    let mut nb = 0;
    for (&x, &y) in a.iter().zip(b) {
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    }
    (inter, na, nb)
}

pub(crate) fn dice_from_counts(inter: usize, na: usize, nb: usize) -> f64 {
    if na + nb == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (na + nb) as f64
    }
}

pub(crate) fn dice_slices(a: &[bool], b: &[bool]) -> f64 {
    let (i, na, nb) = dice_counts(a, b);
    dice_from_counts(i, na, nb)
}

/// Dice between `pred > 0.5` and `target > 0.5` over equally shaped tensors.
pub fn dice_tensors(pred: &Tensor, target: &Tensor) -> Result<f64> {
    pred.check_same_shape(target, "dice_tensors")?;
    let a: Vec<bool> = pred.data().iter().map(|&p| p > 0.5).collect();
    let b: Vec<bool> = target.data().iter().map(|&t| t > 0.5).collect();
    Ok(dice_slices(&a, &b))
}

pub(crate) fn check_finite(loss: f64, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            step,
            detail: format!("loss = {loss}"),
        })
    }
}
