//! Masked binary cross-entropy and symmetric mean absolute percentage error.

use crate::error::{Error, Result};

pub const BCE_CLIP: f64 = 1e-7;
pub const SMAPE_EPS: f64 = 1e-12;

#[inline]
fn clip_probability(p: f64) -> f64 {
    p.clamp(BCE_CLIP, 1.0 - BCE_CLIP)
}

/// Per-element BCE on a clipped prediction.
#[inline]
pub fn bce(p: f64, t: f64) -> f64 {
    let p = clip_probability(p);
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

/// d bce / d p, evaluated at the clipped prediction. The clip is treated as
/// the identity for the gradient so saturated predictions still get pulled
/// back toward the target.
#[inline]
pub fn bce_grad(p: f64, t: f64) -> f64 {
    let p = clip_probability(p);
    (p - t) / (p * (1.0 - p))
}

/// Per-element SMAPE `|p - t| / (|p| + |t| + eps)`, in [0, 1].
#[inline]
pub fn smape(p: f64, t: f64) -> f64 {
    (p - t).abs() / (p.abs() + t.abs() + SMAPE_EPS)
}

/// d smape / d p. Zero at `p = t`, where the function has a kink.
#[inline]
pub fn smape_grad(p: f64, t: f64) -> f64 {
    let a = p - t;
    let denom = p.abs() + t.abs() + SMAPE_EPS;
    let sign = |v: f64| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    sign(a) / denom - a.abs() * sign(p) / (denom * denom)
}

fn masked_mean<F: Fn(f64, f64) -> f64>(pred: &[f64], target: &[f64], mask: &[f64], f: F) -> Result<f64> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(Error::shape(
            &[pred.len()],
            &[target.len(), mask.len()],
            "loss operands",
        ));
    }
    let mut total = 0.0;
    let mut count = 0.0;
    for i in 0..pred.len() {
        if mask[i] != 0.0 {
            total += f(pred[i], target[i]);
            count += 1.0;
        }
    }
    if count == 0.0 {
        return Err(Error::Empty("every step is masked".into()));
    }
    Ok(total / count)
}

/// Mean BCE over unmasked entries (`mask != 0`).
pub fn bce_loss(pred: &[f64], target: &[f64], mask: &[f64]) -> Result<f64> {
    masked_mean(pred, target, mask, bce)
}

/// Mean SMAPE over unmasked entries (`mask != 0`).
pub fn smape_loss(pred: &[f64], target: &[f64], mask: &[f64]) -> Result<f64> {
    masked_mean(pred, target, mask, smape)
}
