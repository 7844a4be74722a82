//! Cost-sensitive weighted binary cross-entropy.
//!
//! The positive-class weight is the negative/positive count ratio over the
//! training labels, so a rare risky class contributes as much total loss as
//! the majority class. The weighted loss is the non-negative mean of the
//! per-element BCE vector with positive elements scaled by `w_pos`.

use crate::{Error, Result};

/// Predictions are clamped into [EPS, 1−EPS] before taking logarithms so a
/// saturated prediction yields a finite loss.
pub const PROB_EPS: f64 = 1e-7;

fn check_batch(preds: &[f64], labels: &[u8]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::Loss("empty batch".into()));
    }
    if preds.len() != labels.len() {
        return Err(Error::Loss(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    for (i, &p) in preds.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Loss(format!("prediction {p} at index {i} outside [0,1]")));
        }
    }
    for (i, &y) in labels.iter().enumerate() {
        if y > 1 {
            return Err(Error::Loss(format!("label {y} at index {i} outside {{0,1}}")));
        }
    }
    Ok(())
}

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Positive-class weight over the training labels: (negatives / positives).
/// All-negative labels are an error (the ratio is undefined); all-positive
/// labels return 0 and the caller should warn.
pub fn positive_weight(train_labels: &[u8]) -> Result<f64> {
    if train_labels.is_empty() {
        return Err(Error::Loss("positive_weight: empty label sequence".into()));
    }
    let total = train_labels.len();
    let positives = train_labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 {
        return Err(Error::Loss("positive_weight: no positive samples in training labels".into()));
    }
    Ok((total - positives) as f64 / positives as f64)
}

/// Per-element BCE vector: l_i = −y_i·ln(ŷ_i) − (1−y_i)·ln(1−ŷ_i).
pub fn bce_vector(preds: &[f64], labels: &[u8]) -> Result<Vec<f64>> {
    check_batch(preds, labels)?;
    Ok(preds
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = clamp(p);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .collect())
}

/// Weighted mean BCE: positive elements scaled by `w_pos`, then averaged.
pub fn weighted_bce(preds: &[f64], labels: &[u8], w_pos: f64) -> Result<f64> {
    if !(w_pos > 0.0) {
        return Err(Error::Loss(format!("w_pos must be positive, got {w_pos}")));
    }
    let vector = bce_vector(preds, labels)?;
    let m = vector.len() as f64;
    let sum: f64 = vector
        .iter()
        .zip(labels)
        .map(|(&l, &y)| if y == 1 { l * w_pos } else { l })
        .sum();
    Ok(sum / m)
}

/// Gradient of `weighted_bce` with respect to each prediction. Zero where
/// the clamp is active.
pub fn weighted_bce_grad(preds: &[f64], labels: &[u8], w_pos: f64) -> Result<Vec<f64>> {
    if !(w_pos > 0.0) {
        return Err(Error::Loss(format!("w_pos must be positive, got {w_pos}")));
    }
    check_batch(preds, labels)?;
    let m = preds.len() as f64;
    Ok(preds
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            if p < PROB_EPS || p > 1.0 - PROB_EPS {
                return 0.0;
            }
            if y == 1 {
                -w_pos / p / m
            } else {
                1.0 / (1.0 - p) / m
            }
        })
        .collect())
}
