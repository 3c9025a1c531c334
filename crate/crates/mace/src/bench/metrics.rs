//! Precision / recall / F1 over binary predictions.

use crate::error::{Error, Result};
use crate::series::LabelSeries;

/// Counts follow the usual conventions: precision is 0 when nothing is
/// flagged, recall is 0 when there are no positives, F1 is 0 when both
/// components vanish.
pub fn prf1(predictions: &[u8], labels: &LabelSeries) -> Result<(f64, f64, f64)> {
    if predictions.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &l) in predictions.iter().zip(labels.as_slice()) {
        match (p, l) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => {}
        }
    }
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok((precision, recall, f1))
}
