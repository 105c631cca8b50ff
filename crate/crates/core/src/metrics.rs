//! Segmentation metrics.
//!
//! Shape-averaged mIoU: for every cloud, each of the `K` classes gets
//! `|pred ∩ label| / |pred ∪ label|`, a class absent from both counting as 1.
//! The cloud's shape IoU is the mean over the `K` classes and the reported
//! mIoU is the mean over clouds. Per-class IoU is the per-class mean over
//! clouds, so the mean of `per_class_iou` equals `miou`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub miou: f64,
    pub accuracy: f64,
    pub per_class_iou: Vec<f64>,
    /// Seconds spent producing the predictions; zero when not measured.
    pub wall_time: f64,
}

/// Confusion matrix `m[label][pred]` of one cloud.
pub fn confusion(predictions: &[usize], labels: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0usize; k]; k];
    for (&p, &l) in predictions.iter().zip(labels) {
        m[l][p] += 1;
    }
    m
}

/// Per-class IoU of one cloud from its confusion matrix.
pub fn class_ious(m: &[Vec<usize>]) -> Vec<f64> {
    let k = m.len();
    (0..k)
        .map(|c| {
            let tp = m[c][c];
            let label_total: usize = m[c].iter().sum();
            let pred_total: usize = (0..k).map(|l| m[l][c]).sum();
            let union = label_total + pred_total - tp;
            if union == 0 {
                1.0
            } else {
                tp as f64 / union as f64
            }
        })
        .collect()
}

/// Metrics over `batch` clouds of `points` points, flattened row-major.
pub fn compute_miou(predictions: &[usize], labels: &[usize], batch: usize, points: usize, k: usize) -> Result<EvalResult> {
    let n = batch * points;
    if predictions.len() != n || labels.len() != n || batch == 0 || points == 0 {
        return Err(Error::ShapeMismatch {
            op: "compute_miou",
            left: vec![predictions.len()],
            right: vec![labels.len(), batch, points],
        });
    }
    if k < 2 {
        return Err(Error::contract("compute_miou", format!("need at least two classes, got {k}")));
    }
    if let Some(&bad) = predictions.iter().chain(labels).find(|&&v| v >= k) {
        return Err(Error::contract("compute_miou", format!("class {bad} outside [0, {k})")));
    }
    let mut per_class = vec![0.0f64; k];
    let mut shape_sum = 0.0f64;
    for b in 0..batch {
        let span = b * points..(b + 1) * points;
        let ious = class_ious(&confusion(&predictions[span.clone()], &labels[span], k));
        shape_sum += ious.iter().sum::<f64>() / k as f64;
        for (acc, iou) in per_class.iter_mut().zip(&ious) {
            *acc += iou;
        }
    }
    for v in &mut per_class {
        *v /= batch as f64;
    }
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(EvalResult {
        miou: shape_sum / batch as f64,
        accuracy: correct as f64 / n as f64,
        per_class_iou: per_class,
        wall_time: 0.0,
    })
}
