//! Box IoU / grounding accuracy, segmentation confusion scores, and
//! normalized classification accuracy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codec::{LabelSet, Mask, NormalizedBBox};
use crate::error::{Error, Result};

/// IoU of two normalized boxes on the [0, 100] lattice treated as
/// continuous coordinates. Two zero-area boxes are 1 if identical, else 0.
pub fn iou_bbox(a: NormalizedBBox, b: NormalizedBBox) -> f64 {
    let area = |x: NormalizedBBox| -> f64 {
        (x.x2 - x.x1) as f64 * (x.y2 - x.y1) as f64
    };
    let iw = (a.x2.min(b.x2) as f64 - a.x1.max(b.x1) as f64).max(0.0);
    let ih = (a.y2.min(b.y2) as f64 - a.y1.max(b.y1) as f64).max(0.0);
    let inter = iw * ih;
    let union = area(a) + area(b) - inter;
    if union == 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    inter / union
}

/// Fraction of predictions whose IoU with ground truth reaches each
/// threshold. A failed parse (None) scores IoU 0.
pub fn grounding_accuracy(
    predictions: &[Option<NormalizedBBox>],
    ground_truth: &[NormalizedBBox],
    thresholds: &[f64],
) -> Result<Vec<f64>> {
    if predictions.len() != ground_truth.len() {
        return Err(Error::ShapeMismatch {
            op: "grounding_accuracy",
            lhs: vec![predictions.len()],
            rhs: vec![ground_truth.len()],
        });
    }
    if predictions.is_empty() {
        return Err(Error::DegenerateInput("no grounding samples".into()));
    }
    let ious: Vec<f64> = predictions
        .iter()
        .zip(ground_truth)
        .map(|(p, g)| p.map_or(0.0, |p| iou_bbox(p, *g)))
        .collect();
    Ok(thresholds
        .iter()
        .map(|&t| ious.iter().filter(|&&v| v >= t).count() as f64 / ious.len() as f64)
        .collect())
}

/// Per-class pixel confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: ClassCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegScores {
    /// Scores for classes present in gt or prediction.
    pub per_class: BTreeMap<String, ClassScores>,
    /// Mean IoU over present classes.
    pub miou: f64,
    /// Per-pixel accuracy.
    pub overall_accuracy: f64,
}

/// Pixel confusion scores. IoU = TP/(TP+FP+FN) per class; mIoU averages
/// over classes present in gt or prediction; 0/0 ratios are defined as 0.
pub fn segmentation_scores(pred: &Mask, gt: &Mask, labels: &LabelSet) -> Result<SegScores> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(Error::ShapeMismatch {
            op: "segmentation_scores",
            lhs: vec![pred.height, pred.width],
            rhs: vec![gt.height, gt.width],
        });
    }
    pred.validate_against(labels)?;
    gt.validate_against(labels)?;
    let n_classes = labels.len();
    let total = (pred.width * pred.height) as u64;
    let mut counts = vec![ClassCounts::default(); n_classes];
    let mut correct = 0u64;
    for (p, g) in pred.labels.iter().zip(&gt.labels) {
        if p == g {
            correct += 1;
        }
        for (k, c) in counts.iter_mut().enumerate() {
            let k = k as u32;
            match (*p == k, *g == k) {
                (true, true) => c.true_pos += 1,
                (true, false) => c.false_pos += 1,
                (false, true) => c.false_neg += 1,
                (false, false) => c.true_neg += 1,
            }
        }
    }
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let mut per_class = BTreeMap::new();
    let mut iou_sum = 0.0;
    let mut present = 0usize;
    for (k, c) in counts.iter().enumerate() {
        if c.true_pos + c.false_pos + c.false_neg == 0 {
            continue;
        }
        let iou = ratio(c.true_pos, c.true_pos + c.false_pos + c.false_neg);
        let precision = ratio(c.true_pos, c.true_pos + c.false_pos);
        let recall = ratio(c.true_pos, c.true_pos + c.false_neg);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.insert(
            labels.name(k as u32)?.to_string(),
            ClassScores {
                iou,
                precision,
                recall,
                f1,
                counts: *c,
            },
        );
        iou_sum += iou;
        present += 1;
    }
    Ok(SegScores {
        per_class,
        miou: if present == 0 { 0.0 } else { iou_sum / present as f64 },
        overall_accuracy: ratio(correct, total),
    })
}

/// Case-fold, trim, and strip trailing periods before comparing.
pub fn normalize_class_text(s: &str) -> String {
    s.trim().trim_end_matches('.').trim().to_lowercase()
}

/// Fraction of predictions whose normalized text equals the class name.
/// Off-vocabulary output counts as wrong, never as an error.
pub fn classification_accuracy(predictions: &[String], ground_truth: &[String]) -> Result<f64> {
    if predictions.len() != ground_truth.len() {
        return Err(Error::ShapeMismatch {
            op: "classification_accuracy",
            lhs: vec![predictions.len()],
            rhs: vec![ground_truth.len()],
        });
    }
    if predictions.is_empty() {
        return Err(Error::DegenerateInput("no classification samples".into()));
    }
    let correct = predictions
        .iter()
        .zip(ground_truth)
        .filter(|(p, g)| normalize_class_text(p) == normalize_class_text(g))
        .count();
    Ok(correct as f64 / predictions.len() as f64)
}
