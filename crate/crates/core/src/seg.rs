//! Segmentation quality scores from a class confusion matrix.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Class confusion counts; rows index ground truth, columns prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self { n_classes, counts: vec![0; n_classes * n_classes] }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.n_classes + pred]
    }

    /// Accumulate aligned prediction/ground-truth label slices.
    pub fn accumulate(&mut self, pred: &[usize], gt: &[usize]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::LengthMismatch { what: "confusion_matrix", left: pred.len(), right: gt.len() });
        }
        for (&p, &g) in pred.iter().zip(gt) {
            if p >= self.n_classes {
                return Err(Error::LabelOutOfRange { label: p, n_classes: self.n_classes });
            }
            if g >= self.n_classes {
                return Err(Error::LabelOutOfRange { label: g, n_classes: self.n_classes });
            }
            self.counts[g * self.n_classes + p] += 1;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn row_sum(&self, gt: usize) -> u64 {
        (0..self.n_classes).map(|p| self.count(gt, p)).sum()
    }

    fn col_sum(&self, pred: usize) -> u64 {
        (0..self.n_classes).map(|g| self.count(g, pred)).sum()
    }
}

pub fn confusion_matrix(pred: &[usize], gt: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    let mut conf = ConfusionMatrix::new(n_classes);
    conf.accumulate(pred, gt)?;
    Ok(conf)
}

/// Segmentation scores; all in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SegScores {
    pub pixel_accuracy: f64,
    pub mean_accuracy: f64,
    pub freq_weighted_accuracy: f64,
    pub mean_iou: f64,
    /// Per-class IoU; `None` for classes absent from both ground truth and
    /// prediction (IoU undefined).
    pub per_class_iou: Vec<Option<f64>>,
}

/// Scores from a confusion matrix. Mean accuracy and mean IoU average only
/// over classes present in the ground truth; frequency-weighted accuracy
/// weights per-class IoU by ground-truth frequency.
pub fn seg_scores(conf: &ConfusionMatrix) -> Result<SegScores> {
    let total = conf.total();
    if total == 0 {
        return Err(Error::Empty("seg_scores"));
    }
    let n = conf.n_classes();
    let total = total as f64;
    let mut trace = 0u64;
    let mut per_class_iou = Vec::with_capacity(n);
    let mut mean_acc_sum = 0.0;
    let mut mean_iou_sum = 0.0;
    let mut present = 0usize;
    let mut freq_weighted = 0.0;
    for c in 0..n {
        let tp = conf.count(c, c);
        trace += tp;
        let row = conf.row_sum(c);
        let col = conf.col_sum(c);
        let union = row + col - tp;
        let iou = if union > 0 { Some(tp as f64 / union as f64) } else { None };
        per_class_iou.push(iou);
        if row > 0 {
            present += 1;
            mean_acc_sum += tp as f64 / row as f64;
            let iou = iou.unwrap_or(0.0);
            mean_iou_sum += iou;
            freq_weighted += (row as f64 / total) * iou;
        }
    }
    if present == 0 {
        return Err(Error::Empty("seg_scores: no ground-truth class present"));
    }
    Ok(SegScores {
        pixel_accuracy: trace as f64 / total,
        mean_accuracy: mean_acc_sum / present as f64,
        freq_weighted_accuracy: freq_weighted,
        mean_iou: mean_iou_sum / present as f64,
        per_class_iou,
    })
}
