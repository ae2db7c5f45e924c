//! Hard-prediction confusion accounting, per-class IoU, mIoU and the worker
//! weight `theta = IoU(priority) / mIoU`.
//!
//! A class with no ground-truth pixels and no predicted pixels has no IoU
//! ("absent") and is left out of the mean.

use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};

/// `matrix[t * C + p]` = pixels of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    n_classes: usize,
    matrix: Vec<u64>,
}

impl ConfusionCounts {
    pub fn new(n_classes: usize) -> Self {
        ConfusionCounts {
            n_classes,
            matrix: vec![0; n_classes * n_classes],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    #[inline]
    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.matrix[truth * self.n_classes + pred]
    }

    #[inline]
    pub fn add(&mut self, truth: usize, pred: usize) {
        self.matrix[truth * self.n_classes + pred] += 1;
    }

    pub fn total(&self) -> u64 {
        self.matrix.iter().sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.matrix[truth * self.n_classes..(truth + 1) * self.n_classes].iter().sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.n_classes).map(|t| self.get(t, pred)).sum()
    }

    /// Elementwise sum with counts from a disjoint pixel set.
    pub fn merge(&mut self, other: &ConfusionCounts) -> Result<()> {
        if other.n_classes != self.n_classes {
            return Err(FedError::invalid(format!(
                "cannot merge {}-class counts into {}-class counts",
                other.n_classes, self.n_classes
            )));
        }
        for (a, b) in self.matrix.iter_mut().zip(&other.matrix) {
            *a += b;
        }
        Ok(())
    }

    /// `(tp, fn, fp)` for class `c`.
    pub fn class_counts(&self, c: usize) -> (u64, u64, u64) {
        let tp = self.get(c, c);
        (tp, self.row_sum(c) - tp, self.col_sum(c) - tp)
    }
}

pub fn confusion_counts(pred_labels: &[u8], true_labels: &[u8], n_classes: usize) -> Result<ConfusionCounts> {
    if pred_labels.len() != true_labels.len() {
        return Err(FedError::invalid(format!(
            "prediction has {} pixels, ground truth {}",
            pred_labels.len(),
            true_labels.len()
        )));
    }
    let mut counts = ConfusionCounts::new(n_classes);
    for (&p, &t) in pred_labels.iter().zip(true_labels) {
        let (p, t) = (p as usize, t as usize);
        if p >= n_classes || t >= n_classes {
            return Err(FedError::invalid(format!(
                "label pair ({t}, {p}) out of range for {n_classes} classes"
            )));
        }
        counts.add(t, p);
    }
    Ok(counts)
}

/// `TP / (TP + FP + FN)`, or `None` when the class never occurs.
pub fn class_iou(counts: &ConfusionCounts, c: usize) -> Result<Option<f64>> {
    if c >= counts.n_classes {
        return Err(FedError::invalid(format!(
            "class {c} out of range for {} classes",
            counts.n_classes
        )));
    }
    let (tp, fn_, fp) = counts.class_counts(c);
    let union = tp + fn_ + fp;
    Ok((union > 0).then(|| tp as f64 / union as f64))
}

pub fn per_class_iou(counts: &ConfusionCounts) -> Vec<Option<f64>> {
    (0..counts.n_classes)
        .map(|c| class_iou(counts, c).expect("class in range"))
        .collect()
}

/// Arithmetic mean of the defined entries.
pub fn mean_of_present(ious: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = ious.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

pub fn mean_iou(counts: &ConfusionCounts) -> Result<f64> {
    mean_of_present(&per_class_iou(counts)).ok_or_else(|| FedError::invalid("mean IoU of an empty evaluation"))
}

/// `theta` from per-class IoUs. Zero when the priority class is absent or the
/// mean is zero.
pub fn theta_from_ious(ious: &[Option<f64>], miou: f64, priority_class: usize) -> f64 {
    match ious.get(priority_class).copied().flatten() {
        None => 0.0,
        Some(_) if miou <= 0.0 => {
            log::warn!("worker weight undefined: mIoU is 0, using theta = 0");
            0.0
        }
        Some(iou) => iou / miou,
    }
}

/// `IoU(priority) / mIoU`.
pub fn worker_weight(counts: &ConfusionCounts, priority_class: usize) -> Result<f64> {
    if priority_class >= counts.n_classes {
        return Err(FedError::invalid(format!("priority class {priority_class} out of range")));
    }
    let ious = per_class_iou(counts);
    let miou = mean_of_present(&ious).ok_or_else(|| FedError::invalid("mean IoU of an empty evaluation"))?;
    Ok(theta_from_ious(&ious, miou, priority_class))
}

/// One worker model scored on the auxiliary test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerEval {
    pub worker_id: usize,
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub theta: f64,
}

impl WorkerEval {
    pub fn from_counts(worker_id: usize, counts: &ConfusionCounts, priority_class: usize) -> Result<Self> {
        if priority_class >= counts.n_classes {
            return Err(FedError::invalid(format!("priority class {priority_class} out of range")));
        }
        let per_class_iou = per_class_iou(counts);
        let miou = mean_of_present(&per_class_iou).ok_or_else(|| FedError::invalid("mean IoU of an empty evaluation"))?;
        let theta = theta_from_ious(&per_class_iou, miou, priority_class);
        Ok(WorkerEval {
            worker_id,
            per_class_iou,
            miou,
            theta,
        })
    }
}
