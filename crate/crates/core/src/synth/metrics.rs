use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// `K x K` pixel counts; rows are ground truth, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    /// Row-major counts.
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Metric("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix {
            num_classes: k,
            counts: rows.concat(),
        })
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Count one pixel per position of `pred` against `truth`.
    pub fn update(&mut self, pred: &[u8], truth: &[u8]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::Shape(format!(
                "prediction has {} pixels, truth {}",
                pred.len(),
                truth.len()
            )));
        }
        let k = self.num_classes;
        if let Some(bad) = pred.iter().chain(truth).find(|&&c| c as usize >= k) {
            return Err(Error::Metric(format!("class {bad} outside [0, {k})")));
        }
        for (&p, &t) in pred.iter().zip(truth) {
            self.counts[t as usize * k + p as usize] += 1;
        }
        Ok(())
    }

    /// IoU per class; `None` where the class is absent from both truth and
    /// prediction.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        let k = self.num_classes;
        (0..k)
            .map(|c| {
                let tp = self.get(c, c);
                let row: u64 = (0..k).map(|j| self.get(c, j)).sum();
                let col: u64 = (0..k).map(|i| self.get(i, c)).sum();
                let denom = row + col - tp;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }

    /// Per-class IoU and their mean over classes that occur.
    pub fn miou(&self) -> Result<(Vec<Option<f64>>, f64)> {
        let per_class = self.per_class_iou();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        if present.is_empty() {
            return Err(Error::Metric(
                "no class has a nonzero IoU denominator".into(),
            ));
        }
        let mean = present.iter().sum::<f64>() / present.len() as f64;
        Ok((per_class, mean))
    }

    pub fn pixel_accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Metric("empty confusion matrix".into()));
        }
        let trace: u64 = (0..self.num_classes).map(|c| self.get(c, c)).sum();
        Ok(trace as f64 / total as f64)
    }
}

/// Arg-max class per pixel of `[N, K, H, W]` logits, as a `[N, H, W]` map.
/// Ties go to the lowest class index.
pub fn argmax_classes(logits: &Tensor) -> Result<Vec<u8>> {
    let &[n, k, h, w] = logits.shape() else {
        return Err(Error::Shape(format!(
            "logits must be [N, K, H, W], got {:?}",
            logits.shape()
        )));
    };
    let hw = h * w;
    let data = logits.data();
    let mut out = Vec::with_capacity(n * hw);
    for s in 0..n {
        for p in 0..hw {
            let mut best = 0;
            for c in 1..k {
                if data[(s * k + c) * hw + p] > data[(s * k + best) * hw + p] {
                    best = c;
                }
            }
            out.push(best as u8);
        }
    }
    Ok(out)
}
