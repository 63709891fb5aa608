//! Pixelwise confusion-matrix metrics with material as the positive class.

use std::fmt::Write as _;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_masks(predicted: &[bool], truth: &[bool]) -> Result<Self> {
        if predicted.len() != truth.len() {
            return invalid(format!("mask sizes differ: {} vs {}", predicted.len(), truth.len()));
        }
        let mut c = Confusion::default();
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
}

/// Ratio with an empty denominator read as a perfect score (nothing to get wrong).
fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricsReport {
    pub fn from_confusion(c: &Confusion) -> Self {
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Self {
            accuracy: ratio(c.tp + c.tn, c.total()),
            precision,
            recall,
            specificity: ratio(c.tn, c.tn + c.fp),
            f1,
        }
    }

    pub fn values(&self) -> [f64; 5] {
        [self.accuracy, self.precision, self.recall, self.specificity, self.f1]
    }

    /// Componentwise mean.
    pub fn mean(reports: &[MetricsReport]) -> Self {
        let n = reports.len().max(1) as f64;
        let mut acc = [0.0; 5];
        for r in reports {
            for (a, v) in acc.iter_mut().zip(r.values()) {
                *a += v;
            }
        }
        let [accuracy, precision, recall, specificity, f1] = acc.map(|a| a / n);
        Self { accuracy, precision, recall, specificity, f1 }
    }

    pub fn csv_fields(&self) -> String {
        let mut s = String::new();
        for (i, v) in self.values().iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "{v}");
        }
        s
    }
}

pub const METRICS_FIELDS: &str = "accuracy,precision,recall,specificity,f1";

pub fn evaluate(predicted: &[bool], truth: &[bool]) -> Result<MetricsReport> {
    Ok(MetricsReport::from_confusion(&Confusion::from_masks(predicted, truth)?))
}
