use serde::Serialize;

use crate::error::{Error, Result};

/// Test-set quality of one model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// Healthy vs any disease; `None` when the split has no diseased sequences.
    pub f1: Option<f64>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

/// Binary F1 `2TP / (2TP + FP + FN)`, absent without positives.
pub fn binary_f1(tp: usize, fp: usize, fn_: usize) -> Option<f64> {
    if tp + fn_ == 0 {
        return None;
    }
    Some(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
}

/// Scores predictions. For F1 every non-healthy class counts as positive,
/// so confusing two diseases is still a true positive.
pub fn metrics_from_predictions(
    labels: &[usize],
    predicted: &[usize],
    classes: usize,
    healthy: usize,
) -> Result<Metrics> {
    if labels.is_empty() {
        return Err(Error::invalid("cannot score an empty split"));
    }
    if labels.len() != predicted.len() {
        return Err(Error::dim(format!(
            "{} labels for {} predictions",
            labels.len(),
            predicted.len()
        )));
    }
    if healthy >= classes {
        return Err(Error::invalid(format!("healthy class {healthy} outside {classes} classes")));
    }
    let mut confusion = vec![vec![0; classes]; classes];
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&y, &p) in labels.iter().zip(predicted) {
        if y >= classes || p >= classes {
            return Err(Error::invalid(format!("class {} outside {classes} classes", y.max(p))));
        }
        confusion[y][p] += 1;
        match (y != healthy, p != healthy) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
        }
    }
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    Ok(Metrics {
        accuracy: correct as f64 / labels.len() as f64,
        f1: binary_f1(tp, fp, fn_),
        confusion,
        tp,
        fp,
        fn_,
        tn,
    })
}

impl Metrics {
    pub fn summary(&self) -> String {
        match self.f1 {
            Some(f) => format!("accuracy {:.4} f1 {:.4}", self.accuracy, f),
            None => format!("accuracy {:.4} f1 n/a", self.accuracy),
        }
    }
}
