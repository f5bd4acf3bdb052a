use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Accuracy, per-category and macro scores, and the confusion matrix
/// (rows = truth, columns = prediction).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClsMetrics {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub support: Vec<usize>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Scores predictions over `num_categories` categories. Empty denominators
/// give 0, and every category counts toward the macro means.
pub fn compute_metrics(truth: &[usize], pred: &[usize], num_categories: usize) -> Result<ClsMetrics> {
    if truth.is_empty() {
        return Err(Error::Empty("test slice"));
    }
    if truth.len() != pred.len() {
        return Err(Error::Config(format!("{} labels but {} predictions", truth.len(), pred.len())));
    }
    if num_categories == 0 {
        return Err(Error::Config("no categories".into()));
    }
    let mut confusion = vec![vec![0usize; num_categories]; num_categories];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= num_categories || p >= num_categories {
            return Err(Error::UnknownCategory { category: t.max(p), num_categories });
        }
        confusion[t][p] += 1;
    }
    let mut precision = Vec::with_capacity(num_categories);
    let mut recall = Vec::with_capacity(num_categories);
    let mut f1 = Vec::with_capacity(num_categories);
    let mut support = Vec::with_capacity(num_categories);
    for c in 0..num_categories {
        let tp = confusion[c][c];
        let predicted: usize = confusion.iter().map(|row| row[c]).sum();
        let actual: usize = confusion[c].iter().sum();
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        precision.push(p);
        recall.push(r);
        f1.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
        support.push(actual);
    }
    let correct: usize = (0..num_categories).map(|c| confusion[c][c]).sum();
    Ok(ClsMetrics {
        accuracy: ratio(correct, truth.len()),
        macro_precision: mean(&precision),
        macro_recall: mean(&recall),
        macro_f1: mean(&f1),
        precision,
        recall,
        f1,
        support,
        confusion,
    })
}
