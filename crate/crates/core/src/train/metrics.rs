use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::events::{NormStats, PredictionExample};
use crate::model::{Model, Prediction};
use crate::special::weibull_nll;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Root mean squared error of the predicted gap, in original time units.
    pub rmse: f64,
    /// Mean time negative log-likelihood, in normalized time units.
    pub mean_nll: f64,
    pub per_class: Vec<ClassMetrics>,
    pub num_examples: usize,
}

/// Per-class precision and recall plus the macro F1 over classes that occur
/// in the labels or the predictions. Precision of a never-predicted class is 0.
pub fn classification_metrics(predicted: &[usize], labels: &[usize], num_types: usize) -> (Vec<ClassMetrics>, f64) {
    let mut tp = vec![0usize; num_types];
    let mut pred_n = vec![0usize; num_types];
    let mut true_n = vec![0usize; num_types];
    for (&p, &y) in predicted.iter().zip(labels) {
        pred_n[p] += 1;
        true_n[y] += 1;
        if p == y {
            tp[p] += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let mut per_class = Vec::with_capacity(num_types);
    let (mut f1_sum, mut present) = (0.0, 0usize);
    for k in 0..num_types {
        let precision = ratio(tp[k], pred_n[k]);
        let recall = ratio(tp[k], true_n[k]);
        if pred_n[k] + true_n[k] > 0 {
            present += 1;
            if precision + recall > 0.0 {
                f1_sum += 2.0 * precision * recall / (precision + recall);
            }
        }
        per_class.push(ClassMetrics {
            class: k,
            precision,
            recall,
            support: true_n[k],
        });
    }
    let macro_f1 = if present == 0 { 0.0 } else { f1_sum / present as f64 };
    (per_class, macro_f1)
}

/// Builds a report from predictions; gaps are in normalized units.
pub fn report_from_predictions(
    preds: &[Prediction],
    examples: &[PredictionExample],
    norm: &NormStats,
    num_types: usize,
) -> EvalReport {
    let n = preds.len();
    let predicted: Vec<usize> = preds.iter().map(Prediction::predicted_type).collect();
    let labels: Vec<usize> = examples.iter().map(|e| e.target_type).collect();
    let correct = predicted.iter().zip(&labels).filter(|(p, y)| p == y).count();
    let (per_class, macro_f1) = classification_metrics(&predicted, &labels, num_types);
    let (mut sq, mut nll) = (0.0, 0.0);
    for (p, e) in preds.iter().zip(examples) {
        let err = norm.denormalize_gap(p.expected_gap) - norm.denormalize_gap(e.gap());
        sq += err * err;
        nll += weibull_nll(p.lambda, p.shape, e.gap());
    }
    let denom = n.max(1) as f64;
    EvalReport {
        accuracy: correct as f64 / denom,
        macro_f1,
        rmse: (sq / denom).sqrt(),
        mean_nll: nll / denom,
        per_class,
        num_examples: n,
    }
}

/// Evaluates on `examples` (normalized times). Parameters are only read.
pub fn evaluate(model: &Model, examples: &[PredictionExample], norm: &NormStats) -> Result<EvalReport> {
    let preds = examples
        .par_iter()
        .map(|e| model.predict_prepared(&model.prepare(e)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(report_from_predictions(&preds, examples, norm, model.cfg.num_types))
}
