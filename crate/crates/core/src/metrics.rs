//! Evaluation metrics: support-weighted F1, valence MSE and the combined
//! score `dis - c * dim`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default weight of the valence MSE in the combined score.
pub const COMBINED_MSE_WEIGHT: f64 = 0.25;

/// `counts[truth][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let c = counts.len();
        if counts.iter().any(|row| row.len() != c) {
            return Err(Error::contract("confusion matrix must be square"));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn from_labels(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::contract(format!(
                "{} labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut m = ConfusionMatrix::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= classes || p >= classes {
                return Err(Error::contract(format!("class index outside {classes} classes")));
            }
            m.counts[t][p] += 1;
        }
        Ok(m)
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn predicted(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum()
    }

    pub fn class_stats(&self) -> Vec<ClassStats> {
        (0..self.classes())
            .map(|k| {
                let tp = self.counts[k][k] as f64;
                let support = self.support(k);
                let predicted = self.predicted(k);
                let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
                let recall = if support == 0 { 0.0 } else { tp / support as f64 };
                let f1 = if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                ClassStats {
                    precision,
                    recall,
                    f1,
                    support,
                }
            })
            .collect()
    }

    pub fn accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::contract("accuracy of an empty confusion matrix"));
        }
        let correct: u64 = (0..self.classes()).map(|k| self.counts[k][k]).sum();
        Ok(correct as f64 / total as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Per-class F1 averaged with weights `support / total`.
pub fn weighted_f1(confusion: &ConfusionMatrix) -> Result<f64> {
    let total = confusion.total();
    if total == 0 {
        return Err(Error::contract("weighted F1 of an empty confusion matrix"));
    }
    Ok(confusion
        .class_stats()
        .iter()
        .map(|s| s.f1 * s.support as f64)
        .sum::<f64>()
        / total as f64)
}

pub fn mse_metric(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return Err(Error::contract(format!(
            "mse needs equal non-empty inputs, got {} and {}",
            predictions.len(),
            targets.len()
        )));
    }
    Ok(predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / predictions.len() as f64)
}

pub fn combined(dis: f64, dim: f64, mse_weight: f64) -> f64 {
    dis - mse_weight * dim
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dis: f64,
    pub dim: f64,
    pub com: f64,
    pub mse_weight: f64,
    pub per_class: Vec<ClassStats>,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    pub fn new(
        truth: &[usize],
        predicted: &[usize],
        valence_pred: &[f64],
        valence_true: &[f64],
        classes: usize,
        mse_weight: f64,
    ) -> Result<Self> {
        let confusion = ConfusionMatrix::from_labels(truth, predicted, classes)?;
        let dis = weighted_f1(&confusion)?;
        let dim = mse_metric(valence_pred, valence_true)?;
        Ok(MetricsReport {
            dis,
            dim,
            com: combined(dis, dim, mse_weight),
            mse_weight,
            per_class: confusion.class_stats(),
            confusion,
        })
    }

    /// Plain-text report with 4-decimal scores.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dis={:.4} dim={:.4} com={:.4}", self.dis, self.dim, self.com);
        let _ = writeln!(out, "class precision recall f1 support");
        for (k, s) in self.per_class.iter().enumerate() {
            let _ = writeln!(
                out,
                "{k} {:.4} {:.4} {:.4} {}",
                s.precision, s.recall, s.f1, s.support
            );
        }
        let _ = writeln!(out, "confusion (rows=true, cols=predicted)");
        for row in self.confusion.counts() {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(out, "{}", cells.join(" "));
        }
        out
    }
}
