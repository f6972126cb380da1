use serde::{Deserialize, Serialize};

use crate::data::schema::{CrashType, NUM_CLASSES};
use crate::error::{FgttError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    /// Row-normalized confusion diagonal; equals recall.
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassMetrics>,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub accuracy: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub(crate) fn harmonic(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// One-vs-rest precision, recall and F1 per class, support-weighted
/// averages, and overall accuracy.
pub fn compute_metrics(predicted: &[usize], actual: &[usize]) -> Result<Metrics> {
    if predicted.len() != actual.len() {
        return Err(FgttError::Contract(format!(
            "{} predictions for {} labels",
            predicted.len(),
            actual.len()
        )));
    }
    if actual.is_empty() {
        return Err(FgttError::Contract("cannot score an empty prediction set".into()));
    }
    let mut confusion = vec![vec![0usize; NUM_CLASSES]; NUM_CLASSES];
    for (&p, &a) in predicted.iter().zip(actual) {
        if p >= NUM_CLASSES || a >= NUM_CLASSES {
            return Err(FgttError::Contract(format!("class id out of range: {p}/{a}")));
        }
        confusion[a][p] += 1;
    }
    Ok(Metrics::from_confusion(confusion))
}

impl Metrics {
    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Self {
        let k = confusion.len();
        let total: usize = confusion.iter().flatten().sum();
        let mut per_class = Vec::with_capacity(k);
        for c in 0..k {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            per_class.push(ClassMetrics {
                accuracy: recall,
                precision,
                recall,
                f1: harmonic(precision, recall),
                support,
            });
        }
        let weighted = |f: fn(&ClassMetrics) -> f64| -> f64 {
            per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total.max(1) as f64
        };
        let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
        Metrics {
            weighted_precision: weighted(|m| m.precision),
            weighted_recall: weighted(|m| m.recall),
            weighted_f1: weighted(|m| m.f1),
            accuracy: ratio(correct, total),
            confusion,
            per_class,
        }
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    /// Tabular report: one row per class with accuracy, precision, recall,
    /// F1 and the row-normalized confusion percentages, then the weighted
    /// average row.
    pub fn to_report_csv(&self) -> String {
        let mut out = String::from("label,acc,prec,rec,f1");
        for c in CrashType::ALL {
            out.push(',');
            out.push_str(c.name());
        }
        out.push('\n');
        for (c, m) in self.per_class.iter().enumerate() {
            let support = m.support.max(1) as f64;
            out.push_str(&format!(
                "{},{:.1}%,{:.3},{:.3},{:.3}",
                CrashType::ALL[c].name(),
                100.0 * m.accuracy,
                m.precision,
                m.recall,
                m.f1
            ));
            for n in &self.confusion[c] {
                out.push_str(&format!(",{:.1}%", 100.0 * *n as f64 / support));
            }
            out.push('\n');
        }
        out.push_str(&format!(
            "Weighted Avg,{:.1}%,{:.3},{:.3},{:.3}",
            100.0 * self.accuracy,
            self.weighted_precision,
            self.weighted_recall,
            self.weighted_f1
        ));
        out.push_str(&",--".repeat(self.per_class.len()));
        out.push('\n');
        out
    }
}
