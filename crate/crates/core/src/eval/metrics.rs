use serde::{Deserialize, Serialize};

use super::EvalError;

pub const REPORT_CSV_HEADER: &str = "samples,top1,top5,overall_accuracy,class_average_accuracy";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub top1: f64,
    /// Fraction whose label is among the first five ranked ids.
    pub top5: f64,
    pub overall_accuracy: f64,
    /// Mean top-1 recall over classes that have samples.
    pub class_average_accuracy: f64,
    /// `None` for classes without samples.
    pub per_class_recall: Vec<Option<f64>>,
    /// `confusion[truth][predicted]` counts of top-1 predictions.
    pub confusion: Vec<Vec<u64>>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.samples, self.top1, self.top5, self.overall_accuracy, self.class_average_accuracy
        )
    }

    /// Confusion matrix with a header row and a leading truth-name column.
    pub fn confusion_csv(&self, names: &[String]) -> String {
        let mut out = String::from("truth");
        for n in names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (name, row) in names.iter().zip(&self.confusion) {
            out.push_str(name);
            for c in row {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Scores ranked predictions (best first) against ground truth labels.
pub fn compute_metrics(predictions: &[Vec<usize>], truth: &[usize], classes: usize) -> Result<EvalReport, EvalError> {
    if predictions.is_empty() || truth.is_empty() {
        return Err(EvalError::Empty);
    }
    if predictions.len() != truth.len() {
        return Err(EvalError::LengthMismatch { predictions: predictions.len(), truth: truth.len() });
    }
    for (index, (p, &label)) in predictions.iter().zip(truth).enumerate() {
        if label >= classes {
            return Err(EvalError::LabelOutOfRange { index, label, classes });
        }
        if p.is_empty() {
            return Err(EvalError::Empty);
        }
        if let Some(&bad) = p.iter().find(|&&c| c >= classes) {
            return Err(EvalError::LabelOutOfRange { index, label: bad, classes });
        }
    }
    let mut confusion = vec![vec![0u64; classes]; classes];
    let mut hit5 = 0usize;
    for (p, &t) in predictions.iter().zip(truth) {
        confusion[t][p[0]] += 1;
        if p.iter().take(5).any(|&c| c == t) {
            hit5 += 1;
        }
    }
    let n = truth.len() as f64;
    let correct: u64 = (0..classes).map(|c| confusion[c][c]).sum();
    let per_class_recall: Vec<Option<f64>> = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let total: u64 = row.iter().sum();
            (total > 0).then(|| row[c] as f64 / total as f64)
        })
        .collect();
    let present: Vec<f64> = per_class_recall.iter().flatten().copied().collect();
    let overall = correct as f64 / n;
    let totals: Vec<u64> = confusion.iter().map(|row| row.iter().sum()).filter(|&t| t > 0).collect();
    // With equal class sizes the two means coincide; return the identical float.
    let class_average = if totals.windows(2).all(|w| w[0] == w[1]) {
        overall
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(EvalReport {
        samples: truth.len(),
        top1: overall,
        top5: hit5 as f64 / n,
        overall_accuracy: overall,
        class_average_accuracy: class_average,
        per_class_recall,
        confusion,
    })
}
