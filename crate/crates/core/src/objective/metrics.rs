use serde::{Deserialize, Serialize};

use crate::corpus::{CATEGORIES, NUM_CLASSES};
use crate::error::{Error, Result};

/// `confusion[truth][pred]`.
pub type ConfusionMatrix = [[usize; NUM_CLASSES]; NUM_CLASSES];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub accuracy: f64,
    pub per_class_f1: [f64; NUM_CLASSES],
    pub per_class_recall: [f64; NUM_CLASSES],
    pub confusion: ConfusionMatrix,
    pub n: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn confusion_matrix(preds: &[usize], truth: &[usize]) -> Result<ConfusionMatrix> {
    if preds.len() != truth.len() {
        return Err(Error::LengthMismatch(preds.len(), truth.len()));
    }
    let mut cm = [[0; NUM_CLASSES]; NUM_CLASSES];
    for (&p, &t) in preds.iter().zip(truth) {
        if p >= NUM_CLASSES || t >= NUM_CLASSES {
            return Err(Error::ShapeMismatch(format!(
                "label out of range: pred {p}, truth {t}"
            )));
        }
        cm[t][p] += 1;
    }
    Ok(cm)
}

/// Classification metrics over all 8 classes. A class whose F1 denominator
/// is zero scores 0 and still counts toward the macro average.
pub fn metrics(preds: &[usize], truth: &[usize]) -> Result<Metrics> {
    let confusion = confusion_matrix(preds, truth)?;
    let n = preds.len();
    let mut per_class_f1 = [0.0; NUM_CLASSES];
    let mut per_class_recall = [0.0; NUM_CLASSES];
    let mut correct = 0;
    for c in 0..NUM_CLASSES {
        let tp = confusion[c][c];
        let fn_: usize = confusion[c].iter().sum::<usize>() - tp;
        let fp: usize = (0..NUM_CLASSES).map(|t| confusion[t][c]).sum::<usize>() - tp;
        per_class_f1[c] = ratio(2 * tp, 2 * tp + fp + fn_);
        per_class_recall[c] = ratio(tp, tp + fn_);
        correct += tp;
    }
    let accuracy = ratio(correct, n);
    Ok(Metrics {
        macro_f1: per_class_f1.iter().sum::<f64>() / NUM_CLASSES as f64,
        micro_f1: accuracy,
        accuracy,
        per_class_f1,
        per_class_recall,
        confusion,
        n,
    })
}

pub fn macro_f1(preds: &[usize], truth: &[usize]) -> Result<f64> {
    Ok(metrics(preds, truth)?.macro_f1)
}

pub fn micro_f1(preds: &[usize], truth: &[usize]) -> Result<f64> {
    Ok(metrics(preds, truth)?.micro_f1)
}

impl Metrics {
    /// Plain-text report with per-class rows and the confusion matrix.
    pub fn render(&self) -> String {
        let mut s = format!(
            "n={} macro_f1={:.4} micro_f1={:.4} accuracy={:.4}\n",
            self.n, self.macro_f1, self.micro_f1, self.accuracy
        );
        s.push_str("class\tf1\trecall\n");
        for c in 0..NUM_CLASSES {
            s.push_str(&format!(
                "{}\t{:.4}\t{:.4}\n",
                CATEGORIES[c], self.per_class_f1[c], self.per_class_recall[c]
            ));
        }
        s.push_str("confusion (rows = truth, cols = prediction)\n");
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            s.push_str(&cells.join("\t"));
            s.push('\n');
        }
        s
    }
}
