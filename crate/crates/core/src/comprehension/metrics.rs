use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::centroid::{classify_intent, CentroidModel};
use super::ComprehensionError;
use crate::embedding::EmbeddingStore;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Multi-class evaluation laid out like a classification report: one row per
/// class, then accuracy, macro and support-weighted averages.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub classes: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub total: usize,
    pub correct: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvaluationReport {
    /// Builds the report from `(truth, prediction)` pairs. Rows follow
    /// `labels`; a class never predicted has precision 0.
    pub fn from_predictions(labels: &[String], pairs: &[(String, String)]) -> Self {
        let mut tp: BTreeMap<&str, usize> = BTreeMap::new();
        let mut predicted: BTreeMap<&str, usize> = BTreeMap::new();
        let mut support: BTreeMap<&str, usize> = BTreeMap::new();
        for (truth, pred) in pairs {
            *support.entry(truth).or_default() += 1;
            *predicted.entry(pred).or_default() += 1;
            if truth == pred {
                *tp.entry(truth).or_default() += 1;
            }
        }
        let classes: Vec<ClassMetrics> = labels
            .iter()
            .map(|l| {
                let t = tp.get(l.as_str()).copied().unwrap_or(0);
                let s = support.get(l.as_str()).copied().unwrap_or(0);
                let precision = ratio(t, predicted.get(l.as_str()).copied().unwrap_or(0));
                let recall = ratio(t, s);
                let f1 = if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                };
                ClassMetrics {
                    label: l.clone(),
                    precision,
                    recall,
                    f1,
                    support: s,
                }
            })
            .collect();

        let n = classes.len().max(1) as f64;
        let macro_avg = Averages {
            precision: classes.iter().map(|c| c.precision).sum::<f64>() / n,
            recall: classes.iter().map(|c| c.recall).sum::<f64>() / n,
            f1: classes.iter().map(|c| c.f1).sum::<f64>() / n,
        };
        let total_support: usize = classes.iter().map(|c| c.support).sum();
        let w = |f: fn(&ClassMetrics) -> f64| {
            if total_support == 0 {
                0.0
            } else {
                classes.iter().map(|c| f(c) * c.support as f64).sum::<f64>() / total_support as f64
            }
        };
        let weighted_avg = Averages {
            precision: w(|c| c.precision),
            recall: w(|c| c.recall),
            f1: w(|c| c.f1),
        };
        let correct = tp.values().sum();
        EvaluationReport {
            accuracy: ratio(correct, pairs.len()),
            classes,
            macro_avg,
            weighted_avg,
            total: pairs.len(),
            correct,
        }
    }

    /// Human-readable table in percentages.
    pub fn render_table(&self, title: &str) -> String {
        let width = self
            .classes
            .iter()
            .map(|c| c.label.chars().count())
            .chain([title.chars().count(), "Weighted average".len()])
            .max()
            .unwrap_or(0);
        let pct = |x: f64| format!("{:.2}%", 100.0 * x);
        let mut out = String::new();
        let _ = writeln!(out, "{title:<width$}  {:>9}  {:>9}  {:>9}", "Precision", "Recall", "F1-Score");
        let rule = "-".repeat(width + 33);
        let _ = writeln!(out, "{rule}");
        for c in &self.classes {
            let _ = writeln!(
                out,
                "{:<width$}  {:>9}  {:>9}  {:>9}",
                c.label,
                pct(c.precision),
                pct(c.recall),
                pct(c.f1)
            );
        }
        let _ = writeln!(out, "{rule}");
        let _ = writeln!(out, "{:<width$}  {:>9}  {:>9}  {:>9}", "Accuracy", "", "", pct(self.accuracy));
        for (name, a) in [("Macro average", self.macro_avg), ("Weighted average", self.weighted_avg)] {
            let _ = writeln!(
                out,
                "{name:<width$}  {:>9}  {:>9}  {:>9}",
                pct(a.precision),
                pct(a.recall),
                pct(a.f1)
            );
        }
        let _ = writeln!(out, "accuracy: {:.3} ({}/{})", self.accuracy, self.correct, self.total);
        out
    }

    /// One tab-separated record per metric: `row<TAB>precision<TAB>recall<TAB>f1<TAB>support`.
    pub fn render_machine(&self) -> String {
        let mut out = String::from("row\tprecision\trecall\tf1\tsupport\n");
        for c in &self.classes {
            let _ = writeln!(out, "{}\t{:.6}\t{:.6}\t{:.6}\t{}", c.label, c.precision, c.recall, c.f1, c.support);
        }
        let _ = writeln!(out, "accuracy\t\t\t{:.6}\t{}", self.accuracy, self.total);
        let _ = writeln!(
            out,
            "macro_avg\t{:.6}\t{:.6}\t{:.6}\t{}",
            self.macro_avg.precision, self.macro_avg.recall, self.macro_avg.f1, self.total
        );
        let _ = writeln!(
            out,
            "weighted_avg\t{:.6}\t{:.6}\t{:.6}\t{}",
            self.weighted_avg.precision, self.weighted_avg.recall, self.weighted_avg.f1, self.total
        );
        out
    }
}

/// Classifies every held-out text and scores the predictions. Rows follow
/// `row_order` when given, else the model's label order.
pub fn evaluate<T: Scalar>(
    model: &CentroidModel<T>,
    held_out: &[(String, String)],
    store: &EmbeddingStore<T>,
    row_order: Option<&[String]>,
) -> Result<EvaluationReport, ComprehensionError> {
    let mut pairs = Vec::with_capacity(held_out.len());
    for (text, truth) in held_out {
        if !model.centroids.contains_key(truth) {
            return Err(ComprehensionError::UnknownLabel(truth.clone()));
        }
        let (pred, _) = classify_intent(text, model, store)?;
        pairs.push((truth.clone(), pred));
    }
    let labels: Vec<String> = match row_order {
        Some(order) => order.to_vec(),
        None => model.labels().map(str::to_owned).collect(),
    };
    Ok(EvaluationReport::from_predictions(&labels, &pairs))
}
