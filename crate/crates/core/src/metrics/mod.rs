//! Confusion matrices and imbalance-aware classification scores.
//!
//! Accuracy alone is misleading on skewed label distributions, so every
//! evaluation reports per-class precision/recall/F1 plus both the macro
//! (unweighted) and support-weighted F1 averages, with zero-denominator
//! cases scored as 0 and flagged rather than silently dropped. All score
//! arithmetic runs in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A square count matrix with rows indexed by true class and columns by
/// predicted class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    /// Empty matrix over a fixed label set.
    pub fn new(labels: &[String]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Evaluation("confusion matrix needs at least one class".into()));
        }
        Ok(ConfusionMatrix { labels: labels.to_vec(), counts: vec![0; labels.len() * labels.len()] })
    }

    /// Tally paired true/predicted class indices.
    pub fn from_pairs(true_labels: &[usize], predicted: &[usize], labels: &[String]) -> Result<Self> {
        if true_labels.len() != predicted.len() {
            return Err(Error::Evaluation(format!(
                "{} true labels but {} predictions",
                true_labels.len(),
                predicted.len()
            )));
        }
        let mut cm = Self::new(labels)?;
        for (&t, &p) in true_labels.iter().zip(predicted) {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    /// Rebuild from row-major counts (e.g. a report read back from disk).
    pub fn from_rows(rows: &[Vec<u64>], labels: &[String]) -> Result<Self> {
        let c = labels.len();
        if rows.len() != c || rows.iter().any(|r| r.len() != c) {
            return Err(Error::Evaluation(format!(
                "count rows do not form a {c}x{c} matrix"
            )));
        }
        let mut cm = Self::new(labels)?;
        cm.counts = rows.iter().flatten().copied().collect();
        Ok(cm)
    }

    /// Add one observation.
    pub fn record(&mut self, true_class: usize, predicted: usize) -> Result<()> {
        let c = self.labels.len();
        if true_class >= c || predicted >= c {
            return Err(Error::Label(format!(
                "class pair ({true_class}, {predicted}) outside 0..{c}"
            )));
        }
        self.counts[true_class * c + predicted] += 1;
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn count(&self, true_class: usize, predicted: usize) -> u64 {
        self.counts[true_class * self.labels.len() + predicted]
    }

    /// Total number of observations.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Number of true members of a class (row sum).
    pub fn support(&self, class: usize) -> u64 {
        let c = self.labels.len();
        self.counts[class * c..(class + 1) * c].iter().sum()
    }

    /// Row-major copy of the counts.
    pub fn rows(&self) -> Vec<Vec<u64>> {
        let c = self.labels.len();
        (0..c).map(|r| self.counts[r * c..(r + 1) * c].to_vec()).collect()
    }

    /// Rows rescaled to sum to one. A class with no true members keeps an
    /// all-zero row (callers can detect this via [`Self::support`]).
    pub fn normalized_rows(&self) -> Vec<Vec<f64>> {
        let c = self.labels.len();
        (0..c)
            .map(|r| {
                let s = self.support(r);
                self.counts[r * c..(r + 1) * c]
                    .iter()
                    .map(|&v| if s == 0 { 0.0 } else { v as f64 / s as f64 })
                    .collect()
            })
            .collect()
    }

    /// CSV rendering: a `true\pred` header row of labels, then one row of
    /// counts per true class.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (r, label) in self.labels.iter().enumerate() {
            out.push_str(label);
            for p in 0..self.labels.len() {
                out.push_str(&format!(",{}", self.count(r, p)));
            }
            out.push('\n');
        }
        out
    }
}

/// Precision/recall/F1 for one class. When a denominator is zero the score
/// is 0.0 and the matching `*_defined` flag is false.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub label: String,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_defined: bool,
    pub recall_defined: bool,
}

/// The aggregate score block of an evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub f1_weighted: f64,
}

/// Compute the full score suite from a confusion matrix.
///
/// Macro averages are unweighted means over every class in the label set
/// (zero-denominator classes contribute their flagged 0.0); the weighted F1
/// weights each class by its share of the true examples.
pub fn scores(cm: &ConfusionMatrix) -> Result<(MetricSummary, Vec<ClassScores>)> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Evaluation("scores of an empty confusion matrix".into()));
    }
    let c = cm.num_classes();
    let mut per_class = Vec::with_capacity(c);
    let mut correct = 0u64;
    for k in 0..c {
        correct += cm.count(k, k);
        let tp = cm.count(k, k);
        let support = cm.support(k);
        let predicted: u64 = (0..c).map(|r| cm.count(r, k)).sum();
        let precision_defined = predicted > 0;
        let recall_defined = support > 0;
        let precision = if precision_defined { tp as f64 / predicted as f64 } else { 0.0 };
        let recall = if recall_defined { tp as f64 / support as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push(ClassScores {
            label: cm.labels()[k].clone(),
            support,
            precision,
            recall,
            f1,
            precision_defined,
            recall_defined,
        });
    }
    let cf = c as f64;
    let summary = MetricSummary {
        accuracy: correct as f64 / total as f64,
        precision_macro: per_class.iter().map(|s| s.precision).sum::<f64>() / cf,
        recall_macro: per_class.iter().map(|s| s.recall).sum::<f64>() / cf,
        f1_macro: per_class.iter().map(|s| s.f1).sum::<f64>() / cf,
        f1_weighted: per_class
            .iter()
            .map(|s| s.f1 * s.support as f64 / total as f64)
            .sum::<f64>(),
    };
    Ok((summary, per_class))
}

/// A complete evaluation artifact for one task under one model label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub model: String,
    pub metrics: MetricSummary,
    pub per_class: Vec<ClassScores>,
    pub confusion: Vec<Vec<u64>>,
    pub normalized: Vec<Vec<f64>>,
}

impl EvalReport {
    pub fn build(task: &str, model: &str, cm: &ConfusionMatrix) -> Result<Self> {
        let (metrics, per_class) = scores(cm)?;
        Ok(EvalReport {
            task: task.to_string(),
            model: model.to_string(),
            metrics,
            per_class,
            confusion: cm.rows(),
            normalized: cm.normalized_rows(),
        })
    }

    /// Fixed-width plain-text rendering of the report.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("task: {}    model: {}\n\n", self.task, self.model));
        out.push_str(&format!("accuracy         {:.4}\n", self.metrics.accuracy));
        out.push_str(&format!("precision_macro  {:.4}\n", self.metrics.precision_macro));
        out.push_str(&format!("recall_macro     {:.4}\n", self.metrics.recall_macro));
        out.push_str(&format!("f1_macro         {:.4}\n", self.metrics.f1_macro));
        out.push_str(&format!("f1_weighted      {:.4}\n\n", self.metrics.f1_weighted));
        let w = self.per_class.iter().map(|s| s.label.len()).max().unwrap_or(5).max(5);
        out.push_str(&format!(
            "{:w$}  {:>8}  {:>9}  {:>7}  {:>7}\n",
            "class", "support", "precision", "recall", "f1",
        ));
        for s in &self.per_class {
            let mut flags = String::new();
            if !s.precision_defined {
                flags.push_str(" [no predictions]");
            }
            if !s.recall_defined {
                flags.push_str(" [no true members]");
            }
            out.push_str(&format!(
                "{:w$}  {:>8}  {:>9.4}  {:>7.4}  {:>7.4}{}\n",
                s.label, s.support, s.precision, s.recall, s.f1, flags,
            ));
        }
        out.push_str("\nconfusion (rows = true class):\n");
        for (label, row) in self.per_class.iter().map(|s| &s.label).zip(&self.confusion) {
            out.push_str(&format!("{:w$}  {:?}\n", label, row));
        }
        out
    }
}

/// One metric row of a model comparison: the value under each model and, for
/// every model after the first, its delta against the first (baseline).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub values: Vec<f64>,
    pub deltas: Vec<f64>,
}

/// Side-by-side comparison of evaluation reports for one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub task: String,
    pub models: Vec<String>,
    pub metrics: Vec<ComparisonRow>,
    pub per_class_f1: Vec<ComparisonRow>,
}

impl Comparison {
    /// Fixed-width plain-text rendering.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("task: {}\n\n", self.task));
        let name_w = self
            .metrics
            .iter()
            .chain(&self.per_class_f1)
            .map(|r| r.name.len())
            .max()
            .unwrap_or(6)
            .max(16);
        let col_w = self.models.iter().map(|m| m.len()).max().unwrap_or(8).max(9);
        out.push_str(&format!("{:name_w$}", "metric"));
        for m in &self.models {
            out.push_str(&format!("  {:>col_w$}", m));
        }
        for m in self.models.iter().skip(1) {
            out.push_str(&format!("  {:>col_w$}", format!("Δ {m}")));
        }
        out.push('\n');
        let render = |rows: &[ComparisonRow], out: &mut String| {
            for row in rows {
                out.push_str(&format!("{:name_w$}", row.name));
                for v in &row.values {
                    out.push_str(&format!("  {:>col_w$.4}", v));
                }
                for d in &row.deltas {
                    out.push_str(&format!("  {:>+col_w$.4}", d));
                }
                out.push('\n');
            }
        };
        render(&self.metrics, &mut out);
        out.push_str("\nper-class F1:\n");
        render(&self.per_class_f1, &mut out);
        out
    }
}

/// Compare reports of the same task side by side. The first report is the
/// baseline for all delta columns. Reports covering different tasks cannot
/// be compared.
pub fn comparison_report(reports: &[EvalReport]) -> Result<Comparison> {
    let Some(first) = reports.first() else {
        return Err(Error::Validation("comparison needs at least one report".into()));
    };
    if let Some(other) = reports.iter().find(|r| r.task != first.task) {
        return Err(Error::Validation(format!(
            "reports cover different tasks: {:?} vs {:?}",
            first.task, other.task
        )));
    }
    let class_labels: Vec<String> = first.per_class.iter().map(|s| s.label.clone()).collect();
    for r in reports {
        let labels: Vec<String> = r.per_class.iter().map(|s| s.label.clone()).collect();
        if labels != class_labels {
            return Err(Error::Validation(format!(
                "reports disagree on the label set for task {:?}",
                first.task
            )));
        }
    }
    let row = |name: &str, pick: &dyn Fn(&EvalReport) -> f64| {
        let values: Vec<f64> = reports.iter().map(|r| pick(r)).collect();
        let deltas = values.iter().skip(1).map(|v| v - values[0]).collect();
        ComparisonRow { name: name.to_string(), values, deltas }
    };
    let metrics = vec![
        row("accuracy", &|r| r.metrics.accuracy),
        row("precision_macro", &|r| r.metrics.precision_macro),
        row("recall_macro", &|r| r.metrics.recall_macro),
        row("f1_macro", &|r| r.metrics.f1_macro),
        row("f1_weighted", &|r| r.metrics.f1_weighted),
    ];
    let per_class_f1 = class_labels
        .iter()
        .enumerate()
        .map(|(k, label)| row(label, &|r| r.per_class[k].f1))
        .collect();
    Ok(Comparison {
        task: first.task.clone(),
        models: reports.iter().map(|r| r.model.clone()).collect(),
        metrics,
        per_class_f1,
    })
}
