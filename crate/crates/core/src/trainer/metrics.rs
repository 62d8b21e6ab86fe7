//! Single-label multiclass metrics and the report table.

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::data::{Emotion, Label, Opinion};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub micro_f1: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub macro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub per_class: Vec<ClassMetrics>,
}

/// Metrics of both heads on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub opinion: TaskMetrics,
    pub emotion: TaskMetrics,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Micro metrics pool true/false positives over all classes; macro metrics
/// average per-class values over every class of the schema, counting an
/// undefined value (zero denominator) as 0.
pub fn metrics(predictions: &[usize], gold: &[usize], labels: &[&str]) -> Result<TaskMetrics, TrainError> {
    if predictions.len() != gold.len() {
        return Err(TrainError::LengthMismatch(predictions.len(), gold.len()));
    }
    let c = labels.len();
    if let Some(&bad) = predictions.iter().chain(gold).find(|&&l| l >= c) {
        return Err(TrainError::LabelOutOfRange { label: bad, classes: c });
    }
    let mut tp = vec![0usize; c];
    let mut pred_count = vec![0usize; c];
    let mut gold_count = vec![0usize; c];
    for (&p, &g) in predictions.iter().zip(gold) {
        pred_count[p] += 1;
        gold_count[g] += 1;
        if p == g {
            tp[p] += 1;
        }
    }
    let per_class: Vec<ClassMetrics> = (0..c)
        .map(|k| {
            let precision = ratio(tp[k], pred_count[k]);
            let recall = ratio(tp[k], gold_count[k]);
            ClassMetrics {
                label: labels[k].to_string(),
                precision,
                recall,
                f1: f1(precision, recall),
                support: gold_count[k],
            }
        })
        .collect();
    let total_tp: usize = tp.iter().sum();
    let micro_precision = ratio(total_tp, predictions.len());
    let micro_recall = ratio(total_tp, gold.len());
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / c as f64;
    Ok(TaskMetrics {
        micro_f1: f1(micro_precision, micro_recall),
        micro_precision,
        micro_recall,
        macro_f1: mean(|m| m.f1),
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        per_class,
    })
}

impl MetricsReport {
    pub fn from_predictions(
        opinion_pred: &[usize],
        opinion_gold: &[usize],
        emotion_pred: &[usize],
        emotion_gold: &[usize],
    ) -> Result<Self, TrainError> {
        if opinion_gold.len() != emotion_gold.len() {
            return Err(TrainError::LengthMismatch(opinion_gold.len(), emotion_gold.len()));
        }
        Ok(Self {
            n: opinion_gold.len(),
            opinion: metrics(opinion_pred, opinion_gold, &Opinion::names())?,
            emotion: metrics(emotion_pred, emotion_gold, &Emotion::names())?,
        })
    }

    /// Every scalar in a fixed order (`n` excluded); inverse of [`Self::with_values`].
    pub fn values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for t in [&self.opinion, &self.emotion] {
            out.extend([
                t.micro_f1,
                t.micro_precision,
                t.micro_recall,
                t.macro_f1,
                t.macro_precision,
                t.macro_recall,
            ]);
            for c in &t.per_class {
                out.extend([c.precision, c.recall, c.f1, c.support as f64]);
            }
        }
        out
    }

    /// A copy with every scalar replaced, in [`Self::values`] order.
    pub fn with_values(&self, values: &[f64]) -> Self {
        let mut it = values.iter().copied();
        let mut next = || it.next().expect("value count matches the report layout");
        let mut out = self.clone();
        for t in [&mut out.opinion, &mut out.emotion] {
            t.micro_f1 = next();
            t.micro_precision = next();
            t.micro_recall = next();
            t.macro_f1 = next();
            t.macro_precision = next();
            t.macro_recall = next();
            for c in &mut t.per_class {
                c.precision = next();
                c.recall = next();
                c.f1 = next();
                c.support = next().round() as usize;
            }
        }
        out
    }
}

/// One row of a results table: a method with its mean and optional spread.
#[derive(Debug, Clone)]
pub struct TableRow<'a> {
    pub method: String,
    pub mean: &'a MetricsReport,
    pub stdev: Option<&'a MetricsReport>,
}

/// Plain-text table with micro F1 and macro F1/recall/precision per task, in percent.
pub fn format_table(rows: &[TableRow<'_>]) -> String {
    let width = rows.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    out.push_str(&format!(
        "{:<width$} | {:^49} | {:^49}\n",
        "",
        "Opinion",
        "Emotion",
    ));
    let cols = format!(
        "{:>10} {:>12} {:>12} {:>12}",
        "Micro F1", "Macro F1", "Recall", "Precision"
    );
    out.push_str(&format!("{:<width$} | {cols:>49} | {cols:>49}\n", "Method"));
    out.push_str(&format!("{}\n", "-".repeat(width + 104)));
    for row in rows {
        let cell = |m: fn(&TaskMetrics) -> f64, task: fn(&MetricsReport) -> &TaskMetrics, w: usize| {
            let v = 100.0 * m(task(row.mean));
            match row.stdev {
                Some(s) => format!("{:>w$}", format!("{v:.2}±{:.2}", 100.0 * m(task(s)))),
                None => format!("{v:>w$.2}"),
            }
        };
        let task_cells = |task: fn(&MetricsReport) -> &TaskMetrics| {
            format!(
                "{} {} {} {}",
                cell(|t| t.micro_f1, task, 10),
                cell(|t| t.macro_f1, task, 12),
                cell(|t| t.macro_recall, task, 12),
                cell(|t| t.macro_precision, task, 12)
            )
        };
        out.push_str(&format!(
            "{:<width$} | {:>49} | {:>49}\n",
            row.method,
            task_cells(|r| &r.opinion),
            task_cells(|r| &r.emotion)
        ));
    }
    out
}
