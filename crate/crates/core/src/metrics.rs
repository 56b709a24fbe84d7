//! Segmentation metrics from a confusion matrix.
//!
//! Per class `c` with `tp`, `fp`, `fn` counted exactly as integers:
//!
//! | metric    | definition           |
//! |-----------|----------------------|
//! | precision | `tp / (tp + fp)`     |
//! | recall    | `tp / (tp + fn)`     |
//! | IoU       | `tp / (tp + fp + fn)`|
//! | accuracy  | same as recall       |
//!
//! Per-class accuracy follows the usual convention behind "mean accuracy":
//! the fraction of class-`c` points labelled `c`, i.e. recall.
//!
//! A `0 / 0` metric is undefined (`None`) and left out of its mean. A class
//! with support but no correct predictions scores 0 and counts. Overall
//! accuracy is `trace / total`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{ClassId, ClassMap};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no points to evaluate")]
    Empty,
    #[error("{truth} true labels but {predicted} predictions")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("class id {id} at position {position} out of range for {num_classes} classes")]
    ClassOutOfRange { position: usize, id: ClassId, num_classes: usize },
    #[error("confusion matrices have {0} and {1} classes")]
    ClassCount(usize, usize),
    #[error("cannot parse report: {0}")]
    Parse(String),
}

/// `counts[t * C + p]` = points of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(num_classes: usize) -> Self {
        Self { num_classes, counts: vec![0; num_classes * num_classes] }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Self {
        let c = rows.len();
        assert!(rows.iter().all(|r| r.len() == c), "confusion matrix must be square");
        Self { num_classes: c, counts: rows.concat() }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, truth: ClassId, predicted: ClassId) -> u64 {
        self.counts[truth as usize * self.num_classes + predicted as usize]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.num_classes.max(1)).map(<[u64]>::to_vec).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|c| self.counts[c * self.num_classes + c]).sum()
    }

    /// Element-wise sum, for combining partial matrices.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), MetricsError> {
        if other.num_classes != self.num_classes {
            return Err(MetricsError::ClassCount(self.num_classes, other.num_classes));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

pub fn confusion(truth: &[ClassId], predicted: &[ClassId], num_classes: usize) -> Result<ConfusionMatrix, MetricsError> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch { truth: truth.len(), predicted: predicted.len() });
    }
    if truth.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut cm = ConfusionMatrix::zeros(num_classes);
    for (position, (&t, &p)) in truth.iter().zip(predicted).enumerate() {
        for id in [t, p] {
            if id as usize >= num_classes {
                return Err(MetricsError::ClassOutOfRange { position, id, num_classes });
            }
        }
        cm.counts[t as usize * num_classes + p as usize] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: ClassId,
    pub name: String,
    /// Points whose true class is this one.
    pub support: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub iou: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub total: u64,
    pub overall_accuracy: f64,
    pub mean_accuracy: Option<f64>,
    pub mean_precision: Option<f64>,
    pub mean_recall: Option<f64>,
    pub mean_iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<ClassMetrics>,
    pub summary: Summary,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn report(cm: &ConfusionMatrix) -> Result<MetricsReport, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::Empty);
    }
    let c = cm.num_classes;
    let classes: Vec<ClassMetrics> = (0..c as ClassId)
        .map(|k| {
            let tp = cm.get(k, k);
            let support: u64 = (0..c as ClassId).map(|p| cm.get(k, p)).sum();
            let predicted: u64 = (0..c as ClassId).map(|t| cm.get(t, k)).sum();
            let fp = predicted - tp;
            let fn_ = support - tp;
            let recall = ratio(tp, tp + fn_);
            ClassMetrics {
                class: k,
                name: format!("class{k}"),
                support,
                precision: ratio(tp, tp + fp),
                recall,
                iou: ratio(tp, tp + fp + fn_),
                accuracy: recall,
            }
        })
        .collect();
    let summary = Summary {
        total,
        overall_accuracy: cm.trace() as f64 / total as f64,
        mean_accuracy: mean(classes.iter().map(|m| m.accuracy)),
        mean_precision: mean(classes.iter().map(|m| m.precision)),
        mean_recall: mean(classes.iter().map(|m| m.recall)),
        mean_iou: mean(classes.iter().map(|m| m.iou)),
    };
    Ok(MetricsReport { classes, summary })
}

impl MetricsReport {
    /// Replaces the placeholder class names with those of `map`.
    pub fn with_names(mut self, map: &ClassMap) -> Self {
        for m in &mut self.classes {
            if let Some(name) = map.name(m.class) {
                m.name = name.to_string();
            }
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    HumanTable,
    JsonLines,
    Csv,
}

pub fn render(report: &MetricsReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::HumanTable => render_table(report),
        ReportFormat::JsonLines => render_json_lines(report),
        ReportFormat::Csv => render_csv(report),
    }
}

fn human(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

fn render_table(r: &MetricsReport) -> String {
    let name_w = r.classes.iter().map(|m| m.name.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<name_w$}  {:>10}  {:>9}  {:>9}  {:>9}  {:>9}",
        "class", "support", "precision", "recall", "iou", "accuracy"
    );
    for m in &r.classes {
        let _ = writeln!(
            out,
            "{:<name_w$}  {:>10}  {:>9}  {:>9}  {:>9}  {:>9}",
            m.name,
            m.support,
            human(m.precision),
            human(m.recall),
            human(m.iou),
            human(m.accuracy)
        );
    }
    let s = &r.summary;
    let _ = writeln!(
        out,
        "{:<name_w$}  {:>10}  {:>9}  {:>9}  {:>9}  {:>9}",
        "mean",
        s.total,
        human(s.mean_precision),
        human(s.mean_recall),
        human(s.mean_iou),
        human(s.mean_accuracy)
    );
    let _ = writeln!(out, "overall accuracy: {:.4}", s.overall_accuracy);
    out
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Class(ClassMetrics),
    Summary(Summary),
}

fn render_json_lines(r: &MetricsReport) -> String {
    let mut out = String::new();
    for m in &r.classes {
        out.push_str(&serde_json::to_string(&Line::Class(m.clone())).unwrap());
        out.push('\n');
    }
    out.push_str(&serde_json::to_string(&Line::Summary(r.summary.clone())).unwrap());
    out.push('\n');
    out
}

pub fn parse_json_lines(text: &str) -> Result<MetricsReport, MetricsError> {
    let mut classes = Vec::new();
    let mut summary = None;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str(line).map_err(|e| MetricsError::Parse(e.to_string()))? {
            Line::Class(m) => classes.push(m),
            Line::Summary(s) => summary = Some(s),
        }
    }
    let summary = summary.ok_or_else(|| MetricsError::Parse("missing summary line".into()))?;
    Ok(MetricsReport { classes, summary })
}

const CSV_HEADER: [&str; 8] = ["class", "name", "support", "precision", "recall", "iou", "accuracy", "overall_accuracy"];

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "null".to_string(), |x| x.to_string())
}

fn render_csv(r: &MetricsReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).unwrap();
    for m in &r.classes {
        w.write_record([
            m.class.to_string(),
            m.name.clone(),
            m.support.to_string(),
            cell(m.precision),
            cell(m.recall),
            cell(m.iou),
            cell(m.accuracy),
            String::new(),
        ])
        .unwrap();
    }
    let s = &r.summary;
    w.write_record([
        "mean".to_string(),
        String::new(),
        s.total.to_string(),
        cell(s.mean_precision),
        cell(s.mean_recall),
        cell(s.mean_iou),
        cell(s.mean_accuracy),
        s.overall_accuracy.to_string(),
    ])
    .unwrap();
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

pub fn parse_csv(text: &str) -> Result<MetricsReport, MetricsError> {
    let perr = |e: &dyn std::fmt::Display| MetricsError::Parse(e.to_string());
    let num = |s: &str| -> Result<Option<f64>, MetricsError> {
        if s == "null" {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|e| perr(&e))
        }
    };
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut classes = Vec::new();
    let mut summary = None;
    for rec in reader.records() {
        let rec = rec.map_err(|e| perr(&e))?;
        if rec.len() != CSV_HEADER.len() {
            return Err(MetricsError::Parse(format!("expected {} columns, got {}", CSV_HEADER.len(), rec.len())));
        }
        let support: u64 = rec[2].parse().map_err(|e| perr(&e))?;
        if &rec[0] == "mean" {
            summary = Some(Summary {
                total: support,
                mean_precision: num(&rec[3])?,
                mean_recall: num(&rec[4])?,
                mean_iou: num(&rec[5])?,
                mean_accuracy: num(&rec[6])?,
                overall_accuracy: rec[7].parse().map_err(|e| perr(&e))?,
            });
        } else {
            classes.push(ClassMetrics {
                class: rec[0].parse().map_err(|e| perr(&e))?,
                name: rec[1].to_string(),
                support,
                precision: num(&rec[3])?,
                recall: num(&rec[4])?,
                iou: num(&rec[5])?,
                accuracy: num(&rec[6])?,
            });
        }
    }
    let summary = summary.ok_or_else(|| MetricsError::Parse("missing mean row".into()))?;
    Ok(MetricsReport { classes, summary })
}
