//! Table rendering for evaluation and benchmark results.
//!
//! Columns follow the usual results-table order (model, F1, IoU, precision,
//! recall, end-to-end latency, raw latency) with diagnostic extras appended.
//! Metrics print with 3 decimals, latencies with 1; absent values print `-`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const COLUMNS: [&str; 12] = [
    "Model",
    "F1-score",
    "IoU",
    "Precision",
    "Recall",
    "Latency (ms)",
    "Raw inference latency (ms)",
    "p50 (ms)",
    "p95 (ms)",
    "Samples",
    "mAP@50-95",
    "mAP@50",
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub f1: f64,
    /// Penalized IoU.
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    /// Mean end-to-end latency.
    pub latency_ms: Option<f64>,
    /// Mean forward-only latency.
    pub raw_latency_ms: Option<f64>,
    pub p50_ms: Option<f64>,
    pub p95_ms: Option<f64>,
    pub samples: Option<usize>,
    pub map_50_95: Option<f64>,
    pub map_50: Option<f64>,
}

impl ReportRow {
    pub fn cells(&self) -> [String; 12] {
        let metric = |v: f64| format!("{v:.3}");
        let opt = |v: Option<f64>, digits: usize| v.map_or_else(|| "-".to_string(), |v| format!("{v:.digits$}"));
        [
            self.model.clone(),
            metric(self.f1),
            metric(self.iou),
            metric(self.precision),
            metric(self.recall),
            opt(self.latency_ms, 1),
            opt(self.raw_latency_ms, 1),
            opt(self.p50_ms, 1),
            opt(self.p95_ms, 1),
            self.samples.map_or_else(|| "-".to_string(), |n| n.to_string()),
            opt(self.map_50_95, 3),
            opt(self.map_50, 3),
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    #[default]
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Self::Csv),
            "markdown" | "md" => Ok(Self::Markdown),
            _ => Err(format!("unknown report format {s:?} (expected csv or markdown)")),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Csv => "csv",
            Self::Markdown => "markdown",
        })
    }
}

fn markdown_line(cells: &[impl AsRef<str>]) -> String {
    let escaped: Vec<String> = cells.iter().map(|c| c.as_ref().replace('|', "\\|")).collect();
    format!("| {} |\n", escaped.join(" | "))
}

pub fn emit_report(report: &BenchReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(COLUMNS).expect("writing to memory");
            for row in &report.rows {
                w.write_record(row.cells()).expect("writing to memory");
            }
            String::from_utf8(w.into_inner().expect("flushing to memory")).expect("cells are UTF-8")
        }
        ReportFormat::Markdown => {
            let mut out = markdown_line(&COLUMNS);
            out.push_str(&markdown_line(&["---"; 12]));
            for row in &report.rows {
                out.push_str(&markdown_line(&row.cells()));
            }
            out
        }
    }
}
