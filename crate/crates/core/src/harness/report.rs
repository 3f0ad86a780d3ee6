use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{ClassStats, ConfusionMatrix, Metrics};
use super::pipeline::Prediction;
use crate::corpus::{Scheme, Split};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreDelta {
    pub base_entries: usize,
    pub added: usize,
    pub scored: usize,
    pub added_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: Split,
    pub scheme: Scheme,
    /// Mean over runs.
    pub metrics: Metrics,
    /// Per-class statistics averaged over runs (support from the first run).
    pub per_class: Vec<ClassStats>,
    pub parse_failures: u64,
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub per_run: Vec<Metrics>,
    /// Summed over runs.
    pub confusion: ConfusionMatrix,
    /// Predictions of the first run.
    pub predictions: Vec<Prediction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub store_delta: Option<StoreDelta>,
    pub manifest: serde_json::Value,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Aligned `Acc | M-F1 | W-F1` table, one row per report, in percent.
pub fn format_table(reports: &[EvalReport]) -> String {
    let header = ["Scenario", "Acc", "M-F1", "W-F1"];
    let rows: Vec<[String; 4]> = reports
        .iter()
        .map(|r| {
            [
                format!("{} ({})", r.scenario.as_str().to_uppercase(), r.scheme),
                format!("{:.2}", 100.0 * r.metrics.acc),
                format!("{:.2}", 100.0 * r.metrics.m_f1),
                format!("{:.2}", 100.0 * r.metrics.w_f1),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |cells: [&str; 4], out: &mut String| {
        let _ = writeln!(
            out,
            "{:<w0$} | {:>w1$} | {:>w2$} | {:>w3$}",
            cells[0],
            cells[1],
            cells[2],
            cells[3],
            w0 = widths[0],
            w1 = widths[1],
            w2 = widths[2],
            w3 = widths[3]
        );
    };
    line(header, &mut out);
    let _ = writeln!(out, "{}", widths.map(|w| "-".repeat(w)).join("-|-"));
    for row in &rows {
        line([&row[0], &row[1], &row[2], &row[3]], &mut out);
    }
    out
}
