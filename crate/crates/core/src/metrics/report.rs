//! Run reports and their JSON, CSV and table renderings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::params::ParamValue;
use crate::Summary;

/// Version of the `report.json` layout.
pub const REPORT_SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    /// Metric computed.
    Ok,
    /// Test ran but produced no samples for this metric.
    Empty,
    /// The test (or the task's prepare/report phase) failed.
    Failed,
    /// The test's sample log is missing or unreadable.
    Missing,
}

/// One `(task, test, metric)` result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: String,
    pub test_id: u64,
    pub params: BTreeMap<String, ParamValue>,
    pub metric: String,
    pub status: RowStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub unit: String,
    /// Headline value of the metric.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    /// Statistics of the underlying sample series.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<Summary>,
    /// Rate for throughput-class metrics, in `unit`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub throughput: Option<f64>,
    /// Raw sum of the underlying series (counter metrics).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total: Option<f64>,
}

impl ReportRow {
    pub fn failed(
        task: &str,
        test_id: u64,
        params: BTreeMap<String, ParamValue>,
        metric: &str,
        unit: &str,
        error: String,
    ) -> Self {
        Self {
            task: task.to_string(),
            test_id,
            params,
            metric: metric.to_string(),
            status: RowStatus::Failed,
            error: Some(error),
            unit: unit.to_string(),
            value: None,
            summary: None,
            throughput: None,
            total: None,
        }
    }

    pub fn is_failure(&self) -> bool {
        matches!(self.status, RowStatus::Failed | RowStatus::Missing)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub harness_version: String,
    pub host: String,
    pub started_at_unix_ms: u64,
    pub finished_at_unix_ms: u64,
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

impl ReportMetadata {
    pub fn start_now() -> Self {
        Self {
            harness_version: crate::HARNESS_VERSION.to_string(),
            host: host_name(),
            started_at_unix_ms: unix_ms(),
            finished_at_unix_ms: 0,
            notes: BTreeMap::new(),
        }
    }
}

pub fn unix_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

fn host_name() -> String {
    std::env::var("HOSTNAME")
        .ok()
        .filter(|h| !h.is_empty())
        .or_else(|| std::fs::read_to_string("/proc/sys/kernel/hostname").ok())
        .map(|h| h.trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: u32,
    pub metadata: ReportMetadata,
    pub rows: Vec<ReportRow>,
}

impl RunReport {
    pub fn new(metadata: ReportMetadata, rows: Vec<ReportRow>) -> Self {
        Self { schema: REPORT_SCHEMA, metadata, rows }
    }

    /// Tests with at least one failed or missing row.
    pub fn failed_tests(&self) -> BTreeSet<(String, u64)> {
        self.rows.iter().filter(|r| r.is_failure()).map(|r| (r.task.clone(), r.test_id)).collect()
    }

    pub fn has_failures(&self) -> bool {
        self.rows.iter().any(ReportRow::is_failure)
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn write_json(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, render_report(self, ReportFormat::Json))
    }

    pub fn read_json(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_json(&text)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown format {other:?} (expected table, csv or json)")),
        }
    }
}

pub fn render_report(report: &RunReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => render_json(report),
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Table => render_table(report),
    }
}

fn render_json(report: &RunReport) -> String {
    let mut text = serde_json::to_string_pretty(report).expect("reports contain only finite numbers");
    text.push('\n');
    text
}

fn param_names(report: &RunReport) -> Vec<String> {
    let names: BTreeSet<&String> = report.rows.iter().flat_map(|r| r.params.keys()).collect();
    names.into_iter().cloned().collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn render_csv(report: &RunReport) -> String {
    let params = param_names(report);
    let mut out = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["task".to_string(), "test_id".to_string()];
    header.extend(params.iter().map(|p| format!("param:{p}")));
    header.extend(["metric", "count", "mean", "min", "max", "p50", "p99", "throughput", "unit"].map(String::from));
    out.write_record(&header).expect("writing to memory");
    for row in &report.rows {
        let mut rec = vec![row.task.clone(), row.test_id.to_string()];
        rec.extend(params.iter().map(|p| row.params.get(p).map(|v| v.to_string()).unwrap_or_default()));
        rec.push(row.metric.clone());
        match &row.summary {
            Some(s) => rec.extend([
                s.count.to_string(),
                s.mean.to_string(),
                s.min.to_string(),
                s.max.to_string(),
                s.p50.to_string(),
                s.p99.to_string(),
            ]),
            None => rec.extend(std::iter::repeat_n(String::new(), 6)),
        }
        rec.push(opt(row.throughput));
        rec.push(row.unit.clone());
        out.write_record(&rec).expect("writing to memory");
    }
    String::from_utf8(out.into_inner().expect("flushing to memory")).expect("csv output is UTF-8")
}

fn human(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else if v.abs() >= 1e6 || v.abs() < 1e-3 {
        format!("{v:.4e}")
    } else {
        format!("{v:.4}")
    }
}

fn render_table(report: &RunReport) -> String {
    let header = ["task", "test", "params", "metric", "status", "value", "unit", "count", "p50", "p99"];
    let mut rows: Vec<Vec<String>> = Vec::with_capacity(report.rows.len());
    for row in &report.rows {
        let params = row.params.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ");
        let status = match row.status {
            RowStatus::Ok => "ok",
            RowStatus::Empty => "empty",
            RowStatus::Failed => "FAILED",
            RowStatus::Missing => "MISSING",
        };
        let (count, p50, p99) = match &row.summary {
            Some(s) => (s.count.to_string(), human(s.p50), human(s.p99)),
            None => (String::new(), String::new(), String::new()),
        };
        rows.push(vec![
            row.task.clone(),
            row.test_id.to_string(),
            params,
            row.metric.clone(),
            status.to_string(),
            row.value.map(human).unwrap_or_else(|| "-".into()),
            row.unit.clone(),
            count,
            p50,
            p99,
        ]);
    }
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(&mut out, &header.map(String::from));
    line(&mut out, &widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>());
    for row in &rows {
        line(&mut out, row);
    }
    for row in report.rows.iter().filter(|r| r.error.is_some()) {
        let _ = writeln!(out, "! {}#{} {}: {}", row.task, row.test_id, row.metric, row.error.as_deref().unwrap_or(""));
    }
    out
}
