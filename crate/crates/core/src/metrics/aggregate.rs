//! Generic report phase: turns per-test `samples.jsonl` logs into report rows.

use std::path::Path;

use crate::boxfile::MeasurementBox;
use crate::expand::{expand_box, TestCase};
use crate::metrics::report::{ReportMetadata, ReportRow, RowStatus, RunReport};
use crate::metrics::sample::{read_samples, MetricSample, ELAPSED_NS};
use crate::metrics::stats::{compute_throughput, percentile, summarize};
use crate::registry::Registry;
use crate::task::{Derivation, MetricDef, TaskDescriptor};

/// File a failed test leaves in its directory; its content is the error.
pub const ERROR_FILE: &str = "error.txt";
pub const SAMPLES_FILE: &str = "samples.jsonl";

pub fn test_dir(workspace: &Path, task: &str, test_id: u64) -> std::path::PathBuf {
    workspace.join(task).join(test_id.to_string())
}

/// Aggregates every test of one task.
pub fn aggregate_task(workspace: &Path, descriptor: &TaskDescriptor, tests: &[TestCase]) -> Vec<ReportRow> {
    tests
        .iter()
        .flat_map(|test| aggregate_test(&test_dir(workspace, &descriptor.name, test.test_id), descriptor, test))
        .collect()
}

/// Rows for one test, one per requested metric.
pub fn aggregate_test(dir: &Path, descriptor: &TaskDescriptor, test: &TestCase) -> Vec<ReportRow> {
    let unit_of = |m: &str| descriptor.metric(m).map(|d| d.unit.clone()).unwrap_or_default();
    let flagged = |status: RowStatus, error: String| -> Vec<ReportRow> {
        test.metrics
            .iter()
            .map(|m| {
                let mut row = ReportRow::failed(
                    &descriptor.name,
                    test.test_id,
                    test.assignment.clone(),
                    m,
                    &unit_of(m),
                    error.clone(),
                );
                row.status = status;
                row
            })
            .collect()
    };

    if let Ok(error) = std::fs::read_to_string(dir.join(ERROR_FILE)) {
        return flagged(RowStatus::Failed, error.trim().to_string());
    }
    let samples = match read_samples(&dir.join(SAMPLES_FILE)) {
        Ok(s) => s,
        Err(e) => return flagged(RowStatus::Missing, format!("missing samples for test {}: {e}", test.test_id)),
    };
    test.metrics
        .iter()
        .map(|m| match descriptor.metric(m) {
            Some(def) => derive_row(def, &samples, &descriptor.name, test),
            None => {
                let mut row = ReportRow::failed(
                    &descriptor.name,
                    test.test_id,
                    test.assignment.clone(),
                    m,
                    "",
                    format!("task cannot produce metric {m:?}"),
                );
                row.status = RowStatus::Missing;
                row
            }
        })
        .collect()
}

/// Computes one metric of one test from its raw samples.
pub fn derive_row(def: &MetricDef, samples: &[MetricSample], task: &str, test: &TestCase) -> ReportRow {
    let mut row = ReportRow {
        task: task.to_string(),
        test_id: test.test_id,
        params: test.assignment.clone(),
        metric: def.name.clone(),
        status: RowStatus::Ok,
        error: None,
        unit: def.unit.clone(),
        value: None,
        summary: None,
        throughput: None,
        total: None,
    };
    let series: Vec<f64> = samples.iter().filter(|s| s.metric == def.derivation.source()).map(|s| s.value).collect();
    row.summary = summarize(&series).ok();
    if row.unit.is_empty() {
        if let Some(first) = samples.iter().find(|s| s.metric == def.derivation.source()) {
            row.unit = first.unit.clone();
        }
    }
    match &def.derivation {
        Derivation::Percentile { q, .. } => {
            row.value = percentile(&series, *q).ok();
        }
        Derivation::Mean { .. } | Derivation::Summary { .. } => {
            row.value = row.summary.as_ref().map(|s| s.mean);
        }
        Derivation::Sum { .. } => {
            let total: f64 = series.iter().sum();
            row.total = Some(total);
            row.value = Some(total);
        }
        Derivation::Rate { scale, .. } => {
            let total: f64 = series.iter().sum();
            row.total = Some(total);
            let elapsed = samples.iter().filter(|s| s.metric == ELAPSED_NS).map(|s| s.value as u64).max();
            match elapsed.map(|ns| compute_throughput(total, ns, "")) {
                Some(Ok(t)) => {
                    let rate = rate_with_scale(t.value, *scale);
                    row.throughput = Some(rate);
                    row.value = Some(rate);
                }
                Some(Err(e)) => {
                    row.status = RowStatus::Empty;
                    row.error = Some(e.to_string());
                }
                None => {
                    row.status = RowStatus::Empty;
                    row.error = Some(format!("no {ELAPSED_NS} sample"));
                }
            }
            return row;
        }
    }
    if row.value.is_none() {
        row.status = RowStatus::Empty;
    }
    row
}

/// Applies a display scale (e.g. bytes/s to MiB/s) to a base-unit rate.
pub fn rate_with_scale(rate: f64, scale: f64) -> f64 {
    if scale == 1.0 {
        rate
    } else {
        rate * scale
    }
}

/// Rebuilds a whole report from the logs of a finished run.
pub fn aggregate(workspace: &Path, mbox: &MeasurementBox, registry: &Registry) -> RunReport {
    let tests = expand_box(mbox, |name| registry.descriptor(name).map(|d| d.schema.clone()).unwrap_or_default());
    let mut rows = Vec::new();
    for test in &tests {
        if let Some(desc) = registry.descriptor(&test.task_name) {
            rows.extend(aggregate_test(&test_dir(workspace, &test.task_name, test.test_id), desc, test));
        }
    }
    RunReport::new(ReportMetadata::start_now(), rows)
}
