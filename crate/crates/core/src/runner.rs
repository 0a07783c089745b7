//! Box execution and the explicit clean step.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use log::{info, warn};
use thiserror::Error;

use crate::boxfile::MeasurementBox;
use crate::expand::{expand_box, TestCase};
use crate::metrics::aggregate::{test_dir, ERROR_FILE, SAMPLES_FILE};
use crate::metrics::report::{unix_ms, ReportMetadata, ReportRow, RowStatus, RunReport};
use crate::metrics::sample::SampleWriter;
use crate::registry::Registry;
use crate::task::{PhaseContext, RunContext, Task};

/// File name of the report written at the top of the workspace.
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("workspace: {0}")]
    Workspace(#[from] io::Error),
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".to_string())
}

/// Runs `f`, turning both errors and panics into a message.
fn guarded<T>(f: impl FnOnce() -> anyhow::Result<T>) -> Result<T, String> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(e)) => Err(format!("{e:#}")),
        Err(payload) => Err(format!("panicked: {}", panic_message(payload))),
    }
}

/// Executes every test of a box and writes `<workspace>/report.json`.
///
/// Per task: `prepare` runs once, immediately before its first test; tests run
/// sequentially in test-id order, each logging to
/// `<workspace>/<task>/<test_id>/samples.jsonl`; `report` runs once after the
/// last test. Invocations of the same task are grouped in first-appearance
/// order. A failing test is recorded and execution continues. `clean` is never
/// called here.
pub fn execute_box(mbox: &MeasurementBox, workspace: &Path, registry: &mut Registry) -> Result<RunReport, RunError> {
    for name in mbox.task_names() {
        if !registry.contains(name) {
            return Err(RunError::UnknownTask(name.to_string()));
        }
    }
    fs::create_dir_all(workspace)?;
    let tests = expand_box(mbox, |name| registry.descriptor(name).map(|d| d.schema.clone()).unwrap_or_default());

    let mut metadata = ReportMetadata::start_now();
    let mut rows = Vec::new();
    for name in mbox.task_names() {
        let task_tests: Vec<TestCase> = tests.iter().filter(|t| t.task_name == name).cloned().collect();
        let task = registry.task_mut(name).expect("checked above");
        let (task_rows, notes) = run_task(task, workspace, &task_tests)?;
        rows.extend(task_rows);
        metadata.notes.extend(notes);
    }
    metadata.finished_at_unix_ms = unix_ms();
    let report = RunReport::new(metadata, rows);
    report.write_json(&workspace.join(REPORT_FILE))?;
    Ok(report)
}

fn run_task(
    task: &mut dyn Task,
    workspace: &Path,
    tests: &[TestCase],
) -> Result<(Vec<ReportRow>, BTreeMap<String, String>), RunError> {
    let name = task.descriptor().name.clone();
    let mut ctx = PhaseContext::new(workspace, &name);
    ctx.ensure_task_dir()?;

    info!("{name}: prepare");
    if let Err(e) = guarded(|| task.prepare(&mut ctx, tests)) {
        warn!("{name}: prepare failed: {e}");
        let rows = flag_all(task, tests, &format!("prepare failed: {e}"));
        return Ok((rows, ctx.take_notes()));
    }

    let mut failures: BTreeMap<u64, String> = BTreeMap::new();
    let mut notes = BTreeMap::new();
    for test in tests {
        info!("{name}: run test {}", test.test_id);
        let dir = test_dir(workspace, &name, test.test_id);
        fs::create_dir_all(&dir)?;
        let _ = fs::remove_file(dir.join(ERROR_FILE));
        let writer = SampleWriter::create(&dir.join(SAMPLES_FILE))?;
        let outcome = guarded(|| {
            let mut run_ctx = RunContext::new(test, dir.clone(), writer, &mut notes);
            let result = task.run(&mut run_ctx);
            let flushed = run_ctx.finish();
            result?;
            flushed?;
            Ok(())
        });
        if let Err(e) = outcome {
            warn!("{name}: test {} failed: {e}", test.test_id);
            fs::write(dir.join(ERROR_FILE), format!("{e}\n"))?;
            failures.insert(test.test_id, e);
        }
    }

    info!("{name}: report");
    let reported = guarded(|| task.report(&mut ctx, tests));
    let mut all_notes = ctx.take_notes();
    all_notes.extend(notes);
    let rows = match reported {
        Ok(rows) => normalize_rows(task, tests, rows, &failures),
        Err(e) => {
            warn!("{name}: report failed: {e}");
            flag_all(task, tests, &format!("report failed: {e}"))
        }
    };
    Ok((rows, all_notes))
}

fn flag_all(task: &dyn Task, tests: &[TestCase], error: &str) -> Vec<ReportRow> {
    let desc = task.descriptor();
    tests
        .iter()
        .flat_map(|t| {
            t.metrics.iter().map(move |m| {
                let unit = desc.metric(m).map(|d| d.unit.as_str()).unwrap_or("");
                ReportRow::failed(&desc.name, t.test_id, t.assignment.clone(), m, unit, error.to_string())
            })
        })
        .collect()
}

/// Ensures exactly one row per requested `(test, metric)` pair, in test order,
/// with run failures flagged whatever the task's report phase produced.
fn normalize_rows(
    task: &dyn Task,
    tests: &[TestCase],
    rows: Vec<ReportRow>,
    failures: &BTreeMap<u64, String>,
) -> Vec<ReportRow> {
    let desc = task.descriptor();
    let mut by_key: BTreeMap<(u64, String), ReportRow> =
        rows.into_iter().map(|r| ((r.test_id, r.metric.clone()), r)).collect();
    let mut out = Vec::new();
    for test in tests {
        for metric in &test.metrics {
            let unit = desc.metric(metric).map(|d| d.unit.as_str()).unwrap_or("");
            let row = match (failures.get(&test.test_id), by_key.remove(&(test.test_id, metric.clone()))) {
                (Some(err), _) => {
                    ReportRow::failed(&desc.name, test.test_id, test.assignment.clone(), metric, unit, err.clone())
                }
                (None, Some(row)) => row,
                (None, None) => {
                    let mut row = ReportRow::failed(
                        &desc.name,
                        test.test_id,
                        test.assignment.clone(),
                        metric,
                        unit,
                        "report phase produced no row".into(),
                    );
                    row.status = RowStatus::Missing;
                    row
                }
            };
            out.push(row);
        }
    }
    out
}

#[derive(Debug, Error)]
pub enum CleanError {
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("clean failed for {}", .0.iter().map(|(t, e)| format!("{t}: {e}")).collect::<Vec<_>>().join("; "))]
    Failed(Vec<(String, String)>),
}

/// Runs the clean phase of each named task and removes its artifacts.
///
/// Removes everything `prepare`/`run` left under `<workspace>/<task>` plus any
/// registered external artifacts; the top-level report is kept. Idempotent:
/// cleaning a task that was never prepared, or twice, succeeds. Failures do not
/// stop the remaining tasks; they are reported together at the end.
pub fn clean(registry: &mut Registry, task_names: &[String], workspace: &Path) -> Result<(), CleanError> {
    if let Some(unknown) = task_names.iter().find(|n| !registry.contains(n)) {
        return Err(CleanError::UnknownTask(unknown.clone()));
    }
    let mut failures = Vec::new();
    for name in task_names {
        let task = registry.task_mut(name).expect("checked above");
        let mut ctx = PhaseContext::new(workspace, name);
        let mut errors = Vec::new();
        if let Err(e) = guarded(|| task.clean(&mut ctx)) {
            errors.push(e);
        }
        match ctx.artifacts() {
            Ok(paths) => {
                for path in paths {
                    if let Err(e) = remove_path(&path) {
                        errors.push(format!("{}: {e}", path.display()));
                    }
                }
            }
            Err(e) => errors.push(format!("reading artifact list: {e}")),
        }
        if let Err(e) = remove_path(ctx.task_dir()) {
            errors.push(format!("{}: {e}", ctx.task_dir().display()));
        }
        if !errors.is_empty() {
            failures.push((name.clone(), errors.join(", ")));
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CleanError::Failed(failures))
    }
}

fn remove_path(path: &Path) -> io::Result<()> {
    let result = match fs::symlink_metadata(path) {
        Ok(meta) if meta.is_dir() => fs::remove_dir_all(path),
        Ok(_) => fs::remove_file(path),
        Err(e) => Err(e),
    };
    match result {
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
        other => other,
    }
}
