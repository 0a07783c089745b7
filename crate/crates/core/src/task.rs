//! The task abstraction: four lifecycle entry points plus a descriptor.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::expand::TestCase;
use crate::metrics::aggregate::aggregate_task;
use crate::metrics::report::ReportRow;
use crate::metrics::sample::{MetricSample, SampleWriter};
use crate::params::ParameterSchema;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Builtin,
    Plugin,
}

/// How a requested metric is derived from the raw samples of a test.
#[derive(Clone, Debug, PartialEq)]
pub enum Derivation {
    /// Nearest-rank percentile of the series named `sample`.
    Percentile { sample: String, q: f64 },
    /// Arithmetic mean of the series.
    Mean { sample: String },
    /// Sum of the counter series divided by the test's elapsed time, times `scale`.
    Rate { counter: String, scale: f64 },
    /// Sum of the series.
    Sum { sample: String },
    /// Summary of the series with the mean as headline value.
    Summary { sample: String },
}

impl Derivation {
    /// Name of the sample series this metric is computed from.
    pub fn source(&self) -> &str {
        match self {
            Derivation::Percentile { sample, .. }
            | Derivation::Mean { sample }
            | Derivation::Sum { sample }
            | Derivation::Summary { sample } => sample,
            Derivation::Rate { counter, .. } => counter,
        }
    }
}

/// A metric identifier a task can produce.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricDef {
    pub name: String,
    pub derivation: Derivation,
    /// Unit of the headline value in the report.
    pub unit: String,
}

impl MetricDef {
    pub fn percentile(name: &str, sample: &str, q: f64, unit: &str) -> Self {
        Self::new(name, Derivation::Percentile { sample: sample.into(), q }, unit)
    }

    pub fn mean(name: &str, sample: &str, unit: &str) -> Self {
        Self::new(name, Derivation::Mean { sample: sample.into() }, unit)
    }

    pub fn rate(name: &str, counter: &str, scale: f64, unit: &str) -> Self {
        Self::new(name, Derivation::Rate { counter: counter.into(), scale }, unit)
    }

    pub fn sum(name: &str, sample: &str, unit: &str) -> Self {
        Self::new(name, Derivation::Sum { sample: sample.into() }, unit)
    }

    pub fn summary(name: &str, sample: &str, unit: &str) -> Self {
        Self::new(name, Derivation::Summary { sample: sample.into() }, unit)
    }

    fn new(name: &str, derivation: Derivation, unit: &str) -> Self {
        Self { name: name.into(), derivation, unit: unit.into() }
    }
}

/// Static description of a registered task.
#[derive(Clone, Debug)]
pub struct TaskDescriptor {
    pub name: String,
    pub schema: ParameterSchema,
    pub metrics: Vec<MetricDef>,
    pub kind: TaskKind,
}

impl TaskDescriptor {
    pub fn metric(&self, name: &str) -> Option<&MetricDef> {
        self.metrics.iter().find(|m| m.name == name)
    }
}

const ARTIFACTS_FILE: &str = "artifacts.json";

/// Context for the task-wide phases (`prepare`, `report`, `clean`).
pub struct PhaseContext {
    workspace: PathBuf,
    task_dir: PathBuf,
    notes: BTreeMap<String, String>,
}

impl PhaseContext {
    pub fn new(workspace: &Path, task: &str) -> Self {
        Self { workspace: workspace.to_path_buf(), task_dir: workspace.join(task), notes: BTreeMap::new() }
    }

    pub fn workspace(&self) -> &Path {
        &self.workspace
    }

    /// `<workspace>/<task>`; created on demand by [`PhaseContext::ensure_task_dir`].
    pub fn task_dir(&self) -> &Path {
        &self.task_dir
    }

    pub fn ensure_task_dir(&self) -> io::Result<&Path> {
        fs::create_dir_all(&self.task_dir)?;
        Ok(&self.task_dir)
    }

    /// Adds a key/value pair to the report metadata.
    pub fn note(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.notes.insert(key.into(), value.into());
    }

    pub fn take_notes(&mut self) -> BTreeMap<String, String> {
        std::mem::take(&mut self.notes)
    }

    /// Records a path created outside the task directory so `clean` can remove
    /// it, even from a later process.
    pub fn register_artifact(&self, path: &Path) -> io::Result<()> {
        self.ensure_task_dir()?;
        let mut list = self.artifacts()?;
        let path = path.to_path_buf();
        if !list.contains(&path) {
            list.push(path);
            let text = serde_json::to_string_pretty(&list).map_err(io::Error::other)?;
            fs::write(self.task_dir.join(ARTIFACTS_FILE), text)?;
        }
        Ok(())
    }

    pub fn artifacts(&self) -> io::Result<Vec<PathBuf>> {
        match fs::read_to_string(self.task_dir.join(ARTIFACTS_FILE)) {
            Ok(text) => serde_json::from_str(&text).map_err(io::Error::other),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(e),
        }
    }
}

/// Context handed to `run` for a single test.
pub struct RunContext<'a> {
    pub test: &'a TestCase,
    test_dir: PathBuf,
    writer: SampleWriter,
    started: Instant,
    notes: &'a mut BTreeMap<String, String>,
}

impl<'a> RunContext<'a> {
    pub fn new(
        test: &'a TestCase,
        test_dir: PathBuf,
        writer: SampleWriter,
        notes: &'a mut BTreeMap<String, String>,
    ) -> Self {
        Self { test, test_dir, writer, started: Instant::now(), notes }
    }

    /// `<workspace>/<task>/<test_id>`.
    pub fn test_dir(&self) -> &Path {
        &self.test_dir
    }

    /// Logs one sample stamped with this test's id and the current offset.
    pub fn record(&mut self, metric: &str, value: f64, unit: &str) -> io::Result<()> {
        let sample = MetricSample {
            metric: metric.to_string(),
            value,
            unit: unit.to_string(),
            test_id: self.test.test_id,
            wall_time: self.started.elapsed().as_nanos() as u64,
        };
        self.writer.write(&sample)
    }

    /// Logs a whole series, e.g. the latencies gathered by workers after they join.
    pub fn record_series<I>(&mut self, metric: &str, values: I, unit: &str) -> io::Result<()>
    where
        I: IntoIterator<Item = f64>,
    {
        let wall_time = self.started.elapsed().as_nanos() as u64;
        let mut sample = MetricSample {
            metric: metric.to_string(),
            value: 0.0,
            unit: unit.to_string(),
            test_id: self.test.test_id,
            wall_time,
        };
        for value in values {
            sample.value = value;
            self.writer.write(&sample)?;
        }
        Ok(())
    }

    /// Copies a sample produced elsewhere (a plugin), overriding its test id.
    pub fn record_sample(&mut self, mut sample: MetricSample) -> io::Result<()> {
        sample.test_id = self.test.test_id;
        self.writer.write(&sample)
    }

    pub fn note(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.notes.insert(key.into(), value.into());
    }

    pub fn finish(self) -> io::Result<u64> {
        self.writer.finish()
    }
}

/// A benchmark task.
///
/// The harness calls `prepare` once before the first test, `run` once per test
/// in test-id order and `report` once after the last test. `clean` is only
/// called by the explicit clean command and must succeed on a task that was
/// never prepared.
pub trait Task: Send {
    fn descriptor(&self) -> &TaskDescriptor;

    fn prepare(&mut self, ctx: &mut PhaseContext, tests: &[TestCase]) -> anyhow::Result<()>;

    fn run(&mut self, ctx: &mut RunContext<'_>) -> anyhow::Result<()>;

    /// Turns the logs of all tests into report rows. The default aggregates
    /// `samples.jsonl` according to the descriptor's metric definitions.
    fn report(&mut self, ctx: &mut PhaseContext, tests: &[TestCase]) -> anyhow::Result<Vec<ReportRow>> {
        Ok(aggregate_task(ctx.workspace(), self.descriptor(), tests))
    }

    fn clean(&mut self, ctx: &mut PhaseContext) -> anyhow::Result<()>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn artifacts_persist_across_contexts() {
        let ws = tempfile::tempdir().unwrap();
        let ctx = PhaseContext::new(ws.path(), "storage");
        ctx.register_artifact(Path::new("/tmp/a.dat")).unwrap();
        ctx.register_artifact(Path::new("/tmp/a.dat")).unwrap();
        ctx.register_artifact(Path::new("/tmp/b.dat")).unwrap();
        let again = PhaseContext::new(ws.path(), "storage");
        assert_eq!(again.artifacts().unwrap(), vec![PathBuf::from("/tmp/a.dat"), PathBuf::from("/tmp/b.dat")]);
        assert!(PhaseContext::new(ws.path(), "other").artifacts().unwrap().is_empty());
    }
}
