#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use bento_core::{
    MetricDef, ParamSpec, ParamValue, ParameterSchema, PhaseContext, Registry, RunContext, Task, TaskDescriptor,
    TaskKind, TestCase,
};

pub type Trace = Arc<Mutex<Vec<String>>>;

/// Task that records every lifecycle call and can be told to fail tests.
pub struct StubTask {
    descriptor: TaskDescriptor,
    trace: Trace,
    fail_tests: Vec<u64>,
    pub panic_tests: Vec<u64>,
}

impl StubTask {
    pub fn new(name: &str, schema: Vec<ParamSpec>, trace: Trace) -> Self {
        Self {
            descriptor: TaskDescriptor {
                name: name.to_string(),
                schema: ParameterSchema::new(schema).unwrap(),
                metrics: vec![
                    MetricDef::summary("value", "value", "u"),
                    MetricDef::rate("throughput", "ops_done", 1.0, "ops/s"),
                    MetricDef::percentile("p50", "latency_ns", 0.5, "ns"),
                    MetricDef::percentile("p99", "latency_ns", 0.99, "ns"),
                    MetricDef::rate("bandwidth", "bytes_done", 1.0, "bytes/s"),
                ],
                kind: TaskKind::Builtin,
            },
            trace,
            fail_tests: Vec::new(),
            panic_tests: Vec::new(),
        }
    }

    pub fn failing(mut self, ids: &[u64]) -> Self {
        self.fail_tests = ids.to_vec();
        self
    }

    fn log(&self, event: String) {
        self.trace.lock().unwrap().push(format!("{}:{}", self.descriptor.name, event));
    }
}

impl Task for StubTask {
    fn descriptor(&self) -> &TaskDescriptor {
        &self.descriptor
    }

    fn prepare(&mut self, ctx: &mut PhaseContext, _tests: &[TestCase]) -> anyhow::Result<()> {
        self.log("prepare".into());
        let dir = ctx.ensure_task_dir()?;
        std::fs::write(dir.join("prepared.dat"), b"state")?;
        Ok(())
    }

    fn run(&mut self, ctx: &mut RunContext<'_>) -> anyhow::Result<()> {
        let id = ctx.test.test_id;
        self.log(format!("run{id}"));
        if self.panic_tests.contains(&id) {
            panic!("stub panic in test {id}");
        }
        if self.fail_tests.contains(&id) {
            anyhow::bail!("injected failure in test {id}");
        }
        let mut total = 0.0;
        for v in ctx.test.assignment.values() {
            if let ParamValue::Int(i) = v {
                ctx.record("value", *i as f64, "u")?;
                total += *i as f64;
            }
        }
        ctx.record("ops_done", total, "ops")?;
        ctx.record("bytes_done", total * 8.0, "bytes")?;
        ctx.record_series("latency_ns", (1..=100).map(|i| i as f64), "ns")?;
        ctx.record("elapsed_ns", 1e9, "ns")?;
        Ok(())
    }

    fn report(&mut self, ctx: &mut PhaseContext, tests: &[TestCase]) -> anyhow::Result<Vec<bento_core::ReportRow>> {
        self.log("report".into());
        Ok(bento_core::metrics::aggregate_task(ctx.workspace(), &self.descriptor, tests))
    }

    fn clean(&mut self, _ctx: &mut PhaseContext) -> anyhow::Result<()> {
        self.log("clean".into());
        Ok(())
    }
}

/// Registry with stand-ins for the two tasks of the reference box.
pub fn reference_registry(trace: Trace) -> Registry {
    let mut reg = Registry::new();
    reg.register(Box::new(StubTask::new(
        "net_tcp",
        vec![
            ParamSpec::size("data_size", 1, 1 << 20).alias("message_size"),
            ParamSpec::int("threads", 1, 64).alias("connections").default_value(ParamValue::Int(1)),
            ParamSpec::int("queue_depth", 1, 128).default_value(ParamValue::Int(1)),
        ],
        trace.clone(),
    )))
    .unwrap();
    reg.register(Box::new(StubTask::new(
        "pred_pushdown",
        vec![ParamSpec::int("dpu_cores", 1, 64).default_value(ParamValue::Int(1))],
        trace,
    )))
    .unwrap();
    reg
}

pub const REFERENCE_BOX: &str = r#"{
  "tasks": [
    {
      "task_name": "net_tcp",
      "parameters": {"data_size": [8, 8192], "threads": [1, 2, 4, 8]},
      "metrics": ["p50", "p99", "bandwidth"]
    },
    {
      "task_name": "pred_pushdown",
      "parameters": {"dpu_cores": [1, 2, 4]},
      "metrics": ["throughput"]
    }
  ]
}"#;

pub fn fixture_plugins() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/plugins")
}

/// Sorted relative paths plus file contents of everything under `dir`.
pub fn dir_digest(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        let Ok(entries) = std::fs::read_dir(dir) else { return };
        for e in entries.flatten() {
            let p = e.path();
            let rel = p.strip_prefix(root).unwrap().to_path_buf();
            if p.is_dir() {
                out.push((rel, Vec::new()));
                walk(root, &p, out);
            } else {
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
