//! Core of the bento benchmark harness.
//!
//! A benchmark job is described by a *measurement box*: a JSON document that
//! lists tasks, the parameter values to sweep for each task and the metrics to
//! collect. The harness expands every task invocation into the cross product of
//! its parameter lists, then drives each task through its lifecycle:
//!
//! 1. `prepare` once, lazily, before the first test of the task,
//! 2. `run` once per test, sequentially, logging samples to the workspace,
//! 3. `report` once, aggregating the logs into report rows.
//!
//! The fourth phase, `clean`, is never run as part of a box execution. It is an
//! explicit, separate step ([`runner::clean`]) so that state created by
//! `prepare` can be inspected after a run.
//!
//! Tasks are either built in (implemented in Rust against the [`Task`] trait)
//! or plugins: a directory with a `manifest.json` and one executable per
//! lifecycle phase (see [`plugin`]).

pub mod boxfile;
pub mod expand;
pub mod metrics;
pub mod params;
pub mod plugin;
pub mod registry;
pub mod rng;
pub mod runner;
pub mod task;

pub use boxfile::{parse_box, BoxError, MeasurementBox, TaskInvocation};
pub use expand::{expand_box, expand_tests, TestCase};
pub use metrics::report::{render_report, ReportFormat, ReportRow, RowStatus, RunReport};
pub use metrics::sample::MetricSample;
pub use metrics::stats::{compute_throughput, percentile, summarize, SummaryStatistics, Throughput};
pub use params::{ParamKind, ParamSpec, ParamValue, ParameterSchema};
pub use registry::Registry;
pub use runner::{clean, execute_box, CleanError, RunError};
pub use task::{Derivation, MetricDef, PhaseContext, RunContext, Task, TaskDescriptor, TaskKind};

/// Summary over floating-point observations (throughputs, plugin values).
pub type Summary = SummaryStatistics<f64>;

/// Summary over integer nanosecond latencies.
pub type LatencySummary = SummaryStatistics<u64>;

/// Version string stamped into report metadata.
pub const HARNESS_VERSION: &str = env!("CARGO_PKG_VERSION");

/// 64-bit FNV-1a over a byte slice.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
