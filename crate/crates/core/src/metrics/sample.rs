//! Raw observations and their `samples.jsonl` log format.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the sample holding the timed window of a test, in nanoseconds.
pub const ELAPSED_NS: &str = "elapsed_ns";

/// One observation emitted by a task run.
///
/// Serialized as a single JSON object per line in `samples.jsonl`. `unit`,
/// `test_id` and `wall_time` may be omitted by plugins; the harness fills the
/// last two in when it copies plugin output into the test log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub metric: String,
    pub value: f64,
    #[serde(default)]
    pub unit: String,
    #[serde(default)]
    pub test_id: u64,
    /// Monotonic offset from the start of the test, in nanoseconds.
    #[serde(default)]
    pub wall_time: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum SampleError {
    #[error("sample {metric:?} has non-finite value")]
    NonFinite { metric: String },
    #[error("sample {metric:?} must be non-negative, got {value}")]
    Negative { metric: String, value: f64 },
}

impl MetricSample {
    pub fn new(metric: impl Into<String>, value: f64, unit: impl Into<String>) -> Self {
        Self { metric: metric.into(), value, unit: unit.into(), test_id: 0, wall_time: 0 }
    }

    /// Latencies, durations and counters can never be negative.
    pub fn is_non_negative_kind(metric: &str) -> bool {
        metric.ends_with("_ns") || metric.ends_with("_done") || metric.contains("bytes")
    }

    pub fn check(&self) -> Result<(), SampleError> {
        if !self.value.is_finite() {
            return Err(SampleError::NonFinite { metric: self.metric.clone() });
        }
        if self.value < 0.0 && Self::is_non_negative_kind(&self.metric) {
            return Err(SampleError::Negative { metric: self.metric.clone(), value: self.value });
        }
        Ok(())
    }
}

/// Appends samples to a `samples.jsonl` file, one LF-terminated object per line.
pub struct SampleWriter {
    out: BufWriter<File>,
    written: u64,
}

impl SampleWriter {
    pub fn create(path: &Path) -> io::Result<Self> {
        Ok(Self { out: BufWriter::new(File::create(path)?), written: 0 })
    }

    pub fn write(&mut self, sample: &MetricSample) -> io::Result<()> {
        sample.check().map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        serde_json::to_writer(&mut self.out, sample)?;
        self.out.write_all(b"\n")?;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> u64 {
        self.written
    }

    pub fn finish(mut self) -> io::Result<u64> {
        self.out.flush()?;
        Ok(self.written)
    }
}

#[derive(Debug, Error)]
pub enum SampleLogError {
    #[error("reading sample log: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

/// Reads every sample of a log. Blank lines are ignored; line numbers are 1-based.
pub fn read_samples(path: &Path) -> Result<Vec<MetricSample>, SampleLogError> {
    let reader = BufReader::new(File::open(path)?);
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: MetricSample = serde_json::from_str(&line)
            .map_err(|e| SampleLogError::Malformed { line: idx + 1, reason: e.to_string() })?;
        sample.check().map_err(|e| SampleLogError::Malformed { line: idx + 1, reason: e.to_string() })?;
        samples.push(sample);
    }
    Ok(samples)
}
