//! External plugin tasks.
//!
//! A plugin is a directory holding a `manifest.json` and one executable per
//! lifecycle phase:
//!
//! ```json
//! {"name": "echo",
//!  "parameters": [{"name": "x", "kind": "integer"}],
//!  "metrics": ["echo"],
//!  "entry_points": {"prepare": "prepare", "run": "run", "clean": "clean"}}
//! ```
//!
//! Each phase runs as a child process whose only argument is the path of a
//! JSON control file `{phase, params, metrics, output_path}`. During `run` the
//! plugin writes one JSON sample per line to `output_path`, in the same format
//! as the harness's `samples.jsonl`. Exit status 0 means success. `report` is
//! optional; without it the generic aggregator is used.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::expand::TestCase;
use crate::metrics::aggregate::{aggregate_task, derive_row};
use crate::metrics::report::ReportRow;
use crate::metrics::sample::{read_samples, MetricSample, SampleLogError};
use crate::params::{ParamKind, ParamSpec, ParamValue, ParameterSchema};
use crate::task::{MetricDef, PhaseContext, RunContext, Task, TaskDescriptor, TaskKind};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(3600);
const STDERR_TAIL: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Prepare,
    Run,
    Report,
    Clean,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Prepare => "prepare",
            Phase::Run => "run",
            Phase::Report => "report",
            Phase::Clean => "clean",
        })
    }
}

/// Parameter declaration in a manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamDecl {
    pub name: String,
    /// `integer`, `float`, `size`, `string`, `bool` or `ratio`.
    pub kind: String,
    /// Allowed values; for `string` this makes the parameter an enumeration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Value>,
    #[serde(default)]
    pub required: bool,
}

impl ParamDecl {
    fn to_spec(&self) -> Result<ParamSpec, String> {
        let strings = || -> Result<Vec<String>, String> {
            self.values
                .iter()
                .flatten()
                .map(|v| {
                    v.as_str().map(String::from).ok_or_else(|| format!("{}: enum values must be strings", self.name))
                })
                .collect()
        };
        let kind = match self.kind.as_str() {
            "integer" => {
                let allowed = match &self.values {
                    Some(vals) => Some(
                        vals.iter()
                            .map(|v| v.as_i64().ok_or_else(|| format!("{}: values must be integers", self.name)))
                            .collect::<Result<Vec<_>, _>>()?,
                    ),
                    None => None,
                };
                ParamKind::Integer {
                    min: self.min.map(|m| m as i64).unwrap_or(i64::MIN),
                    max: self.max.map(|m| m as i64).unwrap_or(i64::MAX),
                    allowed,
                }
            }
            "float" => ParamKind::Float { min: self.min.unwrap_or(f64::MIN), max: self.max.unwrap_or(f64::MAX) },
            "size" => ParamKind::Size {
                min: self.min.map(|m| m as u64).unwrap_or(0),
                max: self.max.map(|m| m as u64).unwrap_or(i64::MAX as u64),
            },
            "string" | "enum" if self.values.is_some() => ParamKind::Enum { values: strings()? },
            "string" | "text" => ParamKind::Text,
            "bool" => ParamKind::Bool,
            "ratio" => ParamKind::Ratio,
            other => return Err(format!("{}: unknown kind {other:?}", self.name)),
        };
        let mut spec = ParamSpec::new(self.name.clone(), kind);
        spec.required = self.required;
        if let Some(raw) = &self.default {
            spec.default = Some(spec.validate(raw).map_err(|e| format!("{}: default {e}", self.name))?);
        }
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryPoints {
    pub prepare: String,
    pub run: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
    pub clean: String,
}

/// A parsed and checked plugin manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PluginManifest {
    pub name: String,
    #[serde(default)]
    pub parameters: Vec<ParamDecl>,
    pub metrics: Vec<String>,
    pub entry_points: EntryPoints,
    /// Per-phase timeout; one hour when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<u64>,
    /// Directory the manifest was loaded from.
    #[serde(skip)]
    pub dir: PathBuf,
}

impl PluginManifest {
    pub fn entry_point(&self, phase: Phase) -> Option<PathBuf> {
        let file = match phase {
            Phase::Prepare => Some(&self.entry_points.prepare),
            Phase::Run => Some(&self.entry_points.run),
            Phase::Report => self.entry_points.report.as_ref(),
            Phase::Clean => Some(&self.entry_points.clean),
        };
        file.map(|f| self.dir.join(f))
    }

    pub fn schema(&self) -> Result<ParameterSchema, String> {
        let specs = self.parameters.iter().map(ParamDecl::to_spec).collect::<Result<Vec<_>, _>>()?;
        ParameterSchema::new(specs).map_err(|e| e.to_string())
    }

    pub fn timeout(&self) -> Duration {
        self.timeout_secs.map(Duration::from_secs).unwrap_or(DEFAULT_TIMEOUT)
    }

    /// Loads `dir/manifest.json` and checks the entry points.
    pub fn load(dir: &Path) -> Result<Self, String> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut manifest: PluginManifest =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        manifest.dir = dir.to_path_buf();
        if manifest.name.is_empty() {
            return Err(format!("{}: empty plugin name", path.display()));
        }
        if manifest.metrics.is_empty() {
            return Err(format!("{}: plugin declares no metrics", path.display()));
        }
        for phase in [Phase::Prepare, Phase::Run, Phase::Report, Phase::Clean] {
            if let Some(entry) = manifest.entry_point(phase) {
                if !is_executable(&entry) {
                    return Err(format!(
                        "{}: {phase} entry point {} missing or not executable",
                        manifest.name,
                        entry.display()
                    ));
                }
            }
        }
        manifest.schema().map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(manifest)
    }
}

#[cfg(unix)]
fn is_executable(path: &Path) -> bool {
    use std::os::unix::fs::PermissionsExt;
    fs::metadata(path).map(|m| m.is_file() && m.permissions().mode() & 0o111 != 0).unwrap_or(false)
}

#[cfg(not(unix))]
fn is_executable(path: &Path) -> bool {
    path.is_file()
}

#[derive(Debug, Error)]
pub enum PluginError {
    #[error("plugin name {0:?} clashes with another task")]
    DuplicateTask(String),
    #[error("plugin root {}: {source}", path.display())]
    Root { path: PathBuf, source: io::Error },
    #[error("plugin has no {0} entry point")]
    NoEntryPoint(Phase),
    #[error("spawning {}: {source}", path.display())]
    Spawn { path: PathBuf, source: io::Error },
    #[error("plugin exited with status {code}: {stderr}")]
    NonZeroExit { code: i32, stderr: String },
    #[error("plugin killed by a signal: {stderr}")]
    Killed { stderr: String },
    #[error("plugin timed out after {0:?}")]
    Timeout(Duration),
    #[error("malformed sample on line {line}: {reason}")]
    MalformedSample { line: usize, reason: String },
    #[error("plugin i/o: {0}")]
    Io(#[from] io::Error),
}

/// Result of a successful phase.
#[derive(Debug, Default)]
pub struct PhaseOutcome {
    /// Samples written to `output_path` (run and report phases).
    pub samples: Vec<MetricSample>,
    pub stderr_tail: String,
}

pub struct Discovery {
    pub plugins: Vec<PluginManifest>,
    /// One message per skipped directory.
    pub warnings: Vec<String>,
}

/// Scans the immediate subdirectories of `root` for plugin manifests.
///
/// Invalid plugin directories are skipped with a warning; a name clash with
/// `existing` or between plugins is an error.
pub fn discover_plugins(root: &Path, existing: &[String]) -> Result<Discovery, PluginError> {
    let entries = fs::read_dir(root).map_err(|source| PluginError::Root { path: root.into(), source })?;
    let mut dirs: Vec<PathBuf> = entries.filter_map(Result::ok).map(|e| e.path()).filter(|p| p.is_dir()).collect();
    dirs.sort();

    let mut names: BTreeSet<String> = existing.iter().cloned().collect();
    let mut plugins = Vec::new();
    let mut warnings = Vec::new();
    for dir in dirs {
        if !dir.join(MANIFEST_FILE).exists() {
            warnings.push(format!("{}: no {MANIFEST_FILE}, skipped", dir.display()));
            continue;
        }
        match PluginManifest::load(&dir) {
            Ok(manifest) => {
                if !names.insert(manifest.name.clone()) {
                    return Err(PluginError::DuplicateTask(manifest.name));
                }
                plugins.push(manifest);
            }
            Err(reason) => {
                log::warn!("skipping plugin: {reason}");
                warnings.push(reason);
            }
        }
    }
    Ok(Discovery { plugins, warnings })
}

#[derive(Serialize)]
struct ControlFile<'a> {
    phase: Phase,
    params: &'a BTreeMap<String, ParamValue>,
    metrics: &'a [String],
    output_path: &'a Path,
}

/// Runs one lifecycle phase of a plugin as a child process.
///
/// The control file and the phase's stdout are kept in `io_dir` as
/// `<phase>.control.json` and `<phase>.stdout`; samples are expected in
/// `<phase>.samples.jsonl` for test `run`s, `report.samples.jsonl` otherwise.
pub fn invoke_plugin_phase(
    manifest: &PluginManifest,
    phase: Phase,
    test: Option<&TestCase>,
    io_dir: &Path,
) -> Result<PhaseOutcome, PluginError> {
    let entry = manifest.entry_point(phase).ok_or(PluginError::NoEntryPoint(phase))?;
    fs::create_dir_all(io_dir)?;
    let output_path = io_dir.join(format!("{phase}.samples.jsonl"));
    let _ = fs::remove_file(&output_path);
    let empty = BTreeMap::new();
    let control = ControlFile {
        phase,
        params: test.map(|t| &t.assignment).unwrap_or(&empty),
        metrics: test.map(|t| t.metrics.as_slice()).unwrap_or(&manifest.metrics),
        output_path: &output_path,
    };
    let control_path = io_dir.join(format!("{phase}.control.json"));
    fs::write(&control_path, serde_json::to_vec_pretty(&control).map_err(io::Error::other)?)?;

    let stdout = File::create(io_dir.join(format!("{phase}.stdout")))?;
    let mut child = Command::new(&entry)
        .arg(&control_path)
        .current_dir(&manifest.dir)
        .stdin(Stdio::null())
        .stdout(stdout)
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|source| PluginError::Spawn { path: entry.clone(), source })?;

    let mut stderr_pipe = child.stderr.take().expect("stderr is piped");
    let stderr_reader = thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stderr_pipe.read_to_end(&mut buf);
        let start = buf.len().saturating_sub(STDERR_TAIL);
        String::from_utf8_lossy(&buf[start..]).trim().to_string()
    });

    let timeout = manifest.timeout();
    let started = Instant::now();
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break status;
        }
        if started.elapsed() >= timeout {
            let _ = child.kill();
            let _ = child.wait();
            return Err(PluginError::Timeout(timeout));
        }
        thread::sleep(Duration::from_millis(5));
    };
    let stderr_tail = stderr_reader.join().unwrap_or_default();
    if !status.success() {
        return Err(match status.code() {
            Some(code) => PluginError::NonZeroExit { code, stderr: stderr_tail },
            None => PluginError::Killed { stderr: stderr_tail },
        });
    }

    let samples = if output_path.exists() {
        read_samples(&output_path).map_err(|e| match e {
            SampleLogError::Io(e) => PluginError::Io(e),
            SampleLogError::Malformed { line, reason } => PluginError::MalformedSample { line, reason },
        })?
    } else {
        Vec::new()
    };
    Ok(PhaseOutcome { samples, stderr_tail })
}

/// Adapts a plugin directory to the [`Task`] trait.
pub struct PluginTask {
    manifest: PluginManifest,
    descriptor: TaskDescriptor,
}

impl PluginTask {
    /// `manifest` must have passed [`PluginManifest::load`].
    pub fn new(manifest: PluginManifest) -> Self {
        let descriptor = TaskDescriptor {
            name: manifest.name.clone(),
            schema: manifest.schema().expect("manifest validated at load"),
            metrics: manifest.metrics.iter().map(|m| MetricDef::summary(m, m, "")).collect(),
            kind: TaskKind::Plugin,
        };
        Self { manifest, descriptor }
    }

    pub fn manifest(&self) -> &PluginManifest {
        &self.manifest
    }

    pub fn set_timeout(&mut self, timeout: Duration) {
        self.manifest.timeout_secs = Some(timeout.as_secs().max(1));
    }
}

impl Task for PluginTask {
    fn descriptor(&self) -> &TaskDescriptor {
        &self.descriptor
    }

    fn prepare(&mut self, ctx: &mut PhaseContext, _tests: &[TestCase]) -> anyhow::Result<()> {
        let dir = ctx.ensure_task_dir()?.to_path_buf();
        invoke_plugin_phase(&self.manifest, Phase::Prepare, None, &dir)?;
        Ok(())
    }

    fn run(&mut self, ctx: &mut RunContext<'_>) -> anyhow::Result<()> {
        let dir = ctx.test_dir().to_path_buf();
        let outcome = invoke_plugin_phase(&self.manifest, Phase::Run, Some(ctx.test), &dir)?;
        for sample in outcome.samples {
            ctx.record_sample(sample)?;
        }
        Ok(())
    }

    fn report(&mut self, ctx: &mut PhaseContext, tests: &[TestCase]) -> anyhow::Result<Vec<ReportRow>> {
        if self.manifest.entry_points.report.is_none() {
            return Ok(aggregate_task(ctx.workspace(), &self.descriptor, tests));
        }
        let dir = ctx.ensure_task_dir()?.to_path_buf();
        let outcome = invoke_plugin_phase(&self.manifest, Phase::Report, None, &dir)?;
        let mut by_test: BTreeMap<u64, Vec<MetricSample>> = BTreeMap::new();
        for sample in outcome.samples {
            by_test.entry(sample.test_id).or_default().push(sample);
        }
        let mut rows = Vec::new();
        for test in tests {
            let samples = by_test.get(&test.test_id).map(Vec::as_slice).unwrap_or(&[]);
            for m in &test.metrics {
                if let Some(def) = self.descriptor.metric(m) {
                    rows.push(derive_row(def, samples, &self.descriptor.name, test));
                }
            }
        }
        Ok(rows)
    }

    fn clean(&mut self, ctx: &mut PhaseContext) -> anyhow::Result<()> {
        let dir = ctx.ensure_task_dir()?.to_path_buf();
        invoke_plugin_phase(&self.manifest, Phase::Clean, None, &dir)?;
        Ok(())
    }
}
