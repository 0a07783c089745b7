//! Asynchronous file I/O latency and throughput.
//!
//! Asynchrony is emulated with a thread pool: each worker owns `queue_depth`
//! I/O threads and a submission loop that never has more than `queue_depth`
//! requests outstanding. Every operation lands in an op log with submit and
//! completion timestamps relative to the run start, so throughput and latency
//! can be recomputed from the log alone.

use std::fs::{File, OpenOptions};
use std::io::{self, Write as _};
use std::os::unix::fs::{FileExt, OpenOptionsExt};
use std::path::{Path, PathBuf};
use std::sync::{Barrier, OnceLock};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use bento_core::metrics::sample::ELAPSED_NS;
use bento_core::rng::XorShift64Star;
use bento_core::{
    MetricDef, ParamSpec, ParamValue, ParameterSchema, PhaseContext, RunContext, Task, TaskDescriptor, TaskKind,
    TestCase,
};
use crossbeam_channel::{bounded, unbounded};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::region;
use crate::util::{opt_str, opt_u64, req_bool, req_str, req_u64};

pub const ALIGN: usize = 4096;
pub const PREPARE_CHUNK: usize = 1 << 20;
pub const DEFAULT_FILE_SIZE: u64 = 4 << 30;
pub const MIN_AUTO_FILE_SIZE: u64 = 64 << 20;
pub const MIN_ACCESS: u64 = 8 << 10;
pub const MAX_ACCESS: u64 = 4 << 20;
pub const ENGINE: &str = "threadpool";
pub const OP_LOG_FILE: &str = "oplog.jsonl";

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("not enough free space under {path}: need {needed} bytes, {available} available")]
    InsufficientSpace { path: PathBuf, needed: u64, available: u64 },
    #[error("permission denied: {0}")]
    PermissionDenied(PathBuf),
    #[error("access size {access} exceeds file size {file}")]
    AccessSizeExceedsFile { access: u64, file: u64 },
    #[error("prepared file {path} is missing or shorter than {size} bytes")]
    NotPrepared { path: PathBuf, size: u64 },
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StorageError + '_ {
    move |source| match source.kind() {
        io::ErrorKind::PermissionDenied => StorageError::PermissionDenied(path.to_path_buf()),
        _ => StorageError::Io { path: path.to_path_buf(), source },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IoType {
    Read,
    Write,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IoPattern {
    Random,
    Sequential,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IoBudget {
    Duration(Duration),
    /// Operations per worker.
    Operations(u64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StorageParams {
    pub io_type: IoType,
    pub access_size: u64,
    pub pattern: IoPattern,
    pub queue_depth: usize,
    pub threads: usize,
    pub file_size: u64,
    pub target_path: PathBuf,
    pub budget: IoBudget,
    pub direct_io: bool,
    pub seed: u64,
}

impl StorageParams {
    /// `default_dir` is used when the test names no target path.
    pub fn from_test(test: &TestCase, default_dir: &Path) -> Result<Self> {
        let io_type = match req_str(test, "io_type")? {
            "read" => IoType::Read,
            "write" => IoType::Write,
            other => bail!("unknown io_type {other:?}"),
        };
        let pattern = match req_str(test, "pattern")? {
            "random" => IoPattern::Random,
            "sequential" => IoPattern::Sequential,
            other => bail!("unknown pattern {other:?}"),
        };
        let target_path = opt_str(test, "target_path")?.map(PathBuf::from).unwrap_or_else(|| default_dir.to_path_buf());
        let file_size = match opt_u64(test, "file_size")? {
            Some(n) => n,
            None => auto_file_size(free_space(&target_path).unwrap_or(0)),
        };
        let budget = match opt_u64(test, "operations")? {
            Some(n) => IoBudget::Operations(n),
            None => IoBudget::Duration(Duration::from_millis(req_u64(test, "duration_ms")?)),
        };
        Ok(Self {
            io_type,
            access_size: req_u64(test, "access_size")?,
            pattern,
            queue_depth: req_u64(test, "queue_depth")? as usize,
            threads: req_u64(test, "threads")? as usize,
            file_size,
            target_path,
            budget,
            direct_io: req_bool(test, "direct_io")?,
            seed: req_u64(test, "seed")?,
        })
    }

    pub fn file_path(&self) -> PathBuf {
        data_file(&self.target_path, self.file_size, self.seed)
    }

    pub fn validate(&self) -> Result<(), StorageError> {
        if self.file_size == 0 {
            return Err(StorageError::InvalidParameter("file_size must be positive".into()));
        }
        if self.access_size > self.file_size {
            return Err(StorageError::AccessSizeExceedsFile { access: self.access_size, file: self.file_size });
        }
        if self.access_size == 0 || !self.access_size.is_multiple_of(ALIGN as u64) {
            return Err(StorageError::InvalidParameter(format!("access_size must be a multiple of {ALIGN}")));
        }
        if self.queue_depth == 0 || self.threads == 0 {
            return Err(StorageError::InvalidParameter("queue_depth and threads must be at least 1".into()));
        }
        let blocks = self.file_size / self.access_size;
        if self.pattern == IoPattern::Sequential && (self.threads as u64) > blocks {
            return Err(StorageError::InvalidParameter(format!(
                "{} sequential workers need at least as many blocks, file has {blocks}",
                self.threads
            )));
        }
        Ok(())
    }
}

/// Name of the prepared data file inside `dir`.
pub fn data_file(dir: &Path, size: u64, seed: u64) -> PathBuf {
    dir.join(format!("bento-storage-{size}-{seed}.dat"))
}

/// Default file size for a device with `free` bytes available.
pub fn auto_file_size(free: u64) -> u64 {
    let quarter = (free / 4) & !(PREPARE_CHUNK as u64 - 1);
    DEFAULT_FILE_SIZE.min(quarter.max(MIN_AUTO_FILE_SIZE))
}

pub fn free_space(path: &Path) -> io::Result<u64> {
    use std::os::unix::ffi::OsStrExt;
    let c = std::ffi::CString::new(path.as_os_str().as_bytes())
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
    // SAFETY: statvfs only writes into the zeroed struct we pass.
    unsafe {
        let mut st: libc::statvfs = std::mem::zeroed();
        if libc::statvfs(c.as_ptr(), &mut st) != 0 {
            return Err(io::Error::last_os_error());
        }
        Ok(st.f_bavail as u64 * st.f_frsize as u64)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PreparedFile {
    pub path: PathBuf,
    pub size: u64,
    /// FNV-1a digest of the content.
    pub digest: u64,
}

/// Writes `size` bytes of seeded content to `path` and syncs it.
///
/// The content is the byte stream of `XorShift64Star::new(seed)`, eight
/// little-endian bytes per draw.
pub fn prepare_file(path: &Path, size: u64, seed: u64) -> Result<PreparedFile, StorageError> {
    if size == 0 {
        return Err(StorageError::InvalidParameter("file_size must be positive".into()));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let existing = std::fs::metadata(path).map(|m| m.len()).unwrap_or(0);
    let available = free_space(dir).map_err(io_err(dir))? + existing;
    if available < size {
        return Err(StorageError::InsufficientSpace { path: dir.to_path_buf(), needed: size, available });
    }
    let mut file = File::create(path).map_err(io_err(path))?;
    let mut rng = XorShift64Star::new(seed);
    let mut chunk = vec![0u8; PREPARE_CHUNK];
    let mut digest = bento_core::fnv1a64(&[]);
    let mut left = size;
    while left > 0 {
        let n = left.min(PREPARE_CHUNK as u64) as usize;
        rng.fill_bytes(&mut chunk[..n]);
        digest = fnv_continue(digest, &chunk[..n]);
        file.write_all(&chunk[..n]).map_err(io_err(path))?;
        left -= n as u64;
    }
    file.sync_all().map_err(io_err(path))?;
    Ok(PreparedFile { path: path.to_path_buf(), size, digest })
}

fn fnv_continue(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h = (h ^ b as u64).wrapping_mul(0x100000001b3);
    }
    h
}

/// Page-aligned heap buffer, as direct I/O requires.
pub struct AlignedBuf {
    ptr: std::ptr::NonNull<u8>,
    layout: std::alloc::Layout,
}

// SAFETY: the buffer is uniquely owned.
unsafe impl Send for AlignedBuf {}

impl AlignedBuf {
    pub fn zeroed(len: usize) -> Self {
        let layout = std::alloc::Layout::from_size_align(len.max(1), ALIGN).expect("valid layout");
        // SAFETY: layout has non-zero size.
        let raw = unsafe { std::alloc::alloc_zeroed(layout) };
        let ptr = std::ptr::NonNull::new(raw).unwrap_or_else(|| std::alloc::handle_alloc_error(layout));
        Self { ptr, layout }
    }

    pub fn as_slice(&self) -> &[u8] {
        // SAFETY: ptr is valid for layout.size() initialized bytes.
        unsafe { std::slice::from_raw_parts(self.ptr.as_ptr(), self.layout.size()) }
    }

    pub fn as_mut_slice(&mut self) -> &mut [u8] {
        // SAFETY: as above, and we hold &mut self.
        unsafe { std::slice::from_raw_parts_mut(self.ptr.as_ptr(), self.layout.size()) }
    }
}

impl Drop for AlignedBuf {
    fn drop(&mut self) {
        // SAFETY: allocated in `zeroed` with this layout.
        unsafe { std::alloc::dealloc(self.ptr.as_ptr(), self.layout) }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoOpRecord {
    pub worker: usize,
    pub submit_ns: u64,
    pub complete_ns: u64,
    pub offset: u64,
    pub size: u64,
    pub ok: bool,
}

impl IoOpRecord {
    pub fn latency_ns(&self) -> u64 {
        self.complete_ns - self.submit_ns
    }
}

#[derive(Debug)]
pub struct StorageOutcome {
    pub ops: Vec<IoOpRecord>,
    pub bytes_done: u64,
    /// Completion time of the last operation, measured from the common start.
    pub elapsed_ns: u64,
    pub direct_io: bool,
    pub first_error: Option<String>,
}

/// Opens the data file, falling back to buffered I/O when direct I/O is refused.
/// The flag says whether direct I/O is in effect.
pub fn open_data_file(path: &Path, write: bool, direct: bool) -> Result<(File, bool), StorageError> {
    let open = |flags: i32| OpenOptions::new().read(true).write(write).custom_flags(flags).open(path);
    if direct {
        match open(libc::O_DIRECT) {
            Ok(f) => return Ok((f, true)),
            Err(e) if e.raw_os_error() == Some(libc::EINVAL) => {
                log::info!("direct I/O unsupported on {}, using buffered I/O", path.display());
            }
            Err(e) => return Err(io_err(path)(e)),
        }
    }
    open(0).map(|f| (f, false)).map_err(io_err(path))
}

struct Request {
    offset: u64,
    submit_ns: u64,
}

fn worker_loop(
    file: &File,
    params: &StorageParams,
    worker: usize,
    start_cell: &OnceLock<Instant>,
    ready: &Barrier,
    go: &Barrier,
) -> (Vec<IoOpRecord>, Option<String>) {
    let size = params.access_size;
    let blocks = params.file_size / size;
    let mut rng = XorShift64Star::for_worker(params.seed, worker as u64);
    let (region_start, region_end) = region(blocks as usize, params.threads, worker);
    let mut cursor = region_start as u64;
    let mut next_offset = move || -> u64 {
        match params.pattern {
            IoPattern::Random => rng.below(blocks) * size,
            IoPattern::Sequential => {
                let off = cursor * size;
                cursor += 1;
                if cursor == region_end as u64 {
                    cursor = region_start as u64;
                }
                off
            }
        }
    };

    let (req_tx, req_rx) = bounded::<Request>(params.queue_depth);
    let (done_tx, done_rx) = unbounded::<(IoOpRecord, Option<String>)>();
    let mut ops = Vec::new();
    let mut first_error = None;
    std::thread::scope(|s| {
        for slot in 0..params.queue_depth {
            let req_rx = req_rx.clone();
            let done_tx = done_tx.clone();
            s.spawn(move || {
                let mut buf = AlignedBuf::zeroed(size as usize);
                if params.io_type == IoType::Write {
                    XorShift64Star::for_worker(params.seed, (worker * params.queue_depth + slot) as u64 + 1)
                        .fill_bytes(buf.as_mut_slice());
                }
                for req in req_rx {
                    let res = match params.io_type {
                        IoType::Read => file.read_exact_at(buf.as_mut_slice(), req.offset),
                        IoType::Write => file.write_all_at(buf.as_slice(), req.offset),
                    };
                    let start = start_cell.get().expect("requests only flow after start");
                    let complete_ns = start.elapsed().as_nanos() as u64;
                    let rec = IoOpRecord {
                        worker,
                        submit_ns: req.submit_ns,
                        complete_ns,
                        offset: req.offset,
                        size,
                        ok: res.is_ok(),
                    };
                    if done_tx.send((rec, res.err().map(|e| e.to_string()))).is_err() {
                        break;
                    }
                }
            });
        }
        drop(done_tx);
        drop(req_rx);

        // I/O threads exist before the clock starts
        ready.wait();
        go.wait();
        let start = *start_cell.get().expect("start set before release");
        let mut in_flight = 0usize;
        let mut submitted = 0u64;
        let more = |submitted: u64| match params.budget {
            IoBudget::Operations(n) => submitted < n,
            IoBudget::Duration(d) => start.elapsed() < d,
        };
        while in_flight < params.queue_depth && more(submitted) {
            let submit_ns = start.elapsed().as_nanos() as u64;
            req_tx.send(Request { offset: next_offset(), submit_ns }).expect("I/O threads alive");
            in_flight += 1;
            submitted += 1;
        }
        while in_flight > 0 {
            let (rec, err) = done_rx.recv().expect("I/O threads alive");
            in_flight -= 1;
            if let (Some(e), None) = (err, &first_error) {
                first_error = Some(format!("offset {}: {e}", rec.offset));
            }
            ops.push(rec);
            if first_error.is_none() && more(submitted) {
                let submit_ns = start.elapsed().as_nanos() as u64;
                req_tx.send(Request { offset: next_offset(), submit_ns }).expect("I/O threads alive");
                in_flight += 1;
                submitted += 1;
            }
        }
        drop(req_tx);
    });
    (ops, first_error)
}

/// Runs the workload against an already prepared file.
pub fn run_storage(params: &StorageParams) -> Result<StorageOutcome, StorageError> {
    params.validate()?;
    let path = params.file_path();
    match std::fs::metadata(&path) {
        Ok(m) if m.len() >= params.file_size => {}
        _ => return Err(StorageError::NotPrepared { path, size: params.file_size }),
    }
    let (file, direct) = open_data_file(&path, params.io_type == IoType::Write, params.direct_io)?;
    let ready = Barrier::new(params.threads + 1);
    let go = Barrier::new(params.threads + 1);
    let start_cell = OnceLock::new();
    let (mut ops, first_error) = std::thread::scope(|s| {
        let handles: Vec<_> = (0..params.threads)
            .map(|w| {
                let (file, ready, go, start_cell) = (&file, &ready, &go, &start_cell);
                s.spawn(move || worker_loop(file, params, w, start_cell, ready, go))
            })
            .collect();
        ready.wait();
        start_cell.set(Instant::now()).expect("set once");
        go.wait();
        let mut ops = Vec::new();
        let mut first_error = None;
        for h in handles {
            let (o, e) = h.join().expect("storage worker panicked");
            ops.extend(o);
            first_error = first_error.or(e);
        }
        (ops, first_error)
    });
    // durability sync stays outside the timed window
    if params.io_type == IoType::Write {
        file.sync_all().map_err(io_err(&path))?;
    }
    ops.sort_by_key(|o| (o.submit_ns, o.worker));
    let bytes_done = ops.iter().filter(|o| o.ok).map(|o| o.size).sum();
    let elapsed_ns = ops.iter().map(|o| o.complete_ns).max().unwrap_or(0).max(1);
    Ok(StorageOutcome { ops, bytes_done, elapsed_ns, direct_io: direct, first_error })
}

/// Largest number of overlapping `[submit, complete)` intervals of one worker.
pub fn max_in_flight(ops: &[IoOpRecord], worker: usize) -> usize {
    let mut events: Vec<(u64, i32)> =
        ops.iter().filter(|o| o.worker == worker).flat_map(|o| [(o.submit_ns, 1), (o.complete_ns, -1)]).collect();
    // completions sort before submissions at equal timestamps
    events.sort();
    let mut cur = 0i32;
    let mut max = 0i32;
    for (_, d) in events {
        cur += d;
        max = max.max(cur);
    }
    max as usize
}

pub fn write_op_log(path: &Path, ops: &[IoOpRecord]) -> io::Result<()> {
    let mut out = io::BufWriter::new(File::create(path)?);
    for op in ops {
        serde_json::to_writer(&mut out, op)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_op_log(path: &Path) -> Result<Vec<IoOpRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

pub struct StorageTask {
    descriptor: TaskDescriptor,
}

impl Default for StorageTask {
    fn default() -> Self {
        Self::new()
    }
}

impl StorageTask {
    pub fn new() -> Self {
        let schema = ParameterSchema::new(vec![
            ParamSpec::enumeration("io_type", &["read", "write"]).required(),
            ParamSpec::size("access_size", MIN_ACCESS, MAX_ACCESS).default_value(ParamValue::Int(MIN_ACCESS as i64)),
            ParamSpec::enumeration("pattern", &["random", "sequential"])
                .default_value(ParamValue::Str("random".into())),
            ParamSpec::int("queue_depth", 1, 256).default_value(ParamValue::Int(1)),
            ParamSpec::int("threads", 1, 1024).default_value(ParamValue::Int(1)),
            ParamSpec::size("file_size", 1, u64::MAX >> 1),
            ParamSpec::text("target_path"),
            ParamSpec::int("duration_ms", 1, 3_600_000).default_value(ParamValue::Int(500)),
            ParamSpec::int("operations", 1, i64::MAX),
            ParamSpec::boolean("direct_io").default_value(ParamValue::Bool(true)),
            ParamSpec::int("seed", 0, i64::MAX).default_value(ParamValue::Int(1)),
        ])
        .expect("static schema");
        Self {
            descriptor: TaskDescriptor {
                name: "storage".into(),
                schema,
                metrics: vec![
                    MetricDef::rate("throughput", "bytes_done", 1.0 / (1u64 << 20) as f64, "MiB/s"),
                    MetricDef::mean("avg_latency", "latency_ns", "ns"),
                    MetricDef::percentile("p50", "latency_ns", 0.5, "ns"),
                    MetricDef::percentile("p99", "latency_ns", 0.99, "ns"),
                ],
                kind: TaskKind::Builtin,
            },
        }
    }
}

impl Task for StorageTask {
    fn descriptor(&self) -> &TaskDescriptor {
        &self.descriptor
    }

    fn prepare(&mut self, ctx: &mut PhaseContext, tests: &[TestCase]) -> Result<()> {
        let default_dir = ctx.ensure_task_dir()?.to_path_buf();
        let mut done: Vec<PathBuf> = Vec::new();
        for test in tests {
            let p = StorageParams::from_test(test, &default_dir)?;
            p.validate().with_context(|| format!("test {}", test.test_id))?;
            let path = p.file_path();
            if done.contains(&path) {
                continue;
            }
            let prepared = prepare_file(&path, p.file_size, p.seed)?;
            ctx.register_artifact(&prepared.path)?;
            ctx.note(format!("storage.file.{}", test.test_id), format!("{} ({} bytes)", path.display(), p.file_size));
            done.push(path);
        }
        ctx.note("storage.engine", ENGINE);
        Ok(())
    }

    fn run(&mut self, ctx: &mut RunContext<'_>) -> Result<()> {
        let default_dir = ctx.test_dir().parent().map(Path::to_path_buf).unwrap_or_default();
        let params = StorageParams::from_test(ctx.test, &default_dir)?;
        let out = run_storage(&params)?;
        write_op_log(&ctx.test_dir().join(OP_LOG_FILE), &out.ops)?;
        let mode = match (params.direct_io, out.direct_io) {
            (true, true) => "direct",
            (true, false) => "buffered (direct I/O unsupported)",
            _ => "buffered",
        };
        ctx.note("storage.io_mode", mode);
        if let Some(e) = out.first_error {
            bail!("I/O failed: {e}");
        }
        ctx.record_series("latency_ns", out.ops.iter().map(|o| o.latency_ns() as f64), "ns")?;
        ctx.record("ops_done", out.ops.len() as f64, "ops")?;
        ctx.record("bytes_done", out.bytes_done as f64, "bytes")?;
        ctx.record(ELAPSED_NS, out.elapsed_ns as f64, "ns")?;
        Ok(())
    }

    fn clean(&mut self, _ctx: &mut PhaseContext) -> Result<()> {
        // prepared files are registered artifacts and removed by the runner
        Ok(())
    }
}
