//! Baseline scan versus predicate pushdown.
//!
//! A storage node serves a synthetic table of fixed-width tuples whose first
//! eight bytes (the predicate column, little-endian) hold a seeded permutation
//! of `0..N`. The predicate `key < floor(s * N)` therefore selects exactly
//! `floor(s * N)` tuples.
//!
//! Wire protocol per connection: the client sends one length-prefixed JSON
//! [`NodeRequest`], the node answers with one length-prefixed JSON
//! [`NodeReply`], and a scan then continues with batches of
//! `[u64 LE tuple count][count * width bytes]`, ending with a zero count.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use bento_core::metrics::sample::ELAPSED_NS;
use bento_core::rng::XorShift64Star;
use bento_core::{
    MetricDef, ParamSpec, ParamValue, ParameterSchema, PhaseContext, RunContext, Task, TaskDescriptor, TaskKind,
    TestCase,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::region;
use crate::storage::free_space;
use crate::util::{opt_u64, req_f64, req_str, req_u64, LOOPBACK};
use crate::wire::{read_frame, resolve, write_frame, Server};

pub const DEFAULT_WIDTH: u64 = 128;
pub const MIN_WIDTH: u64 = 16;
pub const BATCH_TUPLES: usize = 64 * 1024;
pub const DEFAULT_SCALE: u64 = 256 << 20;

#[derive(Debug, Error)]
pub enum PushdownError {
    #[error("not enough free space for a {needed}-byte table ({available} available)")]
    InsufficientSpace { needed: u64, available: u64 },
    #[error("table {0} is missing on the storage node")]
    TableMissing(String),
    #[error("storage node {addr} unreachable: {source}")]
    PeerUnreachable { addr: String, source: io::Error },
    #[error("invalid table spec: {0}")]
    InvalidSpec(String),
    #[error("storage node error: {0}")]
    Node(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSpec {
    pub tuples: u64,
    pub width: u64,
    pub seed: u64,
}

impl TableSpec {
    pub fn bytes(&self) -> u64 {
        self.tuples * self.width
    }

    pub fn file_name(&self) -> String {
        format!("table-{}x{}-{}.tbl", self.tuples, self.width, self.seed)
    }

    fn check(&self) -> Result<(), PushdownError> {
        if self.width < MIN_WIDTH {
            return Err(PushdownError::InvalidSpec(format!("tuple width must be at least {MIN_WIDTH}")));
        }
        if self.tuples == 0 {
            return Err(PushdownError::InvalidSpec("table must hold at least one tuple".into()));
        }
        Ok(())
    }
}

/// Fisher-Yates permutation of `0..n` drawn from `XorShift64Star::new(seed)`.
pub fn key_permutation(n: u64, seed: u64) -> Vec<u64> {
    let mut keys: Vec<u64> = (0..n).collect();
    let mut rng = XorShift64Star::new(seed);
    for i in (1..keys.len()).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        keys.swap(i, j);
    }
    keys
}

/// Number of qualifying tuples, `floor(s * n)`. Products within 1e-9 of an
/// integer snap to it, so decimal selectivities such as 0.29 select exactly
/// 29 of 100 tuples despite binary rounding.
pub fn threshold(selectivity: f64, n: u64) -> u64 {
    let x = selectivity.clamp(0.0, 1.0) * n as f64;
    let r = x.round();
    let t = if (x - r).abs() <= 1e-9 * (n.max(1) as f64) { r } else { x.floor() };
    (t as u64).min(n)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TableInfo {
    pub path: PathBuf,
    pub spec: TableSpec,
    pub digest: u64,
}

/// Writes the table for `spec` into `dir`.
///
/// Tuple `i` is `key_permutation[i]` followed by `width - 8` payload bytes
/// from `XorShift64Star::for_worker(seed, 1)`.
pub fn generate_table(spec: &TableSpec, dir: &Path) -> Result<TableInfo, PushdownError> {
    spec.check()?;
    std::fs::create_dir_all(dir)?;
    let path = dir.join(spec.file_name());
    let existing = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
    let available = free_space(dir)? + existing;
    if available < spec.bytes() {
        return Err(PushdownError::InsufficientSpace { needed: spec.bytes(), available });
    }
    let keys = key_permutation(spec.tuples, spec.seed);
    let mut payload_rng = XorShift64Star::for_worker(spec.seed, 1);
    let mut out = BufWriter::with_capacity(1 << 20, File::create(&path)?);
    let mut tuple = vec![0u8; spec.width as usize];
    let mut digest = 0xcbf2_9ce4_8422_2325u64;
    for key in keys {
        tuple[..8].copy_from_slice(&key.to_le_bytes());
        payload_rng.fill_bytes(&mut tuple[8..]);
        for &b in &tuple {
            digest = (digest ^ b as u64).wrapping_mul(0x100000001b3);
        }
        out.write_all(&tuple)?;
    }
    out.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    Ok(TableInfo { path, spec: *spec, digest })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum NodeRequest {
    /// Generate the table on the node.
    Prepare { spec: TableSpec },
    /// Stream tuples `[start, end)`, keeping only keys below `threshold` if given.
    Scan { spec: TableSpec, start: u64, end: u64, threshold: Option<u64>, slowdown: f64 },
    /// Remove the node's tables.
    Clean,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeReply {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<u64>,
}

fn reply(w: &mut impl Write, r: &NodeReply) -> io::Result<()> {
    write_frame(w, &serde_json::to_vec(r).expect("reply serializes"))?;
    w.flush()
}

/// Storage-side process: owns the tables under `data_dir`.
pub fn spawn_storage_node(listen: &str, data_dir: PathBuf) -> io::Result<Server> {
    let data_dir = Arc::new(data_dir);
    Server::spawn(listen, move |stream| {
        if let Err(e) = serve_connection(stream, &data_dir) {
            log::debug!("storage node connection ended: {e}");
        }
    })
}

fn serve_connection(stream: TcpStream, data_dir: &Path) -> io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::with_capacity(1 << 20, stream);
    let mut buf = Vec::new();
    while read_frame(&mut reader, &mut buf)? {
        let req: NodeRequest = match serde_json::from_slice(&buf) {
            Ok(r) => r,
            Err(e) => {
                reply(&mut writer, &NodeReply { ok: false, error: Some(format!("bad request: {e}")), digest: None })?;
                continue;
            }
        };
        match req {
            NodeRequest::Prepare { spec } => {
                let r = match generate_table(&spec, data_dir) {
                    Ok(info) => NodeReply { ok: true, error: None, digest: Some(info.digest) },
                    Err(e) => NodeReply { ok: false, error: Some(e.to_string()), digest: None },
                };
                reply(&mut writer, &r)?;
            }
            NodeRequest::Clean => {
                let mut error = None;
                if let Ok(entries) = std::fs::read_dir(data_dir) {
                    for e in entries.flatten() {
                        if e.path().extension().is_some_and(|x| x == "tbl") {
                            if let Err(err) = std::fs::remove_file(e.path()) {
                                error = Some(err.to_string());
                            }
                        }
                    }
                }
                reply(&mut writer, &NodeReply { ok: error.is_none(), error, digest: None })?;
            }
            NodeRequest::Scan { spec, start, end, threshold, slowdown } => {
                let path = data_dir.join(spec.file_name());
                let file = match File::open(&path) {
                    Ok(f) if f.metadata()?.len() >= spec.bytes() && end <= spec.tuples && start <= end => f,
                    _ => {
                        let error = Some(PushdownError::TableMissing(spec.file_name()).to_string());
                        reply(&mut writer, &NodeReply { ok: false, error, digest: None })?;
                        continue;
                    }
                };
                reply(&mut writer, &NodeReply { ok: true, error: None, digest: None })?;
                stream_scan(&file, &spec, start, end, threshold, slowdown, &mut writer)?;
            }
        }
    }
    Ok(())
}

fn stream_scan(
    file: &File,
    spec: &TableSpec,
    start: u64,
    end: u64,
    threshold: Option<u64>,
    slowdown: f64,
    out: &mut impl Write,
) -> io::Result<()> {
    let width = spec.width as usize;
    let mut chunk = vec![0u8; BATCH_TUPLES * width];
    let mut batch: Vec<u8> = Vec::with_capacity(BATCH_TUPLES * width);
    let mut pos = start;
    let flush = |batch: &mut Vec<u8>, out: &mut dyn Write| -> io::Result<()> {
        if !batch.is_empty() {
            out.write_all(&((batch.len() / width) as u64).to_le_bytes())?;
            out.write_all(batch)?;
            batch.clear();
        }
        Ok(())
    };
    while pos < end {
        let n = ((end - pos) as usize).min(BATCH_TUPLES);
        let bytes = &mut chunk[..n * width];
        file.read_exact_at(bytes, pos * spec.width)?;
        pos += n as u64;
        match threshold {
            None => {
                out.write_all(&(n as u64).to_le_bytes())?;
                out.write_all(bytes)?;
            }
            Some(t) => {
                let began = Instant::now();
                for tuple in bytes.chunks_exact(width) {
                    let key = u64::from_le_bytes(tuple[..8].try_into().expect("8-byte key"));
                    if key < t {
                        batch.extend_from_slice(tuple);
                        if batch.len() == BATCH_TUPLES * width {
                            flush(&mut batch, out)?;
                        }
                    }
                }
                if slowdown > 1.0 {
                    // a weak core takes `slowdown` times as long; the extra time
                    // is slept so that emulated cores stay independent of host cores
                    std::thread::sleep(began.elapsed().mul_f64(slowdown - 1.0));
                }
            }
        }
    }
    flush(&mut batch, out)?;
    out.write_all(&0u64.to_le_bytes())?;
    out.flush()
}

fn request(addr: SocketAddr, req: &NodeRequest) -> Result<(BufReader<TcpStream>, NodeReply), PushdownError> {
    let mut stream =
        TcpStream::connect(addr).map_err(|source| PushdownError::PeerUnreachable { addr: addr.to_string(), source })?;
    stream.set_nodelay(true)?;
    write_frame(&mut stream, &serde_json::to_vec(req).expect("request serializes"))?;
    let mut reader = BufReader::with_capacity(1 << 20, stream);
    let mut buf = Vec::new();
    if !read_frame(&mut reader, &mut buf)? {
        return Err(PushdownError::Node("connection closed before reply".into()));
    }
    let reply: NodeReply = serde_json::from_slice(&buf).map_err(|e| PushdownError::Node(e.to_string()))?;
    Ok((reader, reply))
}

/// Asks the node at `addr` to generate the table; returns its digest.
pub fn remote_prepare(addr: SocketAddr, spec: &TableSpec) -> Result<u64, PushdownError> {
    let (_, r) = request(addr, &NodeRequest::Prepare { spec: *spec })?;
    match r {
        NodeReply { ok: true, digest: Some(d), .. } => Ok(d),
        r => Err(PushdownError::Node(r.error.unwrap_or_default())),
    }
}

pub fn remote_clean(addr: SocketAddr) -> Result<(), PushdownError> {
    let (_, r) = request(addr, &NodeRequest::Clean)?;
    if r.ok {
        Ok(())
    } else {
        Err(PushdownError::Node(r.error.unwrap_or_default()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Baseline,
    Pushdown,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanParams {
    pub mode: Mode,
    pub spec: TableSpec,
    pub selectivity: f64,
    pub dpu_cores: usize,
    pub slowdown: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StreamStats {
    pub keys: Vec<u64>,
    /// Everything after the reply: batch headers, tuples, terminator.
    pub bytes_transferred: u64,
    pub payload_bytes: u64,
    pub tuples_received: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanOutcome {
    pub tuples_scanned: u64,
    /// Sorted qualifying keys.
    pub qualifying: Vec<u64>,
    pub bytes_transferred: u64,
    pub payload_bytes: u64,
    pub elapsed_ns: u64,
}

impl ScanOutcome {
    pub fn digest(&self) -> u64 {
        keys_digest(&self.qualifying)
    }
}

/// FNV-1a over the little-endian encoding of `keys`.
pub fn keys_digest(keys: &[u64]) -> u64 {
    let bytes: Vec<u8> = keys.iter().flat_map(|k| k.to_le_bytes()).collect();
    bento_core::fnv1a64(&bytes)
}

fn receive(
    addr: SocketAddr,
    spec: &TableSpec,
    start: u64,
    end: u64,
    remote_threshold: Option<u64>,
    local_threshold: u64,
    slowdown: f64,
) -> Result<StreamStats, PushdownError> {
    let req = NodeRequest::Scan { spec: *spec, start, end, threshold: remote_threshold, slowdown };
    let (mut reader, r) = request(addr, &req)?;
    if !r.ok {
        let msg = r.error.unwrap_or_default();
        return Err(if msg.contains("missing") {
            PushdownError::TableMissing(spec.file_name())
        } else {
            PushdownError::Node(msg)
        });
    }
    let width = spec.width as usize;
    let mut stats = StreamStats::default();
    let mut buf = Vec::new();
    loop {
        let mut header = [0u8; 8];
        reader.read_exact(&mut header)?;
        stats.bytes_transferred += 8;
        let count = u64::from_le_bytes(header) as usize;
        if count == 0 {
            break;
        }
        if count > BATCH_TUPLES {
            return Err(PushdownError::Node(format!("batch of {count} tuples exceeds {BATCH_TUPLES}")));
        }
        buf.resize(count * width, 0);
        reader.read_exact(&mut buf)?;
        stats.bytes_transferred += buf.len() as u64;
        stats.payload_bytes += buf.len() as u64;
        stats.tuples_received += count as u64;
        for tuple in buf.chunks_exact(width) {
            let key = u64::from_le_bytes(tuple[..8].try_into().expect("8-byte key"));
            if key < local_threshold {
                stats.keys.push(key);
            }
        }
    }
    Ok(stats)
}

/// Runs one scan against the storage node at `addr`.
pub fn run_scan(params: &ScanParams, addr: SocketAddr) -> Result<ScanOutcome, PushdownError> {
    params.spec.check()?;
    let n = params.spec.tuples;
    let t = threshold(params.selectivity, n);
    let start = Instant::now();
    let streams: Vec<StreamStats> = match params.mode {
        Mode::Baseline => vec![receive(addr, &params.spec, 0, n, None, t, 1.0)?],
        Mode::Pushdown => {
            let workers = params.dpu_cores.max(1);
            std::thread::scope(|s| {
                let handles: Vec<_> = (0..workers)
                    .map(|w| {
                        let (a, b) = region(n as usize, workers, w);
                        s.spawn(move || receive(addr, &params.spec, a as u64, b as u64, Some(t), t, params.slowdown))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("receiver panicked")).collect::<Result<Vec<_>, _>>()
            })?
        }
    };
    let elapsed_ns = (start.elapsed().as_nanos() as u64).max(1);
    let mut qualifying: Vec<u64> = streams.iter().flat_map(|s| s.keys.iter().copied()).collect();
    qualifying.sort_unstable();
    Ok(ScanOutcome {
        tuples_scanned: n,
        qualifying,
        bytes_transferred: streams.iter().map(|s| s.bytes_transferred).sum(),
        payload_bytes: streams.iter().map(|s| s.payload_bytes).sum(),
        elapsed_ns,
    })
}

pub struct PushdownTask {
    descriptor: TaskDescriptor,
    /// In-process storage node for loopback runs, started lazily.
    node: Option<Server>,
}

impl Default for PushdownTask {
    fn default() -> Self {
        Self::new()
    }
}

impl PushdownTask {
    pub fn new() -> Self {
        let schema = ParameterSchema::new(vec![
            ParamSpec::enumeration("mode", &["baseline", "pushdown"]).default_value(ParamValue::Str("pushdown".into())),
            ParamSpec::size("scale", MIN_WIDTH, u64::MAX >> 1).default_value(ParamValue::Int(DEFAULT_SCALE as i64)),
            ParamSpec::int("tuple_count", 1, i64::MAX),
            ParamSpec::int("tuple_width", MIN_WIDTH as i64, 1 << 20)
                .default_value(ParamValue::Int(DEFAULT_WIDTH as i64)),
            ParamSpec::float("selectivity", 0.0, 1.0).default_value(ParamValue::Float(0.01)),
            ParamSpec::int("dpu_cores", 1, 1024).default_value(ParamValue::Int(1)),
            ParamSpec::float("slowdown", 1.0, 1000.0).default_value(ParamValue::Float(1.0)),
            ParamSpec::text("peer_address").default_value(ParamValue::Str(LOOPBACK.into())),
            ParamSpec::int("seed", 0, i64::MAX).default_value(ParamValue::Int(1)),
        ])
        .expect("static schema");
        Self {
            descriptor: TaskDescriptor {
                name: "pred_pushdown".into(),
                schema,
                metrics: vec![
                    MetricDef::rate("throughput", "tuples_scanned", 1.0, "tuples/s"),
                    MetricDef::sum("bytes_transferred", "bytes_transferred", "bytes"),
                    MetricDef::sum("payload_bytes", "payload_bytes", "bytes"),
                    MetricDef::sum("qualifying", "qualifying", "tuples"),
                ],
                kind: TaskKind::Builtin,
            },
            node: None,
        }
    }

    fn node_addr(&mut self, peer: &str, data_dir: &Path) -> Result<SocketAddr> {
        if peer != LOOPBACK {
            return Ok(resolve(peer)?);
        }
        if self.node.is_none() {
            self.node = Some(spawn_storage_node("127.0.0.1:0", data_dir.to_path_buf())?);
        }
        Ok(self.node.as_ref().expect("just started").local_addr())
    }
}

pub fn table_spec(test: &TestCase) -> Result<TableSpec> {
    let width = req_u64(test, "tuple_width")?;
    let tuples = match opt_u64(test, "tuple_count")? {
        Some(n) => n,
        None => req_u64(test, "scale")? / width,
    };
    Ok(TableSpec { tuples, width, seed: req_u64(test, "seed")? })
}

pub fn scan_params(test: &TestCase) -> Result<ScanParams> {
    let mode = match req_str(test, "mode")? {
        "baseline" => Mode::Baseline,
        "pushdown" => Mode::Pushdown,
        other => bail!("unknown mode {other:?}"),
    };
    Ok(ScanParams {
        mode,
        spec: table_spec(test)?,
        selectivity: req_f64(test, "selectivity")?,
        dpu_cores: req_u64(test, "dpu_cores")? as usize,
        slowdown: req_f64(test, "slowdown")?,
    })
}

impl Task for PushdownTask {
    fn descriptor(&self) -> &TaskDescriptor {
        &self.descriptor
    }

    fn prepare(&mut self, ctx: &mut PhaseContext, tests: &[TestCase]) -> Result<()> {
        let dir = ctx.ensure_task_dir()?.to_path_buf();
        let mut done: Vec<(String, TableSpec)> = Vec::new();
        for test in tests {
            let spec = table_spec(test)?;
            let peer = req_str(test, "peer_address")?.to_string();
            if done.iter().any(|(p, s)| *p == peer && *s == spec) {
                continue;
            }
            if peer == LOOPBACK {
                let info = generate_table(&spec, &dir)?;
                ctx.register_artifact(&info.path)?;
            } else {
                let addr = self.node_addr(&peer, &dir)?;
                remote_prepare(addr, &spec).with_context(|| format!("preparing table on {peer}"))?;
            }
            done.push((peer, spec));
        }
        ctx.note("pred_pushdown.wire", format!("{BATCH_TUPLES}-tuple batches"));
        Ok(())
    }

    fn run(&mut self, ctx: &mut RunContext<'_>) -> Result<()> {
        let params = scan_params(ctx.test)?;
        let peer = req_str(ctx.test, "peer_address")?.to_string();
        let data_dir = ctx.test_dir().parent().ok_or_else(|| anyhow!("test directory has no parent"))?.to_path_buf();
        let addr = self.node_addr(&peer, &data_dir)?;
        let out = run_scan(&params, addr)?;
        let expected = threshold(params.selectivity, params.spec.tuples);
        if out.qualifying.len() as u64 != expected {
            bail!("{} qualifying tuples, expected {expected}", out.qualifying.len());
        }
        if out.qualifying.iter().enumerate().any(|(i, &k)| k != i as u64) {
            bail!("qualifying keys are not exactly 0..{expected}");
        }
        ctx.record("tuples_scanned", out.tuples_scanned as f64, "tuples")?;
        ctx.record("qualifying", out.qualifying.len() as f64, "tuples")?;
        ctx.record("bytes_transferred", out.bytes_transferred as f64, "bytes")?;
        ctx.record("payload_bytes", out.payload_bytes as f64, "bytes")?;
        ctx.record(ELAPSED_NS, out.elapsed_ns as f64, "ns")?;
        Ok(())
    }

    fn clean(&mut self, _ctx: &mut PhaseContext) -> Result<()> {
        // loopback tables are registered artifacts; the node is stopped here
        self.node = None;
        Ok(())
    }
}

/// Runs `f` against a short-lived in-process storage node.
pub fn with_node<T>(data_dir: &Path, f: impl FnOnce(SocketAddr) -> T) -> io::Result<T> {
    let node = spawn_storage_node("127.0.0.1:0", data_dir.to_path_buf())?;
    let out = f(node.local_addr());
    drop(node);
    Ok(out)
}
