//! Range-partitioned ordered index split between a host partition and a
//! coprocessor partition.
//!
//! Keys `[0, b)` live on the host partition server and `[b, K)` on the
//! coprocessor one, with `b = floor(K * h / (h + d))` for split ratio `h:d`.
//! Clients route each request by the boundary. Servers refuse keys outside
//! their range, so a routing bug surfaces as an error instead of a silent miss.
//!
//! Values are `record_size - 8` bytes: the write version and the key (both
//! little-endian u64) followed by bytes derived from `(seed, key, version)`.
//! Version 0 is the loaded value; clients write unique non-zero versions, which
//! lets the history audit tell where every final value came from.
//!
//! Requests are length-prefixed frames whose first byte is the opcode:
//!
//! | op | request body                                 | reply body              |
//! |----|----------------------------------------------|-------------------------|
//! | 1  | GET key                                      | value                   |
//! | 2  | PUT key, value                               |                         |
//! | 3  | COUNT                                        | u64 count               |
//! | 4  | CONFIGURE lo, hi (clears the map)            |                         |
//! | 5  | LOAD lo, hi, record_size, seed (version 0)   |                         |
//! | 6  | SCAN from, limit                             | (key, len u32, value)*  |
//!
//! Every reply starts with a status byte ([`Status`]). Integers are u64 LE.

use std::collections::BTreeMap;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Result};
use bento_core::metrics::sample::ELAPSED_NS;
use bento_core::rng::XorShift64Star;
use bento_core::{
    MetricDef, ParamSpec, ParamValue, ParameterSchema, PhaseContext, RunContext, Task, TaskDescriptor, TaskKind,
    TestCase,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::{opt_u64, req_f64, req_str, req_u64, LOOPBACK};
use crate::wire::{read_frame, resolve, write_frame, Server};

pub const THETA: f64 = 0.99;
pub const MIN_RECORD: u64 = 24;
const SCAN_PAGE: u64 = 4096;

const OP_GET: u8 = 1;
const OP_PUT: u8 = 2;
const OP_COUNT: u8 = 3;
const OP_CONFIGURE: u8 = 4;
const OP_LOAD: u8 = 5;
const OP_SCAN: u8 = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Status {
    Ok = 0,
    NotFound = 1,
    OutOfRange = 2,
    BadRequest = 3,
}

impl Status {
    fn from_byte(b: u8) -> Option<Self> {
        [Status::Ok, Status::NotFound, Status::OutOfRange, Status::BadRequest].into_iter().find(|s| *s as u8 == b)
    }
}

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("partition server {addr} unreachable: {source}")]
    ServerUnreachable { addr: String, source: io::Error },
    #[error("key {key} sent to the wrong partition")]
    RoutingError { key: u64 },
    #[error("key {0} not found")]
    NotFound(u64),
    #[error("partition server rejected the request")]
    BadRequest,
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

// ---------------------------------------------------------------------------
// Keys and values

/// First key of the coprocessor partition.
pub fn split_boundary(records: u64, host: u64, dpu: u64) -> u64 {
    ((records as u128 * host as u128) / (host as u128 + dpu as u128)) as u64
}

/// Payload for `key` at `version`.
pub fn record_value(seed: u64, key: u64, version: u64, record_size: u64) -> Vec<u8> {
    let mut v = vec![0u8; (record_size - 8) as usize];
    v[..8].copy_from_slice(&version.to_le_bytes());
    v[8..16].copy_from_slice(&key.to_le_bytes());
    let mix = seed ^ key.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ version.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    XorShift64Star::new(mix).fill_bytes(&mut v[16..]);
    v
}

/// `(version, key)` stored in a value.
pub fn decode_value(v: &[u8]) -> Option<(u64, u64)> {
    if v.len() < 16 {
        return None;
    }
    Some((u64::from_le_bytes(v[..8].try_into().ok()?), u64::from_le_bytes(v[8..16].try_into().ok()?)))
}

/// Zipfian ranks over `[0, n)` with the precomputed-zeta method of Gray et
/// al., as popularized by YCSB. Rank 0 is the most popular key.
#[derive(Clone, Debug)]
pub struct Zipfian {
    n: u64,
    theta: f64,
    alpha: f64,
    zetan: f64,
    eta: f64,
}

pub fn zeta(n: u64, theta: f64) -> f64 {
    (1..=n).map(|i| 1.0 / (i as f64).powf(theta)).sum()
}

impl Zipfian {
    pub fn new(n: u64, theta: f64) -> Self {
        let zetan = zeta(n, theta);
        let zeta2 = zeta(2, theta);
        let alpha = 1.0 / (1.0 - theta);
        let eta = (1.0 - (2.0 / n as f64).powf(1.0 - theta)) / (1.0 - zeta2 / zetan);
        Self { n, theta, alpha, zetan, eta }
    }

    /// Maps a uniform draw `u` in `[0, 1)` to a rank.
    pub fn rank(&self, u: f64) -> u64 {
        let uz = u * self.zetan;
        if uz < 1.0 {
            return 0;
        }
        if uz < 1.0 + 0.5f64.powf(self.theta) {
            return 1.min(self.n - 1);
        }
        let r = (self.n as f64 * (self.eta * u - self.eta + 1.0).powf(self.alpha)) as u64;
        r.min(self.n - 1)
    }

    pub fn next(&self, rng: &mut XorShift64Star) -> u64 {
        self.rank(rng.next_f64())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyPattern {
    Uniform,
    Zipfian,
}

pub enum KeyGen {
    Uniform(u64),
    Zipfian(Zipfian),
}

impl KeyGen {
    pub fn new(pattern: KeyPattern, records: u64) -> Self {
        match pattern {
            KeyPattern::Uniform => KeyGen::Uniform(records),
            KeyPattern::Zipfian => KeyGen::Zipfian(Zipfian::new(records, THETA)),
        }
    }

    pub fn next(&self, rng: &mut XorShift64Star) -> u64 {
        match self {
            KeyGen::Uniform(n) => rng.below(*n),
            KeyGen::Zipfian(z) => z.next(rng),
        }
    }
}

// ---------------------------------------------------------------------------
// Partition server

#[derive(Default)]
struct Partition {
    range: RwLock<(u64, u64)>,
    map: RwLock<BTreeMap<u64, Vec<u8>>>,
}

fn u64_at(body: &[u8], i: usize) -> Option<u64> {
    body.get(i * 8..i * 8 + 8).map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
}

impl Partition {
    fn in_range(&self, key: u64) -> bool {
        let (lo, hi) = *self.range.read().expect("range lock");
        (lo..hi).contains(&key)
    }

    fn handle(&self, req: &[u8], out: &mut Vec<u8>) {
        out.clear();
        out.push(Status::Ok as u8);
        let Some((&op, body)) = req.split_first() else {
            out[0] = Status::BadRequest as u8;
            return;
        };
        let status = match op {
            OP_GET => match u64_at(body, 0) {
                Some(k) if !self.in_range(k) => Status::OutOfRange,
                Some(k) => match self.map.read().expect("map lock").get(&k) {
                    Some(v) => {
                        out.extend_from_slice(v);
                        Status::Ok
                    }
                    None => Status::NotFound,
                },
                None => Status::BadRequest,
            },
            OP_PUT => match u64_at(body, 0) {
                Some(k) if !self.in_range(k) => Status::OutOfRange,
                Some(k) => {
                    self.map.write().expect("map lock").insert(k, body[8..].to_vec());
                    Status::Ok
                }
                None => Status::BadRequest,
            },
            OP_COUNT => {
                out.extend_from_slice(&(self.map.read().expect("map lock").len() as u64).to_le_bytes());
                Status::Ok
            }
            OP_CONFIGURE => match (u64_at(body, 0), u64_at(body, 1)) {
                (Some(lo), Some(hi)) if lo <= hi => {
                    let mut map = self.map.write().expect("map lock");
                    *self.range.write().expect("range lock") = (lo, hi);
                    map.clear();
                    Status::Ok
                }
                _ => Status::BadRequest,
            },
            OP_LOAD => match (u64_at(body, 0), u64_at(body, 1), u64_at(body, 2), u64_at(body, 3)) {
                (Some(lo), Some(hi), Some(size), Some(seed)) if size >= MIN_RECORD => {
                    if lo < hi && !(self.in_range(lo) && self.in_range(hi - 1)) {
                        Status::OutOfRange
                    } else {
                        let mut map = self.map.write().expect("map lock");
                        for k in lo..hi {
                            map.insert(k, record_value(seed, k, 0, size));
                        }
                        Status::Ok
                    }
                }
                _ => Status::BadRequest,
            },
            OP_SCAN => match (u64_at(body, 0), u64_at(body, 1)) {
                (Some(from), Some(limit)) => {
                    let map = self.map.read().expect("map lock");
                    for (k, v) in map.range(from..).take(limit as usize) {
                        out.extend_from_slice(&k.to_le_bytes());
                        out.extend_from_slice(&(v.len() as u32).to_le_bytes());
                        out.extend_from_slice(v);
                    }
                    Status::Ok
                }
                _ => Status::BadRequest,
            },
            _ => Status::BadRequest,
        };
        if status != Status::Ok {
            out.truncate(1);
        }
        out[0] = status as u8;
    }
}

/// Starts a partition server; its range is empty until configured.
pub fn spawn_partition_server(listen: &str) -> io::Result<Server> {
    let part = Arc::new(Partition::default());
    Server::spawn(listen, move |stream| {
        if let Err(e) = serve(stream, &part) {
            log::debug!("partition connection ended: {e}");
        }
    })
}

fn serve(stream: TcpStream, part: &Partition) -> io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let (mut req, mut resp) = (Vec::new(), Vec::new());
    while read_frame(&mut reader, &mut req)? {
        part.handle(&req, &mut resp);
        write_frame(&mut writer, &resp)?;
        writer.flush()?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Client

pub struct PartitionClient {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    req: Vec<u8>,
    resp: Vec<u8>,
}

impl PartitionClient {
    pub fn connect(addr: SocketAddr) -> Result<Self, IndexError> {
        let stream = TcpStream::connect(addr)
            .map_err(|source| IndexError::ServerUnreachable { addr: addr.to_string(), source })?;
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            req: Vec::new(),
            resp: Vec::new(),
        })
    }

    fn call(&mut self, op: u8, words: &[u64], tail: &[u8], key: u64) -> Result<&[u8], IndexError> {
        self.req.clear();
        self.req.push(op);
        for w in words {
            self.req.extend_from_slice(&w.to_le_bytes());
        }
        self.req.extend_from_slice(tail);
        write_frame(&mut self.writer, &self.req)?;
        self.writer.flush()?;
        if !read_frame(&mut self.reader, &mut self.resp)? {
            return Err(IndexError::Protocol("server closed the connection".into()));
        }
        match self.resp.first().copied().and_then(Status::from_byte) {
            Some(Status::Ok) => Ok(&self.resp[1..]),
            Some(Status::NotFound) => Err(IndexError::NotFound(key)),
            Some(Status::OutOfRange) => Err(IndexError::RoutingError { key }),
            Some(Status::BadRequest) => Err(IndexError::BadRequest),
            None => Err(IndexError::Protocol("bad status byte".into())),
        }
    }

    pub fn get(&mut self, key: u64) -> Result<&[u8], IndexError> {
        self.call(OP_GET, &[key], &[], key)
    }

    pub fn put(&mut self, key: u64, value: &[u8]) -> Result<(), IndexError> {
        self.call(OP_PUT, &[key], value, key).map(|_| ())
    }

    pub fn count(&mut self) -> Result<u64, IndexError> {
        let r = self.call(OP_COUNT, &[], &[], 0)?;
        u64_at(r, 0).ok_or_else(|| IndexError::Protocol("short COUNT reply".into()))
    }

    pub fn configure(&mut self, lo: u64, hi: u64) -> Result<(), IndexError> {
        self.call(OP_CONFIGURE, &[lo, hi], &[], lo).map(|_| ())
    }

    pub fn load(&mut self, lo: u64, hi: u64, record_size: u64, seed: u64) -> Result<(), IndexError> {
        self.call(OP_LOAD, &[lo, hi, record_size, seed], &[], lo).map(|_| ())
    }

    /// Every `(key, value)` on the server, in key order.
    pub fn scan_all(&mut self) -> Result<Vec<(u64, Vec<u8>)>, IndexError> {
        let mut out = Vec::new();
        let mut from = 0u64;
        loop {
            let page = self.call(OP_SCAN, &[from, SCAN_PAGE], &[], from)?;
            let mut rest = page;
            let mut n = 0;
            while !rest.is_empty() {
                if rest.len() < 12 {
                    return Err(IndexError::Protocol("truncated SCAN entry".into()));
                }
                let k = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes"));
                let len = u32::from_le_bytes(rest[8..12].try_into().expect("4 bytes")) as usize;
                let v = rest.get(12..12 + len).ok_or_else(|| IndexError::Protocol("truncated SCAN value".into()))?;
                out.push((k, v.to_vec()));
                rest = &rest[12 + len..];
                from = k + 1;
                n += 1;
            }
            if n < SCAN_PAGE {
                return Ok(out);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndexParams {
    pub records: u64,
    pub record_size: u64,
    pub read_fraction: f64,
    pub pattern: KeyPattern,
    pub split: (u64, u64),
    pub threads: usize,
    pub budget: OpBudget,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpBudget {
    Duration(Duration),
    /// Operations per client thread.
    Operations(u64),
}

impl IndexParams {
    pub fn boundary(&self) -> u64 {
        split_boundary(self.records, self.split.0, self.split.1)
    }
}

/// Host and coprocessor partition addresses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Partitions {
    pub host: SocketAddr,
    pub dpu: SocketAddr,
}

/// Configures both partitions and loads keys `0..K` at version 0. Returns
/// the key counts the servers report.
pub fn load_index(params: &IndexParams, parts: Partitions) -> Result<(u64, u64), IndexError> {
    if params.record_size < MIN_RECORD {
        return Err(IndexError::BadRequest);
    }
    let b = params.boundary();
    let mut host = PartitionClient::connect(parts.host)?;
    let mut dpu = PartitionClient::connect(parts.dpu)?;
    host.configure(0, b)?;
    dpu.configure(b, params.records)?;
    host.load(0, b, params.record_size, params.seed)?;
    dpu.load(b, params.records, params.record_size, params.seed)?;
    Ok((host.count()?, dpu.count()?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteRecord {
    pub key: u64,
    pub version: u64,
    pub sent_ns: u64,
    pub acked_ns: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientOutcome {
    pub host_ops: u64,
    pub dpu_ops: u64,
    pub reads_verified: u64,
    pub writes: Vec<WriteRecord>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexOutcome {
    pub clients: Vec<ClientOutcome>,
    pub elapsed_ns: u64,
}

impl IndexOutcome {
    pub fn host_ops(&self) -> u64 {
        self.clients.iter().map(|c| c.host_ops).sum()
    }

    pub fn dpu_ops(&self) -> u64 {
        self.clients.iter().map(|c| c.dpu_ops).sum()
    }

    pub fn total_ops(&self) -> u64 {
        self.host_ops() + self.dpu_ops()
    }

    pub fn writes(&self) -> impl Iterator<Item = &WriteRecord> {
        self.clients.iter().flat_map(|c| c.writes.iter())
    }
}

/// Version written by client `worker` for its `seq`-th write; never 0.
pub fn write_version(worker: usize, seq: u64) -> u64 {
    ((worker as u64 + 1) << 40) | seq
}

fn client_loop(
    params: &IndexParams,
    parts: Partitions,
    worker: usize,
    start: Instant,
) -> Result<ClientOutcome, IndexError> {
    let b = params.boundary();
    let mut host = PartitionClient::connect(parts.host)?;
    let mut dpu = PartitionClient::connect(parts.dpu)?;
    let keys = KeyGen::new(params.pattern, params.records);
    let mut rng = XorShift64Star::for_worker(params.seed, worker as u64);
    let mut op_rng = XorShift64Star::for_worker(params.seed ^ 0x5bd1_e995, worker as u64);
    let read_only = params.read_fraction >= 1.0;
    let mut out = ClientOutcome::default();
    let mut done = 0u64;
    let mut seq = 0u64;
    loop {
        let more = match params.budget {
            OpBudget::Operations(n) => done < n,
            OpBudget::Duration(d) => start.elapsed() < d,
        };
        if !more {
            break;
        }
        let key = keys.next(&mut rng);
        let is_read = read_only || op_rng.next_f64() < params.read_fraction;
        let on_host = key < b;
        let client = if on_host { &mut host } else { &mut dpu };
        if is_read {
            let value = client.get(key)?;
            let decoded = decode_value(value);
            if read_only {
                if value != record_value(params.seed, key, 0, params.record_size).as_slice() {
                    return Err(IndexError::Protocol(format!("key {key} returned a value other than the loaded one")));
                }
                out.reads_verified += 1;
            } else if decoded.map(|(_, k)| k) != Some(key) {
                return Err(IndexError::Protocol(format!("key {key} returned a value for another key")));
            }
        } else {
            seq += 1;
            let version = write_version(worker, seq);
            let value = record_value(params.seed, key, version, params.record_size);
            let sent_ns = start.elapsed().as_nanos() as u64;
            client.put(key, &value)?;
            let acked_ns = start.elapsed().as_nanos() as u64;
            out.writes.push(WriteRecord { key, version, sent_ns, acked_ns });
        }
        if on_host {
            out.host_ops += 1;
        } else {
            out.dpu_ops += 1;
        }
        done += 1;
    }
    Ok(out)
}

/// Runs the client workload against loaded partitions.
pub fn run_index_workload(params: &IndexParams, parts: Partitions) -> Result<IndexOutcome, IndexError> {
    let start = Instant::now();
    let results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> =
            (0..params.threads.max(1)).map(|w| s.spawn(move || client_loop(params, parts, w, start))).collect();
        handles.into_iter().map(|h| h.join().expect("index client panicked")).collect()
    });
    let elapsed_ns = (start.elapsed().as_nanos() as u64).max(1);
    Ok(IndexOutcome { clients: results.into_iter().collect::<Result<_, _>>()?, elapsed_ns })
}

#[derive(Debug, PartialEq, Eq)]
pub struct AuditReport {
    pub keys_checked: u64,
    pub keys_written: u64,
    pub violations: Vec<String>,
}

/// Checks the final index contents against the client write logs.
///
/// A key nobody wrote must still hold its loaded value. A written key must
/// hold the value of one of its writes `w` that no other write of the key
/// started after `w` was acknowledged, since such a later write would have
/// replaced it.
pub fn audit_history(
    params: &IndexParams,
    contents: &[(u64, Vec<u8>)],
    writes: impl IntoIterator<Item = WriteRecord>,
) -> AuditReport {
    let mut by_key: BTreeMap<u64, Vec<WriteRecord>> = BTreeMap::new();
    for w in writes {
        by_key.entry(w.key).or_default().push(w);
    }
    let mut violations = Vec::new();
    if contents.len() as u64 != params.records {
        violations.push(format!("index holds {} keys, expected {}", contents.len(), params.records));
    }
    for (expected, (key, value)) in contents.iter().enumerate() {
        if *key != expected as u64 {
            violations.push(format!("key {key} at position {expected}"));
            break;
        }
        let Some((version, stored_key)) = decode_value(value) else {
            violations.push(format!("key {key}: undecodable value"));
            continue;
        };
        if stored_key != *key || *value != record_value(params.seed, *key, version, params.record_size) {
            violations.push(format!("key {key}: value does not match version {version}"));
            continue;
        }
        match by_key.get(key) {
            None if version != 0 => violations.push(format!("key {key}: version {version} was never written")),
            None => {}
            Some(ws) => {
                if version == 0 {
                    violations.push(format!("key {key}: acknowledged writes lost"));
                    continue;
                }
                match ws.iter().find(|w| w.version == version) {
                    None => violations.push(format!("key {key}: version {version} was never written")),
                    Some(w) => {
                        if let Some(later) = ws.iter().find(|o| o.sent_ns > w.acked_ns) {
                            violations.push(format!(
                                "key {key}: holds version {version} although version {} was written after it",
                                later.version
                            ));
                        }
                    }
                }
            }
        }
    }
    AuditReport { keys_checked: contents.len() as u64, keys_written: by_key.len() as u64, violations }
}

/// Full contents of both partitions, host first.
pub fn dump_index(parts: Partitions) -> Result<Vec<(u64, Vec<u8>)>, IndexError> {
    let mut all = PartitionClient::connect(parts.host)?.scan_all()?;
    all.extend(PartitionClient::connect(parts.dpu)?.scan_all()?);
    Ok(all)
}

// ---------------------------------------------------------------------------
// Task

pub struct IndexTask {
    descriptor: TaskDescriptor,
    local: Option<(Server, Server)>,
}

impl Default for IndexTask {
    fn default() -> Self {
        Self::new()
    }
}

impl IndexTask {
    pub fn new() -> Self {
        let schema = ParameterSchema::new(vec![
            ParamSpec::int("record_count", 1, i64::MAX).default_value(ParamValue::Int(100_000)),
            ParamSpec::size("record_size", MIN_RECORD, 1 << 20).default_value(ParamValue::Int(128)),
            ParamSpec::float("op", 0.0, 1.0).default_value(ParamValue::Float(1.0)),
            ParamSpec::enumeration("pattern", &["uniform", "zipfian"]).default_value(ParamValue::Str("uniform".into())),
            ParamSpec::ratio("split_ratio").default_value(ParamValue::Str("10:1".into())),
            ParamSpec::int("threads", 1, 1024).default_value(ParamValue::Int(1)),
            ParamSpec::int("duration_ms", 1, 3_600_000).default_value(ParamValue::Int(500)),
            ParamSpec::int("operations", 1, i64::MAX),
            ParamSpec::text("peer_addresses").default_value(ParamValue::Str(LOOPBACK.into())),
            ParamSpec::int("seed", 0, i64::MAX).default_value(ParamValue::Int(1)),
        ])
        .expect("static schema");
        Self {
            descriptor: TaskDescriptor {
                name: "index".into(),
                schema,
                metrics: vec![
                    MetricDef::rate("throughput", "ops_done", 1.0, "ops/s"),
                    MetricDef::rate("host_throughput", "host_ops", 1.0, "ops/s"),
                    MetricDef::rate("dpu_throughput", "dpu_ops", 1.0, "ops/s"),
                ],
                kind: TaskKind::Builtin,
            },
            local: None,
        }
    }

    fn partitions(&mut self, peers: &str) -> Result<Partitions> {
        if peers == LOOPBACK {
            if self.local.is_none() {
                self.local = Some((spawn_partition_server("127.0.0.1:0")?, spawn_partition_server("127.0.0.1:0")?));
            }
            let (h, d) = self.local.as_ref().expect("just started");
            return Ok(Partitions { host: h.local_addr(), dpu: d.local_addr() });
        }
        let (h, d) = peers
            .split_once(',')
            .ok_or_else(|| anyhow!("peer_addresses must be \"host_addr,dpu_addr\" or \"{LOOPBACK}\""))?;
        Ok(Partitions { host: resolve(h.trim())?, dpu: resolve(d.trim())? })
    }
}

pub fn index_params(test: &TestCase) -> Result<IndexParams> {
    let pattern = match req_str(test, "pattern")? {
        "uniform" => KeyPattern::Uniform,
        "zipfian" => KeyPattern::Zipfian,
        other => bail!("unknown pattern {other:?}"),
    };
    let split = bento_core::params::parse_ratio(req_str(test, "split_ratio")?).map_err(|e| anyhow!(e))?;
    let budget = match opt_u64(test, "operations")? {
        Some(n) => OpBudget::Operations(n),
        None => OpBudget::Duration(Duration::from_millis(req_u64(test, "duration_ms")?)),
    };
    Ok(IndexParams {
        records: req_u64(test, "record_count")?,
        record_size: req_u64(test, "record_size")?,
        read_fraction: req_f64(test, "op")?,
        pattern,
        split,
        threads: req_u64(test, "threads")? as usize,
        budget,
        seed: req_u64(test, "seed")?,
    })
}

impl Task for IndexTask {
    fn descriptor(&self) -> &TaskDescriptor {
        &self.descriptor
    }

    fn prepare(&mut self, _ctx: &mut PhaseContext, tests: &[TestCase]) -> Result<()> {
        for test in tests {
            index_params(test)?;
            let parts = self.partitions(req_str(test, "peer_addresses")?)?;
            // both servers must answer before any measurement starts
            PartitionClient::connect(parts.host)?.count()?;
            PartitionClient::connect(parts.dpu)?.count()?;
        }
        Ok(())
    }

    fn run(&mut self, ctx: &mut RunContext<'_>) -> Result<()> {
        let params = index_params(ctx.test)?;
        let parts = self.partitions(req_str(ctx.test, "peer_addresses")?)?;
        let b = params.boundary();
        let (host_count, dpu_count) = load_index(&params, parts)?;
        if (host_count, dpu_count) != (b, params.records - b) {
            bail!("partitions hold {host_count}/{dpu_count} keys, expected {b}/{}", params.records - b);
        }
        let out = run_index_workload(&params, parts)?;
        if out.writes().next().is_some() {
            let audit = audit_history(&params, &dump_index(parts)?, out.writes().copied());
            if let Some(v) = audit.violations.first() {
                bail!("history audit failed ({} violations), first: {v}", audit.violations.len());
            }
            ctx.note(
                format!("index.audit.{}", ctx.test.test_id),
                format!("{} keys written, consistent", audit.keys_written),
            );
        }
        ctx.record("host_keys", host_count as f64, "keys")?;
        ctx.record("dpu_keys", dpu_count as f64, "keys")?;
        ctx.record("host_ops", out.host_ops() as f64, "ops")?;
        ctx.record("dpu_ops", out.dpu_ops() as f64, "ops")?;
        ctx.record("ops_done", out.total_ops() as f64, "ops")?;
        ctx.record(ELAPSED_NS, out.elapsed_ns as f64, "ns")?;
        Ok(())
    }

    fn clean(&mut self, _ctx: &mut PhaseContext) -> Result<()> {
        self.local = None;
        Ok(())
    }
}
