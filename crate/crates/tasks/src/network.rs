//! TCP round-trip latency and echo throughput.
//!
//! The sink echoes every frame back unchanged. The source runs one sender and
//! one receiver thread per connection. The sender takes one of `queue_depth`
//! permits per message and the receiver returns it once the echo is read,
//! which caps the number of unacknowledged messages. Each payload starts with
//! its 8-byte sequence number, which the receiver checks against the send
//! record it consumes, so cross-talk or reordering is caught. Payload bytes are verified in full for every message at queue
//! depth 1 and for one message in 64 otherwise.

use std::io::{self, Write};
use std::net::{Shutdown, SocketAddr, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Barrier, Mutex, OnceLock};
use std::time::{Duration, Instant};

use anyhow::{bail, Result};
use bento_core::metrics::sample::ELAPSED_NS;
use bento_core::rng::XorShift64Star;
use bento_core::{
    fnv1a64, MetricDef, ParamSpec, ParamValue, ParameterSchema, PhaseContext, RunContext, Task, TaskDescriptor,
    TaskKind, TestCase,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::{opt_u64, req_str, req_u64, LOOPBACK};
use crate::wire::{encode_frame, read_frame, resolve, Server};

pub const MIN_MESSAGE: u64 = 8;
pub const MAX_MESSAGE: u64 = 32 << 10;
/// One in this many messages is verified when more than one is in flight.
pub const VERIFY_EVERY: u64 = 64;
/// Converts bytes/s into Gbit/s.
pub const GBIT_SCALE: f64 = 8e-9;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("cannot listen on {addr}: {source}")]
    BindFailed { addr: String, source: io::Error },
    #[error("cannot connect to {addr}: {source}")]
    ConnectFailed { addr: String, source: io::Error },
    #[error("peer closed connection {connection} after {received} of {sent} messages")]
    PeerClosed { connection: usize, sent: u64, received: u64 },
    #[error("message size {0} outside [{MIN_MESSAGE}, {MAX_MESSAGE}]")]
    BadMessageSize(u64),
    #[error("connection {connection}: {reason}")]
    Protocol { connection: usize, reason: String },
    #[error("connection {connection}: {source}")]
    Io { connection: usize, source: io::Error },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MessageBudget {
    Duration(Duration),
    /// Messages per connection.
    Messages(u64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SourceParams {
    pub message_size: usize,
    pub queue_depth: usize,
    pub connections: usize,
    pub budget: MessageBudget,
    pub seed: u64,
}

impl SourceParams {
    pub fn validate(&self) -> Result<(), NetworkError> {
        let size = self.message_size as u64;
        if !(MIN_MESSAGE..=MAX_MESSAGE).contains(&size) {
            return Err(NetworkError::BadMessageSize(size));
        }
        Ok(())
    }
}

/// Starts an echo sink on `listen` (port 0 picks a free port).
pub fn spawn_sink(listen: &str) -> Result<Server, NetworkError> {
    Server::spawn(listen, |stream| {
        if let Err(e) = echo(stream) {
            log::debug!("echo connection ended: {e}");
        }
    })
    .map_err(|source| NetworkError::BindFailed { addr: listen.to_string(), source })
}

/// Echoes frames until the peer closes; returns the number echoed.
pub fn echo(stream: TcpStream) -> io::Result<u64> {
    let mut reader = io::BufReader::with_capacity(64 << 10, stream.try_clone()?);
    let mut writer = io::BufWriter::with_capacity(64 << 10, stream);
    let mut buf = Vec::new();
    let mut n = 0;
    loop {
        // flush before blocking so the source never waits on buffered echoes
        if reader.buffer().is_empty() {
            writer.flush()?;
        }
        if !read_frame(&mut reader, &mut buf)? {
            writer.flush()?;
            return Ok(n);
        }
        writer.write_all(&(buf.len() as u32).to_le_bytes())?;
        writer.write_all(&buf)?;
        n += 1;
    }
}

/// Payload of message `seq` on a connection whose base pattern is `base`.
pub fn fill_payload(base: &[u8], seq: u64, out: &mut [u8]) {
    out.copy_from_slice(base);
    out[..8].copy_from_slice(&seq.to_le_bytes());
}

pub fn base_pattern(seed: u64, connection: usize, size: usize) -> Vec<u8> {
    let mut b = vec![0u8; size];
    XorShift64Star::for_worker(seed, connection as u64).fill_bytes(&mut b);
    b
}

fn is_verified(queue_depth: usize, seq: u64) -> bool {
    queue_depth == 1 || seq.is_multiple_of(VERIFY_EVERY)
}

fn mix(acc: u64, payload: &[u8]) -> u64 {
    (acc ^ fnv1a64(payload)).wrapping_mul(0x100000001b3)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectionOutcome {
    pub messages: u64,
    pub rtt_ns: Vec<u64>,
    /// Digest over the verified messages as sent and as echoed.
    pub sent_digest: u64,
    pub received_digest: u64,
    pub verified: u64,
    pub max_outstanding: usize,
    /// Receive time of the last echo, from the common start.
    pub last_ns: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceOutcome {
    pub connections: Vec<ConnectionOutcome>,
    pub message_size: u64,
    pub elapsed_ns: u64,
}

impl SourceOutcome {
    pub fn messages(&self) -> u64 {
        self.connections.iter().map(|c| c.messages).sum()
    }

    /// One direction only; echoes are not counted twice.
    pub fn payload_bytes(&self) -> u64 {
        self.messages() * self.message_size
    }

    pub fn bandwidth_gbps(&self) -> f64 {
        self.payload_bytes() as f64 / (self.elapsed_ns as f64 / 1e9) * GBIT_SCALE
    }

    pub fn rtts(&self) -> impl Iterator<Item = u64> + '_ {
        self.connections.iter().flat_map(|c| c.rtt_ns.iter().copied())
    }
}

fn connection_loop(
    stream: TcpStream,
    params: &SourceParams,
    connection: usize,
    start_cell: &OnceLock<Instant>,
    ready: &Barrier,
    go: &Barrier,
) -> Result<ConnectionOutcome, NetworkError> {
    let io = |source| NetworkError::Io { connection, source };
    stream.set_nodelay(true).map_err(io)?;
    let mut write_half = stream.try_clone().map_err(io)?;
    let mut read_half = io::BufReader::with_capacity(64 << 10, stream);
    let base = base_pattern(params.seed, connection, params.message_size);
    // sent messages travel to the receiver on one channel; permits come back on another once
    // the echo is read, so at most queue_depth messages are ever unacknowledged
    let (sent_tx, sent_rx) = crossbeam_channel::bounded::<(u64, u64)>(params.queue_depth);
    let (permit_tx, permit_rx) = crossbeam_channel::bounded::<()>(params.queue_depth);
    for _ in 0..params.queue_depth {
        permit_tx.send(()).expect("channel has room for every permit");
    }
    let outstanding = AtomicUsize::new(0);

    ready.wait();
    go.wait();
    let start = *start_cell.get().expect("start set before release");
    let now = || start.elapsed().as_nanos() as u64;

    std::thread::scope(|s| {
        let sender = s.spawn(|| -> Result<(u64, u64, usize), NetworkError> {
            let mut payload = vec![0u8; params.message_size];
            let mut frame = Vec::with_capacity(params.message_size + 4);
            let mut digest = 0u64;
            let mut max_out = 0usize;
            let mut seq = 0u64;
            loop {
                let more = match params.budget {
                    MessageBudget::Messages(n) => seq < n,
                    MessageBudget::Duration(d) => start.elapsed() < d,
                };
                if !more {
                    break;
                }
                fill_payload(&base, seq, &mut payload);
                if is_verified(params.queue_depth, seq) {
                    digest = mix(digest, &payload);
                }
                encode_frame(&payload, &mut frame);
                // blocks while queue_depth messages are unacknowledged
                if permit_rx.recv().is_err() || sent_tx.send((seq, now())).is_err() {
                    break;
                }
                max_out = max_out.max(outstanding.fetch_add(1, Ordering::AcqRel) + 1);
                if let Err(e) = write_half.write_all(&frame) {
                    drop(sent_tx);
                    return Err(io(e));
                }
                seq += 1;
            }
            drop(sent_tx);
            let _ = write_half.shutdown(Shutdown::Write);
            Ok((seq, digest, max_out))
        });

        let mut out = ConnectionOutcome::default();
        let mut buf = Vec::with_capacity(params.message_size);
        let mut expected = vec![0u8; params.message_size];
        let mut failure = None;
        for (seq, sent_ns) in sent_rx.iter() {
            match read_frame(&mut read_half, &mut buf) {
                Ok(true) => {}
                Ok(false) => {
                    failure = Some(NetworkError::PeerClosed { connection, sent: seq + 1, received: out.messages });
                    break;
                }
                Err(e) => {
                    failure = Some(io(e));
                    break;
                }
            }
            let t = now();
            outstanding.fetch_sub(1, Ordering::AcqRel);
            if buf.len() != params.message_size || buf[..8] != seq.to_le_bytes() {
                failure = Some(NetworkError::Protocol {
                    connection,
                    reason: format!("expected echo of message {seq}, got {} bytes", buf.len()),
                });
                break;
            }
            if is_verified(params.queue_depth, seq) {
                fill_payload(&base, seq, &mut expected);
                if buf != expected {
                    failure = Some(NetworkError::Protocol { connection, reason: format!("message {seq} corrupted") });
                    break;
                }
                out.received_digest = mix(out.received_digest, &buf);
                out.verified += 1;
            }
            out.rtt_ns.push(t - sent_ns);
            out.messages += 1;
            out.last_ns = t;
            let _ = permit_tx.send(());
        }
        // unblock a sender still waiting for a permit or a slot
        drop(permit_tx);
        drop(sent_rx);
        let sent = sender.join().expect("sender panicked");
        if let Some(f) = failure {
            let _ = read_half.get_ref().shutdown(Shutdown::Both);
            return Err(f);
        }
        let (_, digest, max_out) = sent?;
        out.sent_digest = digest;
        out.max_outstanding = max_out;
        Ok(out)
    })
}

/// Drives `params.connections` connections against the sink at `addr`.
pub fn run_source(params: &SourceParams, addr: SocketAddr) -> Result<SourceOutcome, NetworkError> {
    params.validate()?;
    let streams = (0..params.connections)
        .map(|_| {
            TcpStream::connect(addr).map_err(|source| NetworkError::ConnectFailed { addr: addr.to_string(), source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let ready = Barrier::new(params.connections + 1);
    let go = Barrier::new(params.connections + 1);
    let start_cell = OnceLock::new();
    let results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = streams
            .into_iter()
            .enumerate()
            .map(|(i, stream)| {
                let (ready, go, start_cell) = (&ready, &go, &start_cell);
                s.spawn(move || connection_loop(stream, params, i, start_cell, ready, go))
            })
            .collect();
        ready.wait();
        start_cell.set(Instant::now()).expect("set once");
        go.wait();
        handles.into_iter().map(|h| h.join().expect("connection worker panicked")).collect()
    });
    let connections = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let elapsed_ns = connections.iter().map(|c| c.last_ns).max().unwrap_or(0).max(1);
    Ok(SourceOutcome { connections, message_size: params.message_size as u64, elapsed_ns })
}

/// Serves `connections` connections to completion and returns the number of
/// messages echoed on each.
pub fn run_sink(listen: &str, connections: usize) -> Result<Vec<u64>, NetworkError> {
    let results = Arc::new(Mutex::new(Vec::new()));
    let done = Arc::new((Mutex::new(0usize), std::sync::Condvar::new()));
    let (r, d) = (results.clone(), done.clone());
    let mut server = Server::spawn(listen, move |stream| {
        let n = echo(stream).unwrap_or(0);
        r.lock().expect("results lock").push(n);
        let (count, cv) = &*d;
        *count.lock().expect("count lock") += 1;
        cv.notify_all();
    })
    .map_err(|source| NetworkError::BindFailed { addr: listen.to_string(), source })?;
    log::info!("sink listening on {}", server.local_addr());
    let (count, cv) = &*done;
    let mut finished = count.lock().expect("count lock");
    while *finished < connections {
        finished = cv.wait(finished).expect("count lock");
    }
    drop(finished);
    server.stop();
    let out = results.lock().expect("results lock").clone();
    Ok(out)
}

pub struct NetworkTask {
    descriptor: TaskDescriptor,
}

impl Default for NetworkTask {
    fn default() -> Self {
        Self::new()
    }
}

impl NetworkTask {
    pub fn new() -> Self {
        let schema = ParameterSchema::new(vec![
            ParamSpec::enumeration("role", &["source", "sink"]).default_value(ParamValue::Str("source".into())),
            ParamSpec::text("peer_address").default_value(ParamValue::Str(LOOPBACK.into())),
            ParamSpec::size("data_size", MIN_MESSAGE, MAX_MESSAGE)
                .alias("message_size")
                .default_value(ParamValue::Int(32)),
            ParamSpec::int("queue_depth", 1, 128).default_value(ParamValue::Int(1)),
            ParamSpec::int("threads", 1, 1024).alias("connections").default_value(ParamValue::Int(1)),
            ParamSpec::int("duration_ms", 1, 3_600_000).default_value(ParamValue::Int(500)),
            ParamSpec::int("messages", 1, i64::MAX),
            ParamSpec::int("seed", 0, i64::MAX).default_value(ParamValue::Int(1)),
        ])
        .expect("static schema");
        Self {
            descriptor: TaskDescriptor {
                name: "net_tcp".into(),
                schema,
                metrics: vec![
                    MetricDef::percentile("p50", "rtt_ns", 0.5, "ns"),
                    MetricDef::percentile("p99", "rtt_ns", 0.99, "ns"),
                    MetricDef::mean("avg_latency", "rtt_ns", "ns"),
                    MetricDef::rate("bandwidth", "payload_bytes", GBIT_SCALE, "Gbit/s"),
                    MetricDef::rate("throughput", "messages_done", 1.0, "messages/s"),
                ],
                kind: TaskKind::Builtin,
            },
        }
    }
}

pub fn source_params(test: &TestCase) -> Result<SourceParams> {
    let budget = match opt_u64(test, "messages")? {
        Some(n) => MessageBudget::Messages(n),
        None => MessageBudget::Duration(Duration::from_millis(req_u64(test, "duration_ms")?)),
    };
    Ok(SourceParams {
        message_size: req_u64(test, "data_size")? as usize,
        queue_depth: req_u64(test, "queue_depth")? as usize,
        connections: req_u64(test, "threads")? as usize,
        budget,
        seed: req_u64(test, "seed")?,
    })
}

impl Task for NetworkTask {
    fn descriptor(&self) -> &TaskDescriptor {
        &self.descriptor
    }

    fn prepare(&mut self, ctx: &mut PhaseContext, tests: &[TestCase]) -> Result<()> {
        for test in tests {
            if req_str(test, "role")? == "source" {
                source_params(test)?.validate()?;
            }
        }
        ctx.note("net_tcp.socket_options", "TCP_NODELAY");
        Ok(())
    }

    fn run(&mut self, ctx: &mut RunContext<'_>) -> Result<()> {
        let peer = req_str(ctx.test, "peer_address")?.to_string();
        match req_str(ctx.test, "role")? {
            "sink" => {
                if peer == LOOPBACK {
                    bail!("a sink needs a listen address in peer_address");
                }
                let echoed = run_sink(&peer, req_u64(ctx.test, "threads")? as usize)?;
                ctx.record_series("messages_echoed", echoed.iter().map(|&n| n as f64), "messages")?;
                Ok(())
            }
            _ => {
                let params = source_params(ctx.test)?;
                let mut local = None;
                let addr = if peer == LOOPBACK {
                    let server = spawn_sink("127.0.0.1:0")?;
                    let a = server.local_addr();
                    local = Some(server);
                    a
                } else {
                    resolve(&peer)?
                };
                let out = run_source(&params, addr);
                drop(local);
                let out = out?;
                for (i, c) in out.connections.iter().enumerate() {
                    if c.sent_digest != c.received_digest {
                        bail!("connection {i}: echo digest mismatch");
                    }
                }
                ctx.record_series("rtt_ns", out.rtts().map(|r| r as f64), "ns")?;
                ctx.record_series("messages_done", out.connections.iter().map(|c| c.messages as f64), "messages")?;
                ctx.record("payload_bytes", out.payload_bytes() as f64, "bytes")?;
                ctx.record(ELAPSED_NS, out.elapsed_ns as f64, "ns")?;
                Ok(())
            }
        }
    }

    fn clean(&mut self, _ctx: &mut PhaseContext) -> Result<()> {
        Ok(())
    }
}
