//! Word-sized memory access throughput.
//!
//! All workers share one buffer of 8-byte words. Sequential workers sweep
//! disjoint contiguous regions with wraparound; random workers draw indices
//! over the whole buffer from their own generator. Random writes race on
//! aligned words, which is harmless for a throughput measurement since aligned
//! 8-byte stores do not tear on supported platforms.

use std::sync::atomic::{AtomicU64, Ordering::Relaxed};
use std::sync::Barrier;
use std::time::{Duration, Instant};

use anyhow::{bail, Result};
use bento_core::metrics::sample::ELAPSED_NS;
use bento_core::rng::XorShift64Star;
use bento_core::{
    MetricDef, ParamSpec, ParamValue, ParameterSchema, PhaseContext, RunContext, Task, TaskDescriptor, TaskKind,
    TestCase,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affinity;
use crate::util::{opt_u64, req_str, req_u64};

pub const WORD: usize = 8;
const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
/// Accesses between clock checks in duration-bounded runs.
const CHUNK: u64 = 4096;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MemoryError {
    #[error("object size {0} is not a multiple of {WORD} bytes")]
    SizeNotWordAligned(u64),
    #[error("could not allocate {0} bytes")]
    AllocationFailed(u64),
    #[error("threads must be between 1 and the word count ({words}), got {threads}")]
    BadThreads { threads: usize, words: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemOp {
    Read,
    Write,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    Random,
    Sequential,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Budget {
    Duration(Duration),
    /// Accesses per worker.
    Accesses(u64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryParams {
    pub operation: MemOp,
    pub object_size: u64,
    pub pattern: Pattern,
    pub threads: usize,
    pub budget: Budget,
    pub seed: u64,
    pub pin: bool,
}

impl MemoryParams {
    pub fn from_test(test: &TestCase) -> Result<Self> {
        let operation = match req_str(test, "operation")? {
            "read" => MemOp::Read,
            "write" => MemOp::Write,
            other => bail!("unknown operation {other:?}"),
        };
        let pattern = match req_str(test, "pattern")? {
            "random" => Pattern::Random,
            "sequential" => Pattern::Sequential,
            other => bail!("unknown pattern {other:?}"),
        };
        let budget = match opt_u64(test, "accesses")? {
            Some(n) => Budget::Accesses(n),
            None => Budget::Duration(Duration::from_millis(req_u64(test, "duration_ms")?)),
        };
        Ok(Self {
            operation,
            object_size: req_u64(test, "object_size")?,
            pattern,
            threads: req_u64(test, "threads")? as usize,
            budget,
            seed: req_u64(test, "seed")?,
            pin: true,
        })
    }
}

/// Value stored at word `i` by writers seeded with `seed`.
#[inline(always)]
pub fn pattern_word(seed: u64, i: usize) -> u64 {
    (i as u64).wrapping_mul(GOLDEN) ^ seed
}

pub struct MemoryBuffer {
    words: Vec<AtomicU64>,
}

impl MemoryBuffer {
    pub fn allocate(object_size: u64) -> Result<Self, MemoryError> {
        if object_size == 0 || !object_size.is_multiple_of(WORD as u64) {
            return Err(MemoryError::SizeNotWordAligned(object_size));
        }
        let n = (object_size / WORD as u64) as usize;
        let mut words: Vec<AtomicU64> = Vec::new();
        words.try_reserve_exact(n).map_err(|_| MemoryError::AllocationFailed(object_size))?;
        words.extend((0..n).map(|_| AtomicU64::new(0)));
        Ok(Self { words })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn fill_pattern(&self, seed: u64) {
        for (i, w) in self.words.iter().enumerate() {
            w.store(pattern_word(seed, i), Relaxed);
        }
    }

    pub fn get(&self, i: usize) -> u64 {
        self.words[i].load(Relaxed)
    }

    /// Index of the first word that differs from the pattern, if any.
    pub fn first_mismatch(&self, seed: u64) -> Option<usize> {
        (0..self.len()).find(|&i| self.get(i) != pattern_word(seed, i))
    }
}

/// Word range `[start, end)` swept by sequential worker `worker` of `threads`.
pub fn region(words: usize, threads: usize, worker: usize) -> (usize, usize) {
    let base = words / threads;
    let extra = words % threads;
    let start = worker * base + worker.min(extra);
    let len = base + usize::from(worker < extra);
    (start, start + len)
}

/// Sequential index stream over one region, wrapping at its end.
#[derive(Clone, Debug)]
pub struct SeqCursor {
    start: usize,
    end: usize,
    pos: usize,
}

impl SeqCursor {
    pub fn new((start, end): (usize, usize)) -> Self {
        Self { start, end, pos: start }
    }

    #[inline(always)]
    pub fn next_index(&mut self) -> usize {
        let i = self.pos;
        self.pos += 1;
        if self.pos == self.end {
            self.pos = self.start;
        }
        i
    }
}

/// The first `n` random indices worker `worker` visits.
pub fn random_indices(seed: u64, worker: usize, words: usize, n: usize) -> Vec<usize> {
    let mut rng = XorShift64Star::for_worker(seed, worker as u64);
    (0..n).map(|_| rng.below(words as u64) as usize).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerOutcome {
    pub accesses: u64,
    pub checksum: u64,
    pub elapsed_ns: u64,
    pub cpu: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryOutcome {
    pub workers: Vec<WorkerOutcome>,
    /// Longest worker's time; all workers start together.
    pub elapsed_ns: u64,
}

impl MemoryOutcome {
    pub fn accesses(&self) -> u64 {
        self.workers.iter().map(|w| w.accesses).sum()
    }

    pub fn checksum(&self) -> u64 {
        self.workers.iter().fold(0, |acc, w| acc ^ w.checksum)
    }
}

#[inline(always)]
fn access(buf: &[AtomicU64], op: MemOp, seed: u64, i: usize, sum: &mut u64) {
    match op {
        MemOp::Read => *sum ^= buf[i].load(Relaxed),
        MemOp::Write => buf[i].store(pattern_word(seed, i), Relaxed),
    }
}

fn worker_loop(buf: &[AtomicU64], params: &MemoryParams, worker: usize, barrier: &Barrier) -> WorkerOutcome {
    let cpu = if params.pin { affinity::pin_worker(worker) } else { None };
    let words = buf.len();
    let mut seq = SeqCursor::new(region(words, params.threads, worker));
    let mut rng = XorShift64Star::for_worker(params.seed, worker as u64);
    let mut sum = 0u64;
    let mut done = 0u64;
    let mut batch = |n: u64, sum: &mut u64| match params.pattern {
        Pattern::Sequential => {
            for _ in 0..n {
                access(buf, params.operation, params.seed, seq.next_index(), sum);
            }
        }
        Pattern::Random => {
            for _ in 0..n {
                let i = rng.below(words as u64) as usize;
                access(buf, params.operation, params.seed, i, sum);
            }
        }
    };
    barrier.wait();
    let start = Instant::now();
    match params.budget {
        Budget::Accesses(n) => {
            batch(n, &mut sum);
            done = n;
        }
        Budget::Duration(d) => loop {
            batch(CHUNK, &mut sum);
            done += CHUNK;
            if start.elapsed() >= d {
                break;
            }
        },
    }
    let elapsed_ns = start.elapsed().as_nanos() as u64;
    WorkerOutcome { accesses: done, checksum: std::hint::black_box(sum), elapsed_ns: elapsed_ns.max(1), cpu }
}

/// Runs the workers over an existing buffer.
pub fn run_on(buf: &MemoryBuffer, params: &MemoryParams) -> Result<MemoryOutcome, MemoryError> {
    if params.threads == 0 || params.threads > buf.len() {
        return Err(MemoryError::BadThreads { threads: params.threads, words: buf.len() });
    }
    let barrier = Barrier::new(params.threads);
    let workers: Vec<WorkerOutcome> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..params.threads)
            .map(|w| {
                let barrier = &barrier;
                s.spawn(move || worker_loop(&buf.words, params, w, barrier))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("memory worker panicked")).collect()
    });
    let elapsed_ns = workers.iter().map(|w| w.elapsed_ns).max().unwrap_or(1);
    Ok(MemoryOutcome { workers, elapsed_ns })
}

/// Allocates and initializes the buffer, then runs the workers.
pub fn run_memory(params: &MemoryParams) -> Result<MemoryOutcome, MemoryError> {
    let buf = MemoryBuffer::allocate(params.object_size)?;
    // Touch every page up front so reads see real data and page faults stay out of the timing.
    buf.fill_pattern(params.seed);
    run_on(&buf, params)
}

pub struct MemoryTask {
    descriptor: TaskDescriptor,
}

impl Default for MemoryTask {
    fn default() -> Self {
        Self::new()
    }
}

impl MemoryTask {
    pub fn new() -> Self {
        let schema = ParameterSchema::new(vec![
            ParamSpec::enumeration("operation", &["read", "write"]).required(),
            ParamSpec::size("object_size", WORD as u64, u64::MAX >> 1).default_value(ParamValue::Int(4 << 20)),
            ParamSpec::enumeration("pattern", &["random", "sequential"])
                .default_value(ParamValue::Str("random".into())),
            ParamSpec::int("threads", 1, 4096).default_value(ParamValue::Int(1)),
            ParamSpec::int("duration_ms", 1, 3_600_000).default_value(ParamValue::Int(500)),
            ParamSpec::int("accesses", 1, i64::MAX),
            ParamSpec::int("seed", 0, i64::MAX).default_value(ParamValue::Int(1)),
        ])
        .expect("static schema");
        Self {
            descriptor: TaskDescriptor {
                name: "memory".into(),
                schema,
                metrics: vec![
                    MetricDef::rate("throughput", "accesses_done", 1.0, "accesses/s"),
                    MetricDef::rate("bandwidth", "bytes_done", 1.0 / (1u64 << 30) as f64, "GiB/s"),
                ],
                kind: TaskKind::Builtin,
            },
        }
    }
}

impl Task for MemoryTask {
    fn descriptor(&self) -> &TaskDescriptor {
        &self.descriptor
    }

    fn prepare(&mut self, _ctx: &mut PhaseContext, tests: &[TestCase]) -> Result<()> {
        for test in tests {
            let p = MemoryParams::from_test(test)?;
            if p.object_size % WORD as u64 != 0 {
                return Err(MemoryError::SizeNotWordAligned(p.object_size).into());
            }
        }
        Ok(())
    }

    fn run(&mut self, ctx: &mut RunContext<'_>) -> Result<()> {
        let params = MemoryParams::from_test(ctx.test)?;
        let out = run_memory(&params)?;
        let pinned: Vec<String> =
            out.workers.iter().map(|w| w.cpu.map(|c| c.to_string()).unwrap_or_else(|| "-".into())).collect();
        ctx.note("memory.pinning", pinned.join(","));
        ctx.record_series("accesses_done", out.workers.iter().map(|w| w.accesses as f64), "accesses")?;
        ctx.record("bytes_done", (out.accesses() * WORD as u64) as f64, "bytes")?;
        ctx.record(ELAPSED_NS, out.elapsed_ns as f64, "ns")?;
        ctx.record("checksum_lo", (out.checksum() & 0xffff_ffff) as f64, "")?;
        Ok(())
    }

    fn clean(&mut self, _ctx: &mut PhaseContext) -> Result<()> {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(op: MemOp, pattern: Pattern, size: u64, threads: usize, budget: Budget) -> MemoryParams {
        MemoryParams { operation: op, object_size: size, pattern, threads, budget, seed: 9, pin: false }
    }

    #[test]
    fn sixteen_kib_is_2048_words_and_wraps() {
        let buf = MemoryBuffer::allocate(16 << 10).unwrap();
        assert_eq!(buf.len(), 2048);
        let mut c = SeqCursor::new(region(2048, 1, 0));
        let visited: Vec<usize> = (0..2049).map(|_| c.next_index()).collect();
        assert_eq!(visited[2047], 2047);
        assert_eq!(visited[2048], 0);
    }

    #[test]
    fn regions_partition_the_buffer() {
        for (words, threads) in [(10, 3), (2048, 4), (7, 7), (1000, 6)] {
            let mut next = 0;
            for w in 0..threads {
                let (s, e) = region(words, threads, w);
                assert_eq!(s, next);
                assert!(e > s);
                next = e;
            }
            assert_eq!(next, words);
        }
    }

    #[test]
    fn misaligned_size_is_rejected() {
        assert_eq!(MemoryBuffer::allocate(12).err(), Some(MemoryError::SizeNotWordAligned(12)));
    }

    #[test]
    fn sequential_write_then_readback() {
        let buf = MemoryBuffer::allocate(64 << 10).unwrap();
        let p = params(MemOp::Write, Pattern::Sequential, 64 << 10, 1, Budget::Accesses(8192));
        let out = run_on(&buf, &p).unwrap();
        assert_eq!(out.accesses(), 8192);
        assert_eq!(buf.first_mismatch(9), None);
    }

    #[test]
    fn conservation_across_workers() {
        let p = params(MemOp::Read, Pattern::Random, 1 << 20, 3, Budget::Accesses(10_000));
        let out = run_memory(&p).unwrap();
        assert_eq!(out.workers.len(), 3);
        assert_eq!(out.accesses(), 30_000);
    }

    #[test]
    fn read_checksum_is_reproducible() {
        let p = params(MemOp::Read, Pattern::Random, 256 << 10, 2, Budget::Accesses(50_000));
        assert_eq!(run_memory(&p).unwrap().checksum(), run_memory(&p).unwrap().checksum());
    }

    #[test]
    fn duration_budget_stops() {
        let p = params(MemOp::Read, Pattern::Sequential, 16 << 10, 1, Budget::Duration(Duration::from_millis(20)));
        let out = run_memory(&p).unwrap();
        assert!(out.accesses() > 0);
        assert!(out.elapsed_ns >= 20_000_000);
    }
}
