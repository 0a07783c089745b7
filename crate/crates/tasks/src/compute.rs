//! Single-core arithmetic and string throughput.
//!
//! Every workload is a dependence chain: the result of operation `i` feeds an
//! operand of operation `i + 1`, and every result is folded into a 64-bit
//! checksum. A loop the compiler removed could not reproduce the checksum, so
//! the report phase recomputes it with [`reference`] and fails the test on a
//! mismatch.
//!
//! # Arithmetic chain
//!
//! With `r_i` the i-th draw of `XorShift64Star::new(seed)`:
//!
//! * the chain starts from `prev = operand(r_0)`;
//! * step `i >= 1` computes `prev = op(operand(r_i), feed(prev))`;
//! * `checksum = fold(h, bits(prev))` after every step, `h` starting at the
//!   FNV-1a offset basis and `fold(h, v) = (h ^ v) * 0x100000001b3`.
//!
//! | type   | `operand(r)`                                   | `feed(p)`                       | `bits(v)`            |
//! |--------|------------------------------------------------|---------------------------------|----------------------|
//! | int8   | top byte of `r`                                | `p` (add, sub); `p \| 1` (mul, div) | `v as u8`            |
//! | int128 | `r << 64 \| rotl(r, 32)`                       | same as int8                    | low word ^ high word |
//! | fp64   | `[1, 2)` with the top 52 bits of `r` as mantissa | `[1, 2)` with `p`'s mantissa    | IEEE bits            |
//!
//! Integer operations wrap; `p | 1` keeps divisors non-zero and stops
//! multiplication chains from collapsing to zero. Floating-point values stay in
//! `[1, 4)` or `(-1, 1)`, so no infinities or subnormals are produced.
//!
//! # String chain
//!
//! A corpus of 64 strings of `string_size` bytes shares one random base
//! string, each with one random position rewritten, so comparisons scan up to
//! the mutation. Step `i` draws `r = r_i ^ prev`, picks strings
//! `a = corpus[lo32(r) * 64 >> 32]`, `b = corpus[hi32(r) * 64 >> 32]`, computes
//! a value `v`, sets `prev = v` and folds `v` into the checksum:
//!
//! * `cmp`: three-way byte comparison of `a` and `b` as `-1/0/1` (sign-extended);
//! * `cat`: append `a` to a 16 KiB buffer (cleared first when it would
//!   overflow), `v = len << 8 | buf[(r >> 40) % len]`;
//! * `xfrm`: build the collation key of `a` (see [`collation_key`]),
//!   `v = key[hi32(r) % key_len] << 32 | key_len`.

use std::hint::black_box;
use std::str::FromStr;
use std::time::{Duration, Instant};

use anyhow::{bail, Result};
use bento_core::metrics::sample::ELAPSED_NS;
use bento_core::rng::XorShift64Star;
use bento_core::{
    MetricDef, ParamSpec, ParamValue, ParameterSchema, PhaseContext, ReportRow, RunContext, Task, TaskDescriptor,
    TaskKind, TestCase,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affinity;
use crate::util::{opt_str, opt_u64, req_str};

pub const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
pub const CORPUS_LEN: usize = 64;
pub const CAT_CAPACITY: usize = 16 * 1024;
const FP_ONE_BITS: u64 = 0x3ff0_0000_0000_0000;
const FP_MANTISSA: u64 = 0x000f_ffff_ffff_ffff;

/// Largest iteration count the report phase re-checks with the reference interpreter.
pub const VERIFY_LIMIT: u64 = 50_000_000;

#[inline(always)]
pub fn fold(h: u64, v: u64) -> u64 {
    (h ^ v).wrapping_mul(FNV_PRIME)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NumType {
    Int8,
    Int128,
    Fp64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrOp {
    Cmp,
    Cat,
    Xfrm,
}

pub const NUM_TYPES: [NumType; 3] = [NumType::Int8, NumType::Int128, NumType::Fp64];
pub const ARITH_OPS: [ArithOp; 4] = [ArithOp::Add, ArithOp::Sub, ArithOp::Mul, ArithOp::Div];
pub const STR_OPS: [StrOp; 3] = [StrOp::Cmp, StrOp::Cat, StrOp::Xfrm];
pub const STRING_SIZES: [usize; 4] = [10, 64, 256, 1024];

impl FromStr for NumType {
    type Err = ComputeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "int8" => Ok(NumType::Int8),
            "int128" => Ok(NumType::Int128),
            "fp64" => Ok(NumType::Fp64),
            _ => Err(ComputeError::UnknownName(s.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Workload {
    Arithmetic(NumType, ArithOp),
    String(usize, StrOp),
}

#[derive(Debug, Error, PartialEq)]
pub enum ComputeError {
    #[error("operation {op:?} cannot be combined with {operand}")]
    InvalidCombination { op: String, operand: String },
    #[error("exactly one of data_type and string_size must be given")]
    OperandKind,
    #[error("iterations must be at least 1")]
    EmptyWorkload,
    #[error("unknown name {0:?}")]
    UnknownName(String),
}

impl Workload {
    pub fn new(data_type: Option<&str>, string_size: Option<u64>, operation: &str) -> Result<Self, ComputeError> {
        let arith = match operation {
            "add" => Some(ArithOp::Add),
            "sub" => Some(ArithOp::Sub),
            "mul" => Some(ArithOp::Mul),
            "div" => Some(ArithOp::Div),
            _ => None,
        };
        let string = match operation {
            "cmp" => Some(StrOp::Cmp),
            "cat" => Some(StrOp::Cat),
            "xfrm" => Some(StrOp::Xfrm),
            _ => None,
        };
        if arith.is_none() && string.is_none() {
            return Err(ComputeError::UnknownName(operation.to_string()));
        }
        match (data_type, string_size) {
            (Some(t), None) => {
                let ty: NumType = t.parse()?;
                arith
                    .map(|op| Workload::Arithmetic(ty, op))
                    .ok_or_else(|| ComputeError::InvalidCombination { op: operation.into(), operand: t.into() })
            }
            (None, Some(size)) => string.map(|op| Workload::String(size as usize, op)).ok_or_else(|| {
                ComputeError::InvalidCombination { op: operation.into(), operand: format!("str{size}") }
            }),
            _ => Err(ComputeError::OperandKind),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComputeParams {
    pub workload: Workload,
    /// `None` calibrates the count so the timed run lasts at least `target`.
    pub iterations: Option<u64>,
    pub seed: u64,
    pub target: Duration,
}

impl ComputeParams {
    pub fn from_test(test: &TestCase) -> Result<Self> {
        let workload =
            Workload::new(opt_str(test, "data_type")?, opt_u64(test, "string_size")?, req_str(test, "operation")?)?;
        let iterations = opt_u64(test, "iterations")?;
        if iterations == Some(0) {
            return Err(ComputeError::EmptyWorkload.into());
        }
        Ok(Self {
            workload,
            iterations,
            seed: opt_u64(test, "seed")?.unwrap_or(1),
            target: Duration::from_millis(opt_u64(test, "target_ms")?.unwrap_or(200)),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComputeOutcome {
    pub workload: Workload,
    pub seed: u64,
    pub ops_completed: u64,
    pub elapsed_ns: u64,
    pub checksum: u64,
}

impl ComputeOutcome {
    pub fn ops_per_second(&self) -> f64 {
        self.ops_completed as f64 / (self.elapsed_ns as f64 / 1e9)
    }
}

// ---------------------------------------------------------------------------
// Arithmetic kernels

trait Operand: Copy {
    fn from_draw(r: u64) -> Self;
    fn bits(self) -> u64;
}

impl Operand for i8 {
    #[inline(always)]
    fn from_draw(r: u64) -> Self {
        (r >> 56) as u8 as i8
    }
    #[inline(always)]
    fn bits(self) -> u64 {
        self as u8 as u64
    }
}

impl Operand for i128 {
    #[inline(always)]
    fn from_draw(r: u64) -> Self {
        (((r as u128) << 64) | r.rotate_left(32) as u128) as i128
    }
    #[inline(always)]
    fn bits(self) -> u64 {
        let u = self as u128;
        (u as u64) ^ ((u >> 64) as u64)
    }
}

impl Operand for f64 {
    #[inline(always)]
    fn from_draw(r: u64) -> Self {
        f64::from_bits(FP_ONE_BITS | (r >> 12))
    }
    #[inline(always)]
    fn bits(self) -> u64 {
        self.to_bits()
    }
}

#[inline(always)]
fn fp_feed(p: f64) -> f64 {
    f64::from_bits(FP_ONE_BITS | (p.to_bits() & FP_MANTISSA))
}

#[inline(always)]
fn chain<T: Operand>(iterations: u64, seed: u64, feed: impl Fn(T) -> T, op: impl Fn(T, T) -> T) -> u64 {
    let mut rng = XorShift64Star::new(seed);
    let mut prev = T::from_draw(rng.next_u64());
    let mut h = FNV_OFFSET;
    for _ in 0..iterations {
        let a = T::from_draw(rng.next_u64());
        prev = op(a, feed(prev));
        h = fold(h, prev.bits());
    }
    black_box(h)
}

/// Runs the arithmetic chain and returns its checksum.
pub fn arithmetic_chain(ty: NumType, op: ArithOp, iterations: u64, seed: u64) -> u64 {
    use ArithOp::*;
    match (ty, op) {
        (NumType::Int8, Add) => chain::<i8>(iterations, seed, |p| p, i8::wrapping_add),
        (NumType::Int8, Sub) => chain::<i8>(iterations, seed, |p| p, i8::wrapping_sub),
        (NumType::Int8, Mul) => chain::<i8>(iterations, seed, |p| p | 1, i8::wrapping_mul),
        (NumType::Int8, Div) => chain::<i8>(iterations, seed, |p| p | 1, i8::wrapping_div),
        (NumType::Int128, Add) => chain::<i128>(iterations, seed, |p| p, i128::wrapping_add),
        (NumType::Int128, Sub) => chain::<i128>(iterations, seed, |p| p, i128::wrapping_sub),
        (NumType::Int128, Mul) => chain::<i128>(iterations, seed, |p| p | 1, i128::wrapping_mul),
        (NumType::Int128, Div) => chain::<i128>(iterations, seed, |p| p | 1, i128::wrapping_div),
        (NumType::Fp64, Add) => chain::<f64>(iterations, seed, fp_feed, |a, b| a + b),
        (NumType::Fp64, Sub) => chain::<f64>(iterations, seed, fp_feed, |a, b| a - b),
        (NumType::Fp64, Mul) => chain::<f64>(iterations, seed, fp_feed, |a, b| a * b),
        (NumType::Fp64, Div) => chain::<f64>(iterations, seed, fp_feed, |a, b| a / b),
    }
}

// ---------------------------------------------------------------------------
// String kernels

const ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789 .,-_";

/// The 64-string corpus for `size`-byte strings; the first draws of the seed's stream.
pub fn string_corpus(size: usize, rng: &mut XorShift64Star) -> Vec<Vec<u8>> {
    let pick = |rng: &mut XorShift64Star| ALPHABET[rng.below(ALPHABET.len() as u64) as usize];
    let base: Vec<u8> = (0..size).map(|_| pick(rng)).collect();
    (0..CORPUS_LEN)
        .map(|_| {
            let mut s = base.clone();
            let pos = rng.below(size as u64) as usize;
            s[pos] = pick(rng);
            s
        })
        .collect()
}

/// Sort weight of a case-folded byte: separators, then digits, then letters,
/// then everything else in byte order.
const fn weight(b: u8) -> u8 {
    match b {
        b' ' => 0x10,
        b'.' => 0x11,
        b',' => 0x12,
        b'-' => 0x13,
        b'_' => 0x14,
        b'0'..=b'9' => 0x20 + (b - b'0'),
        b'a'..=b'z' => 0x30 + (b - b'a'),
        0x80..=0xff => b,
        _ => 0x50 + (b & 0x1f),
    }
}

const WEIGHTS: [u8; 256] = {
    let mut t = [0u8; 256];
    let mut i = 0;
    while i < 256 {
        t[i] = weight((i as u8).to_ascii_lowercase());
        i += 1;
    }
    t
};

/// Locale-independent collation key: ASCII case fold, then one primary
/// weight per byte, then a zero terminator. Keys compare bytewise in the
/// intended collation order.
pub fn collation_key(input: &[u8], out: &mut Vec<u8>) {
    out.clear();
    out.extend(input.iter().map(|&b| WEIGHTS[b as usize]));
    out.push(0);
}

/// `-1`, `0` or `1` as the checksum sees it.
#[inline(always)]
pub fn cmp_value(a: &[u8], b: &[u8]) -> u64 {
    (a.cmp(b) as i8 as i64) as u64
}

#[inline(always)]
fn pick_pair(r: u64) -> (usize, usize) {
    let n = CORPUS_LEN as u64;
    ((((r & 0xffff_ffff) * n) >> 32) as usize, (((r >> 32) * n) >> 32) as usize)
}

pub fn string_chain(size: usize, op: StrOp, iterations: u64, seed: u64) -> u64 {
    let mut rng = XorShift64Star::new(seed);
    let corpus = string_corpus(size, &mut rng);
    string_chain_with(&corpus, op, iterations, &mut rng)
}

fn string_chain_with(corpus: &[Vec<u8>], op: StrOp, iterations: u64, rng: &mut XorShift64Star) -> u64 {
    let mut h = FNV_OFFSET;
    let mut prev = 0u64;
    match op {
        StrOp::Cmp => {
            for _ in 0..iterations {
                let r = rng.next_u64() ^ prev;
                let (i, j) = pick_pair(r);
                prev = cmp_value(&corpus[i], &corpus[j]);
                h = fold(h, prev);
            }
        }
        StrOp::Cat => {
            let mut buf: Vec<u8> = Vec::with_capacity(CAT_CAPACITY);
            for _ in 0..iterations {
                let r = rng.next_u64() ^ prev;
                let (i, _) = pick_pair(r);
                let s = &corpus[i];
                if buf.len() + s.len() > CAT_CAPACITY {
                    buf.clear();
                }
                buf.extend_from_slice(s);
                let len = buf.len() as u64;
                prev = (len << 8) | buf[((r >> 40) % len) as usize] as u64;
                h = fold(h, prev);
            }
        }
        StrOp::Xfrm => {
            let mut key = Vec::with_capacity(corpus[0].len() + 1);
            for _ in 0..iterations {
                let r = rng.next_u64() ^ prev;
                let (i, _) = pick_pair(r);
                collation_key(&corpus[i], &mut key);
                let len = key.len() as u64;
                prev = ((key[((r >> 32) % len) as usize] as u64) << 32) | len;
                h = fold(h, prev);
            }
        }
    }
    black_box(h)
}

/// Runs `iterations` operations and times them.
pub fn run_workload(workload: Workload, iterations: u64, seed: u64) -> Result<ComputeOutcome, ComputeError> {
    if iterations == 0 {
        return Err(ComputeError::EmptyWorkload);
    }
    let (checksum, elapsed) = match workload {
        Workload::Arithmetic(ty, op) => {
            let start = Instant::now();
            let c = arithmetic_chain(ty, op, black_box(iterations), seed);
            (c, start.elapsed())
        }
        Workload::String(size, op) => {
            // corpus generation belongs to preparation, not to the timed loop
            let mut rng = XorShift64Star::new(seed);
            let corpus = string_corpus(size, &mut rng);
            let start = Instant::now();
            let c = string_chain_with(&corpus, op, black_box(iterations), &mut rng);
            (c, start.elapsed())
        }
    };
    Ok(ComputeOutcome {
        workload,
        seed,
        ops_completed: iterations,
        elapsed_ns: (elapsed.as_nanos() as u64).max(1),
        checksum,
    })
}

/// Arithmetic entry point.
pub fn run_arithmetic(params: &ComputeParams) -> Result<ComputeOutcome, ComputeError> {
    if !matches!(params.workload, Workload::Arithmetic(..)) {
        return Err(ComputeError::InvalidCombination { op: "string".into(), operand: "numeric type".into() });
    }
    run_calibrated(params)
}

/// String entry point.
pub fn run_string(params: &ComputeParams) -> Result<ComputeOutcome, ComputeError> {
    if !matches!(params.workload, Workload::String(..)) {
        return Err(ComputeError::InvalidCombination { op: "arithmetic".into(), operand: "string size".into() });
    }
    run_calibrated(params)
}

/// Picks an iteration count whose run lasts at least `target`: pilot runs grow
/// until one lasts a millisecond, then the count is scaled up.
pub fn calibrate(workload: Workload, seed: u64, target: Duration) -> u64 {
    let mut iterations = 1024u64;
    loop {
        let pilot = run_workload(workload, iterations, seed).expect("non-zero iterations");
        if pilot.elapsed_ns >= 1_000_000 || iterations >= 1 << 40 {
            let scale = target.as_nanos() as f64 / pilot.elapsed_ns as f64;
            return ((iterations as f64 * scale).ceil() as u64).max(1);
        }
        iterations *= 4;
    }
}

fn run_calibrated(params: &ComputeParams) -> Result<ComputeOutcome, ComputeError> {
    let iterations = match params.iterations {
        Some(n) => n,
        None => calibrate(params.workload, params.seed, params.target),
    };
    run_workload(params.workload, iterations, params.seed)
}

/// Step-by-step interpreter of the same chains, used to verify kernels.
///
/// Each step goes through a generic value type and a runtime match on the
/// operation, so none of the kernels' monomorphized code paths are shared.
pub mod reference {
    use super::*;

    #[derive(Clone, Copy)]
    enum Value {
        I8(i8),
        I128(i128),
        F64(f64),
    }

    fn operand(ty: NumType, r: u64) -> Value {
        match ty {
            NumType::Int8 => Value::I8(<i8 as Operand>::from_draw(r)),
            NumType::Int128 => Value::I128(<i128 as Operand>::from_draw(r)),
            NumType::Fp64 => Value::F64(<f64 as Operand>::from_draw(r)),
        }
    }

    fn step(op: ArithOp, a: Value, prev: Value) -> Value {
        let odd = matches!(op, ArithOp::Mul | ArithOp::Div);
        match (a, prev) {
            (Value::I8(a), Value::I8(p)) => {
                let b = if odd { p | 1 } else { p };
                Value::I8(match op {
                    ArithOp::Add => a.wrapping_add(b),
                    ArithOp::Sub => a.wrapping_sub(b),
                    ArithOp::Mul => a.wrapping_mul(b),
                    ArithOp::Div => a.wrapping_div(b),
                })
            }
            (Value::I128(a), Value::I128(p)) => {
                let b = if odd { p | 1 } else { p };
                Value::I128(match op {
                    ArithOp::Add => a.wrapping_add(b),
                    ArithOp::Sub => a.wrapping_sub(b),
                    ArithOp::Mul => a.wrapping_mul(b),
                    ArithOp::Div => a.wrapping_div(b),
                })
            }
            (Value::F64(a), Value::F64(p)) => {
                let b = fp_feed(p);
                Value::F64(match op {
                    ArithOp::Add => a + b,
                    ArithOp::Sub => a - b,
                    ArithOp::Mul => a * b,
                    ArithOp::Div => a / b,
                })
            }
            _ => unreachable!("chains never mix types"),
        }
    }

    fn bits(v: Value) -> u64 {
        match v {
            Value::I8(x) => x.bits(),
            Value::I128(x) => x.bits(),
            Value::F64(x) => x.bits(),
        }
    }

    pub fn checksum(workload: Workload, iterations: u64, seed: u64) -> u64 {
        let mut rng = XorShift64Star::new(seed);
        match workload {
            Workload::Arithmetic(ty, op) => {
                let mut prev = operand(ty, rng.next_u64());
                let mut h = FNV_OFFSET;
                for _ in 0..iterations {
                    let a = operand(ty, rng.next_u64());
                    prev = step(op, a, prev);
                    h = fold(h, bits(prev));
                }
                h
            }
            Workload::String(size, op) => {
                let corpus = string_corpus(size, &mut rng);
                let mut h = FNV_OFFSET;
                let mut prev = 0u64;
                let mut buf: Vec<u8> = Vec::new();
                let mut key = Vec::new();
                for _ in 0..iterations {
                    let r = rng.next_u64() ^ prev;
                    let (i, j) = pick_pair(r);
                    prev = match op {
                        StrOp::Cmp => cmp_value(&corpus[i], &corpus[j]),
                        StrOp::Cat => {
                            if buf.len() + corpus[i].len() > CAT_CAPACITY {
                                buf.clear();
                            }
                            buf.extend_from_slice(&corpus[i]);
                            let len = buf.len() as u64;
                            (len << 8) | buf[((r >> 40) % len) as usize] as u64
                        }
                        StrOp::Xfrm => {
                            collation_key(&corpus[i], &mut key);
                            let len = key.len() as u64;
                            ((key[((r >> 32) % len) as usize] as u64) << 32) | len
                        }
                    };
                    h = fold(h, prev);
                }
                h
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Task

const OUTCOME_FILE: &str = "outcome.json";

pub struct ComputeTask {
    descriptor: TaskDescriptor,
}

impl Default for ComputeTask {
    fn default() -> Self {
        Self::new()
    }
}

impl ComputeTask {
    pub fn new() -> Self {
        let schema = ParameterSchema::new(vec![
            ParamSpec::enumeration("data_type", &["int8", "int128", "fp64"]),
            ParamSpec::int_set("string_size", &[10, 64, 256, 1024]),
            ParamSpec::enumeration("operation", &["add", "sub", "mul", "div", "cmp", "cat", "xfrm"]).required(),
            ParamSpec::int("iterations", 1, i64::MAX),
            ParamSpec::int("seed", 0, i64::MAX).default_value(ParamValue::Int(1)),
            ParamSpec::int("target_ms", 1, 600_000).default_value(ParamValue::Int(200)),
        ])
        .expect("static schema");
        Self {
            descriptor: TaskDescriptor {
                name: "compute".into(),
                schema,
                metrics: vec![MetricDef::rate("throughput", "ops_done", 1.0, "ops/s")],
                kind: TaskKind::Builtin,
            },
        }
    }
}

impl Task for ComputeTask {
    fn descriptor(&self) -> &TaskDescriptor {
        &self.descriptor
    }

    fn prepare(&mut self, _ctx: &mut PhaseContext, _tests: &[TestCase]) -> Result<()> {
        // Invalid combinations fail their own test in `run`, so a sweep that
        // crosses string ops with numeric types still measures the valid ones.
        Ok(())
    }

    fn run(&mut self, ctx: &mut RunContext<'_>) -> Result<()> {
        let params = ComputeParams::from_test(ctx.test)?;
        let (outcome, pinned) = std::thread::scope(|s| {
            s.spawn(|| {
                let pinned = affinity::pin_worker(0);
                (run_calibrated(&params), pinned)
            })
            .join()
            .expect("compute worker panicked")
        });
        let outcome = outcome?;
        ctx.note("compute.pinning", pinned.map(|c| format!("cpu {c}")).unwrap_or_else(|| "unpinned".into()));
        ctx.record("ops_done", outcome.ops_completed as f64, "ops")?;
        ctx.record(ELAPSED_NS, outcome.elapsed_ns as f64, "ns")?;
        std::fs::write(ctx.test_dir().join(OUTCOME_FILE), serde_json::to_vec_pretty(&outcome)?)?;
        Ok(())
    }

    fn report(&mut self, ctx: &mut PhaseContext, tests: &[TestCase]) -> Result<Vec<ReportRow>> {
        for test in tests {
            let dir = bento_core::metrics::aggregate::test_dir(ctx.workspace(), &self.descriptor.name, test.test_id);
            let Ok(text) = std::fs::read(dir.join(OUTCOME_FILE)) else { continue };
            let outcome: ComputeOutcome = serde_json::from_slice(&text)?;
            if outcome.ops_completed > VERIFY_LIMIT {
                ctx.note(format!("compute.verify.{}", test.test_id), "skipped (too many iterations)");
                continue;
            }
            let expected = reference::checksum(outcome.workload, outcome.ops_completed, outcome.seed);
            if expected != outcome.checksum {
                std::fs::write(
                    dir.join(bento_core::metrics::aggregate::ERROR_FILE),
                    format!("checksum mismatch: kernel {:#x}, reference {expected:#x}\n", outcome.checksum),
                )?;
            }
        }
        Ok(bento_core::metrics::aggregate_task(ctx.workspace(), &self.descriptor, tests))
    }

    fn clean(&mut self, _ctx: &mut PhaseContext) -> Result<()> {
        Ok(())
    }
}

/// Combination check used by callers that bypass the box schema.
pub fn validate(params: &ComputeParams) -> Result<()> {
    if let Workload::String(size, _) = params.workload {
        if size == 0 {
            bail!("string size must be positive");
        }
    }
    Ok(())
}
