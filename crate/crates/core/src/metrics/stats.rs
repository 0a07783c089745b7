//! Percentiles, summary statistics and rates.
//!
//! Everything here is generic over the sample type so the same code summarizes
//! integer nanosecond latencies and floating-point observations.

use std::cmp::Ordering;

use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::XorShift64Star;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no samples")]
    EmptySamples,
    #[error("quantile {0} outside [0, 1]")]
    QuantileOutOfRange(f64),
    #[error("samples contain an unordered value (NaN)")]
    Unordered,
    #[error("elapsed time is zero")]
    ZeroElapsed,
    #[error("value not representable as f64")]
    NotNumeric,
}

/// 1-based nearest rank of quantile `q` among `n` samples: `ceil(q * n)`,
/// clamped to `[1, n]` so that `q = 0` selects the minimum.
pub fn nearest_rank(q: f64, n: usize) -> usize {
    let rank = (q * n as f64).ceil() as usize;
    rank.clamp(1, n)
}

fn check_quantile(q: f64) -> Result<(), MetricsError> {
    if (0.0..=1.0).contains(&q) {
        Ok(())
    } else {
        Err(MetricsError::QuantileOutOfRange(q))
    }
}

fn total_cmp<T: PartialOrd>(a: &T, b: &T) -> Ordering {
    a.partial_cmp(b).unwrap_or(Ordering::Equal)
}

fn check_ordered<T: PartialOrd>(samples: &[T]) -> Result<(), MetricsError> {
    // x != x only for unordered values such as NaN.
    if samples.iter().any(|x| x.partial_cmp(x).is_none()) {
        Err(MetricsError::Unordered)
    } else {
        Ok(())
    }
}

/// Nearest-rank percentile: the `ceil(q * n)`-th smallest sample.
///
/// Runs in linear time via selection on a scratch copy.
pub fn percentile<T: Copy + PartialOrd>(samples: &[T], q: f64) -> Result<T, MetricsError> {
    check_quantile(q)?;
    if samples.is_empty() {
        return Err(MetricsError::EmptySamples);
    }
    check_ordered(samples)?;
    let mut scratch = samples.to_vec();
    let idx = nearest_rank(q, samples.len()) - 1;
    let (_, value, _) = scratch.select_nth_unstable_by(idx, total_cmp);
    Ok(*value)
}

/// Percentile of samples that are already sorted ascending.
pub fn percentile_sorted<T: Copy>(sorted: &[T], q: f64) -> Result<T, MetricsError> {
    check_quantile(q)?;
    if sorted.is_empty() {
        return Err(MetricsError::EmptySamples);
    }
    Ok(sorted[nearest_rank(q, sorted.len()) - 1])
}

/// Aggregate of one series of samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryStatistics<T> {
    pub count: u64,
    pub mean: f64,
    pub min: T,
    pub max: T,
    pub p50: T,
    pub p99: T,
}

impl<T: Copy + ToPrimitive> SummaryStatistics<T> {
    /// The same statistics expressed in `f64`.
    pub fn to_f64(&self) -> Option<SummaryStatistics<f64>> {
        Some(SummaryStatistics {
            count: self.count,
            mean: self.mean,
            min: self.min.to_f64()?,
            max: self.max.to_f64()?,
            p50: self.p50.to_f64()?,
            p99: self.p99.to_f64()?,
        })
    }
}

/// Computes count, mean, min, max, p50 and p99 of `samples`.
pub fn summarize<T>(samples: &[T]) -> Result<SummaryStatistics<T>, MetricsError>
where
    T: Copy + PartialOrd + ToPrimitive,
{
    if samples.is_empty() {
        return Err(MetricsError::EmptySamples);
    }
    check_ordered(samples)?;
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(total_cmp);
    let mut sum = 0.0f64;
    for v in samples {
        sum += v.to_f64().ok_or(MetricsError::NotNumeric)?;
    }
    let mut mean = sum / samples.len() as f64;
    let min = sorted[0];
    let max = sorted[sorted.len() - 1];
    // Rounding in the running sum can push the mean a hair outside [min, max].
    let (lo, hi) = (min.to_f64().unwrap_or(mean), max.to_f64().unwrap_or(mean));
    mean = mean.clamp(lo, hi);
    Ok(SummaryStatistics {
        count: samples.len() as u64,
        mean,
        min,
        max,
        p50: percentile_sorted(&sorted, 0.5)?,
        p99: percentile_sorted(&sorted, 0.99)?,
    })
}

/// A rate labelled `<unit>/s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub value: f64,
    pub unit: String,
}

/// `total_units / elapsed_seconds`.
pub fn compute_throughput<T: ToPrimitive>(
    total_units: T,
    elapsed_ns: u64,
    unit: &str,
) -> Result<Throughput, MetricsError> {
    if elapsed_ns == 0 {
        return Err(MetricsError::ZeroElapsed);
    }
    let total = total_units.to_f64().ok_or(MetricsError::NotNumeric)?;
    let seconds = elapsed_ns as f64 / 1e9;
    Ok(Throughput { value: total / seconds, unit: format!("{unit}/s") })
}

/// Default number of latency samples kept per test before reservoir sampling kicks in.
pub const DEFAULT_RESERVOIR_CAP: usize = 10_000_000;

/// Bounded sample buffer owned by one worker thread.
///
/// Keeps every observation until `cap` is reached, then switches to uniform
/// reservoir sampling (Algorithm R) so memory stays bounded on long runs.
#[derive(Clone, Debug)]
pub struct Reservoir<T> {
    cap: usize,
    seen: u64,
    samples: Vec<T>,
    rng: XorShift64Star,
}

impl<T> Reservoir<T> {
    pub fn new(cap: usize, seed: u64) -> Self {
        assert!(cap > 0, "reservoir capacity must be positive");
        Self { cap, seen: 0, samples: Vec::new(), rng: XorShift64Star::new(seed) }
    }

    pub fn with_default_cap(seed: u64) -> Self {
        Self::new(DEFAULT_RESERVOIR_CAP, seed)
    }

    #[inline]
    pub fn record(&mut self, value: T) {
        self.seen += 1;
        if self.samples.len() < self.cap {
            self.samples.push(value);
        } else {
            let slot = self.rng.below(self.seen);
            if (slot as usize) < self.cap {
                self.samples[slot as usize] = value;
            }
        }
    }

    /// Number of observations offered, including ones not retained.
    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn is_saturated(&self) -> bool {
        self.seen > self.cap as u64
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<T> {
        self.samples
    }

    /// Folds another worker's reservoir into this one (post-join merge).
    ///
    /// Once saturated, the merged reservoir under-weights the retained samples
    /// of a saturated `other`; fine for the per-test caps used here.
    pub fn merge(&mut self, other: Reservoir<T>) {
        let dropped = other.seen - other.samples.len() as u64;
        for v in other.samples {
            self.record(v);
        }
        self.seen += dropped;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_examples() {
        let hundred: Vec<u64> = (1..=100).map(|i| i * 10).collect();
        assert_eq!(percentile(&hundred, 0.99), Ok(990));
        assert_eq!(percentile(&[7u64], 0.0), Ok(7));
        assert_eq!(percentile(&[7u64], 0.37), Ok(7));
        assert_eq!(percentile(&[7u64], 1.0), Ok(7));
        assert_eq!(percentile(&[3, 1, 2], 0.5), Ok(2));
        assert_eq!(percentile(&[3.5, 1.5, 2.5], 0.0), Ok(1.5));
    }

    #[test]
    fn percentile_errors() {
        assert_eq!(percentile::<u64>(&[], 0.5), Err(MetricsError::EmptySamples));
        assert_eq!(percentile(&[1.0], 1.5), Err(MetricsError::QuantileOutOfRange(1.5)));
        assert_eq!(percentile(&[1.0, f64::NAN], 0.5), Err(MetricsError::Unordered));
    }

    #[test]
    fn summary_ordering() {
        let s = summarize(&[5u64, 1, 9, 3, 7]).unwrap();
        assert_eq!(s.count, 5);
        assert_eq!((s.min, s.p50, s.p99, s.max), (1, 5, 9, 9));
        assert_eq!(s.mean, 5.0);
        let f = s.to_f64().unwrap();
        assert_eq!(f.p50, 5.0);
    }

    #[test]
    fn throughput_examples() {
        let t = compute_throughput(1_000_000u64, 1_000_000_000, "ops").unwrap();
        assert_eq!(t.value, 1e6);
        assert_eq!(t.unit, "ops/s");
        let b = compute_throughput(1u64 << 30, 2_000_000_000, "bytes").unwrap();
        assert_eq!(b.value, (1u64 << 29) as f64);
        assert_eq!(compute_throughput(5u64, 0, "ops"), Err(MetricsError::ZeroElapsed));
    }

    #[test]
    fn reservoir_keeps_everything_under_cap() {
        let mut r = Reservoir::new(100, 1);
        for i in 0..50u64 {
            r.record(i);
        }
        assert_eq!(r.samples().len(), 50);
        assert_eq!(r.seen(), 50);
        assert!(!r.is_saturated());
    }

    #[test]
    fn reservoir_caps_memory() {
        let mut r = Reservoir::new(64, 1);
        for i in 0..10_000u64 {
            r.record(i);
        }
        assert_eq!(r.samples().len(), 64);
        assert_eq!(r.seen(), 10_000);
        assert!(r.is_saturated());
        // Later values must have displaced some early ones.
        assert!(r.samples().iter().any(|&v| v >= 64));
    }
}
