//! Seeded pseudo-random generators shared by all built-in tasks.
//!
//! Every generated workload in the harness (operands, access indices, file
//! content, table permutations, key streams) derives from [`XorShift64Star`] so
//! that a seed fully determines the workload.

/// Multiplier of the xorshift64* output function.
pub const XORSHIFT_MULTIPLIER: u64 = 0x2545_f491_4f6c_dd1d;

const ZERO_STATE_REPLACEMENT: u64 = 0x9e37_79b9_7f4a_7c15;

/// One step of splitmix64. Used to spread user seeds over the state space.
#[inline]
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// xorshift64* (Marsaglia shifts 12/25/27, Vigna multiplier).
///
/// The initial state is `splitmix64(seed)`; a zero state is replaced by a
/// fixed non-zero constant since xorshift never leaves zero.
#[derive(Clone, Debug)]
pub struct XorShift64Star {
    state: u64,
}

impl XorShift64Star {
    pub fn new(seed: u64) -> Self {
        let state = match splitmix64(seed) {
            0 => ZERO_STATE_REPLACEMENT,
            s => s,
        };
        Self { state }
    }

    /// Generator for worker `index` of a multi-worker run seeded with `seed`.
    pub fn for_worker(seed: u64, index: u64) -> Self {
        Self::new(seed ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(XORSHIFT_MULTIPLIER)
    }

    /// Uniform value in `[0, n)` by multiplicative range reduction.
    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Uniform double in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Fills `buf` with generator output, eight little-endian bytes per draw.
    pub fn fill_bytes(&mut self, buf: &mut [u8]) {
        let mut chunks = buf.chunks_exact_mut(8);
        for chunk in &mut chunks {
            chunk.copy_from_slice(&self.next_u64().to_le_bytes());
        }
        let rest = chunks.into_remainder();
        if !rest.is_empty() {
            let word = self.next_u64().to_le_bytes();
            rest.copy_from_slice(&word[..rest.len()]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_seed_is_usable() {
        let mut rng = XorShift64Star::new(0);
        let a = rng.next_u64();
        let b = rng.next_u64();
        assert_ne!(a, b);
    }

    #[test]
    fn below_stays_in_range() {
        let mut rng = XorShift64Star::new(42);
        for n in [1u64, 2, 3, 7, 2048, u64::MAX] {
            for _ in 0..1000 {
                assert!(rng.below(n) < n);
            }
        }
    }

    #[test]
    fn unit_interval() {
        let mut rng = XorShift64Star::new(9);
        for _ in 0..10_000 {
            let x = rng.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn fill_bytes_matches_word_stream() {
        let mut a = XorShift64Star::new(5);
        let mut b = XorShift64Star::new(5);
        let mut buf = [0u8; 20];
        a.fill_bytes(&mut buf);
        assert_eq!(&buf[..8], &b.next_u64().to_le_bytes());
        assert_eq!(&buf[8..16], &b.next_u64().to_le_bytes());
        assert_eq!(&buf[16..], &b.next_u64().to_le_bytes()[..4]);
    }
}
