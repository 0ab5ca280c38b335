//! Counter-based SplitMix64 generator.
//!
//! Draw `n` of a stream seeded with `seed` is `mix(seed + n * GAMMA)`, so a
//! `(seed, counter)` pair fully determines everything that follows and the
//! stream is identical on every platform.

use serde::{Deserialize, Serialize};

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash a label into a 64-bit value (FNV-1a followed by a final mix).
pub fn hash_label(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    mix64(h)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub counter: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    /// Independent child stream keyed by a label. Does not advance `self`.
    pub fn fork(&self, label: &str) -> Self {
        Self::new(mix64(self.seed ^ hash_label(label)).wrapping_add(self.counter))
    }

    /// Child stream keyed by an integer (item index, language index, ...).
    pub fn fork_index(&self, label: &str, index: u64) -> Self {
        Self::new(mix64(self.fork(label).seed ^ mix64(index.wrapping_add(GAMMA))))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.seed.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n). Uses rejection to avoid modulo bias.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    /// Uniform integer in [lo, hi] inclusive.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.below(hi - lo + 1)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Standard normal via Box-Muller (one draw per call, the pair's sine
    /// half is discarded to keep the state a pure counter).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Pick one element uniformly.
    pub fn choose<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len())]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_state_same_stream() {
        let mut a = RngState::new(42);
        let mut b = RngState::new(42);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = RngState { seed: 42, counter: 500 };
        let mut d = RngState::new(42);
        for _ in 0..500 {
            d.next_u64();
        }
        assert_eq!(c.next_u64(), d.next_u64());
    }

    #[test]
    fn frozen_stream_values() {
        // Pinned so any change to the generator is caught.
        let mut r = RngState::new(0);
        let first: Vec<u64> = (0..3).map(|_| r.next_u64()).collect();
        assert_eq!(first, vec![0xe220a8397b1dcdaf, 0x6e789e6aa1b965f4, 0x06c45d188009454f]);
    }

    #[test]
    fn forks_differ() {
        let r = RngState::new(7);
        assert_ne!(r.fork("a").next_u64_clone(), r.fork("b").next_u64_clone());
        assert_ne!(r.fork_index("x", 0).seed, r.fork_index("x", 1).seed);
    }

    #[test]
    fn uniform_in_range_and_below_unbiased_enough() {
        let mut r = RngState::new(3);
        let mut counts = [0usize; 4];
        for _ in 0..40_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
            counts[r.below(4)] += 1;
        }
        for c in counts {
            // 3 sigma on Binomial(40000, 1/4) is ~260
            assert!((c as i64 - 10_000).abs() < 300, "{counts:?}");
        }
    }

    impl RngState {
        fn next_u64_clone(&self) -> u64 {
            self.clone().next_u64()
        }
    }
}
