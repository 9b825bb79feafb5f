//! Seeded randomness.
//!
//! All shuffles and draws go through SplitMix64 (64-bit state, Steele et
//! al.'s finalizer) so runs are reproducible on every platform. Bounded
//! integers use the widening-multiply reduction `(x * n) >> 64`, and
//! shuffles are Fisher-Yates from the last element down.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::features::fnv1a64;

pub struct SeededRng(SplitMix64);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self(SplitMix64::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "empty range");
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }

    /// Uniform real in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn coin(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// First `k` entries of a seeded shuffle of `0..n`.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n);
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    }
}

/// Per-stream seed: the run seed xor the FNV-1a hash of the stream id.
pub fn derive_seed(seed: u64, stream_id: &str) -> u64 {
    seed ^ fnv1a64(stream_id.as_bytes())
}
