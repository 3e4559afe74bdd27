//! Named, counter-based random streams.
//!
//! A stream is identified by a 64-bit seed and a name. Forking a stream with an
//! index yields an independent child whose values depend only on
//! `(seed, name, index)`, never on how many values were drawn elsewhere. This
//! is what lets dropout masks, action noise and environment noise be replayed
//! independently of each other.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    key: u64,
    inner: ChaCha8Rng,
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a, stable across platforms and compiler versions.
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl RngStream {
    pub fn new(seed: u64, name: &str) -> Self {
        Self::from_key(seed, name_hash(name))
    }

    fn from_key(seed: u64, key: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(mix(seed));
        inner.set_stream(key);
        Self { seed, key, inner }
    }

    /// Child stream determined by this stream's identity and `index`.
    /// Does not consume values from `self`.
    pub fn fork(&self, index: u64) -> Self {
        Self::from_key(self.seed, mix(self.key ^ mix(index.wrapping_add(1))))
    }

    /// Child stream identified by a name instead of an index.
    pub fn child(&self, name: &str) -> Self {
        Self::from_key(self.seed, mix(self.key ^ name_hash(name)))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// `k` distinct indices drawn uniformly from `0..n`, in draw order.
    pub fn distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot draw {k} distinct values from {n}");
        // Partial Fisher-Yates.
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_values() {
        let mut a = RngStream::new(7, "dropout");
        let mut b = RngStream::new(7, "dropout");
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn names_and_forks_are_independent() {
        let mut a = RngStream::new(7, "dropout");
        let mut b = RngStream::new(7, "noise");
        assert_ne!(a.next_u64(), b.next_u64());

        let root = RngStream::new(1, "batch");
        let mut f0 = root.fork(0);
        let mut f1 = root.fork(1);
        assert_ne!(f0.next_u64(), f1.next_u64());
        // Forking does not depend on draws from the parent.
        let mut used = root.clone();
        used.next_u64();
        assert_eq!(root.fork(3).next_u64(), used.fork(3).next_u64());
    }

    #[test]
    fn distinct_draws_are_unique() {
        let mut r = RngStream::new(3, "subset");
        for _ in 0..200 {
            let mut d = r.distinct(10, 4);
            d.sort_unstable();
            d.dedup();
            assert_eq!(d.len(), 4);
            assert!(d.iter().all(|&i| i < 10));
        }
    }
}
