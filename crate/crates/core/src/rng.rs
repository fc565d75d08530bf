//! Splittable, counter-based random streams.
//!
//! A stream is identified by a root seed and a path of 64-bit labels
//! (replica, particle or pair id, purpose tag, ...). The path is hashed into a
//! ChaCha8 key, so the numbers drawn from a stream depend only on
//! `(seed, path)` and never on the order in which streams are created or on
//! which thread consumes them.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::real::{lit, Real};

/// Purpose tags appended to stream paths.
pub mod purpose {
    pub const INIT: u64 = 0x1001;
    pub const NOISE: u64 = 0x1002;
    pub const CLOCK: u64 = 0x1003;
    pub const THETA: u64 = 0x1004;
    pub const REFERENCE: u64 = 0x1005;
    pub const PARTNER: u64 = 0x1006;
    pub const GRAPH: u64 = 0x1007;
    pub const BOOTSTRAP: u64 = 0x1008;
    pub const SUBSAMPLE: u64 = 0x1009;
    pub const COLLATERAL: u64 = 0x100a;
    pub const QUANTILE: u64 = 0x100b;
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    seed: u64,
    path: Vec<u64>,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            path: Vec::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    /// Child stream whose path is this path followed by `label`.
    pub fn split(&self, label: u64) -> RngStream {
        let mut path = Vec::with_capacity(self.path.len() + 1);
        path.extend_from_slice(&self.path);
        path.push(label);
        RngStream {
            seed: self.seed,
            path,
        }
    }

    /// Convenience for splitting several labels in order.
    pub fn split_all(&self, labels: &[u64]) -> RngStream {
        labels.iter().fold(self.clone(), |s, &l| s.split(l))
    }

    fn key(&self) -> [u8; 32] {
        let mut h = mix64(self.seed ^ 0x6a09_e667_f3bc_c908);
        h = mix64(h ^ (self.path.len() as u64).wrapping_mul(GOLDEN));
        for &label in &self.path {
            h = mix64(h.wrapping_add(GOLDEN) ^ mix64(label ^ 0xbb67_ae85_84ca_a73b));
        }
        let mut key = [0u8; 32];
        for (w, chunk) in key.chunks_exact_mut(8).enumerate() {
            let word = mix64(h ^ (w as u64 + 1).wrapping_mul(0x3c6e_f372_fe94_f82b));
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        key
    }

    /// Generator positioned at the start of this stream.
    pub fn rng(&self) -> StreamRng {
        StreamRng {
            inner: ChaCha8Rng::from_seed(self.key()),
        }
    }
}

/// Generator attached to one [`RngStream`].
#[derive(Clone, Debug)]
pub struct StreamRng {
    inner: ChaCha8Rng,
}

impl StreamRng {
    /// Uniform on [0, 1).
    #[inline]
    pub fn uniform<T: Real>(&mut self) -> T {
        lit(self.inner.random::<f64>())
    }

    /// Uniform on (0, 1], safe under `ln`.
    #[inline]
    pub fn uniform_open<T: Real>(&mut self) -> T {
        lit(1.0 - self.inner.random::<f64>())
    }

    #[inline]
    pub fn normal<T: Real>(&mut self) -> T {
        let z: f64 = StandardNormal.sample(&mut self.inner);
        lit(z)
    }

    /// Exponential variate with the given rate.
    #[inline]
    pub fn exponential<T: Real>(&mut self, rate: T) -> T {
        let e: f64 = Exp1.sample(&mut self.inner);
        lit::<T>(e) / rate
    }

    /// Uniform index in `0..n`.
    #[inline]
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn fill_normal<T: Real>(&mut self, out: &mut [T]) {
        for o in out {
            *o = self.normal();
        }
    }
}

impl RngCore for StreamRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Evaluates `f(r, root.split(r))` for every replica in parallel.
///
/// Results come back in replica order, so aggregates do not depend on the
/// thread count.
pub fn run_replicas<R, F>(root: &RngStream, count: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize, RngStream) -> R + Sync + Send,
{
    use rayon::prelude::*;
    (0..count)
        .into_par_iter()
        .map(|r| f(r, root.split(r as u64)))
        .collect()
}

/// Stable 64-bit digest of a parameter vector, used in event logs.
pub fn digest<T: Real>(values: &[T]) -> u64 {
    values.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, v| {
        mix64(h ^ crate::real::to_f64(*v).to_bits())
    })
}
