//! Deterministic random streams.
//!
//! Every random draw in the toolkit goes through [`Rng`], a xoshiro256**
//! generator whose 256-bit state is expanded from a 64-bit key by splitmix64.
//! The key combines a user seed with a stream id, so independent consumers
//! (a tilt sequence, a threshold map, one pixel's jitter) get reproducible,
//! non-overlapping sequences regardless of evaluation order or thread count.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256StarStar;

/// One step of splitmix64, used to decorrelate stream ids before keying.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    stream_id: u64,
    inner: Xoshiro256StarStar,
}

impl Rng {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let key = seed ^ splitmix64(stream_id);
        Rng {
            seed,
            stream_id,
            inner: Xoshiro256StarStar::seed_from_u64(key),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A child stream derived from this generator's seed. Does not advance `self`.
    pub fn substream(&self, stream_id: u64) -> Rng {
        Rng::new(
            self.seed ^ splitmix64(self.stream_id.wrapping_add(0x5851_F42D)),
            stream_id,
        )
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.inner.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }

    pub fn fill_standard_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.standard_normal();
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_sequence() {
        let mut a = Rng::new(7, 0);
        let mut b = Rng::new(7, 0);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_differ() {
        let mut a = Rng::new(7, 0);
        let mut b = Rng::new(7, 1);
        let va: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let vb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_ne!(va, vb);
    }

    // Frozen from the first run; guards against silent algorithm changes
    // (a dependency bump that swaps the generator would break reproducibility).
    #[test]
    fn frozen_prefix() {
        let mut r = Rng::new(7, 0);
        let got: Vec<u64> = (0..3).map(|_| r.next_u64()).collect();
        assert_eq!(got, FROZEN_SEED7_STREAM0);
    }

    const FROZEN_SEED7_STREAM0: [u64; 3] = [
        3822060276188950975,
        7870441586774305383,
        4044593800113012244,
    ];

    #[test]
    fn normal_moments() {
        let mut r = Rng::new(1, 2);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| r.standard_normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }
}
