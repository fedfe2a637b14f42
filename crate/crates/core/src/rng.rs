//! Reproducible random streams.
//!
//! A stream is identified by `(algorithm version, master seed, stream index)`.
//! The generator is ChaCha8 keyed by the master seed, with the stream index
//! selecting one of its 2^64 independent streams, so replicate `i` of a batch
//! sees the same numbers no matter which thread runs it.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Version tag recorded in every artifact that depends on random numbers.
pub const RNG_ALGORITHM: &str = "chacha8-seed_from_u64-stream-v1";

#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    index: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        Self { seed, index, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn algorithm(&self) -> &'static str {
        RNG_ALGORITHM
    }

    /// Uniform on `(0, 1]`.
    pub fn open_closed01(&mut self) -> f64 {
        // 53 random mantissa bits; (x + 1) / 2^53 never hits 0.
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[0, 1)`.
    pub fn closed_open01(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// `Exp(rate)` by inversion, `-ln(U) / rate` with `U` in `(0, 1]`.
    pub fn exponential(&mut self, rate: f64) -> f64 {
        -self.open_closed01().ln() / rate
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_coordinates_give_identical_sequences() {
        let mut a = RandomStream::new(42, 7);
        let mut b = RandomStream::new(42, 7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn distinct_indices_diverge() {
        let mut a = RandomStream::new(42, 0);
        let mut b = RandomStream::new(42, 1);
        let xs: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn frozen_first_output() {
        // Guards the version tag: changing the derivation must change RNG_ALGORITHM.
        let mut a = RandomStream::new(0, 0);
        assert_eq!(a.next_u64(), 13080132717333068652);
        assert_eq!(a.next_u64(), 8594738769458413623);
        let mut b = RandomStream::new(2024, 5);
        assert_eq!(b.next_u64(), 2969747986141882502);
    }

    #[test]
    fn uniform_ranges() {
        let mut s = RandomStream::new(3, 3);
        for _ in 0..10_000 {
            let u = s.open_closed01();
            assert!(u > 0.0 && u <= 1.0);
            let v = s.closed_open01();
            assert!((0.0..1.0).contains(&v));
        }
    }

    #[test]
    fn exponential_mean() {
        let mut s = RandomStream::new(5, 0);
        let n = 200_000;
        let mean = (0..n).map(|_| s.exponential(2.0)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 3.0 * 0.5 / (n as f64).sqrt());
    }

    #[test]
    fn streams_are_uncorrelated() {
        let n = 100_000;
        let mut a = RandomStream::new(9, 0);
        let mut b = RandomStream::new(9, 1);
        let pairs: Vec<(f64, f64)> = (0..n).map(|_| (a.closed_open01(), b.closed_open01())).collect();
        let cov = pairs.iter().map(|(x, y)| (x - 0.5) * (y - 0.5)).sum::<f64>() / n as f64;
        // Var of the product is 1/144; allow 4 standard errors.
        assert!(cov.abs() < 4.0 / 12.0 / (n as f64).sqrt());
    }
}
