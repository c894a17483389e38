//! Seeded random streams for Monte Carlo work.
//!
//! Work is cut into fixed-size chunks and chunk `c` draws from ChaCha stream
//! `c` of the seed, so results do not depend on how chunks are scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dyadic::BitIndex;

/// Samples per chunk for chunked Monte Carlo loops.
pub const CHUNK: usize = 4096;

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Uniform integer in `[0, 2^bits)`, `bits <= 128`.
pub fn random_u128(rng: &mut impl Rng, bits: u32) -> u128 {
    let v: u128 = rng.gen();
    if bits >= 128 {
        v
    } else {
        v & ((1u128 << bits) - 1)
    }
}

pub fn random_index(rng: &mut impl Rng, bits: u32) -> BitIndex {
    let words = (bits as usize).div_ceil(64).max(1);
    let mut limbs: Vec<u64> = (0..words).map(|_| rng.gen()).collect();
    let spare = words as u32 * 64 - bits;
    if spare > 0 {
        let last = limbs.last_mut().unwrap();
        *last = if spare >= 64 { 0 } else { *last & (u64::MAX >> spare) };
    }
    BitIndex::from_limbs(limbs)
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: u64,
}

impl Estimate {
    pub fn from_sums(sum: f64, sum_sq: f64, samples: u64) -> Self {
        if samples == 0 {
            return Self { mean: 0.0, stderr: 0.0, samples };
        }
        let n = samples as f64;
        let mean = sum / n;
        let var = if samples > 1 { ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
        Self { mean, stderr: (var / n).sqrt(), samples }
    }

    pub fn from_samples(xs: &[f64]) -> Self {
        let sum: f64 = xs.iter().sum();
        let sum_sq: f64 = xs.iter().map(|x| x * x).sum();
        Self::from_sums(sum, sum_sq, xs.len() as u64)
    }

    /// True when `value` lies within `k` standard errors of the mean.
    pub fn within(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.stderr + 1e-12 * value.abs().max(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| stream(1, 0).gen()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        let x: u64 = stream(1, 0).gen();
        let y: u64 = stream(1, 1).gen();
        assert_ne!(x, y);
    }

    #[test]
    fn random_index_respects_width() {
        let mut rng = stream(9, 0);
        for bits in [1u32, 5, 63, 64, 65, 130, 257] {
            for _ in 0..50 {
                assert!(random_index(&mut rng, bits).bit_len() <= bits);
            }
        }
        assert!(random_u128(&mut rng, 3) < 8);
    }

    #[test]
    fn estimate_basics() {
        let e = Estimate::from_samples(&[1.0, 3.0]);
        assert_eq!(e.mean, 2.0);
        assert!((e.stderr - 1.0).abs() < 1e-12);
        assert!(e.within(3.0, 1.0));
        assert!(!e.within(3.5, 1.0));
    }
}
