//! Seeded random streams with a fixed bit-level contract.
//!
//! Every random draw in the crate goes through [`DetRng`]. The contract is:
//!
//! * the generator is ChaCha8 keyed by `ChaCha8Rng::seed_from_u64(seed)`;
//! * `next_f64` is `(next_u64 >> 11) * 2^-53`, uniform on `[0, 1)`;
//! * `bernoulli(p)` consumes one `next_f64` and succeeds iff it is `< p`,
//!   so `p = 0` never and `p = 1` always succeeds;
//! * `index(n)` is Lemire's multiply-shift with rejection, consuming one or
//!   more `next_u64` values, exactly uniform on `0..n`;
//! * `normal()` is the cosine branch of Box-Muller over two `next_f64` draws
//!   (`u1 = 1 - next_f64()`, then `u2 = next_f64()`), no caching.
//!
//! Child seeds are derived with [`derive_seed`], a SplitMix64 finalizer chain.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of an independent child stream: `splitmix64(parent ^ splitmix64(tag))`.
pub fn derive_seed(parent: u64, tag: u64) -> u64 {
    splitmix64(parent ^ splitmix64(tag))
}

#[derive(Clone, Debug)]
pub struct DetRng {
    inner: ChaCha8Rng,
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream keyed by `derive_seed(seed, tag)`.
    pub fn stream(seed: u64, tag: u64) -> Self {
        Self::new(derive_seed(seed, tag))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Uniform index in `0..n`. Panics if `n == 0`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be nonempty");
        let n = n as u64;
        let mut m = u128::from(self.next_u64()) * u128::from(n);
        if (m as u64) < n {
            let threshold = n.wrapping_neg() % n;
            while (m as u64) < threshold {
                m = u128::from(self.next_u64()) * u128::from(n);
            }
        }
        (m >> 64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// In-place Fisher-Yates shuffle, walking from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = DetRng::new(7);
        let mut b = DetRng::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn derived_streams_differ() {
        assert_ne!(derive_seed(1, 1), derive_seed(1, 2));
        assert_ne!(derive_seed(1, 1), derive_seed(2, 1));
        let mut a = DetRng::stream(3, 1);
        let mut b = DetRng::stream(3, 2);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn bernoulli_extremes_are_exact() {
        let mut rng = DetRng::new(11);
        for _ in 0..10_000 {
            assert!(!rng.bernoulli(0.0));
            assert!(rng.bernoulli(1.0));
        }
    }

    #[test]
    fn index_stays_in_range() {
        let mut rng = DetRng::new(5);
        let mut seen = [0usize; 7];
        for _ in 0..7_000 {
            seen[rng.index(7)] += 1;
        }
        assert!(seen.iter().all(|&n| n > 800 && n < 1200), "{seen:?}");
    }

    #[test]
    fn normal_moments() {
        let mut rng = DetRng::new(99);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }
}
