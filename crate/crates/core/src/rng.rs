//! Counter-based deterministic random numbers.
//!
//! Every output is a pure function of `(key, counter)`, so a stream can be
//! forked, replayed or handed to another thread without sharing state. The
//! mixer is the SplitMix64 finalizer applied twice; it is fast and has no
//! platform-dependent behaviour. Not suitable for anything security related.

use crate::nn::Tensor;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn hash2(key: u64, counter: u64) -> u64 {
    mix(key.wrapping_add(mix(counter.wrapping_add(GOLDEN))))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
    key: u64,
    counter: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            key: mix(seed ^ 0x5EED_5EED_5EED_5EED),
            counter: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 64-bit words consumed so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Independent child stream. Forking does not advance `self`.
    pub fn fork(&self, stream: u64) -> Rng {
        Rng {
            seed: self.seed,
            key: mix(self.key ^ mix(stream.wrapping_mul(GOLDEN).wrapping_add(1))),
            counter: 0,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = hash2(self.key, self.counter);
        self.counter = self.counter.wrapping_add(1);
        v
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Lemire's multiply-shift; the tiny bias is irrelevant here.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal draw via Box-Muller (cosine branch only, so every
    /// draw consumes exactly two words).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(std::f64::consts::TAU * u2)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.normal();
        }
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Tensor of i.i.d. standard normal draws.
pub fn gaussian(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), rng.normal_vec(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert_eq!(a.counter(), 100);
    }

    #[test]
    fn forks_are_distinct_and_stable() {
        let base = Rng::new(1);
        let mut f1 = base.fork(1);
        let mut f2 = base.fork(2);
        let mut f1b = base.fork(1);
        let x1 = f1.next_u64();
        assert_ne!(x1, f2.next_u64());
        assert_eq!(x1, f1b.next_u64());
        assert_eq!(base.counter(), 0);
    }

    #[test]
    fn normal_moments() {
        let mut rng = Rng::new(7);
        let n = 200_000;
        let xs = rng.normal_vec(n);
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn uniform_range_and_below() {
        let mut rng = Rng::new(3);
        for _ in 0..10_000 {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
            assert!(rng.below(7) < 7);
        }
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut rng = Rng::new(9);
        let mut v: Vec<usize> = (0..50).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }
}
