//! Shared fixtures for the benchmarks.

use netcast::rng::Rng;

/// `n` rows of `d` standard normal draws.
pub fn normal_rows(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
    let mut rng = Rng::new(seed);
    (0..n).map(|_| rng.normal_vec(d)).collect()
}

/// Gaussian forecasts with observations drawn from them.
pub fn forecasts(seed: u64, t: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut rng = Rng::new(seed);
    let mu = rng.normal_vec(t);
    let sigma: Vec<f64> = (0..t).map(|_| 0.1 + rng.uniform()).collect();
    let obs = mu.iter().zip(&sigma).map(|(m, s)| m + s * rng.normal()).collect();
    (mu, sigma, obs)
}
