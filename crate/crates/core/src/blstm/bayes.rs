//! Factorized Gaussian weight posteriors with the reparameterization
//! `θ = μ + softplus(ρ) ⊙ ε`, their KL divergence to a zero-mean Gaussian
//! prior, and the per-step Gaussian likelihood.

use crate::nn::{sigmoid, softplus, Parameter, Tensor};
use crate::rng::Rng;

use super::BlstmError;

/// Posterior mean and unconstrained scale for a flat block of weights.
#[derive(Clone, Debug, PartialEq)]
pub struct BayesianWeight {
    pub mu: Parameter,
    pub rho: Parameter,
}

/// One concrete draw together with the noise that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledWeights {
    pub theta: Vec<f64>,
    pub eps: Vec<f64>,
}

impl BayesianWeight {
    pub fn new(mu: Tensor, rho: Tensor) -> Result<Self, BlstmError> {
        if mu.shape() != rho.shape() {
            return Err(BlstmError::Shape(format!(
                "mu {:?} vs rho {:?}",
                mu.shape(),
                rho.shape()
            )));
        }
        Ok(Self {
            mu: Parameter::new(mu),
            rho: Parameter::new(rho),
        })
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// Posterior standard deviations `softplus(ρ)`.
    pub fn sigma(&self) -> Vec<f64> {
        self.rho.value.data().iter().map(|&r| softplus(r)).collect()
    }

    /// `θ = μ + softplus(ρ) ⊙ ε` for given noise.
    pub fn theta(&self, eps: &[f64]) -> Vec<f64> {
        self.mu
            .value
            .data()
            .iter()
            .zip(self.rho.value.data())
            .zip(eps)
            .map(|((&m, &r), &e)| m + softplus(r) * e)
            .collect()
    }

    /// Accumulates `dμ += dθ` and `dρ += dθ ε sigmoid(ρ)`.
    pub fn backprop(&mut self, dtheta: &[f64], eps: &[f64], scale: f64) {
        let rho = self.rho.value.data().to_vec();
        for (g, &d) in self.mu.grad.data_mut().iter_mut().zip(dtheta) {
            *g += scale * d;
        }
        for (((g, &d), &e), &r) in self.rho.grad.data_mut().iter_mut().zip(dtheta).zip(eps).zip(&rho) {
            *g += scale * d * e * sigmoid(r);
        }
    }

    /// Accumulates `scale · ∇ KL` into both gradients.
    pub fn kl_backward(&mut self, prior_sigma: f64, scale: f64) {
        let p2 = prior_sigma * prior_sigma;
        let rho = self.rho.value.data().to_vec();
        for (g, &m) in self.mu.grad.data_mut().iter_mut().zip(self.mu.value.data()) {
            *g += scale * m / p2;
        }
        for (g, &r) in self.rho.grad.data_mut().iter_mut().zip(&rho) {
            let s = softplus(r);
            *g += scale * (-1.0 / s + s / p2) * sigmoid(r);
        }
    }
}

/// Draws standard normal noise and the corresponding weights.
pub fn sample_weights(w: &BayesianWeight, rng: &mut Rng) -> SampledWeights {
    let eps = rng.normal_vec(w.len());
    SampledWeights {
        theta: w.theta(&eps),
        eps,
    }
}

/// `Σ_i KL(N(μ_i, σ_i²) ‖ N(0, σ_p²))` in closed form.
pub fn kl_gaussian(w: &BayesianWeight, prior_sigma: f64) -> f64 {
    let p2 = prior_sigma * prior_sigma;
    w.mu.value
        .data()
        .iter()
        .zip(w.rho.value.data())
        .map(|(&m, &r)| {
            let s = softplus(r);
            (prior_sigma / s).ln() + (s * s + m * m) / (2.0 * p2) - 0.5
        })
        .sum()
}

/// Per-step Gaussian negative log-likelihood in terms of the head outputs
/// `(m, ln σ²)`, dropping the constant. Returns `(loss, dL/dm, dL/d ln σ²)`.
/// σ is floored at `sigma_floor`; the floor blocks the gradient to `ln σ²`.
pub fn nll_step(m: f64, log_var: f64, y: f64, sigma_floor: f64) -> (f64, f64, f64) {
    let sigma = (0.5 * log_var).exp();
    let r = y - m;
    if sigma < sigma_floor {
        let v = sigma_floor * sigma_floor;
        (sigma_floor.ln() + r * r / (2.0 * v), -r / v, 0.0)
    } else {
        let inv_v = (-log_var).exp();
        (0.5 * log_var + 0.5 * r * r * inv_v, -r * inv_v, 0.5 - 0.5 * r * r * inv_v)
    }
}
