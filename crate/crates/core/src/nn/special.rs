//! Scalar special functions shared by the layers, the variational weights
//! and the probabilistic metrics.

use std::f64::consts::{LN_2, SQRT_2};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        libm::exp(x)
    } else {
        libm::log1p(libm::exp(x))
    }
}

/// Inverse of [`softplus`] for `y > 0`.
#[inline]
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        libm::log(libm::expm1(y))
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * libm::exp(-0.5 * x * x)
}

/// Standard normal CDF through `erfc`, accurate to double precision in the
/// tails as well.
#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// `ln 2`, re-exported for tests of `softplus(0)`.
pub const SOFTPLUS_AT_ZERO: f64 = LN_2;
