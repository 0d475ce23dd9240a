//! Floating-point abstraction for the model math.
//!
//! Training runs in `f32` for throughput; gradient verification runs in
//! `f64`, where central finite differences are meaningful. Everything the
//! encoder and head need beyond `ndarray`'s float bound is the error
//! function for the exact GELU.

use ndarray::NdFloat;
use num_traits::FromPrimitive;

/// Scalar type the model math is generic over (`f32` or `f64`).
pub trait Scalar: NdFloat + FromPrimitive + Send + Sync + 'static {
    fn erf(self) -> Self;
    fn from_f(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn erf(self) -> Self {
        libm::erff(self)
    }
    fn from_f(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    fn erf(self) -> Self {
        libm::erf(self)
    }
    fn from_f(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Exact GELU: `x * Phi(x)` with the standard normal CDF via `erf`.
pub fn gelu<S: Scalar>(x: S) -> S {
    let half = S::from_f(0.5);
    let inv_sqrt2 = S::from_f(std::f64::consts::FRAC_1_SQRT_2);
    x * half * (S::one() + (x * inv_sqrt2).erf())
}

/// Derivative of the exact GELU: `Phi(x) + x * phi(x)`.
pub fn gelu_prime<S: Scalar>(x: S) -> S {
    let half = S::from_f(0.5);
    let inv_sqrt2 = S::from_f(std::f64::consts::FRAC_1_SQRT_2);
    let inv_sqrt_2pi = S::from_f(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    let cdf = half * (S::one() + (x * inv_sqrt2).erf());
    let pdf = inv_sqrt_2pi * (-half * x * x).exp();
    cdf + x * pdf
}
