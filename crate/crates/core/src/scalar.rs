//! Floating-point scalar abstraction shared by every model, filter and metric.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

/// Real scalar usable as the element type of states, covariances and weights.
///
/// Implemented for `f32` and `f64`. Random draws go through `f64`-independent
/// per-type samplers so that seeded runs are reproducible for each precision.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    /// Smallest positive normal value.
    const TINY: Self;
    /// Relative jitter factor applied to failed Cholesky factorizations.
    const JITTER: Self;
    const NEG_INFINITY: Self;

    fn standard_normal(rng: &mut dyn RngCore) -> Self;

    /// Uniform draw on `[0, 1)`.
    fn uniform(rng: &mut dyn RngCore) -> Self;

    /// Converts an `f64` literal or configuration value.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite f64 converts to every scalar type")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("usize converts to every scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).unwrap_or(f64::NAN)
    }

    #[inline]
    fn finite(self) -> bool {
        self.as_f64().is_finite()
    }
}

impl Scalar for f64 {
    const TINY: Self = f64::MIN_POSITIVE;
    const JITTER: Self = 1e-9;
    const NEG_INFINITY: Self = f64::NEG_INFINITY;

    #[inline]
    fn standard_normal(rng: &mut dyn RngCore) -> Self {
        StandardNormal.sample(rng)
    }

    #[inline]
    fn uniform(rng: &mut dyn RngCore) -> Self {
        rand::Rng::random::<f64>(rng)
    }
}

impl Scalar for f32 {
    const TINY: Self = f32::MIN_POSITIVE;
    // 1e-9 is below single-precision resolution.
    const JITTER: Self = 1e-6;
    const NEG_INFINITY: Self = f32::NEG_INFINITY;

    #[inline]
    fn standard_normal(rng: &mut dyn RngCore) -> Self {
        StandardNormal.sample(rng)
    }

    #[inline]
    fn uniform(rng: &mut dyn RngCore) -> Self {
        rand::Rng::random::<f32>(rng)
    }
}

/// `ln(sum(exp(x)))` with max subtraction. Returns `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp<T: Scalar>(values: &[T]) -> T {
    let max = values
        .iter()
        .copied()
        .filter(|v| !v.as_f64().is_nan())
        .fold(T::lit(f64::NEG_INFINITY), |acc, v| if v > acc { v } else { acc });
    if !max.finite() {
        return max;
    }
    let mut total = T::zero();
    for &v in values {
        if !v.as_f64().is_nan() {
            total += (v - max).exp();
        }
    }
    max + total.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_matches_direct_sum() {
        let v = [0.1f64, -2.0, 3.5];
        let direct: f64 = v.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&v) - direct).abs() < 1e-14);
    }

    #[test]
    fn log_sum_exp_survives_underflow() {
        let v = [-2000.0f64, -2001.0];
        let expected = -2000.0 + (1.0 + (-1.0f64).exp()).ln();
        assert!((log_sum_exp(&v) - expected).abs() < 1e-12);
        assert_eq!(log_sum_exp::<f64>(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp::<f64>(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn literal_round_trip_f32() {
        assert_eq!(f32::lit(0.25), 0.25f32);
        assert_eq!(f32::lit(1.5).as_f64(), 1.5);
    }
}
