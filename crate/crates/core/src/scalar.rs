//! Scalar abstraction shared by every numerical routine in the crate.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar the estimators are generic over (`f32` or `f64`).
///
/// Everything nalgebra needs for dense factorizations comes from
/// [`RealField`]; conversions to and from literal constants go through
/// num-traits.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    /// Converts a count into this scalar type.
    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn finite(self) -> bool {
        self.to_f64().is_some_and(f64::is_finite)
    }

    /// Machine epsilon of the scalar type.
    fn eps() -> Self;
}

impl Real for f32 {
    fn eps() -> Self {
        f32::EPSILON
    }
}

impl Real for f64 {
    fn eps() -> Self {
        f64::EPSILON
    }
}

/// Normal-consistency constant for the median absolute deviation.
pub const MAD_CONSISTENCY: f64 = 1.4826;

/// Median of a slice (average of the two middle order statistics for even length).
pub fn median<T: Real>(values: &[T]) -> T {
    assert!(!values.is_empty(), "median of empty slice");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("NaN in median input"));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) * T::lit(0.5)
    }
}

/// Raw median absolute deviation about the median (no consistency factor).
pub fn mad<T: Real>(values: &[T]) -> T {
    let med = median(values);
    let dev: Vec<T> = values.iter().map(|&x| (x - med).abs()).collect();
    median(&dev)
}

/// Normal-consistent robust scale: `1.4826 * MAD`.
pub fn robust_scale<T: Real>(values: &[T]) -> T {
    mad(values) * T::lit(MAD_CONSISTENCY)
}

/// Ceiling of `x` that ignores floating-point fuzz just above an integer,
/// so that e.g. `0.4 * 25.0` counts as 10 rather than 11.
pub fn fuzzy_ceil(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}
