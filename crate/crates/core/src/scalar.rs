use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar the numerical core is written against: `f32` or `f64`.
///
/// Everything statistical (distribution functions, random draws) is evaluated
/// in `f64` and converted, so only arithmetic has to be generic.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Converts an `f64` literal, panicking only if the target cannot hold it.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Sum of squares.
pub fn sum_sq<T: Real>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum()
}

pub fn mean<T: Real>(v: &[T]) -> T {
    if v.is_empty() {
        return T::zero();
    }
    v.iter().copied().sum::<T>() / T::from_usize_lossy(v.len())
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn sd<T: Real>(v: &[T]) -> T {
    if v.len() < 2 {
        return T::zero();
    }
    let m = mean(v);
    let ss: T = v.iter().map(|&x| (x - m) * (x - m)).sum();
    (ss / T::from_usize_lossy(v.len() - 1)).sqrt()
}

/// Median of the values (average of the two middle values for even length).
pub fn median<T: Real>(v: &[T]) -> T {
    if v.is_empty() {
        return T::zero();
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / T::lit(2.0)
    }
}

/// Median of a multiset given as values with non-negative integer multiplicities.
/// Rows with zero weight are ignored.
pub fn weighted_median<T: Real>(v: &[T], weights: &[u32]) -> T {
    let mut pairs: Vec<(T, u32)> = v
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0)
        .map(|(&x, &w)| (x, w))
        .collect();
    if pairs.is_empty() {
        return T::zero();
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let total: u64 = pairs.iter().map(|p| p.1 as u64).sum();
    let nth = |k: u64| -> T {
        let mut acc = 0u64;
        for &(x, w) in &pairs {
            acc += w as u64;
            if acc > k {
                return x;
            }
        }
        pairs[pairs.len() - 1].0
    };
    if total % 2 == 1 {
        nth(total / 2)
    } else {
        (nth(total / 2 - 1) + nth(total / 2)) / T::lit(2.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0f32, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn weighted_median_matches_expanded_multiset() {
        let v = [5.0, 1.0, 3.0, 2.0];
        let w = [2, 0, 1, 3];
        let expanded = [5.0, 5.0, 3.0, 2.0, 2.0, 2.0];
        assert_eq!(weighted_median(&v, &w), median(&expanded));
    }
}
