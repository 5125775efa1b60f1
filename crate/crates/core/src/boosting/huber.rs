use crate::scalar::{median, weighted_median, Real};

/// Huber loss: quadratic up to `delta`, linear beyond.
pub fn huber_loss<T: Real>(r: T, delta: T) -> T {
    let a = r.abs();
    if a <= delta {
        T::lit(0.5) * r * r
    } else {
        delta * (a - T::lit(0.5) * delta)
    }
}

/// Negative gradient of the Huber loss at `f` with the threshold set to the
/// median absolute residual, returned alongside.
pub fn huber_gradient<T: Real>(y: &[T], f: &[T]) -> (Vec<T>, T) {
    assert_eq!(y.len(), f.len(), "huber_gradient: length mismatch");
    let r: Vec<T> = y.iter().zip(f).map(|(&a, &b)| a - b).collect();
    let delta = median(&r.iter().map(|v| v.abs()).collect::<Vec<_>>());
    (clip(&r, delta), delta)
}

/// As [`huber_gradient`], with the median taken over the multiset given by
/// integer case weights (rows with weight zero do not count).
pub fn huber_gradient_weighted<T: Real>(y: &[T], f: &[T], weights: &[u32]) -> (Vec<T>, T) {
    let r: Vec<T> = y.iter().zip(f).map(|(&a, &b)| a - b).collect();
    let delta = weighted_median(&r.iter().map(|v| v.abs()).collect::<Vec<_>>(), weights);
    (clip(&r, delta), delta)
}

fn clip<T: Real>(r: &[T], delta: T) -> Vec<T> {
    r.iter().map(|&v| if v.abs() <= delta { v } else { delta * v.signum() }).collect()
}

/// Weighted mean Huber loss; unit weights when `w` is `None`.
pub fn huber_risk<T: Real>(y: &[T], f: &[T], delta: T, w: Option<&[T]>) -> T {
    let mut num = T::zero();
    let mut den = T::zero();
    for i in 0..y.len() {
        let wi = w.map_or(T::one(), |w| w[i]);
        if wi == T::zero() {
            continue;
        }
        num = num + wi * huber_loss(y[i] - f[i], delta);
        den = den + wi;
    }
    if den > T::zero() {
        num / den
    } else {
        T::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let (g, d) = huber_gradient(&[-3.0, 1.0, 2.0], &[0.0; 3]);
        assert_eq!(d, 2.0);
        assert_eq!(g, vec![-2.0, 1.0, 2.0]);
    }

    #[test]
    fn perfect_fit() {
        let (g, d) = huber_gradient(&[1.0f32, 2.0], &[1.0, 2.0]);
        assert_eq!(d, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loss_is_continuous_at_threshold() {
        let d = 1.5f64;
        assert!((huber_loss(d, d) - huber_loss(d + 1e-12, d)).abs() < 1e-11);
    }
}
