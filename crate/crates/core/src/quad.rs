//! Quadrature rules.

use crate::scalar::{lit, Real};

/// Composite Simpson rule on uniformly spaced samples.
///
/// `values.len()` must be odd and at least 3.
pub fn simpson_uniform<T: Real>(values: &[T], h: T) -> T {
    let n = values.len();
    assert!(n >= 3 && n % 2 == 1, "simpson needs an odd number of samples");
    let mut s = values[0] + values[n - 1];
    for (i, &v) in values.iter().enumerate().take(n - 1).skip(1) {
        s += if i % 2 == 1 {
            lit::<T>(4.0) * v
        } else {
            lit::<T>(2.0) * v
        };
    }
    s * h / lit::<T>(3.0)
}

/// Trapezoid rule on arbitrary abscissae.
pub fn trapezoid<T: Real>(x: &[T], y: &[T]) -> T {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xw, yw)| lit::<T>(0.5) * (xw[1] - xw[0]) * (yw[0] + yw[1]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_is_exact_for_cubics() {
        let n = 11;
        let h = 0.2;
        let v: Vec<f64> = (0..n).map(|i| (i as f64 * h).powi(3)).collect();
        assert!((simpson_uniform(&v, h) - 2f64.powi(4) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn trapezoid_is_exact_for_lines() {
        let x: [f64; 3] = [0.0, 0.5, 2.0];
        let y: [f64; 3] = [1.0, 2.0, 5.0];
        assert!((trapezoid(&x, &y) - 6.0).abs() < 1e-14);
    }
}
