//! Scalar root finding.

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// Brent's method on a bracket `[a, b]` with `f(a)·f(b) ≤ 0`.
///
/// Stops when the bracket is narrower than `xtol` (absolute) or `f` hits zero.
pub fn brent<T, F>(mut f: F, a: T, b: T, xtol: T, max_iter: usize) -> Result<T>
where
    T: Real,
    F: FnMut(T) -> Result<T>,
{
    let (mut a, mut b) = (a, b);
    let mut fa = f(a)?;
    let mut fb = f(b)?;
    if fa == T::zero() {
        return Ok(a);
    }
    if fb == T::zero() {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Numerical(format!(
            "root not bracketed on [{:e}, {:e}]",
            a.as_f64(),
            b.as_f64()
        )));
    }
    let two = lit::<T>(2.0);
    let half = lit::<T>(0.5);
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = two * T::epsilon() * b.abs() + half * xtol;
        let m = half * (c - b);
        if m.abs() <= tol || fb == T::zero() {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = two * m * s;
                q = T::one() - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (two * m * qa * (qa - r) - (b - a) * (r - T::one()));
                q = (qa - T::one()) * (r - T::one()) * (s - T::one());
            }
            if p > T::zero() {
                q = -q;
            } else {
                p = -p;
            }
            let min1 = lit::<T>(3.0) * m * q - (tol * q).abs();
            let min2 = (e * q).abs();
            if two * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = d;
            }
        } else {
            d = m;
            e = d;
        }
        a = b;
        fa = fb;
        b = if d.abs() > tol { b + d } else { b + tol * m.signum() };
        fb = f(b)?;
    }
    Err(Error::Numerical("brent: iteration limit".into()))
}

/// Plain bisection on a sign-changing bracket.
pub fn bisect<T, F>(mut f: F, mut a: T, mut b: T, xtol: T, max_iter: usize) -> Result<T>
where
    T: Real,
    F: FnMut(T) -> Result<T>,
{
    let fa = f(a)?;
    let fb = f(b)?;
    if fa == T::zero() {
        return Ok(a);
    }
    if fb == T::zero() {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Numerical("bisection: root not bracketed".into()));
    }
    let sa = fa.signum();
    for _ in 0..max_iter {
        let m = lit::<T>(0.5) * (a + b);
        if (b - a).abs() <= xtol {
            return Ok(m);
        }
        let fm = f(m)?;
        if fm == T::zero() {
            return Ok(m);
        }
        if fm.signum() == sa {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(lit::<T>(0.5) * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_cubic_root() {
        let r = brent(|x: f64| Ok(x * x * x - 2.0 * x - 5.0), 2.0, 3.0, 1e-14, 100).unwrap();
        assert!((r - 2.094_551_481_542_326_5).abs() < 1e-12);
    }

    #[test]
    fn bisect_agrees_with_brent() {
        let f = |x: f64| Ok(x.cos() - x);
        let a = brent(f, 0.0, 1.0, 1e-14, 100).unwrap();
        let b = bisect(f, 0.0, 1.0, 1e-14, 200).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn unbracketed_is_an_error() {
        assert!(brent(|x: f64| Ok(x * x + 1.0), -1.0, 1.0, 1e-12, 50).is_err());
    }
}
