//! Adaptive Dormand-Prince 5(4) integration with dense sample storage.

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// First-order system `dy/dt = f(t, y)`.
pub trait OdeSystem<T: Real> {
    fn dim(&self) -> usize;
    fn rhs(&self, t: T, y: &[T], dy: &mut [T]) -> Result<()>;
}

/// Step-size control parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances<T> {
    pub rtol: T,
    pub atol: T,
    /// Initial step; chosen automatically when `None`.
    pub h_init: Option<T>,
    /// Largest step magnitude; unbounded when `None`.
    pub h_max: Option<T>,
    pub max_steps: usize,
}

impl<T: Real> Default for Tolerances<T> {
    fn default() -> Self {
        Self {
            rtol: lit(1e-9),
            atol: lit(1e-12),
            h_init: None,
            h_max: None,
            max_steps: 1_000_000,
        }
    }
}

impl<T: Real> Tolerances<T> {
    pub fn new(rtol: T, atol: T) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }

    pub fn with_h_max(mut self, h_max: T) -> Self {
        self.h_max = Some(h_max);
        self
    }
}

/// How an integration ended.
#[derive(Debug)]
pub enum Status {
    Completed,
    /// The right-hand side failed and no smaller step recovered.
    RhsFailed(Error),
    StepUnderflow,
    StepLimit,
}

impl Status {
    pub fn is_completed(&self) -> bool {
        matches!(self, Status::Completed)
    }
}

/// Accepted steps of an integration: times, states and derivatives.
#[derive(Debug)]
pub struct Trajectory<T> {
    pub t: Vec<T>,
    pub y: Vec<Vec<T>>,
    pub dy: Vec<Vec<T>>,
    pub status: Status,
    /// Suggested magnitude for a continuation step.
    pub h_next: Option<T>,
}

impl<T: Real> Trajectory<T> {
    pub fn last(&self) -> (&T, &[T]) {
        let n = self.t.len() - 1;
        (&self.t[n], &self.y[n])
    }

    /// Cubic Hermite interpolation between stored steps.
    pub fn interpolate(&self, t: T) -> Option<Vec<T>> {
        let n = self.t.len();
        if n == 1 {
            return (t == self.t[0]).then(|| self.y[0].clone());
        }
        let forward = self.t[n - 1] > self.t[0];
        let (lo, hi) = if forward {
            (self.t[0], self.t[n - 1])
        } else {
            (self.t[n - 1], self.t[0])
        };
        if t < lo || t > hi {
            return None;
        }
        let pos = self.t.partition_point(|&ti| if forward { ti <= t } else { ti >= t });
        let i = pos.clamp(1, n - 1) - 1;
        Some(hermite(
            self.t[i],
            &self.y[i],
            &self.dy[i],
            self.t[i + 1],
            &self.y[i + 1],
            &self.dy[i + 1],
            t,
        ))
    }
}

/// Integrates through every time in `times` (monotone), returning the state at each.
///
/// The first entry of `times` is the initial time of `y0`.
pub fn integrate_through<T: Real, S: OdeSystem<T>>(
    sys: &S,
    y0: &[T],
    times: &[T],
    tol: &Tolerances<T>,
) -> std::result::Result<Vec<Vec<T>>, (usize, Status)> {
    let mut out = vec![y0.to_vec()];
    let mut tol = *tol;
    for (i, w) in times.windows(2).enumerate() {
        let tr = integrate(sys, w[0], out.last().unwrap(), w[1], &tol);
        if !tr.status.is_completed() {
            return Err((i + 1, tr.status));
        }
        if let Some(h) = tr.h_next {
            tol.h_init = Some(h);
        }
        out.push(tr.y.last().unwrap().clone());
    }
    Ok(out)
}

/// Cubic Hermite interpolant through `(t0, y0, f0)` and `(t1, y1, f1)`.
pub fn hermite<T: Real>(t0: T, y0: &[T], f0: &[T], t1: T, y1: &[T], f1: &[T], t: T) -> Vec<T> {
    let h = t1 - t0;
    if h == T::zero() {
        return y0.to_vec();
    }
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let two = lit::<T>(2.0);
    let three = lit::<T>(3.0);
    let h00 = two * s3 - three * s2 + T::one();
    let h10 = s3 - two * s2 + s;
    let h01 = -two * s3 + three * s2;
    let h11 = s3 - s2;
    (0..y0.len())
        .map(|k| h00 * y0[k] + h10 * h * f0[k] + h01 * y1[k] + h11 * h * f1[k])
        .collect()
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

struct Stepper<'a, T, S> {
    sys: &'a S,
    tol: Tolerances<T>,
    k: [Vec<T>; 7],
    tmp: Vec<T>,
    y_new: Vec<T>,
}

impl<'a, T: Real, S: OdeSystem<T>> Stepper<'a, T, S> {
    fn norm(&self, e: &[T], y0: &[T], y1: &[T]) -> T {
        let n = e.len();
        let s: T = (0..n)
            .map(|i| {
                let sc = self.tol.atol + self.tol.rtol * y0[i].abs().max(y1[i].abs());
                let r = e[i] / sc;
                r * r
            })
            .sum();
        (s / lit::<T>(n as f64)).sqrt()
    }

    fn stage(&mut self, t: T, y: &[T], h: T, coeffs: &[f64], out: usize) -> Result<()> {
        for i in 0..y.len() {
            let mut acc = T::zero();
            for (j, &c) in coeffs.iter().enumerate() {
                acc += lit::<T>(c) * self.k[j][i];
            }
            self.tmp[i] = y[i] + h * acc;
        }
        let (tmp, k) = (&self.tmp, &mut self.k[out]);
        self.sys.rhs(t, tmp, k)
    }

    /// One trial step from `(t, y)` with derivative in `k[0]`; returns the error norm.
    fn attempt(&mut self, t: T, y: &[T], h: T) -> Result<T> {
        self.stage(t + h * lit(C2), y, h, &[A21], 1)?;
        self.stage(t + h * lit(C3), y, h, &[A31, A32], 2)?;
        self.stage(t + h * lit(C4), y, h, &[A41, A42, A43], 3)?;
        self.stage(t + h * lit(C5), y, h, &[A51, A52, A53, A54], 4)?;
        self.stage(t + h, y, h, &[A61, A62, A63, A64, A65], 5)?;
        for i in 0..y.len() {
            self.y_new[i] = y[i]
                + h * (lit::<T>(B1) * self.k[0][i]
                    + lit::<T>(B3) * self.k[2][i]
                    + lit::<T>(B4) * self.k[3][i]
                    + lit::<T>(B5) * self.k[4][i]
                    + lit::<T>(B6) * self.k[5][i]);
        }
        {
            let (yn, k6) = (&self.y_new, &mut self.k[6]);
            self.sys.rhs(t + h, yn, k6)?;
        }
        let err: Vec<T> = (0..y.len())
            .map(|i| {
                h * (lit::<T>(E1) * self.k[0][i]
                    + lit::<T>(E3) * self.k[2][i]
                    + lit::<T>(E4) * self.k[3][i]
                    + lit::<T>(E5) * self.k[4][i]
                    + lit::<T>(E6) * self.k[5][i]
                    + lit::<T>(E7) * self.k[6][i])
            })
            .collect();
        Ok(self.norm(&err, y, &self.y_new))
    }

    fn initial_step(&mut self, t0: T, y0: &[T], dir: T) -> T {
        let n = y0.len();
        let d0 = self.norm(y0, y0, y0);
        let d1 = self.norm(&self.k[0], y0, y0);
        let small = lit::<T>(1e-5);
        let h0 = if d0 < small || d1 < small {
            lit::<T>(1e-6)
        } else {
            lit::<T>(0.01) * d0 / d1
        };
        for i in 0..n {
            self.tmp[i] = y0[i] + dir * h0 * self.k[0][i];
        }
        let mut f1 = vec![T::zero(); n];
        if self.sys.rhs(t0 + dir * h0, &self.tmp, &mut f1).is_err() {
            return h0;
        }
        let diff: Vec<T> = (0..n).map(|i| f1[i] - self.k[0][i]).collect();
        let d2 = self.norm(&diff, y0, y0) / h0;
        let m = d1.max(d2);
        let h1 = if m <= lit(1e-15) {
            (h0 * lit::<T>(1e-3)).max(lit(1e-6))
        } else {
            (lit::<T>(0.01) / m).powf(lit(0.2))
        };
        (h0 * lit::<T>(100.0)).min(h1)
    }
}

/// Integrates `sys` from `t0` to `t1` (either direction), storing every accepted step.
pub fn integrate<T: Real, S: OdeSystem<T>>(sys: &S, t0: T, y0: &[T], t1: T, tol: &Tolerances<T>) -> Trajectory<T> {
    let n = sys.dim();
    assert_eq!(y0.len(), n, "state length must match system dimension");
    let mut traj = Trajectory {
        t: vec![t0],
        y: vec![y0.to_vec()],
        dy: Vec::new(),
        status: Status::Completed,
        h_next: None,
    };
    let mut st = Stepper {
        sys,
        tol: *tol,
        k: std::array::from_fn(|_| vec![T::zero(); n]),
        tmp: vec![T::zero(); n],
        y_new: vec![T::zero(); n],
    };
    if let Err(e) = sys.rhs(t0, y0, &mut st.k[0]) {
        traj.dy.push(vec![T::nan(); n]);
        traj.status = Status::RhsFailed(e);
        return traj;
    }
    traj.dy.push(st.k[0].clone());
    if t1 == t0 {
        return traj;
    }
    let dir = if t1 > t0 { T::one() } else { -T::one() };
    let span = (t1 - t0).abs();
    let mut h = tol
        .h_init
        .unwrap_or_else(|| st.initial_step(t0, y0, dir))
        .abs()
        .min(span);
    if let Some(hm) = tol.h_max {
        h = h.min(hm);
    }
    let eps = T::epsilon();
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut steps = 0usize;
    let mut last_failure: Option<Error> = None;
    loop {
        let remaining = (t1 - t).abs();
        if remaining <= eps * lit::<T>(64.0) * t1.abs().max(T::one()) {
            break;
        }
        if steps >= tol.max_steps {
            traj.status = Status::StepLimit;
            return traj;
        }
        let h_min = eps * lit::<T>(64.0) * t.abs().max(span);
        let last = h >= remaining;
        let hh = if last { remaining } else { h };
        if hh < h_min {
            traj.status = match last_failure.take() {
                Some(e) => Status::RhsFailed(e),
                None => Status::StepUnderflow,
            };
            return traj;
        }
        match st.attempt(t, &y, dir * hh) {
            Err(e) => {
                last_failure = Some(e);
                h = hh * lit(0.25);
            }
            Ok(err) if !err.is_finite() => {
                h = hh * lit(0.25);
            }
            Ok(err) => {
                let fac = if err == T::zero() {
                    lit(5.0)
                } else {
                    (lit::<T>(0.9) * err.powf(lit(-0.2))).max(lit(0.2)).min(lit(5.0))
                };
                if err <= T::one() {
                    steps += 1;
                    last_failure = None;
                    t = if last { t1 } else { t + dir * hh };
                    std::mem::swap(&mut y, &mut st.y_new);
                    let k6 = st.k[6].clone();
                    st.k[0].copy_from_slice(&k6);
                    traj.t.push(t);
                    traj.y.push(y.clone());
                    traj.dy.push(k6);
                    h = hh * fac;
                    if let Some(hm) = tol.h_max {
                        h = h.min(hm);
                    }
                    traj.h_next = Some(if last { h.max(hh) } else { h });
                    if last {
                        break;
                    }
                } else {
                    h = hh * fac.min(T::one());
                }
            }
        }
    }
    traj
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Oscillator;
    impl OdeSystem<f64> for Oscillator {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = y[1];
            dy[1] = -y[0];
            Ok(())
        }
    }

    struct Wall;
    impl OdeSystem<f64> for Wall {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
            if y[0] > 1.0 {
                return Err(Error::out_of_domain("wall", y));
            }
            dy[0] = 1.0;
            Ok(())
        }
    }

    #[test]
    fn oscillator_matches_closed_form() {
        let tol = Tolerances::new(1e-11, 1e-13);
        let tr = integrate(&Oscillator, 0.0, &[1.0, 0.0], 10.0, &tol);
        assert!(tr.status.is_completed());
        let (t, y) = tr.last();
        assert_eq!(*t, 10.0);
        assert!((y[0] - 10f64.cos()).abs() < 1e-9);
        assert!((y[1] + 10f64.sin()).abs() < 1e-9);
    }

    #[test]
    fn backward_integration_returns_to_start() {
        let tol = Tolerances::default();
        let fwd = integrate(&Oscillator, 0.0, &[1.0, 0.0], 5.0, &tol);
        let (_, y) = fwd.last();
        let back = integrate(&Oscillator, 5.0, y, 0.0, &tol);
        let (t, y0) = back.last();
        assert_eq!(*t, 0.0);
        assert!((y0[0] - 1.0).abs() < 1e-7 && y0[1].abs() < 1e-7);
    }

    #[test]
    fn rhs_failure_stops_near_the_wall() {
        let tr = integrate(&Wall, 0.0, &[0.0], 5.0, &Tolerances::default());
        assert!(matches!(tr.status, Status::RhsFailed(_)));
        let (_, y) = tr.last();
        assert!(y[0] <= 1.0 && y[0] > 0.999);
    }

    #[test]
    fn zero_span_keeps_single_sample() {
        let tr = integrate(&Oscillator, 0.0, &[1.0, 0.0], 0.0, &Tolerances::default());
        assert_eq!(tr.t.len(), 1);
    }

    #[test]
    fn hermite_interpolation_is_accurate() {
        let tol = Tolerances::default().with_h_max(0.05);
        let tr = integrate(&Oscillator, 0.0, &[1.0, 0.0], 3.0, &tol);
        let y = tr.interpolate(1.234).unwrap();
        assert!((y[0] - 1.234f64.cos()).abs() < 1e-7);
    }
}
