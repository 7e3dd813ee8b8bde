//! Dispersion by direct eigensolves at each query, with finite-difference derivatives.

use crate::environment::Waveguide;
use crate::error::Result;
use crate::linalg::Vec2;
use crate::scalar::{lit, Real};

use super::dispersion::{Dispersion, DispersionPoint};
use super::solve_q;

/// Slow but grid-free dispersion evaluation.
#[derive(Debug, Clone)]
pub struct DirectDispersion<T> {
    env: Waveguide<T>,
    l: usize,
    /// Relative `k0` step for derivatives.
    pub rel_step_k0: T,
    /// Absolute horizontal step for derivatives.
    pub step_r: T,
}

impl<T: Real> DirectDispersion<T> {
    pub fn new(env: Waveguide<T>, l: usize) -> Self {
        Self {
            env,
            l,
            rel_step_k0: lit(1e-4),
            step_r: lit(1.0),
        }
    }

    pub fn q(&self, r: Vec2<T>, k0: T) -> Result<T> {
        solve_q(&self.env, r, k0, self.l)
    }
}

impl<T: Real> Dispersion<T> for DirectDispersion<T> {
    fn eval(&self, r: Vec2<T>, k0: T) -> Result<DispersionPoint<T>> {
        let two = lit::<T>(2.0);
        let dk = self.rel_step_k0 * k0;
        let q = |x: T, y: T, k: T| self.q([x, y], k);
        let [x, y] = r;
        let q0 = q(x, y, k0)?;
        let qp = q(x, y, k0 + dk)?;
        let qm = q(x, y, k0 - dk)?;
        let dq = (qp - qm) / (two * dk);
        let d2q = (qp - two * q0 + qm) / (dk * dk);
        if self.env.is_horizontally_homogeneous() {
            return Ok(DispersionPoint::homogeneous(r, k0, q0, dq, d2q));
        }
        let h = self.step_r;
        let dk0 = |x: T, y: T| -> Result<T> { Ok((q(x, y, k0 + dk)? - q(x, y, k0 - dk)?) / (two * dk)) };
        let (qxp, qxm) = (q(x + h, y, k0)?, q(x - h, y, k0)?);
        let (qyp, qym) = (q(x, y + h, k0)?, q(x, y - h, k0)?);
        let qxy = (q(x + h, y + h, k0)? - q(x + h, y - h, k0)? - q(x - h, y + h, k0)? + q(x - h, y - h, k0)?)
            / (lit::<T>(4.0) * h * h);
        let hess = [
            [(qxp - two * q0 + qxm) / (h * h), qxy],
            [qxy, (qyp - two * q0 + qym) / (h * h)],
        ];
        let grad = [(qxp - qxm) / (two * h), (qyp - qym) / (two * h)];
        let grad_dq = [
            (dk0(x + h, y)? - dk0(x - h, y)?) / (two * h),
            (dk0(x, y + h)? - dk0(x, y - h)?) / (two * h),
        ];
        Ok(DispersionPoint::new(r, k0, q0, dq, d2q, grad, hess, grad_dq))
    }

    fn contains(&self, r: Vec2<T>, k0: T) -> bool {
        self.env.contains(r[0], r[1]) && self.q(r, k0).is_ok()
    }

    fn mode_index(&self) -> usize {
        self.l
    }
}
