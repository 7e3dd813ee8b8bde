//! Closed-form dispersion models used as fast surfaces and as test oracles.

use crate::error::{Error, Result};
use crate::linalg::Vec2;
use crate::scalar::{lit, Real};

use super::dispersion::{Dispersion, DispersionPoint};

/// Frequency dependence `q0(k0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModeLaw<T> {
    /// `q0 = n k0`; phase and group velocity coincide.
    Nondispersive { n: T },
    /// Rigid-bottom layer: `q0 = √(n²k0² − kz²)` with `kz = (2l+1)π/2h`.
    IdealWaveguide { n: T, h: T, mode: usize },
}

impl<T: Real> ModeLaw<T> {
    pub fn kz(&self) -> T {
        match *self {
            ModeLaw::Nondispersive { .. } => T::zero(),
            ModeLaw::IdealWaveguide { h, mode, .. } => lit::<T>((2 * mode + 1) as f64) * T::PI() / (lit::<T>(2.0) * h),
        }
    }

    /// `(q0, q0', q0'')` with primes in `k0`.
    pub fn eval(&self, k0: T) -> Option<(T, T, T)> {
        match *self {
            ModeLaw::Nondispersive { n } => Some((n * k0, n, T::zero())),
            ModeLaw::IdealWaveguide { n, .. } => {
                let kz = self.kz();
                let a = n * n * k0 * k0 - kz * kz;
                if a <= T::zero() {
                    return None;
                }
                let q = a.sqrt();
                Some((q, n * n * k0 / q, -n * n * kz * kz / (q * q * q)))
            }
        }
    }

    /// Lowest `k0` at which the mode propagates.
    pub fn cutoff(&self) -> T {
        match *self {
            ModeLaw::Nondispersive { .. } => T::zero(),
            ModeLaw::IdealWaveguide { n, .. } => self.kz() / n,
        }
    }
}

/// Horizontal structure multiplying `q0(k0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Geometry<T> {
    Homogeneous,
    /// `q = q0(k0)(1 − y²/2L²)`: a waveguide lens focusing toward `y = 0`.
    Lens {
        length: T,
    },
}

/// Analytic dispersion `q(x, y, k0)` with exact derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticDispersion<T> {
    pub law: ModeLaw<T>,
    pub geometry: Geometry<T>,
    /// Optional horizontal box `[[x_min, x_max], [y_min, y_max]]`.
    pub bounds: Option<[[T; 2]; 2]>,
    /// Optional `k0` interval.
    pub band: Option<[T; 2]>,
}

impl<T: Real> AnalyticDispersion<T> {
    pub fn new(law: ModeLaw<T>, geometry: Geometry<T>) -> Self {
        Self {
            law,
            geometry,
            bounds: None,
            band: None,
        }
    }

    pub fn with_bounds(mut self, bounds: [[T; 2]; 2]) -> Self {
        self.bounds = Some(bounds);
        self
    }

    pub fn with_band(mut self, band: [T; 2]) -> Self {
        self.band = Some(band);
        self
    }

    fn profile(&self, y: T) -> (T, T, T) {
        match self.geometry {
            Geometry::Homogeneous => (T::one(), T::zero(), T::zero()),
            Geometry::Lens { length } => {
                let l2 = length * length;
                (T::one() - y * y / (lit::<T>(2.0) * l2), -y / l2, -T::one() / l2)
            }
        }
    }
}

impl<T: Real> Dispersion<T> for AnalyticDispersion<T> {
    fn eval(&self, r: Vec2<T>, k0: T) -> Result<DispersionPoint<T>> {
        if !self.contains(r, k0) {
            return Err(Error::out_of_domain(
                "analytic dispersion",
                &[r[0].as_f64(), r[1].as_f64(), k0.as_f64()],
            ));
        }
        let (q0, d1, d2) = self.law.eval(k0).ok_or_else(|| Error::BelowCutoff {
            mode: match self.law {
                ModeLaw::IdealWaveguide { mode, .. } => mode,
                ModeLaw::Nondispersive { .. } => 0,
            },
            k0: k0.as_f64(),
            cutoff: Some(self.law.cutoff().as_f64()),
        })?;
        let (f, fy, fyy) = self.profile(r[1]);
        let z = T::zero();
        Ok(DispersionPoint::new(
            r,
            k0,
            q0 * f,
            d1 * f,
            d2 * f,
            [z, q0 * fy],
            [[z, z], [z, q0 * fyy]],
            [z, d1 * fy],
        ))
    }

    fn contains(&self, r: Vec2<T>, k0: T) -> bool {
        if !(k0 > T::zero() && r[0].is_finite() && r[1].is_finite()) {
            return false;
        }
        if let Some(b) = self.bounds {
            if r[0] < b[0][0] || r[0] > b[0][1] || r[1] < b[1][0] || r[1] > b[1][1] {
                return false;
            }
        }
        if let Some(b) = self.band {
            if k0 < b[0] || k0 > b[1] {
                return false;
            }
        }
        self.law.eval(k0).is_some() && self.profile(r[1]).0 > T::zero()
    }

    fn mode_index(&self) -> usize {
        match self.law {
            ModeLaw::IdealWaveguide { mode, .. } => mode,
            ModeLaw::Nondispersive { .. } => 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::Waveguide;
    use crate::modes::solve_q;

    #[test]
    fn ideal_waveguide_matches_rigid_solver() {
        let law = ModeLaw::<f64>::IdealWaveguide {
            n: 1.0,
            h: 100.0,
            mode: 1,
        };
        let env = Waveguide::<f64>::rigid(100.0, 1.0).unwrap();
        for k0 in [0.2, 0.5, 0.9] {
            let (q, _, _) = law.eval(k0).unwrap();
            assert!((q - solve_q(&env, [0.0, 0.0], k0, 1).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn group_velocity_example() {
        let law = ModeLaw::<f64>::IdealWaveguide {
            n: 1.0,
            h: 100.0,
            mode: 0,
        };
        let d = AnalyticDispersion::new(law, Geometry::Homogeneous);
        let p = d.eval([0.0, 0.0], 0.5).unwrap();
        assert!((p.v - 0.9995).abs() < 1e-4);
        assert!((p.dq_dk0 - 0.5 / p.q).abs() < 1e-15);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let law = ModeLaw::<f64>::IdealWaveguide {
            n: 1.0,
            h: 100.0,
            mode: 0,
        };
        let d = AnalyticDispersion::new(law, Geometry::Lens { length: 500.0 });
        let (y, k0, h) = (120.0, 0.5, 1e-4);
        let p = d.eval([0.0, y], k0).unwrap();
        let q = |y: f64, k: f64| d.eval([0.0, y], k).unwrap().q;
        let dq = |y: f64, k: f64| d.eval([0.0, y], k).unwrap().dq_dk0;
        assert!((p.dq_dk0 - (q(y, k0 + h) - q(y, k0 - h)) / (2.0 * h)).abs() < 1e-8);
        assert!((p.d2q_dk02 - (dq(y, k0 + h) - dq(y, k0 - h)) / (2.0 * h)).abs() < 1e-6);
        let hy = 1e-3;
        assert!((p.grad_q[1] - (q(y + hy, k0) - q(y - hy, k0)) / (2.0 * hy)).abs() < 1e-10);
        assert!((p.grad_dq_dk0[1] - (dq(y + hy, k0) - dq(y - hy, k0)) / (2.0 * hy)).abs() < 1e-10);
        assert!((p.hess_q[1][1] * 500.0 * 500.0 + law.eval(k0).unwrap().0).abs() < 1e-12);
    }

    #[test]
    fn below_cutoff_law_is_outside() {
        let law = ModeLaw::<f64>::IdealWaveguide {
            n: 1.0,
            h: 100.0,
            mode: 0,
        };
        let d = AnalyticDispersion::new(law, Geometry::Homogeneous);
        assert!(!d.contains([0.0, 0.0], 0.01));
        assert!(d.eval([0.0, 0.0], 0.01).is_err());
    }
}
