//! Vertical normal modes of the local depth problem
//! `ψ'' + (k0² n²(z) − q²) ψ = 0`, `ψ(0) = 0`, with continuity of `ψ` and
//! `ψ'/ρ` at the bottom and decay (or `ψ' = 0` on a rigid bottom) below it.

mod analytic;
mod direct;
mod dispersion;

pub use analytic::{AnalyticDispersion, Geometry, ModeLaw};
pub use direct::DirectDispersion;
pub use dispersion::{
    build_dispersion_surface, eval_dispersion, export_dispersion_curve, write_dispersion_csv, Dispersion,
    DispersionPoint, DispersionSurface, GridSpec,
};

use crate::environment::{Bottom, Waveguide};
use crate::error::{Error, Result};
use crate::ode::{integrate, OdeSystem, Tolerances};
use crate::quad::simpson_uniform;
use crate::roots::brent;
use crate::scalar::{count, lit, Real};

/// Number of water-column samples stored with each eigenfunction.
pub const WATER_SAMPLES: usize = 1025;

/// Decay lengths kept below the bottom; `e^{-14}` is below the 1e-6 tail target.
const TAIL_DECAY_LENGTHS: f64 = 14.0;

/// One normalized trapped mode at a horizontal position and frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSolution<T> {
    pub l: usize,
    pub q: T,
    pub k0: T,
    pub r: [T; 2],
    pub depth: T,
    /// Uniform water-column nodes on `[0, h]`.
    pub z: Vec<T>,
    pub psi: Vec<T>,
    pub dpsi: Vec<T>,
    /// Refraction index at the water nodes.
    pub n_water: Vec<T>,
    /// Decay rate `γ = √(q² − k0² n_b²)` of the bottom tail; `None` on a rigid bottom.
    pub gamma: Option<T>,
    pub n_bottom: Option<T>,
    /// Truncation depth of the tail, `h + 14/γ`.
    pub z_max: T,
    /// Scalar-product weights on the water layer and on the bottom.
    pub weights: [T; 2],
    /// `|⟨ψ,ψ⟩ − 1|` after normalization.
    pub norm_check: T,
}

impl<T: Real> ModeSolution<T> {
    pub fn psi_bottom(&self) -> T {
        self.psi[self.psi.len() - 1]
    }

    /// `ψ` anywhere on `[0, z_max]`, using the analytic tail below the bottom.
    pub fn sample(&self, z: T) -> Option<T> {
        if z < T::zero() || z > self.z_max {
            return None;
        }
        if z <= self.depth {
            let dz = self.z[1];
            let s = z / dz;
            let i = s.floor().to_usize()?.min(self.z.len() - 2);
            let t = s - count::<T>(i);
            // Cubic Hermite with stored derivative.
            let y = crate::ode::hermite(
                self.z[i],
                &[self.psi[i]],
                &[self.dpsi[i]],
                self.z[i + 1],
                &[self.psi[i + 1]],
                &[self.dpsi[i + 1]],
                self.z[i] + t * dz,
            );
            return Some(y[0]);
        }
        let g = self.gamma?;
        Some(self.psi_bottom() * (-g * (z - self.depth)).exp())
    }

    /// `|ψ(z_max)| / max|ψ|`.
    pub fn tail_ratio(&self) -> T {
        let peak = self.psi.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        match self.gamma {
            Some(g) => self.psi_bottom().abs() * (-g * (self.z_max - self.depth)).exp() / peak,
            None => T::zero(),
        }
    }

    /// Same mode with `ψ` multiplied by `c`.
    pub fn scaled(&self, c: T) -> Self {
        let mut m = self.clone();
        m.psi.iter_mut().for_each(|v| *v *= c);
        m.dpsi.iter_mut().for_each(|v| *v *= c);
        m
    }

    fn water_step(&self) -> T {
        self.depth / count::<T>(self.z.len() - 1)
    }
}

/// Scalar-product weights `[water, bottom]` that make the depth operator symmetric.
///
/// With `ψ'/ρ` continuous at the bottom, the water integral carries the
/// bottom density and the bottom integral carries the water density.
pub fn product_weights<T: Real>(env: &Waveguide<T>) -> [T; 2] {
    [env.rho_minus, env.rho_plus]
}

/// Local depth problem at one `(x, y, k0)`.
struct Column<'a, T> {
    env: &'a Waveguide<T>,
    x: T,
    y: T,
    h: T,
    k0: T,
    uniform: Option<T>,
    n_max: T,
    bottom: Bottom<T>,
    ratio: T,
}

struct Shot<T> {
    psi: T,
    dpsi: T,
    zeros: usize,
}

struct DepthOde<'a, T> {
    col: &'a Column<'a, T>,
    q2: T,
}

impl<T: Real> OdeSystem<T> for DepthOde<'_, T> {
    fn dim(&self) -> usize {
        2
    }

    fn rhs(&self, z: T, y: &[T], dy: &mut [T]) -> Result<()> {
        let n = self
            .col
            .env
            .profile
            .water(self.col.x, self.col.y, z.max(T::zero()).min(self.col.h))?;
        let k2 = self.col.k0 * self.col.k0;
        dy[0] = y[1];
        dy[1] = (self.q2 - k2 * n * n) * y[0];
        Ok(())
    }
}

fn shooting_tolerances<T: Real>() -> Tolerances<T> {
    Tolerances::new(lit(1e-12), lit(1e-14))
}

impl<'a, T: Real> Column<'a, T> {
    fn new(env: &'a Waveguide<T>, r: [T; 2], k0: T) -> Result<Self> {
        if !(k0 > T::zero() && k0.is_finite()) {
            return Err(Error::invariant("k0", "frequency variable must be positive"));
        }
        let [x, y] = r;
        if !env.contains(x, y) {
            return Err(Error::out_of_domain("waveguide", &[x.as_f64(), y.as_f64()]));
        }
        let h = env.depth(x, y)?;
        let uniform = if env.profile.is_depth_uniform() {
            Some(env.profile.water(x, y, T::zero())?)
        } else {
            None
        };
        let n_max = match uniform {
            Some(n) => n,
            None => {
                let m = 256;
                let mut mx = T::neg_infinity();
                for i in 0..=m {
                    let z = h * count::<T>(i) / count::<T>(m);
                    mx = mx.max(env.profile.water(x, y, z)?);
                }
                mx
            }
        };
        if n_max <= T::zero() {
            return Err(Error::invariant("profile", "refraction index must be positive"));
        }
        Ok(Self {
            env,
            x,
            y,
            h,
            k0,
            uniform,
            n_max,
            bottom: env.bottom(),
            ratio: env.rho_minus / env.rho_plus,
        })
    }

    fn kz_top(&self) -> T {
        let top = self.n_max * self.k0;
        match self.bottom {
            Bottom::HalfSpace { n } => {
                let low = n * self.k0;
                if low >= top {
                    T::zero()
                } else {
                    (top * top - low * low).sqrt()
                }
            }
            Bottom::Rigid => top,
        }
    }

    fn q_of(&self, kz: T) -> T {
        let top = self.n_max * self.k0;
        (top * top - kz * kz).max(T::zero()).sqrt()
    }

    fn shoot(&self, q: T) -> Result<Shot<T>> {
        let q2 = q * q;
        if let Some(n) = self.uniform {
            let a = self.k0 * self.k0 * n * n - q2;
            let h = self.h;
            if a > T::zero() {
                let kz = a.sqrt();
                let ph = kz * h;
                let zeros = (ph / T::PI()).ceil().to_usize().unwrap_or(1).saturating_sub(1);
                return Ok(Shot {
                    psi: ph.sin() / kz,
                    dpsi: ph.cos(),
                    zeros,
                });
            }
            if a < T::zero() {
                let g = (-a).sqrt();
                return Ok(Shot {
                    psi: (g * h).sinh() / g,
                    dpsi: (g * h).cosh(),
                    zeros: 0,
                });
            }
            return Ok(Shot {
                psi: h,
                dpsi: T::one(),
                zeros: 0,
            });
        }
        let sys = DepthOde { col: self, q2 };
        let tr = integrate(&sys, T::zero(), &[T::zero(), T::one()], self.h, &shooting_tolerances());
        if !tr.status.is_completed() {
            return Err(Error::Numerical(format!("depth shooting failed: {:?}", tr.status)));
        }
        let zeros =
            tr.y.windows(2)
                .skip(1)
                .filter(|w| w[0][0].signum() != w[1][0].signum() && w[1][0] != T::zero())
                .count();
        let (_, y) = tr.last();
        Ok(Shot {
            psi: y[0],
            dpsi: y[1],
            zeros,
        })
    }

    fn gamma(&self, q: T) -> Option<T> {
        match self.bottom {
            Bottom::HalfSpace { n } => {
                let b = n * self.k0;
                Some((q * q - b * b).max(T::zero()).sqrt())
            }
            Bottom::Rigid => None,
        }
    }

    fn mismatch(&self, q: T) -> Result<T> {
        let s = self.shoot(q)?;
        Ok(match self.gamma(q) {
            Some(g) => self.ratio * s.dpsi + g * s.psi,
            None => s.dpsi,
        })
    }

    fn mismatch_kz(&self, kz: T) -> Result<T> {
        self.mismatch(self.q_of(kz))
    }

    /// Brackets of sign changes of the mismatch in increasing `kz`.
    fn brackets(&self, oversample: usize) -> Result<Vec<(T, T)>> {
        let top = self.kz_top();
        if top <= T::zero() {
            return Ok(Vec::new());
        }
        let spacing_ratio = top * self.h / T::PI();
        let n = (spacing_ratio * count::<T>(oversample))
            .ceil()
            .to_usize()
            .unwrap_or(64)
            .max(64);
        let mut out = Vec::new();
        let mut prev_kz = T::zero();
        let mut prev_f = self.mismatch_kz(prev_kz)?;
        for i in 1..=n {
            let kz = top * count::<T>(i) / count::<T>(n);
            let f = self.mismatch_kz(kz)?;
            if f == T::zero() && i < n {
                // Exact hit: widen to the next sample.
                continue;
            }
            if f.signum() != prev_f.signum() && prev_f != T::zero() && f != T::zero() {
                out.push((prev_kz, kz));
            }
            prev_kz = kz;
            prev_f = f;
        }
        Ok(out)
    }

    /// Trapped horizontal wavenumbers in descending order, limited to `l_max + 1`.
    fn wavenumbers(&self, l_max: usize) -> Result<Vec<T>> {
        let mut oversample = 16;
        for attempt in 0..3 {
            let br = self.brackets(oversample)?;
            let top = self.kz_top();
            let mut qs = Vec::new();
            let mut consistent = true;
            for (l, &(a, b)) in br.iter().enumerate().take(l_max + 1) {
                let kz = brent(|k| self.mismatch_kz(k), a, b, top * lit::<T>(1e-15), 200)?;
                let q = self.q_of(kz);
                if q <= T::zero() {
                    break;
                }
                if self.shoot(q)?.zeros != l {
                    consistent = false;
                    break;
                }
                qs.push(q);
            }
            if consistent {
                check_spectrum(&qs, self.k0)?;
                return Ok(qs);
            }
            if attempt == 2 {
                return Err(Error::Numerical(
                    "mode zero count disagrees with mode index after refined scans".into(),
                ));
            }
            oversample *= 4;
        }
        unreachable!()
    }

    fn mode_count(&self) -> Result<usize> {
        Ok(self.brackets(16)?.len())
    }

    fn sample(&self, l: usize, q: T) -> Result<ModeSolution<T>> {
        let m = WATER_SAMPLES - 1;
        let dz = self.h / count::<T>(m);
        let z: Vec<T> = (0..=m).map(|i| dz * count::<T>(i)).collect();
        let mut psi = vec![T::zero(); m + 1];
        let mut dpsi = vec![T::zero(); m + 1];
        let mut n_water = vec![T::zero(); m + 1];
        if let Some(n) = self.uniform {
            let a = self.k0 * self.k0 * n * n - q * q;
            for i in 0..=m {
                let zi = z[i];
                n_water[i] = n;
                if a > T::zero() {
                    let kz = a.sqrt();
                    psi[i] = (kz * zi).sin() / kz;
                    dpsi[i] = (kz * zi).cos();
                } else if a < T::zero() {
                    let g = (-a).sqrt();
                    psi[i] = (g * zi).sinh() / g;
                    dpsi[i] = (g * zi).cosh();
                } else {
                    psi[i] = zi;
                    dpsi[i] = T::one();
                }
            }
        } else {
            let sys = DepthOde { col: self, q2: q * q };
            let tol = shooting_tolerances();
            let mut state = vec![T::zero(), T::one()];
            dpsi[0] = T::one();
            n_water[0] = self.env.profile.water(self.x, self.y, T::zero())?;
            for i in 0..m {
                let tr = integrate(&sys, z[i], &state, z[i + 1], &tol);
                if !tr.status.is_completed() {
                    return Err(Error::Numerical(format!(
                        "eigenfunction sampling failed: {:?}",
                        tr.status
                    )));
                }
                state = tr.last().1.to_vec();
                psi[i + 1] = state[0];
                dpsi[i + 1] = state[1];
                n_water[i + 1] = self.env.profile.water(self.x, self.y, z[i + 1])?;
            }
        }
        let gamma = self.gamma(q);
        let weights = product_weights(self.env);
        let mut mode = ModeSolution {
            l,
            q,
            k0: self.k0,
            r: [self.x, self.y],
            depth: self.h,
            z,
            psi,
            dpsi,
            n_water,
            gamma,
            n_bottom: match self.bottom {
                Bottom::HalfSpace { n } => Some(n),
                Bottom::Rigid => None,
            },
            z_max: match gamma {
                Some(g) => self.h + lit::<T>(TAIL_DECAY_LENGTHS) / g,
                None => self.h,
            },
            weights,
            norm_check: T::zero(),
        };
        let norm = weighted_product(&mode, &mode).sqrt();
        mode = mode.scaled(T::one() / norm);
        mode.norm_check = (weighted_product(&mode, &mode) - T::one()).abs();
        Ok(mode)
    }
}

fn check_spectrum<T: Real>(qs: &[T], k0: T) -> Result<()> {
    for (i, w) in qs.windows(2).enumerate() {
        if w[1] >= w[0] {
            return Err(Error::Ordering { a: i, b: i + 1 });
        }
        let gap = w[0] - w[1];
        if gap < lit::<T>(1e-8) * k0 {
            return Err(Error::Degenerate {
                a: i,
                b: i + 1,
                gap: gap.as_f64(),
            });
        }
    }
    Ok(())
}

fn below_cutoff<T: Real>(env: &Waveguide<T>, r: [T; 2], k0: T, l: usize) -> Error {
    Error::BelowCutoff {
        mode: l,
        k0: k0.as_f64(),
        cutoff: cutoff_estimate(env, r, l).ok().map(|c| c.as_f64()),
    }
}

/// All trapped modes `0..=l_max` at `(r, k0)`, `q` descending.
pub fn solve_modes_at<T: Real>(env: &Waveguide<T>, r: [T; 2], k0: T, l_max: usize) -> Result<Vec<ModeSolution<T>>> {
    let col = Column::new(env, r, k0)?;
    let qs = col.wavenumbers(l_max)?;
    if qs.is_empty() {
        return Err(below_cutoff(env, r, k0, 0));
    }
    qs.iter().enumerate().map(|(l, &q)| col.sample(l, q)).collect()
}

/// Mode `l` at `(r, k0)`.
pub fn solve_mode<T: Real>(env: &Waveguide<T>, r: [T; 2], k0: T, l: usize) -> Result<ModeSolution<T>> {
    let col = Column::new(env, r, k0)?;
    let qs = col.wavenumbers(l)?;
    match qs.get(l) {
        Some(&q) => col.sample(l, q),
        None => Err(below_cutoff(env, r, k0, l)),
    }
}

/// Horizontal wavenumber of mode `l` at `(r, k0)`.
pub fn solve_q<T: Real>(env: &Waveguide<T>, r: [T; 2], k0: T, l: usize) -> Result<T> {
    let col = Column::new(env, r, k0)?;
    let qs = col.wavenumbers(l)?;
    qs.get(l).copied().ok_or_else(|| below_cutoff(env, r, k0, l))
}

/// Number of trapped modes at `(r, k0)`.
pub fn mode_count<T: Real>(env: &Waveguide<T>, r: [T; 2], k0: T) -> Result<usize> {
    Column::new(env, r, k0)?.mode_count()
}

/// Smallest `k0` at which mode `l` is trapped, located by bisection on the mode count.
pub fn cutoff_estimate<T: Real>(env: &Waveguide<T>, r: [T; 2], l: usize) -> Result<T> {
    let h = env.depth(r[0], r[1])?;
    let trapped = |k0: T| -> Result<bool> { Ok(mode_count(env, r, k0)? > l) };
    let mut hi = T::PI() / h;
    let mut n = 0;
    while !trapped(hi)? {
        hi *= lit(2.0);
        n += 1;
        if n > 40 {
            return Err(Error::Numerical(format!("no cutoff found for mode {l}")));
        }
    }
    let mut lo = hi * lit(0.5);
    while trapped(lo)? {
        hi = lo;
        lo *= lit(0.5);
        n += 1;
        if n > 80 {
            return Ok(lo);
        }
    }
    for _ in 0..60 {
        let mid = lit::<T>(0.5) * (lo + hi);
        if trapped(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= lit::<T>(1e-12) * hi {
            break;
        }
    }
    Ok(hi)
}

fn weighted_integral<T: Real>(mode: &ModeSolution<T>, water: &[T], tail: T) -> T {
    mode.weights[0] * simpson_uniform(water, mode.water_step()) + mode.weights[1] * tail
}

fn weighted_product<T: Real>(a: &ModeSolution<T>, b: &ModeSolution<T>) -> T {
    let water: Vec<T> = a.psi.iter().zip(&b.psi).map(|(x, y)| *x * *y).collect();
    let tail = match (a.gamma, b.gamma) {
        (Some(ga), Some(gb)) if ga + gb > T::zero() => a.psi_bottom() * b.psi_bottom() / (ga + gb),
        _ => T::zero(),
    };
    weighted_integral(a, &water, tail)
}

/// Density-weighted product `ρ⁻∫₀ʰ ψa ψb dz + ρ⁺∫ₕ^∞ ψa ψb dz`.
///
/// The water integral uses composite Simpson on the stored nodes; the bottom
/// integral is exact for the exponential tails.
pub fn scalar_product<T: Real>(env: &Waveguide<T>, a: &ModeSolution<T>, b: &ModeSolution<T>) -> Result<T> {
    if a.z.len() != b.z.len() || a.depth != b.depth || a.r != b.r {
        return Err(Error::IncompatibleGrids(format!(
            "{} nodes to depth {} vs {} nodes to depth {}",
            a.z.len(),
            a.depth,
            b.z.len(),
            b.depth
        )));
    }
    let w = product_weights(env);
    let water: Vec<T> = a.psi.iter().zip(&b.psi).map(|(x, y)| *x * *y).collect();
    let tail = match (a.gamma, b.gamma) {
        (Some(ga), Some(gb)) if ga + gb > T::zero() => a.psi_bottom() * b.psi_bottom() / (ga + gb),
        _ => T::zero(),
    };
    Ok(w[0] * simpson_uniform(&water, a.water_step()) + w[1] * tail)
}

/// Both sides of the group-slowness relations for one normalized mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupSlownessCheck<T> {
    /// `⟨n²ψ,ψ⟩`.
    pub n2: T,
    /// `(q/k0) ∂q/∂k0` with a centered-difference derivative.
    pub approx_rhs: T,
    /// `(q² + ⟨ψ′,ψ′⟩)/k0²`.
    pub exact_rhs: T,
    pub dq_dk0: T,
    /// `|⟨n²ψ,ψ⟩ − (q/k0)∂q/∂k0| / ⟨n²ψ,ψ⟩`.
    pub residual: T,
    /// `|⟨n²ψ,ψ⟩ − (q² + ⟨ψ′,ψ′⟩)/k0²| / ⟨n²ψ,ψ⟩`.
    pub exact_residual: T,
}

pub fn check_group_slowness_identity<T: Real>(
    env: &Waveguide<T>,
    mode: &ModeSolution<T>,
    k0: T,
) -> Result<GroupSlownessCheck<T>> {
    let w = product_weights(env);
    let hstep = mode.water_step();
    let water_n2: Vec<T> = mode
        .psi
        .iter()
        .zip(&mode.n_water)
        .map(|(p, n)| *n * *n * *p * *p)
        .collect();
    let water_d2: Vec<T> = mode.dpsi.iter().map(|d| *d * *d).collect();
    let ph2 = mode.psi_bottom() * mode.psi_bottom();
    let (tail_n2, tail_d2) = match (mode.gamma, mode.n_bottom) {
        (Some(g), Some(nb)) if g > T::zero() => (nb * nb * ph2 / (lit::<T>(2.0) * g), g * ph2 / lit::<T>(2.0)),
        _ => (T::zero(), T::zero()),
    };
    let n2 = w[0] * simpson_uniform(&water_n2, hstep) + w[1] * tail_n2;
    let d2 = w[0] * simpson_uniform(&water_d2, hstep) + w[1] * tail_d2;
    let delta = k0 * lit::<T>(1e-4);
    let qp = solve_q(env, mode.r, k0 + delta, mode.l)?;
    let qm = solve_q(env, mode.r, k0 - delta, mode.l)?;
    let dq = (qp - qm) / (lit::<T>(2.0) * delta);
    let approx_rhs = mode.q / k0 * dq;
    let exact_rhs = (mode.q * mode.q + d2) / (k0 * k0);
    Ok(GroupSlownessCheck {
        n2,
        approx_rhs,
        exact_rhs,
        dq_dk0: dq,
        residual: (n2 - approx_rhs).abs() / n2,
        exact_residual: (n2 - exact_rhs).abs() / n2,
    })
}

#[cfg(test)]
pub(crate) mod oracle {
    /// Independent Pekeris root: bisection on
    /// `G(kz) = γ sin(kz h) + (ρ⁻/ρ⁺) kz cos(kz h)` over `kz h ∈ ((l+½)π, (l+1)π)`.
    pub fn pekeris_q(h: f64, nw: f64, nb: f64, ratio: f64, k0: f64, l: usize) -> Option<f64> {
        let kz_max = k0 * (nw * nw - nb * nb).sqrt();
        let g = |kz: f64| {
            let gamma = (kz_max * kz_max - kz * kz).max(0.0).sqrt();
            gamma * (kz * h).sin() + ratio * kz * (kz * h).cos()
        };
        let pi = std::f64::consts::PI;
        let mut a = (l as f64 + 0.5) * pi / h;
        let mut b = ((l as f64 + 1.0) * pi / h).min(kz_max);
        if a >= kz_max {
            return None;
        }
        let ga = g(a);
        if ga.signum() == g(b).signum() {
            return None;
        }
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if g(m).signum() == ga.signum() {
                a = m;
            } else {
                b = m;
            }
        }
        let kz = 0.5 * (a + b);
        Some(((nw * k0).powi(2) - kz * kz).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::oracle::pekeris_q;
    use super::*;
    use crate::environment::{Bathymetry, IndexProfile};

    fn pekeris() -> Waveguide<f64> {
        Waveguide::<f64>::pekeris(100.0, 1.0, 0.88, 1.0, 1.8).unwrap()
    }

    #[test]
    fn rigid_bottom_closed_form() {
        let env = Waveguide::<f64>::rigid(100.0, 1.0).unwrap();
        let m = solve_mode(&env, [0.0, 0.0], 0.5, 0).unwrap();
        let kz = std::f64::consts::PI / 200.0;
        assert!((kz - 0.0157080).abs() < 1e-7);
        assert!((m.q - (0.25 - kz * kz).sqrt()).abs() < 1e-13);
        assert!((m.q - 0.4997532).abs() < 1e-7);
    }

    #[test]
    fn pekeris_matches_characteristic_equation() {
        let env = pekeris();
        for l in 0..3 {
            let q = solve_q(&env, [0.0, 0.0], 0.5, l).unwrap();
            let o = pekeris_q(100.0, 1.0, 0.88, 1.8, 0.5, l).unwrap();
            assert!((q - o).abs() < 1e-10 * 0.5, "mode {l}: {q} vs {o}");
        }
    }

    #[test]
    fn below_cutoff_reports_estimate() {
        let env = pekeris();
        let exact = 0.5 * std::f64::consts::PI / (100.0 * (1.0f64 - 0.88 * 0.88).sqrt());
        match solve_modes_at(&env, [0.0, 0.0], 0.01, 3) {
            Err(Error::BelowCutoff {
                mode: 0,
                cutoff: Some(c),
                ..
            }) => {
                // At cutoff γ = 0, so cos(kz h) = 0 with kz = k0 √(n_w² − n_b²).
                assert!((c - exact).abs() < 1e-6 * exact, "cutoff {c} vs {exact}");
                assert!(pekeris_q(100.0, 1.0, 0.88, 1.8, c * 1.001, 0).is_some());
                assert!(pekeris_q(100.0, 1.0, 0.88, 1.8, c * 0.999, 0).is_none());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn modes_are_orthonormal_and_decay() {
        let env = pekeris();
        let modes = solve_modes_at(&env, [0.0, 0.0], 0.5, 3).unwrap();
        assert!(modes.len() >= 3);
        for a in &modes {
            assert!(a.norm_check < 1e-8);
            assert_eq!(a.psi[0], 0.0);
            assert!(a.tail_ratio() < 1e-6, "tail {}", a.tail_ratio());
            for b in &modes {
                let p = scalar_product(&env, a, b).unwrap();
                let expect = if a.l == b.l { 1.0 } else { 0.0 };
                assert!((p - expect).abs() < 1e-6, "<{},{}> = {p}", a.l, b.l);
            }
        }
        let zero = modes[0].scaled(0.0);
        assert_eq!(scalar_product(&env, &zero, &modes[1]).unwrap(), 0.0);
    }

    #[test]
    fn incompatible_grids_are_rejected() {
        let a = solve_mode(&pekeris(), [0.0, 0.0], 0.5, 0).unwrap();
        let other = Waveguide::<f64>::pekeris(90.0, 1.0, 0.88, 1.0, 1.8).unwrap();
        let b = solve_mode(&other, [0.0, 0.0], 0.5, 0).unwrap();
        assert!(matches!(
            scalar_product(&pekeris(), &a, &b),
            Err(Error::IncompatibleGrids(_))
        ));
    }

    #[test]
    fn interface_conditions_hold() {
        let env = pekeris();
        let m = solve_mode(&env, [0.0, 0.0], 0.5, 1).unwrap();
        let g = m.gamma.unwrap();
        let below = -g * m.psi_bottom();
        let above = m.dpsi[m.dpsi.len() - 1];
        assert!((above / env.rho_plus - below / env.rho_minus).abs() < 1e-10 * above.abs().max(1e-3));
    }

    #[test]
    fn group_slowness_identities() {
        let env = pekeris();
        for l in 0..3 {
            let m = solve_mode(&env, [0.0, 0.0], 0.5, l).unwrap();
            let c = check_group_slowness_identity(&env, &m, 0.5).unwrap();
            assert!(c.residual < 1e-2, "{c:?}");
            assert!(c.exact_residual < 1e-6, "{c:?}");
        }
        let rigid = Waveguide::<f64>::rigid(100.0, 1.0).unwrap();
        let m = solve_mode(&rigid, [0.0, 0.0], 0.5, 0).unwrap();
        let c = check_group_slowness_identity(&rigid, &m, 0.5).unwrap();
        assert!((c.n2 - 1.0).abs() < 1e-10);
        assert!((c.approx_rhs - 1.0).abs() < 1e-7);
    }

    #[test]
    fn rigid_limit_converges_monotonically() {
        let h = 100.0;
        let k0 = 0.5;
        for l in 0..3 {
            let kz = (2 * l + 1) as f64 * std::f64::consts::PI / (2.0 * h);
            let exact = (k0 * k0 - kz * kz).sqrt();
            let errs: Vec<f64> = [1e2, 1e4, 1e6]
                .iter()
                .map(|&ratio| {
                    let env = Waveguide::<f64>::pekeris(h, 1.0, 0.88, 1.0, ratio).unwrap();
                    (solve_q(&env, [0.0, 0.0], k0, l).unwrap() - exact).abs() / exact
                })
                .collect();
            assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
            assert!(errs[2] < 1e-8, "{errs:?}");
        }
    }

    #[test]
    fn depth_dependent_profile_uses_shooting() {
        // A tiny z-gradient must perturb q continuously from the uniform result.
        let env = |g: f64| {
            Waveguide::<f64>::new(
                1500.0,
                IndexProfile::LinearGradient {
                    n0: 1.0,
                    gradient: [0.0, 0.0, g],
                    n_bottom: Some(0.88),
                },
                Bathymetry::Constant { h: 100.0 },
                1.0,
                1.8,
                1.0,
            )
            .unwrap()
        };
        let q0 = solve_q(&env(0.0), [0.0, 0.0], 0.5, 1).unwrap();
        let q1 = solve_q(&env(1e-9), [0.0, 0.0], 0.5, 1).unwrap();
        assert!((q0 - q1).abs() < 1e-7, "{q0} {q1}");
        let m = solve_mode(&env(1e-4), [0.0, 0.0], 0.5, 1).unwrap();
        let c = check_group_slowness_identity(&env(1e-4), &m, 0.5).unwrap();
        assert!(c.exact_residual < 1e-6, "{c:?}");
        assert!(c.residual < 1e-2, "{c:?}");
    }
}
