//! Space-time horizontal rays parameterized by the ray time `τ`.
//!
//! State layout: `[ρ, x, y, k0, α, s, φ, kx, ky]`. The canonical wave vector
//! `k` is carried alongside `α` (via `dk/dτ = v∇q`) and feeds the Hamiltonian
//! monitor `|k|² − q²`.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::export::{fmt_f64, write_rows};
use crate::linalg::{dot2, kappa, rot90, Vec2};
use crate::modes::{Dispersion, DispersionPoint};
use crate::ode::{hermite, integrate, OdeSystem, Status, Tolerances, Trajectory};
use crate::scalar::{lit, Real};

pub const RHO: usize = 0;
pub const X: usize = 1;
pub const Y: usize = 2;
pub const K0: usize = 3;
pub const ALPHA: usize = 4;
pub const S: usize = 5;
pub const PHI: usize = 6;
pub const KX: usize = 7;
pub const KY: usize = 8;
pub const RAY_DIM: usize = 9;

/// Instantaneous ray unknowns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayState<T> {
    pub tau: T,
    /// Observable time, `dρ/dτ = 1`.
    pub rho: T,
    pub r: Vec2<T>,
    pub k0: T,
    /// Direction angle, not wrapped.
    pub alpha: T,
    pub s: T,
    pub phi: T,
    /// Canonical wave vector, `q κ` on an exact ray.
    pub k_vec: Vec2<T>,
}

impl<T: Real> RayState<T> {
    /// Launch state with `k = q κ(α)`.
    pub fn launch(rho: T, r: Vec2<T>, k0: T, alpha: T, phi: T, q: T) -> Self {
        let kv = kappa(alpha);
        Self {
            tau: T::zero(),
            rho,
            r,
            k0,
            alpha,
            s: T::zero(),
            phi,
            k_vec: [q * kv[0], q * kv[1]],
        }
    }

    pub fn kappa(&self) -> Vec2<T> {
        kappa(self.alpha)
    }

    pub fn to_vec(&self) -> Vec<T> {
        vec![
            self.rho,
            self.r[0],
            self.r[1],
            self.k0,
            self.alpha,
            self.s,
            self.phi,
            self.k_vec[0],
            self.k_vec[1],
        ]
    }

    pub fn from_slice(tau: T, y: &[T]) -> Self {
        Self {
            tau,
            rho: y[RHO],
            r: [y[X], y[Y]],
            k0: y[K0],
            alpha: y[ALPHA],
            s: y[S],
            phi: y[PHI],
            k_vec: [y[KX], y[KY]],
        }
    }
}

/// Derivatives of the ray unknowns with respect to `τ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayRates<T> {
    pub drho: T,
    pub dr: Vec2<T>,
    pub dk0: T,
    pub dalpha: T,
    pub ds: T,
    pub dphi: T,
    pub dk: Vec2<T>,
}

/// Ray equations at a dispersion point for direction `α`.
pub fn rates_at<T: Real>(p: &DispersionPoint<T>, alpha: T) -> Result<RayRates<T>> {
    if !(p.dq_dk0 > T::zero()) || !(p.q > T::zero()) {
        return Err(Error::NonPropagating(p.dq_dk0.as_f64()));
    }
    let v = p.v;
    let kv = kappa(alpha);
    let gq = [p.grad_q[0] / p.q, p.grad_q[1] / p.q];
    Ok(RayRates {
        drho: T::one(),
        dr: [v * kv[0], v * kv[1]],
        dk0: T::zero(),
        dalpha: v * dot2(gq, rot90(kv)),
        ds: v,
        dphi: v * (p.q - p.k0 * p.dq_dk0),
        dk: [v * p.grad_q[0], v * p.grad_q[1]],
    })
}

/// Right-hand side of the ray system at `state`.
pub fn ray_rhs<T: Real, D: Dispersion<T> + ?Sized>(state: &RayState<T>, surface: &D) -> Result<RayRates<T>> {
    let p = eval_checked(surface, state.r, state.k0)?;
    rates_at(&p, state.alpha)
}

pub(crate) fn eval_checked<T: Real, D: Dispersion<T> + ?Sized>(
    surface: &D,
    r: Vec2<T>,
    k0: T,
) -> Result<DispersionPoint<T>> {
    if !surface.contains(r, k0) {
        return Err(Error::out_of_domain(
            "dispersion hull",
            &[r[0].as_f64(), r[1].as_f64(), k0.as_f64()],
        ));
    }
    surface.eval(r, k0)
}

pub(crate) fn fill_ray_rates<T: Real>(rates: &RayRates<T>, dy: &mut [T]) {
    dy[RHO] = rates.drho;
    dy[X] = rates.dr[0];
    dy[Y] = rates.dr[1];
    dy[K0] = rates.dk0;
    dy[ALPHA] = rates.dalpha;
    dy[S] = rates.ds;
    dy[PHI] = rates.dphi;
    dy[KX] = rates.dk[0];
    dy[KY] = rates.dk[1];
}

struct RaySystem<'a, D: ?Sized> {
    disp: &'a D,
}

impl<T: Real, D: Dispersion<T> + ?Sized> OdeSystem<T> for RaySystem<'_, D> {
    fn dim(&self) -> usize {
        RAY_DIM
    }

    fn rhs(&self, _t: T, y: &[T], dy: &mut [T]) -> Result<()> {
        let p = eval_checked(self.disp, [y[X], y[Y]], y[K0])?;
        fill_ray_rates(&rates_at(&p, y[ALPHA])?, dy);
        Ok(())
    }
}

/// Ray unknowns plus the derived quantities at one output time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySample<T> {
    pub state: RayState<T>,
    pub q: T,
    pub dq_dk0: T,
    pub v: T,
    pub beta: T,
    /// `|q² − |k|²| / q²`.
    pub hamiltonian: T,
}

impl<T: Real> RaySample<T> {
    fn new(state: RayState<T>, p: &DispersionPoint<T>) -> Self {
        let k2 = state.k_vec[0] * state.k_vec[0] + state.k_vec[1] * state.k_vec[1];
        Self {
            state,
            q: p.q,
            dq_dk0: p.dq_dk0,
            v: p.v,
            beta: p.beta,
            hamiltonian: (p.q * p.q - k2).abs() / (p.q * p.q),
        }
    }

    /// `g = q / √(1 + (∂q/∂k0)²)`.
    pub fn g(&self) -> T {
        self.q / (T::one() + self.dq_dk0 * self.dq_dk0).sqrt()
    }
}

/// How a trace ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TraceStatus<T> {
    Completed,
    /// The ray reached the edge of the dispersion hull at this `τ`.
    LeftDomain {
        tau: T,
    },
}

/// Samples of one ray at the accepted integrator steps.
#[derive(Debug, Clone, PartialEq)]
pub struct RayPath<T> {
    pub mu: T,
    pub nu: T,
    pub samples: Vec<RaySample<T>>,
    /// Jacobian per sample, filled by the variational pass.
    pub d: Vec<T>,
    /// Leading-order Jacobian `(τ_ref, D_ref)` for sources with `D(0) = 0`.
    pub d_ref: Option<(T, T)>,
    /// Amplitude per sample, filled by [`amplitude_along_ray`].
    pub a: Vec<T>,
    pub status: TraceStatus<T>,
    pub(crate) y: Vec<Vec<T>>,
    pub(crate) dy: Vec<Vec<T>>,
}

impl<T: Real> RayPath<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn taus(&self) -> Vec<T> {
        self.samples.iter().map(|s| s.state.tau).collect()
    }

    pub fn first(&self) -> &RaySample<T> {
        &self.samples[0]
    }

    pub fn last(&self) -> &RaySample<T> {
        &self.samples[self.samples.len() - 1]
    }

    pub fn tau_end(&self) -> T {
        self.last().state.tau
    }

    /// Raw integrator state at sample `i`.
    pub fn raw_state(&self, i: usize) -> &[T] {
        &self.y[i]
    }

    /// Index `i` with `τ_i ≤ τ ≤ τ_{i+1}` (forward paths).
    pub fn segment(&self, tau: T) -> Option<usize> {
        let n = self.samples.len();
        if n < 2 || tau < self.samples[0].state.tau || tau > self.tau_end() {
            return None;
        }
        let pos = self.samples.partition_point(|s| s.state.tau <= tau);
        Some(pos.clamp(1, n - 1) - 1)
    }

    /// Cubic Hermite interpolation of the stored integrator state.
    pub fn interpolate(&self, tau: T) -> Option<Vec<T>> {
        if self.samples.len() == 1 {
            return (tau == self.samples[0].state.tau).then(|| self.y[0].clone());
        }
        let i = self.segment(tau)?;
        let (t0, t1) = (self.samples[i].state.tau, self.samples[i + 1].state.tau);
        Some(hermite(
            t0,
            &self.y[i],
            &self.dy[i],
            t1,
            &self.y[i + 1],
            &self.dy[i + 1],
            tau,
        ))
    }

    /// `max |q² − |k|²|/q²` over the path.
    pub fn max_hamiltonian(&self) -> T {
        self.samples.iter().fold(T::zero(), |m, s| m.max(s.hamiltonian))
    }
}

pub(crate) fn map_status<T: Real>(tr: &Trajectory<T>) -> Result<TraceStatus<T>> {
    match &tr.status {
        Status::Completed => Ok(TraceStatus::Completed),
        Status::RhsFailed(Error::OutOfDomain { .. }) if tr.t.len() > 1 => Ok(TraceStatus::LeftDomain {
            tau: *tr.t.last().unwrap(),
        }),
        Status::RhsFailed(Error::OutOfDomain { what, point }) => Err(Error::OutOfDomain {
            what: what.clone(),
            point: point.clone(),
        }),
        Status::RhsFailed(e) => Err(Error::Numerical(e.to_string())),
        Status::StepUnderflow => Err(Error::StepUnderflow(tr.t.last().unwrap().as_f64())),
        Status::StepLimit => Err(Error::Numerical("integrator step limit reached".into())),
    }
}

pub(crate) fn samples_from<T: Real, D: Dispersion<T> + ?Sized>(
    disp: &D,
    tr: &Trajectory<T>,
) -> Result<Vec<RaySample<T>>> {
    tr.t.iter()
        .zip(&tr.y)
        .map(|(&t, y)| {
            let st = RayState::from_slice(t, y);
            let p = disp.eval(st.r, st.k0)?;
            Ok(RaySample::new(st, &p))
        })
        .collect()
}

fn check_init<T: Real, D: Dispersion<T> + ?Sized>(disp: &D, init: &RayState<T>) -> Result<()> {
    ray_rhs(init, disp).map(|_| ())
}

/// Integrates one ray from `init.tau` to `tau_end` (either direction).
pub fn trace_ray_to<T: Real, D: Dispersion<T> + ?Sized>(
    surface: &D,
    init: &RayState<T>,
    tau_end: T,
    tol: &Tolerances<T>,
) -> Result<RayPath<T>> {
    check_init(surface, init)?;
    let sys = RaySystem { disp: surface };
    let tr = integrate(&sys, init.tau, &init.to_vec(), tau_end, tol);
    let status = map_status(&tr)?;
    Ok(RayPath {
        mu: T::zero(),
        nu: T::zero(),
        samples: samples_from(surface, &tr)?,
        d: Vec::new(),
        d_ref: None,
        a: Vec::new(),
        status,
        y: tr.y,
        dy: tr.dy,
    })
}

/// Integrates one ray forward over `[init.tau, init.tau + tau_max]`.
pub fn trace_ray<T: Real, D: Dispersion<T> + ?Sized>(
    surface: &D,
    init: &RayState<T>,
    tau_max: T,
    tol: &Tolerances<T>,
) -> Result<RayPath<T>> {
    if !(tau_max >= T::zero()) {
        return Err(Error::invariant("tau_max", "must be non-negative"));
    }
    if !(tol.rtol > T::zero() && tol.atol > T::zero()) {
        return Err(Error::invariant("tolerance", "must be positive"));
    }
    trace_ray_to(surface, init, init.tau + tau_max, tol)
}

/// Traces independent rays in parallel; output order follows `inits`.
pub fn trace_fan<T: Real, D: Dispersion<T> + ?Sized>(
    surface: &D,
    inits: &[(T, T, RayState<T>)],
    tau_max: T,
    tol: &Tolerances<T>,
) -> Vec<Result<RayPath<T>>> {
    inits
        .par_iter()
        .map(|(mu, nu, init)| {
            trace_ray(surface, init, tau_max, tol).map(|mut p| {
                p.mu = *mu;
                p.nu = *nu;
                p
            })
        })
        .collect()
}

/// Leading-order amplitude `A(τ) = A0 √(g(0)/g(τ)) √(D(0)/D(τ))` between caustics.
///
/// When `D(0) = 0` (point sources) the reference `(τ_ref, D_ref)` replaces
/// `D(0)`, which normalizes `A(τ_ref) ≈ A0`; the `τ = 0` sample is then infinite.
pub fn amplitude_along_ray<T: Real, D: Dispersion<T> + ?Sized>(
    path: &RayPath<T>,
    _surface: &D,
    a0: T,
) -> Result<Vec<T>> {
    if path.d.len() != path.samples.len() {
        return Err(Error::invariant(
            "D",
            "Jacobian samples are missing; run the variational pass",
        ));
    }
    let g0 = path.first().g();
    let d0 = path.d[0];
    let (d_norm, skip_first) = if d0 != T::zero() {
        (d0, false)
    } else {
        match path.d_ref {
            Some((_, r)) if r != T::zero() => (r, true),
            _ => return Err(Error::CausticInSegment { index: 0 }),
        }
    };
    let sign = d_norm.signum();
    let mut out = Vec::with_capacity(path.len());
    for (i, (s, &d)) in path.samples.iter().zip(&path.d).enumerate() {
        if i == 0 && skip_first {
            out.push(T::infinity());
            continue;
        }
        if d == T::zero() || d.signum() != sign {
            return Err(Error::CausticInSegment { index: i });
        }
        out.push(a0 * (g0 / s.g()).sqrt() * (d_norm / d).sqrt());
    }
    Ok(out)
}

/// Accumulated phase `φ(τ) = φ(0) + ∫(q − k0 ∂q/∂k0) ds` per sample.
pub fn phase_along_ray<T: Real>(path: &RayPath<T>) -> Vec<T> {
    path.samples.iter().map(|s| s.state.phi).collect()
}

/// Writes a ray as CSV with columns `tau,rho,x,y,k0,alpha,s,phi,v,D,A`.
pub fn write_ray_csv<T: Real, W: Write>(out: W, path: &RayPath<T>) -> Result<usize> {
    let nan = T::nan();
    write_rows(
        out,
        &["tau", "rho", "x", "y", "k0", "alpha", "s", "phi", "v", "D", "A"],
        path.samples.iter().enumerate().map(|(i, s)| {
            let st = &s.state;
            [
                st.tau,
                st.rho,
                st.r[0],
                st.r[1],
                st.k0,
                st.alpha,
                st.s,
                st.phi,
                s.v,
                path.d.get(i).copied().unwrap_or(nan),
                path.a.get(i).copied().unwrap_or(nan),
            ]
            .iter()
            .map(|v| fmt_f64(v.as_f64()))
            .collect::<Vec<_>>()
        }),
    )
}

/// Default integrator tolerances for rays.
pub fn default_tolerances<T: Real>() -> Tolerances<T> {
    Tolerances::new(lit(1e-9), lit(1e-12))
}
