//! Linearized ray perturbations, the fundamental matrix `ℳ`, the Jacobi
//! matrix `𝒥 = ∂(ρ, x, y)/∂(τ, μ, ν)` and space-time caustics.
//!
//! The extended state appends `ℳ` (row-major) and four quadrature channels
//! `(∂φ/∂μ, ∂φ/∂ν, ∂s/∂μ, ∂s/∂ν)` to the ray state, so one integration pass
//! yields everything needed for amplitudes, fronts and eigenray Newton steps.

use std::io::Write;

use crate::error::{Error, Result};
use crate::export::{fmt_f64, write_rows};
use crate::linalg::{det3, dot2, identity4, kappa, mat2_vec, mat4_vec, rot90, Mat3, Mat4, Vec2};
use crate::modes::{Dispersion, DispersionPoint};
use crate::ode::{integrate, OdeSystem, Tolerances};
use crate::raytrace::{
    eval_checked, fill_ray_rates, map_status, rates_at, samples_from, RayPath, RayState, ALPHA, K0, RAY_DIM, X, Y,
};
use crate::roots::brent;
use crate::scalar::{lit, Real};

pub const M_OFFSET: usize = RAY_DIM;
pub const Q_OFFSET: usize = RAY_DIM + 16;
pub const EXT_DIM: usize = RAY_DIM + 20;

/// Ray perturbation `(Δ‖, Δ⊥, Δα, Δ0)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DeltaVector<T> {
    pub d_par: T,
    pub d_perp: T,
    pub d_alpha: T,
    pub d_0: T,
}

impl<T: Real> DeltaVector<T> {
    pub fn from_array(a: [T; 4]) -> Self {
        Self {
            d_par: a[0],
            d_perp: a[1],
            d_alpha: a[2],
            d_0: a[3],
        }
    }

    pub fn to_array(self) -> [T; 4] {
        [self.d_par, self.d_perp, self.d_alpha, self.d_0]
    }

    /// Position offset `Δ‖ κ + Δ⊥ Jκ`.
    pub fn position(&self, alpha: T) -> Vec2<T> {
        let k = kappa(alpha);
        let jk = rot90(k);
        [
            self.d_par * k[0] + self.d_perp * jk[0],
            self.d_par * k[1] + self.d_perp * jk[1],
        ]
    }
}

/// Logarithmic derivatives of `q` and `v` along `κ`, `Jκ` and `k0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDerivatives<T> {
    pub q_par: T,
    pub q_perp: T,
    pub q_0: T,
    pub v_par: T,
    pub v_perp: T,
    pub v_0: T,
}

impl<T: Real> LogDerivatives<T> {
    pub fn new(p: &DispersionPoint<T>, alpha: T) -> Self {
        let k = kappa(alpha);
        let jk = rot90(k);
        let gq = [p.grad_q[0] / p.q, p.grad_q[1] / p.q];
        let gv = [-p.grad_dq_dk0[0] / p.dq_dk0, -p.grad_dq_dk0[1] / p.dq_dk0];
        Self {
            q_par: dot2(gq, k),
            q_perp: dot2(gq, jk),
            q_0: p.dq_dk0 / p.q,
            v_par: dot2(gv, k),
            v_perp: dot2(gv, jk),
            v_0: -p.d2q_dk02 / p.dq_dk0,
        }
    }
}

/// 4×4 coefficient matrix of `dΔ/dτ = v A Δ` (without the `v` factor).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientMatrix<T> {
    pub a: Mat4<T>,
}

/// Assembles the coefficient matrix at a ray state.
pub fn build_a<T: Real>(state: &RayState<T>, point: &DispersionPoint<T>) -> CoefficientMatrix<T> {
    coefficient_matrix(point, state.alpha, state.k0)
}

pub(crate) fn coefficient_matrix<T: Real>(p: &DispersionPoint<T>, alpha: T, k0: T) -> CoefficientMatrix<T> {
    let l = LogDerivatives::new(p, alpha);
    let k = kappa(alpha);
    let jk = rot90(k);
    let hk = mat2_vec(&p.hess_q, k);
    let hjk = mat2_vec(&p.hess_q, jk);
    let z = T::zero();
    let q = p.q;
    CoefficientMatrix {
        a: [
            [l.v_par, l.v_perp + l.q_perp, z, l.v_0 * k0],
            [-l.q_perp, z, T::one(), z],
            [
                l.q_perp * (l.v_par - l.q_par) + dot2(hk, jk) / q,
                l.q_perp * (l.v_perp - l.q_perp) + dot2(hjk, jk) / q,
                -l.q_par,
                (l.q_perp * (l.v_0 - l.q_0) + dot2(p.grad_dq_dk0, jk) / q) * k0,
            ],
            [z, z, z, z],
        ],
    }
}

/// Tangent data of the initial surface at one `(μ, ν)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialDeltas<T> {
    pub d_mu: [T; 4],
    pub d_nu: [T; 4],
    /// `(∂ρ0/∂μ, ∂ρ0/∂ν)`.
    pub drho0: [T; 2],
    /// `(∂φ0/∂μ, ∂φ0/∂ν)`.
    pub dphi0: [T; 2],
}

/// Partial derivatives of the source functions with respect to `(μ, ν)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceTangents<T> {
    pub r0: [Vec2<T>; 2],
    pub alpha0: [T; 2],
    pub k0: [T; 2],
    pub rho0: [T; 2],
    pub phi0: [T; 2],
}

impl<T: Real> InitialDeltas<T> {
    /// Projects source tangents on `κ(α0)`, `Jκ(α0)`.
    pub fn from_tangents(alpha0: T, k0: T, t: &SourceTangents<T>) -> Self {
        let k = kappa(alpha0);
        let jk = rot90(k);
        let d = |i: usize| [dot2(t.r0[i], k), dot2(t.r0[i], jk), t.alpha0[i], t.k0[i] / k0];
        Self {
            d_mu: d(0),
            d_nu: d(1),
            drho0: t.rho0,
            dphi0: t.phi0,
        }
    }

    /// Tangents for parameters rescaled by `(sμ, sν)`.
    pub fn scaled(&self, s_mu: T, s_nu: T) -> Self {
        Self {
            d_mu: self.d_mu.map(|x| x * s_mu),
            d_nu: self.d_nu.map(|x| x * s_nu),
            drho0: [self.drho0[0] * s_mu, self.drho0[1] * s_nu],
            dphi0: [self.dphi0[0] * s_mu, self.dphi0[1] * s_nu],
        }
    }

    /// True when `∂r0/∂μ = ∂r0/∂ν = 0` (point sources).
    pub fn is_point(&self) -> bool {
        let z = T::zero();
        self.d_mu[0] == z && self.d_mu[1] == z && self.d_nu[0] == z && self.d_nu[1] == z
    }

    pub fn check(&self, mu: T, nu: T) -> Result<()> {
        let zero = |d: &[T; 4], r: T| d.iter().all(|x| *x == T::zero()) && r == T::zero();
        if zero(&self.d_mu, self.drho0[0]) || zero(&self.d_nu, self.drho0[1]) {
            return Err(Error::DegenerateSource {
                mu: mu.as_f64(),
                nu: nu.as_f64(),
            });
        }
        Ok(())
    }
}

/// 3×3 Jacobi matrix, rows `(ρ, x, y)`, columns `(τ, μ, ν)`.
pub fn jacobi_matrix<T: Real>(v: T, alpha: T, a: &[T; 4], b: &[T; 4], drho0: [T; 2]) -> Mat3<T> {
    let k = kappa(alpha);
    let jk = rot90(k);
    let col = |d: &[T; 4]| [d[0] * k[0] + d[1] * jk[0], d[0] * k[1] + d[1] * jk[1]];
    let (pa, pb) = (col(a), col(b));
    [
        [T::one(), drho0[0], drho0[1]],
        [v * k[0], pa[0], pb[0]],
        [v * k[1], pa[1], pb[1]],
    ]
}

/// `D = det 𝒥` from the propagated tangents `a = ℳΔμ`, `b = ℳΔν`.
pub fn jacobian_d<T: Real>(v: T, alpha: T, a: &[T; 4], b: &[T; 4], drho0: [T; 2]) -> T {
    det3(&jacobi_matrix(v, alpha, a, b, drho0))
}

/// Expanded scalar form `[a1 b1 − a2 b2] + v[ρ0_ν a2 − ρ0_μ b2]` kept as a diagnostic.
///
/// It is not a determinant; compare with [`jacobian_d`] to see the discrepancy.
pub fn expanded_d<T: Real>(v: T, a: &[T; 4], b: &[T; 4], drho0: [T; 2]) -> T {
    (a[0] * b[0] - a[1] * b[1]) + v * (drho0[1] * a[1] - drho0[0] * b[1])
}

/// Leading-order `D ≈ c τ^m` near `τ = 0` for sources with `∂r0 = 0`.
///
/// Returns `(m, c)`.
pub fn leading_order_d<T: Real>(v: T, a_mat: &Mat4<T>, deltas: &InitialDeltas<T>) -> Option<(i32, T)> {
    let rate = |d: &[T; 4]| mat4_vec(a_mat, *d).map(|x| x * v);
    let (am, an) = (rate(&deltas.d_mu), rate(&deltas.d_nu));
    let [rm, rn] = deltas.drho0;
    let t1 = rn * am[1];
    let t2 = rm * an[1];
    let c1 = v * (t1 - t2);
    let scale1 = v * (t1.abs() + t2.abs());
    if c1 != T::zero() && c1.abs() > lit::<T>(1e-10) * scale1 {
        return Some((1, c1));
    }
    let u1 = am[0] * an[1];
    let u2 = am[1] * an[0];
    let c2 = u1 - u2;
    if c2 != T::zero() && c2.abs() > lit::<T>(1e-10) * (u1.abs() + u2.abs()) {
        return Some((2, c2));
    }
    None
}

struct ExtendedSystem<'a, T, D: ?Sized> {
    disp: &'a D,
    d_mu: [T; 4],
    d_nu: [T; 4],
}

impl<T: Real, D: Dispersion<T> + ?Sized> OdeSystem<T> for ExtendedSystem<'_, T, D> {
    fn dim(&self) -> usize {
        EXT_DIM
    }

    fn rhs(&self, _t: T, y: &[T], dy: &mut [T]) -> Result<()> {
        let p = eval_checked(self.disp, [y[X], y[Y]], y[K0])?;
        let alpha = y[ALPHA];
        let k0 = y[K0];
        fill_ray_rates(&rates_at(&p, alpha)?, dy);
        let a = coefficient_matrix(&p, alpha, k0).a;
        let m = unpack_m(y);
        let v = p.v;
        for i in 0..4 {
            for j in 0..4 {
                let mut acc = T::zero();
                for l in 0..4 {
                    acc += a[i][l] * m[l][j];
                }
                dy[M_OFFSET + 4 * i + j] = v * acc;
            }
        }
        let ld = LogDerivatives::new(&p, alpha);
        let qv = p.q * v;
        for (c, d) in [self.d_mu, self.d_nu].iter().enumerate() {
            let t = mat4_vec(&m, *d);
            let dphi = qv
                * ((ld.q_par + ld.v_par) * t[0] + (ld.q_perp + ld.v_perp) * t[1] + (ld.q_0 + ld.v_0) * k0 * t[3])
                - k0 * t[3];
            let ds = v * (ld.v_par * t[0] + ld.v_perp * t[1] + ld.v_0 * k0 * t[3]);
            dy[Q_OFFSET + c] = dphi;
            dy[Q_OFFSET + 2 + c] = ds;
        }
        Ok(())
    }
}

fn unpack_m<T: Real>(y: &[T]) -> Mat4<T> {
    std::array::from_fn(|i| std::array::from_fn(|j| y[M_OFFSET + 4 * i + j]))
}

fn pack_initial<T: Real>(init: &RayState<T>, deltas: &InitialDeltas<T>) -> Vec<T> {
    let mut y = init.to_vec();
    let id = identity4::<T>();
    for row in &id {
        y.extend_from_slice(row);
    }
    y.extend_from_slice(&[deltas.dphi0[0], deltas.dphi0[1], T::zero(), T::zero()]);
    y
}

/// A ray traced together with its fundamental matrix and tangent channels.
#[derive(Debug, Clone)]
pub struct VariationalPath<T> {
    /// Ray samples; `d` and `d_ref` are filled.
    pub path: RayPath<T>,
    pub deltas: InitialDeltas<T>,
    pub tol: Tolerances<T>,
}

impl<T: Real> VariationalPath<T> {
    pub fn len(&self) -> usize {
        self.path.len()
    }

    pub fn is_empty(&self) -> bool {
        self.path.is_empty()
    }

    /// `ℳ` at sample `i`.
    pub fn m(&self, i: usize) -> Mat4<T> {
        unpack_m(&self.path.y[i])
    }

    /// Propagated tangents `(ℳΔμ, ℳΔν)` at sample `i`.
    pub fn tangents(&self, i: usize) -> ([T; 4], [T; 4]) {
        tangents_of(&self.path.y[i], &self.deltas)
    }

    /// `(∂φ/∂μ, ∂φ/∂ν)` at sample `i`.
    pub fn dphi(&self, i: usize) -> [T; 2] {
        let y = &self.path.y[i];
        [y[Q_OFFSET], y[Q_OFFSET + 1]]
    }

    /// `(∂s/∂μ, ∂s/∂ν)` at sample `i`.
    pub fn ds(&self, i: usize) -> [T; 2] {
        let y = &self.path.y[i];
        [y[Q_OFFSET + 2], y[Q_OFFSET + 3]]
    }

    pub fn jacobi(&self, i: usize) -> Mat3<T> {
        let s = &self.path.samples[i];
        let (a, b) = self.tangents(i);
        jacobi_matrix(s.v, s.state.alpha, &a, &b, self.deltas.drho0)
    }

    /// Extended state at `τ` by re-integration from the nearest earlier sample.
    pub fn state_at<D: Dispersion<T> + ?Sized>(&self, surface: &D, tau: T) -> Result<Vec<T>> {
        let i = self
            .path
            .segment(tau)
            .ok_or_else(|| Error::invariant("tau", "outside the traced interval"))?;
        let t0 = self.path.samples[i].state.tau;
        if tau == t0 {
            return Ok(self.path.y[i].clone());
        }
        let sys = ExtendedSystem {
            disp: surface,
            d_mu: self.deltas.d_mu,
            d_nu: self.deltas.d_nu,
        };
        let tr = integrate(&sys, t0, &self.path.y[i], tau, &self.tol);
        if !tr.status.is_completed() {
            return Err(Error::Numerical(format!("re-integration failed: {:?}", tr.status)));
        }
        Ok(tr.y.last().unwrap().clone())
    }

    /// `D` evaluated from an extended state at `τ`.
    pub fn d_of_state<D: Dispersion<T> + ?Sized>(&self, surface: &D, y: &[T]) -> Result<T> {
        let p = surface.eval([y[X], y[Y]], y[K0])?;
        let (a, b) = tangents_of(y, &self.deltas);
        Ok(jacobian_d(p.v, y[ALPHA], &a, &b, self.deltas.drho0))
    }
}

pub(crate) fn tangents_of<T: Real>(y: &[T], deltas: &InitialDeltas<T>) -> ([T; 4], [T; 4]) {
    let m = unpack_m(y);
    (mat4_vec(&m, deltas.d_mu), mat4_vec(&m, deltas.d_nu))
}

/// Traces a ray together with `ℳ`, `D` and the tangent quadratures.
pub fn trace_variational<T: Real, D: Dispersion<T> + ?Sized>(
    surface: &D,
    init: &RayState<T>,
    deltas: &InitialDeltas<T>,
    tau_max: T,
    tol: &Tolerances<T>,
) -> Result<VariationalPath<T>> {
    if !(tau_max >= T::zero()) {
        return Err(Error::invariant("tau_max", "must be non-negative"));
    }
    let p0 = eval_checked(surface, init.r, init.k0)?;
    rates_at(&p0, init.alpha)?;
    let sys = ExtendedSystem {
        disp: surface,
        d_mu: deltas.d_mu,
        d_nu: deltas.d_nu,
    };
    let tr = integrate(&sys, init.tau, &pack_initial(init, deltas), init.tau + tau_max, tol);
    let status = map_status(&tr)?;
    let samples = samples_from(surface, &tr)?;
    let d: Vec<T> = samples
        .iter()
        .zip(&tr.y)
        .map(|(s, y)| {
            let (a, b) = tangents_of(y, deltas);
            jacobian_d(s.v, s.state.alpha, &a, &b, deltas.drho0)
        })
        .collect();
    let d_ref = if deltas.is_point() {
        let a0 = coefficient_matrix(&p0, init.alpha, init.k0).a;
        leading_order_d(p0.v, &a0, deltas).map(|(m, c)| {
            let tr = T::one() / p0.v;
            (tr, c * tr.powi(m))
        })
    } else {
        None
    };
    Ok(VariationalPath {
        path: RayPath {
            mu: T::zero(),
            nu: T::zero(),
            samples,
            d,
            d_ref,
            a: Vec::new(),
            status,
            y: tr.y,
            dy: tr.dy,
        },
        deltas: *deltas,
        tol: *tol,
    })
}

/// `ℳ` at every sample of an existing ray path, integrated through the sample times.
pub fn integrate_fundamental<T: Real, D: Dispersion<T> + ?Sized>(
    surface: &D,
    path: &RayPath<T>,
    tol: &Tolerances<T>,
) -> Result<Vec<Mat4<T>>> {
    let init = path.first().state;
    let zero = InitialDeltas {
        d_mu: [T::zero(); 4],
        d_nu: [T::zero(); 4],
        drho0: [T::zero(); 2],
        dphi0: [T::zero(); 2],
    };
    let sys = ExtendedSystem {
        disp: surface,
        d_mu: zero.d_mu,
        d_nu: zero.d_nu,
    };
    let times = path.taus();
    let states = crate::ode::integrate_through(&sys, &pack_initial(&init, &zero), &times, tol)
        .map_err(|(i, st)| Error::Numerical(format!("fundamental matrix integration failed at sample {i}: {st:?}")))?;
    Ok(states.iter().map(|y| unpack_m(y)).collect())
}

/// Computes `D` per sample for a path given its fundamental matrices.
pub fn jacobian_along<T: Real>(path: &RayPath<T>, fund: &[Mat4<T>], deltas: &InitialDeltas<T>) -> Vec<T> {
    path.samples
        .iter()
        .zip(fund)
        .map(|(s, m)| {
            let a = mat4_vec(m, deltas.d_mu);
            let b = mat4_vec(m, deltas.d_nu);
            jacobian_d(s.v, s.state.alpha, &a, &b, deltas.drho0)
        })
        .collect()
}

/// A located zero of `D` along one ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Caustic<T> {
    pub tau: T,
    /// Sample indices bracketing the sign change.
    pub bracket: (usize, usize),
    pub rho: T,
    pub r: Vec2<T>,
}

/// Pairs of consecutive nonzero samples with opposite signs of `d`.
pub fn sign_changes<T: Real>(d: &[T]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut prev: Option<(usize, T)> = None;
    for (i, &x) in d.iter().enumerate() {
        if x == T::zero() || !x.is_finite() {
            continue;
        }
        if let Some((j, s)) = prev {
            if s != x.signum() {
                out.push((j, i));
            }
        }
        prev = Some((i, x.signum()));
    }
    out
}

/// Roots of `f` in each bracket, refined until `|f| ≤ 1e-10·scale`.
pub fn refine_roots<T: Real, F: FnMut(T) -> Result<T>>(
    taus: &[T],
    brackets: &[(usize, usize)],
    scale: T,
    mut f: F,
) -> Result<Vec<T>> {
    let target = lit::<T>(1e-10) * scale;
    let mut out = Vec::with_capacity(brackets.len());
    for &(i, j) in brackets {
        let (a, b) = (taus[i], taus[j]);
        let xtol = T::epsilon() * lit::<T>(4.0) * b.abs().max(T::one());
        let mut root = brent(&mut f, a, b, xtol, 200)?;
        if f(root)?.abs() > target {
            root = crate::roots::bisect(&mut f, a, b, T::epsilon() * b.abs().max(T::one()), 400)?;
        }
        out.push(root);
    }
    Ok(out)
}

/// Sign changes of `D` along the path, located by exact re-integration.
pub fn detect_caustics<T: Real, D: Dispersion<T> + ?Sized>(
    vp: &VariationalPath<T>,
    surface: &D,
) -> Result<Vec<Caustic<T>>> {
    let d = &vp.path.d;
    let brackets = sign_changes(d);
    if brackets.is_empty() {
        return Ok(Vec::new());
    }
    let scale = d.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    let taus = vp.path.taus();
    let roots = refine_roots(&taus, &brackets, scale, |t| {
        let y = vp.state_at(surface, t)?;
        vp.d_of_state(surface, &y)
    })?;
    roots
        .into_iter()
        .zip(brackets)
        .map(|(tau, bracket)| {
            let y = vp.state_at(surface, tau)?;
            Ok(Caustic {
                tau,
                bracket,
                rho: y[0],
                r: [y[X], y[Y]],
            })
        })
        .collect()
}

/// Writes caustics as CSV with columns `mu,nu,tau_star,rho_star,x_star,y_star`.
pub fn write_caustics_csv<T: Real, W: Write>(out: W, rows: &[(T, T, Caustic<T>)]) -> Result<usize> {
    write_rows(
        out,
        &["mu", "nu", "tau_star", "rho_star", "x_star", "y_star"],
        rows.iter().map(|(mu, nu, c)| {
            [*mu, *nu, c.tau, c.rho, c.r[0], c.r[1]]
                .iter()
                .map(|v| fmt_f64(v.as_f64()))
                .collect::<Vec<_>>()
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::mat4_mul;
    use crate::modes::{AnalyticDispersion, Geometry, ModeLaw};
    use crate::raytrace::trace_ray_to;

    fn ideal() -> ModeLaw<f64> {
        ModeLaw::IdealWaveguide {
            n: 1.0,
            h: 100.0,
            mode: 0,
        }
    }

    fn homogeneous() -> AnalyticDispersion<f64> {
        AnalyticDispersion::new(ideal(), Geometry::Homogeneous)
    }

    fn lens() -> AnalyticDispersion<f64> {
        AnalyticDispersion::new(ideal(), Geometry::Lens { length: 1000.0 })
    }

    fn launch(d: &impl Dispersion<f64>, r: Vec2<f64>, k0: f64, alpha: f64) -> RayState<f64> {
        RayState::launch(0.0, r, k0, alpha, 0.0, d.eval(r, k0).unwrap().q)
    }

    fn point_deltas() -> InitialDeltas<f64> {
        InitialDeltas {
            d_mu: [0.0, 0.0, 1.0, 0.0],
            d_nu: [0.0; 4],
            drho0: [0.0, 1.0],
            dphi0: [0.0, -0.5],
        }
    }

    #[test]
    fn homogeneous_matrix_structure() {
        let d = homogeneous();
        let st = launch(&d, [0.0, 0.0], 0.5, 0.7);
        let p = d.eval(st.r, st.k0).unwrap();
        let a = build_a(&st, &p).a;
        for (i, row) in a.iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                match (i, j) {
                    (0, 3) => assert!((x - LogDerivatives::new(&p, 0.7).v_0 * 0.5).abs() < 1e-15 && x != 0.0),
                    (1, 2) => assert_eq!(x, 1.0),
                    _ => assert_eq!(x, 0.0),
                }
            }
        }
        let nd = AnalyticDispersion::new(ModeLaw::Nondispersive { n: 1.3 }, Geometry::Homogeneous);
        let p = nd.eval([0.0, 0.0], 0.5).unwrap();
        let a = coefficient_matrix(&p, 0.1, 0.5).a;
        assert_eq!(a[0][3], 0.0);
        assert_eq!(a[1][2], 1.0);
    }

    #[test]
    fn lens_on_axis_curvature_entry() {
        let d = lens();
        let st = launch(&d, [0.0, 0.0], 0.5, 0.0);
        let p = d.eval(st.r, st.k0).unwrap();
        let a = build_a(&st, &p).a;
        assert_eq!(a[1][0], 0.0);
        assert!((a[2][1] + 1e-6).abs() < 1e-18);
        assert_eq!(a[3], [0.0; 4]);
    }

    #[test]
    fn homogeneous_closed_form() {
        let d = homogeneous();
        let st = launch(&d, [0.0, 0.0], 0.5, 0.3);
        let vp = trace_variational(&d, &st, &point_deltas(), 800.0, &Tolerances::default()).unwrap();
        let p = d.eval(st.r, st.k0).unwrap();
        let a = build_a(&st, &p).a;
        for i in 0..vp.len() {
            let tau = vp.path.samples[i].state.tau;
            let m = vp.m(i);
            for r in 0..4 {
                for c in 0..4 {
                    let e = if r == c { 1.0 } else { 0.0 } + tau * p.v * a[r][c];
                    assert!((m[r][c] - e).abs() <= 1e-10 * e.abs().max(1.0));
                }
            }
            let s = vp.path.samples[i].state.s;
            assert!((vp.path.d[i] - p.v * s).abs() <= 1e-9 * (p.v * s).max(1.0));
        }
    }

    #[test]
    fn fundamental_matrix_on_given_path() {
        let d = lens();
        let st = launch(&d, [0.0, 30.0], 0.5, 0.05);
        let tol = Tolerances::new(1e-11, 1e-13);
        let path = crate::raytrace::trace_ray(&d, &st, 1500.0, &tol).unwrap();
        let fund = integrate_fundamental(&d, &path, &tol).unwrap();
        assert_eq!(fund.len(), path.len());
        assert_eq!(fund[0], identity4());
        let vp = trace_variational(&d, &st, &point_deltas(), 1500.0, &tol).unwrap();
        let end = vp.m(vp.len() - 1);
        let other = fund.last().unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert!((end[r][c] - other[r][c]).abs() < 1e-7 * end[r][c].abs().max(1.0));
            }
            assert!(fund.iter().all(|m| m[3] == [0.0, 0.0, 0.0, 1.0]));
        }
    }

    #[test]
    fn composition_property() {
        let d = lens();
        let st = launch(&d, [0.0, 40.0], 0.5, -0.02);
        let tol = Tolerances::new(1e-12, 1e-14);
        let vp = trace_variational(&d, &st, &point_deltas(), 2000.0, &tol).unwrap();
        let i1 = vp.len() / 2;
        let s1 = RayState::from_slice(vp.path.samples[i1].state.tau, &vp.path.y[i1]);
        let tail = trace_variational(&d, &s1, &point_deltas(), 2000.0 - s1.tau, &tol).unwrap();
        let m21 = tail.m(tail.len() - 1);
        let composed = mat4_mul(&m21, &vp.m(i1));
        let direct = vp.m(vp.len() - 1);
        for r in 0..4 {
            for c in 0..4 {
                assert!((composed[r][c] - direct[r][c]).abs() <= 1e-8 * direct[r][c].abs().max(1.0));
            }
        }
    }

    fn perturbed(st: &RayState<f64>, d: &impl Dispersion<f64>, e: usize, h: f64) -> RayState<f64> {
        let k = kappa(st.alpha);
        let jk = rot90(k);
        let (mut r, mut alpha, mut k0) = (st.r, st.alpha, st.k0);
        match e {
            0 => r = [r[0] + h * k[0], r[1] + h * k[1]],
            1 => r = [r[0] + h * jk[0], r[1] + h * jk[1]],
            2 => alpha += h,
            _ => k0 *= 1.0 + h,
        }
        launch(d, r, k0, alpha)
    }

    fn twin_check(d: &impl Dispersion<f64>, st: RayState<f64>, tau: f64) {
        let tol = Tolerances::new(1e-13, 1e-15);
        let id = InitialDeltas {
            d_mu: [0.0; 4],
            d_nu: [0.0; 4],
            drho0: [0.0; 2],
            dphi0: [0.0; 2],
        };
        let vp = trace_variational(d, &st, &id, tau, &tol).unwrap();
        let m = vp.m(vp.len() - 1);
        let base = vp.path.last().state;
        let (k, jk) = (base.kappa(), rot90(base.kappa()));
        let h = 1e-5;
        for e in 0..4 {
            let plus = trace_ray_to(d, &perturbed(&st, d, e, h), tau, &tol)
                .unwrap()
                .last()
                .state;
            let minus = trace_ray_to(d, &perturbed(&st, d, e, -h), tau, &tol)
                .unwrap()
                .last()
                .state;
            let dr = [
                (plus.r[0] - minus.r[0]) / (2.0 * h),
                (plus.r[1] - minus.r[1]) / (2.0 * h),
            ];
            let fd = [
                dot2(dr, k),
                dot2(dr, jk),
                (plus.alpha - minus.alpha) / (2.0 * h),
                (plus.k0 - minus.k0) / (2.0 * h) / st.k0,
            ];
            let col = [m[0][e], m[1][e], m[2][e], m[3][e]];
            let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            let err = col.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(err <= 1e-3 * norm, "column {e}: {col:?} vs {fd:?}");
        }
    }

    #[test]
    fn twin_rays_homogeneous() {
        let d = homogeneous();
        twin_check(&d, launch(&d, [0.0, 0.0], 0.5, 0.4), 1000.0);
    }

    #[test]
    fn twin_rays_lens() {
        let d = lens();
        twin_check(&d, launch(&d, [0.0, 60.0], 0.5, 0.03), 1200.0);
    }

    #[test]
    fn point_source_leading_order() {
        let d = homogeneous();
        let st = launch(&d, [0.0, 0.0], 0.5, 0.0);
        let vp = trace_variational(&d, &st, &point_deltas(), 10.0, &Tolerances::default()).unwrap();
        let v = vp.path.first().v;
        let (tr, dr) = vp.path.d_ref.unwrap();
        assert!((tr - 1.0 / v).abs() < 1e-15);
        assert!((dr - v).abs() < 1e-14);
        let band = InitialDeltas {
            d_mu: [0.0, 0.0, 1.0, 0.0],
            d_nu: [0.0, 0.0, 0.0, 2.0],
            drho0: [0.0, 0.0],
            dphi0: [0.0, 0.0],
        };
        let vp = trace_variational(&d, &st, &band, 100.0, &Tolerances::default()).unwrap();
        let (_, dr) = vp.path.d_ref.unwrap();
        let p = d.eval(st.r, st.k0).unwrap();
        let v0 = LogDerivatives::new(&p, 0.0).v_0;
        let expect = -v * v * v0 * 0.5 * 2.0 / (v * v);
        assert!((dr - expect).abs() < 1e-12 * expect.abs());
        let last = vp.path.samples.len() - 1;
        let t = vp.path.samples[last].state.tau;
        let closed = -v * v * v0 * 0.5 * 2.0 * t * t;
        assert!((vp.path.d[last] - closed).abs() < 1e-8 * closed.abs());
    }

    #[test]
    fn expansion_differs_from_determinant() {
        let a = [1.0, 2.0, 0.0, 0.0];
        let b = [3.0, 5.0, 0.0, 0.0];
        assert_eq!(jacobian_d(0.0, 0.0, &a, &b, [0.0, 0.0]), 1.0 * 5.0 - 2.0 * 3.0);
        assert_eq!(expanded_d(0.0, &a, &b, [0.0, 0.0]), 1.0 * 3.0 - 2.0 * 5.0);
    }

    #[test]
    fn homogeneous_fan_has_no_caustic() {
        let d = homogeneous();
        let st = launch(&d, [0.0, 0.0], 0.5, 0.2);
        let vp = trace_variational(&d, &st, &point_deltas(), 3000.0, &Tolerances::default()).unwrap();
        assert!(detect_caustics(&vp, &d).unwrap().is_empty());
    }

    #[test]
    fn lens_plane_wave_focus() {
        let d = lens();
        let y0 = 1.0;
        let st = launch(&d, [0.0, y0], 0.5, 0.0);
        let deltas = InitialDeltas {
            d_mu: [0.0, 1.0, 0.0, 0.0],
            d_nu: [0.0; 4],
            drho0: [0.0, 1.0],
            dphi0: [0.0, -0.5],
        };
        let vp = trace_variational(&d, &st, &deltas, 3000.0, &Tolerances::new(1e-11, 1e-13)).unwrap();
        let c = detect_caustics(&vp, &d).unwrap();
        assert!(!c.is_empty());
        let s_star = vp.state_at(&d, c[0].tau).unwrap()[crate::raytrace::S];
        let paraxial = std::f64::consts::FRAC_PI_2 * 1000.0;
        assert!((s_star - paraxial).abs() < 0.01 * paraxial, "{s_star} vs {paraxial}");
        let y = vp.state_at(&d, c[0].tau).unwrap();
        let dstar = vp.d_of_state(&d, &y).unwrap();
        let scale = vp.path.d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(dstar.abs() <= 1e-10 * scale);
        let scaled = trace_variational(
            &d,
            &st,
            &deltas.scaled(7.0, 0.25),
            3000.0,
            &Tolerances::new(1e-11, 1e-13),
        )
        .unwrap();
        let c2 = detect_caustics(&scaled, &d).unwrap();
        assert_eq!(c.len(), c2.len());
        assert!((c[0].tau - c2[0].tau).abs() < 1e-9 * c[0].tau);
    }

    #[test]
    fn sign_changes_skip_zero_start() {
        assert_eq!(sign_changes(&[0.0, 1.0, 2.0, -1.0, 0.0, 3.0]), vec![(2, 3), (3, 5)]);
        assert!(sign_changes::<f64>(&[0.0, 1.0, 2.0]).is_empty());
    }

    #[test]
    fn caustic_csv() {
        let mut buf = Vec::new();
        let c = Caustic {
            tau: 1.0,
            bracket: (0, 1),
            rho: 2.0,
            r: [3.0, 4.0],
        };
        assert_eq!(write_caustics_csv(&mut buf, &[(0.5, 0.25, c)]).unwrap(), 1);
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("mu,nu,tau_star,rho_star,x_star,y_star\n"));
    }
}
