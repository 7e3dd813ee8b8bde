//! f-fronts, observed frequency and wave vector, eigenrays and field synthesis.

use std::io::Write;

use num_complex::Complex;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::export::{fmt_f64, write_rows};
use crate::linalg::{det3, solve3, transpose3, Mat3, Vec2};
use crate::modes::Dispersion;
use crate::ode::Tolerances;
use crate::raytrace::{phase_along_ray, PHI, RHO, S, X, Y};
use crate::roots::brent;
use crate::scalar::{count, lit, Real};
use crate::source::{trace_source_ray, SourceSurface};
use crate::variational::{jacobi_matrix, sign_changes, tangents_of, VariationalPath, Q_OFFSET};

/// Along-ray function whose level sets define a front.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrontField {
    Phi,
    Tau,
    S,
}

impl FrontField {
    pub fn name(self) -> &'static str {
        match self {
            FrontField::Phi => "phi",
            FrontField::Tau => "tau",
            FrontField::S => "s",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "phi" => Ok(FrontField::Phi),
            "tau" => Ok(FrontField::Tau),
            "s" => Ok(FrontField::S),
            other => Err(Error::invariant(
                "front field",
                format!("unknown `{other}`, expected phi, tau or s"),
            )),
        }
    }
}

fn field_value<T: Real>(f: FrontField, tau: T, y: &[T]) -> T {
    match f {
        FrontField::Phi => y[PHI],
        FrontField::Tau => tau,
        FrontField::S => y[S],
    }
}

/// Extended state and derived values at one `τ` of a source ray.
#[derive(Debug, Clone)]
struct RayPoint<T> {
    tau: T,
    y: Vec<T>,
    q: T,
    v: T,
}

fn ray_point<T: Real, D: Dispersion<T> + ?Sized>(surface: &D, tau: T, y: Vec<T>) -> Result<RayPoint<T>> {
    let p = surface.eval([y[X], y[Y]], y[crate::raytrace::K0])?;
    Ok(RayPoint { tau, y, q: p.q, v: p.v })
}

fn grad_at<T: Real>(pt: &RayPoint<T>, f: FrontField) -> [T; 3] {
    let y = &pt.y;
    match f {
        FrontField::Tau => [T::one(), T::zero(), T::zero()],
        FrontField::S => [pt.v, y[Q_OFFSET + 2], y[Q_OFFSET + 3]],
        FrontField::Phi => [pt.q * pt.v - y[crate::raytrace::K0], y[Q_OFFSET], y[Q_OFFSET + 1]],
    }
}

fn jacobi_at<T: Real>(vp: &VariationalPath<T>, pt: &RayPoint<T>) -> Mat3<T> {
    let (a, b) = tangents_of(&pt.y, &vp.deltas);
    jacobi_matrix(pt.v, pt.y[crate::raytrace::ALPHA], &a, &b, vp.deltas.drho0)
}

/// `∇̂𝒯 f = (∂f/∂τ, ∂f/∂μ, ∂f/∂ν)` at sample `i`.
pub fn grad_tau_f<T: Real>(vp: &VariationalPath<T>, i: usize, f: FrontField) -> [T; 3] {
    let s = &vp.path.samples[i];
    grad_at(
        &RayPoint {
            tau: s.state.tau,
            y: vp.path.y[i].clone(),
            q: s.q,
            v: s.v,
        },
        f,
    )
}

/// Solves `Mᵀ n = g` with column equilibration; `None` when singular.
fn solve_transposed<T: Real>(m: &Mat3<T>, g: [T; 3]) -> Option<[T; 3]> {
    solve_scaled(&transpose3(m), g)
}

fn solve_scaled<T: Real>(m: &Mat3<T>, g: [T; 3]) -> Option<[T; 3]> {
    let norms: [T; 3] = std::array::from_fn(|c| (0..3).map(|r| m[r][c] * m[r][c]).sum::<T>().sqrt());
    if norms.iter().any(|n| *n == T::zero()) {
        return None;
    }
    let scaled: Mat3<T> = std::array::from_fn(|r| std::array::from_fn(|c| m[r][c] / norms[c]));
    let rnorm = (0..3)
        .map(|r| scaled[r].iter().map(|x| x.abs()).fold(T::zero(), T::max))
        .collect::<Vec<_>>();
    if rnorm.iter().any(|n| *n == T::zero()) {
        return None;
    }
    let eq: Mat3<T> = std::array::from_fn(|r| std::array::from_fn(|c| scaled[r][c] / rnorm[r]));
    let rhs: [T; 3] = std::array::from_fn(|r| g[r] / rnorm[r]);
    let x = solve3(&eq, rhs)?;
    Some(std::array::from_fn(|c| x[c] / norms[c]))
}

/// `|det 𝒥| / Π‖columns‖`.
pub fn normalized_det<T: Real>(m: &Mat3<T>) -> T {
    let h: T = (0..3)
        .map(|c| (0..3).map(|r| m[r][c] * m[r][c]).sum::<T>().sqrt())
        .fold(T::one(), |a, b| a * b);
    if h == T::zero() {
        T::zero()
    } else {
        det3(m).abs() / h
    }
}

/// Threshold on [`normalized_det`] below which a point is treated as a caustic.
pub const CAUSTIC_FLOOR: f64 = 1e-9;

/// One point of an f-front with its space-time normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontSample<T> {
    pub mu: T,
    pub nu: T,
    pub tau: T,
    pub f_value: T,
    /// `ℛ = (ρ, x, y)`.
    pub point: [T; 3],
    /// `n̂_f = (𝒥ᵀ)⁻¹ ∇̂𝒯 f`.
    pub normal: [T; 3],
    /// Horizontal part of `n̂_f`.
    pub normal_xy: Vec2<T>,
    pub d: T,
}

fn front_sample_at<T: Real>(vp: &VariationalPath<T>, pt: &RayPoint<T>, f: FrontField) -> Result<FrontSample<T>> {
    let jm = jacobi_at(vp, pt);
    let d = det3(&jm);
    if normalized_det(&jm) <= lit(CAUSTIC_FLOOR) {
        return Err(Error::AtCaustic);
    }
    let n = solve_transposed(&jm, grad_at(pt, f)).ok_or(Error::AtCaustic)?;
    Ok(FrontSample {
        mu: vp.path.mu,
        nu: vp.path.nu,
        tau: pt.tau,
        f_value: field_value(f, pt.tau, &pt.y),
        point: [pt.y[RHO], pt.y[X], pt.y[Y]],
        normal: n,
        normal_xy: [n[1], n[2]],
        d,
    })
}

/// Front sample at stored sample `i`.
pub fn front_normals<T: Real>(vp: &VariationalPath<T>, i: usize, f: FrontField) -> Result<FrontSample<T>> {
    let s = &vp.path.samples[i];
    let pt = RayPoint {
        tau: s.state.tau,
        y: vp.path.y[i].clone(),
        q: s.q,
        v: s.v,
    };
    front_sample_at(vp, &pt, f)
}

/// Front sample at an arbitrary `τ` (exact re-integration).
pub fn front_normals_at<T: Real, D: Dispersion<T> + ?Sized>(
    vp: &VariationalPath<T>,
    surface: &D,
    tau: T,
    f: FrontField,
) -> Result<FrontSample<T>> {
    let pt = ray_point(surface, tau, vp.state_at(surface, tau)?)?;
    front_sample_at(vp, &pt, f)
}

/// Observed frequency and wave vector `n̂_φ = (−k0_obs, k_obs)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservedQuantities<T> {
    pub k0_obs: T,
    pub k_vec_obs: Vec2<T>,
}

impl<T: Real> ObservedQuantities<T> {
    pub fn from_phase_normal(n: [T; 3]) -> Self {
        Self {
            k0_obs: -n[0],
            k_vec_obs: [n[1], n[2]],
        }
    }
}

/// Level crossing of `f` on the first bracketing segment.
fn level_tau<T: Real, D: Dispersion<T> + ?Sized>(
    vp: &VariationalPath<T>,
    surface: &D,
    f: FrontField,
    level: T,
) -> Result<Option<T>> {
    let path = &vp.path;
    let vals: Vec<T> = match f {
        FrontField::Tau => path.taus(),
        FrontField::S => path.samples.iter().map(|s| s.state.s).collect(),
        FrontField::Phi => phase_along_ray(path),
    };
    let Some(i) = (0..vals.len().saturating_sub(1)).find(|&i| {
        let (a, b) = (vals[i] - level, vals[i + 1] - level);
        a == T::zero() || a.signum() != b.signum() || b == T::zero()
    }) else {
        if vals.len() == 1 && vals[0] == level {
            return Ok(Some(path.samples[0].state.tau));
        }
        return Ok(None);
    };
    let (ta, tb) = (path.samples[i].state.tau, path.samples[i + 1].state.tau);
    if vals[i] == level {
        return Ok(Some(ta));
    }
    if vals[i + 1] == level {
        return Ok(Some(tb));
    }
    let rate = |j: usize| {
        path.dy[j][match f {
            FrontField::Phi => PHI,
            FrontField::S => S,
            FrontField::Tau => RHO,
        }]
    };
    let (ra, rb) = (rate(i), rate(i + 1));
    if ra == T::zero() || rb == T::zero() || ra.signum() != rb.signum() {
        return Err(Error::invariant(
            "front level",
            "f is not monotone in tau near the level",
        ));
    }
    if f == FrontField::Tau {
        return Ok(Some(level));
    }
    let scale = vals[i].abs().max(vals[i + 1].abs()).max(T::one());
    let xtol = T::epsilon() * lit::<T>(8.0) * tb.abs().max(T::one());
    let idx = if f == FrontField::Phi { PHI } else { S };
    let root = brent(|t| Ok(vp.state_at(surface, t)?[idx] - level), ta, tb, xtol, 200)?;
    let resid = (vp.state_at(surface, root)?[idx] - level).abs();
    if resid > lit::<T>(1e-10) * scale {
        return Err(Error::Numerical(format!("front level residual {:e}", resid.as_f64())));
    }
    Ok(Some(root))
}

/// A fan-ordered polyline piece with constant sign of `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontBranch<T> {
    pub samples: Vec<FrontSample<T>>,
}

/// Front `{ℛ(𝒯) | f(𝒯) = c}` across an ordered fan.
#[derive(Debug, Clone, PartialEq)]
pub struct Front<T> {
    pub field: FrontField,
    pub level: T,
    pub branches: Vec<FrontBranch<T>>,
    /// Rays that do not reach the level or sit on a caustic there.
    pub omitted: Vec<(T, T, String)>,
}

impl<T: Real> Front<T> {
    pub fn samples(&self) -> impl Iterator<Item = &FrontSample<T>> {
        self.branches.iter().flat_map(|b| b.samples.iter())
    }

    pub fn len(&self) -> usize {
        self.branches.iter().map(|b| b.samples.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Extracts the level set of `f` along each ray, keeping fan order and splitting
/// branches where `D` changes sign between neighbours.
pub fn extract_front<T: Real, D: Dispersion<T> + ?Sized>(
    fan: &[VariationalPath<T>],
    surface: &D,
    f: FrontField,
    level: T,
) -> Front<T> {
    let per_ray: Vec<std::result::Result<FrontSample<T>, String>> = fan
        .par_iter()
        .map(|vp| match level_tau(vp, surface, f, level) {
            Ok(Some(t)) => front_normals_at(vp, surface, t, f).map_err(|e| e.to_string()),
            Ok(None) => Err("level not bracketed".to_string()),
            Err(e) => Err(e.to_string()),
        })
        .collect();
    let mut front = Front {
        field: f,
        level,
        branches: Vec::new(),
        omitted: Vec::new(),
    };
    let mut current: Vec<FrontSample<T>> = Vec::new();
    for (vp, r) in fan.iter().zip(per_ray) {
        match r {
            Ok(s) => {
                if let Some(prev) = current.last() {
                    if prev.d.signum() != s.d.signum() {
                        front.branches.push(FrontBranch {
                            samples: std::mem::take(&mut current),
                        });
                    }
                }
                current.push(s);
            }
            Err(msg) => front.omitted.push((vp.path.mu, vp.path.nu, msg)),
        }
    }
    if !current.is_empty() {
        front.branches.push(FrontBranch { samples: current });
    }
    front
}

/// Writes fronts as CSV with columns `f_name,level,mu,nu,rho,x,y,n_rho,n_x,n_y`.
pub fn write_fronts_csv<T: Real, W: Write>(out: W, fronts: &[Front<T>]) -> Result<usize> {
    write_rows(
        out,
        &["f_name", "level", "mu", "nu", "rho", "x", "y", "n_rho", "n_x", "n_y"],
        fronts.iter().flat_map(|fr| {
            fr.samples().map(move |s| {
                let mut row = vec![fr.field.name().to_string()];
                row.extend(
                    [
                        fr.level,
                        s.mu,
                        s.nu,
                        s.point[0],
                        s.point[1],
                        s.point[2],
                        s.normal[0],
                        s.normal[1],
                        s.normal[2],
                    ]
                    .iter()
                    .map(|v| fmt_f64(v.as_f64())),
                );
                row
            })
        }),
    )
}

/// A ray through the observation point.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenrayResult<T> {
    pub tau: T,
    pub mu: T,
    pub nu: T,
    /// `ℛ(𝒯)`.
    pub point: [T; 3],
    pub residual: T,
    pub iterations: usize,
    pub k0: T,
    pub alpha: T,
    /// Magnitude from `|D|`; caustic phase shifts are not applied.
    pub amplitude: T,
    pub phase: T,
    pub jacobi: Mat3<T>,
    pub d: T,
    /// `|det 𝒥|` is negligible at the observation point.
    pub caustic: bool,
    /// Sign changes of `D` between the source and the observation point.
    pub caustics_passed: usize,
    pub normal_phi: Option<[T; 3]>,
    pub observed: Option<ObservedQuantities<T>>,
}

/// Controls for the Newton search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenrayOptions<T> {
    pub tol: Tolerances<T>,
    pub max_iter: usize,
    /// Convergence threshold relative to `max(|ℛ_obs|, 1)`.
    pub residual_rel: T,
    /// Deduplication distance in normalized `𝒯`.
    pub dedup: T,
}

impl<T: Real> Default for EigenrayOptions<T> {
    fn default() -> Self {
        Self {
            tol: Tolerances::default(),
            max_iter: 50,
            residual_rel: lit(1e-8),
            dedup: lit(1e-6),
        }
    }
}

/// All roots found from a seed list.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenraySearch<T> {
    pub rays: Vec<EigenrayResult<T>>,
    /// Seeds that did not converge.
    pub failed: usize,
}

fn norm3<T: Real>(a: [T; 3]) -> T {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

struct Evaluation<T> {
    vp: VariationalPath<T>,
    miss: [T; 3],
    jm: Mat3<T>,
}

fn wrap_params<T: Real>(source: &SourceSurface<T>, t: [T; 3]) -> [T; 3] {
    let [mut tau, mut mu, mut nu] = t;
    if source.mu_periodic() {
        let span = source.mu[1] - source.mu[0];
        let mut w = (mu - source.mu[0]) % span;
        if w < T::zero() {
            w += span;
        }
        mu = source.mu[0] + w;
    } else {
        mu = mu.max(source.mu[0]).min(source.mu[1]);
    }
    nu = nu.max(source.nu[0]).min(source.nu[1]);
    if !(tau > T::zero()) {
        tau = lit(1e-9);
    }
    [tau, mu, nu]
}

fn evaluate<T: Real, D: Dispersion<T> + ?Sized>(
    source: &SourceSurface<T>,
    surface: &D,
    t: [T; 3],
    r_obs: [T; 3],
    tol: &Tolerances<T>,
) -> Result<Evaluation<T>> {
    let vp = trace_source_ray(source, surface, t[1], t[2], t[0], tol)?;
    if !matches!(vp.path.status, crate::raytrace::TraceStatus::Completed) {
        return Err(Error::out_of_domain(
            "dispersion hull",
            &[t[0].as_f64(), t[1].as_f64(), t[2].as_f64()],
        ));
    }
    let n = vp.len() - 1;
    let y = &vp.path.y[n];
    let miss = [y[RHO] - r_obs[0], y[X] - r_obs[1], y[Y] - r_obs[2]];
    let jm = vp.jacobi(n);
    Ok(Evaluation { vp, miss, jm })
}

/// Damped Newton from one seed `𝒯 = (τ, μ, ν)`.
fn newton<T: Real, D: Dispersion<T> + ?Sized>(
    source: &SourceSurface<T>,
    surface: &D,
    r_obs: [T; 3],
    seed: [T; 3],
    opts: &EigenrayOptions<T>,
) -> Option<(Evaluation<T>, [T; 3], usize)> {
    let target = opts.residual_rel * norm3(r_obs).max(T::one());
    let mut t = wrap_params(source, seed);
    let mut ev = evaluate(source, surface, t, r_obs, &opts.tol).ok()?;
    let mut f = norm3(ev.miss);
    let mut lambda: T = lit(1e-3);
    for it in 0..opts.max_iter {
        if f <= target {
            return Some((ev, t, it));
        }
        let rhs = ev.miss.map(|x| -x);
        let mut candidates: Vec<[T; 3]> = Vec::new();
        if let Some(step) = solve_scaled(&ev.jm, rhs) {
            candidates.push(step);
        }
        let mut accepted = false;
        'outer: for step in candidates {
            let mut scale = T::one();
            for _ in 0..8 {
                let trial = wrap_params(source, std::array::from_fn(|k| t[k] + scale * step[k]));
                if let Ok(e) = evaluate(source, surface, trial, r_obs, &opts.tol) {
                    let fn_ = norm3(e.miss);
                    if fn_ < f {
                        t = trial;
                        ev = e;
                        f = fn_;
                        accepted = true;
                        break 'outer;
                    }
                }
                scale *= lit(0.5);
            }
        }
        if !accepted {
            // Levenberg-Marquardt on the equilibrated normal equations.
            let jm = ev.jm;
            let norms: [T; 3] = std::array::from_fn(|c| {
                (0..3)
                    .map(|r| jm[r][c] * jm[r][c])
                    .sum::<T>()
                    .sqrt()
                    .max(T::min_positive_value())
            });
            let js: Mat3<T> = std::array::from_fn(|r| std::array::from_fn(|c| jm[r][c] / norms[c]));
            let mut improved = false;
            for _ in 0..12 {
                let mut n: Mat3<T> =
                    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|r| js[r][i] * js[r][j]).sum::<T>()));
                for (i, row) in n.iter_mut().enumerate() {
                    row[i] += lambda;
                }
                let g: [T; 3] = std::array::from_fn(|i| (0..3).map(|r| js[r][i] * rhs[r]).sum::<T>());
                if let Some(x) = solve3(&n, g) {
                    let trial = wrap_params(source, std::array::from_fn(|k| t[k] + x[k] / norms[k]));
                    if let Ok(e) = evaluate(source, surface, trial, r_obs, &opts.tol) {
                        let fn_ = norm3(e.miss);
                        if fn_ < f {
                            t = trial;
                            ev = e;
                            f = fn_;
                            lambda = (lambda * lit(0.3)).max(lit(1e-12));
                            improved = true;
                            break;
                        }
                    }
                }
                lambda *= lit(10.0);
            }
            if !improved {
                return None;
            }
        }
    }
    (f <= target).then_some((ev, t, opts.max_iter))
}

fn finish<T: Real>(ev: Evaluation<T>, t: [T; 3], iterations: usize) -> EigenrayResult<T> {
    let vp = &ev.vp;
    let n = vp.len() - 1;
    let s = &vp.path.samples[n];
    let y = &vp.path.y[n];
    let jm = ev.jm;
    let caustic = normalized_det(&jm) <= lit(CAUSTIC_FLOOR);
    let pt = RayPoint {
        tau: s.state.tau,
        y: y.clone(),
        q: s.q,
        v: s.v,
    };
    let normal_phi = if caustic {
        None
    } else {
        solve_transposed(&jm, grad_at(&pt, FrontField::Phi))
    };
    EigenrayResult {
        tau: t[0],
        mu: t[1],
        nu: t[2],
        point: [y[RHO], y[X], y[Y]],
        residual: norm3(ev.miss),
        iterations,
        k0: s.state.k0,
        alpha: s.state.alpha,
        amplitude: vp.path.a[n],
        phase: s.state.phi,
        jacobi: jm,
        d: vp.path.d[n],
        caustic,
        caustics_passed: sign_changes(&vp.path.d).len(),
        normal_phi,
        observed: normal_phi.map(ObservedQuantities::from_phase_normal),
    }
}

fn param_distance<T: Real>(source: &SourceSurface<T>, a: &EigenrayResult<T>, b: &EigenrayResult<T>) -> T {
    let dt = (a.tau - b.tau) / a.tau.abs().max(T::one());
    let span = |r: [T; 2]| (r[1] - r[0]).abs().max(T::min_positive_value());
    let mut dm = (a.mu - b.mu).abs();
    if source.mu_periodic() {
        let p = span(source.mu);
        dm = dm.min(p - dm);
    }
    let dm = dm / span(source.mu);
    let dn = (a.nu - b.nu) / span(source.nu);
    (dt * dt + dm * dm + dn * dn).sqrt()
}

/// Newton search from each seed `(τ, μ, ν)`; converged roots are deduplicated.
pub fn find_eigenrays<T: Real, D: Dispersion<T> + ?Sized>(
    source: &SourceSurface<T>,
    surface: &D,
    r_obs: [T; 3],
    seeds: &[[T; 3]],
    opts: &EigenrayOptions<T>,
) -> EigenraySearch<T> {
    let results: Vec<Option<EigenrayResult<T>>> = seeds
        .par_iter()
        .map(|s| newton(source, surface, r_obs, *s, opts).map(|(ev, t, it)| finish(ev, t, it)))
        .collect();
    let mut out = EigenraySearch {
        rays: Vec::new(),
        failed: 0,
    };
    for r in results {
        match r {
            Some(r) => {
                if !out.rays.iter().any(|o| param_distance(source, o, &r) <= opts.dedup) {
                    out.rays.push(r);
                }
            }
            None => out.failed += 1,
        }
    }
    out.rays.sort_by(|a, b| {
        (a.nu, a.mu)
            .partial_cmp(&(b.nu, b.mu))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    out
}

/// A traced lattice of source rays, `μ` fastest.
#[derive(Debug, Clone)]
pub struct Fan<T> {
    pub mus: Vec<T>,
    pub nus: Vec<T>,
    pub paths: Vec<Option<VariationalPath<T>>>,
    pub errors: Vec<(T, T, String)>,
}

impl<T: Real> Fan<T> {
    pub fn get(&self, i_mu: usize, i_nu: usize) -> Option<&VariationalPath<T>> {
        self.paths[i_nu * self.mus.len() + i_mu].as_ref()
    }

    /// Successfully traced rays of the `i_nu`-th row, in `μ` order.
    pub fn row(&self, i_nu: usize) -> Vec<VariationalPath<T>> {
        (0..self.mus.len()).filter_map(|i| self.get(i, i_nu).cloned()).collect()
    }

    pub fn traced(&self) -> impl Iterator<Item = &VariationalPath<T>> {
        self.paths.iter().flatten()
    }
}

/// Traces `n_mu × n_nu` source rays in parallel.
pub fn trace_source_fan<T: Real, D: Dispersion<T> + ?Sized>(
    source: &SourceSurface<T>,
    surface: &D,
    n_mu: usize,
    n_nu: usize,
    tau_max: T,
    tol: &Tolerances<T>,
) -> Fan<T> {
    let mus = source.lattice_mu(n_mu);
    let nus = source.lattice_nu(n_nu);
    let params: Vec<(T, T)> = nus.iter().flat_map(|&n| mus.iter().map(move |&m| (m, n))).collect();
    let res: Vec<Result<VariationalPath<T>>> = params
        .par_iter()
        .map(|&(m, n)| trace_source_ray(source, surface, m, n, tau_max, tol))
        .collect();
    let mut errors = Vec::new();
    let paths = res
        .into_iter()
        .zip(&params)
        .map(|(r, &(m, n))| match r {
            Ok(p) => Some(p),
            Err(e) => {
                errors.push((m, n, e.to_string()));
                None
            }
        })
        .collect();
    Fan {
        mus,
        nus,
        paths,
        errors,
    }
}

/// Maximum number of seeds returned by [`seed_scan`].
pub const MAX_SEEDS: usize = 16;

/// Seeds from lattice local minima of the spatial miss at observation time `ρ`.
pub fn seed_scan<T: Real>(fan: &Fan<T>, r_obs: [T; 3], periodic_mu: bool) -> Vec<[T; 3]> {
    let (nm, nn) = (fan.mus.len(), fan.nus.len());
    let pos = |im: usize, inn: usize| -> Option<(T, Vec2<T>)> {
        let vp = fan.get(im, inn)?;
        let rho0 = vp.path.first().state.rho;
        let tau = r_obs[0] - rho0;
        let y = vp.path.interpolate(tau)?;
        Some((tau, [y[X], y[Y]]))
    };
    let grid: Vec<Option<(T, Vec2<T>)>> = (0..nn)
        .flat_map(|j| (0..nm).map(move |i| (i, j)))
        .map(|(i, j)| pos(i, j))
        .collect();
    let at = |i: isize, j: isize| -> Option<&(T, Vec2<T>)> {
        let i = if periodic_mu {
            i.rem_euclid(nm as isize)
        } else if i < 0 || i >= nm as isize {
            return None;
        } else {
            i
        };
        if j < 0 || j >= nn as isize {
            return None;
        }
        grid[j as usize * nm + i as usize].as_ref()
    };
    let miss = |p: &Vec2<T>| {
        let (dx, dy) = (p[0] - r_obs[1], p[1] - r_obs[2]);
        (dx * dx + dy * dy).sqrt()
    };
    let mut seeds: Vec<(T, [T; 3])> = Vec::new();
    for j in 0..nn as isize {
        for i in 0..nm as isize {
            let Some((tau, p)) = at(i, j) else { continue };
            let m = miss(p);
            let mut is_min = true;
            let mut reach = T::zero();
            for (di, dj) in [(-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (1, 1), (-1, 1), (1, -1)] {
                if let Some((_, q)) = at(i + di, j + dj) {
                    if miss(q) < m {
                        is_min = false;
                        break;
                    }
                    let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
                    reach = reach.max((dx * dx + dy * dy).sqrt());
                }
            }
            if is_min && m <= lit::<T>(2.0) * reach + lit::<T>(1e-9) * norm3(r_obs).max(T::one()) {
                seeds.push((m, [*tau, fan.mus[i as usize], fan.nus[j as usize]]));
            }
        }
    }
    seeds.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    if seeds.len() > MAX_SEEDS {
        // Spread the kept seeds over the candidate list so flat regions stay covered.
        let n = seeds.len();
        seeds = (0..MAX_SEEDS).map(|k| seeds[k * n / MAX_SEEDS]).collect();
    }
    seeds.into_iter().map(|(_, s)| s).collect()
}

/// Seeds from close passes of each fan ray by `(x, y)_obs`, ignoring `ρ`.
///
/// A pass is a sign change of `(r − r_obs, κ)` along the ray; it is kept when its
/// miss does not exceed that of the nearest pass on either `μ` neighbour and lies
/// within twice the local ray spacing. `ν` is then free to absorb the time mismatch.
pub fn seed_scan_passes<T: Real>(fan: &Fan<T>, r_obs: [T; 3], periodic_mu: bool) -> Vec<[T; 3]> {
    let (nm, nn) = (fan.mus.len(), fan.nus.len());
    let passes = |vp: &VariationalPath<T>| -> Vec<(T, T, Vec2<T>)> {
        let p = &vp.path;
        let along = |i: usize| {
            let st = &p.samples[i].state;
            let k = st.kappa();
            (st.r[0] - r_obs[1]) * k[0] + (st.r[1] - r_obs[2]) * k[1]
        };
        let mut out = Vec::new();
        for i in 1..p.len() {
            let (a, b) = (along(i - 1), along(i));
            if a < T::zero() && b >= T::zero() {
                let (ta, tb) = (p.samples[i - 1].state.tau, p.samples[i].state.tau);
                let t = ta + (tb - ta) * (-a) / (b - a);
                if let Some(y) = p.interpolate(t) {
                    let (dx, dy) = (y[X] - r_obs[1], y[Y] - r_obs[2]);
                    out.push((t, (dx * dx + dy * dy).sqrt(), [y[X], y[Y]]));
                }
            }
        }
        out
    };
    let all: Vec<Vec<(T, T, Vec2<T>)>> = (0..nn)
        .flat_map(|j| (0..nm).map(move |i| (i, j)))
        .map(|(i, j)| fan.get(i, j).map(passes).unwrap_or_default())
        .collect();
    let neighbour = |i: isize, j: usize| -> Option<&Vec<(T, T, Vec2<T>)>> {
        let i = if periodic_mu {
            i.rem_euclid(nm as isize)
        } else if i < 0 || i >= nm as isize {
            return None;
        } else {
            i
        };
        Some(&all[j * nm + i as usize])
    };
    let mut seeds: Vec<(T, [T; 3])> = Vec::new();
    for j in 0..nn {
        for i in 0..nm {
            for &(t, m, p) in &all[j * nm + i] {
                let mut keep = true;
                let mut reach = T::zero();
                for di in [-1isize, 1] {
                    let Some(ev) = neighbour(i as isize + di, j) else {
                        continue;
                    };
                    let nearest = ev.iter().min_by(|a, b| {
                        (a.0 - t)
                            .abs()
                            .partial_cmp(&(b.0 - t).abs())
                            .unwrap_or(std::cmp::Ordering::Equal)
                    });
                    if let Some(&(_, mn, q)) = nearest {
                        if mn < m {
                            keep = false;
                        }
                        let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
                        reach = reach.max((dx * dx + dy * dy).sqrt());
                    }
                }
                if keep && m <= lit::<T>(2.0) * reach {
                    seeds.push((m, [t, fan.mus[i], fan.nus[j]]));
                }
            }
        }
    }
    seeds.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    seeds.truncate(MAX_SEEDS);
    seeds.into_iter().map(|(_, s)| s).collect()
}

/// Result of [`synthesize_field`].
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSynthesis<T> {
    pub values: Vec<Complex<T>>,
    /// `∇U` with respect to `(ρ, x, y)`.
    pub gradients: Vec<[Complex<T>; 3]>,
    /// Reported when exactly one ray contributes.
    pub observed: Option<ObservedQuantities<T>>,
    pub warnings: Vec<String>,
}

/// `U(ℛ0 + δℛ) = Σ A_j exp{i ε⁻¹ [φ_j + (n̂_j, δℛ)]}` and its gradient.
pub fn synthesize_field<T: Real>(rays: &[EigenrayResult<T>], epsilon: T, delta_r: &[[T; 3]]) -> FieldSynthesis<T> {
    let mut warnings = Vec::new();
    let mut terms = Vec::new();
    for r in rays {
        if r.caustic {
            warnings.push(format!(
                "eigenray (mu={:e}, nu={:e}) is at a caustic; its contribution uses the phase only",
                r.mu.as_f64(),
                r.nu.as_f64()
            ));
        }
        if !r.amplitude.is_finite() {
            warnings.push(format!(
                "eigenray (mu={:e}, nu={:e}) skipped: amplitude undefined",
                r.mu.as_f64(),
                r.nu.as_f64()
            ));
            continue;
        }
        let n = r.normal_phi.unwrap_or([T::zero(); 3]);
        terms.push((r.amplitude, r.phase, n));
    }
    let inv = T::one() / epsilon;
    let mut values = Vec::with_capacity(delta_r.len());
    let mut gradients = Vec::with_capacity(delta_r.len());
    for d in delta_r {
        let mut u = Complex::new(T::zero(), T::zero());
        let mut g = [Complex::new(T::zero(), T::zero()); 3];
        for (a, phi, n) in &terms {
            let arg = (*phi + n[0] * d[0] + n[1] * d[1] + n[2] * d[2]) * inv;
            let e = Complex::from_polar(*a, arg);
            u += e;
            for k in 0..3 {
                g[k] += e * Complex::new(T::zero(), n[k] * inv);
            }
        }
        values.push(u);
        gradients.push(g);
    }
    let observed = if rays.len() == 1 { rays[0].observed } else { None };
    FieldSynthesis {
        values,
        gradients,
        observed,
        warnings,
    }
}

/// One observation time of the receiver series.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverRow<T> {
    pub rho: T,
    pub arrivals: Vec<EigenrayResult<T>>,
    /// `|U|` from non-caustic arrivals.
    pub u_abs: T,
    pub failed_seeds: usize,
}

/// Observed signal at a fixed receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverSeries<T> {
    pub x_obs: Vec2<T>,
    pub rows: Vec<ReceiverRow<T>>,
    /// Maximal runs of consecutive grid times without arrivals.
    pub gaps: Vec<[T; 2]>,
    pub fan_errors: usize,
}

/// Controls for [`receiver_time_series`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceiverOptions<T> {
    pub n_mu: usize,
    pub n_nu: usize,
    pub epsilon: T,
    pub eigen: EigenrayOptions<T>,
}

/// Eigenrays, observed frequency and `|U|` on a grid of observation times.
pub fn receiver_time_series<T: Real, D: Dispersion<T> + ?Sized>(
    source: &SourceSurface<T>,
    surface: &D,
    x_obs: Vec2<T>,
    rho_grid: &[T],
    opts: &ReceiverOptions<T>,
) -> Result<ReceiverSeries<T>> {
    if rho_grid.is_empty() {
        return Err(Error::invariant("rho grid", "must not be empty"));
    }
    let rho_max = rho_grid.iter().fold(T::neg_infinity(), |m, &r| m.max(r));
    let rho0_min = [source.nu[0], source.nu[1]]
        .iter()
        .flat_map(|&n| source.lattice_mu(3).into_iter().map(move |m| (m, n)))
        .map(|(m, n)| source.point(m, n).map(|p| p.rho0))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(T::infinity(), T::min);
    let tau_max = (rho_max - rho0_min) * lit(1.01) + T::one();
    let fan = trace_source_fan(source, surface, opts.n_mu, opts.n_nu, tau_max, &opts.eigen.tol);
    let periodic = source.mu_periodic();
    let rows: Vec<ReceiverRow<T>> = rho_grid
        .par_iter()
        .map(|&rho| {
            let r_obs = [rho, x_obs[0], x_obs[1]];
            let seeds = seed_scan(&fan, r_obs, periodic);
            let found = find_eigenrays(source, surface, r_obs, &seeds, &opts.eigen);
            let clean: Vec<EigenrayResult<T>> = found.rays.iter().filter(|r| !r.caustic).cloned().collect();
            let u_abs = synthesize_field(&clean, opts.epsilon, &[[T::zero(); 3]]).values[0].norm();
            ReceiverRow {
                rho,
                arrivals: found.rays,
                u_abs,
                failed_seeds: found.failed,
            }
        })
        .collect();
    let mut gaps = Vec::new();
    let mut start: Option<T> = None;
    let mut last = rho_grid[0];
    for r in &rows {
        if r.arrivals.is_empty() {
            start.get_or_insert(r.rho);
            last = r.rho;
        } else if let Some(s) = start.take() {
            gaps.push([s, last]);
        }
    }
    if let Some(s) = start {
        gaps.push([s, last]);
    }
    Ok(ReceiverSeries {
        x_obs,
        rows,
        gaps,
        fan_errors: fan.errors.len(),
    })
}

/// Observed frequency for an arrival; ray-borne `k0` when `𝒥` is singular.
pub fn arrival_k0<T: Real>(r: &EigenrayResult<T>) -> T {
    r.observed.map(|o| o.k0_obs).unwrap_or(r.k0)
}

/// Writes `rho,k0_obs,|U|,n_arrivals`, one row per arrival and a NaN row for empty times.
pub fn write_receiver_csv<T: Real, W: Write>(out: W, series: &ReceiverSeries<T>) -> Result<usize> {
    let mut rows = Vec::new();
    for r in &series.rows {
        let n = count::<f64>(r.arrivals.len());
        if r.arrivals.is_empty() {
            rows.push([r.rho.as_f64(), f64::NAN, r.u_abs.as_f64(), 0.0]);
        }
        for a in &r.arrivals {
            rows.push([r.rho.as_f64(), arrival_k0(a).as_f64(), r.u_abs.as_f64(), n]);
        }
    }
    write_rows(
        out,
        &["rho", "k0_obs", "|U|", "n_arrivals"],
        rows.iter().map(|r| r.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>()),
    )
}

/// Per-arrival details of a receiver series.
pub fn write_arrivals_csv<T: Real, W: Write>(out: W, series: &ReceiverSeries<T>) -> Result<usize> {
    write_rows(
        out,
        &[
            "rho",
            "tau",
            "mu",
            "nu",
            "k0",
            "k0_obs",
            "kx_obs",
            "ky_obs",
            "amplitude",
            "phase",
            "D",
            "caustic",
            "caustics_passed",
            "residual",
        ],
        series.rows.iter().flat_map(|r| {
            r.arrivals.iter().map(move |a| {
                let o = a.observed;
                let nan = f64::NAN;
                let mut row: Vec<String> = [
                    r.rho.as_f64(),
                    a.tau.as_f64(),
                    a.mu.as_f64(),
                    a.nu.as_f64(),
                    a.k0.as_f64(),
                    o.map(|o| o.k0_obs.as_f64()).unwrap_or(nan),
                    o.map(|o| o.k_vec_obs[0].as_f64()).unwrap_or(nan),
                    o.map(|o| o.k_vec_obs[1].as_f64()).unwrap_or(nan),
                    a.amplitude.as_f64(),
                    a.phase.as_f64(),
                    a.d.as_f64(),
                ]
                .iter()
                .map(|v| fmt_f64(*v))
                .collect();
                row.push(if a.caustic { "1".into() } else { "0".into() });
                row.push(a.caustics_passed.to_string());
                row.push(fmt_f64(a.residual.as_f64()));
                row
            })
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modes::{AnalyticDispersion, Geometry, ModeLaw};
    use crate::source::{make_plane_chirp, make_point_impulse, Ramp};

    fn ideal() -> AnalyticDispersion<f64> {
        AnalyticDispersion::new(
            ModeLaw::IdealWaveguide {
                n: 1.0,
                h: 100.0,
                mode: 0,
            },
            Geometry::Homogeneous,
        )
    }

    fn lens() -> AnalyticDispersion<f64> {
        AnalyticDispersion::new(
            ModeLaw::IdealWaveguide {
                n: 1.0,
                h: 100.0,
                mode: 0,
            },
            Geometry::Lens { length: 1000.0 },
        )
    }

    fn emission_source(d: &AnalyticDispersion<f64>) -> SourceSurface<f64> {
        make_point_impulse([0.0, 0.0], [0.5, 0.5], [0.0, 10.0], d).unwrap()
    }

    #[test]
    fn tau_gradient_and_phase_normal_homogeneous() {
        let d = ideal();
        let s = emission_source(&d);
        let vp = trace_source_ray(&s, &d, 0.7, 3.0, 400.0, &Tolerances::default()).unwrap();
        let n = vp.len() - 1;
        assert_eq!(grad_tau_f(&vp, n, FrontField::Tau), [1.0, 0.0, 0.0]);
        let fs = front_normals(&vp, n, FrontField::Phi).unwrap();
        let smp = vp.path.samples[n];
        let expect = [-0.5, smp.q * 0.7f64.cos(), smp.q * 0.7f64.sin()];
        for k in 0..3 {
            assert!(
                (fs.normal[k] - expect[k]).abs() <= 1e-8 * 0.5,
                "{:?} vs {expect:?}",
                fs.normal
            );
        }
        let tau_n = front_normals(&vp, n, FrontField::Tau).unwrap().normal_xy;
        let cross = tau_n[0] * 0.7f64.sin() - tau_n[1] * 0.7f64.cos();
        assert!(cross.abs() < 1e-10 * (tau_n[0].hypot(tau_n[1])));
        let s_n = front_normals(&vp, n, FrontField::S).unwrap().normal_xy;
        assert!(
            (s_n[0] * tau_n[1] - s_n[1] * tau_n[0]).abs() < 1e-10 * s_n[0].hypot(s_n[1]) * tau_n[0].hypot(tau_n[1])
        );
        assert!(front_normals(&vp, 0, FrontField::Phi).is_err());
    }

    #[test]
    fn plane_wave_s_gradient() {
        let d = ideal();
        let s = make_plane_chirp(
            [0.0, 0.0],
            std::f64::consts::FRAC_PI_2,
            Ramp::linear(0.5, 0.0),
            [-10.0, 10.0],
            [0.0, 10.0],
            &d,
        )
        .unwrap();
        let vp = trace_source_ray(&s, &d, 1.0, 2.0, 300.0, &Tolerances::default()).unwrap();
        let g = grad_tau_f(&vp, vp.len() - 1, FrontField::S);
        assert!((g[0] - vp.path.last().v).abs() < 1e-15);
        assert_eq!([g[1], g[2]], [0.0, 0.0]);
    }

    #[test]
    fn chirp_phase_derivative_matches_twin_rays() {
        let d = ideal();
        let s = make_plane_chirp(
            [0.0, 0.0],
            std::f64::consts::FRAC_PI_2,
            Ramp::linear(0.5, 1e-3),
            [-10.0, 10.0],
            [0.0, 100.0],
            &d,
        )
        .unwrap();
        let tol = Tolerances::new(1e-12, 1e-14);
        let tau = 800.0;
        let vp = trace_source_ray(&s, &d, 0.0, 40.0, tau, &tol).unwrap();
        let g = grad_tau_f(&vp, vp.len() - 1, FrontField::Phi);
        let h = 1e-3;
        let phi = |nu: f64| {
            trace_source_ray(&s, &d, 0.0, nu, tau, &tol)
                .unwrap()
                .path
                .last()
                .state
                .phi
        };
        let fd = (phi(40.0 + h) - phi(40.0 - h)) / (2.0 * h);
        assert!((g[2] - fd).abs() <= 1e-3 * fd.abs(), "{} vs {fd}", g[2]);
    }

    #[test]
    fn tau_front_is_a_circle() {
        let d = ideal();
        let s = emission_source(&d);
        let fan = trace_source_fan(&s, &d, 48, 1, 600.0, &Tolerances::default());
        let row = fan.row(0);
        let front = extract_front(&row, &d, FrontField::Tau, 500.0);
        assert_eq!(front.len(), 48);
        assert_eq!(front.branches.len(), 1);
        let v = d.eval([0.0, 0.0], 0.5).unwrap().v;
        for fs in front.samples() {
            let r = fs.point[1].hypot(fs.point[2]);
            assert!((r - v * 500.0).abs() <= 1e-8);
        }
    }

    #[test]
    fn s_front_cuts_band_at_equal_length() {
        let d = ideal();
        let s = make_point_impulse([0.0, 0.0], [0.3, 0.6], [0.0, 0.0], &d).unwrap();
        let fan = trace_source_fan(&s, &d, 1, 9, 1200.0, &Tolerances::default());
        let rays: Vec<_> = fan.traced().cloned().collect();
        let front = extract_front(&rays, &d, FrontField::S, 1000.0);
        assert_eq!(front.len(), 9);
        for fs in front.samples() {
            let v = d.eval([0.0, 0.0], fs.nu).unwrap().v;
            assert!((fs.point[1].hypot(fs.point[2]) - 1000.0).abs() < 1e-8);
            assert!((fs.point[0] - 1000.0 / v).abs() < 1e-7);
        }
    }

    #[test]
    fn unreachable_level_is_omitted() {
        let d = ideal();
        let s = emission_source(&d);
        let fan = trace_source_fan(&s, &d, 4, 1, 100.0, &Tolerances::default());
        let front = extract_front(&fan.row(0), &d, FrontField::Tau, 500.0);
        assert!(front.is_empty());
        assert_eq!(front.omitted.len(), 4);
    }

    #[test]
    fn straight_line_eigenray() {
        let d = ideal();
        let s = emission_source(&d);
        let v = d.eval([0.0, 0.0], 0.5).unwrap().v;
        let x = 2000.0;
        let r_obs = [x / v + 1.0, x, 0.0];
        let search = find_eigenrays(&s, &d, r_obs, &[[1500.0, 0.3, 4.0]], &EigenrayOptions::default());
        assert_eq!(search.rays.len(), 1);
        let e = &search.rays[0];
        assert!(e.mu.abs() < 1e-9 || (e.mu - std::f64::consts::TAU).abs() < 1e-9);
        assert!((e.tau - x / v).abs() < 1e-6);
        assert!((e.nu - 1.0).abs() < 1e-6);
        assert!(e.residual <= 1e-8 * 2000.0_f64.max(r_obs[0]).max(1.0) * 2.0);
        let o = e.observed.unwrap();
        assert!((o.k0_obs - 0.5).abs() < 1e-8);
        let early = find_eigenrays(
            &s,
            &d,
            [x / v - 50.0, x, 0.0],
            &[[1500.0, 0.3, 4.0]],
            &EigenrayOptions::default(),
        );
        assert!(early.rays.is_empty());
        assert_eq!(early.failed, 1);
    }

    fn ray_stub(a: f64, phi: f64) -> EigenrayResult<f64> {
        EigenrayResult {
            tau: 1.0,
            mu: 0.0,
            nu: 0.0,
            point: [0.0; 3],
            residual: 0.0,
            iterations: 0,
            k0: 0.5,
            alpha: 0.0,
            amplitude: a,
            phase: phi,
            jacobi: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            d: 1.0,
            caustic: false,
            caustics_passed: 0,
            normal_phi: Some([-0.5, 0.49, 0.0]),
            observed: Some(ObservedQuantities::from_phase_normal([-0.5, 0.49, 0.0])),
        }
    }

    #[test]
    fn field_synthesis_interference() {
        let eps = 0.01;
        let grid = [[0.0, 0.0, 0.0], [0.1, 0.2, -0.3]];
        let one = synthesize_field(&[ray_stub(2.0, 1.3)], eps, &grid);
        assert!(one.values.iter().all(|u| (u.norm() - 2.0).abs() < 1e-12));
        assert!((one.observed.unwrap().k0_obs - 0.5).abs() < 1e-15);
        let g = one.gradients[0];
        assert!((g[1].norm() - 2.0 * 0.49 / eps).abs() < 1e-9);
        let de = synthesize_field(
            &[ray_stub(1.0, 0.4), ray_stub(1.0, 0.4 + std::f64::consts::PI * eps)],
            eps,
            &grid[..1],
        );
        assert!(de.values[0].norm() < 1e-12);
        assert!(de.observed.is_none());
        let co = synthesize_field(&[ray_stub(1.0, 0.4), ray_stub(1.0, 0.4)], eps, &grid[..1]);
        assert!((co.values[0].norm() - 2.0).abs() < 1e-12);
        let a = synthesize_field(&[ray_stub(1.0, 0.1), ray_stub(0.5, 0.7)], eps, &grid);
        let b = synthesize_field(&[ray_stub(0.5, 0.7), ray_stub(1.0, 0.1)], eps, &grid);
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).norm() < 1e-14);
        }
    }

    #[test]
    fn lens_multipath_beyond_focus() {
        let d = lens();
        let full = make_point_impulse([0.0, 0.0], [0.5, 0.5], [0.0, 1000.0], &d).unwrap();
        let s = SourceSurface::new([-0.4, 0.4], full.nu, full.family.clone());
        let tol = Tolerances::default();
        let fan = trace_source_fan(&s, &d, 401, 1, 3300.0, &tol);
        let (x_obs, y_obs) = (3050.0, 5.0);
        let taus = crossing_taus(&fan, x_obs, y_obs);
        assert_eq!(taus.len(), 3, "{taus:?}");
        let latest = taus.iter().fold(0.0f64, |m, &t| m.max(t));
        assert!(taus.iter().all(|t| latest - t < 990.0), "{taus:?}");
        let r_obs = [latest + 5.0, x_obs, y_obs];
        let seeds = seed_scan_passes(&fan, r_obs, false);
        let search = find_eigenrays(&s, &d, r_obs, &seeds, &EigenrayOptions::default());
        assert_eq!(
            search.rays.len(),
            taus.len(),
            "{:?}",
            search.rays.iter().map(|r| r.mu).collect::<Vec<_>>()
        );
        assert!(search.rays.iter().any(|r| r.caustics_passed > 0));
    }

    fn crossing_taus(fan: &Fan<f64>, x_obs: f64, y_obs: f64) -> Vec<f64> {
        let hits: Vec<Option<(f64, f64)>> = fan
            .traced()
            .map(|vp| {
                let p = &vp.path;
                (1..p.len()).find(|&i| p.samples[i].state.r[0] >= x_obs).map(|i| {
                    let (a, b) = (&p.samples[i - 1].state, &p.samples[i].state);
                    let w = (x_obs - a.r[0]) / (b.r[0] - a.r[0]);
                    (a.r[1] + (b.r[1] - a.r[1]) * w, a.tau + (b.tau - a.tau) * w)
                })
            })
            .collect();
        hits.windows(2)
            .filter_map(|w| match (w[0], w[1]) {
                (Some(a), Some(b)) if (a.0 - y_obs).signum() != (b.0 - y_obs).signum() => Some(0.5 * (a.1 + b.1)),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn receiver_dispersion_sweep_small() {
        let d = ideal();
        let s = make_point_impulse([0.0, 0.0], [0.2, 0.6], [0.0, 0.0], &d).unwrap();
        let r = 3000.0;
        let v = |k: f64| d.eval([0.0, 0.0], k).unwrap().v;
        let rhos: Vec<f64> = [0.25, 0.35, 0.5].iter().map(|&k| r / v(k)).collect();
        let opts = ReceiverOptions {
            n_mu: 36,
            n_nu: 17,
            epsilon: 1.0,
            eigen: EigenrayOptions::default(),
        };
        let series = receiver_time_series(&s, &d, [r, 0.0], &rhos, &opts).unwrap();
        for (row, k) in series.rows.iter().zip([0.25, 0.35, 0.5]) {
            assert_eq!(row.arrivals.len(), 1, "rho {}", row.rho);
            assert!((arrival_k0(&row.arrivals[0]) - k).abs() <= 1e-4 * k);
        }
        let mut buf = Vec::new();
        assert_eq!(write_receiver_csv(&mut buf, &series).unwrap(), 3);
    }

    #[test]
    fn front_field_names_round_trip() {
        for f in [FrontField::Phi, FrontField::Tau, FrontField::S] {
            assert_eq!(FrontField::parse(f.name()).unwrap(), f);
        }
        assert!(FrontField::parse("x").is_err());
    }
}
