//! Initial-data surfaces `(ρ0, r0, k0, α0, φ0, A0)(μ, ν)` and their coherence check.

use crate::error::{Error, Result};
use crate::interp::{Axis, TensorGrid};
use crate::linalg::{det3, dot2, kappa, mat4_vec, Vec2};
use crate::modes::Dispersion;
use crate::ode::Tolerances;
use crate::quad::simpson_uniform;
use crate::raytrace::{amplitude_along_ray, RayState};
use crate::scalar::{count, lit, Real};
use crate::variational::{
    coefficient_matrix, jacobi_matrix, trace_variational, InitialDeltas, SourceTangents, VariationalPath,
};

/// Spectral content of a point impulse.
#[derive(Debug, Clone, PartialEq)]
pub enum Spectrum<T> {
    /// `ν = k0` over the band; all rays leave at `ρ0 = offset`.
    Band { k0: [T; 2], offset: T },
    /// `ν` is the emission time at fixed `k0`.
    Emission { k0: T, window: [T; 2] },
}

/// Instantaneous source frequency as a function of emission time.
#[derive(Debug, Clone, PartialEq)]
pub enum Ramp<T> {
    /// `k0(ν) = k0c (1 + c ν)`.
    Linear { k0c: T, c: T },
    /// Piecewise-cubic interpolation of `(time, k0)` samples.
    Tabulated {
        times: Axis<T>,
        k0: Vec<T>,
        cumulative: Vec<T>,
    },
}

const RAMP_ORDER: usize = 4;
const RAMP_SUBDIVISIONS: usize = 16;

impl<T: Real> Ramp<T> {
    pub fn linear(k0c: T, c: T) -> Self {
        Ramp::Linear { k0c, c }
    }

    pub fn tabulated(times: Vec<T>, k0: Vec<T>) -> Result<Self> {
        let axis = Axis::new(times)?;
        if axis.len() != k0.len() || axis.len() < 2 {
            return Err(Error::invariant("ramp", "times and k0 must have equal length >= 2"));
        }
        let mut ramp = Ramp::Tabulated {
            times: axis.clone(),
            k0,
            cumulative: Vec::new(),
        };
        let nodes = axis.nodes();
        let mut cum = vec![T::zero()];
        for w in nodes.windows(2) {
            let seg = ramp.integrate_segment(w[0], w[1])?;
            cum.push(*cum.last().unwrap() + seg);
        }
        if let Ramp::Tabulated { cumulative, .. } = &mut ramp {
            *cumulative = cum;
        }
        Ok(ramp)
    }

    pub fn k0(&self, t: T) -> Result<T> {
        match self {
            Ramp::Linear { k0c, c } => Ok(*k0c * (T::one() + *c * t)),
            Ramp::Tabulated { times, k0, .. } => {
                let (start, w) = times
                    .stencil(t, RAMP_ORDER.min(times.len()))
                    .ok_or_else(|| Error::out_of_domain("ramp table", &[t.as_f64()]))?;
                Ok(w.iter().enumerate().map(|(i, wi)| *wi * k0[start + i]).sum())
            }
        }
    }

    pub fn dk0(&self, t: T) -> Result<T> {
        match self {
            Ramp::Linear { k0c, c } => Ok(*k0c * *c),
            Ramp::Tabulated { times, .. } => {
                let span = times.last() - times.first();
                let h = lit::<T>(1e-6) * span;
                let (a, b) = ((t - h).max(times.first()), (t + h).min(times.last()));
                Ok((self.k0(b)? - self.k0(a)?) / (b - a))
            }
        }
    }

    fn integrate_segment(&self, a: T, b: T) -> Result<T> {
        if a == b {
            return Ok(T::zero());
        }
        let n = 2 * RAMP_SUBDIVISIONS + 1;
        let h = (b - a) / count::<T>(n - 1);
        let vals = (0..n)
            .map(|i| self.k0(a + h * count::<T>(i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(simpson_uniform(&vals, h))
    }

    /// `∫_{t0}^{t} k0 dt'`.
    pub fn integral(&self, t0: T, t: T) -> Result<T> {
        match self {
            Ramp::Linear { k0c, c } => Ok(*k0c * ((t - t0) + *c * (t * t - t0 * t0) / lit::<T>(2.0))),
            Ramp::Tabulated { times, cumulative, .. } => {
                let prim = |x: T| -> Result<T> {
                    let nodes = times.nodes();
                    let i = nodes.partition_point(|&n| n <= x).clamp(1, nodes.len() - 1) - 1;
                    Ok(cumulative[i] + self.integrate_segment(nodes[i], x)?)
                };
                Ok(prim(t)? - prim(t0)?)
            }
        }
    }
}

/// Gridded tables over the `(μ, ν)` rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedSource<T> {
    grid: TensorGrid<T>,
    rho0: Vec<T>,
    x0: Vec<T>,
    y0: Vec<T>,
    k0: Vec<T>,
    alpha0: Vec<T>,
    phi0: Vec<T>,
    a0: Vec<T>,
}

impl<T: Real> GriddedSource<T> {
    /// Tables are row-major with `ν` fastest.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mu: Vec<T>,
        nu: Vec<T>,
        rho0: Vec<T>,
        x0: Vec<T>,
        y0: Vec<T>,
        k0: Vec<T>,
        alpha0: Vec<T>,
        phi0: Vec<T>,
        a0: Vec<T>,
    ) -> Result<Self> {
        let axes = vec![Axis::new(mu)?, Axis::new(nu)?];
        let order = axes.iter().map(|a| a.len()).min().unwrap().min(4);
        let grid = TensorGrid::new(axes, order)?;
        for (name, t) in [
            ("rho0", &rho0),
            ("x0", &x0),
            ("y0", &y0),
            ("k0", &k0),
            ("alpha0", &alpha0),
            ("phi0", &phi0),
            ("a0", &a0),
        ] {
            if t.len() != grid.len() {
                return Err(Error::invariant(
                    name,
                    format!("expected {} values, got {}", grid.len(), t.len()),
                ));
            }
            if t.iter().any(|x| !x.is_finite()) {
                return Err(Error::invariant(name, "values must be finite"));
            }
        }
        if k0.iter().any(|&x| x <= T::zero()) {
            return Err(Error::invariant("k0", "must be positive"));
        }
        if a0.iter().any(|&x| x < T::zero()) {
            return Err(Error::invariant("a0", "must be non-negative"));
        }
        Ok(Self {
            grid,
            rho0,
            x0,
            y0,
            k0,
            alpha0,
            phi0,
            a0,
        })
    }

    pub fn mu_range(&self) -> [T; 2] {
        let a = &self.grid.axes()[0];
        [a.first(), a.last()]
    }

    pub fn nu_range(&self) -> [T; 2] {
        let a = &self.grid.axes()[1];
        [a.first(), a.last()]
    }

    fn eval(&self, mu: T, nu: T) -> Result<[T; 7]> {
        let w = self
            .grid
            .weights(&[mu, nu])
            .ok_or_else(|| Error::out_of_domain("source table", &[mu.as_f64(), nu.as_f64()]))?;
        Ok([
            w.apply(&self.rho0),
            w.apply(&self.x0),
            w.apply(&self.y0),
            w.apply(&self.k0),
            w.apply(&self.alpha0),
            w.apply(&self.phi0),
            w.apply(&self.a0),
        ])
    }
}

/// Built-in source families.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceFamily<T> {
    /// `μ = α0`, `r0 = r_src`.
    PointImpulse {
        r_src: Vec2<T>,
        spectrum: Spectrum<T>,
    },
    /// `μ` = position along the line, `ν` = emission time, rays normal to the line.
    PlaneChirp {
        origin: Vec2<T>,
        line_angle: T,
        ramp: Ramp<T>,
    },
    Gridded(GriddedSource<T>),
}

/// Amplitude taper applied along `ν`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    #[default]
    Rect,
    Hann,
}

/// Values of every source function at one `(μ, ν)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourcePoint<T> {
    pub rho0: T,
    pub r0: Vec2<T>,
    pub k0: T,
    pub alpha0: T,
    pub phi0: T,
    pub a0: T,
}

/// Initial-data surface over the `(μ, ν)` rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSurface<T> {
    pub mu: [T; 2],
    pub nu: [T; 2],
    pub family: SourceFamily<T>,
    pub amplitude: T,
    pub window: Window,
    /// Extra `φ0 += phase_tilt·μ`; breaks coherence unless zero.
    pub phase_tilt: T,
}

/// Everything needed to launch one ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Launch<T> {
    pub mu: T,
    pub nu: T,
    pub state: RayState<T>,
    pub deltas: InitialDeltas<T>,
    pub a0: T,
}

impl<T: Real> SourceSurface<T> {
    pub fn new(mu: [T; 2], nu: [T; 2], family: SourceFamily<T>) -> Self {
        Self {
            mu,
            nu,
            family,
            amplitude: T::one(),
            window: Window::Rect,
            phase_tilt: T::zero(),
        }
    }

    pub fn with_window(mut self, window: Window) -> Self {
        self.window = window;
        self
    }

    pub fn with_amplitude(mut self, a: T) -> Self {
        self.amplitude = a;
        self
    }

    pub fn with_phase_tilt(mut self, tilt: T) -> Self {
        self.phase_tilt = tilt;
        self
    }

    pub fn family_name(&self) -> &'static str {
        match self.family {
            SourceFamily::PointImpulse { .. } => "point_impulse",
            SourceFamily::PlaneChirp { .. } => "plane_chirp",
            SourceFamily::Gridded(_) => "gridded",
        }
    }

    /// `μ` is an angle on a full circle.
    pub fn mu_periodic(&self) -> bool {
        let full = (self.mu[1] - self.mu[0] - T::TAU()).abs() <= lit::<T>(1e-12) * T::TAU();
        matches!(self.family, SourceFamily::PointImpulse { .. }) && full
    }

    fn taper(&self, nu: T) -> T {
        match self.window {
            Window::Rect => T::one(),
            Window::Hann => {
                let w = self.nu[1] - self.nu[0];
                if w <= T::zero() {
                    return T::one();
                }
                let s = (T::PI() * (nu - self.nu[0]) / w).sin();
                s * s
            }
        }
    }

    pub fn point(&self, mu: T, nu: T) -> Result<SourcePoint<T>> {
        let gate = self.amplitude * self.taper(nu);
        let tilt = self.phase_tilt * mu;
        Ok(match &self.family {
            SourceFamily::PointImpulse { r_src, spectrum } => match spectrum {
                Spectrum::Band { offset, .. } => SourcePoint {
                    rho0: *offset,
                    r0: *r_src,
                    k0: nu,
                    alpha0: mu,
                    phi0: tilt,
                    a0: gate,
                },
                Spectrum::Emission { k0, .. } => SourcePoint {
                    rho0: nu,
                    r0: *r_src,
                    k0: *k0,
                    alpha0: mu,
                    phi0: -*k0 * (nu - self.nu[0]) + tilt,
                    a0: gate,
                },
            },
            SourceFamily::PlaneChirp {
                origin,
                line_angle,
                ramp,
            } => {
                let d = kappa(*line_angle);
                SourcePoint {
                    rho0: nu,
                    r0: [origin[0] + mu * d[0], origin[1] + mu * d[1]],
                    k0: ramp.k0(nu)?,
                    alpha0: *line_angle - T::FRAC_PI_2(),
                    phi0: -ramp.integral(self.nu[0], nu)? + tilt,
                    a0: gate,
                }
            }
            SourceFamily::Gridded(g) => {
                let v = g.eval(mu, nu)?;
                SourcePoint {
                    rho0: v[0],
                    r0: [v[1], v[2]],
                    k0: v[3],
                    alpha0: v[4],
                    phi0: v[5] + tilt,
                    a0: v[6] * gate,
                }
            }
        })
    }

    /// Source-parameter derivatives: analytic for built-ins, centered differences for tables.
    pub fn tangents(&self, mu: T, nu: T) -> Result<SourceTangents<T>> {
        let z = T::zero();
        Ok(match &self.family {
            SourceFamily::PointImpulse { spectrum, .. } => match spectrum {
                Spectrum::Band { .. } => SourceTangents {
                    r0: [[z, z], [z, z]],
                    alpha0: [T::one(), z],
                    k0: [z, T::one()],
                    rho0: [z, z],
                    phi0: [self.phase_tilt, z],
                },
                Spectrum::Emission { k0, .. } => SourceTangents {
                    r0: [[z, z], [z, z]],
                    alpha0: [T::one(), z],
                    k0: [z, z],
                    rho0: [z, T::one()],
                    phi0: [self.phase_tilt, -*k0],
                },
            },
            SourceFamily::PlaneChirp { line_angle, ramp, .. } => SourceTangents {
                r0: [kappa(*line_angle), [z, z]],
                alpha0: [z, z],
                k0: [z, ramp.dk0(nu)?],
                rho0: [z, T::one()],
                phi0: [self.phase_tilt, -ramp.k0(nu)?],
            },
            SourceFamily::Gridded(g) => {
                let [mr, nr] = [g.mu_range(), g.nu_range()];
                let diff = |range: [T; 2], x: T, along_mu: bool| -> Result<[T; 7]> {
                    let h = lit::<T>(1e-6) * (range[1] - range[0]);
                    let (a, b) = ((x - h).max(range[0]), (x + h).min(range[1]));
                    let (fa, fb) = if along_mu {
                        (g.eval(a, nu)?, g.eval(b, nu)?)
                    } else {
                        (g.eval(mu, a)?, g.eval(mu, b)?)
                    };
                    Ok(std::array::from_fn(|i| (fb[i] - fa[i]) / (b - a)))
                };
                let dm = diff(mr, mu, true)?;
                let dn = diff(nr, nu, false)?;
                SourceTangents {
                    r0: [[dm[1], dm[2]], [dn[1], dn[2]]],
                    alpha0: [dm[4], dn[4]],
                    k0: [dm[3], dn[3]],
                    rho0: [dm[0], dn[0]],
                    phi0: [dm[5] + self.phase_tilt, dn[5]],
                }
            }
        })
    }

    pub fn launch<D: Dispersion<T> + ?Sized>(&self, disp: &D, mu: T, nu: T) -> Result<Launch<T>> {
        let p = self.point(mu, nu)?;
        let t = self.tangents(mu, nu)?;
        let deltas = InitialDeltas::from_tangents(p.alpha0, p.k0, &t);
        deltas.check(mu, nu)?;
        let dp = crate::raytrace::eval_checked(disp, p.r0, p.k0)?;
        Ok(Launch {
            mu,
            nu,
            state: RayState::launch(p.rho0, p.r0, p.k0, p.alpha0, p.phi0, dp.q),
            deltas,
            a0: p.a0,
        })
    }

    /// `n` uniformly spaced values on `[a, b]`, dropping `b` for a periodic `μ`.
    pub fn lattice_mu(&self, n: usize) -> Vec<T> {
        lattice(self.mu, n, self.mu_periodic())
    }

    pub fn lattice_nu(&self, n: usize) -> Vec<T> {
        lattice(self.nu, n, false)
    }
}

pub(crate) fn lattice<T: Real>(r: [T; 2], n: usize, periodic: bool) -> Vec<T> {
    if n <= 1 || r[1] == r[0] {
        return vec![(r[0] + r[1]) / lit::<T>(2.0)];
    }
    let parts = if periodic { n } else { n - 1 };
    (0..n)
        .map(|i| r[0] + (r[1] - r[0]) * count::<T>(i) / count::<T>(parts))
        .collect()
}

/// Traces one source ray with `ℳ`, `D` and the amplitude filled where defined.
pub fn trace_source_ray<T: Real, D: Dispersion<T> + ?Sized>(
    source: &SourceSurface<T>,
    disp: &D,
    mu: T,
    nu: T,
    tau_max: T,
    tol: &Tolerances<T>,
) -> Result<VariationalPath<T>> {
    let l = source.launch(disp, mu, nu)?;
    let mut vp = trace_variational(disp, &l.state, &l.deltas, tau_max, tol)?;
    vp.path.mu = mu;
    vp.path.nu = nu;
    vp.path.a = amplitude_magnitudes(&vp, l.a0);
    Ok(vp)
}

/// `A0 √(g0/g) √(|D_ref / D|)` per sample, ignoring caustic phase shifts.
///
/// Agrees with [`amplitude_along_ray`] up to the first caustic.
pub fn amplitude_magnitudes<T: Real>(vp: &VariationalPath<T>, a0: T) -> Vec<T> {
    let path = &vp.path;
    let g0 = path.first().g();
    let (d_norm, skip) = match (path.d.first(), path.d_ref) {
        (Some(&d0), _) if d0 != T::zero() => (d0, false),
        (_, Some((_, r))) => (r, true),
        _ => return vec![T::nan(); path.len()],
    };
    path.samples
        .iter()
        .zip(&path.d)
        .enumerate()
        .map(|(i, (s, &d))| {
            if (i == 0 && skip) || d == T::zero() {
                T::infinity()
            } else {
                a0 * (g0 / s.g()).sqrt() * (d_norm / d).abs().sqrt()
            }
        })
        .collect()
}

/// Checked amplitude along a source ray (errors past a caustic).
pub fn source_amplitude<T: Real, D: Dispersion<T> + ?Sized>(
    vp: &VariationalPath<T>,
    disp: &D,
    a0: T,
) -> Result<Vec<T>> {
    amplitude_along_ray(&vp.path, disp, a0)
}

/// Builds a point impulse from a band, or an emission window at a single `k0`.
pub fn make_point_impulse<T: Real, D: Dispersion<T> + ?Sized>(
    r_src: Vec2<T>,
    k0_band: [T; 2],
    emission_window: [T; 2],
    disp: &D,
) -> Result<SourceSurface<T>> {
    let [ka, kb] = k0_band;
    if !(ka > T::zero()) || !(kb >= ka) || !kb.is_finite() {
        return Err(Error::EmptyBand(format!(
            "k0 band [{ka}, {kb}] is empty or non-positive"
        )));
    }
    let [ta, tb] = emission_window;
    if !(tb >= ta) {
        return Err(Error::EmptyBand(format!("emission window [{ta}, {tb}] is reversed")));
    }
    let (nu, spectrum) = if kb > ka {
        (
            k0_band,
            Spectrum::Band {
                k0: k0_band,
                offset: ta,
            },
        )
    } else if tb > ta {
        (
            emission_window,
            Spectrum::Emission {
                k0: ka,
                window: emission_window,
            },
        )
    } else {
        return Err(Error::EmptyBand(
            "zero-width band needs a positive-width emission window".into(),
        ));
    };
    check_band(disp, &[r_src], &lattice(k0_band, if kb > ka { 65 } else { 1 }, false))?;
    Ok(SourceSurface::new(
        [T::zero(), T::TAU()],
        nu,
        SourceFamily::PointImpulse { r_src, spectrum },
    ))
}

/// Builds a line source normal to `line_angle` whose frequency follows `ramp`.
pub fn make_plane_chirp<T: Real, D: Dispersion<T> + ?Sized>(
    origin: Vec2<T>,
    line_angle: T,
    ramp: Ramp<T>,
    mu: [T; 2],
    nu: [T; 2],
    disp: &D,
) -> Result<SourceSurface<T>> {
    if !(mu[1] >= mu[0]) || !(nu[1] > nu[0]) {
        return Err(Error::invariant("source range", "need mu_b >= mu_a and nu_b > nu_a"));
    }
    let times = lattice(nu, 65, false);
    let k0s = times.iter().map(|&t| ramp.k0(t)).collect::<Result<Vec<_>>>()?;
    if let Some(bad) = k0s.iter().find(|k| !(**k > T::zero())) {
        return Err(Error::invariant("ramp", format!("k0 must stay positive, got {bad}")));
    }
    let d = kappa(line_angle);
    let pts: Vec<Vec2<T>> = lattice(mu, 3, false)
        .into_iter()
        .map(|m| [origin[0] + m * d[0], origin[1] + m * d[1]])
        .collect();
    check_band(disp, &pts, &k0s)?;
    Ok(SourceSurface::new(
        mu,
        nu,
        SourceFamily::PlaneChirp {
            origin,
            line_angle,
            ramp,
        },
    ))
}

fn check_band<T: Real, D: Dispersion<T> + ?Sized>(disp: &D, pts: &[Vec2<T>], k0s: &[T]) -> Result<()> {
    let offending: Vec<f64> = k0s
        .iter()
        .filter(|&&k| disp.eval(pts[0], k).map(|p| !(p.dq_dk0 > T::zero())).unwrap_or(true))
        .map(|k| k.as_f64())
        .collect();
    if !offending.is_empty() {
        return Err(Error::BandBelowCutoff {
            mode: disp.mode_index(),
            k0: offending,
        });
    }
    for p in pts {
        for &k in k0s {
            if !disp.contains(*p, k) {
                return Err(Error::out_of_domain(
                    "dispersion hull",
                    &[p[0].as_f64(), p[1].as_f64(), k.as_f64()],
                ));
            }
        }
    }
    Ok(())
}

/// Outcome of [`validate_coherence`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceReport<T> {
    pub lattice: [usize; 2],
    pub tolerance: T,
    /// Largest relative residual of the `μ` and `ν` rows.
    pub row_residual: [T; 2],
    pub row_abs_residual: [T; 2],
    pub max_residual: T,
    pub worst_at: (T, T),
    /// Row with the largest failing residual.
    pub failing_row: Option<&'static str>,
    /// Signed extremes of `det 𝒥0` (regularized for point sources).
    pub det_min: T,
    pub det_max: T,
    /// Smallest `|det| / Π‖column‖`.
    pub det_ratio_min: T,
    pub det_sign_constant: bool,
    pub regularized: bool,
    pub pass: bool,
}

impl<T: Real> CoherenceReport<T> {
    pub fn lines(&self) -> Vec<String> {
        vec![
            format!("lattice {}x{}", self.lattice[0], self.lattice[1]),
            format!(
                "mu row residual {:.3e} (abs {:.3e})",
                self.row_residual[0].as_f64(),
                self.row_abs_residual[0].as_f64()
            ),
            format!(
                "nu row residual {:.3e} (abs {:.3e})",
                self.row_residual[1].as_f64(),
                self.row_abs_residual[1].as_f64()
            ),
            format!(
                "det J0 in [{:.6e}, {:.6e}], min normalized {:.3e}{}",
                self.det_min.as_f64(),
                self.det_max.as_f64(),
                self.det_ratio_min.as_f64(),
                if self.regularized {
                    " (leading order, point source)"
                } else {
                    ""
                }
            ),
            format!(
                "failing row: {}",
                self.failing_row.unwrap_or(if self.pass { "none" } else { "det" })
            ),
            format!("result: {}", if self.pass { "PASS" } else { "FAIL" }),
        ]
    }
}

pub const COHERENCE_LATTICE: usize = 32;
pub const COHERENCE_TOL: f64 = 1e-6;
const DET_FLOOR: f64 = 1e-8;

/// Checks the `μ` and `ν` rows `∂φ0/∂ξ = −k0 ∂ρ0/∂ξ + q (κ(α0), ∂r0/∂ξ)` and `det 𝒥0 ≠ 0`.
///
/// The lattice uses cell centers; `∂φ0/∂ξ` is taken by centered differences of `φ0`.
pub fn validate_coherence<T: Real, D: Dispersion<T> + ?Sized>(
    source: &SourceSurface<T>,
    surface: &D,
) -> Result<CoherenceReport<T>> {
    validate_coherence_with(source, surface, COHERENCE_LATTICE, lit(COHERENCE_TOL))
}

pub fn validate_coherence_with<T: Real, D: Dispersion<T> + ?Sized>(
    source: &SourceSurface<T>,
    surface: &D,
    n: usize,
    tol: T,
) -> Result<CoherenceReport<T>> {
    let centers = |r: [T; 2]| -> Vec<T> {
        (0..n)
            .map(|i| r[0] + (r[1] - r[0]) * (count::<T>(i) + lit(0.5)) / count::<T>(n))
            .collect()
    };
    let (mus, nus) = (centers(source.mu), centers(source.nu));
    let steps = [source.mu, source.nu].map(|r| {
        let w = r[1] - r[0];
        if w > T::zero() {
            lit::<T>(1e-4) * w
        } else {
            lit(1e-6)
        }
    });
    let mut rep = CoherenceReport {
        lattice: [n, n],
        tolerance: tol,
        row_residual: [T::zero(); 2],
        row_abs_residual: [T::zero(); 2],
        max_residual: T::zero(),
        worst_at: (mus[0], nus[0]),
        failing_row: None,
        det_min: T::infinity(),
        det_max: T::neg_infinity(),
        det_ratio_min: T::infinity(),
        det_sign_constant: true,
        regularized: false,
        pass: false,
    };
    let mut first_sign: Option<T> = None;
    for &mu in &mus {
        for &nu in &nus {
            let p = source.point(mu, nu)?;
            let t = source.tangents(mu, nu)?;
            let dp = crate::raytrace::eval_checked(surface, p.r0, p.k0)?;
            let kv = kappa(p.alpha0);
            for xi in 0..2 {
                let h = steps[xi];
                let (fp, fm) = if xi == 0 {
                    (source.point(mu + h, nu)?.phi0, source.point(mu - h, nu)?.phi0)
                } else {
                    (source.point(mu, nu + h)?.phi0, source.point(mu, nu - h)?.phi0)
                };
                let lhs = (fp - fm) / (lit::<T>(2.0) * h);
                let r0x = t.r0[xi];
                let rhs = -p.k0 * t.rho0[xi] + dp.q * dot2(kv, r0x);
                let abs = (lhs - rhs).abs();
                let denom = (p.k0 * t.rho0[xi]).abs() + dp.q * (r0x[0] * r0x[0] + r0x[1] * r0x[1]).sqrt() + lhs.abs();
                let rel = if denom > T::zero() { abs / denom } else { abs };
                rep.row_abs_residual[xi] = rep.row_abs_residual[xi].max(abs);
                if rel > rep.row_residual[xi] {
                    rep.row_residual[xi] = rel;
                }
                if rel > rep.max_residual {
                    rep.max_residual = rel;
                    rep.worst_at = (mu, nu);
                }
            }
            let deltas = InitialDeltas::from_tangents(p.alpha0, p.k0, &t);
            let (a, b, v) = if deltas.is_point() {
                rep.regularized = true;
                let am = coefficient_matrix(&dp, p.alpha0, p.k0).a;
                let tr = T::one() / dp.v;
                let lin = |d: &[T; 4]| {
                    let r = mat4_vec(&am, *d);
                    std::array::from_fn::<T, 4, _>(|i| d[i] + tr * dp.v * r[i])
                };
                (lin(&deltas.d_mu), lin(&deltas.d_nu), dp.v)
            } else {
                (deltas.d_mu, deltas.d_nu, dp.v)
            };
            let jm = jacobi_matrix(v, p.alpha0, &a, &b, deltas.drho0);
            let det = det3(&jm);
            let hadamard: T = (0..3)
                .map(|c| (0..3).map(|r| jm[r][c] * jm[r][c]).sum::<T>().sqrt())
                .fold(T::one(), |acc, x| acc * x);
            let ratio = if hadamard > T::zero() {
                det.abs() / hadamard
            } else {
                T::zero()
            };
            rep.det_min = rep.det_min.min(det);
            rep.det_max = rep.det_max.max(det);
            rep.det_ratio_min = rep.det_ratio_min.min(ratio);
            match first_sign {
                None => first_sign = Some(det.signum()),
                Some(s) if det == T::zero() || det.signum() != s => rep.det_sign_constant = false,
                _ => {}
            }
        }
    }
    let rows_ok = rep.row_residual.iter().all(|r| *r <= tol);
    if !rows_ok {
        rep.failing_row = Some(if rep.row_residual[0] >= rep.row_residual[1] {
            "mu"
        } else {
            "nu"
        });
    }
    rep.pass = rows_ok && rep.det_sign_constant && rep.det_ratio_min >= lit(DET_FLOOR);
    Ok(rep)
}
