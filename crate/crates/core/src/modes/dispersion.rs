//! Dispersion function `q(x, y, k0)` of one mode and its derivatives.

use std::io::Write;

use rayon::prelude::*;

use crate::environment::Waveguide;
use crate::error::{Error, Result};
use crate::export::{fmt_f64, write_rows};
use crate::interp::{Axis, TensorGrid};
use crate::linalg::{Mat2, Vec2};
use crate::scalar::{lit, Real};

use super::solve_q;

/// `q` and every derivative used by the ray and variational systems at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionPoint<T> {
    pub r: Vec2<T>,
    pub k0: T,
    pub q: T,
    pub dq_dk0: T,
    pub d2q_dk02: T,
    pub grad_q: Vec2<T>,
    pub hess_q: Mat2<T>,
    pub grad_dq_dk0: Vec2<T>,
    /// Group slowness `∂q/∂k0`.
    pub kappa0: T,
    /// Group velocity `1/κ0`.
    pub v: T,
    /// `atan κ0`; `v tan β = 1`.
    pub beta: T,
}

impl<T: Real> DispersionPoint<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        r: Vec2<T>,
        k0: T,
        q: T,
        dq_dk0: T,
        d2q_dk02: T,
        grad_q: Vec2<T>,
        hess_q: Mat2<T>,
        grad_dq_dk0: Vec2<T>,
    ) -> Self {
        Self {
            r,
            k0,
            q,
            dq_dk0,
            d2q_dk02,
            grad_q,
            hess_q,
            grad_dq_dk0,
            kappa0: dq_dk0,
            v: T::one() / dq_dk0,
            beta: dq_dk0.atan(),
        }
    }

    /// Uniform medium with the given `q` and its first two `k0` derivatives.
    pub fn homogeneous(r: Vec2<T>, k0: T, q: T, dq_dk0: T, d2q_dk02: T) -> Self {
        let z = T::zero();
        Self::new(r, k0, q, dq_dk0, d2q_dk02, [z, z], [[z, z], [z, z]], [z, z])
    }

    /// Group velocity and the Snell-analog angle satisfy `v tan β = 1`.
    pub fn snell_residual(&self) -> T {
        (self.v * self.beta.tan() - T::one()).abs()
    }
}

/// Source of dispersion data for one mode.
pub trait Dispersion<T: Real>: Send + Sync {
    fn eval(&self, r: Vec2<T>, k0: T) -> Result<DispersionPoint<T>>;
    fn contains(&self, r: Vec2<T>, k0: T) -> bool;
    fn mode_index(&self) -> usize;
}

impl<T: Real, D: Dispersion<T> + ?Sized> Dispersion<T> for &D {
    fn eval(&self, r: Vec2<T>, k0: T) -> Result<DispersionPoint<T>> {
        (**self).eval(r, k0)
    }
    fn contains(&self, r: Vec2<T>, k0: T) -> bool {
        (**self).contains(r, k0)
    }
    fn mode_index(&self) -> usize {
        (**self).mode_index()
    }
}

impl<T: Real, D: Dispersion<T> + ?Sized> Dispersion<T> for Box<D> {
    fn eval(&self, r: Vec2<T>, k0: T) -> Result<DispersionPoint<T>> {
        (**self).eval(r, k0)
    }
    fn contains(&self, r: Vec2<T>, k0: T) -> bool {
        (**self).contains(r, k0)
    }
    fn mode_index(&self) -> usize {
        (**self).mode_index()
    }
}

/// Uniform node layout over `(x, y, k0)`; a count of one makes that axis invariant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec<T> {
    pub x: [T; 2],
    pub nx: usize,
    pub y: [T; 2],
    pub ny: usize,
    pub k0: [T; 2],
    pub nk0: usize,
    pub order: usize,
}

impl<T: Real> GridSpec<T> {
    /// Horizontally invariant grid over a `k0` band.
    pub fn band(k0: [T; 2], nk0: usize) -> Self {
        Self {
            x: [T::zero(); 2],
            nx: 1,
            y: [T::zero(); 2],
            ny: 1,
            k0,
            nk0,
            order: 3,
        }
    }
}

const FIELDS: usize = 10;
const Q: usize = 0;
const DQ: usize = 1;
const D2Q: usize = 2;
const QX: usize = 3;
const QY: usize = 4;
const QXX: usize = 5;
const QXY: usize = 6;
const QYY: usize = 7;
const DQX: usize = 8;
const DQY: usize = 9;

/// Tabulated dispersion of one mode with interpolated derivative fields.
#[derive(Debug, Clone)]
pub struct DispersionSurface<T> {
    l: usize,
    grid: TensorGrid<T>,
    tables: Vec<Vec<T>>,
}

fn diff1<T: Real>(grid: &TensorGrid<T>, f: &[T], axis: usize) -> Vec<T> {
    let ax = &grid.axes()[axis];
    let n = ax.len();
    if n == 1 {
        return vec![T::zero(); f.len()];
    }
    let h = ax.nodes()[1] - ax.nodes()[0];
    let stride = grid.strides()[axis];
    let two = lit::<T>(2.0);
    (0..f.len())
        .map(|p| {
            let i = grid.unflatten(p)[axis];
            let at = |k: usize| f[p - i * stride + k * stride];
            if n == 2 {
                (at(1) - at(0)) / h
            } else if i == 0 {
                (-lit::<T>(3.0) * at(0) + lit::<T>(4.0) * at(1) - at(2)) / (two * h)
            } else if i == n - 1 {
                (lit::<T>(3.0) * at(n - 1) - lit::<T>(4.0) * at(n - 2) + at(n - 3)) / (two * h)
            } else {
                (at(i + 1) - at(i - 1)) / (two * h)
            }
        })
        .collect()
}

fn diff2<T: Real>(grid: &TensorGrid<T>, f: &[T], axis: usize) -> Vec<T> {
    let ax = &grid.axes()[axis];
    let n = ax.len();
    if n < 3 {
        return vec![T::zero(); f.len()];
    }
    let h = ax.nodes()[1] - ax.nodes()[0];
    let h2 = h * h;
    let stride = grid.strides()[axis];
    (0..f.len())
        .map(|p| {
            let i = grid.unflatten(p)[axis];
            let at = |k: usize| f[p - i * stride + k * stride];
            let centered = |c: usize| (at(c + 1) - lit::<T>(2.0) * at(c) + at(c - 1)) / h2;
            if n == 3 {
                centered(1)
            } else if i == 0 {
                (lit::<T>(2.0) * at(0) - lit::<T>(5.0) * at(1) + lit::<T>(4.0) * at(2) - at(3)) / h2
            } else if i == n - 1 {
                (lit::<T>(2.0) * at(n - 1) - lit::<T>(5.0) * at(n - 2) + lit::<T>(4.0) * at(n - 3) - at(n - 4)) / h2
            } else {
                centered(i)
            }
        })
        .collect()
}

impl<T: Real> DispersionSurface<T> {
    /// Builds the derivative tables from node values of `q`.
    pub fn from_node_values(l: usize, grid: TensorGrid<T>, q: Vec<T>) -> Result<Self> {
        if grid.axes().len() != 3 || q.len() != grid.len() {
            return Err(Error::IncompatibleGrids(
                "dispersion tables need a (x, y, k0) grid".into(),
            ));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite dispersion table".into()));
        }
        let dq = diff1(&grid, &q, 2);
        let d2q = diff1(&grid, &dq, 2);
        let qx = diff1(&grid, &q, 0);
        let qy = diff1(&grid, &q, 1);
        let qxx = diff2(&grid, &q, 0);
        let qyy = diff2(&grid, &q, 1);
        let qxy = diff1(&grid, &qx, 1);
        let dqx = diff1(&grid, &dq, 0);
        let dqy = diff1(&grid, &dq, 1);
        let tables = vec![q, dq, d2q, qx, qy, qxx, qxy, qyy, dqx, dqy];
        debug_assert_eq!(tables.len(), FIELDS);
        Ok(Self { l, grid, tables })
    }

    pub fn grid(&self) -> &TensorGrid<T> {
        &self.grid
    }

    /// Node table of `q`.
    pub fn q_table(&self) -> &[T] {
        &self.tables[Q]
    }

    /// Interpolated `q` alone.
    pub fn q_at(&self, r: Vec2<T>, k0: T) -> Result<T> {
        let w = self.weights(r, k0)?;
        Ok(w.apply(&self.tables[Q]))
    }

    fn weights(&self, r: Vec2<T>, k0: T) -> Result<crate::interp::Weights<T>> {
        self.grid.weights(&[r[0], r[1], k0]).ok_or_else(|| {
            Error::out_of_domain("dispersion surface hull", &[r[0].as_f64(), r[1].as_f64(), k0.as_f64()])
        })
    }
}

impl<T: Real> Dispersion<T> for DispersionSurface<T> {
    fn eval(&self, r: Vec2<T>, k0: T) -> Result<DispersionPoint<T>> {
        let w = self.weights(r, k0)?;
        let f = |i: usize| w.apply(&self.tables[i]);
        let qxy = f(QXY);
        Ok(DispersionPoint::new(
            r,
            k0,
            f(Q),
            f(DQ),
            f(D2Q),
            [f(QX), f(QY)],
            [[f(QXX), qxy], [qxy, f(QYY)]],
            [f(DQX), f(DQY)],
        ))
    }

    fn contains(&self, r: Vec2<T>, k0: T) -> bool {
        self.grid.contains(&[r[0], r[1], k0])
    }

    fn mode_index(&self) -> usize {
        self.l
    }
}

/// Solves mode `l` at every node (in parallel) and differentiates the tables.
pub fn build_dispersion_surface<T: Real>(
    env: &Waveguide<T>,
    spec: &GridSpec<T>,
    l: usize,
) -> Result<DispersionSurface<T>> {
    let axes = vec![
        Axis::uniform(spec.x[0], spec.x[1], spec.nx)?,
        Axis::uniform(spec.y[0], spec.y[1], spec.ny)?,
        Axis::uniform(spec.k0[0], spec.k0[1], spec.nk0)?,
    ];
    let grid = TensorGrid::new(axes, spec.order)?;
    let nodes: Vec<[T; 3]> = (0..grid.len())
        .map(|p| {
            let idx = grid.unflatten(p);
            [
                grid.axes()[0].nodes()[idx[0]],
                grid.axes()[1].nodes()[idx[1]],
                grid.axes()[2].nodes()[idx[2]],
            ]
        })
        .collect();
    let solved: Vec<Result<T>> = nodes.par_iter().map(|n| solve_q(env, [n[0], n[1]], n[2], l)).collect();
    let mut q = Vec::with_capacity(nodes.len());
    let mut below = Vec::new();
    for (node, res) in nodes.iter().zip(solved) {
        match res {
            Ok(v) => q.push(v),
            Err(Error::BelowCutoff { .. }) => {
                below.push(node.map(|v| v.as_f64()));
                q.push(T::nan());
            }
            Err(e) => return Err(e),
        }
    }
    if !below.is_empty() {
        return Err(Error::NodesBelowCutoff { nodes: below });
    }
    DispersionSurface::from_node_values(l, grid, q)
}

/// Free-function form of [`Dispersion::eval`].
pub fn eval_dispersion<T: Real, D: Dispersion<T> + ?Sized>(
    surface: &D,
    r: Vec2<T>,
    k0: T,
) -> Result<DispersionPoint<T>> {
    surface.eval(r, k0)
}

/// Rows `(k0, q, ∂q/∂k0, v)` of a dispersion curve at fixed position.
pub fn export_dispersion_curve<T: Real, D: Dispersion<T> + ?Sized>(
    disp: &D,
    r: Vec2<T>,
    k0: &[T],
) -> Result<Vec<[T; 4]>> {
    k0.iter()
        .map(|&k| {
            let p = disp.eval(r, k)?;
            Ok([k, p.q, p.dq_dk0, p.v])
        })
        .collect()
}

/// Writes dispersion-curve rows as CSV with columns `k0,q,dq_dk0,v`.
pub fn write_dispersion_csv<T: Real, W: Write>(out: W, rows: &[[T; 4]]) -> Result<usize> {
    write_rows(
        out,
        &["k0", "q", "dq_dk0", "v"],
        rows.iter()
            .map(|r| r.iter().map(|v| fmt_f64(v.as_f64())).collect::<Vec<_>>()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::Axis;
    use proptest::prelude::*;

    fn ideal_q(k0: f64, y: f64) -> f64 {
        let kz = std::f64::consts::PI / 200.0;
        (k0 * k0 - kz * kz).sqrt() * (1.0 + 0.1 * (0.01 * y).sin())
    }

    fn synthetic() -> DispersionSurface<f64> {
        let grid = TensorGrid::new(
            vec![
                Axis::uniform(0.0, 1.0, 1).unwrap(),
                Axis::uniform(-100.0, 100.0, 41).unwrap(),
                Axis::uniform(0.3, 0.8, 51).unwrap(),
            ],
            3,
        )
        .unwrap();
        let q = (0..grid.len())
            .map(|p| {
                let i = grid.unflatten(p);
                ideal_q(grid.axes()[2].nodes()[i[2]], grid.axes()[1].nodes()[i[1]])
            })
            .collect();
        DispersionSurface::from_node_values(0, grid, q).unwrap()
    }

    #[test]
    fn homogeneous_surface_has_no_horizontal_derivatives() {
        let env = Waveguide::<f64>::pekeris(100.0, 1.0, 0.88, 1.0, 1.8).unwrap();
        let spec = GridSpec {
            x: [-10.0, 10.0],
            nx: 3,
            y: [-10.0, 10.0],
            ny: 4,
            k0: [0.4, 0.6],
            nk0: 5,
            order: 3,
        };
        let s = build_dispersion_surface(&env, &spec, 0).unwrap();
        let a = s.eval([-3.0, 2.0], 0.47).unwrap();
        let b = s.eval([7.0, -9.0], 0.47).unwrap();
        assert_eq!(a.q, b.q);
        for p in [a, b] {
            assert!(p.grad_q.iter().all(|g| g.abs() <= 1e-12));
            assert!(p.hess_q.iter().flatten().all(|g| g.abs() <= 1e-12));
            assert!(p.grad_dq_dk0.iter().all(|g| g.abs() <= 1e-12));
        }
    }

    #[test]
    fn ideal_waveguide_group_slowness() {
        let env = Waveguide::<f64>::rigid(100.0, 1.0).unwrap();
        let s = build_dispersion_surface(&env, &GridSpec::band([0.3, 0.8], 101), 0).unwrap();
        let axis = &s.grid().axes()[2];
        for &k0 in axis.nodes() {
            let p = s.eval([0.0, 0.0], k0).unwrap();
            assert!((p.dq_dk0 - k0 / p.q).abs() < 1e-6, "k0 {k0}");
        }
    }

    #[test]
    fn interpolation_matches_direct_solve_off_node() {
        let env = Waveguide::<f64>::pekeris(100.0, 1.0, 0.88, 1.0, 1.8).unwrap();
        let s = build_dispersion_surface(&env, &GridSpec::band([0.3, 0.8], 26), 1).unwrap();
        for k0 in [0.3123, 0.4567, 0.6789, 0.7999] {
            let qi = s.eval([0.0, 0.0], k0).unwrap().q;
            let qd = solve_q(&env, [0.0, 0.0], k0, 1).unwrap();
            assert!((qi - qd).abs() <= 1e-5 * qd, "{k0}: {qi} vs {qd}");
        }
    }

    #[test]
    fn nodes_below_cutoff_are_listed() {
        let env = Waveguide::<f64>::pekeris(100.0, 1.0, 0.88, 1.0, 1.8).unwrap();
        match build_dispersion_surface(&env, &GridSpec::band([0.05, 0.5], 10), 2) {
            Err(Error::NodesBelowCutoff { nodes }) => {
                assert!(!nodes.is_empty());
                assert!(nodes.iter().all(|n| n[2] < 0.17));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn node_values_are_reproduced() {
        let s = synthetic();
        let g = s.grid();
        let y = g.axes()[1].nodes()[7];
        let k = g.axes()[2].nodes()[13];
        let p = s.eval([0.5, y], k).unwrap();
        assert_eq!(p.q, s.q_table()[g.index(&[0, 7, 13])]);
    }

    #[test]
    fn outside_hull_is_an_error() {
        let s = synthetic();
        assert!(s.eval([0.0, 0.0], 0.81).is_err());
        assert!(s.eval([0.0, 100.5], 0.5).is_err());
        assert!(!s.contains([0.0, 0.0], 0.2));
    }

    #[test]
    fn writes_csv_rows() {
        let s = synthetic();
        let rows = export_dispersion_curve(&s, [0.0, 0.0], &[0.4, 0.5]).unwrap();
        let mut buf = Vec::new();
        assert_eq!(write_dispersion_csv(&mut buf, &rows).unwrap(), 2);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k0,q,dq_dk0,v\n4.0000000000000002e-1,"));
    }

    proptest! {
        #[test]
        fn snell_analog_holds(y in -90.0f64..90.0, k0 in 0.35f64..0.75) {
            let p = synthetic().eval([0.0, y], k0).unwrap();
            prop_assert!(p.snell_residual() < 1e-12);
            prop_assert_eq!(p.hess_q[0][1], p.hess_q[1][0]);
        }

        #[test]
        fn derivative_fields_match_differences_of_interpolated_q(y in -80.0f64..80.0, k0 in 0.35f64..0.75) {
            let s = synthetic();
            let p = s.eval([0.0, y], k0).unwrap();
            let d = 1e-4;
            let fd_k = (s.q_at([0.0, y], k0 + d).unwrap() - s.q_at([0.0, y], k0 - d).unwrap()) / (2.0 * d);
            prop_assert!((p.dq_dk0 - fd_k).abs() <= 1e-4 * p.dq_dk0.abs());
            let dy = 1e-2;
            let fd_y = (s.q_at([0.0, y + dy], k0).unwrap() - s.q_at([0.0, y - dy], k0).unwrap()) / (2.0 * dy);
            let scale = p.q / 100.0;
            prop_assert!((p.grad_q[1] - fd_y).abs() <= 1e-4 * scale);
        }
    }
}
