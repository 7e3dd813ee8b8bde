//! Eigenray search in the focusing lens against a brute-force fan of 10^4 rays.

use stray::fronts::{find_eigenrays, seed_scan_passes, trace_source_fan, EigenrayOptions};
use stray::modes::{AnalyticDispersion, Dispersion, Geometry, ModeLaw};
use stray::ode::Tolerances;
use stray::raytrace::{trace_fan, RayPath, RayState};
use stray::source::{make_point_impulse, SourceSurface};

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

/// Travel times of spatial rays through `(x_obs, y_obs)`, from sign changes of `y − y_obs`
/// between adjacent fan rays at `x = x_obs`.
fn brute_force(paths: &[RayPath<f64>], x_obs: f64, y_obs: f64) -> Vec<f64> {
    let hits: Vec<Option<(f64, f64)>> = paths
        .iter()
        .map(|p| {
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
fn eigenray_counts_match_dense_fan() {
    let d = lens();
    let k0 = 0.5;
    let full = make_point_impulse([0.0, 0.0], [k0, k0], [0.0, 1000.0], &d).unwrap();
    let source = SourceSurface::new([-0.4, 0.4], full.nu, full.family.clone());
    let tol = Tolerances::default();
    let q = d.eval([0.0, 0.0], k0).unwrap().q;
    let n = 10_001;
    let inits: Vec<(f64, f64, RayState<f64>)> = (0..n)
        .map(|i| {
            let a = -0.4 + 0.8 * i as f64 / (n - 1) as f64;
            (a, 0.0, RayState::launch(0.0, [0.0, 0.0], k0, a, 0.0, q))
        })
        .collect();
    let dense: Vec<RayPath<f64>> = trace_fan(&d, &inits, 3300.0, &tol)
        .into_iter()
        .map(|r| r.unwrap())
        .collect();
    let coarse = trace_source_fan(&source, &d, 401, 1, 3300.0, &tol);
    let mut multipath = 0;
    for (x_obs, y_obs) in [
        (2000.0, 5.0),
        (2500.0, -40.0),
        (2900.0, 45.0),
        (2950.0, -20.0),
        (3000.0, 0.0),
        (3000.0, 15.0),
        (3050.0, -10.0),
        (3100.0, 2.0),
        (3100.0, -20.0),
        (3200.0, -30.0),
    ] {
        let oracle = brute_force(&dense, x_obs, y_obs);
        multipath += usize::from(oracle.len() > 1);
        let latest = oracle.iter().fold(0.0f64, |m, &t| m.max(t));
        let r_obs = [latest + 5.0, x_obs, y_obs];
        let seeds = seed_scan_passes(&coarse, r_obs, false);
        let found = find_eigenrays(&source, &d, r_obs, &seeds, &EigenrayOptions::default());
        assert_eq!(
            found.rays.len(),
            oracle.len(),
            "at ({x_obs}, {y_obs}): oracle {oracle:?}"
        );
        let mut taus: Vec<f64> = found.rays.iter().map(|r| r.tau).collect();
        let mut expect = oracle.clone();
        taus.sort_by(f64::total_cmp);
        expect.sort_by(f64::total_cmp);
        for (t, e) in taus.iter().zip(&expect) {
            assert!(
                (t - e).abs() < 1e-3 * e,
                "tau {t} vs brute force {e} at ({x_obs}, {y_obs})"
            );
        }
        for r in &found.rays {
            let reach = 1e-8 * r_obs.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((r.point[1] - x_obs).abs() <= reach && (r.point[2] - y_obs).abs() <= reach);
        }
    }
    assert!(multipath >= 6, "only {multipath} multipath points");
}
