use proptest::prelude::*;
use stray::modes::{AnalyticDispersion, Dispersion, Geometry, ModeLaw};
use stray::ode::Tolerances;
use stray::raytrace::{trace_ray, trace_ray_to, RayState};
use stray::variational::{trace_variational, InitialDeltas};

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

fn launch(d: &impl Dispersion<f64>, r: [f64; 2], k0: f64, alpha: f64) -> RayState<f64> {
    RayState::launch(0.0, r, k0, alpha, 0.0, d.eval(r, k0).unwrap().q)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Rescaling the ray parameters rescales `D` but leaves the amplitude unchanged.
    #[test]
    fn amplitude_is_parameterization_invariant(
        y0 in -150.0f64..150.0,
        alpha in -0.5f64..0.5,
        k0 in 0.25f64..0.6,
        s_mu in 0.1f64..10.0,
        s_nu in 0.1f64..10.0,
    ) {
        let d = lens();
        let st = launch(&d, [0.0, y0], k0, alpha);
        // Plane-wave data: line source along y, emission time as the second parameter.
        let deltas = InitialDeltas {
            d_mu: [-alpha.sin(), alpha.cos(), 0.0, 0.0],
            d_nu: [0.0; 4],
            drho0: [0.0, 1.0],
            dphi0: [0.0, -k0],
        };
        let tol = Tolerances::default();
        let a = trace_variational(&d, &st, &deltas, 1400.0, &tol).unwrap();
        let b = trace_variational(&d, &st, &deltas.scaled(s_mu, s_nu), 1400.0, &tol).unwrap();
        let ratio = s_mu * s_nu;
        let (a0, b0) = (a.path.d[0], b.path.d[0]);
        prop_assert!((b0 - ratio * a0).abs() <= 1e-12 * (ratio * a0).abs());
        for tau in [350.0, 700.0, 1050.0, 1400.0] {
            let da = a.d_of_state(&d, &a.state_at(&d, tau).unwrap()).unwrap();
            let db = b.d_of_state(&d, &b.state_at(&d, tau).unwrap()).unwrap();
            prop_assert!((db / b0 - da / a0).abs() <= 1e-6 * (da / a0).abs().max(1e-3), "tau {}: {} vs {}", tau, da / a0, db / b0);
        }
    }

    /// Integrating back from the end of a ray recovers its launch state.
    #[test]
    fn rays_are_reversible(
        x0 in -100.0f64..100.0,
        y0 in -100.0f64..100.0,
        alpha in -1.0f64..1.0,
        k0 in 0.2f64..0.6,
    ) {
        let d = lens();
        let st = launch(&d, [x0, y0], k0, alpha);
        let tol = Tolerances::new(1e-10, 1e-13);
        let fwd = trace_ray(&d, &st, 1500.0, &tol).unwrap();
        let back = trace_ray_to(&d, &fwd.last().state, 0.0, &tol).unwrap();
        let end = back.last().state;
        prop_assert!((end.r[0] - x0).abs() < 1e-5 && (end.r[1] - y0).abs() < 1e-5);
        prop_assert!((end.alpha - alpha).abs() < 1e-8);
        prop_assert!(end.s.abs() < 1e-5);
        prop_assert!(fwd.samples.iter().all(|s| s.state.k0 == k0));
    }
}
