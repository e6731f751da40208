use std::sync::Arc;

use lsw_core::harmonics::{project, HarmonicField};
use lsw_core::metric::{make_schwarzschild, AmbientMetric, MetricFamily};
use lsw_core::reduction::*;
use lsw_core::surface::stability_margin;

fn schw() -> Arc<AmbientMetric> {
    Arc::new(make_schwarzschild(2.0).unwrap())
}

fn cfg() -> SolverConfig {
    SolverConfig::default()
}

#[test]
fn centered_multiplier() {
    let st = solve(schw(), [0.0; 3], 100.0, &cfg()).unwrap();
    assert!(st.kappa >= 3.8e-6 && st.kappa <= 4.2e-6, "{}", st.kappa);
}

#[test]
fn outlying_multiplier_decays_like_lambda_to_minus_four() {
    let a = solve(schw(), [3.0, 0.0, 0.0], 100.0, &cfg()).unwrap();
    let b = solve(schw(), [3.0, 0.0, 0.0], 200.0, &cfg()).unwrap();
    let ratio = a.kappa / b.kappa;
    assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
    assert!(a.kappa.abs() * 100f64.powi(4) < 1.0);
}

#[test]
fn solved_state_invariants() {
    let c = cfg();
    for xi in [[0.5, 0.0, 0.0], [0.1, -0.3, 0.2], [3.0, 0.0, 0.0], [0.0, 1.5, 1.0]] {
        let lam = 100.0;
        let st = solve(schw(), xi, lam, &c).unwrap();
        let l1 = project(st.u(), 1, 1);
        assert!(l1.norm_sq().sqrt() < 1e-10);
        assert!(st.area_error.abs() <= c.tol_area * lam * lam);
        assert!(st.residual_perp_inf <= c.tol_res / lam.powi(4));
        let json = serde_json::to_string(&st.summary()).unwrap();
        assert!(json.contains("\"kappa\""));
    }
}

#[test]
fn on_center_residual_orders() {
    let r = residual_orders(schw(), [0.5, 0.0, 0.0], &[50.0, 100.0, 200.0, 400.0], &cfg()).unwrap();
    let e1 = r.lambda1_exponent.unwrap();
    let e2 = r.seed_exponent.unwrap();
    assert!(e1 >= 4.5, "{r:?}");
    assert!(e2 >= 0.8, "{r:?}");
}

#[test]
fn euclidean_residual_orders_are_exact() {
    let m = Arc::new(AmbientMetric::new(MetricFamily::Euclidean).unwrap());
    let r = residual_orders(m, [0.2, 0.0, 0.0], &[20.0, 40.0], &cfg()).unwrap();
    assert!(r.lambda1_exponent.is_none() && r.seed_exponent.is_none(), "{r:?}");
}

#[test]
fn perturbed_seeds_return_the_same_solution() {
    let rep = basin_probe(schw(), [0.4, 0.2, 0.0], 100.0, &cfg(), &[0.02, 0.05, 0.1], 17).unwrap();
    for d in &rep.distances {
        assert!(matches!(d, Some(v) if *v < 1e-8), "{rep:?}");
    }
    assert!(rep.basin_radius >= 0.1);
}

#[test]
fn constant_band_approaches_its_limit() {
    let c = cfg();
    let dev = |xi: [f64; 3], limit: f64, lam: f64| {
        let st = solve(schw(), xi, lam, &c).unwrap();
        (st.u().mean() - limit).abs()
    };
    let (a, b) = (dev([0.5, 0.0, 0.0], -2.0, 100.0), dev([0.5, 0.0, 0.0], -2.0, 200.0));
    assert!((1.6..2.5).contains(&(a / b)), "{a} {b}");
    let (a, b) = (dev([3.0, 0.0, 0.0], -2.0 / 3.0, 100.0), dev([3.0, 0.0, 0.0], -2.0 / 3.0, 200.0));
    assert!((1.6..2.5).contains(&(a / b)), "{a} {b}");
}

#[test]
fn parameter_derivatives_of_u() {
    // u' = O(λ⁻²): the λ-derivative shrinks fourfold when λ doubles
    let c = cfg();
    let xi = [0.3, 0.0, 0.0];
    let du = |lam: f64| {
        let h = 1e-2 * lam;
        let a = solve(schw(), xi, lam + h, &c).unwrap();
        let b = solve(schw(), xi, lam - h, &c).unwrap();
        a.u().add(&b.u().scaled(-1.0)).norm_sq().sqrt() / (2.0 * h)
    };
    let ratio = du(100.0) / du(200.0);
    assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");

    // D̄u = O(λ⁻¹) for the derivative in the ambient point λξ
    let dx = |lam: f64| {
        let h = 1e-3;
        let a = solve(schw(), [0.3 + h, 0.0, 0.0], lam, &c).unwrap();
        let b = solve(schw(), [0.3 - h, 0.0, 0.0], lam, &c).unwrap();
        a.u().add(&b.u().scaled(-1.0)).norm_sq().sqrt() / (2.0 * h * lam)
    };
    let ratio = dx(100.0) / dx(200.0);
    assert!((1.7..2.3).contains(&ratio), "ratio {ratio}");
}

#[test]
fn far_outlying_regime() {
    let c = SolverConfig {
        regime: Some(Regime::FarOutlying),
        ..cfg()
    };
    let a = solve(schw(), [4.0, 0.0, 0.0], 100.0, &c).unwrap();
    assert_eq!(a.regime, Regime::FarOutlying);
    assert!(a.kappa.abs() < 100f64.powi(-4) * 4f64.powi(-4) * 10.0, "{}", a.kappa);
    let bad = solve(schw(), [1.5, 0.0, 0.0], 100.0, &c);
    assert!(bad.is_err());
}

#[test]
fn rejected_parameters() {
    let c = cfg();
    assert!(matches!(
        solve(schw(), [1.0, 0.0, 0.0], 100.0, &c),
        Err(lsw_core::Error::InvalidParameter(_))
    ));
    assert!(solve(schw(), [0.0; 3], 5.0, &c).is_err());
    let bad = SolverConfig { delta: 0.7, ..cfg() };
    assert!(solve(schw(), [0.0; 3], 100.0, &bad).is_err());
}

#[test]
fn non_convergence_carries_the_trace() {
    let c = SolverConfig { max_iter: 1, ..cfg() };
    match solve(schw(), [0.5, 0.0, 0.0], 100.0, &c) {
        Err(lsw_core::Error::NoConvergence { iterations, trace }) => {
            assert_eq!(iterations, 1);
            assert!(trace.len() >= 2);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn solved_leaf_is_stable() {
    let st = solve(schw(), [0.0; 3], 100.0, &cfg()).unwrap();
    let margin = stability_margin(&st.surface, st.kappa).unwrap();
    assert!(margin >= -1e-8, "{margin}");
}

#[test]
fn warm_start_reproduces_solution() {
    let c = cfg();
    let a = solve(schw(), [0.2, 0.0, 0.0], 150.0, &c).unwrap();
    let u: HarmonicField = a.u().clone();
    let b = solve_from(schw(), [0.2, 0.0, 0.0], 150.0, &c, Some((&u, a.kappa))).unwrap();
    assert!(a.u().add(&b.u().scaled(-1.0)).norm_sq().sqrt() < 1e-9);
    assert!(b.iterations <= 2);
}
