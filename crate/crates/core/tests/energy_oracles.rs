use std::f64::consts::PI;
use std::sync::Arc;

use lsw_core::energy::*;
use lsw_core::metric::{make_pulse_metric, make_schwarzschild, AmbientMetric, MetricFamily, PulseSpec};
use lsw_core::reduction::{decay_exponent, Regime};
use lsw_core::surface::{shared_grid, GraphSurface};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn schw() -> Arc<AmbientMetric> {
    Arc::new(make_schwarzschild(2.0).unwrap())
}

fn cfg() -> EnergyConfig {
    EnergyConfig::default()
}

#[test]
fn g1_reference_values() {
    assert_eq!(g1_radial(0.0).unwrap(), 0.0);
    // 64 + 32/0.75 − 192 atanh(1/2) − 128 ln(3/4), in units of π
    let expect = 38.023_192_228_356 * PI;
    assert!((g1_radial(0.5).unwrap() - expect).abs() < 1e-8, "{}", g1_radial(0.5).unwrap());
    let (a, b) = (g1_radial(0.3).unwrap(), g1_radial(0.6).unwrap());
    assert!(0.0 < a && a < b);
    assert!(g1_radial(0.999).unwrap() > 1e4);
    assert!(g1_radial(1.0).is_err());
    // G₁ ≈ 128π s² near the origin
    let s = 1e-3;
    assert!((g1_radial(s).unwrap() / (s * s) / (128.0 * PI) - 1.0).abs() < 1e-5);
}

#[test]
fn outlying_closed_form_tends_to_far_term() {
    let d: Vec<f64> = [5.0, 10.0, 20.0]
        .iter()
        .map(|&s| (g_outlying_closed(s).unwrap() - g_far_closed(s)).abs())
        .collect();
    let e = decay_exponent(&[5.0, 10.0, 20.0], &d);
    assert!((7.8..8.3).contains(&e), "exponent {e}");
    assert!(g_outlying_closed(0.9).is_err());
}

#[test]
fn schwarzschild_far_outlying_value() {
    let ev = g_far_outlying(&schw(), [10.0, 0.0, 0.0], 1e3).unwrap();
    assert!((ev.value + 2.680_826e-5).abs() < 1e-10, "{}", ev.value);
    assert_eq!(ev.method, Method::FarOutlyingExpansion);
    assert!(ev.generic_outlying.is_some());
    assert!(g_far_outlying(&schw(), [1.5, 0.0, 0.0], 1e3).is_err());
}

#[test]
fn direct_value_vanishes_at_the_origin() {
    let ev = g_direct(schw(), [0.0; 3], 200.0, &cfg(), 1).unwrap();
    assert!(ev.value.abs() < 1e-6, "{}", ev.value);
    let g = ev.gradient.unwrap();
    assert!(g.iter().all(|c| c.abs() < 1e-5), "{g:?}");
}

#[test]
fn direct_minus_expansion_is_order_inverse_lambda() {
    for xi in [[0.0, 0.0, 0.4], [3.0, 0.0, 0.0]] {
        let scaled: Vec<f64> = [100.0, 200.0, 400.0]
            .iter()
            .map(|&lam| {
                let d = g_direct(schw(), xi, lam, &cfg(), 0).unwrap().value;
                let e = g_expansion(&schw(), xi, lam, 0.1).unwrap().value;
                (d - e) * lam
            })
            .collect();
        assert!(scaled[2].abs() <= 1.1 * scaled[0].abs(), "{xi:?}: {scaled:?}");
    }
}

#[test]
fn sphere_energy_examples() {
    let m = schw();
    let lam = 1e3;
    let s = GraphSurface::sphere(m.clone(), shared_grid(16), [0.0; 3], lam).unwrap();
    let f = f_lambda(&s, Regime::OnCenter).unwrap();
    assert!((f - 128.0 * PI).abs() < 1.0, "{f}");

    // 8π[(10 − 6t²)/(t² − 1)² + 6 atanh(1/t)/t] at t = 3
    let t: f64 = 3.0;
    let expect = 8.0 * PI * ((10.0 - 6.0 * t * t) / (t * t - 1.0).powi(2) + 6.0 * (1.0 / t).atanh() / t);
    let s = GraphSurface::sphere(m, shared_grid(16), [3.0, 0.0, 0.0], lam).unwrap();
    let f = f_lambda(&s, Regime::Outlying).unwrap();
    assert!((f / expect - 1.0).abs() < 5e-3, "{f} vs {expect}");
}

#[test]
fn g2_curvature_term_sign() {
    let m = make_pulse_metric(PulseSpec::g2(0.02)).unwrap();
    let c = curvature_term(&m, [3.5, 0.0, 0.0], 1e3, Regime::Outlying).unwrap();
    assert!(c < 0.0, "{c}");
}

#[test]
fn schwarzschild_minimum_is_centered() {
    let cp = find_critical_point(schw(), 200.0, [0.3, 0.0, 0.0], CriticalKind::Minimum, &cfg()).unwrap();
    assert_eq!(cp.status, CriticalStatus::Converged);
    assert!(cp.eval.xi.iter().all(|c| c.abs() < 0.05), "{:?}", cp.eval.xi);
    assert!(cp.hessian_eigenvalues[0] > 0.0, "{:?}", cp.hessian_eigenvalues);
    let st = cp.state.unwrap();
    // κ_λ = 4λ⁻³ at leading order, so the Λ₁ residual must sit far below it
    assert!(st.residual_lambda1_inf < 1e-3 * st.kappa, "{}", st.residual_lambda1_inf);
}

#[test]
fn flat_space_is_degenerate() {
    let m = Arc::new(AmbientMetric::new(MetricFamily::Euclidean).unwrap());
    let cp = find_critical_point(m.clone(), 100.0, [0.2, 0.0, 0.0], CriticalKind::Minimum, &cfg()).unwrap();
    assert_eq!(cp.status, CriticalStatus::DegenerateFlat);
    assert!(build_foliation(m, &[100.0, 200.0], [0.0; 3], &cfg()).is_err());
}

#[test]
fn schwarzschild_scans_are_monotone() {
    // at |ξ| = 0.8 the graph decays slowly in l; L = 64 meets the residual bound
    let mut fine = cfg();
    fine.solver.l_max = 64;
    let on = monotonicity_scan(schw(), 400.0, &[0.2, 0.4, 0.6, 0.8], [1.0, 1.0, 0.0], &fine).unwrap();
    assert!(on.violations.is_empty(), "{on:?}");
    let out = monotonicity_scan(schw(), 400.0, &[1.5, 2.5, 3.5, 5.0], [0.0, 0.0, 1.0], &fine).unwrap();
    assert!(out.violations.is_empty(), "{out:?}");
}

#[test]
fn g1_scan_changes_sign() {
    let m = Arc::new(make_pulse_metric(PulseSpec::g1(100.0)).unwrap());
    let rep = monotonicity_scan(m, 1e3, &[0.25, 0.5], [1.0, 0.0, 0.0], &cfg()).unwrap();
    assert_eq!(rep.sign_changes, vec![(0.25, 0.5)], "{rep:?}");
    assert!(rep.samples[0].radial_derivative < 0.0);
}

#[test]
fn schwarzschild_cmc_area() {
    let c = cmc_reduced_area(&schw(), [4.0, 0.0, 0.0], 500.0).unwrap();
    assert!(c.scalar_curvature.abs() < 1e-20);
    assert!(c.laplacian_scalar_curvature.abs() < 1e-20);
    assert!((c.radial_derivative - 48.0 * PI / 35.0 * 4f64.powi(-6)).abs() < 1e-15);
    assert!((c.area - 4.0 * PI * 250_000.0 + 8.0 * PI / 35.0 * 4f64.powi(-6)).abs() < 1e-8);
    assert!(cmc_reduced_area(&schw(), [1.5, 0.0, 0.0], 500.0).is_err());
}

#[test]
fn g2_cmc_volume_term_matches_monte_carlo() {
    let m = make_pulse_metric(PulseSpec::g2(0.02)).unwrap();
    let (xi, lam) = ([3.5, 0.0, 0.0], 1e3);
    let c = cmc_reduced_area(&m, xi, lam).unwrap();
    let center = [lam * xi[0], 0.0, 0.0];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 200_000;
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..n {
        let p = loop {
            let p: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            if p.iter().map(|v| v * v).sum::<f64>() < 1.0 {
                break p;
            }
        };
        let x = [center[0] + lam * p[0], lam * p[1], lam * p[2]];
        let w = xi[0] * (center[0] - x[0]);
        let v = w * m.scalar_curvature(x).unwrap();
        sum += v;
        sq += v * v;
    }
    let vol = 4.0 / 3.0 * PI * lam.powi(3);
    let mean = sum / n as f64;
    let est = 0.5 * vol * mean;
    let err = 0.5 * vol * ((sq / n as f64 - mean * mean) / n as f64).sqrt();
    assert!((c.volume_term - est).abs() < 4.0 * err, "{} vs {est} ± {err}", c.volume_term);
    assert!(c.volume_term.abs() > 4.0 * err);
}

#[test]
fn schwarzschild_foliation_is_centered() {
    let f = build_foliation(schw(), &[100.0, 200.0, 400.0], [0.3, 0.0, 0.0], &cfg()).unwrap();
    assert!(f.violations.is_empty(), "{:?}", f.violations);
    assert!(f.kappa_decreasing);
    for leaf in &f.leaves {
        assert!(leaf.transversality_margin > 0.5, "{}", leaf.transversality_margin);
        assert!((leaf.hawking_mass - 2.0).abs() < 1e-6, "{}", leaf.hawking_mass);
        assert!(leaf.xi.iter().all(|c| c.abs() < 1e-6));
        assert_eq!(leaf.csv_row().len(), FoliationLeaf::CSV_HEADER.len());
    }
}

#[test]
fn far_outlying_tracks_direct_value() {
    let lam = 1e3;
    let diffs: Vec<f64> = [4.0, 8.0, 16.0]
        .iter()
        .map(|&t| {
            let xi = [t, 0.0, 0.0];
            let d = g_direct(schw(), xi, lam, &cfg(), 0).unwrap().value;
            (d - g_far_outlying(&schw(), xi, lam).unwrap().value).abs()
        })
        .collect();
    let e = decay_exponent(&[4.0, 8.0, 16.0], &diffs);
    assert!(e >= 6.0, "{diffs:?} exponent {e}");
}
