use std::fs;
use std::path::PathBuf;

use lsw_core::energy::EnergyConfig;
use lsw_core::metric::{MetricFamily, PulseSpec};
use lsw_core::scenarios::*;
use lsw_core::Error;

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("lsw-scenarios-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&d);
    d
}

#[test]
fn toml_and_json_configs_agree() {
    let toml = r#"
        scenario = "solve"
        lambdas = [100.0, 200.0]
        xi_seeds = [[0.3, 0.0, 0.0]]
        seed = 5

        [[metrics]]
        variant = "schwarzschild"
        mass = 2.0

        [energy.solver]
        l_max = 12
    "#;
    let json = r#"{
        "scenario": "solve",
        "lambdas": [100.0, 200.0],
        "xi_seeds": [[0.3, 0.0, 0.0]],
        "seed": 5,
        "metrics": [{"variant": "schwarzschild", "mass": 2.0}],
        "energy": {"solver": {"l_max": 12}}
    }"#;
    let a = ExperimentConfig::from_toml_str(toml).unwrap();
    let b = ExperimentConfig::from_json_str(json).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.scenario, Scenario::Solve);
    assert_eq!(a.energy.solver.l_max, 12);
    a.validate().unwrap();
}

#[test]
fn invalid_configs_map_to_exit_code_four() {
    let bad = [
        "scenario = \"solve\"\nlambdas = [-1.0]",
        "scenario = \"solve\"\nunknown_key = 1",
        "scenario = \"no-such-scenario\"",
        "scenario = \"solve\"\nxi_seeds = [[1.05, 0.0, 0.0]]",
        "scenario = \"energy\"\nu_coeffs = [0.0, 1.0, 2.0]",
        "scenario = \"counterexample-g2\"\namplitude = -3.0",
        "scenario = \"solve\"\n[[metrics]]\nvariant = \"schwarzschild\"\nmass = 0.0",
    ];
    for text in bad {
        let err = ExperimentConfig::from_toml_str(text)
            .and_then(|c| run(&c))
            .expect_err(text);
        assert!(matches!(err, Error::Config(_)), "{text}: {err:?}");
        assert_eq!(exit_code_for_error(&err), 4);
    }
}

#[test]
fn identical_configs_give_identical_csv() {
    let mut cfg = ExperimentConfig::new(Scenario::Reduce);
    cfg.lambdas = vec![100.0, 150.0];
    cfg.xi_seeds = vec![[0.3, 0.1, 0.0], [2.5, 0.0, 0.0]];
    cfg.seed = 3;
    let dirs = [scratch("repro-a"), scratch("repro-b")];
    for d in &dirs {
        cfg.output_dir = Some(d.clone());
        let r = run(&cfg).unwrap();
        assert_eq!(r.status, RunStatus::Passed, "{:?}", r.diagnostics);
        assert_eq!(r.exit_code(), 0);
    }
    let a = fs::read(dirs[0].join("reduce/reduce.csv")).unwrap();
    let b = fs::read(dirs[1].join("reduce/reduce.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dirs[0].join("reduce/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["scenario"], "reduce");
    assert_eq!(manifest["config"]["seed"], 3);
    assert!(manifest["timings"].as_array().unwrap().iter().any(|t| t["label"] == "total"));
    for d in dirs {
        fs::remove_dir_all(d).unwrap();
    }
}

#[test]
fn identity_suite_is_seed_reproducible() {
    let a = measure_identity_suite(9).unwrap();
    let b = measure_identity_suite(9).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn zero_profile_never_calibrates() {
    let zero = PulseSpec {
        amplitude: 0.0,
        ..PulseSpec::g2(1.0)
    };
    let settings = CalibrationSettings {
        b_max: 1e4,
        ..CalibrationSettings::default()
    };
    let err = calibrate_pulse_amplitude(PulseCounterexample::G2, 1e3, &zero, &settings, &EnergyConfig::default())
        .unwrap_err();
    assert!(matches!(err, Error::Calibration(_)), "{err:?}");
}

#[test]
fn numerical_failure_lands_in_the_report() {
    let mut cfg = ExperimentConfig::new(Scenario::Solve);
    cfg.lambdas = vec![100.0];
    cfg.xi_seeds = vec![[0.5, 0.0, 0.0]];
    cfg.energy.solver.max_iter = 1;
    let r = run(&cfg).unwrap();
    assert_eq!(r.status, RunStatus::NumericalFailure);
    assert_eq!(r.exit_code(), 3);
    assert!(!r.diagnostics.is_empty());
}

#[test]
fn failing_band_is_an_acceptance_failure() {
    // the g2 profile has no critical t in [5, 7]: the scan runs, the verdict fails
    let mut cfg = ExperimentConfig::new(Scenario::CounterexampleG4);
    cfg.metrics = vec![MetricFamily::Pulse(PulseSpec {
        amplitude: 1.0,
        ..PulseSpec::g2(1.0)
    })];
    let r = run(&cfg).unwrap();
    assert!(r.diagnostics.is_empty(), "{:?}", r.diagnostics);
    assert_eq!(r.status, RunStatus::AcceptanceFailure);
    assert_eq!(r.exit_code(), 2);
}

#[test]
fn cheap_scenarios_cover_their_criteria() {
    for s in [
        Scenario::SolverOrders,
        Scenario::SchwarzschildFoliation,
        Scenario::CounterexampleG4,
        Scenario::FarOutlying,
    ] {
        let r = run(&ExperimentConfig::new(s)).unwrap();
        assert_eq!(r.status, RunStatus::Passed, "{s}: {:#?}", r.summary_lines());
        for c in s.criteria() {
            assert!(r.verdicts.iter().any(|v| v.criterion == *c), "{s} lacks criterion {c}");
        }
        assert!(r.verdicts.iter().all(|v| s.criteria().contains(&v.criterion)));
    }
}

#[test]
fn table_scenarios_have_documented_headers() {
    let cfg = ExperimentConfig::new(Scenario::CmcArea);
    let r = run(&cfg).unwrap();
    let t = r.table("cmc_area").unwrap();
    assert_eq!(t.rows.len(), 6);
    assert!(t.to_csv().unwrap().starts_with("metric,lambda,xi1,xi2,xi3,area,"));

    let mut cfg = ExperimentConfig::new(Scenario::Energy);
    cfg.u_coeffs = vec![0.0; 9];
    cfg.u_coeffs[6] = 0.05;
    let r = run(&cfg).unwrap();
    let t = r.table("energy").unwrap();
    assert_eq!(t.header.len(), t.rows[0].len());
}

#[test]
fn growth_ratio_pairs_follow_the_step() {
    let row = |metric: &str, lambda: f64, scaled: f64| CrossRow {
        metric: metric.into(),
        xi: [0.2, 0.0, 0.0],
        lambda,
        direct: 0.0,
        expansion: 0.0,
        scaled,
    };
    let rows = vec![
        row("a", 100.0, 1.0),
        row("a", 200.0, 1.1),
        row("a", 400.0, 0.9),
        row("b", 100.0, 2.0),
        row("b", 200.0, 9.0),
        row("b", 1000.0, 2.2),
    ];
    let r = growth_ratios(&rows, |m| if m == "a" { 2.0 } else { 10.0 }, 1e-4);
    assert_eq!(r.len(), 2);
    assert!((r[0].2 - 1.1).abs() < 1e-12);
    assert!((r[1].2 - 1.1).abs() < 1e-12);
}
