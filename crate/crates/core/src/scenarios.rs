//! Configuration-driven experiment runner.
//!
//! A run is described by an [`ExperimentConfig`] (TOML or JSON) naming one
//! [`Scenario`]. Scenarios produce result tables and verdicts; each verdict
//! cites the numbered acceptance criterion it tests. Tables are written as
//! CSV and the whole report as a JSON manifest.
//!
//! The `measure_*` functions return the raw quantities behind the verdicts,
//! so that callers can apply their own bands.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::{
    build_foliation, cmc_reduced_area, find_critical_point, g_direct, g_expansion, g_far_outlying,
    monotonicity_scan, sphere_willmore_closed_form, CriticalKind, CriticalPoint, EnergyConfig, Foliation,
    FoliationLeaf, Method,
};
use crate::error::{Error, Result};
use crate::harmonics::{
    n_coeffs, norm3, orthogonality_check, real_harmonics_at, series_identities_check, willmore_factor,
    HarmonicField, IdentityCheck, LegendreSeries, SphereGrid,
};
use crate::metric::{make_bump_metric_g3, make_pulse_metric, AmbientMetric, MetricFamily, PulseSpec};
use crate::reduction::{decay_exponent, length_scale, residual_orders, solve, Regime, ResidualOrders};
use crate::surface::{
    area_variation_check, integrated_gauss_residual, pohozaev_residual, report, shared_grid,
    willmore_first_variation_check, willmore_operator, willmore_second_variation_check, GraphSurface,
    SurfaceReport,
};

/// Environment variable holding the worker count.
pub const THREADS_ENV: &str = "LSW_THREADS";

/// Named experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    VerifyIdentities,
    SolverOrders,
    CrossValidation,
    SchwarzschildFoliation,
    CounterexampleG1,
    CounterexampleG2,
    CounterexampleG3,
    CounterexampleG4,
    FarOutlying,
    CmcArea,
    /// Surface report for given `(ξ, λ, u)`.
    Energy,
    /// Reduced solve at each `(ξ, λ)`.
    Solve,
    /// `G_λ` evaluations at each `(ξ, λ)`.
    Reduce,
}

impl Scenario {
    pub const ALL: [Scenario; 13] = [
        Scenario::VerifyIdentities,
        Scenario::SolverOrders,
        Scenario::CrossValidation,
        Scenario::SchwarzschildFoliation,
        Scenario::CounterexampleG1,
        Scenario::CounterexampleG2,
        Scenario::CounterexampleG3,
        Scenario::CounterexampleG4,
        Scenario::FarOutlying,
        Scenario::CmcArea,
        Scenario::Energy,
        Scenario::Solve,
        Scenario::Reduce,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::VerifyIdentities => "verify-identities",
            Scenario::SolverOrders => "solver-orders",
            Scenario::CrossValidation => "cross-validation",
            Scenario::SchwarzschildFoliation => "schwarzschild-foliation",
            Scenario::CounterexampleG1 => "counterexample-g1",
            Scenario::CounterexampleG2 => "counterexample-g2",
            Scenario::CounterexampleG3 => "counterexample-g3",
            Scenario::CounterexampleG4 => "counterexample-g4",
            Scenario::FarOutlying => "far-outlying",
            Scenario::CmcArea => "cmc-area",
            Scenario::Energy => "energy",
            Scenario::Solve => "solve",
            Scenario::Reduce => "reduce",
        }
    }

    /// Acceptance criteria whose verdicts the scenario produces.
    pub fn criteria(self) -> &'static [u8] {
        match self {
            Scenario::VerifyIdentities => &[1, 2, 3, 4, 12],
            Scenario::SolverOrders => &[5],
            Scenario::CrossValidation => &[6],
            Scenario::SchwarzschildFoliation => &[7],
            Scenario::CounterexampleG2 => &[8],
            Scenario::CounterexampleG1 => &[9],
            Scenario::CounterexampleG3 => &[10],
            Scenario::CounterexampleG4 | Scenario::FarOutlying => &[11],
            Scenario::CmcArea | Scenario::Energy | Scenario::Solve | Scenario::Reduce => &[],
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .iter()
            .copied()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario '{s}'")))
    }
}

/// One experiment. Empty lists and absent options select the scenario's
/// defaults.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub metrics: Vec<MetricFamily>,
    pub lambdas: Vec<f64>,
    pub xi_seeds: Vec<[f64; 3]>,
    /// Pulse amplitude `B` for the pulse counterexamples; calibrated when absent.
    pub amplitude: Option<f64>,
    /// Coefficients of `u` for the `energy` scenario, in harmonic order.
    pub u_coeffs: Vec<f64>,
    pub energy: EnergyConfig,
    pub output_dir: Option<PathBuf>,
    /// Seed of every random draw.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::VerifyIdentities,
            metrics: vec![],
            lambdas: vec![],
            xi_seeds: vec![],
            amplitude: None,
            u_coeffs: vec![],
            energy: EnergyConfig::default(),
            output_dir: None,
            seed: 0,
        }
    }
}

/// Largest `λ` and `|ξ|` a config may request.
pub const LAMBDA_MAX: f64 = 1e8;
pub const XI_MAX: f64 = 1e7;

impl ExperimentConfig {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            ..Self::default()
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    /// Read a `.toml` or `.json` file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            Some("toml") => Self::from_toml_str(&text),
            _ => Err(Error::Config(format!(
                "{}: expected a .toml or .json extension",
                path.display()
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.energy.validate().map_err(|e| Error::Config(e.to_string()))?;
        for &l in &self.lambdas {
            if !(l.is_finite() && l > 0.0 && l <= LAMBDA_MAX) {
                return Err(Error::Config(format!("lambda = {l} outside (0, {LAMBDA_MAX}]")));
            }
        }
        let delta = self.energy.solver.delta;
        for xi in &self.xi_seeds {
            if !xi.iter().all(|c| c.is_finite()) || norm3(*xi) > XI_MAX {
                return Err(Error::Config(format!("xi seed {xi:?} is not finite or exceeds {XI_MAX}")));
            }
            if self.scenario != Scenario::Energy && (1.0 - norm3(*xi)).abs() < delta {
                return Err(Error::Config(format!(
                    "xi seed {xi:?} lies in the excluded annulus ||xi| - 1| < {delta}"
                )));
            }
        }
        if let Some(b) = self.amplitude {
            if !(b.is_finite() && b >= 0.0) {
                return Err(Error::Config(format!("amplitude must be finite and >= 0, got {b}")));
            }
        }
        if !self.u_coeffs.is_empty() && !(2..=64).any(|l| n_coeffs(l) == self.u_coeffs.len()) {
            return Err(Error::Config(format!(
                "u_coeffs has {} entries, not (l+1)^2 for any band limit 2..=64",
                self.u_coeffs.len()
            )));
        }
        let mut scales = vec![1.0];
        for m in &self.metrics {
            let am = AmbientMetric::new(m.clone()).map_err(|e| Error::Config(format!("metric {m:?}: {e}")))?;
            scales.push(length_scale(&am));
        }
        let solves = !matches!(
            self.scenario,
            Scenario::VerifyIdentities | Scenario::Energy | Scenario::CmcArea | Scenario::CounterexampleG4
        );
        if solves {
            let floor = self.energy.solver.lambda_floor * scales.iter().copied().fold(0.0, f64::max);
            if let Some(l) = self.lambdas.iter().find(|l| **l < floor) {
                return Err(Error::Config(format!("lambda = {l} is below the solver floor {floor}")));
            }
        }
        Ok(())
    }

    fn lambdas_or(&self, d: &[f64]) -> Vec<f64> {
        if self.lambdas.is_empty() {
            d.to_vec()
        } else {
            self.lambdas.clone()
        }
    }

    fn seeds_or(&self, d: &[[f64; 3]]) -> Vec<[f64; 3]> {
        if self.xi_seeds.is_empty() {
            d.to_vec()
        } else {
            self.xi_seeds.clone()
        }
    }

    fn metrics_or(&self, d: Vec<MetricFamily>) -> Result<Vec<(String, Arc<AmbientMetric>)>> {
        let fams = if self.metrics.is_empty() { d } else { self.metrics.clone() };
        fams.into_iter()
            .map(|f| {
                let label = metric_label(&f);
                let m = match &f {
                    MetricFamily::Pulse(spec) => make_pulse_metric(spec.clone())?,
                    other => AmbientMetric::new(other.clone())?,
                };
                Ok((label, Arc::new(m)))
            })
            .collect()
    }
}

fn schwarzschild_family() -> MetricFamily {
    MetricFamily::Schwarzschild { mass: 2.0 }
}

fn metric_label(f: &MetricFamily) -> String {
    match f {
        MetricFamily::Euclidean => "euclidean".into(),
        MetricFamily::Schwarzschild { mass } => format!("schwarzschild(m={mass})"),
        MetricFamily::Pulse(p) => {
            let (a, b) = p.shape.support();
            format!("pulse(B={},[{a},{b}],p={})", p.amplitude, p.decay_exponent)
        }
        MetricFamily::BumpG3 { eps, delta } => format!("g3(eps={eps},delta={delta})"),
        MetricFamily::GeneralConformal { mass, coeffs } => format!("conformal(m={mass},c={coeffs:?})"),
    }
}

/// Acceptance band of a verdict.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Band {
    AtMost(f64),
    AtLeast(f64),
    /// Open interval.
    Between(f64, f64),
}

impl Band {
    pub fn contains(self, v: f64) -> bool {
        match self {
            Band::AtMost(b) => v <= b,
            Band::AtLeast(b) => v >= b,
            Band::Between(a, b) => v > a && v < b,
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Band::AtMost(b) => write!(f, "<= {b:e}"),
            Band::AtLeast(b) => write!(f, ">= {b:e}"),
            Band::Between(a, b) => write!(f, "in ({a}, {b})"),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Verdict {
    pub criterion: u8,
    pub check: String,
    pub measured: f64,
    pub band: Band,
    pub pass: bool,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: vec![],
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(vec![]);
        let io = |e: csv::Error| Error::numerical(format!("csv: {e}"), 0.0);
        w.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::numerical(format!("csv: {e}"), 0.0))?;
        String::from_utf8(bytes).map_err(|e| Error::numerical(format!("csv: {e}"), 0.0))
    }
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Passed,
    AcceptanceFailure,
    NumericalFailure,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Timing {
    pub label: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Environment {
    pub crate_version: String,
    pub os: String,
    pub arch: String,
    pub threads: usize,
}

impl Environment {
    fn current(threads: usize) -> Self {
        Self {
            crate_version: env!("CARGO_PKG_VERSION").into(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            threads,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: Scenario,
    pub status: RunStatus,
    pub verdicts: Vec<Verdict>,
    pub tables: Vec<Table>,
    /// Failure messages from numerical stages.
    pub diagnostics: Vec<String>,
    pub timings: Vec<Timing>,
    pub environment: Environment,
    pub config: ExperimentConfig,
}

impl RunReport {
    /// `0` all verdicts pass, `2` a verdict fails, `3` a numerical stage failed.
    pub fn exit_code(&self) -> i32 {
        match self.status {
            RunStatus::Passed => 0,
            RunStatus::AcceptanceFailure => 2,
            RunStatus::NumericalFailure => 3,
        }
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Write `<table>.csv` for every table and `manifest.json`.
    pub fn write_artifacts(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut out = vec![];
        for t in &self.tables {
            let p = dir.join(format!("{}.csv", t.name));
            fs::write(&p, t.to_csv()?)?;
            out.push(p);
        }
        let p = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::numerical(format!("json: {e}"), 0.0))?;
        fs::write(&p, json)?;
        out.push(p);
        Ok(out)
    }

    /// One line per verdict.
    pub fn summary_lines(&self) -> Vec<String> {
        self.verdicts
            .iter()
            .map(|v| {
                format!(
                    "criterion {:>2} {} {}: {:e} (band {})",
                    v.criterion,
                    if v.pass { "PASS" } else { "FAIL" },
                    v.check,
                    v.measured,
                    v.band
                )
            })
            .collect()
    }
}

/// Process exit code for an error that prevented a report.
pub fn exit_code_for_error(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) => 4,
        _ => 3,
    }
}

/// Worker count from [`THREADS_ENV`], else the available parallelism.
pub fn thread_count() -> usize {
    threads_from(std::env::var(THREADS_ENV).ok().as_deref())
}

fn threads_from(v: Option<&str>) -> usize {
    v.and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Order-preserving map over a pool of `threads` workers.
pub fn par_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..threads.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every job ran"))
        .collect()
}

struct Ctx {
    tables: Vec<Table>,
    verdicts: Vec<Verdict>,
    timings: Vec<Timing>,
    threads: usize,
}

impl Ctx {
    fn verdict(&mut self, criterion: u8, check: impl Into<String>, measured: f64, band: Band) {
        self.verdicts.push(Verdict {
            criterion,
            check: check.into(),
            measured,
            pass: band.contains(measured),
            band,
        });
    }

    fn timed<T>(&mut self, label: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let r = f(self);
        self.timings.push(Timing {
            label: label.into(),
            seconds: t.elapsed().as_secs_f64(),
        });
        r
    }
}

/// Execute the configured scenario. Configuration problems are returned as
/// errors; numerical failures end up in the report's diagnostics.
pub fn run(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let threads = thread_count();
    let mut ctx = Ctx {
        tables: vec![],
        verdicts: vec![],
        timings: vec![],
        threads,
    };
    let t0 = Instant::now();
    let outcome = match config.scenario {
        Scenario::VerifyIdentities => run_identities(config, &mut ctx),
        Scenario::SolverOrders => run_solver_orders(config, &mut ctx),
        Scenario::CrossValidation => run_cross_validation(config, &mut ctx),
        Scenario::SchwarzschildFoliation => run_schwarzschild_foliation(config, &mut ctx),
        Scenario::CounterexampleG1 => run_pulse_counterexample(PulseCounterexample::G1, config, &mut ctx),
        Scenario::CounterexampleG2 => run_pulse_counterexample(PulseCounterexample::G2, config, &mut ctx),
        Scenario::CounterexampleG3 => run_g3(config, &mut ctx),
        Scenario::CounterexampleG4 => run_g4(config, &mut ctx),
        Scenario::FarOutlying => run_far_outlying(config, &mut ctx),
        Scenario::CmcArea => run_cmc_area(config, &mut ctx),
        Scenario::Energy => run_energy(config, &mut ctx),
        Scenario::Solve => run_solve(config, &mut ctx),
        Scenario::Reduce => run_reduce(config, &mut ctx),
    };
    let mut diagnostics = vec![];
    match outcome {
        Ok(()) => {}
        Err(e @ Error::Config(_)) => return Err(e),
        Err(e) => diagnostics.push(e.to_string()),
    }
    ctx.timings.push(Timing {
        label: "total".into(),
        seconds: t0.elapsed().as_secs_f64(),
    });
    let status = if !diagnostics.is_empty() {
        RunStatus::NumericalFailure
    } else if ctx.verdicts.iter().all(|v| v.pass) {
        RunStatus::Passed
    } else {
        RunStatus::AcceptanceFailure
    };
    let report = RunReport {
        scenario: config.scenario,
        status,
        verdicts: ctx.verdicts,
        tables: ctx.tables,
        diagnostics,
        timings: ctx.timings,
        environment: Environment::current(threads),
        config: config.clone(),
    };
    if let Some(dir) = &config.output_dir {
        report.write_artifacts(&dir.join(config.scenario.name()))?;
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Identity suite

/// Worst errors of the spectral tables.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectralTables {
    pub orthogonality: Vec<IdentityCheck>,
    /// Largest deviation of the harmonic coefficients of `(Δ² + 2Δ)Y` from
    /// `(l−1)l(l+1)(l+2)` on `Y` and zero elsewhere, over every real harmonic
    /// up to the band limit, relative to the largest factor of the band.
    /// `Δ` is the trace of the grid's covariant Hessian.
    pub bilaplacian_error: f64,
}

pub fn measure_spectral_tables(l_max: usize) -> Result<SpectralTables> {
    let grid = SphereGrid::new(l_max);
    let orthogonality = orthogonality_check(&grid, 1e-12);
    let n = grid.n_nodes();
    let basis: Vec<Vec<f64>> = (0..n).map(|k| real_harmonics_at(l_max, grid.point(k))).collect();
    let lap = |samples: &[f64]| -> Result<Vec<f64>> {
        let f = grid.analyze(samples, l_max)?;
        let [htt, _, hpp] = grid.hessian(&f);
        Ok(htt.iter().zip(&hpp).map(|(a, b)| a + b).collect())
    };
    let norm = willmore_factor(l_max);
    let mut worst: f64 = 0.0;
    for l in 0..=l_max {
        let factor = willmore_factor(l);
        for m in -(l as i64)..=(l as i64) {
            let i = crate::harmonics::idx(l, m);
            let y: Vec<f64> = basis.iter().map(|b| b[i]).collect();
            let d1 = lap(&y)?;
            let d2 = lap(&d1)?;
            let w: Vec<f64> = d2.iter().zip(&d1).map(|(a, b)| a + 2.0 * b).collect();
            let c = grid.analyze(&w, l_max)?;
            for (j, v) in c.coeffs.iter().enumerate() {
                let expect = if j == i { factor } else { 0.0 };
                worst = worst.max((v - expect).abs() / norm);
            }
        }
    }
    Ok(SpectralTables {
        orthogonality,
        bilaplacian_error: worst,
    })
}

/// Worst relative error of the truncated series for `|y + ξ|^{−2k−1}`,
/// `k ≤ 3`, over grid directions, for each `|ξ|`.
pub fn measure_inverse_powers(radii: &[f64]) -> Result<Vec<(f64, f64)>> {
    let grid = SphereGrid::new(12);
    let dir = {
        let d = [0.3, -0.5, 0.8];
        let n = norm3(d);
        [d[0] / n, d[1] / n, d[2] / n]
    };
    radii
        .iter()
        .map(|&t| {
            let ratio = if t < 1.0 { t } else { 1.0 / t };
            // terms fall like l^{2k} ratio^l; stop well below 1e-14
            let trunc = ((-36.0) / ratio.ln()).ceil() as usize + 40;
            let mut worst: f64 = 0.0;
            for k in 0..=3 {
                let s = LegendreSeries::new(k, [t * dir[0], t * dir[1], t * dir[2]], trunc)?;
                for j in 0..grid.n_nodes() {
                    let y = grid.point(j);
                    let e = s.exact(y);
                    worst = worst.max((s.eval(y) - e).abs() / e);
                }
            }
            Ok((t, worst))
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SchwarzschildExactness {
    /// `max |m_H − 2|` over centred spheres.
    pub hawking_mass_error: f64,
    pub scalar_curvature_max: f64,
    /// `max |W|` on round spheres of the flat metric.
    pub flat_willmore_max: f64,
}

pub fn measure_schwarzschild_exactness(lambdas: &[f64]) -> Result<SchwarzschildExactness> {
    let schw = Arc::new(AmbientMetric::new(schwarzschild_family())?);
    let flat = Arc::new(AmbientMetric::new(MetricFamily::Euclidean)?);
    let mut mass: f64 = 0.0;
    for &lam in lambdas {
        let s = GraphSurface::sphere(schw.clone(), shared_grid(12), [0.0; 3], lam)?;
        mass = mass.max((report(&s)?.hawking_mass - 2.0).abs());
    }
    let grid = SphereGrid::new(6);
    let mut r_max: f64 = 0.0;
    for r in [2.0, 5.0, 10.0, 100.0, 1e3, 1e5] {
        for k in 0..grid.n_nodes() {
            let y = grid.point(k);
            r_max = r_max.max(schw.scalar_curvature([r * y[0], r * y[1], r * y[2]])?.abs());
        }
    }
    let mut w_max: f64 = 0.0;
    for (xi, lam) in [([0.0; 3], 1.0), ([0.3, 0.0, 0.1], 3.0), ([2.0, 1.0, 0.0], 50.0)] {
        let s = GraphSurface::sphere(flat.clone(), shared_grid(16), xi, lam)?;
        let w = willmore_operator(&s)?;
        w_max = w.iter().fold(w_max, |a, b| a.max(b.abs()));
    }
    Ok(SchwarzschildExactness {
        hawking_mass_error: mass,
        scalar_curvature_max: r_max,
        flat_willmore_max: w_max,
    })
}

/// `|∫H² dμ − closed form|` for coordinate spheres in Schwarzschild, and
/// its fitted decay exponent in `λ`, for each `ξ`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WillmoreExpansionFit {
    pub xi: [f64; 3],
    pub lambdas: Vec<f64>,
    pub differences: Vec<f64>,
    pub exponent: f64,
}

pub fn measure_willmore_expansion(xis: &[[f64; 3]], lambdas: &[f64]) -> Result<Vec<WillmoreExpansionFit>> {
    let m = Arc::new(AmbientMetric::new(schwarzschild_family())?);
    xis.iter()
        .map(|&xi| {
            let mut diffs = vec![];
            for &lam in lambdas {
                let s = GraphSurface::sphere(m.clone(), shared_grid(64), xi, lam)?;
                let w = 16.0 * PI + crate::surface::geometry(&s)?.willmore_excess();
                diffs.push((w - sphere_willmore_closed_form(&m, xi, lam, 0.1)?).abs());
            }
            Ok(WillmoreExpansionFit {
                xi,
                lambdas: lambdas.to_vec(),
                exponent: decay_exponent(lambdas, &diffs),
                differences: diffs,
            })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IdentitySuite {
    /// `(metric, |lhs − rhs| / |lhs|)` of the Pohozaev identity.
    pub pohozaev: Vec<(String, f64)>,
    /// Largest integrated Gauss residual over the test surfaces.
    pub gauss_max: f64,
    /// `(name, fitted order)` of the variation checks.
    pub variation_orders: Vec<(String, f64)>,
}

fn random_field(rng: &mut ChaCha8Rng, lo: usize, hi: usize, amp: f64) -> HarmonicField {
    let mut f = HarmonicField::zeros(hi);
    for l in lo..=hi {
        for m in -(l as i64)..=(l as i64) {
            f.set(l, m, amp * rng.gen_range(-1.0..1.0) / (1 + l * l) as f64);
        }
    }
    f
}

pub fn measure_identity_suite(seed: u64) -> Result<IdentitySuite> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat = Arc::new(AmbientMetric::new(MetricFamily::Euclidean)?);
    let schw = Arc::new(AmbientMetric::new(schwarzschild_family())?);
    let g1 = Arc::new(make_pulse_metric(PulseSpec::g1(1.0))?);
    let g2 = Arc::new(make_pulse_metric(PulseSpec::g2(1.0))?);

    let mut pohozaev = vec![];
    for (name, m, xi, lam) in [
        ("g2 outlying", &g2, [3.5, 0.0, 0.0], 1e3),
        ("g2 on-center", &g2, [0.3, 0.2, 0.0], 1e3),
        ("g1 outlying", &g1, [0.0, 2.0, 0.5], 1e3),
        ("g1 on-center", &g1, [0.3, 0.0, 0.0], 1e3),
    ] {
        let (lhs, rhs) = pohozaev_residual(m, xi, lam)?;
        pohozaev.push((name.to_string(), (lhs - rhs).abs() / lhs.abs()));
    }

    let mut gauss: f64 = 0.0;
    let cases: Vec<(&Arc<AmbientMetric>, [f64; 3], f64, HarmonicField)> = vec![
        (&flat, [0.0; 3], 3.0, HarmonicField::zeros(0)),
        (&schw, [0.0; 3], 10.0, HarmonicField::zeros(0)),
        (&schw, [0.3, 0.1, 0.0], 50.0, random_field(&mut rng, 2, 6, 0.2)),
        (&schw, [3.0, 0.0, 0.0], 40.0, random_field(&mut rng, 2, 6, 0.2)),
        (&g2, [3.5, 0.0, 0.0], 1e3, random_field(&mut rng, 2, 6, 0.2)),
        (&g1, [0.3, 0.0, 0.0], 1e3, random_field(&mut rng, 2, 6, 0.2)),
    ];
    for (m, xi, lam, u) in cases {
        let s = GraphSurface::new(m.clone(), shared_grid(24), xi, lam, u)?;
        gauss = gauss.max(integrated_gauss_residual(&s)?.abs());
    }

    let mut orders = vec![];
    let u = random_field(&mut rng, 0, 4, 0.5);
    let w = random_field(&mut rng, 0, 4, 1.0);
    let s = GraphSurface::new(schw.clone(), shared_grid(16), [0.3, 0.0, 0.0], 20.0, u)?;
    orders.push((
        "area first variation".to_string(),
        area_variation_check(&s, &w, &[1e-2, 5e-3, 2.5e-3])?.order,
    ));
    let u = random_field(&mut rng, 0, 5, 0.3);
    let w = random_field(&mut rng, 0, 5, 1.0);
    let s = GraphSurface::new(schw.clone(), shared_grid(16), [0.2, 0.1, 0.0], 30.0, u)?;
    orders.push((
        "Willmore first variation".to_string(),
        willmore_first_variation_check(&s, &w, &[4e-2, 2e-2, 1e-2])?.order,
    ));
    let s = GraphSurface::sphere(flat, shared_grid(16), [0.0; 3], 2.0)?;
    let w = random_field(&mut rng, 0, 5, 1.0);
    orders.push((
        "Willmore second variation".to_string(),
        willmore_second_variation_check(&s, &w, &[2e-2, 1e-2, 5e-3])?.order,
    ));
    Ok(IdentitySuite {
        pohozaev,
        gauss_max: gauss,
        variation_orders: orders,
    })
}

fn run_identities(cfg: &ExperimentConfig, ctx: &mut Ctx) -> Result<()> {
    let spec = ctx.timed("spectral tables", |_| measure_spectral_tables(16))?;
    let mut t = Table::new("identities", &["criterion", "check", "error", "tolerance", "pass"]);
    let worst_orth = spec.orthogonality.iter().fold(0.0f64, |a, c| a.max(c.error));
    for c in &spec.orthogonality {
        t.push(vec!["1".into(), c.name.clone(), num(c.error), num(c.tolerance), c.pass.to_string()]);
    }
    ctx.verdict(1, "orthogonality integrals", worst_orth, Band::AtMost(1e-12));
    ctx.verdict(1, "bilaplacian band factors", spec.bilaplacian_error, Band::AtMost(1e-12));

    let inv = ctx.timed("inverse powers", |_| measure_inverse_powers(&[0.4, 0.7, 2.5, 5.0]))?;
    for (r, e) in &inv {
        t.push(vec!["2".into(), format!("inverse powers |xi| = {r}"), num(*e), num(1e-10), (*e <= 1e-10).to_string()]);
    }
    let worst_inv = inv.iter().fold(0.0f64, |a, (_, e)| a.max(*e));
    ctx.verdict(2, "Legendre series of inverse powers", worst_inv, Band::AtMost(1e-10));

    let ex = ctx.timed("Schwarzschild exactness", |_| measure_schwarzschild_exactness(&[10.0, 100.0, 1000.0]))?;
    ctx.verdict(3, "Hawking mass of centred spheres", ex.hawking_mass_error, Band::AtMost(1e-9));
    ctx.verdict(3, "scalar curvature", ex.scalar_curvature_max, Band::AtMost(1e-10));
    ctx.verdict(3, "W of flat round spheres", ex.flat_willmore_max, Band::AtMost(1e-9));

    let series = series_identities_check();
    for c in &series {
        t.push(vec!["4".into(), c.name.clone(), num(c.error), num(c.tolerance), c.pass.to_string()]);
    }
    let worst_series = series.iter().fold(0.0f64, |a, c| a.max(c.error / c.tolerance));
    ctx.verdict(4, "series resummations (error / tolerance)", worst_series, Band::AtMost(1.0));
    let lambdas = cfg.lambdas_or(&[100.0, 200.0, 400.0, 800.0]);
    let xis = cfg.seeds_or(&[[0.0; 3], [0.3, 0.4, 0.0], [0.0, 1.8, 2.4]]);
    let fits = ctx.timed("Willmore expansion", |_| measure_willmore_expansion(&xis, &lambdas))?;
    let mut tw = Table::new("willmore_expansion", &["xi1", "xi2", "xi3", "lambda", "difference"]);
    for f in &fits {
        for (l, d) in f.lambdas.iter().zip(&f.differences) {
            tw.push(vec![num(f.xi[0]), num(f.xi[1]), num(f.xi[2]), num(*l), num(*d)]);
        }
        ctx.verdict(
            4,
            format!("Willmore expansion exponent at |xi| = {}", norm3(f.xi)),
            f.exponent,
            Band::AtLeast(2.5),
        );
    }

    let suite = ctx.timed("identity suite", |_| measure_identity_suite(cfg.seed))?;
    for (name, rel) in &suite.pohozaev {
        t.push(vec!["12".into(), format!("Pohozaev {name}"), num(*rel), num(1e-4), (*rel < 1e-4).to_string()]);
        ctx.verdict(12, format!("Pohozaev relative residual, {name}"), *rel, Band::AtMost(1e-4));
    }
    ctx.verdict(12, "integrated Gauss residual", suite.gauss_max, Band::AtMost(1e-7));
    for (name, order) in &suite.variation_orders {
        ctx.verdict(12, format!("{name} order"), *order, Band::AtLeast(1.9));
    }
    ctx.tables.push(t);
    ctx.tables.push(tw);
    Ok(())
}

// ---------------------------------------------------------------------------
// Solver orders and cross-validation

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverOrders {
    /// `(λ, κλ³)` of the centred leaf.
    pub kappa_scaled: Vec<(f64, f64)>,
    pub orders: ResidualOrders,
}

pub fn measure_solver_orders(
    metric: Arc<AmbientMetric>,
    xi: [f64; 3],
    lambdas: &[f64],
    cfg: &EnergyConfig,
) -> Result<SolverOrders> {
    let mut kappa_scaled = vec![];
    for &lam in lambdas {
        let st = solve(metric.clone(), [0.0; 3], lam, &cfg.solver)?;
        kappa_scaled.push((lam, st.kappa * lam.powi(3) / metric.scale.powi(2)));
    }
    let orders = residual_orders(metric, xi, lambdas, &cfg.solver)?;
    Ok(SolverOrders { kappa_scaled, orders })
}

fn run_solver_orders(cfg: &ExperimentConfig, ctx: &mut Ctx) -> Result<()> {
    let (_, m) = cfg.metrics_or(vec![schwarzschild_family()])?.remove(0);
    let lambdas = cfg.lambdas_or(&[50.0, 100.0, 200.0, 400.0, 800.0]);
    let xi = cfg.seeds_or(&[[0.5, 0.0, 0.0]])[0];
    let r = ctx.timed("solver orders", |_| measure_solver_orders(m, xi, &lambdas, &cfg.energy))?;
    let mut t = Table::new(
        "solver_orders",
        &["lambda", "kappa_lambda3", "kappa", "lambda1_residual", "seed_deviation"],
    );
    for (i, (l, k)) in r.kappa_scaled.iter().enumerate() {
        t.push(vec![
            num(*l),
            num(*k),
            num(r.orders.kappas[i]),
            num(r.orders.lambda1_norms[i]),
            num(r.orders.seed_deviations[i]),
        ]);
    }
    ctx.tables.push(t);
    let last = r.kappa_scaled.last().map(|p| p.1).unwrap_or(f64::NAN);
    ctx.verdict(5, "kappa lambda^3 at the largest lambda", last, Band::Between(3.6, 4.4));
    ctx.verdict(
        5,
        "Lambda_1 residual decay exponent",
        r.orders.lambda1_exponent.unwrap_or(f64::INFINITY),
        Band::AtLeast(4.5),
    );
    ctx.verdict(
        5,
        "seed deviation decay exponent",
        r.orders.seed_exponent.unwrap_or(f64::INFINITY),
        Band::AtLeast(0.8),
    );
    Ok(())
}

/// One `G_direct` against `G_expansion` comparison.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CrossRow {
    pub metric: String,
    pub xi: [f64; 3],
    pub lambda: f64,
    pub direct: f64,
    pub expansion: f64,
    /// `(G_direct − G_expansion) λ`.
    pub scaled: f64,
}

pub fn measure_cross_validation(
    metrics: &[(String, Arc<AmbientMetric>)],
    xis: &[[f64; 3]],
    lambdas: &[f64],
    cfg: &EnergyConfig,
    threads: usize,
) -> Result<Vec<CrossRow>> {
    let mut jobs = vec![];
    for (i, _) in metrics.iter().enumerate() {
        for &xi in xis {
            for &lam in lambdas {
                jobs.push((i, xi, lam));
            }
        }
    }
    par_map(&jobs, threads, |&(i, xi, lam)| -> Result<CrossRow> {
        let (label, m) = &metrics[i];
        let direct = g_direct(m.clone(), xi, lam, cfg, 0)?.value;
        let expansion = g_expansion(m, xi, lam, cfg.solver.delta)?.value;
        Ok(CrossRow {
            metric: label.clone(),
            xi,
            lambda: lam,
            direct,
            expansion,
            scaled: (direct - expansion) * lam,
        })
    })
    .into_iter()
    .collect()
}

/// Factor relating radii at which the metric looks the same: `λ` and
/// `base·λ` for a pulse metric, any doubling otherwise.
pub fn scaling_step(m: &AmbientMetric) -> f64 {
    match &m.family {
        MetricFamily::Pulse(p) => p.base,
        _ => 2.0,
    }
}

/// Largest ratio `|d(step·λ)| / |d(λ)|` of the scaled difference for each
/// `(metric, ξ)`, over the pairs present in `rows`; values below `floor`
/// are clamped to it.
pub fn growth_ratios(rows: &[CrossRow], step: impl Fn(&str) -> f64, floor: f64) -> Vec<(String, [f64; 3], f64)> {
    let mut out: Vec<(String, [f64; 3], f64)> = vec![];
    for a in rows {
        let target = step(&a.metric) * a.lambda;
        let Some(b) = rows
            .iter()
            .find(|b| b.metric == a.metric && b.xi == a.xi && (b.lambda / target - 1.0).abs() < 1e-9)
        else {
            continue;
        };
        let r = b.scaled.abs().max(floor) / a.scaled.abs().max(floor);
        match out.iter_mut().find(|o| o.0 == a.metric && o.1 == a.xi) {
            Some(o) => o.2 = o.2.max(r),
            None => out.push((a.metric.clone(), a.xi, r)),
        }
    }
    out
}

fn run_cross_validation(cfg: &ExperimentConfig, ctx: &mut Ctx) -> Result<()> {
    let metrics = cfg.metrics_or(vec![schwarzschild_family(), MetricFamily::Pulse(PulseSpec::g2(0.02))])?;
    let lambdas = cfg.lambdas_or(&[250.0, 500.0, 1000.0]);
    let xis = cfg.seeds_or(&[
        [0.2, 0.0, 0.0],
        [0.0, 0.3, 0.2],
        [0.25, 0.25, 0.25],
        [2.5, 0.0, 0.0],
        [0.0, 3.3, 0.0],
        [2.0, 2.0, 1.0],
    ]);
    let threads = ctx.threads;
    let mut rows = vec![];
    for m in &metrics {
        // a pulse metric repeats itself only after a full ladder step
        let step = scaling_step(&m.1);
        let mut ls = lambdas.clone();
        if step != 2.0 {
            ls.extend(lambdas.iter().map(|l| l * step));
        }
        let one = std::slice::from_ref(m);
        rows.extend(ctx.timed(&format!("cross-validation {}", m.0), |_| {
            measure_cross_validation(one, &xis, &ls, &cfg.energy, threads)
        })?);
    }
    let steps: Vec<(String, f64)> = metrics.iter().map(|(l, m)| (l.clone(), scaling_step(m))).collect();
    let step_of = |label: &str| steps.iter().find(|s| s.0 == label).map(|s| s.1).unwrap_or(2.0);
    let mut t = Table::new(
        "cross_validation",
        &["metric", "xi1", "xi2", "xi3", "lambda", "direct", "expansion", "scaled_difference"],
    );
    for r in &rows {
        t.push(vec![
            r.metric.clone(),
            num(r.xi[0]),
            num(r.xi[1]),
            num(r.xi[2]),
            num(r.lambda),
            num(r.direct),
            num(r.expansion),
            num(r.scaled),
        ]);
    }
    ctx.tables.push(t);
    for (m, xi, r) in growth_ratios(&rows, step_of, CROSS_FLOOR) {
        let check = format!(
            "growth of (G_direct - G_expansion) lambda under lambda -> {}lambda, {m}, xi = {xi:?}",
            step_of(&m)
        );
        ctx.verdict(6, check, r, Band::AtMost(1.25));
    }
    Ok(())
}

/// Scaled differences below this are treated as round-off.
pub const CROSS_FLOOR: f64 = 1e-4;

// ---------------------------------------------------------------------------
// Foliations

fn foliation_table(name: &str, f: &Foliation) -> Table {
    let mut t = Table::new(name, &FoliationLeaf::CSV_HEADER);
    for leaf in &f.leaves {
        t.push(leaf.csv_row());
    }
    t
}

/// Floor below which `|ξ(λ)|` counts as zero.
pub const CENTER_FLOOR: f64 = 1e-6;

/// Foliation checks shared by the runner and the tests: the largest `|ξ|`,
/// whether `|ξ|` never grows above the floor, the smallest margin, and the
/// spread `max/min` of the Hessian's smallest eigenvalue.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoliationSummary {
    pub max_xi: f64,
    pub xi_nonincreasing: bool,
    pub min_margin: f64,
    pub min_hessian: f64,
    pub hessian_spread: f64,
    pub kappa_decreasing: bool,
    pub max_mass_error: f64,
}

pub fn summarize_foliation(f: &Foliation, mass: f64) -> FoliationSummary {
    let xs: Vec<f64> = f.leaves.iter().map(|l| norm3(l.xi)).collect();
    let eig: Vec<f64> = f.leaves.iter().map(|l| l.hessian_min_eig).collect();
    let min_h = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let max_h = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    FoliationSummary {
        max_xi: xs.iter().copied().fold(0.0, f64::max),
        xi_nonincreasing: xs.windows(2).all(|w| w[1] <= w[0].max(CENTER_FLOOR)),
        min_margin: f.leaves.iter().map(|l| l.transversality_margin).fold(f64::INFINITY, f64::min),
        min_hessian: min_h,
        hessian_spread: max_h / min_h,
        kappa_decreasing: f.kappa_decreasing,
        max_mass_error: f.leaves.iter().map(|l| (l.hawking_mass - mass).abs()).fold(0.0, f64::max),
    }
}

fn run_schwarzschild_foliation(cfg: &ExperimentConfig, ctx: &mut Ctx) -> Result<()> {
    let (_, m) = cfg.metrics_or(vec![schwarzschild_family()])?.remove(0);
    let lambdas = cfg.lambdas_or(&[100.0, 200.0, 400.0, 800.0]);
    let init = cfg.seeds_or(&[[0.3, 0.0, 0.0]])[0];
    let mass = m.mass();
    let f = ctx.timed("foliation", |_| build_foliation(m, &lambdas, init, &cfg.energy))?;
    ctx.tables.push(foliation_table("foliation", &f));
    let s = summarize_foliation(&f, mass);
    ctx.verdict(7, "largest |xi(lambda)|", s.max_xi, Band::AtMost(CENTER_FLOOR));
    ctx.verdict(7, "|xi(lambda)| non-increasing", s.xi_nonincreasing as u8 as f64, Band::AtLeast(1.0));
    ctx.verdict(7, "smallest transversality margin", s.min_margin, Band::AtLeast(f64::MIN_POSITIVE));
    ctx.verdict(7, "kappa strictly decreasing", s.kappa_decreasing as u8 as f64, Band::AtLeast(1.0));
    ctx.verdict(7, "smallest Hessian eigenvalue", s.min_hessian, Band::AtLeast(f64::MIN_POSITIVE));
    ctx.verdict(7, "Hessian eigenvalue spread over lambda", s.hessian_spread, Band::AtMost(1.25));
    ctx.verdict(7, "largest |m_H - m|", s.max_mass_error, Band::AtMost(1e-6));
    Ok(())
}

// ---------------------------------------------------------------------------
// Pulse counterexamples

/// The two pulse counterexamples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PulseCounterexample {
    /// On-center minimum with `1/4 < |ξ| < 7/8`.
    G1,
    /// Outlying minimum with `2√2 < |ξ| < 5`.
    G2,
}

impl PulseCounterexample {
    /// Radii where the radial derivative of `G` must be negative and positive.
    pub fn probes(self) -> (f64, f64) {
        match self {
            PulseCounterexample::G1 => (0.25, 0.875),
            PulseCounterexample::G2 => (2.0 * 2f64.sqrt(), 5.0),
        }
    }

    /// Unit-amplitude profile.
    pub fn template(self) -> PulseSpec {
        match self {
            PulseCounterexample::G1 => PulseSpec::g1(1.0),
            PulseCounterexample::G2 => PulseSpec::g2(1.0),
        }
    }

    fn seed(self) -> [f64; 3] {
        match self {
            PulseCounterexample::G1 => [0.5, 0.0, 0.0],
            PulseCounterexample::G2 => [3.5, 0.0, 0.0],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrationSettings {
    pub start: f64,
    pub b_max: f64,
    /// Bisection stops when the bracket's ratio is below `1 + rel_tol`.
    pub rel_tol: f64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            start: 1.0,
            b_max: 1e6,
            rel_tol: 0.01,
        }
    }
}

/// Radial derivative of `G_λ` at one probe radius.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeValue {
    pub radius: f64,
    pub radial_derivative: f64,
    pub method: Method,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Calibration {
    pub lambda: f64,
    /// Smallest amplitude found with the predicted sign pattern.
    pub amplitude: f64,
    pub bracket: [f64; 2],
    /// Probe values at `amplitude`.
    pub probes: Vec<ProbeValue>,
    pub evaluations: usize,
}

/// Radial derivative along `e₁` from a direct solve; where the solve cannot
/// meet its residual bound (the surface then crosses pulse bands finer than
/// the grid), from the closed-form expansion.
pub fn probe_derivative(metric: Arc<AmbientMetric>, lambda: f64, radius: f64, cfg: &EnergyConfig) -> Result<ProbeValue> {
    match monotonicity_scan(metric.clone(), lambda, &[radius], [1.0, 0.0, 0.0], cfg) {
        Ok(rep) => Ok(ProbeValue {
            radius,
            radial_derivative: rep.samples[0].radial_derivative,
            method: Method::DirectLs,
        }),
        Err(Error::Numerical { .. } | Error::NoConvergence { .. } | Error::DegenerateSurface { .. }) => {
            let h = cfg.fd_step;
            let d = cfg.solver.delta;
            let gp = g_expansion(&metric, [radius + h, 0.0, 0.0], lambda, d)?.value;
            let gm = g_expansion(&metric, [radius - h, 0.0, 0.0], lambda, d)?.value;
            Ok(ProbeValue {
                radius,
                radial_derivative: (gp - gm) / (2.0 * h),
                method: Method::ClosedFormExpansion,
            })
        }
        Err(e) => Err(e),
    }
}

/// Smallest `B` for which `S = B·template` gives `∂_r G_λ < 0` at the inner
/// probe and `> 0` at the outer one, by bracketing and geometric bisection.
pub fn calibrate_pulse_amplitude(
    which: PulseCounterexample,
    lambda: f64,
    template: &PulseSpec,
    settings: &CalibrationSettings,
    cfg: &EnergyConfig,
) -> Result<Calibration> {
    if !(settings.start > 0.0 && settings.b_max >= settings.start && settings.rel_tol > 0.0) {
        return Err(Error::invalid("calibration needs 0 < start <= b_max and rel_tol > 0"));
    }
    let (inner, outer) = which.probes();
    let mut evaluations = 0;
    let mut pattern = |b: f64| -> Result<(bool, Vec<ProbeValue>)> {
        let spec = PulseSpec {
            amplitude: b * template.amplitude,
            ..template.clone()
        };
        let m = Arc::new(make_pulse_metric(spec)?);
        evaluations += 1;
        let pi = probe_derivative(m.clone(), lambda, inner, cfg)?;
        if !(pi.radial_derivative < 0.0) {
            return Ok((false, vec![pi]));
        }
        let po = probe_derivative(m, lambda, outer, cfg)?;
        let ok = po.radial_derivative > 0.0;
        Ok((ok, vec![pi, po]))
    };
    let mut b = settings.start;
    let (mut ok, mut probes) = pattern(b)?;
    let (mut lo, mut hi);
    if ok {
        hi = b;
        loop {
            lo = hi / 4.0;
            let (o, p) = pattern(lo)?;
            if !o {
                break;
            }
            hi = lo;
            probes = p;
            if hi < 1e-12 * settings.start {
                return Err(Error::Calibration(format!(
                    "sign pattern holds for every amplitude down to {hi:e}"
                )));
            }
        }
    } else {
        loop {
            b *= 4.0;
            if b > settings.b_max {
                return Err(Error::Calibration(format!(
                    "no amplitude up to B_max = {:e} gives a negative radial derivative at {inner} \
                     and a positive one at {outer} (last probes {probes:?})",
                    settings.b_max
                )));
            }
            (ok, probes) = pattern(b)?;
            if ok {
                break;
            }
        }
        hi = b;
        lo = b / 4.0;
    }
    while hi / lo > 1.0 + settings.rel_tol {
        let mid = (lo * hi).sqrt();
        let (o, p) = pattern(mid)?;
        if o {
            hi = mid;
            probes = p;
        } else {
            lo = mid;
        }
    }
    Ok(Calibration {
        lambda,
        amplitude: hi,
        bracket: [lo, hi],
        probes,
        evaluations,
    })
}

/// A critical point of `G_λ` with its leaf.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PulseLeaf {
    pub lambda: f64,
    pub xi: [f64; 3],
    pub xi_norm: f64,
    pub value: f64,
    /// `ξ·D²G·ξ / |ξ|²`.
    pub radial_curvature: f64,
    pub hessian_eigenvalues: [f64; 3],
    pub gradient_norm: f64,
    pub hawking_mass: f64,
    pub kappa: f64,
}

fn pulse_leaf(cp: &CriticalPoint) -> Result<PulseLeaf> {
    let xi = cp.eval.xi;
    let n = norm3(xi);
    let h = cp.eval.hessian.ok_or_else(|| Error::numerical("critical point without Hessian", 0.0))?;
    let mut q = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            q += xi[i] * h[i][j] * xi[j];
        }
    }
    let st = cp
        .state
        .as_ref()
        .ok_or_else(|| Error::numerical("critical point without solved state", 0.0))?;
    Ok(PulseLeaf {
        lambda: cp.eval.lambda,
        xi,
        xi_norm: n,
        value: cp.eval.value,
        radial_curvature: q / (n * n),
        hessian_eigenvalues: cp.hessian_eigenvalues,
        gradient_norm: cp.gradient_norm,
        hawking_mass: report(&st.surface)?.hawking_mass,
        kappa: st.kappa,
    })
}

/// Minimum of `G_λ` from `seed` at each `λ` of the ladder.
pub fn pulse_minima(metric: Arc<AmbientMetric>, lambdas: &[f64], seed: [f64; 3], cfg: &EnergyConfig) -> Result<Vec<PulseLeaf>> {
    lambdas
        .iter()
        .map(|&lam| pulse_leaf(&find_critical_point(metric.clone(), lam, seed, CriticalKind::Minimum, cfg)?))
        .collect()
}

/// Calibrated amplitudes are multiplied by this before the minimum search,
/// so the minimum sits clear of the threshold where it is born.
pub const AMPLITUDE_MARGIN: f64 = 2.0;

fn run_pulse_counterexample(which: PulseCounterexample, cfg: &ExperimentConfig, ctx: &mut Ctx) -> Result<()> {
    let criterion = match which {
        PulseCounterexample::G1 => 9,
        PulseCounterexample::G2 => 8,
    };
    let lambdas = cfg.lambdas_or(&[1e3, 1e4]);
    let template = match cfg.metrics.first() {
        Some(MetricFamily::Pulse(p)) => PulseSpec {
            amplitude: 1.0,
            ..p.clone()
        },
        Some(other) => return Err(Error::Config(format!("{which:?} needs a pulse metric, got {other:?}"))),
        None => which.template(),
    };
    let mut tc = Table::new("calibration", &["lambda", "amplitude", "bracket_lo", "bracket_hi", "evaluations"]);
    let mut tp = Table::new("calibration_probes", &["lambda", "radius", "radial_derivative", "method"]);
    let amplitude = match cfg.amplitude {
        Some(b) => b,
        None => {
            let settings = CalibrationSettings::default();
            let mut cals = vec![];
            for &lam in lambdas.iter().take(2) {
                let c = ctx.timed(&format!("calibration at lambda = {lam}"), |_| {
                    calibrate_pulse_amplitude(which, lam, &template, &settings, &cfg.energy)
                })?;
                tc.push(vec![
                    num(c.lambda),
                    num(c.amplitude),
                    num(c.bracket[0]),
                    num(c.bracket[1]),
                    c.evaluations.to_string(),
                ]);
                for p in &c.probes {
                    tp.push(vec![num(c.lambda), num(p.radius), num(p.radial_derivative), format!("{:?}", p.method)]);
                }
                cals.push(c);
            }
            ctx.verdict(criterion, "calibrated amplitude", cals[0].amplitude, Band::Between(0.0, f64::INFINITY));
            if cals.len() == 2 {
                let change = (cals[1].amplitude / cals[0].amplitude - 1.0).abs();
                ctx.verdict(criterion, "relative amplitude change along the ladder", change, Band::AtMost(0.2));
            }
            AMPLITUDE_MARGIN * cals[0].amplitude
        }
    };
    ctx.tables.push(tc);
    ctx.tables.push(tp);
    let spec = PulseSpec {
        amplitude: amplitude * template.amplitude,
        ..template
    };
    let metric = Arc::new(make_pulse_metric(spec)?);
    let seed = cfg.seeds_or(&[which.seed()])[0];
    let leaves = ctx.timed("minima", |_| pulse_minima(metric.clone(), &lambdas, seed, &cfg.energy))?;
    let mut t = Table::new(
        "minima",
        &[
            "lambda",
            "xi_norm",
            "value",
            "radial_curvature",
            "hessian_min_eig",
            "gradient_norm",
            "hawking_mass",
            "kappa",
        ],
    );
    for l in &leaves {
        t.push(vec![
            num(l.lambda),
            num(l.xi_norm),
            num(l.value),
            num(l.radial_curvature),
            num(l.hessian_eigenvalues[0]),
            num(l.gradient_norm),
            num(l.hawking_mass),
            num(l.kappa),
        ]);
    }
    ctx.tables.push(t);
    let (lo, hi) = which.probes();
    let first = &leaves[0];
    ctx.verdict(criterion, format!("|xi*| at lambda = {}", first.lambda), first.xi_norm, Band::Between(lo, hi));
    ctx.verdict(criterion, "radial curvature of G at xi*", first.radial_curvature, Band::AtLeast(f64::MIN_POSITIVE));
    let target = match which {
        PulseCounterexample::G1 => metric.mass(),
        PulseCounterexample::G2 => 0.0,
    };
    if which == PulseCounterexample::G1 {
        ctx.verdict(criterion, "|m_H - 2| of the first leaf", (first.hawking_mass - target).abs(), Band::AtMost(0.05));
    }
    if let Some(last) = leaves.last().filter(|_| leaves.len() > 1) {
        let ratio = (last.hawking_mass - target).abs() / (first.hawking_mass - target).abs();
        ctx.verdict(criterion, "m_H distance to its limit, last / first leaf", ratio, Band::AtMost(0.5));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// g3 and g4

/// `|ξ|` lower bound for the g3 leaves: ten times the larger of the
/// position uncertainty `|∇G| / λ_min(D²G)` and the shift of `ξ` between
/// the foliation and its rerun at twice the band limit.
pub fn g3_offset_floor(f: &Foliation, fine: &Foliation) -> f64 {
    let mut z: f64 = 0.0;
    for (a, b) in f.leaves.iter().zip(&fine.leaves) {
        let d = [a.xi[0] - b.xi[0], a.xi[1] - b.xi[1], a.xi[2] - b.xi[2]];
        z = z.max(a.gradient_norm / a.hessian_min_eig).max(norm3(d));
    }
    10.0 * z
}

fn run_g3(cfg: &ExperimentConfig, ctx: &mut Ctx) -> Result<()> {
    let metric = match cfg.metrics.first() {
        Some(f @ MetricFamily::BumpG3 { .. }) => Arc::new(AmbientMetric::new(f.clone())?),
        Some(other) => return Err(Error::Config(format!("counterexample-g3 needs a g3 metric, got {other:?}"))),
        None => Arc::new(make_bump_metric_g3(0.1, 1e-3)?),
    };
    let lambdas = cfg.lambdas_or(&[56.25, 562.5]);
    let init = cfg.seeds_or(&[[0.0; 3]])[0];
    let f = ctx.timed("g3 foliation", |_| build_foliation(metric.clone(), &lambdas, init, &cfg.energy))?;
    let mut fine_cfg = cfg.energy.clone();
    fine_cfg.solver.l_max *= 2;
    let fine = ctx.timed("g3 foliation, doubled band limit", |_| {
        build_foliation(metric, &lambdas, init, &fine_cfg)
    })?;
    ctx.tables.push(foliation_table("foliation", &f));
    ctx.tables.push(foliation_table("foliation_fine", &fine));
    let z = g3_offset_floor(&f, &fine);
    ctx.verdict(10, "reported offset bound z", z, Band::Between(0.0, f64::INFINITY));
    for leaf in &f.leaves {
        ctx.verdict(10, format!("|xi| / z at lambda = {}", leaf.lambda), norm3(leaf.xi) / z, Band::AtLeast(1.0));
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct G4Scan {
    pub lambda: f64,
    /// `(t, G, dG/dt)` with `ξ = t λ e₁`.
    pub samples: Vec<(f64, f64, f64)>,
    /// Values of `t` where `dG/dt` goes from negative to positive.
    pub minima: Vec<f64>,
}

/// Scan `G_λ(t λ e₁)`, `λ = 10^j`, with the far-outlying expansion.
pub fn g4_scan(metric: &AmbientMetric, j: i32, ts: &[f64]) -> Result<G4Scan> {
    let lam = 10f64.powi(j);
    let g = |t: f64| -> Result<f64> { Ok(g_far_outlying(metric, [t * lam, 0.0, 0.0], lam)?.value) };
    let h = 1e-4;
    let dg = |t: f64| -> Result<f64> { Ok((g(t + h)? - g(t - h)?) / (2.0 * h)) };
    let mut samples = vec![];
    for &t in ts {
        samples.push((t, g(t)?, dg(t)?));
    }
    let mut minima = vec![];
    for w in samples.windows(2) {
        if w[0].2 < 0.0 && w[1].2 > 0.0 {
            let (mut a, mut b) = (w[0].0, w[1].0);
            while b - a > 1e-6 {
                let c = 0.5 * (a + b);
                if dg(c)? < 0.0 {
                    a = c;
                } else {
                    b = c;
                }
            }
            minima.push(0.5 * (a + b));
        }
    }
    Ok(G4Scan {
        lambda: lam,
        samples,
        minima,
    })
}

fn run_g4(cfg: &ExperimentConfig, ctx: &mut Ctx) -> Result<()> {
    let metric = match cfg.metrics.first() {
        Some(MetricFamily::Pulse(p)) => make_pulse_metric(p.clone())?,
        Some(other) => return Err(Error::Config(format!("counterexample-g4 needs a pulse metric, got {other:?}"))),
        None => make_pulse_metric(PulseSpec::g4())?,
    };
    let js: Vec<i32> = cfg.lambdas_or(&[1e3]).iter().map(|l| l.log10().round() as i32).collect();
    let ts: Vec<f64> = (0..=80).map(|i| 3.0 + 0.05 * i as f64).collect();
    let mut t = Table::new("g4_scan", &["lambda", "t", "value", "dvalue_dt"]);
    for j in js {
        let s = ctx.timed(&format!("g4 scan j = {j}"), |_| g4_scan(&metric, j, &ts))?;
        for (tt, v, d) in &s.samples {
            t.push(vec![num(s.lambda), num(*tt), num(*v), num(*d)]);
        }
        let found = s.minima.iter().copied().find(|t| (5.0..=7.0).contains(t));
        ctx.verdict(
            11,
            format!("critical t in [5, 7] at j = {j}"),
            found.unwrap_or(f64::NAN),
            Band::Between(5.0 - 1e-12, 7.0 + 1e-12),
        );
    }
    ctx.tables.push(t);
    Ok(())
}

// ---------------------------------------------------------------------------
// Far-outlying regime

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FarOutlyingFit {
    pub lambda: f64,
    /// `(|ξ|, G_direct, G_far_outlying)`.
    pub rows: Vec<(f64, f64, f64)>,
    /// Decay exponent of `|G_direct − G_far_outlying|` in `|ξ|`.
    pub exponent: f64,
}

pub fn measure_far_outlying(
    metric: Arc<AmbientMetric>,
    lambda: f64,
    radii: &[f64],
    cfg: &EnergyConfig,
    threads: usize,
) -> Result<FarOutlyingFit> {
    let rows = par_map(radii, threads, |&t| -> Result<(f64, f64, f64)> {
        let xi = [t, 0.0, 0.0];
        let d = g_direct(metric.clone(), xi, lambda, cfg, 0)?.value;
        let f = g_far_outlying(&metric, xi, lambda)?.value;
        Ok((t, d, f))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let diffs: Vec<f64> = rows.iter().map(|r| (r.1 - r.2).abs()).collect();
    Ok(FarOutlyingFit {
        lambda,
        exponent: decay_exponent(radii, &diffs),
        rows,
    })
}

fn run_far_outlying(cfg: &ExperimentConfig, ctx: &mut Ctx) -> Result<()> {
    let (_, m) = cfg.metrics_or(vec![schwarzschild_family()])?.remove(0);
    let lam = cfg.lambdas_or(&[1e3])[0];
    let radii: Vec<f64> = cfg.seeds_or(&[[4.0, 0.0, 0.0], [8.0, 0.0, 0.0], [16.0, 0.0, 0.0]]).iter().map(|x| norm3(*x)).collect();
    let threads = ctx.threads;
    let fit = ctx.timed("far-outlying fit", |_| measure_far_outlying(m, lam, &radii, &cfg.energy, threads))?;
    let mut t = Table::new("far_outlying", &["lambda", "xi_norm", "direct", "far_outlying", "difference"]);
    for (r, d, f) in &fit.rows {
        t.push(vec![num(lam), num(*r), num(*d), num(*f), num(d - f)]);
    }
    ctx.tables.push(t);
    ctx.verdict(11, "decay exponent of |G_direct - G_far| in |xi|", fit.exponent, Band::AtLeast(6.0));
    Ok(())
}

// ---------------------------------------------------------------------------
// Tables without verdicts

fn run_cmc_area(cfg: &ExperimentConfig, ctx: &mut Ctx) -> Result<()> {
    let metrics = cfg.metrics_or(vec![schwarzschild_family(), MetricFamily::Pulse(PulseSpec::g2(0.02))])?;
    let lambdas = cfg.lambdas_or(&[1e3]);
    let xis = cfg.seeds_or(&[[3.0, 0.0, 0.0], [3.5, 0.0, 0.0], [5.0, 0.0, 0.0]]);
    let mut t = Table::new(
        "cmc_area",
        &[
            "metric",
            "lambda",
            "xi1",
            "xi2",
            "xi3",
            "area",
            "radial_derivative",
            "scalar_curvature",
            "laplacian_scalar_curvature",
            "volume_term",
        ],
    );
    for (label, m) in &metrics {
        for &lam in &lambdas {
            for &xi in &xis {
                let c = cmc_reduced_area(m, xi, lam)?;
                t.push(vec![
                    label.clone(),
                    num(lam),
                    num(xi[0]),
                    num(xi[1]),
                    num(xi[2]),
                    num(c.area),
                    num(c.radial_derivative),
                    num(c.scalar_curvature),
                    num(c.laplacian_scalar_curvature),
                    num(c.volume_term),
                ]);
            }
        }
    }
    ctx.tables.push(t);
    Ok(())
}

fn run_energy(cfg: &ExperimentConfig, ctx: &mut Ctx) -> Result<()> {
    let metrics = cfg.metrics_or(vec![schwarzschild_family()])?;
    let lambdas = cfg.lambdas_or(&[100.0]);
    let xis = cfg.seeds_or(&[[0.0; 3]]);
    let u = if cfg.u_coeffs.is_empty() {
        HarmonicField::zeros(0)
    } else {
        let l = (2..=64).find(|l| n_coeffs(*l) == cfg.u_coeffs.len()).expect("validated");
        let mut f = HarmonicField::zeros(l);
        f.coeffs.copy_from_slice(&cfg.u_coeffs);
        f
    };
    let l_grid = cfg.energy.solver.l_max.max(u.l_max);
    let mut header = vec!["metric"];
    header.extend(SurfaceReport::CSV_HEADER);
    let mut t = Table::new("energy", &header);
    for (label, m) in &metrics {
        for &lam in &lambdas {
            for &xi in &xis {
                let s = GraphSurface::new(m.clone(), shared_grid(l_grid), xi, lam, u.clone())?;
                let mut row = vec![label.clone()];
                row.extend(report(&s)?.csv_row());
                t.push(row);
            }
        }
    }
    ctx.tables.push(t);
    Ok(())
}

fn run_solve(cfg: &ExperimentConfig, ctx: &mut Ctx) -> Result<()> {
    let metrics = cfg.metrics_or(vec![schwarzschild_family()])?;
    let lambdas = cfg.lambdas_or(&[100.0]);
    let xis = cfg.seeds_or(&[[0.0; 3]]);
    let mut t = Table::new(
        "solve",
        &[
            "metric",
            "lambda",
            "xi1",
            "xi2",
            "xi3",
            "regime",
            "kappa",
            "lambda1_residual",
            "perp_residual",
            "area_error",
            "iterations",
        ],
    );
    for (label, m) in &metrics {
        for &lam in &lambdas {
            for &xi in &xis {
                let st = solve(m.clone(), xi, lam, &cfg.energy.solver)?;
                t.push(vec![
                    label.clone(),
                    num(lam),
                    num(xi[0]),
                    num(xi[1]),
                    num(xi[2]),
                    regime_name(st.regime).into(),
                    num(st.kappa),
                    num(st.residual_lambda1_inf),
                    num(st.residual_perp_inf),
                    num(st.area_error),
                    st.iterations.to_string(),
                ]);
            }
        }
    }
    ctx.tables.push(t);
    Ok(())
}

fn regime_name(r: Regime) -> &'static str {
    match r {
        Regime::OnCenter => "on-center",
        Regime::Outlying => "outlying",
        Regime::FarOutlying => "far-outlying",
    }
}

fn run_reduce(cfg: &ExperimentConfig, ctx: &mut Ctx) -> Result<()> {
    let metrics = cfg.metrics_or(vec![schwarzschild_family()])?;
    let lambdas = cfg.lambdas_or(&[100.0]);
    let xis = cfg.seeds_or(&[[0.3, 0.0, 0.0]]);
    let mut t = Table::new(
        "reduce",
        &[
            "metric",
            "lambda",
            "xi1",
            "xi2",
            "xi3",
            "regime",
            "direct",
            "grad1",
            "grad2",
            "grad3",
            "expansion",
            "far_outlying",
        ],
    );
    for (label, m) in &metrics {
        for &lam in &lambdas {
            for &xi in &xis {
                let d = g_direct(m.clone(), xi, lam, &cfg.energy, 1)?;
                let g = d.gradient.unwrap_or([f64::NAN; 3]);
                let e = g_expansion(m, xi, lam, cfg.energy.solver.delta)?.value;
                let far = if norm3(xi) > 2.0 {
                    num(g_far_outlying(m, xi, lam)?.value)
                } else {
                    String::new()
                };
                t.push(vec![
                    label.clone(),
                    num(lam),
                    num(xi[0]),
                    num(xi[1]),
                    num(xi[2]),
                    regime_name(d.regime).into(),
                    num(d.value),
                    num(g[0]),
                    num(g[1]),
                    num(g[2]),
                    num(e),
                    far,
                ]);
            }
        }
    }
    ctx.tables.push(t);
    Ok(())
}
