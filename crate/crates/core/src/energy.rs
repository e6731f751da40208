//! Reduced functionals `F_λ` and `G_λ(ξ) = F_λ(Σ_{ξ,λ})`, their closed-form
//! expansions, critical points of `G_λ` and the foliation they assemble.
//!
//! Lengths are physical. Closed forms are derived for mass 2; for mass
//! `m = 2s` the curvature-free parts scale by `s²` and the curvature
//! integrals keep their form.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harmonics::{dot3, norm3, HarmonicField};
use crate::metric::{AmbientMetric, Region};
use crate::reduction::{solve_from, LSState, Regime, SolverConfig};
use crate::surface::{geometry, report_from, GraphSurface};

/// How a value of `G_λ` was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    DirectLs,
    ClosedFormExpansion,
    FarOutlyingExpansion,
}

/// One evaluation of `G_λ` at `ξ`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReducedEval {
    pub xi: [f64; 3],
    pub lambda: f64,
    pub regime: Regime,
    pub value: f64,
    pub method: Method,
    pub gradient: Option<[f64; 3]>,
    pub hessian: Option<[[f64; 3]; 3]>,
    /// Richardson estimate of the gradient error.
    pub gradient_error: Option<f64>,
    /// The `±2λ∫R dv̄` term, with the sign it carries in `G`.
    pub curvature_term: Option<f64>,
    /// Curvature-free part: `G₁`, its outlying analogue or `−(128π/15)|ξ|⁻⁶`.
    pub closed_form_term: Option<f64>,
    /// Generic outlying expansion, reported beside the far-outlying one.
    pub generic_outlying: Option<f64>,
}

impl ReducedEval {
    fn bare(xi: [f64; 3], lambda: f64, regime: Regime, value: f64, method: Method) -> Self {
        Self {
            xi,
            lambda,
            regime,
            value,
            method,
            gradient: None,
            hessian: None,
            gradient_error: None,
            curvature_term: None,
            closed_form_term: None,
            generic_outlying: None,
        }
    }
}

/// Settings for direct evaluation, critical-point search and continuation.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyConfig {
    pub solver: SolverConfig,
    /// Central-difference step in `ξ`.
    pub fd_step: f64,
    /// Gradient tolerance in units of `(m/2)²`.
    pub tol_grad: f64,
    pub max_iter: usize,
    /// Initial trust radius in `ξ`.
    pub trust_radius: f64,
    /// Largest admissible `|ξ|`; `1 + 1/δ` when absent.
    pub xi_max: Option<f64>,
    /// Geometric continuation factor in `λ`.
    pub continuation_factor: f64,
    /// Relative step in `λ` for the transversality margin.
    pub lambda_step: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            fd_step: 1e-3,
            tol_grad: 1e-7,
            max_iter: 40,
            trust_radius: 0.1,
            xi_max: None,
            continuation_factor: 1.2,
            lambda_step: 1e-3,
        }
    }
}

impl EnergyConfig {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if !(self.fd_step > 0.0 && self.fd_step < 0.1) {
            return Err(Error::invalid("fd_step must lie in (0, 0.1)"));
        }
        if !(self.tol_grad > 0.0 && self.trust_radius > 0.0) {
            return Err(Error::invalid("tol_grad and trust_radius must be positive"));
        }
        if !(self.continuation_factor > 1.0) {
            return Err(Error::invalid("continuation_factor must exceed 1"));
        }
        if !(self.lambda_step > 0.0 && self.lambda_step < 0.1) {
            return Err(Error::invalid("lambda_step must lie in (0, 0.1)"));
        }
        Ok(())
    }

    pub fn xi_max(&self) -> f64 {
        self.xi_max.unwrap_or(1.0 + 1.0 / self.solver.delta)
    }
}

fn mass_scale(metric: &AmbientMetric) -> f64 {
    0.5 * metric.mass()
}

/// `F_λ` from `∫H² − 16π`.
pub fn f_from_excess(excess: f64, lambda: f64, mass: f64, regime: Regime) -> f64 {
    let shift = match regime {
        Regime::OnCenter => 32.0 * PI * mass / lambda,
        _ => 0.0,
    };
    lambda * lambda * (excess + shift)
}

/// `λ²(∫H²dμ − 16π + 32πm/λ)` on-center, `λ²(∫H²dμ − 16π)` otherwise,
/// with `λ` the surface parameter.
pub fn f_lambda(surface: &GraphSurface, regime: Regime) -> Result<f64> {
    let g = geometry(surface)?;
    Ok(f_from_excess(
        g.willmore_excess(),
        surface.lambda,
        surface.metric.mass(),
        regime,
    ))
}

/// `G₁(ξ) = 64π + 32π/(1−|ξ|²) − 48π|ξ|⁻¹log((1+|ξ|)/(1−|ξ|)) − 128π log(1−|ξ|²)`.
pub fn g1(xi: [f64; 3]) -> Result<f64> {
    g1_radial(norm3(xi))
}

pub fn g1_radial(s: f64) -> Result<f64> {
    if !(s < 1.0) {
        return Err(Error::invalid(format!("G1 needs |xi| < 1, got {s}")));
    }
    let t = s * s;
    if s < 0.1 {
        // Σ_{n≥1} (32 − 96/(2n+1) + 128/n) tⁿ
        let mut sum = 0.0;
        let mut tn = 1.0;
        for n in 1..40 {
            tn *= t;
            let n = n as f64;
            sum += (32.0 - 96.0 / (2.0 * n + 1.0) + 128.0 / n) * tn;
        }
        return Ok(PI * sum);
    }
    Ok(64.0 * PI + 32.0 * PI / (1.0 - t) - 96.0 * PI * s.atanh() / s - 128.0 * PI * (-t).ln_1p())
}

/// Outlying analogue `−32π/(|ξ|²−1) − 48π|ξ|⁻¹log((|ξ|+1)/(|ξ|−1)) − 128π log(1−|ξ|⁻²)`.
pub fn g_outlying_closed(s: f64) -> Result<f64> {
    if !(s > 1.0) {
        return Err(Error::invalid(format!("the outlying closed form needs |xi| > 1, got {s}")));
    }
    let t = 1.0 / (s * s);
    if s > 10.0 {
        // Σ_{n≥3} (−32 − 96/(2n−1) + 128/n) tⁿ
        let mut sum = 0.0;
        let mut tn = t * t;
        for n in 3..40 {
            tn *= t;
            let n = n as f64;
            sum += (-32.0 - 96.0 / (2.0 * n - 1.0) + 128.0 / n) * tn;
        }
        return Ok(PI * sum);
    }
    Ok(-32.0 * PI * t / (1.0 - t) - 96.0 * PI * (1.0 / s).atanh() / s - 128.0 * PI * (-t).ln_1p())
}

/// Leading far-outlying term `−(128π/15)|ξ|⁻⁶`.
pub fn g_far_closed(s: f64) -> f64 {
    -128.0 * PI / 15.0 * s.powi(-6)
}

fn regime_of(xi: [f64; 3], delta: f64) -> Result<Regime> {
    Regime::classify(norm3(xi), delta)
}

fn scaled_xi(xi: [f64; 3], lambda: f64) -> [f64; 3] {
    [lambda * xi[0], lambda * xi[1], lambda * xi[2]]
}

/// `2λ∫_{ℝ³∖B_λ(λξ)} R dv̄` on-center and `−2λ∫_{B_λ(λξ)} R dv̄` otherwise.
pub fn curvature_term(metric: &AmbientMetric, xi: [f64; 3], lambda: f64, regime: Regime) -> Result<f64> {
    let center = scaled_xi(xi, lambda);
    Ok(match regime {
        Regime::OnCenter => {
            2.0 * lambda
                * metric
                    .integrate_r(Region::ExteriorOfBall {
                        center,
                        radius: lambda,
                    })?
                    .value
        }
        _ => {
            -2.0 * lambda
                * metric
                    .integrate_r(Region::Ball {
                        center,
                        radius: lambda,
                    })?
                    .value
        }
    })
}

/// `G_λ` from its closed-form expansion plus the curvature integral.
pub fn g_expansion(metric: &AmbientMetric, xi: [f64; 3], lambda: f64, delta: f64) -> Result<ReducedEval> {
    let regime = regime_of(xi, delta)?;
    let s2 = mass_scale(metric).powi(2);
    let t = norm3(xi);
    let closed = s2
        * match regime {
            Regime::OnCenter => g1_radial(t)?,
            _ => g_outlying_closed(t)?,
        };
    let curv = curvature_term(metric, xi, lambda, regime)?;
    let mut out = ReducedEval::bare(xi, lambda, regime, closed + curv, Method::ClosedFormExpansion);
    out.closed_form_term = Some(closed);
    out.curvature_term = Some(curv);
    Ok(out)
}

/// Far-outlying expansion `−(128π/15)|ξ|⁻⁶ − 2λ∫_{B_λ(λξ)} R dv̄`, with the
/// generic outlying expansion alongside.
pub fn g_far_outlying(metric: &AmbientMetric, xi: [f64; 3], lambda: f64) -> Result<ReducedEval> {
    let t = norm3(xi);
    if !(t > 2.0) {
        return Err(Error::invalid(format!("far-outlying expansion needs |xi| > 2, got {t}")));
    }
    let s2 = mass_scale(metric).powi(2);
    let closed = s2 * g_far_closed(t);
    let curv = curvature_term(metric, xi, lambda, Regime::FarOutlying)?;
    let mut out = ReducedEval::bare(xi, lambda, Regime::FarOutlying, closed + curv, Method::FarOutlyingExpansion);
    out.closed_form_term = Some(closed);
    out.curvature_term = Some(curv);
    out.generic_outlying = Some(s2 * g_outlying_closed(t)? + curv);
    Ok(out)
}

/// Closed-form `∫H²dμ` of the coordinate sphere `S_{ξ,λ}`, including the
/// `±2λ⁻¹∫R` term.
pub fn sphere_willmore_closed_form(metric: &AmbientMetric, xi: [f64; 3], lambda: f64, delta: f64) -> Result<f64> {
    let regime = regime_of(xi, delta)?;
    let s = mass_scale(metric);
    let t = norm3(xi);
    let t2 = t * t;
    let bracket = match regime {
        Regime::OnCenter => {
            let log_term = if t < 1e-4 { 6.0 + 2.0 * t2 } else { 6.0 * t.atanh() / t };
            (10.0 - 6.0 * t2) / (1.0 - t2).powi(2) + log_term
        }
        _ => (10.0 - 6.0 * t2) / (t2 - 1.0).powi(2) + 6.0 * (1.0 / t).atanh() / t,
    };
    let mass_term = match regime {
        Regime::OnCenter => -64.0 * PI * s / lambda,
        _ => 0.0,
    };
    let curv = curvature_term(metric, xi, lambda, regime)? / (lambda * lambda);
    Ok(16.0 * PI + mass_term + 8.0 * PI * s * s / (lambda * lambda) * bracket + curv)
}

/// Evaluates `G_λ` at fixed `λ` by Lyapunov–Schmidt solves, warm-starting
/// each solve from the last centre point.
pub struct GEvaluator {
    metric: Arc<AmbientMetric>,
    lambda: f64,
    cfg: EnergyConfig,
    warm: Option<(HarmonicField, f64)>,
    /// Number of solves performed.
    pub solves: usize,
}

impl GEvaluator {
    pub fn new(metric: Arc<AmbientMetric>, lambda: f64, cfg: &EnergyConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            metric,
            lambda,
            cfg: cfg.clone(),
            warm: None,
            solves: 0,
        })
    }

    pub fn with_warm_start(mut self, state: &LSState) -> Self {
        self.warm = Some((state.u().clone(), state.kappa));
        self
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn metric(&self) -> &Arc<AmbientMetric> {
        &self.metric
    }

    /// Solve at `ξ`, optionally forcing the regime.
    pub fn solve(&mut self, xi: [f64; 3], regime: Option<Regime>) -> Result<LSState> {
        let mut scfg = self.cfg.solver.clone();
        if regime.is_some() {
            scfg.regime = regime;
        }
        self.solves += 1;
        let warm = self.warm.as_ref().map(|(u, k)| (u, *k));
        match solve_from(self.metric.clone(), xi, self.lambda, &scfg, warm) {
            Ok(st) => Ok(st),
            Err(Error::NoConvergence { .. }) | Err(Error::DegenerateSurface { .. }) if warm.is_some() => {
                self.solves += 1;
                solve_from(self.metric.clone(), xi, self.lambda, &scfg, None)
            }
            Err(e) => Err(e),
        }
    }

    /// `G_λ(ξ)` and the solved state.
    pub fn value(&mut self, xi: [f64; 3], regime: Option<Regime>) -> Result<(f64, LSState)> {
        let st = self.solve(xi, regime)?;
        let g = geometry(&st.surface)?;
        // The multiplier is the sensitivity of ∫H² to area; remove the
        // first-order effect of the residual area error.
        let excess = g.willmore_excess() - 2.0 * st.kappa * st.area_error;
        let v = f_from_excess(excess, self.lambda, self.metric.mass(), st.regime);
        Ok((v, st))
    }

    /// `G_λ(ξ)` with central-difference derivatives up to `order` (0, 1 or 2).
    pub fn evaluate(&mut self, xi: [f64; 3], order: usize, richardson: bool) -> Result<(ReducedEval, LSState)> {
        let (g0, st) = self.value(xi, None)?;
        self.warm = Some((st.u().clone(), st.kappa));
        let regime = st.regime;
        let mut out = ReducedEval::bare(xi, self.lambda, regime, g0, Method::DirectLs);
        if order == 0 {
            return Ok((out, st));
        }
        let h = self.cfg.fd_step;
        let at = |ev: &mut Self, d: [f64; 3]| -> Result<f64> {
            let p = [xi[0] + d[0], xi[1] + d[1], xi[2] + d[2]];
            Ok(ev.value(p, Some(regime))?.0)
        };
        let unit = |i: usize, a: f64| {
            let mut e = [0.0; 3];
            e[i] = a;
            e
        };
        let mut plus = [0.0; 3];
        let mut minus = [0.0; 3];
        let mut grad = [0.0; 3];
        for i in 0..3 {
            plus[i] = at(self, unit(i, h))?;
            minus[i] = at(self, unit(i, -h))?;
            grad[i] = (plus[i] - minus[i]) / (2.0 * h);
        }
        if richardson {
            let mut coarse = [0.0; 3];
            for i in 0..3 {
                coarse[i] = (at(self, unit(i, 2.0 * h))? - at(self, unit(i, -2.0 * h))?) / (4.0 * h);
            }
            let err = (0..3).map(|i| (grad[i] - coarse[i]).powi(2)).sum::<f64>().sqrt() / 3.0;
            for i in 0..3 {
                grad[i] = (4.0 * grad[i] - coarse[i]) / 3.0;
            }
            out.gradient_error = Some(err);
        }
        out.gradient = Some(grad);
        if order >= 2 {
            let mut hess = [[0.0; 3]; 3];
            for i in 0..3 {
                hess[i][i] = (plus[i] - 2.0 * g0 + minus[i]) / (h * h);
                for j in 0..i {
                    let d = |a: f64, b: f64| {
                        let mut e = [0.0; 3];
                        e[i] = a * h;
                        e[j] = b * h;
                        e
                    };
                    let pp = at(self, d(1.0, 1.0))?;
                    let pm = at(self, d(1.0, -1.0))?;
                    let mp = at(self, d(-1.0, 1.0))?;
                    let mm = at(self, d(-1.0, -1.0))?;
                    let v = (pp - pm - mp + mm) / (4.0 * h * h);
                    hess[i][j] = v;
                    hess[j][i] = v;
                }
            }
            out.hessian = Some(hess);
        }
        Ok((out, st))
    }

    /// Value, first and second derivative of `r ↦ G_λ(r a)`.
    fn ray_jet(&mut self, a: [f64; 3], r: f64, regime: Regime) -> Result<(f64, f64, f64, LSState)> {
        let h = self.cfg.fd_step;
        let p = |r: f64| [r * a[0], r * a[1], r * a[2]];
        let (g0, st) = self.value(p(r), Some(regime))?;
        self.warm = Some((st.u().clone(), st.kappa));
        let gp = self.value(p(r + h), Some(regime))?.0;
        let gm = self.value(p(r - h), Some(regime))?.0;
        Ok((g0, (gp - gm) / (2.0 * h), (gp - 2.0 * g0 + gm) / (h * h), st))
    }
}

/// `G_λ(ξ)` from a solve, with derivatives up to `order`.
pub fn g_direct(
    metric: Arc<AmbientMetric>,
    xi: [f64; 3],
    lambda: f64,
    cfg: &EnergyConfig,
    order: usize,
) -> Result<ReducedEval> {
    let mut ev = GEvaluator::new(metric, lambda, cfg)?;
    Ok(ev.evaluate(xi, order, false)?.0)
}

/// Which kind of critical point to look for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticalKind {
    Minimum,
    /// Saddle with the given number of descending directions.
    Saddle(usize),
    Maximum,
}

impl CriticalKind {
    fn index(self, dim: usize) -> usize {
        match self {
            CriticalKind::Minimum => 0,
            CriticalKind::Saddle(k) => k.min(dim),
            CriticalKind::Maximum => dim,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticalStatus {
    Converged,
    /// Flat ambient space: `G_λ ≡ 0` and every `ξ` is critical.
    DegenerateFlat,
}

/// Outcome of a critical-point search.
#[derive(Clone, Debug)]
pub struct CriticalPoint {
    pub eval: ReducedEval,
    pub status: CriticalStatus,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Ascending eigenvalues of the Hessian.
    pub hessian_eigenvalues: [f64; 3],
    pub solves: usize,
    pub state: Option<LSState>,
}

fn sym_eigen(h: &[[f64; 3]; 3]) -> [f64; 3] {
    let m = Matrix3::from_fn(|i, j| h[i][j]);
    let mut e: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    e.sort_by(|a, b| a.total_cmp(b));
    [e[0], e[1], e[2]]
}

/// Eigenvector-following step: minimize along all but the `index` lowest
/// modes, maximize along those, then clip to the trust radius.
fn tr_step(grad: &DVector<f64>, hess: &DMatrix<f64>, index: usize, radius: f64) -> (DVector<f64>, f64) {
    let eig = SymmetricEigen::new(hess.clone());
    let mut order: Vec<usize> = (0..grad.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let bmax = eig.eigenvalues.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let floor = 1e-8 * bmax.max(1e-300);
    let mut p = DVector::zeros(grad.len());
    for (rank, &k) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        let gk = v.dot(grad);
        let b = eig.eigenvalues[k].abs().max(floor);
        let b = if rank < index { -b } else { b };
        p -= v * (gk / b);
    }
    let n = p.norm();
    if n > radius {
        p *= radius / n;
    }
    let pred = grad.dot(&p) + 0.5 * p.dot(&(hess * &p));
    (p, pred)
}

fn admissible(xi_norm: f64, regime: Regime, cfg: &EnergyConfig) -> bool {
    let d = cfg.solver.delta;
    let inside = match regime {
        Regime::OnCenter => xi_norm < 1.0 - d,
        Regime::Outlying => xi_norm > 1.0 + d,
        Regime::FarOutlying => xi_norm > 2.0,
    };
    inside && xi_norm <= cfg.xi_max()
}

/// Critical point of `G_λ` near `init` by a trust-region Newton iteration on
/// finite-difference derivatives. For rotationally symmetric metrics the
/// search runs along the ray through `init`.
pub fn find_critical_point(
    metric: Arc<AmbientMetric>,
    lambda: f64,
    init: [f64; 3],
    kind: CriticalKind,
    cfg: &EnergyConfig,
) -> Result<CriticalPoint> {
    find_critical_point_from(metric, lambda, init, kind, cfg, None)
}

pub fn find_critical_point_from(
    metric: Arc<AmbientMetric>,
    lambda: f64,
    init: [f64; 3],
    kind: CriticalKind,
    cfg: &EnergyConfig,
    warm: Option<&LSState>,
) -> Result<CriticalPoint> {
    cfg.validate()?;
    let regime = regime_of(init, cfg.solver.delta)?;
    if !admissible(norm3(init), regime, cfg) {
        return Err(Error::invalid(format!("initial xi = {init:?} is not admissible")));
    }
    if metric.is_flat() {
        let mut eval = ReducedEval::bare(init, lambda, regime, 0.0, Method::DirectLs);
        eval.gradient = Some([0.0; 3]);
        eval.hessian = Some([[0.0; 3]; 3]);
        return Ok(CriticalPoint {
            eval,
            status: CriticalStatus::DegenerateFlat,
            iterations: 0,
            gradient_norm: 0.0,
            hessian_eigenvalues: [0.0; 3],
            solves: 0,
            state: None,
        });
    }
    let mut ev = GEvaluator::new(metric.clone(), lambda, cfg)?;
    if let Some(st) = warm {
        ev = ev.with_warm_start(st);
    }
    let tol = cfg.tol_grad * mass_scale(&metric).powi(2);
    let radial = metric.is_radial() && norm3(init) > 0.0;
    let iterations = if radial {
        ray_search(&mut ev, init, kind, regime, tol, cfg)?
    } else {
        box_search(&mut ev, init, kind, regime, tol, cfg)?
    };
    let (xi, it) = iterations;
    let (eval, state) = ev.evaluate(xi, 2, true)?;
    let grad = eval.gradient.expect("gradient requested");
    let hess = eval.hessian.expect("hessian requested");
    Ok(CriticalPoint {
        gradient_norm: norm3(grad),
        hessian_eigenvalues: sym_eigen(&hess),
        eval,
        status: CriticalStatus::Converged,
        iterations: it,
        solves: ev.solves,
        state: Some(state),
    })
}

fn converged_or_stalled(gnorm: f64, step: f64, xi_norm: f64, tol: f64) -> bool {
    gnorm <= tol || (step <= 1e-12 * (1.0 + xi_norm) && gnorm <= 1e3 * tol)
}

fn ray_search(
    ev: &mut GEvaluator,
    init: [f64; 3],
    kind: CriticalKind,
    regime: Regime,
    tol: f64,
    cfg: &EnergyConfig,
) -> Result<([f64; 3], usize)> {
    let t0 = norm3(init);
    let a = [init[0] / t0, init[1] / t0, init[2] / t0];
    let at = |r: f64| [r * a[0], r * a[1], r * a[2]];
    let index = kind.index(1);
    let mut r = t0;
    let mut radius = cfg.trust_radius;
    let (mut g0, mut d1, mut d2, _) = ev.ray_jet(a, r, regime)?;
    let mut last_step = f64::INFINITY;
    for it in 0..cfg.max_iter {
        if converged_or_stalled(d1.abs(), last_step, r.abs(), tol) {
            return Ok((at(r), it));
        }
        let (p, pred) = tr_step(
            &DVector::from_element(1, d1),
            &DMatrix::from_element(1, 1, d2),
            index,
            radius,
        );
        let step = p[0];
        let rn = r + step;
        if !admissible(rn.abs(), regime, cfg) {
            radius = 0.5 * step.abs();
            if radius < 1e-3 * cfg.solver.delta {
                return Err(Error::BoundaryEscape { xi: at(rn) });
            }
            continue;
        }
        let (gn, d1n, d2n, _) = ev.ray_jet(a, rn, regime)?;
        if accept(g0, gn, pred, d1.abs(), d1n.abs(), index) {
            if step.abs() >= 0.99 * radius {
                radius *= 2.0;
            }
            r = rn;
            g0 = gn;
            d1 = d1n;
            d2 = d2n;
            last_step = step.abs();
        } else {
            radius = 0.25 * step.abs();
        }
    }
    if converged_or_stalled(d1.abs(), last_step, r.abs(), tol) {
        return Ok((at(r), cfg.max_iter));
    }
    Err(Error::NoConvergence {
        iterations: cfg.max_iter,
        trace: vec![d1.abs()],
    })
}

/// Minimization accepts on sufficient decrease; other targets on a smaller
/// gradient. Changes below the evaluation noise count as agreement.
fn accept(g_old: f64, g_new: f64, pred: f64, grad_old: f64, grad_new: f64, index: usize) -> bool {
    let noise = 1e-10 * (1.0 + g_old.abs());
    if index == 0 {
        let actual = g_new - g_old;
        actual <= 0.1 * pred + noise || grad_new < 0.5 * grad_old
    } else {
        grad_new < grad_old
    }
}

fn box_search(
    ev: &mut GEvaluator,
    init: [f64; 3],
    kind: CriticalKind,
    regime: Regime,
    tol: f64,
    cfg: &EnergyConfig,
) -> Result<([f64; 3], usize)> {
    let index = kind.index(3);
    let mut xi = init;
    let mut radius = cfg.trust_radius;
    let (mut cur, _) = ev.evaluate(xi, 2, false)?;
    let mut last_step = f64::INFINITY;
    for it in 0..cfg.max_iter {
        let grad = cur.gradient.expect("gradient requested");
        let gnorm = norm3(grad);
        if converged_or_stalled(gnorm, last_step, norm3(xi), tol) {
            return Ok((xi, it));
        }
        let hess = cur.hessian.expect("hessian requested");
        let (p, pred) = tr_step(
            &DVector::from_row_slice(&grad),
            &DMatrix::from_fn(3, 3, |i, j| hess[i][j]),
            index,
            radius,
        );
        let pn = p.norm();
        let trial = [xi[0] + p[0], xi[1] + p[1], xi[2] + p[2]];
        if !admissible(norm3(trial), regime, cfg) {
            radius = 0.5 * pn;
            if radius < 1e-3 * cfg.solver.delta {
                return Err(Error::BoundaryEscape { xi: trial });
            }
            continue;
        }
        let (next, _) = ev.evaluate(trial, 2, false)?;
        let gn = norm3(next.gradient.expect("gradient requested"));
        if accept(cur.value, next.value, pred, gnorm, gn, index) {
            if pn >= 0.99 * radius {
                radius *= 2.0;
            }
            xi = trial;
            cur = next;
            last_step = pn;
        } else {
            radius = 0.25 * pn;
        }
    }
    let gnorm = norm3(cur.gradient.expect("gradient requested"));
    if converged_or_stalled(gnorm, last_step, norm3(xi), tol) {
        return Ok((xi, cfg.max_iter));
    }
    Err(Error::NoConvergence {
        iterations: cfg.max_iter,
        trace: vec![gnorm],
    })
}

/// One leaf `Σ(λ) = Σ_{ξ(λ),λ}` of the foliation.
#[derive(Clone, Debug)]
pub struct FoliationLeaf {
    pub lambda: f64,
    pub xi: [f64; 3],
    pub kappa: f64,
    pub hawking_mass: f64,
    pub hessian_min_eig: f64,
    /// `min_y ḡ(∂_λΨ, y)` for `Ψ(y, λ) = λξ(λ) + (λ + u)y`.
    pub transversality_margin: f64,
    pub gradient_norm: f64,
    pub state: LSState,
}

impl FoliationLeaf {
    pub const CSV_HEADER: [&'static str; 8] = [
        "lambda",
        "xi1",
        "xi2",
        "xi3",
        "kappa",
        "hawking_mass",
        "hessian_min_eig",
        "transversality_margin",
    ];

    pub fn csv_row(&self) -> Vec<String> {
        [
            self.lambda,
            self.xi[0],
            self.xi[1],
            self.xi[2],
            self.kappa,
            self.hawking_mass,
            self.hessian_min_eig,
            self.transversality_margin,
        ]
        .iter()
        .map(|v| format!("{v:e}"))
        .collect()
    }
}

#[derive(Clone, Debug)]
pub struct Foliation {
    pub leaves: Vec<FoliationLeaf>,
    pub kappa_decreasing: bool,
    /// Leaves whose transversality margin or Hessian fails.
    pub violations: Vec<String>,
}

/// Transversality margin of the leaf at `(ξ, λ)` from `λ`-differences of the
/// gradient and of `u`.
pub fn transversality_margin(
    metric: Arc<AmbientMetric>,
    xi: [f64; 3],
    lambda: f64,
    hessian: &[[f64; 3]; 3],
    cfg: &EnergyConfig,
    warm: Option<&LSState>,
) -> Result<f64> {
    let h = cfg.lambda_step * lambda;
    let gradient_at = |lam: f64| -> Result<[f64; 3]> {
        let mut ev = GEvaluator::new(metric.clone(), lam, cfg)?;
        if let Some(st) = warm {
            ev = ev.with_warm_start(st);
        }
        Ok(ev.evaluate(xi, 1, false)?.0.gradient.expect("gradient requested"))
    };
    let gp = gradient_at(lambda + h)?;
    let gm = gradient_at(lambda - h)?;
    let dg = nalgebra::Vector3::from_fn(|i, _| (gp[i] - gm[i]) / (2.0 * h));
    let hm = Matrix3::from_fn(|i, j| hessian[i][j]);
    let xi_dot = -hm
        .try_inverse()
        .ok_or_else(|| Error::Singular("Hessian of G is singular at the leaf".into()))?
        * dg;
    let xi_dot = [xi_dot[0], xi_dot[1], xi_dot[2]];
    let solve_at = |sign: f64| -> Result<LSState> {
        let lam = lambda + sign * h;
        let p = [
            xi[0] + sign * h * xi_dot[0],
            xi[1] + sign * h * xi_dot[1],
            xi[2] + sign * h * xi_dot[2],
        ];
        let mut ev = GEvaluator::new(metric.clone(), lam, cfg)?;
        if let Some(st) = warm {
            ev = ev.with_warm_start(st);
        }
        ev.solve(p, None)
    };
    let up = solve_at(1.0)?;
    let um = solve_at(-1.0)?;
    let grid = up.surface.grid.clone();
    let du = grid.synthesize(&up.u().add(&um.u().scaled(-1.0)));
    let mut margin = f64::INFINITY;
    for (k, d) in du.iter().enumerate() {
        let y = grid.point(k);
        let v = 1.0 + dot3(xi, y) + lambda * dot3(xi_dot, y) + d / (2.0 * h);
        margin = margin.min(v);
    }
    Ok(margin)
}

/// Continuation in `λ` through the requested radii, warm-starting `ξ` and
/// `u`, with geometric steps bounded by the continuation factor. Failed steps
/// are bisected.
pub fn build_foliation(
    metric: Arc<AmbientMetric>,
    lambdas: &[f64],
    init: [f64; 3],
    cfg: &EnergyConfig,
) -> Result<Foliation> {
    cfg.validate()?;
    if metric.is_flat() {
        return Err(Error::Unsupported(
            "degenerate-flat: G vanishes identically, every xi is critical".into(),
        ));
    }
    if lambdas.is_empty() || lambdas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("lambda grid must be non-empty and increasing"));
    }
    let mut leaves = vec![];
    let mut violations = vec![];
    let mut lam = lambdas[0];
    let mut cp = find_critical_point(metric.clone(), lam, init, CriticalKind::Minimum, cfg)?;
    for &target in lambdas {
        let mut factor = cfg.continuation_factor;
        while lam < target {
            let next = (lam * factor).min(target);
            let warm = cp.state.as_ref();
            match find_critical_point_from(metric.clone(), next, cp.eval.xi, CriticalKind::Minimum, cfg, warm) {
                Ok(c) => {
                    cp = c;
                    lam = next;
                    factor = cfg.continuation_factor;
                }
                Err(e) => {
                    factor = factor.sqrt();
                    if factor < 1.0 + 1e-4 {
                        return Err(e);
                    }
                }
            }
        }
        let state = cp.state.clone().expect("solved state");
        let hess = cp.eval.hessian.expect("hessian requested");
        let margin = transversality_margin(metric.clone(), cp.eval.xi, lam, &hess, cfg, Some(&state))?;
        let geo = geometry(&state.surface)?;
        let rep = report_from(&state.surface, &geo);
        let leaf = FoliationLeaf {
            lambda: lam,
            xi: cp.eval.xi,
            kappa: state.kappa,
            hawking_mass: rep.hawking_mass,
            hessian_min_eig: cp.hessian_eigenvalues[0],
            transversality_margin: margin,
            gradient_norm: cp.gradient_norm,
            state,
        };
        if !(leaf.transversality_margin > 0.0) {
            violations.push(format!(
                "lambda = {}: transversality margin {} is not positive",
                leaf.lambda, leaf.transversality_margin
            ));
        }
        if !(leaf.hessian_min_eig > 0.0) {
            violations.push(format!(
                "lambda = {}: Hessian minimum eigenvalue {} is not positive",
                leaf.lambda, leaf.hessian_min_eig
            ));
        }
        leaves.push(leaf);
    }
    let kappa_decreasing = leaves.windows(2).all(|w| w[1].kappa < w[0].kappa);
    if !kappa_decreasing {
        violations.push("kappa is not strictly decreasing in lambda".into());
    }
    Ok(Foliation {
        leaves,
        kappa_decreasing,
        violations,
    })
}

/// One row of a radial monotonicity scan.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RadialSample {
    pub radius: f64,
    pub value: f64,
    /// `ξ·∇G/|ξ|`.
    pub radial_derivative: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub lambda: f64,
    pub direction: [f64; 3],
    pub samples: Vec<RadialSample>,
    /// Radii where the radial derivative is not positive.
    pub violations: Vec<f64>,
    /// Consecutive radii between which the radial derivative changes sign.
    pub sign_changes: Vec<(f64, f64)>,
}

/// Tabulate `ξ·∇G_λ/|ξ|` along the ray `r a`.
pub fn monotonicity_scan(
    metric: Arc<AmbientMetric>,
    lambda: f64,
    radii: &[f64],
    direction: [f64; 3],
    cfg: &EnergyConfig,
) -> Result<MonotonicityReport> {
    let n = norm3(direction);
    if !(n > 0.0) {
        return Err(Error::invalid("scan direction must be nonzero"));
    }
    let a = [direction[0] / n, direction[1] / n, direction[2] / n];
    let mut ev = GEvaluator::new(metric, lambda, cfg)?;
    let mut samples = vec![];
    for &r in radii {
        let regime = regime_of([r, 0.0, 0.0], cfg.solver.delta)?;
        let (value, d1, _, _) = ev.ray_jet(a, r, regime)?;
        samples.push(RadialSample {
            radius: r,
            value,
            radial_derivative: d1,
        });
    }
    Ok(summarize_scan(lambda, a, samples))
}

pub fn summarize_scan(lambda: f64, direction: [f64; 3], samples: Vec<RadialSample>) -> MonotonicityReport {
    let violations = samples
        .iter()
        .filter(|s| !(s.radial_derivative > 0.0))
        .map(|s| s.radius)
        .collect();
    let sign_changes = samples
        .windows(2)
        .filter(|w| (w[0].radial_derivative > 0.0) != (w[1].radial_derivative > 0.0))
        .map(|w| (w[0].radius, w[1].radius))
        .collect();
    MonotonicityReport {
        lambda,
        direction,
        samples,
        violations,
        sign_changes,
    }
}

/// Expansion of the reduced area of far-outlying CMC spheres.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CmcArea {
    /// `4πλ² − (2π/15)λ⁴R̲ − (π/105)λ⁶Δ̄R̲ − (8π/35)|ξ|⁻⁶`.
    pub area: f64,
    /// `(48π/35)|ξ|⁻⁶ + ½∫_{B_λ(λξ)} ḡ(ξ, λξ − x) R dv̄`.
    pub radial_derivative: f64,
    pub scalar_curvature: f64,
    pub laplacian_scalar_curvature: f64,
    pub volume_term: f64,
}

pub fn cmc_reduced_area(metric: &AmbientMetric, xi: [f64; 3], lambda: f64) -> Result<CmcArea> {
    let t = norm3(xi);
    if !(t > 2.0) {
        return Err(Error::invalid(format!("CMC reduced area needs |xi| > 2, got {t}")));
    }
    let s2 = mass_scale(metric).powi(2);
    let c = scaled_xi(xi, lambda);
    let r0 = metric.scalar_curvature(c)?;
    // Δ̄R from central differences of the analytic gradient.
    let h = 1e-3 * norm3(c);
    let mut lap = 0.0;
    for i in 0..3 {
        let mut p = c;
        let mut m = c;
        p[i] += h;
        m[i] -= h;
        lap += (metric.curvature_jet(p)?.d_scalar[i] - metric.curvature_jet(m)?.d_scalar[i]) / (2.0 * h);
    }
    let volume_term = 0.5
        * metric
            .integrate_weighted_r(
                Region::Ball {
                    center: c,
                    radius: lambda,
                },
                |x| xi[0] * (c[0] - x[0]) + xi[1] * (c[1] - x[1]) + xi[2] * (c[2] - x[2]),
            )?
            .value;
    let l2 = lambda * lambda;
    Ok(CmcArea {
        area: 4.0 * PI * l2 - 2.0 * PI / 15.0 * l2 * l2 * r0 - PI / 105.0 * l2 * l2 * l2 * lap
            - s2 * 8.0 * PI / 35.0 * t.powi(-6),
        radial_derivative: s2 * 48.0 * PI / 35.0 * t.powi(-6) + volume_term,
        scalar_curvature: r0,
        laplacian_scalar_curvature: lap,
        volume_term,
    })
}
