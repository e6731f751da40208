//! Conformally flat ambient metrics `g = Φ⁴ ḡ` on `{|x| > 1}`.
//!
//! Every family is evaluated through analytic jets of the conformal factor
//! `Φ`; curvature follows from the conformal-change formulas
//!
//! ```text
//! Ric_ij = −2 Φ_ij/Φ + 6 Φ_i Φ_j/Φ² − (2 ΔΦ/Φ + 2 |∇Φ|²/Φ²) δ_ij
//! R      = −8 Φ⁻⁵ ΔΦ
//! ```
//!
//! with all derivatives Euclidean. Schwarzschild of mass `m` is handled by
//! rescaling coordinates so that the mass is 2 internally.

use std::f64::consts::{E, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use std::sync::OnceLock;

use crate::harmonics::{gauss_legendre, norm3, SphereGrid};

/// Default inner cutoff radius.
pub const DEFAULT_CUTOFF: f64 = 1.5;

/// Default `ε` of the bump metric `g₃`.
pub const G3_DEFAULT_EPS: f64 = 0.1;

/// Default `δ` of the bump metric `g₃`. Small enough that `|x|²R` is radially
/// nonincreasing away from the first bump, since `max |∇Δ̄χ| ≈ 179`.
pub const G3_DEFAULT_DELTA: f64 = 1e-3;

/// Nodes per band in the pulse potential quadrature.
const BAND_NODES: usize = 64;

/// Gauss–Legendre rule with `BAND_NODES` nodes mapped onto `[a, b]`.
fn band_rule(a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    let (x, w) = RULE.get_or_init(|| gauss_legendre(BAND_NODES));
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    (
        x.iter().map(|t| c + h * t).collect(),
        w.iter().map(|v| v * h).collect(),
    )
}

/// Shape of the one-dimensional bump in a pulse profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BumpShape {
    /// `exp(−1/(1−τ²))` on `[a, b]`, `τ` the affine map onto `[−1, 1]`.
    Symmetric { a: f64, b: f64 },
    /// `e (t − a) exp(−1/(1−τ²))` on `[a, b]`; its slope at the midpoint is 1.
    Tilted { a: f64, b: f64 },
}

impl BumpShape {
    pub fn support(&self) -> (f64, f64) {
        match *self {
            BumpShape::Symmetric { a, b } | BumpShape::Tilted { a, b } => (a, b),
        }
    }

    /// `(χ(t), χ'(t))`.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        let (a, b) = self.support();
        if t <= a || t >= b {
            return (0.0, 0.0);
        }
        let h = 0.5 * (b - a);
        let tau = (t - 0.5 * (a + b)) / h;
        let q = 1.0 - tau * tau;
        let base = (-1.0 / q).exp();
        let dbase = base * (-2.0 * tau / (q * q)) / h;
        match self {
            BumpShape::Symmetric { .. } => (base, dbase),
            BumpShape::Tilted { .. } => (E * (t - a) * base, E * (base + (t - a) * dbase)),
        }
    }
}

/// Pulse profile `S(s) = −B Σ_k base^{−p k} χ(base^{−k} s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    pub shape: BumpShape,
    pub amplitude: f64,
    pub decay_exponent: f64,
    #[serde(default = "default_base")]
    pub base: f64,
}

fn default_base() -> f64 {
    10.0
}

impl PulseSpec {
    /// Profile of the metric `g₂`: bands on `[3, 4]·10^k`, weight `10^{−4k}`.
    pub fn g2(amplitude: f64) -> Self {
        Self {
            shape: BumpShape::Symmetric { a: 3.0, b: 4.0 },
            amplitude,
            decay_exponent: 4.0,
            base: 10.0,
        }
    }

    /// Profile of the metric `g₁`: bands on `[9/8, 11/8]·10^k`.
    pub fn g1(amplitude: f64) -> Self {
        Self {
            shape: BumpShape::Symmetric {
                a: 9.0 / 8.0,
                b: 11.0 / 8.0,
            },
            amplitude,
            decay_exponent: 4.0,
            base: 10.0,
        }
    }

    /// Profile of the metric `g₄`: tilted bands on `[4, 6]·10^k`, weight `10^{−5k}`.
    pub fn g4() -> Self {
        Self {
            shape: BumpShape::Tilted { a: 4.0, b: 6.0 },
            amplitude: 1.0,
            decay_exponent: 5.0,
            base: 10.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let (a, b) = self.shape.support();
        if !(self.amplitude >= 0.0) {
            return Err(Error::invalid("pulse amplitude must be nonnegative so that S <= 0"));
        }
        if !(a > 0.0 && b > a && b < self.base * a) {
            return Err(Error::invalid("pulse bands must be positive and non-overlapping"));
        }
        if !(self.decay_exponent > 3.0) {
            return Err(Error::invalid(
                "pulse decay exponent must exceed 3 for the potential to converge",
            ));
        }
        if !(self.base > 1.0) {
            return Err(Error::invalid("pulse base must exceed 1"));
        }
        Ok(())
    }
}

/// Metric families, all in asymptotic-chart coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum MetricFamily {
    Euclidean,
    Schwarzschild { mass: f64 },
    Pulse(PulseSpec),
    BumpG3 { eps: f64, delta: f64 },
    /// `Φ = 1 + m/(2r) + Σ_n c_n (2r/m)^{-n}` with `n = 2, 3, …`.
    GeneralConformal { mass: f64, coeffs: Vec<f64> },
}

/// Value and derivatives of `Φ` at a point.
#[derive(Clone, Copy, Debug, Default)]
pub struct ConformalJet {
    pub phi: f64,
    pub d: [f64; 3],
    pub dd: [[f64; 3]; 3],
    pub d3: [[[f64; 3]; 3]; 3],
    pub lap: f64,
    pub dlap: [f64; 3],
}

/// Metric components, Christoffel symbols and their inputs at a point.
#[derive(Clone, Copy, Debug)]
pub struct MetricJet {
    pub x: [f64; 3],
    pub g: [[f64; 3]; 3],
    /// `dg[k][i][j] = ∂_k g_ij`.
    pub dg: [[[f64; 3]; 3]; 3],
    /// `ddg[k][l][i][j] = ∂_k ∂_l g_ij`.
    pub ddg: [[[[f64; 3]; 3]; 3]; 3],
    /// `d3g[k][l][n][i][j] = ∂_k ∂_l ∂_n g_ij`.
    pub d3g: [[[[[f64; 3]; 3]; 3]; 3]; 3],
    /// `christoffel[k][i][j] = Γ^k_ij`.
    pub christoffel: [[[f64; 3]; 3]; 3],
}

/// Curvature data at a point.
#[derive(Clone, Copy, Debug)]
pub struct CurvatureJet {
    pub ric: [[f64; 3]; 3],
    pub scalar: f64,
    pub d_scalar: [f64; 3],
    pub einstein: [[f64; 3]; 3],
    /// Conformal factor power `Φ⁴`, so that `g_ij = conformal δ_ij`.
    pub conformal: f64,
}

/// Region for curvature integrals.
#[derive(Clone, Copy, Debug)]
pub enum Region {
    Ball { center: [f64; 3], radius: f64 },
    ExteriorOfBall { center: [f64; 3], radius: f64 },
}

/// Integral with an error estimate.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

#[derive(Clone, Debug)]
struct PulseData {
    spec: PulseSpec,
    m1: f64,
    m2: f64,
}

/// An evaluated metric family with its inner cutoff.
#[derive(Clone, Debug)]
pub struct AmbientMetric {
    pub family: MetricFamily,
    pub cutoff: f64,
    /// Coordinate scale `m/2` relating physical to internal coordinates.
    pub scale: f64,
    pulse: Option<PulseData>,
}

/// Schwarzschild metric of mass `m`.
pub fn make_schwarzschild(m: f64) -> Result<AmbientMetric> {
    AmbientMetric::new(MetricFamily::Schwarzschild { mass: m })
}

/// Pulse metric `(1 + |x|⁻¹ + Ψ(|x|))⁴ ḡ`.
///
/// Large amplitudes drive `Φ` negative near the origin; the inner cutoff is
/// then raised past the last radius where `Φ < 1/2`.
pub fn make_pulse_metric(spec: PulseSpec) -> Result<AmbientMetric> {
    let probe = AmbientMetric::with_cutoff(MetricFamily::Pulse(spec.clone()), f64::INFINITY)?;
    let mut cutoff = DEFAULT_CUTOFF;
    let mut r = 1.0;
    while r < 1e7 {
        if probe.conformal_jet_unchecked([r, 0.0, 0.0]).phi < 0.5 {
            cutoff = cutoff.max(r * 1.01);
        }
        r *= 1.01;
    }
    AmbientMetric::with_cutoff(MetricFamily::Pulse(spec), cutoff)
}

/// Bump metric `[1 + |x|⁻¹ − ε(|x|⁻² + δ ψ(x))]⁴ ḡ`.
pub fn make_bump_metric_g3(eps: f64, delta: f64) -> Result<AmbientMetric> {
    AmbientMetric::new(MetricFamily::BumpG3 { eps, delta })
}

impl AmbientMetric {
    pub fn new(family: MetricFamily) -> Result<Self> {
        Self::with_cutoff(family, DEFAULT_CUTOFF)
    }

    pub fn with_cutoff(family: MetricFamily, cutoff: f64) -> Result<Self> {
        let mut scale = 1.0;
        let mut pulse = None;
        match &family {
            MetricFamily::Euclidean => {}
            MetricFamily::Schwarzschild { mass } | MetricFamily::GeneralConformal { mass, .. } => {
                if !(*mass > 0.0) {
                    return Err(Error::invalid(format!("mass must be positive, got {mass}")));
                }
                scale = mass / 2.0;
            }
            MetricFamily::Pulse(spec) => {
                spec.validate()?;
                let (a, b) = spec.shape.support();
                let (t, w) = band_rule(a, b);
                let mut m1 = 0.0;
                let mut m2 = 0.0;
                for (t, w) in t.iter().zip(&w) {
                    let c = spec.shape.eval(*t).0;
                    m1 += w * t * c;
                    m2 += w * t * t * c;
                }
                pulse = Some(PulseData {
                    spec: spec.clone(),
                    m1,
                    m2,
                });
            }
            MetricFamily::BumpG3 { eps, delta } => {
                if !(*eps >= 0.0 && *delta >= 0.0) {
                    return Err(Error::invalid("g3 parameters must be nonnegative"));
                }
            }
        }
        let metric = Self {
            family,
            cutoff,
            scale,
            pulse,
        };
        metric.check_positive()?;
        Ok(metric)
    }

    fn check_positive(&self) -> Result<()> {
        let mut r = self.cutoff.max(1.0) * self.scale * 1.0001;
        while r < 1e7 {
            for dir in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] {
                let x = [r * dir[0], r * dir[1], r * dir[2]];
                let phi = self.conformal_jet_unchecked(x).phi;
                if !(phi > 0.0) || !phi.is_finite() {
                    return Err(Error::invalid(format!(
                        "conformal factor not positive at {x:?}"
                    )));
                }
            }
            r *= 1.07;
        }
        Ok(())
    }

    pub fn is_flat(&self) -> bool {
        matches!(self.family, MetricFamily::Euclidean)
    }

    /// Rotationally symmetric about the origin.
    pub fn is_radial(&self) -> bool {
        !matches!(self.family, MetricFamily::BumpG3 { .. })
    }

    /// ADM mass of the family.
    pub fn mass(&self) -> f64 {
        match self.family {
            MetricFamily::Euclidean => 0.0,
            _ => 2.0 * self.scale,
        }
    }

    fn check(&self, x: [f64; 3]) -> Result<()> {
        if norm3(x) <= self.cutoff * self.scale_for_cutoff() {
            return Err(Error::Domain {
                point: x,
                cutoff: self.cutoff * self.scale_for_cutoff(),
            });
        }
        Ok(())
    }

    fn scale_for_cutoff(&self) -> f64 {
        if matches!(self.family, MetricFamily::Euclidean) {
            0.0
        } else {
            self.scale
        }
    }

    pub fn conformal_jet(&self, x: [f64; 3]) -> Result<ConformalJet> {
        self.check(x)?;
        Ok(self.conformal_jet_unchecked(x))
    }

    /// Jet of `Φ` without the cutoff check.
    pub fn conformal_jet_unchecked(&self, x: [f64; 3]) -> ConformalJet {
        let s = self.scale;
        let z = [x[0] / s, x[1] / s, x[2] / s];
        let mut jet = match &self.family {
            MetricFamily::Euclidean => {
                return ConformalJet {
                    phi: 1.0,
                    ..Default::default()
                }
            }
            MetricFamily::Schwarzschild { .. } => {
                let r = norm3(z);
                radial_jet(z, [1.0 + 1.0 / r, -1.0 / (r * r), 2.0 / r.powi(3), -6.0 / r.powi(4)])
            }
            MetricFamily::GeneralConformal { coeffs, .. } => {
                let r = norm3(z);
                let mut f = [1.0 + 1.0 / r, -1.0 / (r * r), 2.0 / r.powi(3), -6.0 / r.powi(4)];
                for (i, c) in coeffs.iter().enumerate() {
                    let n = (i + 2) as f64;
                    let p = r.powf(-n);
                    f[0] += c * p;
                    f[1] += -c * n * p / r;
                    f[2] += c * n * (n + 1.0) * p / (r * r);
                    f[3] += -c * n * (n + 1.0) * (n + 2.0) * p / (r * r * r);
                }
                radial_jet(z, f)
            }
            MetricFamily::Pulse(_) => {
                let r = norm3(z);
                let (psi, d1, d2, d3) = self.psi_jet(r);
                radial_jet(
                    z,
                    [
                        1.0 + 1.0 / r + psi,
                        -1.0 / (r * r) + d1,
                        2.0 / r.powi(3) + d2,
                        -6.0 / r.powi(4) + d3,
                    ],
                )
            }
            MetricFamily::BumpG3 { eps, delta } => {
                let r = norm3(z);
                let mut jet = radial_jet(
                    z,
                    [
                        1.0 + 1.0 / r - eps / (r * r),
                        -1.0 / (r * r) + 2.0 * eps / r.powi(3),
                        2.0 / r.powi(3) - 6.0 * eps / r.powi(4),
                        -6.0 / r.powi(4) + 24.0 * eps / r.powi(5),
                    ],
                );
                let b = bump_sum_jet(z);
                let c = eps * delta;
                jet.phi -= c * b.phi;
                for i in 0..3 {
                    jet.d[i] -= c * b.d[i];
                    jet.dlap[i] -= c * b.dlap[i];
                    for j in 0..3 {
                        jet.dd[i][j] -= c * b.dd[i][j];
                        for k in 0..3 {
                            jet.d3[i][j][k] -= c * b.d3[i][j][k];
                        }
                    }
                }
                jet.lap -= c * b.lap;
                jet
            }
        };
        if s != 1.0 {
            for i in 0..3 {
                jet.d[i] /= s;
                jet.dlap[i] /= s * s * s;
                for j in 0..3 {
                    jet.dd[i][j] /= s * s;
                    for k in 0..3 {
                        jet.d3[i][j][k] /= s * s * s;
                    }
                }
            }
            jet.lap /= s * s;
        }
        jet
    }

    /// Pulse profile `S(s)` and `S'(s)` in internal units.
    pub fn pulse_profile(&self, s: f64) -> (f64, f64) {
        let Some(p) = &self.pulse else {
            return (0.0, 0.0);
        };
        let spec = &p.spec;
        let (a, b) = spec.shape.support();
        if s < a {
            return (0.0, 0.0);
        }
        let k = ((s / a).ln() / spec.base.ln()).floor() as i32;
        let mut out = (0.0, 0.0);
        for kk in [k - 1, k] {
            if kk < 0 {
                continue;
            }
            let sc = spec.base.powi(kk);
            if s >= a * sc && s <= b * sc {
                let (c, dc) = spec.shape.eval(s / sc);
                let w = -spec.amplitude * spec.base.powf(-spec.decay_exponent * kk as f64);
                out.0 += w * c;
                out.1 += w * dc / sc;
            }
        }
        out
    }

    /// `Ψ, Ψ', Ψ'', Ψ'''` at radius `s` (internal units).
    ///
    /// With `A(s) = ∫_s^∞ t² S` and `B(s) = ∫_s^∞ t S` one has
    /// `Ψ = A/s − B`, `Ψ' = −A/s²`, `Ψ'' = 2A/s³ + S`,
    /// `Ψ''' = −6A/s⁴ − 2S/s + S'`.
    pub fn psi_jet(&self, s: f64) -> (f64, f64, f64, f64) {
        let Some(p) = &self.pulse else {
            return (0.0, 0.0, 0.0, 0.0);
        };
        let (a_int, b_int) = self.pulse_moments_above(p, s);
        let (sv, dsv) = self.pulse_profile(s);
        (
            a_int / s - b_int,
            -a_int / (s * s),
            2.0 * a_int / s.powi(3) + sv,
            -6.0 * a_int / s.powi(4) - 2.0 * sv / s + dsv,
        )
    }

    fn pulse_moments_above(&self, p: &PulseData, s: f64) -> (f64, f64) {
        let spec = &p.spec;
        let (a, b) = spec.shape.support();
        let base = spec.base;
        let pe = spec.decay_exponent;
        let mut a_int = 0.0;
        let mut b_int = 0.0;
        let mut k0: i32 = 0;
        if s > a {
            k0 = ((s / a).ln() / base.ln()).floor() as i32;
            // band k0 may contain s; bands below lie entirely under s
            let sc = base.powi(k0);
            let (lo, hi) = (a * sc, b * sc);
            if s < hi {
                let (t, w) = band_rule(s.max(lo), hi);
                let wk = -spec.amplitude * base.powf(-pe * k0 as f64);
                for (t, w) in t.iter().zip(&w) {
                    let c = spec.shape.eval(t / sc).0 * wk;
                    a_int += w * t * t * c;
                    b_int += w * t * c;
                }
            }
            k0 += 1;
        }
        // Σ_{k ≥ k0} of full-band moments in closed form.
        let r2 = base.powf(3.0 - pe);
        let r1 = base.powf(2.0 - pe);
        a_int += -spec.amplitude * p.m2 * r2.powi(k0) / (1.0 - r2);
        b_int += -spec.amplitude * p.m1 * r1.powi(k0) / (1.0 - r1);
        (a_int, b_int)
    }

    /// Metric components, their partials up to third order and Christoffel symbols.
    pub fn metric_jet(&self, x: [f64; 3]) -> Result<MetricJet> {
        let c = self.conformal_jet(x)?;
        let (p, d, dd, d3) = (c.phi, c.d, c.dd, c.d3);
        let mut g = [[0.0; 3]; 3];
        let mut dg = [[[0.0; 3]; 3]; 3];
        let mut ddg = [[[[0.0; 3]; 3]; 3]; 3];
        let mut d3g = [[[[[0.0; 3]; 3]; 3]; 3]; 3];
        let mut gam = [[[0.0; 3]; 3]; 3];
        for i in 0..3 {
            g[i][i] = p.powi(4);
            for k in 0..3 {
                dg[k][i][i] = 4.0 * p.powi(3) * d[k];
                for l in 0..3 {
                    ddg[k][l][i][i] = 12.0 * p * p * d[k] * d[l] + 4.0 * p.powi(3) * dd[k][l];
                    for n in 0..3 {
                        d3g[k][l][n][i][i] = 24.0 * p * d[k] * d[l] * d[n]
                            + 12.0 * p * p * (dd[k][l] * d[n] + dd[k][n] * d[l] + dd[l][n] * d[k])
                            + 4.0 * p.powi(3) * d3[k][l][n];
                    }
                }
            }
        }
        let dlog: Vec<f64> = (0..3).map(|k| 2.0 * d[k] / p).collect();
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    let mut v = 0.0;
                    if k == i {
                        v += dlog[j];
                    }
                    if k == j {
                        v += dlog[i];
                    }
                    if i == j {
                        v -= dlog[k];
                    }
                    gam[k][i][j] = v;
                }
            }
        }
        Ok(MetricJet {
            x,
            g,
            dg,
            ddg,
            d3g,
            christoffel: gam,
        })
    }

    pub fn curvature_jet(&self, x: [f64; 3]) -> Result<CurvatureJet> {
        self.check(x)?;
        Ok(curvature_from_conformal(&self.conformal_jet_unchecked(x)))
    }

    /// Scalar curvature.
    pub fn scalar_curvature(&self, x: [f64; 3]) -> Result<f64> {
        let c = self.conformal_jet(x)?;
        Ok(-8.0 * c.lap / c.phi.powi(5))
    }

    /// Scalar curvature at radius `s` for rotationally symmetric families.
    fn radial_scalar(&self, s: f64) -> f64 {
        let c = self.conformal_jet_unchecked([0.0, 0.0, s]);
        -8.0 * c.lap / c.phi.powi(5)
    }

    /// `xⁱ ∂_i (|x|² R)`.
    pub fn radial_growth(&self, x: [f64; 3]) -> Result<f64> {
        let c = self.curvature_jet(x)?;
        let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
        let xdr = x[0] * c.d_scalar[0] + x[1] * c.d_scalar[1] + x[2] * c.d_scalar[2];
        Ok(2.0 * r2 * c.scalar + r2 * xdr)
    }

    /// Radii in physical units where the scalar curvature may be nonzero,
    /// for radial families: a sorted list of intervals, possibly unbounded.
    fn curvature_support(&self, lo: f64, hi: f64) -> Vec<(f64, f64)> {
        match &self.family {
            MetricFamily::Euclidean | MetricFamily::Schwarzschild { .. } => vec![],
            MetricFamily::Pulse(spec) => {
                let (a, b) = spec.shape.support();
                let mut out = vec![];
                let mut k = 0;
                loop {
                    let sc = spec.base.powi(k);
                    let (l, h) = (a * sc * self.scale, b * sc * self.scale);
                    if l >= hi {
                        break;
                    }
                    if h > lo {
                        out.push((l.max(lo), h.min(hi)));
                    }
                    k += 1;
                }
                out
            }
            _ => {
                // smooth power-law tails: log-spaced pieces
                let mut out = vec![];
                let mut l = lo;
                while l < hi {
                    let h = (l * 2.0).min(hi);
                    out.push((l, h));
                    l = h;
                }
                out
            }
        }
    }

    /// Euclidean-volume integral of `R` over a ball or the exterior of a ball.
    pub fn integrate_r(&self, region: Region) -> Result<Estimate> {
        self.integrate_weighted_r(region, |_| 1.0)
    }

    /// Euclidean-volume integral of `w(x) R(x)` over a region.
    pub fn integrate_weighted_r(
        &self,
        region: Region,
        weight: impl Fn([f64; 3]) -> f64,
    ) -> Result<Estimate> {
        let (center, radius, exterior) = match region {
            Region::Ball { center, radius } => (center, radius, false),
            Region::ExteriorOfBall { center, radius } => (center, radius, true),
        };
        let d = norm3(center);
        let cut = self.cutoff * self.scale_for_cutoff();
        if !exterior && d - radius <= cut {
            return Err(Error::invalid("ball meets the inner cutoff"));
        }
        if exterior && d + radius < cut {
            return Err(Error::invalid("exterior region meets the inner cutoff"));
        }
        if exterior && d > radius {
            return Err(Error::invalid(
                "exterior integrals are supported only for balls containing the origin",
            ));
        }
        match self.family {
            MetricFamily::Euclidean | MetricFamily::Schwarzschild { .. } => {
                return Ok(Estimate {
                    value: 0.0,
                    error: 0.0,
                })
            }
            _ => {}
        }
        if self.is_radial() {
            self.integrate_r_radial(center, radius, exterior, &weight)
        } else {
            self.integrate_r_cartesian(center, radius, exterior, &weight)
        }
    }

    fn integrate_r_radial(
        &self,
        center: [f64; 3],
        radius: f64,
        exterior: bool,
        weight: &dyn Fn([f64; 3]) -> f64,
    ) -> Result<Estimate> {
        let d = norm3(center);
        let lam = radius;
        let axis = if d > 0.0 {
            [center[0] / d, center[1] / d, center[2] / d]
        } else {
            [0.0, 0.0, 1.0]
        };
        // Weighted spherical caps need the angular integral of `weight`; when
        // the weight is constant a closed-form solid angle is used.
        let constant_weight = {
            let w0 = weight([1.0, 0.0, 0.0]);
            [[0.0, 1.0, 0.0], [3.0, -2.0, 5.0], [-7.0, 1.0, 0.5]]
                .iter()
                .all(|p| weight(*p) == w0)
        };
        let inside_angle = |s: f64| -> f64 {
            // Solid angle of the sphere of radius s inside the ball.
            if d < lam && s <= lam - d {
                return 4.0 * PI;
            }
            if s >= d + lam || (d > lam && s <= d - lam) {
                return 0.0;
            }
            let c = ((s * s + d * d - lam * lam) / (2.0 * s * d)).clamp(-1.0, 1.0);
            2.0 * PI * (1.0 - c)
        };
        let (mu, mw) = gauss_legendre(32);
        let n_phi = 32;
        let shell = |s: f64| -> f64 {
            if constant_weight {
                let w0 = weight([1.0, 0.0, 0.0]);
                let om = inside_angle(s);
                let om = if exterior { 4.0 * PI - om } else { om };
                return w0 * om;
            }
            // The part inside the ball is the cap y·axis ≥ c; integrate over
            // the cap (or its complement) in (y·axis, φ) coordinates.
            let c = 1.0 - inside_angle(s) / (2.0 * PI);
            let (lo, hi) = if exterior { (-1.0, c) } else { (c, 1.0) };
            if hi - lo <= 0.0 {
                return 0.0;
            }
            let mut total = 0.0;
            for (m, w) in mu.iter().zip(&mw) {
                let z = 0.5 * (lo + hi) + 0.5 * (hi - lo) * m;
                let r = (1.0 - z * z).max(0.0).sqrt();
                for j in 0..n_phi {
                    let phi = 2.0 * PI * j as f64 / n_phi as f64;
                    let y = rotate_to_axis([r * phi.cos(), r * phi.sin(), z], axis);
                    total += w * weight([s * y[0], s * y[1], s * y[2]]);
                }
            }
            total * 0.5 * (hi - lo) * 2.0 * PI / n_phi as f64
        };
        let (lo, hi) = if exterior {
            ((lam - d).max(self.cutoff * self.scale), f64::INFINITY)
        } else {
            ((d - lam).max(0.0), d + lam)
        };
        let mut breaks = vec![lo];
        if d > 0.0 && !exterior {
            breaks.push((d - lam).abs());
        }
        breaks.push(d + lam);
        let mut value = 0.0;
        let mut last_band = 0.0;
        let mut prev_band = 0.0;
        let far = if hi.is_finite() { hi } else { 1e15_f64.max(1e4 * (d + lam)) };
        for (a, b) in self.curvature_support(lo, far) {
            let mut pts = vec![a, b];
            for br in &breaks {
                if *br > a && *br < b {
                    pts.push(*br);
                }
            }
            pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let mut band = 0.0;
            for w in pts.windows(2) {
                let (t, wt) = band_rule(w[0], w[1]);
                for (s, q) in t.iter().zip(&wt) {
                    let rs = self.radial_scalar(*s);
                    if rs != 0.0 {
                        band += q * s * s * rs * shell(*s);
                    }
                }
            }
            value += band;
            prev_band = last_band;
            last_band = band;
            if exterior && band.abs() < 1e-18 * value.abs() && b > 10.0 * (d + lam) {
                break;
            }
        }
        let mut error = 1e-13 * value.abs();
        if exterior {
            // geometric tail bound from the last two band contributions
            if prev_band != 0.0 {
                let ratio = (last_band / prev_band).abs();
                if ratio < 1.0 {
                    error += last_band.abs() * ratio / (1.0 - ratio);
                }
            }
            // power-law tail for smooth profiles
            if let MetricFamily::GeneralConformal { .. } = self.family {
                error += last_band.abs();
            }
        }
        Ok(Estimate { value, error })
    }

    fn integrate_r_cartesian(
        &self,
        center: [f64; 3],
        radius: f64,
        exterior: bool,
        weight: &dyn Fn([f64; 3]) -> f64,
    ) -> Result<Estimate> {
        let ang = SphereGrid::new(48);
        let mut value = 0.0;
        let mut pieces: Vec<(f64, f64)> = vec![];
        if exterior {
            let mut a = radius;
            let far = 1e6 * radius.max(1.0);
            while a < far {
                pieces.push((a, a * 1.5));
                a *= 1.5;
            }
        } else {
            pieces.push((0.0, 0.5 * radius));
            pieces.push((0.5 * radius, radius));
        }
        let mut last = 0.0;
        for (a, b) in &pieces {
            let (t, wt) = band_rule(*a, *b);
            let mut piece = 0.0;
            for (rho, q) in t.iter().zip(&wt) {
                let mut sh = 0.0;
                for k in 0..ang.n_nodes() {
                    let y = ang.point(k);
                    let x = [
                        center[0] + rho * y[0],
                        center[1] + rho * y[1],
                        center[2] + rho * y[2],
                    ];
                    let r = self.scalar_curvature(x)?;
                    sh += ang.weight(k) * r * weight(x);
                }
                piece += q * rho * rho * sh;
            }
            value += piece;
            last = piece;
        }
        let mut error = 1e-10 * value.abs();
        if exterior {
            // R decays like |x|^-4, so the omitted tail is below the last
            // piece times the geometric factor of a |x|^-1 tail.
            error += 2.0 * last.abs();
        }
        Ok(Estimate { value, error })
    }
}

/// Jet of a radial function `F(|x|)` from `[F, F', F'', F''']`.
fn radial_jet(x: [f64; 3], f: [f64; 4]) -> ConformalJet {
    let r = norm3(x);
    let n = [x[0] / r, x[1] / r, x[2] / r];
    let mut jet = ConformalJet {
        phi: f[0],
        ..Default::default()
    };
    for i in 0..3 {
        jet.d[i] = f[1] * n[i];
        for j in 0..3 {
            let dij = if i == j { 1.0 } else { 0.0 };
            jet.dd[i][j] = f[2] * n[i] * n[j] + f[1] / r * (dij - n[i] * n[j]);
        }
    }
    // ∂_ijk F = F''' n_i n_j n_k + (F''/r − F'/r²)(P_ij n_k + P_ik n_j + P_jk n_i)
    let c = f[2] / r - f[1] / (r * r);
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                let p = |a: usize, b: usize| (if a == b { 1.0 } else { 0.0 }) - n[a] * n[b];
                jet.d3[i][j][k] = f[3] * n[i] * n[j] * n[k]
                    + c * (p(i, j) * n[k] + p(i, k) * n[j] + p(j, k) * n[i]);
            }
        }
    }
    jet.lap = f[2] + 2.0 * f[1] / r;
    let dl = f[3] + 2.0 * f[2] / r - 2.0 * f[1] / (r * r);
    for i in 0..3 {
        jet.dlap[i] = dl * n[i];
    }
    jet
}

/// `χ(y) = exp(−1/(1−|y|²))` on the unit ball.
pub fn standard_bump(y: [f64; 3]) -> f64 {
    let q = y[0] * y[0] + y[1] * y[1] + y[2] * y[2];
    if q >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - q)).exp()
    }
}

/// Jet of the standard bump.
fn bump_jet(y: [f64; 3]) -> ConformalJet {
    let q = y[0] * y[0] + y[1] * y[1] + y[2] * y[2];
    if q >= 1.0 {
        return ConformalJet::default();
    }
    let om = 1.0 - q;
    let chi = (-1.0 / om).exp();
    let g1 = -1.0 / (om * om);
    let g2 = -2.0 / om.powi(3);
    let mut jet = ConformalJet {
        phi: chi,
        ..Default::default()
    };
    for i in 0..3 {
        jet.d[i] = chi * g1 * 2.0 * y[i];
        for j in 0..3 {
            let dij = if i == j { 1.0 } else { 0.0 };
            jet.dd[i][j] = chi * (4.0 * (g1 * g1 + g2) * y[i] * y[j] + 2.0 * g1 * dij);
        }
    }
    // ∂_ij χ = χ (α y_i y_j + β δ_ij) with α = 4(g'² + g''), β = 2g'
    let g3 = -6.0 / om.powi(4);
    let alpha = 4.0 * (g1 * g1 + g2);
    let dalpha = 4.0 * (2.0 * g1 * g2 + g3);
    let dbeta = 2.0 * g2;
    for i in 0..3 {
        for j in 0..3 {
            let dij = if i == j { 1.0 } else { 0.0 };
            for k in 0..3 {
                let dik = if i == k { 1.0 } else { 0.0 };
                let djk = if j == k { 1.0 } else { 0.0 };
                jet.d3[i][j][k] = chi
                    * (2.0 * g1 * y[k] * (alpha * y[i] * y[j] + 2.0 * g1 * dij)
                        + 2.0 * dalpha * y[k] * y[i] * y[j]
                        + alpha * (dik * y[j] + djk * y[i])
                        + 2.0 * dbeta * y[k] * dij);
            }
        }
    }
    let a = 2.0 * (q * q + 4.0 * q - 3.0) / om.powi(4);
    let da = 2.0 * ((2.0 * q + 4.0) / om.powi(4) + 4.0 * (q * q + 4.0 * q - 3.0) / om.powi(5));
    jet.lap = chi * a;
    for i in 0..3 {
        jet.dlap[i] = (chi * g1 * a + chi * da) * 2.0 * y[i];
    }
    jet
}

/// Jet of `ψ(x) = Σ_k 10^{−2k} χ(2·10^{−k}(x − 10^k e₁))`.
fn bump_sum_jet(x: [f64; 3]) -> ConformalJet {
    let mut out = ConformalJet::default();
    let r = norm3(x);
    let kmax = ((2.0 * r + 1.0).log10().ceil() as i32).max(0) + 1;
    for k in 0..=kmax {
        let c = 10f64.powi(k);
        if (x[0] - c).abs() > 0.5 * c {
            continue;
        }
        let a = 2.0 / c;
        let y = [a * (x[0] - c), a * x[1], a * x[2]];
        let b = bump_jet(y);
        if b.phi == 0.0 {
            continue;
        }
        let w = 1.0 / (c * c);
        out.phi += w * b.phi;
        out.lap += w * a * a * b.lap;
        for i in 0..3 {
            out.d[i] += w * a * b.d[i];
            out.dlap[i] += w * a * a * a * b.dlap[i];
            for j in 0..3 {
                out.dd[i][j] += w * a * a * b.dd[i][j];
                for l in 0..3 {
                    out.d3[i][j][l] += w * a * a * a * b.d3[i][j][l];
                }
            }
        }
    }
    out
}

/// Curvature of `Φ⁴ ḡ` from a jet of `Φ`.
pub fn curvature_from_conformal(c: &ConformalJet) -> CurvatureJet {
    let phi = c.phi;
    let grad2 = c.d[0] * c.d[0] + c.d[1] * c.d[1] + c.d[2] * c.d[2];
    let trace = 2.0 * c.lap / phi + 2.0 * grad2 / (phi * phi);
    let mut ric = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            ric[i][j] = -2.0 * c.dd[i][j] / phi + 6.0 * c.d[i] * c.d[j] / (phi * phi);
        }
        ric[i][i] -= trace;
    }
    let p4 = phi.powi(4);
    let scalar = -8.0 * c.lap / phi.powi(5);
    let mut d_scalar = [0.0; 3];
    for k in 0..3 {
        d_scalar[k] = -8.0 * (c.dlap[k] / phi.powi(5) - 5.0 * c.lap * c.d[k] / phi.powi(6));
    }
    let mut einstein = ric;
    for i in 0..3 {
        einstein[i][i] -= 0.5 * scalar * p4;
    }
    CurvatureJet {
        ric,
        scalar,
        d_scalar,
        einstein,
        conformal: p4,
    }
}

/// Rotation taking `e₃` to the unit vector `axis`, applied to `y`.
pub fn rotate_to_axis(y: [f64; 3], axis: [f64; 3]) -> [f64; 3] {
    let (a, b, c) = (axis[0], axis[1], axis[2]);
    if c > 1.0 - 1e-15 {
        return y;
    }
    if c < -1.0 + 1e-15 {
        return [y[0], -y[1], -y[2]];
    }
    // Rodrigues rotation about e₃ × axis.
    let s = (a * a + b * b).sqrt();
    let k = [-b / s, a / s, 0.0];
    let cos = c;
    let sin = s;
    let kxy = [
        k[1] * y[2] - k[2] * y[1],
        k[2] * y[0] - k[0] * y[2],
        k[0] * y[1] - k[1] * y[0],
    ];
    let kdy = k[0] * y[0] + k[1] * y[1] + k[2] * y[2];
    [
        y[0] * cos + kxy[0] * sin + k[0] * kdy * (1.0 - cos),
        y[1] * cos + kxy[1] * sin + k[1] * kdy * (1.0 - cos),
        y[2] * cos + kxy[2] * sin + k[2] * kdy * (1.0 - cos),
    ]
}
