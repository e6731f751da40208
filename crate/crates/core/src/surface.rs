//! Radial graphs over coordinate spheres and their geometry.
//!
//! A surface `Σ_{ξ,λ}(u)` is parametrized over the unit sphere by
//! `X(y) = λξ + (λ + u(y)) y`. Derivatives are taken spectrally in the
//! orthonormal frame `(e_θ, e_φ)`; Euclidean quantities (barred) are
//! computed first and converted to `g = Φ⁴ ḡ` through
//!
//! ```text
//! ν = Φ⁻² ν̄,  H = Φ⁻² (H̄ + 4 η),  |h̊|² = Φ⁻⁴ |h̊̄|²,  dμ = Φ⁴ dμ̄,  Δ = Φ⁻⁴ Δ̄
//! ```
//!
//! with `η = ∂_ν̄ Φ / Φ`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harmonics::{dot3, norm3, HarmonicField, SphereGrid};
use crate::metric::{AmbientMetric, MetricFamily};

/// Shared quadrature grid for a band limit.
pub fn shared_grid(l_max: usize) -> Arc<SphereGrid> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<SphereGrid>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("grid cache poisoned");
    map.entry(l_max)
        .or_insert_with(|| Arc::new(SphereGrid::new(l_max)))
        .clone()
}

/// `Σ_{ξ,λ}(u)` in a given ambient metric.
#[derive(Clone, Debug)]
pub struct GraphSurface {
    pub metric: Arc<AmbientMetric>,
    pub grid: Arc<SphereGrid>,
    pub xi: [f64; 3],
    pub lambda: f64,
    pub u: HarmonicField,
}

impl GraphSurface {
    pub fn new(
        metric: Arc<AmbientMetric>,
        grid: Arc<SphereGrid>,
        xi: [f64; 3],
        lambda: f64,
        u: HarmonicField,
    ) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("radius must be positive, got {lambda}")));
        }
        if u.l_max > grid.l_full {
            return Err(Error::invalid(format!(
                "graph band {} exceeds grid capacity {}",
                u.l_max, grid.l_full
            )));
        }
        Ok(Self {
            metric,
            grid,
            xi,
            lambda,
            u,
        })
    }

    /// The coordinate sphere `S_{ξ,λ}`.
    pub fn sphere(
        metric: Arc<AmbientMetric>,
        grid: Arc<SphereGrid>,
        xi: [f64; 3],
        lambda: f64,
    ) -> Result<Self> {
        Self::new(metric, grid, xi, lambda, HarmonicField::zeros(0))
    }

    pub fn with_u(&self, u: HarmonicField) -> Result<Self> {
        Self::new(self.metric.clone(), self.grid.clone(), self.xi, self.lambda, u)
    }

    pub fn center(&self) -> [f64; 3] {
        [
            self.lambda * self.xi[0],
            self.lambda * self.xi[1],
            self.lambda * self.xi[2],
        ]
    }
}

/// Per-node geometric data. Symmetric 2-tensors are stored as
/// `[θθ, θφ, φφ]` in the orthonormal frame of the unit sphere.
#[derive(Clone, Debug)]
pub struct GeometryFields {
    pub position: Vec<[f64; 3]>,
    /// `∂_θ X`, `∂_φ X / sin θ`.
    pub tangents: Vec<[[f64; 3]; 2]>,
    pub normal_flat: Vec<[f64; 3]>,
    /// Unit normal for `g`, in chart components.
    pub normal: Vec<[f64; 3]>,
    pub metric_flat: Vec<[f64; 3]>,
    pub induced: Vec<[f64; 3]>,
    /// Quadrature weights of `dμ̄` and `dμ`.
    pub dmu_flat: Vec<f64>,
    pub dmu: Vec<f64>,
    pub second_form: Vec<[f64; 3]>,
    pub mean_curvature: Vec<f64>,
    pub mean_curvature_flat: Vec<f64>,
    pub trfree_sq: Vec<f64>,
    pub trfree_sq_flat: Vec<f64>,
    pub ric_nn: Vec<f64>,
    pub scalar: Vec<f64>,
    pub phi: Vec<f64>,
    pub eta: Vec<f64>,
    /// `√(1 + |∇ log r|²)`.
    pub slope: Vec<f64>,
    inv_flat: Vec<[f64; 3]>,
    q: Vec<[f64; 2]>,
}

impl GeometryFields {
    pub fn len(&self) -> usize {
        self.position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }

    /// `∫ f dμ`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        compensated_sum(f.iter().zip(&self.dmu).map(|(a, b)| a * b))
    }

    pub fn area(&self) -> f64 {
        compensated_sum(self.dmu.iter().copied())
    }

    /// `|h|² = |h̊|² + H²/2`.
    pub fn h_sq(&self, k: usize) -> f64 {
        self.trfree_sq[k] + 0.5 * self.mean_curvature[k].powi(2)
    }

    /// `∫H²dμ − 16π` without cancellation:
    /// `2∫|h̊̄|²dμ̄ + ∫(8H̄η + 16η²)dμ̄`.
    /// Summed with Neumaier compensation, since the result is small against
    /// its terms.
    pub fn willmore_excess(&self) -> f64 {
        compensated_sum((0..self.len()).flat_map(|k| {
            let (hb, e, w) = (self.mean_curvature_flat[k], self.eta[k], self.dmu_flat[k]);
            [
                w * 2.0 * self.trfree_sq_flat[k],
                w * 8.0 * hb * e,
                w * 16.0 * e * e,
            ]
        }))
    }

    /// Laplace–Beltrami of the induced metric applied to a jet.
    fn laplacian(&self, grad: &[Vec<f64>; 2], hess: &[Vec<f64>; 3]) -> Vec<f64> {
        (0..self.len())
            .map(|k| {
                let gi = self.inv_flat[k];
                let hs = [hess[0][k], hess[1][k], hess[2][k]];
                let tr = gi[0] * hs[0] + 2.0 * gi[1] * hs[1] + gi[2] * hs[2];
                let gr = [grad[0][k], grad[1][k]];
                let up = [gi[0] * gr[0] + gi[1] * gr[1], gi[1] * gr[0] + gi[2] * gr[1]];
                let flat = tr - up[0] * self.q[k][0] - up[1] * self.q[k][1];
                flat / self.phi[k].powi(4)
            })
            .collect()
    }

    /// Frame components of a tangent vector given in chart coordinates.
    fn tangent_coords(&self, k: usize, t: [f64; 3]) -> [f64; 2] {
        let [xa, xb] = self.tangents[k];
        let b = [dot3(t, xa), dot3(t, xb)];
        let gi = self.inv_flat[k];
        [gi[0] * b[0] + gi[1] * b[1], gi[1] * b[0] + gi[2] * b[1]]
    }
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Geometry of a graph surface.
pub fn geometry(surface: &GraphSurface) -> Result<GeometryFields> {
    let grid = &surface.grid;
    let metric = &surface.metric;
    let n = grid.n_nodes();
    let jet = grid.jet(&surface.u);
    let c = surface.center();
    let lam = surface.lambda;
    let cut = metric.cutoff * if metric.is_flat() { 0.0 } else { metric.scale };

    let mut g = GeometryFields {
        position: Vec::with_capacity(n),
        tangents: Vec::with_capacity(n),
        normal_flat: Vec::with_capacity(n),
        normal: Vec::with_capacity(n),
        metric_flat: Vec::with_capacity(n),
        induced: Vec::with_capacity(n),
        dmu_flat: Vec::with_capacity(n),
        dmu: Vec::with_capacity(n),
        second_form: Vec::with_capacity(n),
        mean_curvature: Vec::with_capacity(n),
        mean_curvature_flat: Vec::with_capacity(n),
        trfree_sq: Vec::with_capacity(n),
        trfree_sq_flat: Vec::with_capacity(n),
        ric_nn: Vec::with_capacity(n),
        scalar: Vec::with_capacity(n),
        phi: Vec::with_capacity(n),
        eta: Vec::with_capacity(n),
        slope: Vec::with_capacity(n),
        inv_flat: Vec::with_capacity(n),
        q: Vec::with_capacity(n),
    };
    for k in 0..n {
        let y = grid.point(k);
        let (et, ep) = grid.frame(k);
        let r = lam + jet.f[k];
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::DegenerateSurface {
                node: k,
                reason: format!("radial function {r} is not positive"),
            });
        }
        let ra = [jet.grad[0][k], jet.grad[1][k]];
        let rab = [jet.hess[0][k], jet.hess[1][k], jet.hess[2][k]];
        let rho = [ra[0] / r, ra[1] / r];
        let rho2 = rho[0] * rho[0] + rho[1] * rho[1];
        let v = (1.0 + rho2).sqrt();

        let x = [c[0] + r * y[0], c[1] + r * y[1], c[2] + r * y[2]];
        if norm3(x) <= cut {
            return Err(Error::Domain {
                point: x,
                cutoff: cut,
            });
        }
        let xa = [
            [
                ra[0] * y[0] + r * et[0],
                ra[0] * y[1] + r * et[1],
                ra[0] * y[2] + r * et[2],
            ],
            [
                ra[1] * y[0] + r * ep[0],
                ra[1] * y[1] + r * ep[1],
                ra[1] * y[2] + r * ep[2],
            ],
        ];
        let nb = [
            (y[0] - rho[0] * et[0] - rho[1] * ep[0]) / v,
            (y[1] - rho[0] * et[1] - rho[1] * ep[1]) / v,
            (y[2] - rho[0] * et[2] - rho[1] * ep[2]) / v,
        ];
        let gm = [
            r * r + ra[0] * ra[0],
            ra[0] * ra[1],
            r * r + ra[1] * ra[1],
        ];
        let s = 1.0 / (r * r);
        let gi = [
            s * (1.0 - rho[0] * rho[0] / (v * v)),
            -s * rho[0] * rho[1] / (v * v),
            s * (1.0 - rho[1] * rho[1] / (v * v)),
        ];
        // h̄ = G/(r v) + T with T = (r_a r_b / r − r_ab)/v
        let t = [
            (ra[0] * ra[0] / r - rab[0]) / v,
            (ra[0] * ra[1] / r - rab[1]) / v,
            (ra[1] * ra[1] / r - rab[2]) / v,
        ];
        let git = [
            gi[0] * t[0] + gi[1] * t[1],
            gi[0] * t[1] + gi[1] * t[2],
            gi[1] * t[0] + gi[2] * t[1],
            gi[1] * t[1] + gi[2] * t[2],
        ];
        let tr_t = git[0] + git[3];
        let hbar = 2.0 / (r * v) + tr_t;
        let tt = git[0] * git[0] + 2.0 * git[1] * git[2] + git[3] * git[3];
        let trfree_flat = (tt - 0.5 * tr_t * tr_t).max(0.0);

        let cj = metric.conformal_jet(x)?;
        let phi = cj.phi;
        let eta = dot3(nb, cj.d) / phi;
        let curv = crate::metric::curvature_from_conformal(&cj);
        let mut ric_nn = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                ric_nn += curv.ric[i][j] * nb[i] * nb[j];
            }
        }
        ric_nn /= phi.powi(4);
        let p2 = phi * phi;
        let h = conformal_form(p2, [gm[0] / (r * v) + t[0], gm[1] / (r * v) + t[1], gm[2] / (r * v) + t[2]], eta, gm);

        // Christoffel correction of Δ̄ relative to the round sphere
        let tr_gi = gi[0] + gi[2];
        let gir = [gi[0] * rho[0] + gi[1] * rho[1], gi[1] * rho[0] + gi[2] * rho[1]];
        let tr_hess_r = gi[0] * rab[0] + 2.0 * gi[1] * rab[1] + gi[2] * rab[2];
        let q = [
            r * r * (2.0 * gir[0] - rho[0] * tr_gi) + tr_hess_r * ra[0],
            r * r * (2.0 * gir[1] - rho[1] * tr_gi) + tr_hess_r * ra[1],
        ];

        let dmu_flat = grid.weight(k) * r * r * v;
        let p4 = p2 * p2;
        g.position.push(x);
        g.tangents.push(xa);
        g.normal_flat.push(nb);
        g.normal.push([nb[0] / p2, nb[1] / p2, nb[2] / p2]);
        g.metric_flat.push(gm);
        g.induced.push([p4 * gm[0], p4 * gm[1], p4 * gm[2]]);
        g.dmu_flat.push(dmu_flat);
        g.dmu.push(p4 * dmu_flat);
        g.second_form.push(h);
        g.mean_curvature.push((hbar + 4.0 * eta) / p2);
        g.mean_curvature_flat.push(hbar);
        g.trfree_sq.push(trfree_flat / p4);
        g.trfree_sq_flat.push(trfree_flat);
        g.ric_nn.push(ric_nn);
        g.scalar.push(curv.scalar);
        g.phi.push(phi);
        g.eta.push(eta);
        g.slope.push(v);
        g.inv_flat.push(gi);
        g.q.push(q);
    }
    Ok(g)
}

/// `h = Φ² (h̄ + 2η Ḡ)`.
fn conformal_form(p2: f64, hbar: [f64; 3], eta: f64, gm: [f64; 3]) -> [f64; 3] {
    [
        p2 * (hbar[0] + 2.0 * eta * gm[0]),
        p2 * (hbar[1] + 2.0 * eta * gm[1]),
        p2 * (hbar[2] + 2.0 * eta * gm[2]),
    ]
}

/// Scalar functionals of a surface.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SurfaceReport {
    pub lambda: f64,
    pub xi: [f64; 3],
    pub area: f64,
    pub area_radius: f64,
    pub inner_radius: f64,
    pub willmore_energy: f64,
    pub hawking_mass: f64,
    pub trfree_h_sq: f64,
    pub gauss_residual: f64,
    /// `∫H²dμ − 16π`.
    pub willmore_excess: f64,
}

impl SurfaceReport {
    pub const CSV_HEADER: [&'static str; 11] = [
        "lambda",
        "xi1",
        "xi2",
        "xi3",
        "area",
        "area_radius",
        "inner_radius",
        "willmore_energy",
        "hawking_mass",
        "trfree_h_sq",
        "gauss_residual",
    ];

    pub fn csv_row(&self) -> Vec<String> {
        [
            self.lambda,
            self.xi[0],
            self.xi[1],
            self.xi[2],
            self.area,
            self.area_radius,
            self.inner_radius,
            self.willmore_energy,
            self.hawking_mass,
            self.trfree_h_sq,
            self.gauss_residual,
        ]
        .iter()
        .map(|v| format!("{v:e}"))
        .collect()
    }
}

pub fn report(surface: &GraphSurface) -> Result<SurfaceReport> {
    let g = geometry(surface)?;
    Ok(report_from(surface, &g))
}

pub fn report_from(surface: &GraphSurface, g: &GeometryFields) -> SurfaceReport {
    let area = g.area();
    let excess = g.willmore_excess();
    let w = 16.0 * PI + excess;
    SurfaceReport {
        lambda: surface.lambda,
        xi: surface.xi,
        area,
        area_radius: (area / (4.0 * PI)).sqrt(),
        inner_radius: g.position.iter().map(|x| norm3(*x)).fold(f64::INFINITY, f64::min),
        willmore_energy: 0.25 * w,
        hawking_mass: -(area / (16.0 * PI)).sqrt() * excess / (16.0 * PI),
        trfree_h_sq: g.integrate(&g.trfree_sq),
        gauss_residual: gauss_residual_from(g),
        willmore_excess: excess,
    }
}

/// `∫H² − 16π − 2∫|h̊|² − 2∫(2Ric(ν,ν) − R)`, with `∫H²` summed directly.
pub fn integrated_gauss_residual(surface: &GraphSurface) -> Result<f64> {
    Ok(gauss_residual_from(&geometry(surface)?))
}

fn gauss_residual_from(g: &GeometryFields) -> f64 {
    let mut total = -16.0 * PI;
    for k in 0..g.len() {
        let h = g.mean_curvature[k];
        total += g.dmu[k]
            * (h * h - 2.0 * g.trfree_sq[k] - 2.0 * (2.0 * g.ric_nn[k] - g.scalar[k]));
    }
    total
}

/// Spectral jet of grid samples analysed up to the grid capacity.
fn sample_jet(grid: &SphereGrid, samples: &[f64]) -> Result<crate::harmonics::SurfaceJet> {
    let field = grid.analyze(samples, grid.l_full)?;
    Ok(grid.jet(&field))
}

fn check_margin(surface: &GraphSurface, extra: usize) -> Result<()> {
    if surface.u.l_max + 4 + extra > surface.grid.l_full {
        return Err(Error::invalid(format!(
            "graph band {} leaves less than {} bands of margin below {}",
            surface.u.l_max,
            4 + extra,
            surface.grid.l_full
        )));
    }
    Ok(())
}

/// `W = ΔH + (|h̊|² + Ric(ν,ν)) H` at the grid nodes.
pub fn willmore_operator(surface: &GraphSurface) -> Result<Vec<f64>> {
    check_margin(surface, 0)?;
    let g = geometry(surface)?;
    willmore_from(surface, &g)
}

pub fn willmore_from(surface: &GraphSurface, g: &GeometryFields) -> Result<Vec<f64>> {
    let hj = sample_jet(&surface.grid, &g.mean_curvature)?;
    let lap = g.laplacian(&hj.grad, &hj.hess);
    Ok((0..g.len())
        .map(|k| lap[k] + (g.trfree_sq[k] + g.ric_nn[k]) * g.mean_curvature[k])
        .collect())
}

/// Radial displacement whose normal speed for `g` is `f`.
pub fn radial_displacement(g: &GeometryFields, f: &[f64]) -> Vec<f64> {
    (0..g.len())
        .map(|k| f[k] * g.slope[k] / (g.phi[k] * g.phi[k]))
        .collect()
}

/// Normal speed for `g` of the radial displacement `w`.
pub fn normal_speed(g: &GeometryFields, w: &[f64]) -> Vec<f64> {
    (0..g.len())
        .map(|k| w[k] * g.phi[k] * g.phi[k] / g.slope[k])
        .collect()
}

/// `L f = −Δf − (|h|² + Ric(ν,ν)) f`, the derivative of `H` along the
/// normal variation with speed `f`.
pub fn linearized_mean_curvature(surface: &GraphSurface, v: &HarmonicField) -> Result<Vec<f64>> {
    check_margin(surface, 0)?;
    let g = geometry(surface)?;
    Ok(apply_l(&surface.grid, &g, &surface.grid.jet(v)))
}

fn apply_l(_grid: &SphereGrid, g: &GeometryFields, f: &crate::harmonics::SurfaceJet) -> Vec<f64> {
    let lap = g.laplacian(&f.grad, &f.hess);
    (0..g.len())
        .map(|k| -lap[k] - (g.h_sq(k) + g.ric_nn[k]) * f.f[k])
        .collect()
}

/// Tangential correction: derivative of the samples `q` along the tangential
/// part of the radial displacement `w`.
fn tangential_drift(grid: &SphereGrid, g: &GeometryFields, q: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    let qj = sample_jet(grid, q)?;
    Ok((0..g.len())
        .map(|k| {
            let y = grid.point(k);
            let nb = g.normal_flat[k];
            let v = g.slope[k];
            let t = [
                w[k] * (y[0] - nb[0] / v),
                w[k] * (y[1] - nb[1] / v),
                w[k] * (y[2] - nb[2] / v),
            ];
            let a = g.tangent_coords(k, t);
            // frame derivative of q along X_a is the sphere frame derivative
            a[0] * qj.grad[0][k] + a[1] * qj.grad[1][k]
        })
        .collect())
}

/// Surface displaced radially by `s·w`, with `w` given at the nodes.
fn displaced(surface: &GraphSurface, w: &[f64], s: f64) -> Result<GraphSurface> {
    let grid = &surface.grid;
    let band = grid.l_full - 4;
    let wf = grid.analyze(w, band)?;
    let u = surface.u.resized(band).add(&wf.scaled(s));
    surface.with_u(u)
}

/// Finite-difference derivative of the mean curvature along the normal
/// variation with speed `f`, corrected for tangential drift.
pub fn mean_curvature_variation_fd(
    surface: &GraphSurface,
    f: &HarmonicField,
    step: f64,
) -> Result<Vec<f64>> {
    let g = geometry(surface)?;
    let fs = surface.grid.synthesize(f);
    let w = radial_displacement(&g, &fs);
    let hp = geometry(&displaced(surface, &w, step)?)?.mean_curvature;
    let hm = geometry(&displaced(surface, &w, -step)?)?.mean_curvature;
    let drift = tangential_drift(&surface.grid, &g, &g.mean_curvature, &w)?;
    Ok((0..g.len())
        .map(|k| (hp[k] - hm[k]) / (2.0 * step) - drift[k])
        .collect())
}

/// `Q f = −d/ds W(Σ_s)∘Φ_s` by centered differences with Richardson
/// extrapolation over the steps `s` and `s/2`.
pub fn linearized_willmore(surface: &GraphSurface, v: &HarmonicField) -> Result<Vec<f64>> {
    check_margin(surface, 4)?;
    let g = geometry(surface)?;
    let w0 = willmore_from(surface, &g)?;
    let fs = surface.grid.synthesize(v);
    let fmax = fs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    if fmax == 0.0 {
        return Ok(vec![0.0; g.len()]);
    }
    let w = radial_displacement(&g, &fs);
    let step = 1e-3 * surface.lambda / fmax;
    let diff = |s: f64| -> Result<Vec<f64>> {
        let pl = displaced(surface, &w, s)?;
        let mi = displaced(surface, &w, -s)?;
        let wp = willmore_from(&pl, &geometry(&pl)?)?;
        let wm = willmore_from(&mi, &geometry(&mi)?)?;
        Ok((0..g.len()).map(|k| (wp[k] - wm[k]) / (2.0 * s)).collect())
    };
    let d1 = diff(step)?;
    let d2 = diff(0.5 * step)?;
    let drift = tangential_drift(&surface.grid, &g, &w0, &w)?;
    // natural size of Q f is |f| H⁴, used as a floor when Q f nearly vanishes
    let hmax = g.mean_curvature.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let scale = d2
        .iter()
        .fold(fmax * hmax.powi(4), |a, b| a.max(b.abs()));
    let gap = d1
        .iter()
        .zip(&d2)
        .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    if scale > 0.0 && gap > 0.5 * scale {
        return Err(Error::numerical(
            "finite-difference steps for Q disagree",
            gap / scale,
        ));
    }
    Ok((0..g.len())
        .map(|k| -((4.0 * d2[k] - d1[k]) / 3.0 - drift[k]))
        .collect())
}

/// Leading part `L(Lf) + ½H² Lf` of `Q f` on nearly round spheres.
pub fn linearized_willmore_leading(surface: &GraphSurface, v: &HarmonicField) -> Result<Vec<f64>> {
    check_margin(surface, 0)?;
    let g = geometry(surface)?;
    let grid = &surface.grid;
    let lf = apply_l(grid, &g, &grid.jet(v));
    let llf = apply_l(grid, &g, &sample_jet(grid, &lf)?);
    Ok((0..g.len())
        .map(|k| llf[k] + 0.5 * g.mean_curvature[k].powi(2) * lf[k])
        .collect())
}

/// Smallest Rayleigh quotient of `Q − κL` over harmonics of degree at most
/// `l_max − 6`, projected to `u⊥ = u + sH`, `s = −∫Hu/∫H²`.
pub fn stability_margin(surface: &GraphSurface, kappa: f64) -> Result<f64> {
    stability_margin_bands(surface, kappa, 0)
}

/// As [`stability_margin`] with the test basis restricted to degrees `≥ l_min`.
pub fn stability_margin_bands(surface: &GraphSurface, kappa: f64, l_min: usize) -> Result<f64> {
    let grid = &surface.grid;
    let g = geometry(surface)?;
    let h2 = g.integrate(&g.mean_curvature.iter().map(|h| h * h).collect::<Vec<_>>());
    if h2 < 1e-12 * g.area().recip() {
        return Err(Error::Unsupported("stability margin of a minimal surface".into()));
    }
    let top = grid.l_max.saturating_sub(6);
    let mut basis = vec![];
    for l in l_min..=top {
        for m in -(l as i64)..=(l as i64) {
            let mut e = HarmonicField::zeros(top);
            e.set(l, m, 1.0);
            let s = grid.synthesize(&e);
            let hu: f64 = g.integrate(&(0..g.len()).map(|k| g.mean_curvature[k] * s[k]).collect::<Vec<_>>());
            let c = -hu / h2;
            let perp: Vec<f64> = (0..g.len()).map(|k| s[k] + c * g.mean_curvature[k]).collect();
            basis.push(perp);
        }
    }
    let nb = basis.len();
    let mut images = Vec::with_capacity(nb);
    for b in &basis {
        let field = grid.analyze(b, grid.l_full - 8)?;
        let q = linearized_willmore(surface, &field)?;
        let l = apply_l(grid, &g, &grid.jet(&field));
        let bs = grid.synthesize(&field);
        images.push((bs, q, l));
    }
    let mut a = DMatrix::<f64>::zeros(nb, nb);
    let mut m = DMatrix::<f64>::zeros(nb, nb);
    for i in 0..nb {
        for j in 0..nb {
            let (bi, _, _) = &images[i];
            let (bj, qj, lj) = &images[j];
            let mut va = 0.0;
            let mut vm = 0.0;
            for k in 0..g.len() {
                va += g.dmu[k] * bi[k] * (qj[k] - kappa * lj[k]);
                vm += g.dmu[k] * bi[k] * bj[k];
            }
            a[(i, j)] = va;
            m[(i, j)] = vm;
        }
    }
    let a = (&a + a.transpose()) * 0.5;
    generalized_min_eig(&a, &m)
}

/// Smallest eigenvalue of `A x = μ M x` on the range of `M`.
fn generalized_min_eig(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<f64> {
    let eig = m.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |x, y| x.max(*y));
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > 1e-10 * top)
        .collect();
    if keep.is_empty() {
        return Err(Error::numerical("empty stability test space", 0.0));
    }
    let mut w = DMatrix::<f64>::zeros(m.nrows(), keep.len());
    for (c, &i) in keep.iter().enumerate() {
        let s = eig.eigenvalues[i].sqrt();
        for r in 0..m.nrows() {
            w[(r, c)] = eig.eigenvectors[(r, i)] / s;
        }
    }
    let red = w.transpose() * a * &w;
    let red = (&red + red.transpose()) * 0.5;
    let e = red.symmetric_eigen();
    Ok(e.eigenvalues.iter().fold(f64::INFINITY, |x, y| x.min(*y)))
}

/// Minimum over nodes of `Φ² H` on the coordinate sphere `S_{ξ,λ}` and the
/// prediction `2λ⁻¹ − 4ρ⁻²`, `ρ = min |x|`.
pub fn min_mean_curvature_scan(
    metric: Arc<AmbientMetric>,
    grid: Arc<SphereGrid>,
    xi: [f64; 3],
    lambda: f64,
) -> Result<(f64, f64)> {
    let s = GraphSurface::sphere(metric, grid, xi, lambda)?;
    let g = geometry(&s)?;
    let min = (0..g.len())
        .map(|k| g.phi[k] * g.phi[k] * g.mean_curvature[k])
        .fold(f64::INFINITY, f64::min);
    let rho = (lambda * norm3(xi) - lambda).abs();
    Ok((min, 2.0 / lambda - 4.0 / (rho * rho)))
}

/// Finite-difference orders of the first and second variation identities.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VariationCheck {
    pub name: String,
    pub errors: Vec<f64>,
    pub steps: Vec<f64>,
    pub order: f64,
    /// Value predicted by the variation formula.
    pub predicted: f64,
}

fn fitted_order(steps: &[f64], errors: &[f64]) -> f64 {
    let n = steps.len() as f64;
    let xs: Vec<f64> = steps.iter().map(|s| s.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.max(1e-300).ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// `|Σ(u + s w)| − |Σ(u)| − s∫H f dμ` over a ladder of steps, `f` the
/// normal speed of the radial displacement `w`.
pub fn area_variation_check(surface: &GraphSurface, w: &HarmonicField, steps: &[f64]) -> Result<VariationCheck> {
    let g = geometry(surface)?;
    let ws = surface.grid.synthesize(w);
    let f = normal_speed(&g, &ws);
    let first = g.integrate(&(0..g.len()).map(|k| g.mean_curvature[k] * f[k]).collect::<Vec<_>>());
    let a0 = g.area();
    let mut errors = vec![];
    for &s in steps {
        let u = surface.u.resized(surface.u.l_max.max(w.l_max)).add(&w.resized(surface.u.l_max.max(w.l_max)).scaled(s));
        let a = geometry(&surface.with_u(u)?)?.area();
        errors.push((a - a0 - s * first).abs());
    }
    Ok(VariationCheck {
        name: "first variation of area".into(),
        predicted: first,
        order: fitted_order(steps, &errors),
        errors,
        steps: steps.to_vec(),
    })
}

/// Relative error of `d/ds ∫H²` against `−2∫W f dμ` for centred
/// differences at each step.
pub fn willmore_first_variation_check(
    surface: &GraphSurface,
    w: &HarmonicField,
    steps: &[f64],
) -> Result<VariationCheck> {
    let g = geometry(surface)?;
    let wv = willmore_from(surface, &g)?;
    let ws = surface.grid.synthesize(w);
    let f = normal_speed(&g, &ws);
    let pred = -2.0 * g.integrate(&(0..g.len()).map(|k| wv[k] * f[k]).collect::<Vec<_>>());
    let band = surface.u.l_max.max(w.l_max);
    let mut errors = vec![];
    for &s in steps {
        let ep = geometry(&surface.with_u(surface.u.resized(band).add(&w.resized(band).scaled(s)))?)?
            .willmore_excess();
        let em = geometry(&surface.with_u(surface.u.resized(band).add(&w.resized(band).scaled(-s)))?)?
            .willmore_excess();
        let fd = (ep - em) / (2.0 * s);
        errors.push((fd - pred).abs() / pred.abs().max(1e-300));
    }
    Ok(VariationCheck {
        name: "first variation of Willmore energy".into(),
        predicted: pred,
        order: fitted_order(steps, &errors),
        errors,
        steps: steps.to_vec(),
    })
}

/// Second variation of `∫H²` along the radial family `u + s w`, against
/// `2∫fQf − 2∫(HWf² + Wa)` with `f` the normal speed and `a` the normal
/// acceleration. Radial lines are geodesics only when they are normal, so
/// the check requires a centred sphere with `w` constant or a flat
/// ambient with `u = 0`.
pub fn willmore_second_variation_check(
    surface: &GraphSurface,
    w: &HarmonicField,
    steps: &[f64],
) -> Result<VariationCheck> {
    let g = geometry(surface)?;
    let grid = &surface.grid;
    let wv = willmore_from(surface, &g)?;
    let ws = grid.synthesize(w);
    let f = normal_speed(&g, &ws);
    let ff = grid.analyze(&f, grid.l_full - 8)?;
    let q = linearized_willmore(surface, &ff)?;
    // radial geodesic: arclength U(s) = ∫ Φ² dr, so U'' = 2ΦΦ_r w²
    let acc: Vec<f64> = (0..g.len())
        .map(|k| {
            let x = g.position[k];
            let c = surface.center();
            let y = [x[0] - c[0], x[1] - c[1], x[2] - c[2]];
            let ny = norm3(y);
            let jet = surface.metric.conformal_jet_unchecked(x);
            let dr = (jet.d[0] * y[0] + jet.d[1] * y[1] + jet.d[2] * y[2]) / ny;
            2.0 * g.phi[k] * dr * ws[k] * ws[k]
        })
        .collect();
    let pred = 2.0 * g.integrate(&(0..g.len()).map(|k| f[k] * q[k]).collect::<Vec<_>>())
        - 2.0
            * g.integrate(
                &(0..g.len())
                    .map(|k| g.mean_curvature[k] * wv[k] * f[k] * f[k] + wv[k] * acc[k])
                    .collect::<Vec<_>>(),
            );
    let band = surface.u.l_max.max(w.l_max);
    let e0 = g.willmore_excess();
    let mut errors = vec![];
    for &s in steps {
        let ep = geometry(&surface.with_u(surface.u.resized(band).add(&w.resized(band).scaled(s)))?)?
            .willmore_excess();
        let em = geometry(&surface.with_u(surface.u.resized(band).add(&w.resized(band).scaled(-s)))?)?
            .willmore_excess();
        let fd = (ep - 2.0 * e0 + em) / (s * s);
        errors.push((fd - pred).abs() / pred.abs().max(1e-300));
    }
    Ok(VariationCheck {
        name: "second variation of Willmore energy".into(),
        predicted: pred,
        order: fitted_order(steps, &errors),
        errors,
        steps: steps.to_vec(),
    })
}

/// Both sides of the Pohozaev identity
/// `∫_{∂U} E(Z, n) dμ = ∫_U [½⟨E, 𝒟Z⟩ − ⅙ div Z · R] dv` with
/// `Z = Φ⁻² λ⁻¹ (x − λξ)`, `U` the ball `B_λ(λξ)` when it excludes the
/// origin and its exterior otherwise. Returns `(lhs, rhs)`.
pub fn pohozaev_residual(metric: &AmbientMetric, xi: [f64; 3], lambda: f64) -> Result<(f64, f64)> {
    if metric.is_flat() {
        return Ok((0.0, 0.0));
    }
    let c = [lambda * xi[0], lambda * xi[1], lambda * xi[2]];
    let d = norm3(c);
    let outlying = d > lambda;
    let grid = shared_grid(48);
    let lhs = sphere_flux(metric, &grid, c, lambda, lambda)?;
    if outlying {
        let rhs = volume_term(metric, c, lambda, None)?;
        Ok((lhs, rhs))
    } else {
        // U = B_far(c) ∖ B_λ(c); the far sphere is moved to the left side
        let far = 1e4 * (lambda + d);
        let outer = sphere_flux(metric, &grid, c, far, lambda)?;
        let rhs = volume_term(metric, c, lambda, Some(far))?;
        Ok((lhs, outer - rhs))
    }
}

/// Conformal Killing deformation `𝒟Z` and `div_g Z` for `Z = Φ⁻² λ⁻¹ (x − c)`.
fn pohozaev_integrand(metric: &AmbientMetric, x: [f64; 3], c: [f64; 3], lambda: f64) -> Result<f64> {
    let j = metric.conformal_jet(x)?;
    let k = crate::metric::curvature_from_conformal(&j);
    let phi = j.phi;
    let p4 = phi.powi(4);
    let y = [x[0] - c[0], x[1] - c[1], x[2] - c[2]];
    let f = 1.0 / (phi * phi * lambda);
    let df: Vec<f64> = (0..3).map(|i| -2.0 * j.d[i] / (phi.powi(3) * lambda)).collect();
    // ∂_i Z^j = f δ_ij + y_j ∂_i f
    let mut dz = [[0.0; 3]; 3];
    for i in 0..3 {
        for jj in 0..3 {
            dz[i][jj] = if i == jj { f } else { 0.0 } + y[jj] * df[i];
        }
    }
    // (ℒ_Z g)_ij = Z(Φ⁴) δ_ij + Φ⁴ (∂_i Z^j + ∂_j Z^i)
    let zp = 4.0 * phi.powi(3) * (0..3).map(|i| f * y[i] * j.d[i]).sum::<f64>();
    let mut lie = [[0.0; 3]; 3];
    for i in 0..3 {
        for jj in 0..3 {
            lie[i][jj] = p4 * (dz[i][jj] + dz[jj][i]) + if i == jj { zp } else { 0.0 };
        }
    }
    let tr = (lie[0][0] + lie[1][1] + lie[2][2]) / p4;
    let div = 0.5 * tr;
    let mut inner = 0.0;
    for i in 0..3 {
        for jj in 0..3 {
            let dzk = lie[i][jj] - if i == jj { tr * p4 / 3.0 } else { 0.0 };
            inner += k.einstein[i][jj] * dzk;
        }
    }
    inner /= p4 * p4;
    Ok((0.5 * inner - div * k.scalar / 6.0) * phi.powi(6))
}

/// `∫_{S_ρ(c)} E(Z, ν) dμ` with `ν` the outward unit normal for `g`.
fn sphere_flux(metric: &AmbientMetric, grid: &SphereGrid, c: [f64; 3], rho: f64, lambda: f64) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..grid.n_nodes() {
        let y = grid.point(k);
        let x = [c[0] + rho * y[0], c[1] + rho * y[1], c[2] + rho * y[2]];
        let j = metric.conformal_jet(x)?;
        let e = crate::metric::curvature_from_conformal(&j).einstein;
        let phi = j.phi;
        let z = [
            rho * y[0] / (phi * phi * lambda),
            rho * y[1] / (phi * phi * lambda),
            rho * y[2] / (phi * phi * lambda),
        ];
        let mut ezn = 0.0;
        for i in 0..3 {
            for jj in 0..3 {
                ezn += e[i][jj] * z[i] * y[jj];
            }
        }
        // ν = Φ⁻² y, dμ = Φ⁴ ρ² dσ
        total += grid.weight(k) * ezn * phi * phi * rho * rho;
    }
    Ok(total)
}

/// Volume term over the ball `B_λ(c)` or over `B_far(c) ∖ B_λ(c)`, in
/// spherical coordinates about the origin so that curvature bands and the
/// ball boundary are resolved exactly by splitting.
fn volume_term(metric: &AmbientMetric, c: [f64; 3], lambda: f64, far: Option<f64>) -> Result<f64> {
    let d = norm3(c);
    let axis = if d > 0.0 { [c[0] / d, c[1] / d, c[2] / d] } else { [0.0, 0.0, 1.0] };
    let cut = metric.cutoff * metric.scale;
    let (lo, hi) = match far {
        None => (d - lambda, d + lambda),
        Some(f) => (cut.max(lambda - d), f + d),
    };
    let mut breaks = vec![lo, hi, (d - lambda).abs(), d + lambda];
    if let Some(f) = far {
        breaks.push((f - d).abs());
    }
    breaks.extend(radial_breaks(metric, lo, hi));
    // geometric refinement for resolution of power-law integrands
    let mut r = lo.max(1e-300);
    while r < hi {
        breaks.push(r);
        r *= 1.5;
    }
    breaks.retain(|b| *b >= lo && *b <= hi);
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * b.abs());
    let (gx, gw) = crate::harmonics::gauss_legendre(24);
    let (ax, aw) = crate::harmonics::gauss_legendre(24);
    let nphi = 32;
    let mut total = 0.0;
    for win in breaks.windows(2) {
        let (a, b) = (win[0], win[1]);
        if b - a <= 0.0 {
            continue;
        }
        for (t, wt) in gx.iter().zip(&gw) {
            let s = 0.5 * (a + b) + 0.5 * (b - a) * t;
            let ws = 0.5 * (b - a) * wt;
            // angular range: cos θ in [cmin, cmax] relative to the axis
            let cb = if d > 0.0 {
                ((s * s + d * d - lambda * lambda) / (2.0 * s * d)).clamp(-1.0, 1.0)
            } else if s < lambda {
                -1.0
            } else {
                1.0
            };
            let mut ranges = vec![];
            match far {
                None => ranges.push((cb, 1.0)),
                Some(f) => {
                    let cf = if d > 0.0 {
                        ((s * s + d * d - f * f) / (2.0 * s * d)).clamp(-1.0, 1.0)
                    } else if s < f {
                        -1.0
                    } else {
                        1.0
                    };
                    // outside B_λ(c) and inside B_far(c)
                    if cb > cf {
                        ranges.push((cf, cb));
                    }
                }
            }
            for (c0, c1) in ranges {
                if c1 - c0 <= 0.0 {
                    continue;
                }
                for (ct, cw) in ax.iter().zip(&aw) {
                    let cth = 0.5 * (c0 + c1) + 0.5 * (c1 - c0) * ct;
                    let wc = 0.5 * (c1 - c0) * cw;
                    let sth = (1.0 - cth * cth).max(0.0).sqrt();
                    for j in 0..nphi {
                        let ph = 2.0 * PI * (j as f64 + 0.5) / nphi as f64;
                        let local = [sth * ph.cos(), sth * ph.sin(), cth];
                        let yv = crate::metric::rotate_to_axis(local, axis);
                        let x = [s * yv[0], s * yv[1], s * yv[2]];
                        let val = pohozaev_integrand(metric, x, c, lambda)?;
                        total += ws * wc * (2.0 * PI / nphi as f64) * s * s * val;
                    }
                }
            }
        }
    }
    Ok(total)
}

fn radial_breaks(metric: &AmbientMetric, lo: f64, hi: f64) -> Vec<f64> {
    let mut out = vec![];
    if let MetricFamily::Pulse(spec) = &metric.family {
        let (a, b) = spec.shape.support();
        let mut k = 0;
        loop {
            let sc = spec.base.powi(k) * metric.scale;
            if a * sc > hi {
                break;
            }
            for e in [a * sc, b * sc] {
                if e > lo && e < hi {
                    out.push(e);
                }
            }
            // interior refinement across the band
            for i in 1..8 {
                let e = (a + (b - a) * i as f64 / 8.0) * sc;
                if e > lo && e < hi {
                    out.push(e);
                }
            }
            k += 1;
        }
    }
    out
}
