//! Real spherical harmonics on the unit sphere.
//!
//! Basis: orthonormal real harmonics `Y_{l,m}`, ordered by `l` ascending and
//! `m` from `-l` to `l` (flat index `l² + l + m`). For `m > 0` the basis
//! function is `√2 p̄_{lm}(cos θ) cos(mφ)`, for `m < 0` it is
//! `√2 p̄_{l|m|}(cos θ) sin(|m|φ)`, with `p̄` the unit-normalised associated
//! Legendre functions without Condon–Shortley phase.
//!
//! Grids use Gauss–Legendre nodes in `cos θ` and equispaced azimuths, so no
//! node sits on a pole and every frame quantity is finite.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat coefficient index of `(l, m)`.
#[inline]
pub fn idx(l: usize, m: i64) -> usize {
    ((l * l + l) as i64 + m) as usize
}

/// Number of coefficients with band `≤ l_max`.
#[inline]
pub fn n_coeffs(l_max: usize) -> usize {
    (l_max + 1) * (l_max + 1)
}

/// Legendre polynomial `P_l(s)` by the three-term recurrence.
pub fn legendre(l: usize, s: f64) -> f64 {
    let s = s.clamp(-1.0, 1.0);
    if l == 0 {
        return 1.0;
    }
    let (mut p0, mut p1) = (1.0, s);
    for n in 2..=l {
        let nf = n as f64;
        let p2 = ((2.0 * nf - 1.0) * s * p1 - (nf - 1.0) * p0) / nf;
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// All `P_0(s), …, P_{l_max}(s)`.
pub fn legendre_all(l_max: usize, s: f64) -> Vec<f64> {
    let s = s.clamp(-1.0, 1.0);
    let mut p = vec![0.0; l_max + 1];
    p[0] = 1.0;
    if l_max >= 1 {
        p[1] = s;
    }
    for n in 2..=l_max {
        let nf = n as f64;
        p[n] = ((2.0 * nf - 1.0) * s * p[n - 1] - (nf - 1.0) * p[n - 2]) / nf;
    }
    p
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = nf * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let h = 0.5 * (b - a);
    let c = 0.5 * (b + a);
    (
        x.iter().map(|t| c + h * t).collect(),
        w.iter().map(|t| h * t).collect(),
    )
}

/// Unit-normalised associated Legendre values `p̄_{lm}(cos θ)` for all
/// `0 ≤ m ≤ l ≤ l_max`, indexed by `tri(l, m)`.
fn assoc_legendre_point(l_max: usize, x: f64, s: f64) -> Vec<f64> {
    let mut p = vec![0.0; (l_max + 1) * (l_max + 2) / 2];
    let tri = |l: usize, m: usize| l * (l + 1) / 2 + m;
    let mut pmm = (1.0 / (4.0 * PI)).sqrt();
    for m in 0..=l_max {
        if m > 0 {
            let mf = m as f64;
            pmm *= ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * s;
        }
        p[tri(m, m)] = pmm;
        if m < l_max {
            p[tri(m + 1, m)] = (2.0 * m as f64 + 3.0).sqrt() * x * pmm;
        }
        for l in (m + 2)..=l_max {
            let lf = l as f64;
            let mf = m as f64;
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0))
                .sqrt();
            p[tri(l, m)] = a * (x * p[tri(l - 1, m)] - b * p[tri(l - 2, m)]);
        }
    }
    p
}

/// Values of every real orthonormal harmonic with band `≤ l_max` at the unit
/// vector `y`.
pub fn real_harmonics_at(l_max: usize, y: [f64; 3]) -> Vec<f64> {
    let r = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
    let x = (y[2] / r).clamp(-1.0, 1.0);
    let s = (y[0] * y[0] + y[1] * y[1]).sqrt() / r;
    let phi = y[1].atan2(y[0]);
    let p = assoc_legendre_point(l_max, x, s);
    let mut out = vec![0.0; n_coeffs(l_max)];
    for l in 0..=l_max {
        out[idx(l, 0)] = p[l * (l + 1) / 2];
        for m in 1..=l {
            let v = 2f64.sqrt() * p[l * (l + 1) / 2 + m];
            let mf = m as f64;
            out[idx(l, m as i64)] = v * (mf * phi).cos();
            out[idx(l, -(m as i64))] = v * (mf * phi).sin();
        }
    }
    out
}

/// Band-limited real function on the unit sphere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonicField {
    pub l_max: usize,
    pub coeffs: Vec<f64>,
}

impl HarmonicField {
    pub fn zeros(l_max: usize) -> Self {
        Self {
            l_max,
            coeffs: vec![0.0; n_coeffs(l_max)],
        }
    }

    pub fn constant(l_max: usize, value: f64) -> Self {
        let mut f = Self::zeros(l_max);
        f.coeffs[0] = value * (4.0 * PI).sqrt();
        f
    }

    pub fn get(&self, l: usize, m: i64) -> f64 {
        if l > self.l_max {
            0.0
        } else {
            self.coeffs[idx(l, m)]
        }
    }

    pub fn set(&mut self, l: usize, m: i64, v: f64) {
        self.coeffs[idx(l, m)] = v;
    }

    /// Copy into a different band limit, truncating or zero-padding.
    pub fn resized(&self, l_max: usize) -> Self {
        let mut out = Self::zeros(l_max);
        let n = n_coeffs(l_max.min(self.l_max));
        out.coeffs[..n].copy_from_slice(&self.coeffs[..n]);
        out
    }

    /// Sum of squared coefficients, equal to `∫ f² dμ̄` on the unit sphere.
    pub fn norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            l_max: self.l_max,
            coeffs: self.coeffs.iter().map(|c| a * c).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let l = self.l_max.max(other.l_max);
        let mut out = self.resized(l);
        for (i, c) in other.coeffs.iter().enumerate() {
            out.coeffs[i] += c;
        }
        out
    }

    /// Mean value over the unit sphere.
    pub fn mean(&self) -> f64 {
        self.coeffs[0] / (4.0 * PI).sqrt()
    }

    /// Band-wise spectral multiplier.
    pub fn map_bands(&self, f: impl Fn(usize) -> f64) -> Self {
        let mut out = self.clone();
        for l in 0..=self.l_max {
            let a = f(l);
            for c in &mut out.coeffs[l * l..(l + 1) * (l + 1)] {
                *c *= a;
            }
        }
        out
    }

    /// Evaluate at a unit vector.
    pub fn eval(&self, y: [f64; 3]) -> f64 {
        real_harmonics_at(self.l_max, y)
            .iter()
            .zip(&self.coeffs)
            .map(|(a, b)| a * b)
            .sum()
    }
}

/// Keep only bands `lo ≤ l ≤ hi`.
pub fn project(field: &HarmonicField, lo: usize, hi: usize) -> HarmonicField {
    field.map_bands(|l| if l >= lo && l <= hi { 1.0 } else { 0.0 })
}

/// Laplace–Beltrami operator on the round sphere of radius `lambda`.
pub fn laplacian(field: &HarmonicField, lambda: f64) -> HarmonicField {
    field.map_bands(|l| -((l * (l + 1)) as f64) / (lambda * lambda))
}

/// `(l-1) l (l+1) (l+2)`, the band factor of `Δ̄² + 2Δ̄` on the unit sphere.
pub fn willmore_factor(l: usize) -> f64 {
    let l = l as f64;
    (l - 1.0) * l * (l + 1.0) * (l + 2.0)
}

/// `Δ̄² + 2 λ⁻² Δ̄` on the round sphere of radius `lambda`.
pub fn willmore_bilaplacian(field: &HarmonicField, lambda: f64) -> HarmonicField {
    let l4 = lambda.powi(4);
    field.map_bands(|l| willmore_factor(l) / l4)
}

/// Which polar table a synthesis uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolarDeriv {
    Value,
    First,
    Second,
}

/// Tensor-product quadrature grid on the unit sphere with transform tables.
pub struct SphereGrid {
    /// Band limit for which triple products are integrated exactly.
    pub l_max: usize,
    /// Highest band the grid analyses exactly for band-limited input.
    pub l_full: usize,
    pub n_theta: usize,
    pub n_phi: usize,
    pub cos_theta: Vec<f64>,
    pub sin_theta: Vec<f64>,
    pub weights: Vec<f64>,
    pub phi: Vec<f64>,
    p: Vec<f64>,
    dp: Vec<f64>,
    ddp: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SphereGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SphereGrid")
            .field("l_max", &self.l_max)
            .field("n_theta", &self.n_theta)
            .field("n_phi", &self.n_phi)
            .finish()
    }
}

impl SphereGrid {
    /// Grid sized for exact triple products: `n_θ = ⌈3 l_max / 2⌉ + 1`,
    /// `n_φ = 2 n_θ`.
    pub fn new(l_max: usize) -> Self {
        let n_theta = (3 * l_max).div_ceil(2) + 1;
        Self::with_sizes(l_max, n_theta, 2 * n_theta)
    }

    pub fn with_sizes(l_max: usize, n_theta: usize, n_phi: usize) -> Self {
        assert!(n_theta > l_max && n_phi > 2 * l_max, "grid too coarse");
        let l_full = (n_theta - 1).min((n_phi - 1) / 2);
        let (x, w) = gauss_legendre(n_theta);
        let cos_theta: Vec<f64> = x.iter().rev().copied().collect();
        let weights: Vec<f64> = w.iter().rev().copied().collect();
        let sin_theta: Vec<f64> = cos_theta.iter().map(|c| (1.0 - c * c).sqrt()).collect();
        let phi = (0..n_phi)
            .map(|j| 2.0 * PI * j as f64 / n_phi as f64)
            .collect();

        let npair = (l_full + 1) * (l_full + 2) / 2;
        let mut p = vec![0.0; npair * n_theta];
        let mut dp = vec![0.0; npair * n_theta];
        let mut ddp = vec![0.0; npair * n_theta];
        for i in 0..n_theta {
            let (c, s) = (cos_theta[i], sin_theta[i]);
            let pt = assoc_legendre_point(l_full, c, s);
            let cot = c / s;
            for m in 0..=l_full {
                for l in m..=l_full {
                    let k = pair(l_full, l, m);
                    let v = pt[l * (l + 1) / 2 + m];
                    let (lf, mf) = (l as f64, m as f64);
                    let d = if l == 0 {
                        0.0
                    } else {
                        let prev = if l > m { pt[(l - 1) * l / 2 + m] } else { 0.0 };
                        (lf * c * v
                            - ((2.0 * lf + 1.0) / (2.0 * lf - 1.0) * (lf * lf - mf * mf)).sqrt()
                                * prev)
                            / s
                    };
                    let dd = -cot * d - (lf * (lf + 1.0) - mf * mf / (s * s)) * v;
                    p[k * n_theta + i] = v;
                    dp[k * n_theta + i] = d;
                    ddp[k * n_theta + i] = dd;
                }
            }
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n_phi);
        let inv = planner.plan_fft_inverse(n_phi);
        Self {
            l_max,
            l_full,
            n_theta,
            n_phi,
            cos_theta,
            sin_theta,
            weights,
            phi,
            p,
            dp,
            ddp,
            fwd,
            inv,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_theta * self.n_phi
    }

    /// Unit vector of node `k`.
    pub fn point(&self, k: usize) -> [f64; 3] {
        let (i, j) = (k / self.n_phi, k % self.n_phi);
        let (s, c) = (self.sin_theta[i], self.cos_theta[i]);
        let (sp, cp) = self.phi[j].sin_cos();
        [s * cp, s * sp, c]
    }

    /// Orthonormal tangent frame `(e_θ, e_φ)` at node `k`.
    pub fn frame(&self, k: usize) -> ([f64; 3], [f64; 3]) {
        let (i, j) = (k / self.n_phi, k % self.n_phi);
        let (s, c) = (self.sin_theta[i], self.cos_theta[i]);
        let (sp, cp) = self.phi[j].sin_cos();
        ([c * cp, c * sp, -s], [-sp, cp, 0.0])
    }

    /// Quadrature weight of node `k` for `∫ f dμ̄` over the unit sphere.
    pub fn weight(&self, k: usize) -> f64 {
        self.weights[k / self.n_phi] * 2.0 * PI / self.n_phi as f64
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        let dphi = 2.0 * PI / self.n_phi as f64;
        let mut total = 0.0;
        for i in 0..self.n_theta {
            let row: f64 = f[i * self.n_phi..(i + 1) * self.n_phi].iter().sum();
            total += self.weights[i] * row;
        }
        total * dphi
    }

    /// Samples of a function of the node's unit vector.
    pub fn sample(&self, f: impl Fn([f64; 3]) -> f64) -> Vec<f64> {
        (0..self.n_nodes()).map(|k| f(self.point(k))).collect()
    }

    fn table(&self, d: PolarDeriv) -> &[f64] {
        match d {
            PolarDeriv::Value => &self.p,
            PolarDeriv::First => &self.dp,
            PolarDeriv::Second => &self.ddp,
        }
    }

    /// Forward transform onto bands `≤ l_out`.
    pub fn analyze(&self, samples: &[f64], l_out: usize) -> Result<HarmonicField> {
        if l_out > self.l_full {
            return Err(Error::invalid(format!(
                "band {l_out} exceeds grid capacity {}",
                self.l_full
            )));
        }
        if samples.len() != self.n_nodes() {
            return Err(Error::invalid("sample count does not match grid"));
        }
        let nt = self.n_theta;
        let dphi = 2.0 * PI / self.n_phi as f64;
        let mut a = vec![0.0; (l_out + 1) * nt];
        let mut b = vec![0.0; (l_out + 1) * nt];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_phi];
        for i in 0..nt {
            for (j, z) in buf.iter_mut().enumerate() {
                *z = Complex64::new(samples[i * self.n_phi + j], 0.0);
            }
            self.fwd.process(&mut buf);
            let wi = self.weights[i] * dphi;
            for m in 0..=l_out {
                a[m * nt + i] = buf[m].re * wi;
                b[m * nt + i] = -buf[m].im * wi;
            }
        }
        let mut out = HarmonicField::zeros(l_out);
        let r2 = 2f64.sqrt();
        for m in 0..=l_out {
            let am = &a[m * nt..(m + 1) * nt];
            let bm = &b[m * nt..(m + 1) * nt];
            for l in m..=l_out {
                let k = pair(self.l_full, l, m);
                let t = &self.p[k * nt..(k + 1) * nt];
                let ca: f64 = t.iter().zip(am).map(|(x, y)| x * y).sum();
                if m == 0 {
                    out.coeffs[idx(l, 0)] = ca;
                } else {
                    let cb: f64 = t.iter().zip(bm).map(|(x, y)| x * y).sum();
                    out.coeffs[idx(l, m as i64)] = r2 * ca;
                    out.coeffs[idx(l, -(m as i64))] = r2 * cb;
                }
            }
        }
        Ok(out)
    }

    /// Inverse transform of `∂_θ^a ∂_φ^b f` where `a` is set by `polar` and
    /// `b = azimuthal`.
    pub fn synthesize_deriv(
        &self,
        field: &HarmonicField,
        polar: PolarDeriv,
        azimuthal: u32,
    ) -> Vec<f64> {
        let lm = field.l_max.min(self.l_full);
        let nt = self.n_theta;
        let table = self.table(polar);
        let r2 = 2f64.sqrt();
        let mut out = vec![0.0; self.n_nodes()];
        let mut spec = vec![Complex64::new(0.0, 0.0); (lm + 1) * nt];
        for m in 0..=lm {
            let mut am = vec![0.0; nt];
            let mut bm = vec![0.0; nt];
            for l in m..=lm {
                let k = pair(self.l_full, l, m);
                let t = &table[k * nt..(k + 1) * nt];
                let (ca, cb) = if m == 0 {
                    (field.coeffs[idx(l, 0)], 0.0)
                } else {
                    (
                        r2 * field.coeffs[idx(l, m as i64)],
                        r2 * field.coeffs[idx(l, -(m as i64))],
                    )
                };
                if ca == 0.0 && cb == 0.0 {
                    continue;
                }
                for i in 0..nt {
                    am[i] += ca * t[i];
                    bm[i] += cb * t[i];
                }
            }
            let mf = m as f64;
            for i in 0..nt {
                let (x, y) = match azimuthal {
                    0 => (am[i], bm[i]),
                    1 => (mf * bm[i], -mf * am[i]),
                    2 => (-mf * mf * am[i], -mf * mf * bm[i]),
                    _ => panic!("azimuthal derivative order above 2"),
                };
                spec[m * nt + i] = Complex64::new(x, -y);
            }
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_phi];
        for i in 0..nt {
            buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
            for m in 0..=lm {
                buf[m] = spec[m * nt + i];
            }
            self.inv.process(&mut buf);
            for j in 0..self.n_phi {
                out[i * self.n_phi + j] = buf[j].re;
            }
        }
        out
    }

    pub fn synthesize(&self, field: &HarmonicField) -> Vec<f64> {
        self.synthesize_deriv(field, PolarDeriv::Value, 0)
    }

    /// Frame components `(f_θ, f_φ / sin θ)` of the tangential gradient.
    pub fn gradient(&self, field: &HarmonicField) -> [Vec<f64>; 2] {
        let ft = self.synthesize_deriv(field, PolarDeriv::First, 0);
        let mut fp = self.synthesize_deriv(field, PolarDeriv::Value, 1);
        for (k, v) in fp.iter_mut().enumerate() {
            *v /= self.sin_theta[k / self.n_phi];
        }
        [ft, fp]
    }

    /// Frame components `[H_θθ, H_θφ, H_φφ]` of the covariant Hessian.
    pub fn hessian(&self, field: &HarmonicField) -> [Vec<f64>; 3] {
        let ft = self.synthesize_deriv(field, PolarDeriv::First, 0);
        let fp = self.synthesize_deriv(field, PolarDeriv::Value, 1);
        let ftt = self.synthesize_deriv(field, PolarDeriv::Second, 0);
        let ftp = self.synthesize_deriv(field, PolarDeriv::First, 1);
        let fpp = self.synthesize_deriv(field, PolarDeriv::Value, 2);
        let n = self.n_nodes();
        let mut hab = vec![0.0; n];
        let mut hbb = vec![0.0; n];
        for k in 0..n {
            let i = k / self.n_phi;
            let (s, c) = (self.sin_theta[i], self.cos_theta[i]);
            let cot = c / s;
            hab[k] = (ftp[k] - cot * fp[k]) / s;
            hbb[k] = fpp[k] / (s * s) + cot * ft[k];
        }
        [ftt, hab, hbb]
    }

    /// Value, gradient and Hessian from one field.
    pub fn jet(&self, field: &HarmonicField) -> SurfaceJet {
        let f = self.synthesize(field);
        let [gt, gp] = self.gradient(field);
        let [htt, htp, hpp] = self.hessian(field);
        SurfaceJet {
            f,
            grad: [gt, gp],
            hess: [htt, htp, hpp],
        }
    }
}

/// Grid samples of a function together with its frame gradient and Hessian.
#[derive(Clone, Debug)]
pub struct SurfaceJet {
    pub f: Vec<f64>,
    pub grad: [Vec<f64>; 2],
    pub hess: [Vec<f64>; 3],
}

/// Position of `(l, m)`, `m ≥ 0`, in the polar tables: blocks of fixed `m`,
/// each holding `l = m..=l_full`.
#[inline]
fn pair(l_full: usize, l: usize, m: usize) -> usize {
    m * (l_full + 1) - m * m.saturating_sub(1) / 2 + (l - m)
}

/// Coefficients of `P_l(⟨y, n⟩)` in the real basis (addition theorem).
pub fn zonal_coeffs(l: usize, n: [f64; 3], l_max: usize) -> HarmonicField {
    let mut out = HarmonicField::zeros(l_max);
    if l > l_max {
        return out;
    }
    let y = real_harmonics_at(l, n);
    let scale = 4.0 * PI / (2 * l + 1) as f64;
    for m in -(l as i64)..=(l as i64) {
        out.coeffs[idx(l, m)] = scale * y[idx(l, m)];
    }
    out
}

/// Coefficient `a_{k,l}(ξ)` for `|ξ| < 1`, or `ã_{k,l}(ξ)` for `|ξ| > 1`,
/// in the Legendre expansion of `|y + ξ|^{-2k-1}` on the unit sphere.
/// Outside the unit ball `ã_{k,l}(ξ) = |ξ|^{-2k} a_{k,l}(ξ/|ξ|²)`, with no
/// alternating sign.
pub fn inverse_power_coeff(k: usize, l: usize, xi_norm: f64) -> Result<f64> {
    if (xi_norm - 1.0).abs() < 1e-6 {
        return Err(Error::Singular(format!("|xi| = {xi_norm} too close to 1")));
    }
    if k > 3 {
        return Err(Error::invalid("inverse power exponent k must be at most 3"));
    }
    if xi_norm < 1.0 {
        Ok(inside_coeff(k, l, xi_norm))
    } else {
        Ok(xi_norm.powi(-2 * k as i32) * inside_coeff(k, l, 1.0 / xi_norm))
    }
}

fn inside_coeff(k: usize, l: usize, t: f64) -> f64 {
    let l = l as f64;
    let t2 = t * t;
    let q = 1.0 - t2;
    match k {
        0 => 1.0,
        1 => (2.0 * l + 1.0) / q,
        2 => (2.0 * l + 1.0) * ((2.0 * l + 3.0) - (2.0 * l - 1.0) * t2) / (3.0 * q.powi(3)),
        3 => {
            (2.0 * l + 1.0)
                * ((2.0 * l + 3.0) * (2.0 * l + 5.0)
                    - 2.0 * (2.0 * l - 3.0) * (2.0 * l + 5.0) * t2
                    + (2.0 * l - 3.0) * (2.0 * l - 1.0) * t2 * t2)
                / (15.0 * q.powi(5))
        }
        _ => unreachable!(),
    }
}

/// Truncated Legendre series for `|y + ξ|^{-2k-1}` on the unit sphere.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LegendreSeries {
    pub k: usize,
    pub xi: [f64; 3],
    pub truncation: usize,
    pub coeffs: Vec<f64>,
}

impl LegendreSeries {
    pub fn new(k: usize, xi: [f64; 3], truncation: usize) -> Result<Self> {
        let t = norm3(xi);
        let coeffs = (0..=truncation)
            .map(|l| inverse_power_coeff(k, l, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            k,
            xi,
            truncation,
            coeffs,
        })
    }

    /// Series value at the unit vector `y`.
    pub fn eval(&self, y: [f64; 3]) -> f64 {
        let t = norm3(self.xi);
        let s = -dot3(y, self.xi) / t;
        let p = legendre_all(self.truncation, s);
        let mut total = 0.0;
        for l in 0..=self.truncation {
            let radial = if t < 1.0 {
                t.powi(l as i32)
            } else {
                t.powi(-(l as i32) - 1)
            };
            total += self.coeffs[l] * radial * p[l];
        }
        total
    }

    /// Direct value `|y + ξ|^{-2k-1}`.
    pub fn exact(&self, y: [f64; 3]) -> f64 {
        let d = [y[0] + self.xi[0], y[1] + self.xi[1], y[2] + self.xi[2]];
        norm3(d).powi(-(2 * self.k as i32) - 1)
    }
}

/// One line of an identity report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub computed: f64,
    pub reference: f64,
    pub error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl IdentityCheck {
    pub fn new(name: impl Into<String>, computed: f64, reference: f64, tolerance: f64) -> Self {
        let error = (computed - reference).abs();
        Self {
            name: name.into(),
            computed,
            reference,
            error,
            tolerance,
            pass: error <= tolerance,
        }
    }
}

/// Closed form of `Σ_{l≥2} (l-1)(l+1)(l+2) / (l (2l+1)) t^{2l}` for `t < 1`.
pub fn on_center_sum_closed(t: f64) -> f64 {
    let t2 = t * t;
    0.25 * (4.5 / t * ((1.0 + t) / (1.0 - t)).ln()
        + 8.0 * (1.0 - t2).ln()
        + (23.0 * t2 - 12.0 * t2 * t2 - 9.0) / ((1.0 - t2) * (1.0 - t2)))
}

/// Closed form of `Σ_{l≥2} (l-1) l (l+2) / ((l+1)(2l+1)) t^{-2l-2}` for `t > 1`.
pub fn outlying_sum_closed(t: f64) -> f64 {
    let t2 = t * t;
    0.25 * (4.5 / t * ((t + 1.0) / (t - 1.0)).ln()
        + 8.0 * (1.0 - 1.0 / t2).ln()
        + (3.0 - t2) / ((t2 - 1.0) * (t2 - 1.0)))
}

/// Numerical verification of the series identities used by the expansions.
pub fn series_identities_check() -> Vec<IdentityCheck> {
    let tol = 1e-9;
    let mut out = Vec::new();
    for &t in &[0.5f64, -0.5, 0.9, -0.9] {
        let n = if t.abs() < 0.6 { 60 } else { 400 };
        let s: f64 = (1..=n)
            .map(|l| (-1f64).powi(l - 1) / l as f64 * t.powi(l))
            .sum();
        out.push(IdentityCheck::new(
            format!("log(1+t) series, t = {t}"),
            s,
            (1.0 + t).ln(),
            tol,
        ));
        let s2: f64 = (0..=n).map(|l| (1.0 + l as f64) * t.powi(2 * l)).sum();
        out.push(IdentityCheck::new(
            format!("(1-t^2)^-2 series, t = {t}"),
            s2,
            1.0 / ((1.0 - t * t) * (1.0 - t * t)),
            tol,
        ));
    }
    for &t in &[0.3f64, 0.5, 0.7] {
        let s: f64 = (2..=200)
            .map(|l| {
                let l = l as f64;
                (l - 1.0) * (l + 1.0) * (l + 2.0) / (l * (2.0 * l + 1.0)) * t.powf(2.0 * l)
            })
            .sum();
        out.push(IdentityCheck::new(
            format!("on-center resummation, |xi| = {t}"),
            s,
            on_center_sum_closed(t),
            tol,
        ));
    }
    for &t in &[1.5f64, 2.0, 3.0] {
        let s: f64 = (2..=200)
            .map(|l| {
                let l = l as f64;
                (l - 1.0) * l * (l + 2.0) / ((l + 1.0) * (2.0 * l + 1.0)) * t.powf(-2.0 * l - 2.0)
            })
            .sum();
        out.push(IdentityCheck::new(
            format!("outlying resummation, |xi| = {t}"),
            s,
            outlying_sum_closed(t),
            tol,
        ));
    }
    out
}

/// Orthogonality tables for products of coordinate functions and of the
/// quadrupole basis `Y₂^{ij} = ½(3 yⁱ yʲ − δⁱʲ)`, evaluated by grid
/// quadrature. Every entry should vanish to rounding.
pub fn orthogonality_check(grid: &SphereGrid, tol: f64) -> Vec<IdentityCheck> {
    let n = grid.n_nodes();
    let pts: Vec<[f64; 3]> = (0..n).map(|k| grid.point(k)).collect();
    let d = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
    let integ = |f: &dyn Fn(&[f64; 3]) -> f64| -> f64 {
        let vals: Vec<f64> = pts.iter().map(f).collect();
        grid.integrate(&vals)
    };
    let mut worst2: f64 = 0.0;
    let mut worst4: f64 = 0.0;
    let mut worst_q: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let v = integ(&|y| y[i] * y[j]);
            worst2 = worst2.max((v - 4.0 * PI / 3.0 * d(i, j)).abs());
            for k in 0..3 {
                for l in 0..3 {
                    let v = integ(&|y| y[i] * y[j] * y[k] * y[l]);
                    let r = 4.0 * PI / 15.0 * (d(i, j) * d(k, l) + d(i, k) * d(j, l) + d(i, l) * d(j, k));
                    worst4 = worst4.max((v - r).abs());
                    let q = integ(&|y| {
                        0.25 * (3.0 * y[i] * y[j] - d(i, j)) * (3.0 * y[k] * y[l] - d(k, l))
                    });
                    let rq = PI / 5.0 * (3.0 * d(i, k) * d(j, l) + 3.0 * d(i, l) * d(j, k) - 2.0 * d(i, j) * d(k, l));
                    worst_q = worst_q.max((q - rq).abs());
                }
            }
        }
    }
    let (rn, rw) = gauss_legendre_on(8, 0.0, 1.0);
    let radial: f64 = rn.iter().zip(&rw).map(|(r, w)| w * r.powi(4)).sum();
    let mut worst_ball: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let v = radial * integ(&|y| y[i] * y[j]);
            worst_ball = worst_ball.max((v - 4.0 * PI / 15.0 * d(i, j)).abs());
        }
    }
    let mut worst_p: f64 = 0.0;
    for l1 in 0..=6usize {
        for l2 in 0..=6usize {
            let v = integ(&|y| legendre(l1, -y[2]) * legendre(l2, -y[2]));
            let r = if l1 == l2 { 4.0 * PI / (2 * l1 + 1) as f64 } else { 0.0 };
            worst_p = worst_p.max((v - r).abs());
        }
    }
    vec![
        IdentityCheck::new("int y^i y^j = 4pi/3 delta", worst2, 0.0, tol),
        IdentityCheck::new("int y^i y^j y^k y^l = 4pi/15 (sym delta)", worst4, 0.0, tol),
        IdentityCheck::new("int Y2^ij Y2^kl = pi/5 (3dd + 3dd - 2dd)", worst_q, 0.0, tol),
        IdentityCheck::new("int_B1 y^i y^j = 4pi/15 delta", worst_ball, 0.0, tol),
        IdentityCheck::new("int P_l1 P_l2 = 4pi/(2l+1) delta", worst_p, 0.0, tol),
    ]
}

#[inline]
pub fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}
