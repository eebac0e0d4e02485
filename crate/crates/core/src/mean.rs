//! CO2-driven mean model, standardization against a control run, emulation of
//! new scenarios and the lack-of-fit index.
//!
//! In standardized units the mean at pixel `p` and year `t` is
//!
//! ```text
//! beta0_p + beta1_p * s_t + beta2_region(p) * g_t
//! s_t = (log c_t + log c_{t-1}) / 2
//! g_t = sum_{i>=2} lambda^(i-2) (1 - lambda) log c_{t-i}
//! ```
//!
//! The linear coefficients are profiled out by generalized least squares
//! under the fitted space-time covariance and `lambda` is found by
//! golden-section search on the profile log-likelihood.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::Fourier;
use crate::grid::{EnsembleTensor, GridGeometry, RegionMap};
use crate::linalg::Cholesky;
use crate::optim::golden_section_max;
use crate::params::CovarianceParams;
use crate::scalar::CompensatedSum;
use crate::spectral::SpectralBlocks;

/// Tail mass left out of the truncated lag sum.
pub const LAG_TAIL: f64 = 1e-10;
pub const LAMBDA_BRACKET: (f64, f64) = (0.01, 0.999);
pub const LAMBDA_TOL: f64 = 1e-4;

const PCG_TOL: f64 = 1e-11;
const PCG_MAX_ITER: usize = 2000;
const COLLINEAR_TOL: f64 = 1e-10;
const COLUMN_NAMES: [&str; 3] = ["intercept", "short_term", "long_term"];

/// Annual CO2 concentrations (ppm). The first `history` entries precede the
/// first modeled year; earlier years repeat the earliest value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcingSeries {
    pub co2: Vec<f64>,
    #[serde(default)]
    pub history: usize,
}

impl ForcingSeries {
    pub fn new(co2: Vec<f64>, history: usize) -> Result<Self> {
        let f = Self { co2, history };
        f.validate()?;
        Ok(f)
    }

    /// Series whose last `n_years` entries are the modeled years.
    pub fn aligned(co2: Vec<f64>, n_years: usize) -> Result<Self> {
        if co2.len() < n_years {
            return Err(Error::Dimension(format!(
                "CO2 series has {} entries, need at least {n_years}",
                co2.len()
            )));
        }
        let history = co2.len() - n_years;
        Self::new(co2, history)
    }

    pub fn validate(&self) -> Result<()> {
        if self.co2.is_empty() || self.history >= self.co2.len() {
            return Err(Error::Dimension(format!(
                "forcing needs at least one modeled year (length {}, history {})",
                self.co2.len(),
                self.history
            )));
        }
        if let Some(c) = self.co2.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
            return Err(Error::Domain(format!("CO2 concentrations must be positive, found {c}")));
        }
        Ok(())
    }

    pub fn n_years(&self) -> usize {
        self.co2.len() - self.history
    }

    /// `log c_t` for modeled year `t` (negative `t` reaches into history).
    pub fn log_co2(&self, t: isize) -> f64 {
        let idx = self.history as isize + t;
        self.co2[idx.clamp(0, self.co2.len() as isize - 1) as usize].ln()
    }
}

/// Number of lag weights kept so that the omitted tail mass `lambda^K` is below [`LAG_TAIL`].
pub fn lag_truncation(lambda: f64) -> usize {
    if lambda <= 0.0 {
        return 1;
    }
    (LAG_TAIL.ln() / lambda.ln()).ceil().max(1.0) as usize
}

/// `w(i) = lambda^i (1 - lambda)` for `i < k`.
pub fn lag_weights(lambda: f64, k: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(k);
    let mut pow = 1.0;
    for _ in 0..k {
        w.push(pow * (1.0 - lambda));
        pow *= lambda;
    }
    w
}

/// Short- and long-term regressors `(s_t, g_t)` of modeled year `t`.
pub fn design_row(f: &ForcingSeries, t: usize, lambda: f64) -> (f64, f64) {
    let w = lag_weights(lambda, lag_truncation(lambda));
    row_with_weights(f, t as isize, &w)
}

fn row_with_weights(f: &ForcingSeries, t: isize, w: &[f64]) -> (f64, f64) {
    let s = 0.5 * (f.log_co2(t) + f.log_co2(t - 1));
    let g: CompensatedSum<f64> = w.iter().enumerate().map(|(i, wi)| wi * f.log_co2(t - 2 - i as isize)).collect();
    (s, g.value())
}

/// Regressor series `(s_t, g_t)` for every modeled year.
pub fn regressors(f: &ForcingSeries, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let w = lag_weights(lambda, lag_truncation(lambda));
    (0..f.n_years() as isize).map(|t| row_with_weights(f, t, &w)).unzip()
}

/// Per-pixel control-run mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardization {
    /// Statistics over every year and realization of `control`.
    pub fn from_control(control: &EnsembleTensor<f64>) -> Result<Self> {
        let (r, t, _, _) = control.dims();
        let p = control.geometry().n_pixels();
        let count = r * t;
        if count < 2 {
            return Err(Error::Dimension("control run needs at least two years".into()));
        }
        let mut mean = vec![0.0; p];
        for field in control.values().chunks(p) {
            mean.iter_mut().zip(field).for_each(|(a, v)| *a += v);
        }
        mean.iter_mut().for_each(|a| *a /= count as f64);
        let mut var = vec![0.0; p];
        for field in control.values().chunks(p) {
            for ((a, v), mu) in var.iter_mut().zip(field).zip(&mean) {
                *a += (v - mu) * (v - mu);
            }
        }
        let sd: Vec<f64> = var.iter().map(|v| (v / (count - 1) as f64).sqrt()).collect();
        if let Some(px) = sd.iter().position(|s| !(*s > 0.0)) {
            let m = control.geometry().n_lat();
            return Err(Error::Degenerate(format!(
                "control run has zero standard deviation at pixel (lat {}, lon {})",
                px % m,
                px / m
            )));
        }
        Ok(Self { mean, sd })
    }

    pub fn identity(n_pixels: usize) -> Self {
        Self { mean: vec![0.0; n_pixels], sd: vec![1.0; n_pixels] }
    }

    fn check(&self, e: &EnsembleTensor<f64>) -> Result<()> {
        if self.mean.len() != e.geometry().n_pixels() || self.sd.len() != self.mean.len() {
            return Err(Error::Dimension("standardization fields do not match the grid".into()));
        }
        Ok(())
    }

    pub fn apply(&self, e: &EnsembleTensor<f64>) -> Result<EnsembleTensor<f64>> {
        self.check(e)?;
        let p = self.mean.len();
        let mut out = e.clone();
        for field in out.values_mut().chunks_mut(p) {
            for ((v, mu), sd) in field.iter_mut().zip(&self.mean).zip(&self.sd) {
                *v = (*v - mu) / sd;
            }
        }
        Ok(out)
    }

    pub fn invert(&self, e: &EnsembleTensor<f64>) -> Result<EnsembleTensor<f64>> {
        self.check(e)?;
        let p = self.mean.len();
        let mut out = e.clone();
        for field in out.values_mut().chunks_mut(p) {
            for (px, v) in field.iter_mut().enumerate() {
                *v = self.mean[px] + self.sd[px] * *v;
            }
        }
        Ok(out)
    }
}

/// Standardizes `e` by the per-pixel statistics of `control`.
pub fn standardize(e: &EnsembleTensor<f64>, control: &EnsembleTensor<f64>) -> Result<(EnsembleTensor<f64>, Standardization)> {
    if e.geometry() != control.geometry() {
        return Err(Error::Dimension("control run grid differs from the training grid".into()));
    }
    let st = Standardization::from_control(control)?;
    Ok((st.apply(e)?, st))
}

/// Fitted mean model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanModelParams {
    pub geometry: GridGeometry,
    pub regions: RegionMap,
    pub beta0: Vec<f64>,
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    pub lambda: f64,
    pub standardization: Standardization,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<MeanFitSummary>,
}

/// Diagnostics recorded by [`fit_mean`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFitSummary {
    pub loglik: f64,
    pub lambda_sd: f64,
    pub beta2_sd: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta0_sd: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta1_sd: Option<Vec<f64>>,
    /// `(lambda, profile loglik)` pairs visited by the search.
    pub profile: Vec<(f64, f64)>,
}

impl MeanModelParams {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.regions.check_geometry(&self.geometry)?;
        let p = self.geometry.n_pixels();
        if self.beta0.len() != p || self.beta1.len() != p || self.beta2.len() != self.regions.n_regions() {
            return Err(Error::Dimension("mean coefficients do not match the grid and region map".into()));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::Domain(format!("lambda must lie in (0, 1), got {}", self.lambda)));
        }
        if self.standardization.mean.len() != p || self.standardization.sd.len() != p {
            return Err(Error::Dimension("standardization fields do not match the grid".into()));
        }
        if self.standardization.sd.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Domain("standardization sd must be positive".into()));
        }
        Ok(())
    }

    /// Mean in standardized units, `T x P` with `T = forcing.n_years()`.
    pub fn standardized_trajectory(&self, forcing: &ForcingSeries) -> Result<Vec<f64>> {
        self.validate()?;
        forcing.validate()?;
        let (s, g) = regressors(forcing, self.lambda);
        let p = self.geometry.n_pixels();
        let mut out = Vec::with_capacity(s.len() * p);
        for (st, gt) in s.iter().zip(&g) {
            out.extend((0..p).map(|px| self.beta0[px] + self.beta1[px] * st + self.beta2[self.regions.region_of(px)] * gt));
        }
        Ok(out)
    }

    #[inline]
    pub fn destandardize_at(&self, pixel: usize, v: f64) -> f64 {
        self.standardization.mean[pixel] + self.standardization.sd[pixel] * v
    }
}

/// Emulated mean trajectory for a new forcing, in physical units, as a
/// single-realization tensor.
pub fn emulate_mean(params: &MeanModelParams, forcing: &ForcingSeries) -> Result<EnsembleTensor<f64>> {
    let traj = params.standardized_trajectory(forcing)?;
    let p = params.geometry.n_pixels();
    let values = traj.iter().enumerate().map(|(i, v)| params.destandardize_at(i % p, *v)).collect();
    let mut t = EnsembleTensor::new(params.geometry.clone(), 1, forcing.n_years(), values)?;
    t.co2 = forcing.co2.clone();
    t.scenario_id = "emulated".into();
    Ok(t)
}

/// Lack-of-fit index per pixel,
/// `sum (T_r - That)^2 / (R/(R-1) sum (T_r - Tbar)^2)` over realizations and years.
pub fn lack_of_fit_index(truth: &EnsembleTensor<f64>, emulated: &EnsembleTensor<f64>) -> Result<Vec<f64>> {
    let (r, t, _, _) = truth.dims();
    if r < 2 {
        return Err(Error::Dimension("lack-of-fit index needs at least two realizations".into()));
    }
    if emulated.geometry() != truth.geometry() || emulated.n_time() != t || emulated.n_real() != 1 {
        return Err(Error::Dimension("emulated mean must be one realization on the truth grid and years".into()));
    }
    let p = truth.geometry().n_pixels();
    let mut num = vec![0.0; p];
    let mut den = vec![0.0; p];
    for year in 0..t {
        let fit = emulated.field(0, year);
        for px in 0..p {
            let bar = (0..r).map(|k| truth.field(k, year)[px]).sum::<f64>() / r as f64;
            for k in 0..r {
                let v = truth.field(k, year)[px];
                num[px] += (v - fit[px]) * (v - fit[px]);
                den[px] += (v - bar) * (v - bar);
            }
        }
    }
    let scale = r as f64 / (r as f64 - 1.0);
    num.iter()
        .zip(&den)
        .enumerate()
        .map(|(px, (a, b))| {
            if *b > 0.0 {
                Ok(a / (scale * b))
            } else {
                Err(Error::Degenerate(format!("pixel {px} is constant across realizations and years")))
            }
        })
        .collect()
}

/// Options for [`fit_mean`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanFitOptions {
    pub bracket: (f64, f64),
    pub tol: f64,
    /// Also compute standard errors of every per-pixel coefficient.
    pub pixel_sds: bool,
}

impl Default for MeanFitOptions {
    fn default() -> Self {
        Self { bracket: LAMBDA_BRACKET, tol: LAMBDA_TOL, pixel_sds: false }
    }
}

/// Generalized least squares of the mean model under a fixed space-time
/// covariance, evaluated for any `lambda`.
///
/// Work is arranged so that every `lambda` costs a handful of spatial
/// precision applications (one FFT plus `N` small triangular solves each)
/// per conjugate-gradient iteration, independent of the number of years.
pub struct MeanGls {
    geometry: GridGeometry,
    regions: RegionMap,
    forcing: ForcingSeries,
    blocks: SpectralBlocks<f64>,
    fourier: Fourier<f64>,
    n_time: usize,
    n_real: usize,
    /// AR coefficient per class (0 ocean, 1 land) and class per pixel.
    class_phi: [f64; 2],
    class: Vec<usize>,
    present: [bool; 2],
    phi_bar: f64,
    /// `Sigma_s^{-1} h_t` for every year, `T x P`.
    precision_h: Vec<f64>,
    hph: f64,
    gpg: Cholesky<f64>,
    logdet_sigma: f64,
}

/// GLS solution at one `lambda`.
#[derive(Debug, Clone)]
pub struct GlsSolution {
    pub lambda: f64,
    pub beta0: Vec<f64>,
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    /// Whitened residual quadratic form `h'Ph - b'beta` (per realization mean).
    pub residual_quad: f64,
    pub loglik: f64,
    pub iterations: usize,
}

struct Design {
    /// `x[k][t] = [intercept, short, long]` whitened with class-`k` coefficient.
    x: [Vec<[f64; 3]>; 2],
    /// `S[k][k'] = sum_t x_k x_k'^T`.
    s: [[[[f64; 3]; 3]; 2]; 2],
    pre: Preconditioner,
}

struct Preconditioner {
    suu_inv: [[f64; 2]; 2],
    s2u: [f64; 2],
    a: [f64; 2],
    kappa: f64,
}

impl MeanGls {
    /// `standardized` supplies the response (its realization average);
    /// `forcing` must cover exactly its years.
    pub fn new(
        standardized: &EnsembleTensor<f64>,
        forcing: &ForcingSeries,
        regions: &RegionMap,
        cov: &CovarianceParams<f64>,
    ) -> Result<Self> {
        let geom = standardized.geometry().clone();
        regions.check_geometry(&geom)?;
        forcing.validate()?;
        let (r, t, _, _) = standardized.dims();
        if forcing.n_years() != t {
            return Err(Error::Dimension(format!(
                "forcing covers {} modeled years, data has {t}",
                forcing.n_years()
            )));
        }
        let blocks = SpectralBlocks::build(cov, &geom)?;
        let fourier = Fourier::new(geom.n_lon());
        let p = geom.n_pixels();
        let class: Vec<usize> = geom.land_mask().iter().map(|&q| q as usize).collect();
        let present = [class.contains(&0), class.contains(&1)];
        let class_phi = [cov.ar.phi_ocean, cov.ar.phi_land];
        let phi_bar = class.iter().map(|&k| class_phi[k]).sum::<f64>() / p as f64;

        let mut ybar = vec![0.0; t * p];
        for k in 0..r {
            ybar.iter_mut().zip(standardized.realization(k)).for_each(|(a, v)| *a += v);
        }
        ybar.iter_mut().for_each(|v| *v /= r as f64);
        let phi: Vec<f64> = class.iter().map(|&k| class_phi[k]).collect();
        let h = crate::temporal::whiten(&ybar, t, &phi)?;
        let precision_h: Vec<Vec<f64>> = h.par_chunks(p).map(|x| blocks.solve_field(&fourier, x)).collect();
        let precision_h = precision_h.concat();
        let hph = h.iter().zip(&precision_h).map(|(a, b)| a * b).collect::<CompensatedSum<f64>>().value();

        let c = regions.n_regions();
        let pg: Vec<Vec<f64>> = (0..c)
            .into_par_iter()
            .map(|reg| {
                let ind: Vec<f64> = (0..p).map(|px| (regions.region_of(px) == reg) as u8 as f64).collect();
                blocks.solve_field(&fourier, &ind)
            })
            .collect();
        let mut gpg = vec![0.0; c * c];
        for (j, col) in pg.iter().enumerate() {
            for (px, v) in col.iter().enumerate() {
                gpg[regions.region_of(px) * c + j] += v;
            }
        }
        // Symmetrize round-off before factoring.
        for i in 0..c {
            for j in 0..i {
                let v = 0.5 * (gpg[i * c + j] + gpg[j * c + i]);
                gpg[i * c + j] = v;
                gpg[j * c + i] = v;
            }
        }
        let gpg = Cholesky::factor(&gpg, c)
            .ok_or_else(|| Error::NotPositiveDefinite { context: "region precision matrix".into() })?;
        let logdet_sigma = blocks.total_logdet();
        Ok(Self {
            geometry: geom,
            regions: regions.clone(),
            forcing: forcing.clone(),
            blocks,
            fourier,
            n_time: t,
            n_real: r,
            class_phi,
            class,
            present,
            phi_bar,
            precision_h,
            hph,
            gpg,
            logdet_sigma,
        })
    }

    fn whitened_rows(&self, s: &[f64], g: &[f64], phi: f64) -> Vec<[f64; 3]> {
        (0..self.n_time)
            .map(|t| {
                if t == 0 {
                    [1.0, s[0], g[0]]
                } else {
                    [1.0 - phi, s[t] - phi * s[t - 1], g[t] - phi * g[t - 1]]
                }
            })
            .collect()
    }

    fn design(&self, lambda: f64) -> Result<Design> {
        let (s, g) = regressors(&self.forcing, lambda);
        let x = [self.whitened_rows(&s, &g, self.class_phi[0]), self.whitened_rows(&s, &g, self.class_phi[1])];
        let mut ss = [[[[0.0; 3]; 3]; 2]; 2];
        for k in 0..2 {
            for kp in 0..2 {
                for t in 0..self.n_time {
                    for i in 0..3 {
                        for j in 0..3 {
                            ss[k][kp][i][j] += x[k][t][i] * x[kp][t][j];
                        }
                    }
                }
            }
        }
        let xbar = self.whitened_rows(&s, &g, self.phi_bar);
        let mut sb = [[0.0; 3]; 3];
        for row in &xbar {
            for i in 0..3 {
                for j in 0..3 {
                    sb[i][j] += row[i] * row[j];
                }
            }
        }
        check_collinear(&sb)?;
        let det = sb[0][0] * sb[1][1] - sb[0][1] * sb[1][0];
        let suu_inv = [[sb[1][1] / det, -sb[0][1] / det], [-sb[1][0] / det, sb[0][0] / det]];
        let a = [
            suu_inv[0][0] * sb[0][2] + suu_inv[0][1] * sb[1][2],
            suu_inv[1][0] * sb[0][2] + suu_inv[1][1] * sb[1][2],
        ];
        let kappa = sb[2][2] - sb[2][0] * a[0] - sb[2][1] * a[1];
        if !(kappa > COLLINEAR_TOL * sb[2][2]) {
            return Err(Error::RankDeficient(format!("{} collinear with intercept and short_term", COLUMN_NAMES[2])));
        }
        Ok(Design { x, s: ss, pre: Preconditioner { suu_inv, s2u: [sb[2][0], sb[2][1]], a, kappa } })
    }

    fn n_params(&self) -> usize {
        2 * self.geometry.n_pixels() + self.regions.n_regions()
    }

    /// Normal-equation operator `A theta`, `theta = [beta0; beta1; beta2]`.
    fn apply(&self, d: &Design, theta: &[f64]) -> Vec<f64> {
        let p = self.geometry.n_pixels();
        let c = self.regions.n_regions();
        let coef = |j: usize, px: usize| -> f64 {
            match j {
                0 => theta[px],
                1 => theta[p + px],
                _ => theta[2 * p + self.regions.region_of(px)],
            }
        };
        let jobs: Vec<(usize, usize)> =
            (0..3).flat_map(|j| (0..2).map(move |k| (j, k))).filter(|&(_, k)| self.present[k]).collect();
        let applied: Vec<((usize, usize), Vec<f64>)> = jobs
            .par_iter()
            .map(|&(j, k)| {
                let u: Vec<f64> = (0..p).map(|px| if self.class[px] == k { coef(j, px) } else { 0.0 }).collect();
                ((j, k), self.blocks.solve_field(&self.fourier, &u))
            })
            .collect();
        let mut out = vec![0.0; self.n_params()];
        for ((j, kp), pu) in &applied {
            for px in 0..p {
                let k = self.class[px];
                let s = &d.s[k][*kp];
                out[px] += s[0][*j] * pu[px];
                out[p + px] += s[1][*j] * pu[px];
                out[2 * p + self.regions.region_of(px)] += s[2][*j] * pu[px];
            }
        }
        debug_assert_eq!(out.len(), 2 * p + c);
        out
    }

    /// Exact inverse of the normal operator with every pixel using the mean AR coefficient.
    fn precondition(&self, d: &Design, r: &[f64]) -> Vec<f64> {
        let p = self.geometry.n_pixels();
        let c = self.regions.n_regions();
        let pre = &d.pre;
        let (w0, w1) = rayon::join(
            || self.blocks.mul_field(&self.fourier, &r[..p]),
            || self.blocks.mul_field(&self.fourier, &r[p..2 * p]),
        );
        let mut rhs = r[2 * p..].to_vec();
        for px in 0..p {
            rhs[self.regions.region_of(px)] -= r[px] * pre.a[0] + r[p + px] * pre.a[1];
        }
        self.gpg.solve_in_place(&mut rhs);
        let beta2: Vec<f64> = rhs.iter().map(|v| v / pre.kappa).collect();
        let mut out = vec![0.0; 2 * p + c];
        for px in 0..p {
            let gb = beta2[self.regions.region_of(px)];
            let u0 = w0[px] - gb * pre.s2u[0];
            let u1 = w1[px] - gb * pre.s2u[1];
            out[px] = u0 * pre.suu_inv[0][0] + u1 * pre.suu_inv[1][0];
            out[p + px] = u0 * pre.suu_inv[0][1] + u1 * pre.suu_inv[1][1];
        }
        out[2 * p..].copy_from_slice(&beta2);
        out
    }

    fn rhs(&self, d: &Design) -> Vec<f64> {
        let p = self.geometry.n_pixels();
        let mut b = vec![0.0; self.n_params()];
        for t in 0..self.n_time {
            let w = &self.precision_h[t * p..(t + 1) * p];
            for px in 0..p {
                let x = &d.x[self.class[px]][t];
                b[px] += x[0] * w[px];
                b[p + px] += x[1] * w[px];
                b[2 * p + self.regions.region_of(px)] += x[2] * w[px];
            }
        }
        b
    }

    fn pcg(&self, d: &Design, b: &[f64]) -> Result<(Vec<f64>, usize)> {
        let dot = |a: &[f64], c: &[f64]| a.iter().zip(c).map(|(x, y)| x * y).sum::<f64>();
        let bnorm = dot(b, b).sqrt();
        let mut x = vec![0.0; b.len()];
        if bnorm == 0.0 {
            return Ok((x, 0));
        }
        let mut r = b.to_vec();
        let mut z = self.precondition(d, &r);
        let mut dir = z.clone();
        let mut rz = dot(&r, &z);
        for it in 1..=PCG_MAX_ITER {
            let ad = self.apply(d, &dir);
            let alpha = rz / dot(&dir, &ad);
            x.iter_mut().zip(&dir).for_each(|(xi, di)| *xi += alpha * di);
            r.iter_mut().zip(&ad).for_each(|(ri, ai)| *ri -= alpha * ai);
            if dot(&r, &r).sqrt() <= PCG_TOL * bnorm {
                return Ok((x, it));
            }
            z = self.precondition(d, &r);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            dir.iter_mut().zip(&z).for_each(|(di, zi)| *di = zi + beta * *di);
        }
        Err(Error::NoConvergence(format!("GLS conjugate gradient stalled after {PCG_MAX_ITER} iterations")))
    }

    /// Profiled GLS fit at `lambda`.
    pub fn solve(&self, lambda: f64) -> Result<GlsSolution> {
        let d = self.design(lambda)?;
        let b = self.rhs(&d);
        let (theta, iterations) = self.pcg(&d, &b)?;
        let p = self.geometry.n_pixels();
        let bt: f64 = b.iter().zip(&theta).map(|(x, y)| x * y).sum();
        let residual_quad = (self.hph - bt).max(0.0);
        let tp = (self.n_time * p) as f64;
        let rr = self.n_real as f64;
        let logdet = self.n_time as f64 * self.logdet_sigma - tp * rr.ln();
        let loglik = -0.5 * tp * std::f64::consts::TAU.ln() - 0.5 * logdet - 0.5 * rr * residual_quad;
        Ok(GlsSolution {
            lambda,
            beta0: theta[..p].to_vec(),
            beta1: theta[p..2 * p].to_vec(),
            beta2: theta[2 * p..].to_vec(),
            residual_quad,
            loglik,
            iterations,
        })
    }

    /// Profile log-likelihood of `lambda`.
    pub fn profile(&self, lambda: f64) -> Result<f64> {
        self.solve(lambda).map(|s| s.loglik)
    }

    /// Standard errors `sqrt(diag((R A)^{-1}))` for the listed parameter
    /// indices (pixel `beta0`, then pixel `beta1`, then region `beta2`).
    pub fn coefficient_sds(&self, lambda: f64, indices: &[usize]) -> Result<Vec<f64>> {
        let d = self.design(lambda)?;
        let n = self.n_params();
        let rr = self.n_real as f64;
        indices
            .par_iter()
            .map(|&i| {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                let (x, _) = self.pcg(&d, &e)?;
                Ok((x[i] / rr).max(0.0).sqrt())
            })
            .collect()
    }
}

fn check_collinear(s: &[[f64; 3]; 3]) -> Result<()> {
    let norm = |i: usize, j: usize| s[i][j] / (s[i][i] * s[j][j]).sqrt();
    for i in 0..3 {
        if !(s[i][i] > 0.0) {
            return Err(Error::RankDeficient(format!("{} column is identically zero", COLUMN_NAMES[i])));
        }
    }
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let c = norm(i, j);
        if 1.0 - c * c < COLLINEAR_TOL {
            return Err(Error::RankDeficient(format!("{} collinear with {}", COLUMN_NAMES[j], COLUMN_NAMES[i])));
        }
    }
    Ok(())
}

/// Fits the mean model to standardized data under fixed covariance parameters.
pub fn fit_mean(
    standardized: &EnsembleTensor<f64>,
    standardization: Standardization,
    forcing: &ForcingSeries,
    regions: &RegionMap,
    cov: &CovarianceParams<f64>,
    opts: &MeanFitOptions,
) -> Result<MeanModelParams> {
    let gls = MeanGls::new(standardized, forcing, regions, cov)?;
    // Surface rank problems before the search swallows them.
    gls.design(0.5 * (opts.bracket.0 + opts.bracket.1))?;
    let mut profile = Vec::new();
    let mut failure = None;
    let (lambda, _, _) = golden_section_max(
        |lam| match gls.profile(lam) {
            Ok(v) => {
                profile.push((lam, v));
                v
            }
            Err(e) => {
                failure.get_or_insert(e);
                f64::NEG_INFINITY
            }
        },
        opts.bracket.0,
        opts.bracket.1,
        opts.tol,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let best = gls.solve(lambda)?;
    log::info!("event=mean_fit lambda={lambda:.5} loglik={:.6} pcg_iterations={}", best.loglik, best.iterations);

    let h = 1e-3_f64.min(0.5 * (lambda - opts.bracket.0)).min(0.5 * (opts.bracket.1 - lambda)).max(1e-6);
    let lo = gls.profile(lambda - h)?;
    let hi = gls.profile(lambda + h)?;
    let curvature = (hi - 2.0 * best.loglik + lo) / (h * h);
    let lambda_sd = if curvature < 0.0 { (-1.0 / curvature).sqrt() } else { f64::NAN };

    let p = standardized.geometry().n_pixels();
    let c = regions.n_regions();
    let beta2_sd = gls.coefficient_sds(lambda, &(2 * p..2 * p + c).collect::<Vec<_>>())?;
    let (beta0_sd, beta1_sd) = if opts.pixel_sds {
        (
            Some(gls.coefficient_sds(lambda, &(0..p).collect::<Vec<_>>())?),
            Some(gls.coefficient_sds(lambda, &(p..2 * p).collect::<Vec<_>>())?),
        )
    } else {
        (None, None)
    };
    profile.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(MeanModelParams {
        geometry: standardized.geometry().clone(),
        regions: regions.clone(),
        beta0: best.beta0,
        beta1: best.beta1,
        beta2: best.beta2,
        lambda,
        standardization,
        fit: Some(MeanFitSummary { loglik: best.loglik, lambda_sd, beta2_sd, beta0_sd, beta1_sd, profile }),
    })
}
