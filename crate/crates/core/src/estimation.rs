//! Two-stage REML fitting: per-band spectra first, then coherence and the
//! land/ocean AR coefficients with the band spectra held fixed.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{band_periodogram, PeriodogramKind};
use crate::error::{Error, Result};
use crate::grid::{EnsembleTensor, GridGeometry};
use crate::linalg::Cholesky;
use crate::optim::{hessian, nelder_mead, Minimum, SimplexOptions};
use crate::params::{ArCoefficients, BandSpectrum, Coherence, CovarianceParams, ALPHA_MIN, NU_MAX};
use crate::reml::{ind_variance_mle, reml_loglik_ind, ContrastSet, SpectralStats};
use crate::spectral::circular_frequency_sq;

const Z95: f64 = 1.959_963_984_540_054;
const PHI_START_CLAMP: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub simplex: SimplexOptions,
    /// Finite-difference step in transformed coordinates.
    pub hessian_step: f64,
    /// Restart the simplex once from its optimum.
    pub restart: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { simplex: SimplexOptions::default(), hessian_step: 1e-3, restart: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTrace {
    pub evaluations: usize,
    pub converged: bool,
    /// Normalized log-likelihood at the start and at the optimum.
    pub start: f64,
    pub end: f64,
}

/// One row of the estimate / sd / 95% interval table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub name: String,
    pub estimate: f64,
    pub sd: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

impl ParamEstimate {
    pub fn new(name: impl Into<String>, estimate: f64, sd: f64) -> Self {
        Self { name: name.into(), estimate, sd, ci_lower: estimate - Z95 * sd, ci_upper: estimate + Z95 * sd }
    }

    /// Whether `truth` lies within `k` standard deviations of the estimate.
    pub fn covers(&self, truth: f64, k: f64) -> bool {
        (self.estimate - truth).abs() <= k * self.sd
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandFit {
    pub band: usize,
    pub latitude: f64,
    pub spectrum: BandSpectrum<f64>,
    /// Provisional AR coefficient shared by every pixel of the band.
    pub phi_band: f64,
    /// Asymptotic sds of `(phi, alpha, nu, phi_band)`.
    pub sd: [f64; 4],
    pub loglik: f64,
    pub trace: OptimizerTrace,
    /// Estimate sits near a parameter boundary (flat spectrum, `nu` at its cap, `|phi_band|` near 1).
    pub boundary: bool,
}

impl BandFit {
    pub fn estimates(&self) -> Vec<ParamEstimate> {
        let m = self.band;
        vec![
            ParamEstimate::new(format!("phi_{m}"), self.spectrum.phi, self.sd[0]),
            ParamEstimate::new(format!("alpha_{m}"), self.spectrum.alpha, self.sd[1]),
            ParamEstimate::new(format!("nu_{m}"), self.spectrum.nu, self.sd[2]),
            ParamEstimate::new(format!("phi_band_{m}"), self.phi_band, self.sd[3]),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandFailure {
    pub band: usize,
    pub message: String,
}

/// Stage-one output for every band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandFits {
    pub geometry: GridGeometry,
    pub bands: Vec<BandFit>,
    #[serde(default)]
    pub failures: Vec<BandFailure>,
    pub elapsed_secs: f64,
    pub estimates: Vec<ParamEstimate>,
}

impl BandFits {
    /// Fitted spectra in band order; fails if any band failed.
    pub fn spectra(&self) -> Result<Vec<BandSpectrum<f64>>> {
        if !self.failures.is_empty() {
            let list: Vec<String> = self.failures.iter().map(|f| format!("band {}: {}", f.band, f.message)).collect();
            return Err(Error::Degenerate(format!("band fits failed: {}", list.join("; "))));
        }
        if self.bands.len() != self.geometry.n_lat() {
            return Err(Error::Dimension(format!(
                "{} band fits for {} latitudes",
                self.bands.len(),
                self.geometry.n_lat()
            )));
        }
        Ok(self.bands.iter().map(|b| b.spectrum).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub stage1_secs: f64,
    pub stage2_secs: f64,
    pub sd_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: CovarianceParams<f64>,
    pub loglik: f64,
    pub normalized_loglik: f64,
    /// Coherence and AR rows first, then the band rows.
    pub estimates: Vec<ParamEstimate>,
    pub trace: OptimizerTrace,
    pub timings: Timings,
}

impl FitReport {
    pub fn estimate(&self, name: &str) -> Option<&ParamEstimate> {
        self.estimates.iter().find(|e| e.name == name)
    }
}

fn minimize<F>(f: F, x0: &[f64], opts: &FitOptions) -> Minimum
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let first = nelder_mead(&f, x0, &opts.simplex);
    if !opts.restart || first.evals >= opts.simplex.max_evals {
        return first;
    }
    let budget = SimplexOptions { max_evals: opts.simplex.max_evals - first.evals, ..opts.simplex };
    let second = nelder_mead(&f, &first.x, &budget);
    let best = if second.f <= first.f { second.x } else { first.x };
    Minimum {
        x: best,
        f: second.f.min(first.f),
        f_start: first.f_start,
        evals: first.evals + second.evals,
        converged: second.converged,
    }
}

fn trace(m: &Minimum) -> OptimizerTrace {
    OptimizerTrace { evaluations: m.evals, converged: m.converged, start: -m.f_start, end: -m.f }
}

/// Delta-method sds from the Hessian of a normalized objective in transformed
/// coordinates; `scale` converts the objective to the negative log-likelihood.
fn delta_sds<F>(f: F, u: &[f64], jacobian: &[f64], scale: f64, step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = u.len();
    let h: Vec<f64> = hessian(f, u, &vec![step; d]).into_iter().map(|v| v * scale).collect();
    match Cholesky::factor(&h, d) {
        Some(chol) if h.iter().all(|v| v.is_finite()) => {
            let inv = chol.inverse();
            (0..d).map(|i| jacobian[i].abs() * inv[i * d + i].sqrt()).collect()
        }
        _ => {
            log::warn!("event=hessian_not_pd dim={d}");
            vec![f64::NAN; d]
        }
    }
}

fn band_params(u: &[f64]) -> Option<(BandSpectrum<f64>, f64)> {
    let b = BandSpectrum { phi: u[0].exp(), alpha: ALPHA_MIN + u[1].exp(), nu: u[2].exp() };
    let phi_band = u[3].tanh();
    (b.validate().is_ok() && phi_band.abs() < 1.0).then_some((b, phi_band))
}

fn single_band(b: BandSpectrum<f64>, phi_band: f64) -> CovarianceParams<f64> {
    CovarianceParams {
        bands: vec![b],
        coherence: Coherence { xi: 0.5, tau: 1.0 },
        ar: ArCoefficients::uniform(phi_band),
    }
}

/// Method-of-moments start `(phi, alpha, nu = 1, phi_band)` for band `m`.
pub fn band_start(d: &ContrastSet<f64>, m: usize) -> Result<(BandSpectrum<f64>, f64)> {
    let band = d.band(m);
    let n = band.geometry().n_lon();
    let t = band.n_time();
    let (mut num, mut den) = (0.0, 0.0);
    for r in 0..band.n_real() {
        let means: Vec<f64> = band.realization(r).chunks(n).map(|f| f.iter().sum::<f64>() / n as f64).collect();
        for k in 1..t {
            num += means[k] * means[k - 1];
        }
        den += means.iter().map(|v| v * v).sum::<f64>();
    }
    let rho = if den > 0.0 { (num / den).clamp(-PHI_START_CLAMP, PHI_START_CLAMP) } else { 0.0 };
    let per = band_periodogram(d, m, &ArCoefficients::uniform(rho), PeriodogramKind::PerTime)?;
    let half = per[0] / 2.0;
    let ch = (1..=n / 2).find(|&c| per[c] <= half).unwrap_or(n / 2).max(1);
    let omega = circular_frequency_sq::<f64>(ch, n).sqrt();
    let alpha = (omega / (2f64.powf(2.0 / 3.0) - 1.0).sqrt()).max(1e-3);
    let shape: f64 = (0..n).map(|c| (alpha * alpha + circular_frequency_sq::<f64>(c, n)).powf(-1.5)).sum();
    let level: f64 = per.iter().sum();
    let phi = if level > 0.0 && shape > 0.0 { level / shape } else { 1.0 };
    Ok((BandSpectrum { phi, alpha, nu: 1.0 }, rho))
}

/// Stage one for band `m`: REML over `(phi, alpha, nu, phi_band)` of the
/// band's contrasts alone.
pub fn fit_band(d: &ContrastSet<f64>, m: usize, opts: &FitOptions) -> Result<BandFit> {
    let geom = d.geometry();
    if m >= geom.n_lat() {
        return Err(Error::Dimension(format!("band {m} out of range for {} latitudes", geom.n_lat())));
    }
    let band = d.band(m);
    if band.is_degenerate() {
        return Err(Error::Degenerate(format!("band {m} contrasts are identically zero")));
    }
    let stats = SpectralStats::new(&band);
    let (b0, rho0) = band_start(d, m)?;
    let objective = |u: &[f64]| -> f64 {
        match band_params(u) {
            Some((b, phi)) => match stats.loglik(&single_band(b, phi)) {
                Ok(ll) => -ll.normalized(),
                Err(_) => f64::INFINITY,
            },
            None => f64::INFINITY,
        }
    };
    let u0 = [b0.phi.ln(), (b0.alpha - ALPHA_MIN).ln(), b0.nu.ln(), rho0.atanh()];
    let min = minimize(objective, &u0, opts);
    let (spectrum, phi_band) = band_params(&min.x)
        .filter(|_| min.f.is_finite())
        .ok_or_else(|| Error::NoConvergence(format!("band {m} fit found no valid point")))?;
    let jac = [spectrum.phi, spectrum.alpha - ALPHA_MIN, spectrum.nu, 1.0 - phi_band * phi_band];
    let n_contrasts = stats.n_contrasts() as f64;
    let sd = delta_sds(objective, &min.x, &jac, n_contrasts, opts.hessian_step);
    let boundary = spectrum.nu < 1e-2 || spectrum.nu > 0.99 * NU_MAX || spectrum.alpha > 1e2 || phi_band.abs() > 0.99;
    if !min.converged {
        log::warn!("event=band_not_converged band={m} evals={}", min.evals);
    }
    Ok(BandFit {
        band: m,
        latitude: geom.latitudes()[m],
        spectrum,
        phi_band,
        sd: [sd[0], sd[1], sd[2], sd[3]],
        loglik: -min.f * n_contrasts,
        trace: trace(&min),
        boundary,
    })
}

/// Stage one over every band in parallel; failures are collected per band.
pub fn fit_all_bands(e: &EnsembleTensor<f64>, opts: &FitOptions) -> Result<BandFits> {
    let start = Instant::now();
    let d = ContrastSet::from_ensemble(e)?;
    let results: Vec<Result<BandFit>> = (0..e.geometry().n_lat()).into_par_iter().map(|m| fit_band(&d, m, opts)).collect();
    let mut bands = Vec::new();
    let mut failures = Vec::new();
    for (m, r) in results.into_iter().enumerate() {
        match r {
            Ok(b) => bands.push(b),
            Err(err) => failures.push(BandFailure { band: m, message: err.to_string() }),
        }
    }
    let estimates = bands.iter().flat_map(BandFit::estimates).collect();
    Ok(BandFits { geometry: e.geometry().clone(), bands, failures, elapsed_secs: start.elapsed().as_secs_f64(), estimates })
}

/// Which AR coefficients are identifiable (their class is present on the grid).
fn classes_present(geom: &GridGeometry) -> [bool; 2] {
    [geom.land_mask().contains(&0), geom.land_mask().contains(&1)]
}

struct GlobalMap {
    present: [bool; 2],
}

impl GlobalMap {
    fn params(&self, bands: &[BandSpectrum<f64>], u: &[f64]) -> CovarianceParams<f64> {
        let xi = 1.0 / (1.0 + (-u[0]).exp());
        let tau = u[1].exp();
        let mut phis = u[2..].iter().map(|v| v.tanh());
        let (po, pl) = match self.present {
            [true, true] => {
                let a = phis.next().unwrap_or(0.0);
                (a, phis.next().unwrap_or(0.0))
            }
            _ => {
                let a = phis.next().unwrap_or(0.0);
                (a, a)
            }
        };
        CovarianceParams { bands: bands.to_vec(), coherence: Coherence { xi, tau }, ar: ArCoefficients { phi_ocean: po, phi_land: pl } }
    }

    fn transform(&self, p: &CovarianceParams<f64>) -> Vec<f64> {
        let xi = p.coherence.xi;
        let mut u = vec![(xi / (1.0 - xi)).ln(), p.coherence.tau.ln()];
        match self.present {
            [true, true] => u.extend([p.ar.phi_ocean.atanh(), p.ar.phi_land.atanh()]),
            [false, true] => u.push(p.ar.phi_land.atanh()),
            _ => u.push(p.ar.phi_ocean.atanh()),
        }
        u
    }
}

/// Stage-two start: `xi = 0.9`, `tau = 0.2`, both AR coefficients `0.1`.
pub fn global_start(bands: Vec<BandSpectrum<f64>>) -> CovarianceParams<f64> {
    CovarianceParams { bands, coherence: Coherence { xi: 0.9, tau: 0.2 }, ar: ArCoefficients { phi_ocean: 0.1, phi_land: 0.1 } }
}

/// Stage two: REML over `(xi, tau, phi_ocean, phi_land)` with the band spectra fixed.
pub fn fit_global(e: &EnsembleTensor<f64>, band_fits: &BandFits, opts: &FitOptions) -> Result<FitReport> {
    if band_fits.geometry != *e.geometry() {
        return Err(Error::Dimension("band fits were made on a different grid".into()));
    }
    let bands = band_fits.spectra()?;
    let d = ContrastSet::from_ensemble(e)?;
    if d.is_degenerate() {
        return Err(Error::Degenerate("all contrasts are identically zero".into()));
    }
    let t2 = Instant::now();
    let stats = SpectralStats::new(&d);
    let map = GlobalMap { present: classes_present(e.geometry()) };
    let objective = |u: &[f64]| -> f64 {
        let p = map.params(&bands, u);
        if p.validate().is_err() {
            return f64::INFINITY;
        }
        stats.loglik(&p).map(|ll| -ll.normalized()).unwrap_or(f64::INFINITY)
    };
    let u0 = map.transform(&global_start(bands.clone()));
    let min = minimize(objective, &u0, opts);
    if !min.f.is_finite() {
        return Err(Error::NoConvergence("global fit found no valid point".into()));
    }
    if !min.converged {
        log::warn!("event=global_not_converged evals={}", min.evals);
    }
    let params = map.params(&bands, &min.x);
    let stage2_secs = t2.elapsed().as_secs_f64();

    let ts = Instant::now();
    let sds = asymptotic_sd_with(&stats, &params, opts.hessian_step)?;
    let sd_secs = ts.elapsed().as_secs_f64();
    let ll = stats.loglik(&params)?;
    let mut estimates = vec![
        ParamEstimate::new("xi", params.coherence.xi, sds[0]),
        ParamEstimate::new("tau", params.coherence.tau, sds[1]),
        ParamEstimate::new("phi_ocean", params.ar.phi_ocean, sds[2]),
        ParamEstimate::new("phi_land", params.ar.phi_land, sds[3]),
    ];
    estimates.extend(band_fits.estimates.iter().filter(|e| !e.name.starts_with("phi_band")).cloned());
    Ok(FitReport {
        params,
        loglik: ll.value(),
        normalized_loglik: ll.normalized(),
        estimates,
        trace: trace(&min),
        timings: Timings { stage1_secs: band_fits.elapsed_secs, stage2_secs, sd_secs },
    })
}

/// Stage one followed by stage two.
pub fn fit_two_stage(e: &EnsembleTensor<f64>, opts: &FitOptions) -> Result<(BandFits, FitReport)> {
    let bands = fit_all_bands(e, opts)?;
    let report = fit_global(e, &bands, opts)?;
    Ok((bands, report))
}

/// Asymptotic sds of `(xi, tau, phi_ocean, phi_land)` with the band spectra
/// treated as known. An AR coefficient whose class is absent gets `NaN`.
pub fn asymptotic_sd(e: &EnsembleTensor<f64>, params: &CovarianceParams<f64>) -> Result<[f64; 4]> {
    let d = ContrastSet::from_ensemble(e)?;
    asymptotic_sd_with(&SpectralStats::new(&d), params, FitOptions::default().hessian_step)
}

fn asymptotic_sd_with(stats: &SpectralStats<f64>, params: &CovarianceParams<f64>, step: f64) -> Result<[f64; 4]> {
    params.validate_for(stats.geometry())?;
    let map = GlobalMap { present: classes_present(stats.geometry()) };
    let u = map.transform(params);
    let objective = |x: &[f64]| -> f64 {
        let p = map.params(&params.bands, x);
        stats.loglik(&p).map(|ll| -ll.normalized()).unwrap_or(f64::INFINITY)
    };
    let xi = params.coherence.xi;
    let mut jac = vec![xi * (1.0 - xi), params.coherence.tau];
    match map.present {
        [true, true] => jac.extend([1.0 - params.ar.phi_ocean.powi(2), 1.0 - params.ar.phi_land.powi(2)]),
        [false, true] => jac.push(1.0 - params.ar.phi_land.powi(2)),
        _ => jac.push(1.0 - params.ar.phi_ocean.powi(2)),
    }
    let sd = delta_sds(objective, &u, &jac, stats.n_contrasts() as f64, step);
    Ok(match map.present {
        [true, true] => [sd[0], sd[1], sd[2], sd[3]],
        [false, true] => [sd[0], sd[1], f64::NAN, sd[2]],
        _ => [sd[0], sd[1], sd[2], f64::NAN],
    })
}

/// Independent-pixel baseline with the variance profiled out and the two AR
/// coefficients optimized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndFit {
    pub variance: f64,
    pub ar: ArCoefficients<f64>,
    pub loglik: f64,
    pub normalized_loglik: f64,
    pub trace: OptimizerTrace,
}

pub fn fit_ind(d: &ContrastSet<f64>, opts: &FitOptions) -> Result<IndFit> {
    if d.is_degenerate() {
        return Err(Error::Degenerate("all contrasts are identically zero".into()));
    }
    let map = GlobalMap { present: classes_present(d.geometry()) };
    let ar_of = |u: &[f64]| -> ArCoefficients<f64> {
        let mut full = vec![0.0, 0.0];
        full.extend_from_slice(u);
        map.params(&[], &full).ar
    };
    let objective = |u: &[f64]| -> f64 {
        let ar = ar_of(u);
        ind_variance_mle(d, &ar)
            .and_then(|v| reml_loglik_ind(d, v, &ar))
            .map(|ll| -ll.normalized())
            .unwrap_or(f64::INFINITY)
    };
    let u0 = vec![0.1f64.atanh(); if map.present == [true, true] { 2 } else { 1 }];
    let min = minimize(objective, &u0, opts);
    let ar = ar_of(&min.x);
    let variance = ind_variance_mle(d, &ar)?;
    let ll = reml_loglik_ind(d, variance, &ar)?;
    Ok(IndFit { variance, ar, loglik: ll.value(), normalized_loglik: ll.normalized(), trace: trace(&min) })
}
