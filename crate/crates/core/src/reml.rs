//! Restricted log-likelihood of replicated ensembles.
//!
//! For contrasts `D_r = T_r - mean_r T_r` the restricted log-likelihood is
//!
//! ```text
//! -TNM(R-1)/2 log(2 pi) - (R-1)/2 log det Sigma - TNM/2 log R - 1/2 sum_r D_r' Sigma^{-1} D_r
//! ```
//!
//! Three routes are provided and must agree: the FFT route (whiten in time,
//! Fourier transform along longitude, solve per wavenumber), a dense spatial
//! route (whiten, then dense Cholesky of the spatial covariance) and a fully
//! dense space-time route that assembles the AR(1) covariance literally.

use rayon::prelude::*;
use rustfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::fourier::{half_spectrum, Fourier};
use crate::grid::{EnsembleTensor, GridGeometry};
use crate::linalg::{trace_inv_product, Cholesky};
use crate::params::{ArCoefficients, CovarianceParams};
use crate::scalar::{CompensatedSum, Real};
use crate::spectral::SpectralBlocks;

/// Largest `T * N * M` accepted by the dense space-time route.
pub const DENSE_LIMIT: usize = 4096;
/// Largest `N * M` accepted by the dense spatial route.
pub const DENSE_SPATIAL_LIMIT: usize = 4096;
/// Returned in place of `-inf` when every contrast is exactly zero.
pub const DEGENERATE_LOGLIK: f64 = -1e300;

/// Realization contrasts `D_r = T_r - Tbar` and the REML mean estimate `Tbar`.
#[derive(Debug, Clone)]
pub struct ContrastSet<T> {
    geometry: GridGeometry,
    n_real: usize,
    n_time: usize,
    values: Vec<T>,
    mean: Vec<T>,
}

impl<T: Real> ContrastSet<T> {
    pub fn from_ensemble(e: &EnsembleTensor<T>) -> Result<Self> {
        let (r, t, _, _) = e.dims();
        if r < 2 {
            return Err(Error::Dimension(format!("contrasts need at least 2 realizations, got {r}")));
        }
        let block = t * e.geometry().n_pixels();
        let inv_r = T::one() / T::of_usize(r);
        let mut mean = vec![T::zero(); block];
        for k in 0..r {
            for (acc, &v) in mean.iter_mut().zip(e.realization(k)) {
                *acc = *acc + v;
            }
        }
        mean.iter_mut().for_each(|v| *v = *v * inv_r);
        let mut values = e.values().to_vec();
        for chunk in values.chunks_mut(block) {
            for (v, &mu) in chunk.iter_mut().zip(&mean) {
                *v = *v - mu;
            }
        }
        Ok(Self { geometry: e.geometry().clone(), n_real: r, n_time: t, values, mean })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn n_real(&self) -> usize {
        self.n_real
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    /// Number of free contrasts `N M T (R - 1)`.
    pub fn n_contrasts(&self) -> usize {
        self.geometry.n_pixels() * self.n_time * (self.n_real - 1)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn realization(&self, r: usize) -> &[T] {
        let len = self.n_time * self.geometry.n_pixels();
        &self.values[r * len..(r + 1) * len]
    }

    /// REML estimate of the mean, `T x N x M`.
    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn is_degenerate(&self) -> bool {
        self.values.iter().all(|v| *v == T::zero())
    }

    /// Contrasts restricted to latitude band `m`.
    pub fn band(&self, m: usize) -> Self {
        let (nm, nn) = (self.geometry.n_lat(), self.geometry.n_lon());
        let pick = |src: &[T]| -> Vec<T> { src.chunks(nm).map(|px| px[m]).collect::<Vec<_>>() };
        debug_assert_eq!(self.values.len() % (nm * nn), 0);
        Self {
            geometry: self.geometry.band(m),
            n_real: self.n_real,
            n_time: self.n_time,
            values: pick(&self.values),
            mean: pick(&self.mean),
        }
    }

    /// Multiplies every contrast by `s`.
    pub fn scaled(&self, s: T) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = *v * s);
        out
    }

    /// Whitened contrasts `H_{t;r}` for per-pixel AR coefficients.
    pub fn whitened(&self, ar: &ArCoefficients<T>) -> Result<Vec<T>> {
        let phi = ar.expand(&self.geometry);
        crate::temporal::whiten_all(&self.values, self.n_real, self.n_time, &phi)
    }
}

/// The pieces of the restricted log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Loglik<T> {
    /// `-TNM(R-1)/2 log 2 pi - TNM/2 log R`.
    pub constant: T,
    /// `-(R-1)/2 log det Sigma`.
    pub logdet_term: T,
    /// `-1/2 sum_r D_r' Sigma^{-1} D_r`.
    pub quad_term: T,
    pub n_contrasts: usize,
    pub degenerate: bool,
}

impl<T: Real> Loglik<T> {
    fn assemble(d: &ContrastSet<T>, logdet_sigma: T, quad: T) -> Self {
        let tnm = T::of_usize(d.n_time * d.geometry.n_pixels());
        let r = T::of_usize(d.n_real);
        let half = T::of(0.5);
        let constant = -tnm * (r - T::one()) * half * T::TAU().ln() - tnm * half * r.ln();
        Self {
            constant,
            logdet_term: -(r - T::one()) * half * logdet_sigma,
            quad_term: -half * quad,
            n_contrasts: d.n_contrasts(),
            degenerate: d.is_degenerate(),
        }
    }

    pub fn value(&self) -> T {
        if self.degenerate {
            return T::of(DEGENERATE_LOGLIK).max(T::min_value());
        }
        self.constant + self.logdet_term + self.quad_term
    }

    /// Log-likelihood per free contrast.
    pub fn normalized(&self) -> T {
        self.value() / T::of_usize(self.n_contrasts)
    }
}

/// `x' Sigma_s^{-1} x` for one `N x M` field via the spectral blocks.
fn spectral_quad<T: Real>(
    blocks: &SpectralBlocks<T>,
    fourier: &Fourier<T>,
    field: &[T],
    spec: &mut [Complex<T>],
    buf: &mut Vec<Complex<T>>,
    work: &mut Vec<T>,
) -> T {
    let (m, n) = (blocks.n_lat(), blocks.n_lon());
    fourier.forward_field(field, m, spec, buf);
    work.resize(m, T::zero());
    let mut acc = CompensatedSum::new();
    for (c, weight) in half_spectrum(n) {
        let chol = blocks.cholesky(c);
        let x = &spec[c * m..(c + 1) * m];
        let mut q = T::zero();
        for part in 0..2 {
            for (w, z) in work.iter_mut().zip(x) {
                *w = if part == 0 { z.re } else { z.im };
            }
            chol.forward_in_place(work);
            q = q + work.iter().map(|v| *v * *v).sum::<T>();
        }
        acc.add(q * T::of_usize(weight));
    }
    acc.value() / T::of_usize(n)
}

/// Quadratic form `sum_r sum_t H' Sigma_s^{-1} H` of whitened contrasts, via FFT.
pub fn whitened_quadratic_fft<T: Real>(blocks: &SpectralBlocks<T>, h: &[T], n_fields: usize) -> T {
    let (m, n) = (blocks.n_lat(), blocks.n_lon());
    let p = m * n;
    debug_assert_eq!(h.len(), n_fields * p);
    let fourier = Fourier::<T>::new(n);
    h.par_chunks(p)
        .map_init(
            || (vec![Complex::default(); p], Vec::new(), Vec::new()),
            |(spec, buf, work), field| spectral_quad(blocks, &fourier, field, spec, buf, work),
        )
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<CompensatedSum<T>>()
        .value()
}

fn check_geometry<T: Real>(d: &ContrastSet<T>, geom: &GridGeometry) -> Result<()> {
    if d.geometry != *geom {
        return Err(Error::Dimension("contrast geometry differs from the supplied grid".into()));
    }
    Ok(())
}

/// Restricted log-likelihood through the spectral block diagonalization.
pub fn reml_loglik_fft<T: Real>(d: &ContrastSet<T>, p: &CovarianceParams<T>, geom: &GridGeometry) -> Result<Loglik<T>> {
    check_geometry(d, geom)?;
    let blocks = SpectralBlocks::build(p, geom)?;
    reml_loglik_with_blocks(d, &blocks, &p.ar)
}

/// As [`reml_loglik_fft`] with prebuilt blocks.
pub fn reml_loglik_with_blocks<T: Real>(
    d: &ContrastSet<T>,
    blocks: &SpectralBlocks<T>,
    ar: &ArCoefficients<T>,
) -> Result<Loglik<T>> {
    ar.validate()?;
    let h = d.whitened(ar)?;
    let quad = whitened_quadratic_fft(blocks, &h, d.n_real * d.n_time);
    let logdet = T::of_usize(d.n_time) * blocks.total_logdet();
    Ok(Loglik::assemble(d, logdet, quad))
}

/// Restricted log-likelihood by whitening in time and a dense Cholesky of the
/// `NM x NM` spatial covariance.
pub fn reml_loglik_dense_spatial<T: Real>(
    d: &ContrastSet<T>,
    p: &CovarianceParams<T>,
    geom: &GridGeometry,
) -> Result<Loglik<T>> {
    check_geometry(d, geom)?;
    let np = geom.n_pixels();
    if np > DENSE_SPATIAL_LIMIT {
        return Err(Error::TooLarge { size: np, limit: DENSE_SPATIAL_LIMIT });
    }
    let blocks = SpectralBlocks::build(p, geom)?;
    let sigma = blocks.synthesize_covariance();
    let chol = Cholesky::factor(&sigma, np)
        .ok_or_else(|| Error::NotPositiveDefinite { context: "dense spatial covariance".into() })?;
    let h = d.whitened(&p.ar)?;
    let quad = h
        .par_chunks(np)
        .map(|x| chol.quad_form(x))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<CompensatedSum<T>>()
        .value();
    Ok(Loglik::assemble(d, T::of_usize(d.n_time) * chol.logdet(), quad))
}

/// Dense `TNM x TNM` covariance of one realization under the AR(1) model with
/// `eps_1 ~ N(0, Sigma_s)`. Index `t * NM + n * M + m`.
pub fn space_time_covariance<T: Real>(sigma_s: &[T], phi: &[T], n_time: usize) -> Vec<T> {
    let p = phi.len();
    let dim = p * n_time;
    let mut cov = vec![T::zero(); dim * dim];
    // V_t = Var(eps_t): V_1 = S, V_t = Phi V_{t-1} Phi + S.
    let mut v = sigma_s.to_vec();
    for t in 0..n_time {
        if t > 0 {
            let mut next = sigma_s.to_vec();
            for i in 0..p {
                for j in 0..p {
                    next[i * p + j] = next[i * p + j] + phi[i] * v[i * p + j] * phi[j];
                }
            }
            v = next;
        }
        // Cov(eps_{t+k}, eps_t) = Phi^k V_t.
        let mut lagged = v.clone();
        for k in 0..n_time - t {
            let row_t = t + k;
            for i in 0..p {
                for j in 0..p {
                    let x = lagged[i * p + j];
                    cov[(row_t * p + i) * dim + t * p + j] = x;
                    cov[(t * p + j) * dim + row_t * p + i] = x;
                }
            }
            for i in 0..p {
                for j in 0..p {
                    lagged[i * p + j] = phi[i] * lagged[i * p + j];
                }
            }
        }
    }
    cov
}

/// Restricted log-likelihood assembled literally from the dense space-time covariance.
pub fn reml_loglik_dense<T: Real>(d: &ContrastSet<T>, p: &CovarianceParams<T>, geom: &GridGeometry) -> Result<Loglik<T>> {
    check_geometry(d, geom)?;
    let np = geom.n_pixels();
    let dim = np * d.n_time;
    if dim > DENSE_LIMIT {
        return Err(Error::TooLarge { size: dim, limit: DENSE_LIMIT });
    }
    let blocks = SpectralBlocks::build(p, geom)?;
    let sigma_s = blocks.synthesize_covariance();
    let cov = space_time_covariance(&sigma_s, &p.ar.expand(geom), d.n_time);
    reml_loglik_dense_matrix(d, &cov)
}

/// Restricted log-likelihood for an explicit `TNM x TNM` covariance.
pub fn reml_loglik_dense_matrix<T: Real>(d: &ContrastSet<T>, cov: &[T]) -> Result<Loglik<T>> {
    let dim = d.geometry.n_pixels() * d.n_time;
    if cov.len() != dim * dim {
        return Err(Error::Dimension(format!("covariance is not {dim} x {dim}")));
    }
    let chol = Cholesky::factor(cov, dim)
        .ok_or_else(|| Error::NotPositiveDefinite { context: "dense space-time covariance".into() })?;
    let quad: CompensatedSum<T> = (0..d.n_real).map(|r| chol.quad_form(d.realization(r))).collect();
    Ok(Loglik::assemble(d, chol.logdet(), quad.value()))
}

/// Restricted log-likelihood of the independent model `Sigma_s = v I`.
pub fn reml_loglik_ind<T: Real>(d: &ContrastSet<T>, variance: T, ar: &ArCoefficients<T>) -> Result<Loglik<T>> {
    if !(variance > T::zero()) {
        return Err(Error::Domain(format!("variance must be positive, got {variance}")));
    }
    ar.validate()?;
    let ss = whitened_sum_squares(d, ar)?;
    let np = T::of_usize(d.geometry.n_pixels() * d.n_time);
    Ok(Loglik::assemble(d, np * variance.ln(), ss / variance))
}

/// Closed-form maximizer of [`reml_loglik_ind`] over the variance.
pub fn ind_variance_mle<T: Real>(d: &ContrastSet<T>, ar: &ArCoefficients<T>) -> Result<T> {
    let ss = whitened_sum_squares(d, ar)?;
    Ok(ss / T::of_usize(d.n_contrasts()))
}

fn whitened_sum_squares<T: Real>(d: &ContrastSet<T>, ar: &ArCoefficients<T>) -> Result<T> {
    let h = d.whitened(ar)?;
    Ok(h.iter().map(|v| *v * *v).collect::<CompensatedSum<T>>().value())
}

/// Sufficient statistics of whitened contrasts in the spectral domain.
///
/// The Fourier coefficients of `H_t = D_t - Phi D_{t-1}` are linear in the two
/// AR coefficients, so `sum_{r,t} Re(X X^H)` at each wavenumber is a quadratic
/// in `(phi_ocean, phi_land)` with six `M x M` coefficient matrices. Once they
/// are accumulated, each likelihood evaluation costs `O(N M^3)` regardless of
/// `T` and `R`.
#[derive(Debug, Clone)]
pub struct SpectralStats<T> {
    geometry: GridGeometry,
    n_real: usize,
    n_time: usize,
    n_contrasts: usize,
    degenerate: bool,
    /// Per stored wavenumber: `[aa, ao, al, oo, ll, ol]`, each `M x M` row-major.
    stats: Vec<[Vec<T>; 6]>,
}

impl<T: Real> SpectralStats<T> {
    pub fn new(d: &ContrastSet<T>) -> Self {
        let geom = d.geometry();
        let (m, n) = (geom.n_lat(), geom.n_lon());
        let p = m * n;
        let n_time = d.n_time;
        let half: Vec<usize> = half_spectrum(n).map(|(c, _)| c).collect();
        let fourier = Fourier::<T>::new(n);
        let land: Vec<T> = geom.land_mask().iter().map(|&q| T::of(q as f64)).collect();
        let empty = || -> Vec<[Vec<T>; 6]> {
            (0..half.len()).map(|_| std::array::from_fn(|_| vec![T::zero(); m * m])).collect()
        };

        let stats = (0..d.n_real)
            .into_par_iter()
            .map(|r| {
                let mut acc = empty();
                let series = d.realization(r);
                let mut buf = Vec::new();
                let mut a_prev = vec![Complex::default(); p];
                let mut a_cur = vec![Complex::default(); p];
                let mut l_cur = vec![Complex::default(); p];
                let mut masked = vec![T::zero(); p];
                for t in 0..n_time {
                    let field = &series[t * p..(t + 1) * p];
                    fourier.forward_field(field, m, &mut a_cur, &mut buf);
                    if t > 0 {
                        let prev = &series[(t - 1) * p..t * p];
                        for ((o, &x), &q) in masked.iter_mut().zip(prev).zip(&land) {
                            *o = x * q;
                        }
                        fourier.forward_field(&masked, m, &mut l_cur, &mut buf);
                    }
                    for (slot, &c) in half.iter().enumerate() {
                        let a = &a_cur[c * m..(c + 1) * m];
                        let s = &mut acc[slot];
                        outer_acc(&mut s[0], a, a);
                        if t > 0 {
                            let l = &l_cur[c * m..(c + 1) * m];
                            let o: Vec<Complex<T>> =
                                a_prev[c * m..(c + 1) * m].iter().zip(l).map(|(x, y)| x - y).collect();
                            outer_acc(&mut s[1], a, &o);
                            outer_acc(&mut s[2], a, l);
                            outer_acc(&mut s[3], &o, &o);
                            outer_acc(&mut s[4], l, l);
                            outer_acc(&mut s[5], &o, l);
                        }
                    }
                    std::mem::swap(&mut a_prev, &mut a_cur);
                }
                acc
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold(empty(), |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    for (u, v) in x.iter_mut().zip(y) {
                        u.iter_mut().zip(v).for_each(|(p, q)| *p = *p + q);
                    }
                }
                a
            });
        Self {
            geometry: geom.clone(),
            n_real: d.n_real,
            n_time,
            n_contrasts: d.n_contrasts(),
            degenerate: d.is_degenerate(),
            stats,
        }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn n_contrasts(&self) -> usize {
        self.n_contrasts
    }

    /// `sum_{r,t} Re(X_c X_c^H)` of whitened contrasts at stored wavenumber slot `slot`.
    fn scatter(&self, slot: usize, ar: &ArCoefficients<T>) -> Vec<T> {
        let m = self.geometry.n_lat();
        let [aa, ao, al, oo, ll, ol] = &self.stats[slot];
        let (f0, f1) = (ar.phi_ocean, ar.phi_land);
        let mut s = vec![T::zero(); m * m];
        for i in 0..m {
            for j in 0..m {
                let k = i * m + j;
                let kt = j * m + i;
                s[k] = aa[k] - f0 * (ao[k] + ao[kt]) - f1 * (al[k] + al[kt])
                    + f0 * f0 * oo[k]
                    + f1 * f1 * ll[k]
                    + f0 * f1 * (ol[k] + ol[kt]);
            }
        }
        s
    }

    /// Whitened quadratic form `sum_{r,t} H' Sigma_s^{-1} H` for the given blocks.
    pub fn quadratic(&self, blocks: &SpectralBlocks<T>, ar: &ArCoefficients<T>) -> T {
        let n = self.geometry.n_lon();
        let total: CompensatedSum<T> = half_spectrum(n)
            .enumerate()
            .map(|(slot, (c, weight))| {
                let s = self.scatter(slot, ar);
                trace_inv_product(blocks.cholesky(c), &s) * T::of_usize(weight)
            })
            .collect();
        total.value() / T::of_usize(n)
    }

    /// Same value as [`reml_loglik_fft`] on the contrasts these statistics came from.
    pub fn loglik(&self, p: &CovarianceParams<T>) -> Result<Loglik<T>> {
        p.ar.validate()?;
        let blocks = SpectralBlocks::build(p, &self.geometry)?;
        Ok(self.loglik_with_blocks(&blocks, &p.ar))
    }

    pub fn loglik_with_blocks(&self, blocks: &SpectralBlocks<T>, ar: &ArCoefficients<T>) -> Loglik<T> {
        let quad = self.quadratic(blocks, ar);
        let logdet = T::of_usize(self.n_time) * blocks.total_logdet();
        let tnm = T::of_usize(self.n_time * self.geometry.n_pixels());
        let r = T::of_usize(self.n_real);
        let half = T::of(0.5);
        Loglik {
            constant: -tnm * (r - T::one()) * half * T::TAU().ln() - tnm * half * r.ln(),
            logdet_term: -(r - T::one()) * half * logdet,
            quad_term: -half * quad,
            n_contrasts: self.n_contrasts,
            degenerate: self.degenerate,
        }
    }
}

/// `acc += Re(x y^H)`.
#[inline]
fn outer_acc<T: Real>(acc: &mut [T], x: &[Complex<T>], y: &[Complex<T>]) {
    let m = x.len();
    for i in 0..m {
        let xi = x[i];
        let row = &mut acc[i * m..(i + 1) * m];
        for (a, yj) in row.iter_mut().zip(y) {
            *a = *a + xi.re * yj.re + xi.im * yj.im;
        }
    }
}
