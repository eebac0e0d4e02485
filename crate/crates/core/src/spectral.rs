//! Axially symmetric spatial covariance in the longitudinal spectral domain.
//!
//! Each latitude band has a circular Matérn spectrum, bands are linked by a
//! real coherence (zero phase), and the resulting per-wavenumber `M x M`
//! cross-spectral blocks diagonalize the spatial covariance.

use rayon::prelude::*;
use rustfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::fourier::Fourier;
use crate::grid::GridGeometry;
use crate::linalg::Cholesky;
use crate::params::{BandSpectrum, Coherence, CovarianceParams};
use crate::scalar::Real;

/// `4 sin^2(pi c / N)`, the circular analogue of `omega^2`.
#[inline]
pub fn circular_frequency_sq<T: Real>(c: usize, n: usize) -> T {
    let s = (T::PI() * T::of_usize(c) / T::of_usize(n)).sin();
    T::of(4.0) * s * s
}

/// Circular Matérn spectral density `phi / (alpha^2 + 4 sin^2(pi c/N))^(nu + 1/2)`.
pub fn band_spectrum<T: Real>(p: &BandSpectrum<T>, c: usize, n: usize) -> T {
    let w2 = circular_frequency_sq::<T>(c, n);
    let base = p.alpha * p.alpha + w2;
    p.phi * (-(p.nu + T::of(0.5)) * base.ln()).exp()
}

/// Coherence between two bands `dlat` degrees apart at wavenumber `c`.
pub fn coherence<T: Real>(coh: &Coherence<T>, dlat: T, c: usize, n: usize) -> T {
    if dlat == T::zero() {
        return T::one();
    }
    let w2 = circular_frequency_sq::<T>(c, n);
    let log_rate = coh.xi.ln() - coh.tau * (T::one() + w2).ln();
    (dlat * log_rate).exp()
}

/// Per-wavenumber cross-spectral matrices with cached Cholesky factors.
///
/// Blocks depend on `c` only through `sin^2(pi c / N)`, so only wavenumbers
/// `0..=N/2` are stored; `c` and `N - c` share a block.
#[derive(Debug, Clone)]
pub struct SpectralBlocks<T> {
    n_lat: usize,
    n_lon: usize,
    blocks: Vec<Vec<T>>,
    chol: Vec<Cholesky<T>>,
    logdet: Vec<T>,
}

impl<T: Real> SpectralBlocks<T> {
    /// Builds blocks `B_c[m, m'] = rho(c) sqrt(f_m(c) f_m'(c))`.
    pub fn build(params: &CovarianceParams<T>, geom: &GridGeometry) -> Result<Self> {
        params.validate_for(geom)?;
        let (m, n) = (geom.n_lat(), geom.n_lon());
        let lats: Vec<T> = geom.latitudes().iter().map(|&l| T::of(l)).collect();
        let blocks: Vec<Vec<T>> = (0..=n / 2)
            .into_par_iter()
            .map(|c| {
                let spec: Vec<T> = params.bands.iter().map(|b| band_spectrum(b, c, n)).collect();
                let sd: Vec<T> = spec.iter().map(|f| f.sqrt()).collect();
                let mut b = vec![T::zero(); m * m];
                for i in 0..m {
                    b[i * m + i] = spec[i];
                    for j in 0..i {
                        let rho = coherence(&params.coherence, (lats[i] - lats[j]).abs(), c, n);
                        let v = rho * sd[i] * sd[j];
                        b[i * m + j] = v;
                        b[j * m + i] = v;
                    }
                }
                b
            })
            .collect();
        Self::from_blocks(m, n, blocks)
    }

    /// Wraps precomputed blocks for wavenumbers `0..=N/2`, factoring each.
    pub fn from_blocks(n_lat: usize, n_lon: usize, blocks: Vec<Vec<T>>) -> Result<Self> {
        if blocks.len() != n_lon / 2 + 1 || blocks.iter().any(|b| b.len() != n_lat * n_lat) {
            return Err(Error::Dimension("spectral blocks do not match the grid".into()));
        }
        let chol: Vec<Cholesky<T>> = blocks
            .par_iter()
            .enumerate()
            .map(|(c, b)| {
                Cholesky::factor(b, n_lat)
                    .ok_or_else(|| Error::NotPositiveDefinite { context: format!("spectral block at wavenumber {c}") })
            })
            .collect::<Result<_>>()?;
        let logdet = chol.iter().map(|c| c.logdet()).collect();
        Ok(Self { n_lat, n_lon, blocks, chol, logdet })
    }

    pub fn n_lat(&self) -> usize {
        self.n_lat
    }

    pub fn n_lon(&self) -> usize {
        self.n_lon
    }

    #[inline]
    fn slot(&self, c: usize) -> usize {
        let c = c % self.n_lon;
        c.min(self.n_lon - c)
    }

    /// Block at wavenumber `c` (any `c` in `0..N`), row-major `M x M`.
    pub fn block(&self, c: usize) -> &[T] {
        &self.blocks[self.slot(c)]
    }

    pub fn cholesky(&self, c: usize) -> &Cholesky<T> {
        &self.chol[self.slot(c)]
    }

    pub fn logdet(&self, c: usize) -> T {
        self.logdet[self.slot(c)]
    }

    /// `sum_c log det B_c` over all `N` wavenumbers, which equals the log
    /// determinant of the spatial covariance.
    pub fn total_logdet(&self) -> T {
        (0..self.n_lon).map(|c| self.logdet(c)).sum()
    }

    /// Spatial covariance by lag: entry `(k * M + m) * M + m'` is
    /// `K(L_m, L_m', 2 pi k / N)`.
    pub fn lag_covariance(&self) -> Vec<T> {
        let (m, n) = (self.n_lat, self.n_lon);
        let fourier = Fourier::<T>::new(n);
        let mut out = vec![T::zero(); n * m * m];
        let mut buf = vec![Complex::default(); n];
        for i in 0..m {
            for j in 0..m {
                for c in 0..n {
                    buf[c] = Complex::new(self.block(c)[i * m + j], T::zero());
                }
                fourier.inverse(&mut buf);
                for k in 0..n {
                    out[(k * m + i) * m + j] = buf[k].re;
                }
            }
        }
        out
    }

    /// Dense spatial covariance, `(N M) x (N M)` row-major with pixel index `n * M + m`.
    pub fn synthesize_covariance(&self) -> Vec<T> {
        let (m, n) = (self.n_lat, self.n_lon);
        let lags = self.lag_covariance();
        let p = m * n;
        let mut sigma = vec![T::zero(); p * p];
        for a in 0..n {
            for b in 0..n {
                let k = (a + n - b) % n;
                for i in 0..m {
                    let row = (a * m + i) * p + b * m;
                    sigma[row..row + m].copy_from_slice(&lags[(k * m + i) * m..(k * m + i + 1) * m]);
                }
            }
        }
        sigma
    }

    /// `Sigma_s x` for an `N x M` field (latitude fastest).
    pub fn mul_field(&self, fourier: &Fourier<T>, x: &[T]) -> Vec<T> {
        self.apply_field(fourier, x, false)
    }

    /// `Sigma_s^{-1} x` for an `N x M` field (latitude fastest).
    pub fn solve_field(&self, fourier: &Fourier<T>, x: &[T]) -> Vec<T> {
        self.apply_field(fourier, x, true)
    }

    fn apply_field(&self, fourier: &Fourier<T>, x: &[T], inverse: bool) -> Vec<T> {
        let (m, n) = (self.n_lat, self.n_lon);
        let mut spec = vec![Complex::default(); m * n];
        let mut buf = Vec::new();
        fourier.forward_field(x, m, &mut spec, &mut buf);
        let mut re = vec![T::zero(); m];
        let mut im = vec![T::zero(); m];
        for c in 0..n {
            let z = &mut spec[c * m..(c + 1) * m];
            for i in 0..m {
                re[i] = z[i].re;
                im[i] = z[i].im;
            }
            if inverse {
                let chol = self.cholesky(c);
                chol.solve_in_place(&mut re);
                chol.solve_in_place(&mut im);
            } else {
                let b = self.block(c);
                let mul = |v: &[T]| -> Vec<T> {
                    (0..m).map(|i| (0..m).map(|j| b[i * m + j] * v[j]).sum()).collect()
                };
                re = mul(&re);
                im = mul(&im);
            }
            for i in 0..m {
                z[i] = Complex::new(re[i], im[i]);
            }
        }
        let mut out = vec![T::zero(); m * n];
        fourier.inverse_field(&spec, m, &mut out, &mut buf);
        out
    }

    /// Pointwise variance of each band, `K_m(0) = (1/N) sum_c f_m(c)`.
    pub fn band_variances(&self) -> Vec<T> {
        let n = T::of_usize(self.n_lon);
        (0..self.n_lat)
            .map(|i| (0..self.n_lon).map(|c| self.block(c)[i * self.n_lat + i]).sum::<T>() / n)
            .collect()
    }
}
