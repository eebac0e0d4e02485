//! Exact sampling from the fitted space-time model.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::Fourier;
use crate::grid::{EnsembleTensor, GridGeometry};
use crate::mean::{ForcingSeries, MeanModelParams};
use crate::params::CovarianceParams;
use crate::rng;
use crate::scalar::Real;
use crate::spectral::SpectralBlocks;
use crate::temporal::color_in_place;

/// Everything needed to draw an ensemble.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub geometry: GridGeometry,
    pub params: CovarianceParams<f64>,
    /// Optional mean model; requires `forcing`.
    #[serde(default)]
    pub mean: Option<MeanModelParams>,
    #[serde(default)]
    pub forcing: Option<ForcingSeries>,
    pub n_time: usize,
    pub n_real: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scenario_id: String,
}

/// A draw together with the largest imaginary residue left by the inverse
/// transforms (zero up to round-off for a correctly symmetrized spectrum).
#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub tensor: EnsembleTensor<T>,
    pub max_imag_residue: T,
}

/// Draws `R` realizations of `T` years of zero-mean noise.
///
/// Innovations are drawn per wavenumber with covariance `N B_c`: wavenumbers
/// `0` and `N/2` get real coefficients, the others independent real and
/// imaginary parts at half the variance with the conjugate filled in at
/// `N - c`. The AR(1) recursion then colors them in time.
pub fn sample_noise<T: Real>(
    geom: &GridGeometry,
    params: &CovarianceParams<T>,
    n_time: usize,
    n_real: usize,
    seed: u64,
) -> Result<Sample<T>> {
    if n_time == 0 || n_real == 0 {
        return Err(Error::Dimension("simulation needs T >= 1 and R >= 1".into()));
    }
    let blocks = SpectralBlocks::build(params, geom)?;
    let (m, n) = (geom.n_lat(), geom.n_lon());
    let p = m * n;
    let fourier = Fourier::<T>::new(n);
    let full = T::of_usize(n).sqrt();
    let half = T::of(n as f64 / 2.0).sqrt();
    let mut values = vec![T::zero(); n_real * n_time * p];
    let residue = values
        .par_chunks_mut(p)
        .enumerate()
        .map_init(
            || (vec![Complex::<T>::default(); p], Vec::new(), vec![0.0f64; m], vec![T::zero(); m]),
            |(spec, buf, z64, z), (id, field)| {
                let mut rng = rng::stream(seed, id as u64);
                for c in 0..=n / 2 {
                    let chol = blocks.cholesky(c);
                    if c == 0 || 2 * c == n {
                        rng::fill_normal(&mut rng, z64);
                        z.iter_mut().zip(z64.iter()).for_each(|(a, &b)| *a = T::of(b));
                        let x = chol.mul_lower(z);
                        for i in 0..m {
                            spec[c * m + i] = Complex::new(full * x[i], T::zero());
                        }
                    } else {
                        rng::fill_normal(&mut rng, z64);
                        z.iter_mut().zip(z64.iter()).for_each(|(a, &b)| *a = T::of(b));
                        let u = chol.mul_lower(z);
                        rng::fill_normal(&mut rng, z64);
                        z.iter_mut().zip(z64.iter()).for_each(|(a, &b)| *a = T::of(b));
                        let v = chol.mul_lower(z);
                        for i in 0..m {
                            let x = Complex::new(half * u[i], half * v[i]);
                            spec[c * m + i] = x;
                            spec[(n - c) * m + i] = x.conj();
                        }
                    }
                }
                fourier.inverse_field(spec, m, field, buf)
            },
        )
        .reduce(T::zero, T::max);
    let phi = params.ar.expand(geom);
    values.par_chunks_mut(n_time * p).for_each(|series| color_in_place(series, n_time, &phi));
    let tensor = EnsembleTensor::new(geom.clone(), n_real, n_time, values)?;
    Ok(Sample { tensor, max_imag_residue: residue })
}

impl SimulationSpec {
    /// Draws the ensemble described by the spec; the emulated mean, when
    /// present, is added in standardized units and the result destandardized.
    pub fn run(&self) -> Result<Sample<f64>> {
        let mut sample = sample_noise(&self.geometry, &self.params, self.n_time, self.n_real, self.seed)?;
        if let Some(mean) = &self.mean {
            let forcing = self
                .forcing
                .as_ref()
                .ok_or_else(|| Error::Dimension("a mean model needs a forcing series".into()))?;
            if mean.geometry != self.geometry {
                return Err(Error::Dimension("mean model grid differs from the simulation grid".into()));
            }
            if forcing.n_years() != self.n_time {
                return Err(Error::Dimension(format!(
                    "forcing covers {} modeled years, simulation asks for {}",
                    forcing.n_years(),
                    self.n_time
                )));
            }
            let traj = mean.standardized_trajectory(forcing)?;
            let p = self.geometry.n_pixels();
            for series in sample.tensor.values_mut().chunks_mut(self.n_time * p) {
                for (i, v) in series.iter_mut().enumerate() {
                    let px = i % p;
                    *v = mean.destandardize_at(px, traj[i] + *v);
                }
            }
            sample.tensor.co2 = forcing.co2.clone();
        }
        sample.tensor.scenario_id = self.scenario_id.clone();
        sample.tensor.validate()?;
        Ok(sample)
    }
}
