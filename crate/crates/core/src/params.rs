//! Covariance parameter sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridGeometry;
use crate::scalar::Real;

/// Floor on the inverse range; keeps the zero wavenumber finite.
pub const ALPHA_MIN: f64 = 1e-6;
/// Cap on the smoothness; larger values underflow at high wavenumbers.
pub const NU_MAX: f64 = 20.0;

/// Circular Matérn spectrum parameters of one latitude band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandSpectrum<T> {
    pub phi: T,
    pub alpha: T,
    pub nu: T,
}

impl<T: Real> BandSpectrum<T> {
    pub fn new(phi: T, alpha: T, nu: T) -> Result<Self> {
        let b = Self { phi, alpha, nu };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.phi.is_finite()
            && self.phi > T::zero()
            && self.alpha.is_finite()
            && self.alpha >= T::of(ALPHA_MIN)
            && self.nu.is_finite()
            && self.nu > T::zero()
            && self.nu <= T::of(NU_MAX);
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "band spectrum needs phi > 0, alpha >= {ALPHA_MIN}, 0 < nu <= {NU_MAX}; got ({}, {}, {})",
                self.phi, self.alpha, self.nu
            )))
        }
    }
}

/// Cross-band coherence `(xi / (1 + 4 sin^2(pi c / N))^tau)^|dL|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coherence<T> {
    pub xi: T,
    pub tau: T,
}

impl<T: Real> Coherence<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.xi > T::zero() && self.xi < T::one()) {
            return Err(Error::Domain(format!("xi must lie in (0, 1), got {}", self.xi)));
        }
        if !(self.tau > T::zero() && self.tau.is_finite()) {
            return Err(Error::Domain(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Land/ocean AR(1) coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArCoefficients<T> {
    pub phi_ocean: T,
    pub phi_land: T,
}

impl<T: Real> ArCoefficients<T> {
    pub fn new(phi_ocean: T, phi_land: T) -> Result<Self> {
        let ar = Self { phi_ocean, phi_land };
        ar.validate()?;
        Ok(ar)
    }

    pub fn uniform(phi: T) -> Self {
        Self { phi_ocean: phi, phi_land: phi }
    }

    pub fn zero() -> Self {
        Self::uniform(T::zero())
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("phi_ocean", self.phi_ocean), ("phi_land", self.phi_land)] {
            if !(v.abs() < T::one()) {
                return Err(Error::Domain(format!("{name} must lie in (-1, 1), got {v}")));
            }
        }
        Ok(())
    }

    /// Per-pixel coefficient vector (latitude fastest) from the land mask.
    pub fn expand(&self, geom: &GridGeometry) -> Vec<T> {
        geom.land_mask()
            .iter()
            .map(|&q| if q == 1 { self.phi_land } else { self.phi_ocean })
            .collect()
    }
}

/// Full spatial-temporal covariance specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceParams<T> {
    pub bands: Vec<BandSpectrum<T>>,
    pub coherence: Coherence<T>,
    pub ar: ArCoefficients<T>,
}

impl<T: Real> CovarianceParams<T> {
    pub fn validate(&self) -> Result<()> {
        for (m, b) in self.bands.iter().enumerate() {
            b.validate().map_err(|e| Error::Domain(format!("band {m}: {e}")))?;
        }
        self.coherence.validate()?;
        self.ar.validate()
    }

    pub fn validate_for(&self, geom: &GridGeometry) -> Result<()> {
        if self.bands.len() != geom.n_lat() {
            return Err(Error::Dimension(format!(
                "{} band triples for a grid with {} latitudes",
                self.bands.len(),
                geom.n_lat()
            )));
        }
        self.validate()
    }

    pub fn cast<U: Real>(&self) -> CovarianceParams<U> {
        let c = |x: T| U::of(x.as_f64());
        CovarianceParams {
            bands: self.bands.iter().map(|b| BandSpectrum { phi: c(b.phi), alpha: c(b.alpha), nu: c(b.nu) }).collect(),
            coherence: Coherence { xi: c(self.coherence.xi), tau: c(self.coherence.tau) },
            ar: ArCoefficients { phi_ocean: c(self.ar.phi_ocean), phi_land: c(self.ar.phi_land) },
        }
    }
}
