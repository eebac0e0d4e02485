//! Space-time statistical emulation of climate-model ensembles on a regular
//! latitude-longitude grid.
//!
//! The covariance model is axially symmetric: each latitude band has a
//! circular Matern spectrum, bands are linked through a coherence that decays
//! with latitude separation and wavenumber, and every pixel follows an AR(1)
//! process in time with separate land and ocean coefficients. Because the
//! spatial covariance is block circulant in longitude, the restricted
//! likelihood of replicated runs costs `O(M^3 N + M^2 N log N)` per year
//! instead of `O((MN)^3)`.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); fitting of
//! the mean model and the two-stage covariance fit work in `f64`.

pub mod bench;
pub mod diagnostics;
pub mod error;
pub mod estimation;
pub mod fourier;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod mean;
pub mod optim;
pub mod params;
pub mod reml;
pub mod rng;
pub mod scalar;
pub mod simulate;
pub mod spectral;
pub mod synthetic;
pub mod temporal;

pub use error::{Error, ErrorClass, Result};
pub use grid::{GridGeometry, RegionMap};
pub use scalar::Real;

pub type Tensor = grid::EnsembleTensor<f64>;
pub type Tensor32 = grid::EnsembleTensor<f32>;
pub type Params = params::CovarianceParams<f64>;
pub type Params32 = params::CovarianceParams<f32>;
pub type Blocks = spectral::SpectralBlocks<f64>;
pub type Blocks32 = spectral::SpectralBlocks<f32>;
pub type Contrasts = reml::ContrastSet<f64>;
pub type Contrasts32 = reml::ContrastSet<f32>;
