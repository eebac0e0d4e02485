//! Contrast-variance diagnostics and band periodograms.

use std::path::Path;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{half_spectrum, Fourier};
use crate::grid::{EnsembleTensor, GridGeometry};
use crate::params::{ArCoefficients, CovarianceParams};
use crate::reml::ContrastSet;
use crate::spectral::{band_spectrum, SpectralBlocks};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastKind {
    EastWest,
    NorthSouth,
    BandVariance,
    Laplacian,
}

impl ContrastKind {
    pub const ALL: [ContrastKind; 4] =
        [ContrastKind::EastWest, ContrastKind::NorthSouth, ContrastKind::BandVariance, ContrastKind::Laplacian];

    pub fn name(self) -> &'static str {
        match self {
            ContrastKind::EastWest => "east_west",
            ContrastKind::NorthSouth => "north_south",
            ContrastKind::BandVariance => "band_variance",
            ContrastKind::Laplacian => "laplacian",
        }
    }

    /// Stencil as `(latitude offset, longitude offset, weight)`.
    fn stencil(self) -> &'static [(isize, isize, f64)] {
        match self {
            ContrastKind::EastWest => &[(0, 0, 1.0), (0, -1, -1.0)],
            ContrastKind::NorthSouth => &[(0, 0, 1.0), (-1, 0, -1.0)],
            ContrastKind::BandVariance => &[(0, 0, 1.0)],
            ContrastKind::Laplacian => &[(0, 0, 4.0), (0, -1, -1.0), (0, 1, -1.0), (-1, 0, -1.0), (1, 0, -1.0)],
        }
    }

    fn applies_at(self, m: usize, n_lat: usize) -> bool {
        self.stencil().iter().all(|&(dm, _, _)| {
            let mm = m as isize + dm;
            mm >= 0 && mm < n_lat as isize
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastRow {
    pub latitude: f64,
    pub contrast: ContrastKind,
    pub empirical: f64,
    pub model: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastReport {
    pub rows: Vec<ContrastRow>,
}

impl ContrastReport {
    pub fn get(&self, kind: ContrastKind) -> impl Iterator<Item = &ContrastRow> {
        self.rows.iter().filter(move |r| r.contrast == kind)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["latitude", "contrast_name", "empirical", "model"]).map_err(|e| csv_err(path, e))?;
        for r in &self.rows {
            w.write_record([
                r.latitude.to_string(),
                r.contrast.name().to_string(),
                format!("{:e}", r.empirical),
                format!("{:e}", r.model),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Wraps a CSV error with the offending path.
pub fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Parse { path: path.to_path_buf(), message: e.to_string() }
}

/// Model variance of a contrast at band `m` from the lag covariance
/// (layout of [`SpectralBlocks::lag_covariance`]).
pub fn model_contrast_variance(lag: &[f64], geom: &GridGeometry, kind: ContrastKind, m: usize) -> f64 {
    let (nm, nn) = (geom.n_lat(), geom.n_lon());
    let pts: Vec<(usize, isize, f64)> =
        kind.stencil().iter().map(|&(dm, dn, w)| ((m as isize + dm) as usize, dn, w)).collect();
    let mut v = 0.0;
    for &(m1, n1, w1) in &pts {
        for &(m2, n2, w2) in &pts {
            let k = (n2 - n1).rem_euclid(nn as isize) as usize;
            v += w1 * w2 * lag[(k * nm + m1) * nm + m2];
        }
    }
    v
}

/// Whitened contrasts rescaled so each field has covariance `Sigma_s`.
fn normalized_whitened(d: &ContrastSet<f64>, ar: &ArCoefficients<f64>) -> Result<Vec<f64>> {
    let r = d.n_real() as f64;
    let s = (r / (r - 1.0)).sqrt();
    Ok(d.whitened(ar)?.into_iter().map(|v| v * s).collect())
}

/// Empirical and model variances of the east-west, north-south, band-variance
/// and Laplacian contrasts at every latitude where the stencil fits.
pub fn contrast_variances(e: &EnsembleTensor<f64>, params: &CovarianceParams<f64>) -> Result<ContrastReport> {
    let geom = e.geometry();
    params.validate_for(geom)?;
    let (nm, nn) = (geom.n_lat(), geom.n_lon());
    if nm < 3 {
        return Err(Error::Dimension(format!("contrast diagnostics need at least 3 latitudes, got {nm}")));
    }
    let d = ContrastSet::from_ensemble(e)?;
    let h = normalized_whitened(&d, &params.ar)?;
    let lag = SpectralBlocks::build(params, geom)?.lag_covariance();
    let p = nm * nn;
    let n_fields = h.len() / p;
    let rows: Vec<Vec<ContrastRow>> = (0..nm)
        .into_par_iter()
        .map(|m| {
            ContrastKind::ALL
                .iter()
                .filter(|k| k.applies_at(m, nm))
                .map(|&kind| {
                    let mut acc = 0.0;
                    for field in h.chunks(p) {
                        for n in 0..nn {
                            let c: f64 = kind
                                .stencil()
                                .iter()
                                .map(|&(dm, dn, w)| {
                                    let mm = (m as isize + dm) as usize;
                                    let nn2 = (n as isize + dn).rem_euclid(nn as isize) as usize;
                                    w * field[nn2 * nm + mm]
                                })
                                .sum();
                            acc += c * c;
                        }
                    }
                    ContrastRow {
                        latitude: geom.latitudes()[m],
                        contrast: kind,
                        empirical: acc / (n_fields * nn) as f64,
                        model: model_contrast_variance(&lag, geom, kind, m),
                    }
                })
                .collect()
        })
        .collect();
    Ok(ContrastReport { rows: rows.concat() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeriodogramKind {
    /// Average of `|F H_t|^2 / N` over years and realizations; expectation `f(c)`.
    PerTime,
    /// `|F mean_t H_t|^2 / N` averaged over realizations; expectation `f(c) / T`.
    TimeAveraged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Periodogram {
    pub band: usize,
    pub latitude: f64,
    pub kind: PeriodogramKind,
    /// Wavenumbers `0..=N/2`.
    pub empirical: Vec<f64>,
    pub model: Option<Vec<f64>>,
}

/// Periodogram of band `m` over the full range `0..N` of wavenumbers.
pub fn band_periodogram(
    d: &ContrastSet<f64>,
    m: usize,
    ar: &ArCoefficients<f64>,
    kind: PeriodogramKind,
) -> Result<Vec<f64>> {
    let geom = d.geometry();
    if m >= geom.n_lat() {
        return Err(Error::Dimension(format!("band {m} out of range for {} latitudes", geom.n_lat())));
    }
    let band = d.band(m);
    let h = normalized_whitened(&band, ar)?;
    let n = geom.n_lon();
    let fourier = Fourier::<f64>::new(n);
    let t = band.n_time();
    let fields: Vec<Vec<f64>> = match kind {
        PeriodogramKind::PerTime => h.chunks(n).map(<[f64]>::to_vec).collect(),
        PeriodogramKind::TimeAveraged => h
            .chunks(n * t)
            .map(|series| {
                let mut mean = vec![0.0; n];
                for field in series.chunks(n) {
                    mean.iter_mut().zip(field).for_each(|(a, v)| *a += v / t as f64);
                }
                mean
            })
            .collect(),
    };
    let mut out = vec![0.0; n];
    let mut buf = vec![Complex::default(); n];
    for f in &fields {
        buf.iter_mut().zip(f).for_each(|(b, v)| *b = Complex::new(*v, 0.0));
        fourier.forward(&mut buf);
        out.iter_mut().zip(&buf).for_each(|(o, z)| *o += z.norm_sqr() / n as f64);
    }
    out.iter_mut().for_each(|o| *o /= fields.len() as f64);
    Ok(out)
}

/// Half-spectrum periodogram with the fitted spectrum alongside, scaled to the
/// same expectation.
pub fn band_periodogram_report(
    d: &ContrastSet<f64>,
    m: usize,
    params: &CovarianceParams<f64>,
    kind: PeriodogramKind,
) -> Result<Periodogram> {
    let full = band_periodogram(d, m, &params.ar, kind)?;
    let n = d.geometry().n_lon();
    let scale = match kind {
        PeriodogramKind::PerTime => 1.0,
        PeriodogramKind::TimeAveraged => 1.0 / d.n_time() as f64,
    };
    let model = params.bands.get(m).map(|b| half_spectrum(n).map(|(c, _)| scale * band_spectrum(b, c, n)).collect());
    Ok(Periodogram {
        band: m,
        latitude: d.geometry().latitudes()[m],
        kind,
        empirical: half_spectrum(n).map(|(c, _)| full[c]).collect(),
        model,
    })
}

/// Pooled autocorrelation of the whitened contrasts at lags `1..=max_lag`.
///
/// The first year is skipped because it carries the stationary variance
/// rather than the innovation variance. Values near zero support the AR(1)
/// layer.
pub fn residual_autocorrelation(d: &ContrastSet<f64>, ar: &ArCoefficients<f64>, max_lag: usize) -> Result<Vec<f64>> {
    let t = d.n_time();
    if max_lag == 0 || t < max_lag + 2 {
        return Err(Error::Dimension(format!("autocorrelation to lag {max_lag} needs T >= {}", max_lag + 2)));
    }
    let h = d.whitened(ar)?;
    let p = d.geometry().n_pixels();
    let per_real: Vec<(f64, Vec<f64>)> = h
        .par_chunks(t * p)
        .map(|series| {
            let at = |year: usize, px: usize| series[year * p + px];
            let mut lags = vec![0.0; max_lag];
            let mut var = 0.0;
            for px in 0..p {
                for year in 1..t {
                    var += at(year, px) * at(year, px);
                    for (k, acc) in lags.iter_mut().enumerate() {
                        if year + k + 1 < t {
                            *acc += at(year, px) * at(year + k + 1, px);
                        }
                    }
                }
            }
            (var, lags)
        })
        .collect();
    let var: f64 = per_real.iter().map(|(v, _)| v).sum();
    if var <= 0.0 {
        return Err(Error::Degenerate("whitened contrasts are identically zero".into()));
    }
    Ok((0..max_lag).map(|k| per_real.iter().map(|(_, l)| l[k]).sum::<f64>() / var).collect())
}
