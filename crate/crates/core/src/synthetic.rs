//! Built-in synthetic scenarios: smooth latitudinal parameter profiles,
//! stylized CO2 trajectories and complete train / control / held-out ensembles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{EnsembleTensor, GridGeometry, RegionMap};
use crate::mean::{ForcingSeries, MeanModelParams, Standardization};
use crate::params::{ArCoefficients, BandSpectrum, Coherence, CovarianceParams};
use crate::simulate::{sample_noise, SimulationSpec};
use crate::spectral::band_spectrum;

/// Pre-industrial concentration used for history and control runs.
pub const BASELINE_CO2: f64 = 280.0;
/// Years of constant forcing prepended to every scenario.
pub const HISTORY_YEARS: usize = 50;

/// Grid with `m` latitudes spanning 160 degrees and two idealized continents.
pub fn synthetic_grid(m: usize, n: usize) -> Result<GridGeometry> {
    let geom = GridGeometry::equispaced(m, n, 160.0)?;
    let lats = geom.latitudes().to_vec();
    let lons = geom.longitudes().to_vec();
    let mut mask = vec![0u8; m * n];
    for (j, lon) in lons.iter().enumerate() {
        for (i, lat) in lats.iter().enumerate() {
            let eurasia = (20.0..150.0).contains(lon) && *lat > 5.0;
            let americas = (250.0..300.0).contains(lon) && *lat > -50.0;
            mask[j * m + i] = (eurasia || americas) as u8;
        }
    }
    geom.with_mask(mask)
}

/// Band spectra varying smoothly with latitude.
pub fn smooth_bands(geom: &GridGeometry) -> Vec<BandSpectrum<f64>> {
    geom.latitudes()
        .iter()
        .map(|lat| {
            let s = lat.abs() / 90.0;
            BandSpectrum { phi: 0.05 + 0.15 * s * s, alpha: 0.3 + 0.4 * (1.0 - s), nu: 1.0 + 0.5 * (lat.to_radians()).cos() }
        })
        .collect()
}

/// Smooth bands with coherence and AR values of the magnitude reported for
/// annual temperature ensembles, scaled so that ocean pixels have unit
/// stationary variance. Data drawn from it are then already close to
/// standardized units.
pub fn reference_params(geom: &GridGeometry) -> CovarianceParams<f64> {
    let ar = ArCoefficients { phi_ocean: 0.11, phi_land: 0.10 };
    let n = geom.n_lon();
    let bands = smooth_bands(geom)
        .into_iter()
        .map(|b| {
            let k0 = (0..n).map(|c| band_spectrum(&b, c, n)).sum::<f64>() / n as f64;
            BandSpectrum { phi: b.phi * (1.0 - ar.phi_ocean * ar.phi_ocean) / k0, ..b }
        })
        .collect();
    CovarianceParams { bands, coherence: Coherence { xi: 0.97, tau: 0.21 }, ar }
}

/// Exponential rise at 1%/yr for the first 40% of the run, then decay back
/// toward 350 ppm with an e-folding time of a fifth of the run.
pub fn drop_forcing(n_years: usize) -> ForcingSeries {
    let peak_year = (0.4 * n_years as f64).round();
    let peak = BASELINE_CO2 * (0.01 * peak_year).exp();
    let tau = (n_years as f64 / 5.0).max(1.0);
    let co2 = (0..n_years)
        .map(|t| {
            let t = t as f64;
            if t <= peak_year {
                BASELINE_CO2 * (0.01 * t).exp()
            } else {
                350.0 + (peak - 350.0) * (-(t - peak_year) / tau).exp()
            }
        })
        .collect();
    with_history(co2)
}

/// Exponential rise at 0.5%/yr for half the run, then stabilization.
pub fn slow_forcing(n_years: usize) -> ForcingSeries {
    let half = n_years as f64 / 2.0;
    let co2 = (0..n_years).map(|t| BASELINE_CO2 * (0.005 * (t as f64).min(half)).exp()).collect();
    with_history(co2)
}

fn with_history(co2: Vec<f64>) -> ForcingSeries {
    let mut all = vec![BASELINE_CO2; HISTORY_YEARS];
    all.extend(co2);
    ForcingSeries { co2: all, history: HISTORY_YEARS }
}

/// Physical-unit climatology: warm equator, larger variability over land and
/// toward the poles.
pub fn reference_standardization(geom: &GridGeometry) -> Standardization {
    let m = geom.n_lat();
    let (mut mean, mut sd) = (Vec::new(), Vec::new());
    for (px, land) in geom.land_mask().iter().enumerate() {
        let s = geom.latitudes()[px % m].abs() / 90.0;
        mean.push(300.0 - 40.0 * s * s);
        sd.push(0.4 + 1.2 * s + 0.3 * *land as f64);
    }
    Standardization { mean, sd }
}

/// Mean model whose standardized value is zero at the baseline concentration.
pub fn reference_mean(geom: &GridGeometry, regions: &RegionMap, lambda: f64) -> MeanModelParams {
    let m = geom.n_lat();
    let beta1: Vec<f64> =
        (0..geom.n_pixels()).map(|px| 1.0 + 0.8 * geom.latitudes()[px % m].abs() / 90.0).collect();
    let beta2: Vec<f64> = (0..regions.n_regions()).map(|c| 2.0 + 0.25 * (c % 5) as f64).collect();
    let base = BASELINE_CO2.ln();
    let beta0 = (0..geom.n_pixels()).map(|px| -(beta1[px] + beta2[regions.region_of(px)]) * base).collect();
    MeanModelParams {
        geometry: geom.clone(),
        regions: regions.clone(),
        beta0,
        beta1,
        beta2,
        lambda,
        standardization: reference_standardization(geom),
        fit: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: &'static str,
    pub n_lat: usize,
    pub n_lon: usize,
    pub n_time: usize,
    pub n_real: usize,
    pub control_years: usize,
    pub heldout_years: usize,
    pub lat_regions: usize,
    pub lon_regions: usize,
    pub lambda: f64,
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "tiny",
        n_lat: 6,
        n_lon: 16,
        n_time: 150,
        n_real: 4,
        control_years: 200,
        heldout_years: 120,
        lat_regions: 2,
        lon_regions: 4,
        lambda: 0.9,
    },
    Preset {
        name: "small",
        n_lat: 12,
        n_lon: 32,
        n_time: 300,
        n_real: 5,
        control_years: 300,
        heldout_years: 200,
        lat_regions: 3,
        lon_regions: 4,
        lambda: 0.95,
    },
    Preset {
        name: "reference",
        n_lat: 20,
        n_lon: 96,
        n_time: 500,
        n_real: 5,
        control_years: 500,
        heldout_years: 300,
        lat_regions: 6,
        lon_regions: 8,
        lambda: 0.95,
    },
];

pub fn preset(name: &str) -> Result<Preset> {
    PRESETS.iter().copied().find(|p| p.name == name).ok_or_else(|| {
        let names: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
        Error::Domain(format!("unknown preset '{name}', expected one of {}", names.join(", ")))
    })
}

/// Everything a preset generates, with the truth used to produce it.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub train: EnsembleTensor<f64>,
    pub control: EnsembleTensor<f64>,
    pub heldout: EnsembleTensor<f64>,
    pub train_forcing: ForcingSeries,
    pub heldout_forcing: ForcingSeries,
    pub covariance: CovarianceParams<f64>,
    pub mean: MeanModelParams,
}

fn sub_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_add(k.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub fn generate(p: &Preset, seed: u64) -> Result<SyntheticDataset> {
    let geom = synthetic_grid(p.n_lat, p.n_lon)?;
    let regions = RegionMap::blocks(&geom, p.lat_regions, p.lon_regions);
    let covariance = reference_params(&geom);
    let mean = reference_mean(&geom, &regions, p.lambda);

    let noise = sample_noise(&geom, &covariance, p.control_years, 1, sub_seed(seed, 0))?.tensor;
    let st = &mean.standardization;
    let pn = geom.n_pixels();
    let values = noise.values().iter().enumerate().map(|(i, v)| st.mean[i % pn] + st.sd[i % pn] * v).collect();
    let control = EnsembleTensor::new(geom.clone(), 1, p.control_years, values)?
        .with_co2(vec![BASELINE_CO2; p.control_years])?
        .with_scenario("control");

    let run = |forcing: &ForcingSeries, years: usize, k: u64, id: &str| -> Result<EnsembleTensor<f64>> {
        let spec = SimulationSpec {
            geometry: geom.clone(),
            params: covariance.clone(),
            mean: Some(mean.clone()),
            forcing: Some(forcing.clone()),
            n_time: years,
            n_real: p.n_real,
            seed: sub_seed(seed, k),
            scenario_id: id.into(),
        };
        Ok(spec.run()?.tensor)
    };
    let train_forcing = drop_forcing(p.n_time);
    let heldout_forcing = slow_forcing(p.heldout_years);
    let train = run(&train_forcing, p.n_time, 1, "drop")?;
    let heldout = run(&heldout_forcing, p.heldout_years, 2, "slow")?;
    Ok(SyntheticDataset { train, control, heldout, train_forcing, heldout_forcing, covariance, mean })
}
