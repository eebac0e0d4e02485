//! Wall-clock comparison of the likelihood routes and empirical scaling exponents.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::diagnostics::csv_err;
use crate::error::{Error, Result};
use crate::grid::GridGeometry;
use crate::params::CovarianceParams;
use crate::reml::{
    reml_loglik_dense, reml_loglik_dense_spatial, reml_loglik_fft, ContrastSet, DENSE_LIMIT, DENSE_SPATIAL_LIMIT,
};
use crate::simulate::sample_noise;
use crate::synthetic::{reference_params, synthetic_grid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchSize {
    pub m: usize,
    pub n: usize,
    pub t: usize,
    pub r: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub size: BenchSize,
    /// Median seconds per evaluation; `None` where the size guard forbids the route.
    pub fft_secs: f64,
    pub dense_spatial_secs: Option<f64>,
    pub dense_secs: Option<f64>,
}

/// Median wall time of `reps` calls after one warm-up call.
pub fn time_median<F: FnMut() -> Result<()>>(reps: usize, mut f: F) -> Result<f64> {
    f()?;
    let mut times = Vec::with_capacity(reps.max(1));
    for _ in 0..reps.max(1) {
        let start = Instant::now();
        f()?;
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    Ok(times[times.len() / 2])
}

fn setup(size: BenchSize, seed: u64) -> Result<(GridGeometry, CovarianceParams<f64>, ContrastSet<f64>)> {
    let geom = synthetic_grid(size.m, size.n)?;
    let params = reference_params(&geom);
    let e = sample_noise(&geom, &params, size.t, size.r, seed)?.tensor;
    let d = ContrastSet::from_ensemble(&e)?;
    Ok((geom, params, d))
}

/// Times every route at each size, one size at a time.
pub fn benchmark(sizes: &[BenchSize], reps: usize, seed: u64) -> Result<Vec<BenchRow>> {
    sizes
        .iter()
        .map(|&size| {
            let (geom, params, d) = setup(size, seed)?;
            let fft_secs = time_median(reps, || reml_loglik_fft(&d, &params, &geom).map(drop))?;
            let dense_spatial_secs = if geom.n_pixels() <= DENSE_SPATIAL_LIMIT {
                Some(time_median(reps, || reml_loglik_dense_spatial(&d, &params, &geom).map(drop))?)
            } else {
                None
            };
            let dense_secs = if geom.n_pixels() * size.t <= DENSE_LIMIT {
                Some(time_median(reps, || reml_loglik_dense(&d, &params, &geom).map(drop))?)
            } else {
                None
            };
            log::info!(
                "event=bench m={} n={} t={} r={} fft_secs={fft_secs:.3e} dense_spatial_secs={dense_spatial_secs:?}",
                size.m,
                size.n,
                size.t,
                size.r
            );
            Ok(BenchRow { size, fft_secs, dense_spatial_secs, dense_secs })
        })
        .collect()
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn scaling_exponent(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Dimension("scaling fit needs at least two matching points".into()));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("scaling fit needs positive values".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / k, ly.iter().sum::<f64>() / k);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("scaling fit needs distinct sizes".into()));
    }
    Ok(sxy / sxx)
}

pub fn write_bench_csv(rows: &[BenchRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["m", "n", "t", "r", "fft_secs", "dense_spatial_secs", "dense_secs"]).map_err(|e| csv_err(path, e))?;
    let opt = |v: Option<f64>| v.map(|s| format!("{s:e}")).unwrap_or_default();
    for row in rows {
        let s = row.size;
        w.write_record([
            s.m.to_string(),
            s.n.to_string(),
            s.t.to_string(),
            s.r.to_string(),
            format!("{:e}", row.fft_secs),
            opt(row.dense_spatial_secs),
            opt(row.dense_secs),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
