use std::path::{Path, PathBuf};

use axsym::bench::{benchmark, scaling_exponent, write_bench_csv, BenchSize};
use axsym::diagnostics::{band_periodogram_report, contrast_variances, csv_err, residual_autocorrelation, PeriodogramKind};
use axsym::estimation::{fit_all_bands, fit_global, fit_ind, BandFits, FitOptions};
use axsym::grid::EnsembleTensor;
use axsym::io::{read_json, read_params, read_regions, read_tensor, write_json, write_params, write_regions, write_tensor};
use axsym::mean::{emulate_mean, fit_mean, lack_of_fit_index, standardize, ForcingSeries, MeanFitOptions, MeanModelParams};
use axsym::optim::SimplexOptions;
use axsym::params::CovarianceParams;
use axsym::reml::{reml_loglik_dense, reml_loglik_dense_spatial, reml_loglik_fft, ContrastSet, DENSE_LIMIT, DENSE_SPATIAL_LIMIT};
use axsym::simulate::SimulationSpec;
use axsym::synthetic::{generate, preset};
use axsym::{Error, RegionMap, Result};
use serde::{Deserialize, Serialize};

use crate::{Command, OptimizerArgs};

const DENSE_CHECK_TOL: f64 = 1e-6;

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::FitBands { data, control, out, optimizer, dense_check } => {
            check_inputs(&[Some(&data), control.as_ref()])?;
            check_output(&out)?;
            let e = load(&data, control.as_deref())?;
            let opts = fit_options(&optimizer);
            let fits = fit_all_bands(&e, &opts)?;
            if dense_check {
                let d = ContrastSet::from_ensemble(&e)?;
                for b in &fits.bands {
                    let band = d.band(b.band);
                    let params = CovarianceParams {
                        bands: vec![b.spectrum],
                        coherence: axsym::params::Coherence { xi: 0.5, tau: 1.0 },
                        ar: axsym::params::ArCoefficients::uniform(b.phi_band),
                    };
                    compare_dense(&band, &params)?;
                }
            }
            for f in &fits.failures {
                log::warn!("event=band_failed band={} message=\"{}\"", f.band, f.message);
            }
            log::info!("event=fit_bands bands={} failures={} secs={:.3}", fits.bands.len(), fits.failures.len(), fits.elapsed_secs);
            write_json(&fits, &out)?;
            println!("bands_fitted={} failures={} out={}", fits.bands.len(), fits.failures.len(), out.display());
            Ok(())
        }
        Command::FitGlobal { data, control, bands, out, optimizer, dense_check } => {
            check_inputs(&[Some(&data), control.as_ref(), Some(&bands)])?;
            check_output(&out)?;
            let e = load(&data, control.as_deref())?;
            let band_fits: BandFits = read_json(&bands)?;
            let report = fit_global(&e, &band_fits, &fit_options(&optimizer))?;
            if dense_check {
                compare_dense(&ContrastSet::from_ensemble(&e)?, &report.params)?;
            }
            write_json(&report, &out)?;
            for row in report.estimates.iter().take(4) {
                println!(
                    "{} estimate={:.6} sd={:.6} ci=[{:.6}, {:.6}]",
                    row.name, row.estimate, row.sd, row.ci_lower, row.ci_upper
                );
            }
            println!("loglik={:.6} normalized={:.8} evaluations={}", report.loglik, report.normalized_loglik, report.trace.evaluations);
            Ok(())
        }
        Command::FitMean { data, control, params, regions, forcing, out, pixel_sds } => {
            check_inputs(&[Some(&data), Some(&control), Some(&params), regions.as_ref(), forcing.as_ref()])?;
            check_output(&out)?;
            let e = read_tensor(&data)?;
            let ctrl = read_tensor(&control)?;
            let cov = read_params(&params)?;
            let region_map = match &regions {
                Some(p) => read_regions(p, e.geometry())?,
                None => RegionMap::default_for(e.geometry()),
            };
            let f = match &forcing {
                Some(p) => read_forcing(p, Some(e.n_time()))?,
                None => {
                    if e.co2.is_empty() {
                        return Err(Error::Dimension(format!("{} carries no CO2 series; pass --forcing", data.display())));
                    }
                    ForcingSeries::aligned(e.co2.clone(), e.n_time())?
                }
            };
            let (z, st) = standardize(&e, &ctrl)?;
            let opts = MeanFitOptions { pixel_sds, ..Default::default() };
            let fitted = fit_mean(&z, st, &f, &region_map, &cov, &opts)?;
            write_json(&fitted, &out)?;
            let summary = fitted.fit.as_ref();
            println!(
                "lambda={:.5} lambda_sd={:.5} loglik={:.6}",
                fitted.lambda,
                summary.map_or(f64::NAN, |s| s.lambda_sd),
                summary.map_or(f64::NAN, |s| s.loglik)
            );
            Ok(())
        }
        Command::Emulate { mean, forcing, out } => {
            check_inputs(&[Some(&mean), Some(&forcing)])?;
            check_output(&out)?;
            let params: MeanModelParams = read_json(&mean)?;
            let f = read_forcing(&forcing, None)?;
            let t = emulate_mean(&params, &f)?;
            write_tensor(&t, &out)?;
            println!("years={} out={}", t.n_time(), out.display());
            Ok(())
        }
        Command::Simulate { spec, seed, out } => {
            check_inputs(&[Some(&spec)])?;
            check_output(&out)?;
            let mut s: SimulationSpec = read_json(&spec)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let sample = s.run()?;
            log::info!("event=simulate max_imag_residue={:e}", sample.max_imag_residue);
            write_tensor(&sample.tensor, &out)?;
            let (r, t, n, m) = sample.tensor.dims();
            println!("realizations={r} years={t} n_lon={n} n_lat={m} out={}", out.display());
            Ok(())
        }
        Command::GenSynthetic { preset: name, seed, out_dir } => {
            let p = preset(&name)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            let ds = generate(&p, seed)?;
            let path = |f: &str| out_dir.join(f);
            write_tensor(&ds.train, &path("train.bin"))?;
            write_tensor(&ds.control, &path("control.bin"))?;
            write_tensor(&ds.heldout, &path("heldout.bin"))?;
            write_json(&ds.train_forcing, &path("train_co2.json"))?;
            write_json(&ds.heldout_forcing, &path("heldout_co2.json"))?;
            write_regions(&ds.mean.regions, &path("regions.csv"))?;
            write_params(&ds.covariance, &path("truth_params.json"))?;
            write_json(&ds.mean, &path("truth_mean.json"))?;
            println!("preset={} seed={seed} out_dir={}", p.name, out_dir.display());
            Ok(())
        }
        Command::Diagnose { data, params, control, out, emulated, index_out, periodogram_out } => {
            check_inputs(&[Some(&data), Some(&params), control.as_ref(), emulated.as_ref()])?;
            check_output(&out)?;
            for p in [&index_out, &periodogram_out].into_iter().flatten() {
                check_output(p)?;
            }
            let raw = read_tensor(&data)?;
            let e = match &control {
                Some(c) => standardize(&raw, &read_tensor(c)?)?.0,
                None => raw.clone(),
            };
            let cov = read_params(&params)?;
            let report = contrast_variances(&e, &cov)?;
            report.write_csv(&out)?;
            println!("contrast_rows={} out={}", report.rows.len(), out.display());
            let d = ContrastSet::from_ensemble(&e)?;
            if d.n_time() >= 3 {
                println!("residual_acf_lag1={:.6}", residual_autocorrelation(&d, &cov.ar, 1)?[0]);
            }
            if let Some(p) = &periodogram_out {
                write_periodograms(&e, &cov, p)?;
            }
            if let (Some(em), Some(idx)) = (&emulated, &index_out) {
                let traj = read_tensor(em)?;
                let index = lack_of_fit_index(&raw, &traj)?;
                write_index(&raw, &index, idx)?;
                println!("lack_of_fit_median={:.6}", median(&index));
            }
            Ok(())
        }
        Command::Loglik { data, params, control, dense_check } => {
            check_inputs(&[Some(&data), Some(&params), control.as_ref()])?;
            let e = load(&data, control.as_deref())?;
            let cov = read_params(&params)?;
            cov.validate_for(e.geometry())?;
            let d = ContrastSet::from_ensemble(&e)?;
            let ll = reml_loglik_fft(&d, &cov, e.geometry())?;
            if dense_check {
                compare_dense(&d, &cov)?;
            }
            let ind = fit_ind(&d, &FitOptions::default())?;
            let out = LoglikOutput {
                loglik: ll.value(),
                normalized: ll.normalized(),
                ind_loglik: ind.loglik,
                ind_variance: ind.variance,
                delta_normalized: (ll.value() - ind.loglik) / ll.n_contrasts as f64,
                n_contrasts: ll.n_contrasts,
            };
            println!("{}", serde_json::to_string_pretty(&out).expect("plain numbers serialize"));
            Ok(())
        }
        Command::Benchmark { sizes, out, reps, seed } => {
            check_inputs(&[Some(&sizes)])?;
            check_output(&out)?;
            let list: Vec<BenchSize> = read_json(&sizes)?;
            let rows = benchmark(&list, reps, seed)?;
            write_bench_csv(&rows, &out)?;
            let ns: Vec<f64> = rows.iter().map(|r| r.size.n as f64).collect();
            let ts: Vec<f64> = rows.iter().map(|r| r.fft_secs).collect();
            let same_shape = rows.windows(2).all(|w| (w[0].size.m, w[0].size.t, w[0].size.r) == (w[1].size.m, w[1].size.t, w[1].size.r));
            if same_shape && rows.len() >= 2 {
                if let Ok(k) = scaling_exponent(&ns, &ts) {
                    println!("fft_exponent_in_n={k:.3}");
                }
            }
            println!("rows={} out={}", rows.len(), out.display());
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct LoglikOutput {
    loglik: f64,
    normalized: f64,
    ind_loglik: f64,
    ind_variance: f64,
    delta_normalized: f64,
    n_contrasts: usize,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ForcingDoc {
    Series(ForcingSeries),
    Bare(Vec<f64>),
}

/// A bare list is aligned so its last `n_years` entries are the modeled
/// years, or taken whole when `n_years` is `None`.
fn read_forcing(path: &Path, n_years: Option<usize>) -> Result<ForcingSeries> {
    let f = match read_json::<ForcingDoc>(path)? {
        ForcingDoc::Series(s) => ForcingSeries::new(s.co2, s.history)?,
        ForcingDoc::Bare(co2) => match n_years {
            Some(t) => ForcingSeries::aligned(co2, t)?,
            None => ForcingSeries::new(co2, 0)?,
        },
    };
    if let Some(t) = n_years {
        if f.n_years() != t {
            return Err(Error::Dimension(format!(
                "{}: forcing covers {} modeled years, data has {t}",
                path.display(),
                f.n_years()
            )));
        }
    }
    Ok(f)
}

fn fit_options(o: &OptimizerArgs) -> FitOptions {
    FitOptions {
        simplex: SimplexOptions { ftol: o.ftol, xtol: o.xtol, max_evals: o.max_evals, ..Default::default() },
        ..Default::default()
    }
}

fn check_inputs(paths: &[Option<&PathBuf>]) -> Result<()> {
    for p in paths.iter().flatten() {
        if !p.is_file() {
            return Err(Error::io(
                p.as_path(),
                std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
            ));
        }
    }
    Ok(())
}

fn check_output(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist"),
        )),
        _ => Ok(()),
    }
}

fn load(data: &Path, control: Option<&Path>) -> Result<EnsembleTensor<f64>> {
    let e = read_tensor(data)?;
    match control {
        Some(c) => Ok(standardize(&e, &read_tensor(c)?)?.0),
        None => Ok(e),
    }
}

/// Recomputes the log-likelihood through a dense route and fails on disagreement.
fn compare_dense(d: &ContrastSet<f64>, params: &CovarianceParams<f64>) -> Result<()> {
    let geom = d.geometry();
    let fast = reml_loglik_fft(d, params, geom)?.value();
    let np = geom.n_pixels();
    let dense = if np * d.n_time() <= DENSE_LIMIT {
        reml_loglik_dense(d, params, geom)?.value()
    } else if np <= DENSE_SPATIAL_LIMIT {
        reml_loglik_dense_spatial(d, params, geom)?.value()
    } else {
        log::warn!("event=dense_check_skipped pixels={np} limit={DENSE_SPATIAL_LIMIT}");
        return Ok(());
    };
    let rel = (fast - dense).abs() / dense.abs().max(f64::MIN_POSITIVE);
    log::info!("event=dense_check fast={fast:.12e} dense={dense:.12e} rel={rel:.3e}");
    if rel > DENSE_CHECK_TOL {
        return Err(Error::DenseCheck { fast, dense, rel });
    }
    Ok(())
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len();
    if k == 0 {
        f64::NAN
    } else if k % 2 == 1 {
        s[k / 2]
    } else {
        0.5 * (s[k / 2 - 1] + s[k / 2])
    }
}

fn write_index(e: &EnsembleTensor<f64>, index: &[f64], path: &Path) -> Result<()> {
    let geom = e.geometry();
    let m = geom.n_lat();
    let mut w = csv::Writer::from_path(path).map_err(|err| csv_err(path, err))?;
    w.write_record(["lat_index", "lon_index", "latitude", "longitude", "index"]).map_err(|err| csv_err(path, err))?;
    for (px, v) in index.iter().enumerate() {
        let (i, j) = (px % m, px / m);
        w.write_record([
            i.to_string(),
            j.to_string(),
            geom.latitudes()[i].to_string(),
            geom.longitudes()[j].to_string(),
            format!("{v:e}"),
        ])
        .map_err(|err| csv_err(path, err))?;
    }
    w.flush().map_err(|err| Error::io(path, err))
}

fn write_periodograms(e: &EnsembleTensor<f64>, cov: &CovarianceParams<f64>, path: &Path) -> Result<()> {
    let d = ContrastSet::from_ensemble(e)?;
    let mut w = csv::Writer::from_path(path).map_err(|err| csv_err(path, err))?;
    w.write_record(["band", "latitude", "wavenumber", "empirical", "model"]).map_err(|err| csv_err(path, err))?;
    for m in 0..e.geometry().n_lat() {
        let rep = band_periodogram_report(&d, m, cov, PeriodogramKind::PerTime)?;
        let model = rep.model.unwrap_or_default();
        for (c, emp) in rep.empirical.iter().enumerate() {
            w.write_record([
                m.to_string(),
                rep.latitude.to_string(),
                c.to_string(),
                format!("{emp:e}"),
                model.get(c).map(|v| format!("{v:e}")).unwrap_or_default(),
            ])
            .map_err(|err| csv_err(path, err))?;
        }
    }
    w.flush().map_err(|err| Error::io(path, err))
}
