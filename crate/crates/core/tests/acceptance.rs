//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::PI;
use std::time::Instant;

use axsym::estimation::{fit_ind, fit_two_stage, FitOptions};
use axsym::grid::{EnsembleTensor, GridGeometry, RegionMap};
use axsym::io::{decode_tensor, encode_tensor, read_params, write_params};
use axsym::mean::{emulate_mean, fit_mean, lack_of_fit_index, MeanFitOptions, Standardization};
use axsym::params::{ArCoefficients, BandSpectrum, Coherence, CovarianceParams};
use axsym::reml::{reml_loglik_dense, reml_loglik_dense_spatial, reml_loglik_fft, space_time_covariance, ContrastSet};
use axsym::simulate::{sample_noise, SimulationSpec};
use axsym::spectral::{band_spectrum, coherence, SpectralBlocks};
use axsym::synthetic::{drop_forcing, reference_mean, reference_params, slow_forcing, synthetic_grid};
use axsym::temporal::{color, whiten};
use axsym::ErrorClass;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_params(rng: &mut ChaCha8Rng, m: usize) -> CovarianceParams<f64> {
    CovarianceParams {
        bands: (0..m)
            .map(|_| BandSpectrum {
                phi: rng.random_range(0.2..3.0),
                alpha: rng.random_range(0.2..2.0),
                nu: rng.random_range(0.2..2.5),
            })
            .collect(),
        coherence: Coherence { xi: rng.random_range(0.05..0.99), tau: rng.random_range(0.01..2.0) },
        ar: ArCoefficients { phi_ocean: rng.random_range(-0.9..0.9), phi_land: rng.random_range(-0.9..0.9) },
    }
}

fn random_grid(rng: &mut ChaCha8Rng, m: usize, n: usize) -> GridGeometry {
    let mask = (0..m * n).map(|_| rng.random_bool(0.3) as u8).collect();
    GridGeometry::equispaced(m, n, 120.0).unwrap().with_mask(mask).unwrap()
}

fn random_tensor(rng: &mut ChaCha8Rng, geom: &GridGeometry, r: usize, t: usize) -> EnsembleTensor<f64> {
    let vals = (0..r * t * geom.n_pixels()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    EnsembleTensor::new(geom.clone(), r, t, vals).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let draws = 60;
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let m = rng.random_range(1..=8);
        let n = rng.random_range(2..=16);
        let t = rng.random_range(1..=8);
        let r = rng.random_range(2..=3);
        let geom = random_grid(&mut rng, m, n);
        let p = random_params(&mut rng, m);
        let e = random_tensor(&mut rng, &geom, r, t);
        let d = ContrastSet::from_ensemble(&e).unwrap();
        let fast = reml_loglik_fft(&d, &p, &geom).unwrap().value();
        let dense = reml_loglik_dense(&d, &p, &geom).unwrap().value();
        worst = worst.max(rel(fast, dense));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-8 && secs < 60.0,
        format!("{draws} draws, max relative difference {worst:.2e} (limit 1e-8), {secs:.2} s (limit 60 s)"),
    )
}

fn covariance_synthesis() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let m = rng.random_range(1..=4);
        let n = rng.random_range(2..=16);
        let geom = random_grid(&mut rng, m, n);
        let p = random_params(&mut rng, m);
        let sigma = SpectralBlocks::build(&p, &geom).unwrap().synthesize_covariance();
        // Direct summation over all N wavenumbers from the closed-form blocks.
        let lats = geom.latitudes();
        let np = m * n;
        let mut scale = 0.0f64;
        let mut err = 0.0f64;
        for n1 in 0..n {
            for m1 in 0..m {
                for n2 in 0..n {
                    for m2 in 0..m {
                        let k = (n2 + n - n1) % n;
                        let mut v = 0.0;
                        for c in 0..n {
                            let f1 = band_spectrum(&p.bands[m1], c, n);
                            let f2 = band_spectrum(&p.bands[m2], c, n);
                            let rho = coherence(&p.coherence, (lats[m1] - lats[m2]).abs(), c, n);
                            v += rho * (f1 * f2).sqrt() * (2.0 * PI * (c * k) as f64 / n as f64).cos();
                        }
                        v /= n as f64;
                        let got = sigma[(n1 * m + m1) * np + n2 * m + m2];
                        scale = scale.max(v.abs());
                        err = err.max((got - v).abs());
                    }
                }
            }
        }
        worst = worst.max(err / scale);
    }
    let mut min_eig = f64::INFINITY;
    for _ in 0..100 {
        let m = rng.random_range(1..=8);
        let n = rng.random_range(2..=32);
        let geom = random_grid(&mut rng, m, n);
        let p = random_params(&mut rng, m);
        let Ok(blocks) = SpectralBlocks::build(&p, &geom) else {
            min_eig = f64::NEG_INFINITY;
            continue;
        };
        for c in 0..=n / 2 {
            let b = nalgebra::DMatrix::from_row_slice(m, m, blocks.block(c));
            let eig = b.symmetric_eigen().eigenvalues.min();
            min_eig = min_eig.min(eig / blocks.block(c).iter().fold(0.0f64, |a, v| a.max(v.abs())));
        }
    }
    outcome(
        worst <= 1e-12 && min_eig > 0.0,
        format!("max scaled synthesis error {worst:.2e} (limit 1e-12); smallest relative block eigenvalue {min_eig:.2e} over 100 parameter sets"),
    )
}

fn sampler_consistency() -> Outcome {
    let geom = GridGeometry::regular(vec![-15.0, 15.0], 8).unwrap().with_mask(vec![0, 1, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0]).unwrap();
    let p = CovarianceParams {
        bands: vec![BandSpectrum { phi: 1.0, alpha: 0.6, nu: 1.0 }, BandSpectrum { phi: 0.7, alpha: 1.1, nu: 0.6 }],
        coherence: Coherence { xi: 0.9, tau: 0.3 },
        ar: ArCoefficients { phi_ocean: 0.3, phi_land: 0.1 },
    };
    let draws = 100_000;
    let s = sample_noise(&geom, &p, 1, draws, 2026).unwrap();
    let sigma: Vec<f64> = SpectralBlocks::build(&p, &geom).unwrap().synthesize_covariance();
    let np = geom.n_pixels();
    let mut emp = vec![0.0; np * np];
    for r in 0..draws {
        let x = s.tensor.field(r, 0);
        for i in 0..np {
            for j in 0..np {
                emp[i * np + j] += x[i] * x[j];
            }
        }
    }
    let mut worst_z = 0.0f64;
    let mut exceed = 0;
    for i in 0..np {
        for j in i..np {
            let se = ((sigma[i * np + i] * sigma[j * np + j] + sigma[i * np + j].powi(2)) / draws as f64).sqrt();
            let z = (emp[i * np + j] / draws as f64 - sigma[i * np + j]).abs() / se;
            worst_z = worst_z.max(z);
            exceed += (z > 3.0) as usize;
        }
    }
    let unique = np * (np + 1) / 2;
    let again = sample_noise(&geom, &p, 1, draws, 2026).unwrap();
    let same = encode_tensor(&s.tensor).unwrap() == encode_tensor(&again.tensor).unwrap();
    outcome(
        worst_z <= 3.0 && s.max_imag_residue < 1e-12 && same,
        format!(
            "max |z| {worst_z:.2} over {unique} distinct entries (limit 3), {exceed} beyond 3 (about {:.2} expected by chance); imaginary residue {:.1e}; reproducible bytes {same}",
            unique as f64 * 0.0027,
            s.max_imag_residue
        ),
    )
}

fn parameter_recovery() -> Outcome {
    let start = Instant::now();
    let geom = synthetic_grid(20, 96).unwrap();
    let truth = reference_params(&geom);
    let reps = 20u64;
    let mut names: Vec<String> = Vec::new();
    let mut hits: Vec<usize> = Vec::new();
    let truth_of = |name: &str| -> f64 {
        match name {
            "xi" => truth.coherence.xi,
            "tau" => truth.coherence.tau,
            "phi_ocean" => truth.ar.phi_ocean,
            "phi_land" => truth.ar.phi_land,
            other => {
                let (kind, m) = other.rsplit_once('_').unwrap();
                let b = truth.bands[m.parse::<usize>().unwrap()];
                match kind {
                    "phi" => b.phi,
                    "alpha" => b.alpha,
                    _ => b.nu,
                }
            }
        }
    };
    for rep in 0..reps {
        let e = sample_noise(&geom, &truth, 200, 5, 9000 + rep).unwrap().tensor;
        let (_, report) = fit_two_stage(&e, &FitOptions::default()).unwrap();
        if names.is_empty() {
            names = report.estimates.iter().map(|r| r.name.clone()).collect();
            hits = vec![0; names.len()];
        }
        for (k, name) in names.iter().enumerate() {
            let row = report.estimate(name).unwrap();
            if row.sd.is_finite() && row.covers(truth_of(name), 3.0) {
                hits[k] += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let need = (0.9 * reps as f64).ceil() as usize;
    let (worst_k, worst) = hits.iter().enumerate().min_by_key(|(_, h)| **h).map(|(k, h)| (k, *h)).unwrap();
    let failing: Vec<&str> = names.iter().zip(&hits).filter(|(_, h)| **h < need).map(|(n, _)| n.as_str()).collect();
    outcome(
        failing.is_empty() && secs < 1800.0,
        format!(
            "{} parameters x {reps} replications; lowest coverage {worst}/{reps} ({}); failing: {:?}; {secs:.0} s on {} threads (limit 1800 s)",
            names.len(),
            names[worst_k],
            failing,
            rayon::current_num_threads()
        ),
    )
}

fn mean_model_recovery() -> Outcome {
    let geom = synthetic_grid(12, 32).unwrap();
    let regions = RegionMap::blocks(&geom, 3, 4);
    let cov = reference_params(&geom);
    let mut truth = reference_mean(&geom, &regions, 0.95);
    truth.standardization = Standardization::identity(geom.n_pixels());
    let (t, r) = (500, 5);
    let forcing = drop_forcing(t);
    let spec = |f: &axsym::mean::ForcingSeries, years: usize, seed: u64| SimulationSpec {
        geometry: geom.clone(),
        params: cov.clone(),
        mean: Some(truth.clone()),
        forcing: Some(f.clone()),
        n_time: years,
        n_real: r,
        seed,
        scenario_id: String::new(),
    };
    let train = spec(&forcing, t, 31).run().unwrap().tensor;
    let (_, fit) = fit_two_stage(&train, &FitOptions::default()).unwrap();
    let opts = MeanFitOptions { pixel_sds: true, ..Default::default() };
    let fitted = fit_mean(&train, Standardization::identity(geom.n_pixels()), &forcing, &regions, &fit.params, &opts).unwrap();
    let summary = fitted.fit.as_ref().unwrap();
    let lambda_ok = (fitted.lambda - 0.95).abs() <= 0.02;

    let z = |est: &[f64], sd: &[f64], tr: &[f64]| -> Vec<f64> {
        est.iter().zip(sd).zip(tr).map(|((e, s), t)| (e - t).abs() / s).collect()
    };
    let mut zs = z(&fitted.beta0, summary.beta0_sd.as_ref().unwrap(), &truth.beta0);
    zs.extend(z(&fitted.beta1, summary.beta1_sd.as_ref().unwrap(), &truth.beta1));
    zs.extend(z(&fitted.beta2, &summary.beta2_sd, &truth.beta2));
    let within = zs.iter().filter(|v| **v <= 3.0).count();
    let frac = within as f64 / zs.len() as f64;
    let beta2_within = z(&fitted.beta2, &summary.beta2_sd, &truth.beta2).iter().filter(|v| **v <= 3.0).count();

    let heldout_forcing = slow_forcing(300);
    let heldout = spec(&heldout_forcing, 300, 32).run().unwrap().tensor;
    let emulated = emulate_mean(&fitted, &heldout_forcing).unwrap();
    let mut index = lack_of_fit_index(&heldout, &emulated).unwrap();
    index.sort_by(f64::total_cmp);
    let median = index[index.len() / 2];

    let p = geom.n_pixels();
    let mut mean = vec![0.0; 300 * p];
    for k in 0..r {
        mean.iter_mut().zip(heldout.realization(k)).for_each(|(a, v)| *a += v / r as f64);
    }
    let at_mean = lack_of_fit_index(&heldout, &EnsembleTensor::new(geom.clone(), 1, 300, mean).unwrap()).unwrap();
    let target = (r as f64 - 1.0) / r as f64;
    let exact = at_mean.iter().map(|v| (v - target).abs()).fold(0.0, f64::max);

    let coef_ok = within == zs.len();
    outcome(
        lambda_ok && coef_ok && median < 1.2 && exact < 1e-12,
        format!(
            "lambda {:.4} (sd {:.4}, truth 0.95, tolerance 0.02); {within}/{} coefficients within 3 sds ({:.2}%, about {:.1} outside expected by chance; region coefficients {beta2_within}/{}); held-out median index {median:.4} (limit 1.2); index at ensemble mean off (R-1)/R by {exact:.1e}",
            fitted.lambda,
            summary.lambda_sd,
            zs.len(),
            100.0 * frac,
            zs.len() as f64 * 0.0027,
            fitted.beta2.len()
        ),
    )
}

fn whitening_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst_round = 0.0f64;
    let mut worst_ll = 0.0f64;
    let mut worst_logdet = 0.0f64;
    for _ in 0..30 {
        let m = rng.random_range(1..=4);
        let n = rng.random_range(2..=8);
        let t = rng.random_range(1..=10);
        let geom = random_grid(&mut rng, m, n);
        let p = random_params(&mut rng, m);
        let phi = p.ar.expand(&geom);
        let x: Vec<f64> = (0..t * geom.n_pixels()).map(|_| rng.sample(StandardNormal)).collect();
        let back = color(&whiten(&x, t, &phi).unwrap(), t, &phi).unwrap();
        worst_round = worst_round.max(x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));

        let e = random_tensor(&mut rng, &geom, 2, t);
        let d = ContrastSet::from_ensemble(&e).unwrap();
        let dense = reml_loglik_dense(&d, &p, &geom).unwrap().value();
        let spatial = reml_loglik_dense_spatial(&d, &p, &geom).unwrap().value();
        worst_ll = worst_ll.max(rel(dense, spatial));

        let blocks = SpectralBlocks::build(&p, &geom).unwrap();
        let sigma_s = blocks.synthesize_covariance();
        let st = space_time_covariance(&sigma_s, &phi, t);
        let k = t * geom.n_pixels();
        let chol = nalgebra::DMatrix::from_row_slice(k, k, &st).cholesky().unwrap();
        let logdet_st = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        worst_logdet = worst_logdet.max((logdet_st - t as f64 * blocks.total_logdet()).abs() / logdet_st.abs().max(1.0));
    }
    outcome(
        worst_round <= 1e-14 && worst_ll <= 1e-8 && worst_logdet <= 1e-8,
        format!(
            "color(whiten(x)) max error {worst_round:.1e} (limit 1e-14); dense vs whitened-spatial loglik {worst_ll:.1e} (limit 1e-8); log det identity {worst_logdet:.1e}"
        ),
    )
}

fn median_time<F: FnMut()>(reps: usize, mut f: F) -> f64 {
    f();
    let mut v: Vec<f64> = (0..reps)
        .map(|_| {
            let s = Instant::now();
            f();
            s.elapsed().as_secs_f64()
        })
        .collect();
    v.sort_by(f64::total_cmp);
    v[reps / 2]
}

fn complexity() -> Outcome {
    let ns = [24usize, 48, 96, 192];
    let mut times = Vec::new();
    for &n in &ns {
        let geom = synthetic_grid(8, n).unwrap();
        let p = reference_params(&geom);
        let e = sample_noise(&geom, &p, 10, 2, 7).unwrap().tensor;
        let d = ContrastSet::from_ensemble(&e).unwrap();
        times.push(median_time(41, || {
            reml_loglik_fft(&d, &p, &geom).unwrap();
        }));
    }
    let x: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let k = axsym::bench::scaling_exponent(&x, &times).unwrap();

    let geom = synthetic_grid(16, 96).unwrap();
    let p = reference_params(&geom);
    let e = sample_noise(&geom, &p, 20, 2, 8).unwrap().tensor;
    let d = ContrastSet::from_ensemble(&e).unwrap();
    let fast = median_time(11, || {
        reml_loglik_fft(&d, &p, &geom).unwrap();
    });
    let dense = median_time(3, || {
        reml_loglik_dense_spatial(&d, &p, &geom).unwrap();
    });
    let speedup = dense / fast;
    outcome(
        k <= 1.3 && speedup >= 10.0,
        format!(
            "fft exponent in N {k:.3} (limit 1.3; times {:?} s); speedup over dense spatial Cholesky at M=16 N=96 T=20 R=2: {speedup:.0}x (limit 10x)",
            times.iter().map(|t| format!("{t:.2e}")).collect::<Vec<_>>()
        ),
    )
}

fn model_ordering() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for (k, xi) in [0.5, 0.8, 0.97].into_iter().enumerate() {
        let geom = synthetic_grid(6, 32).unwrap();
        let mut p = reference_params(&geom);
        p.coherence.xi = xi;
        let e = sample_noise(&geom, &p, 60, 3, 800 + k as u64).unwrap().tensor;
        let opts = FitOptions::default();
        let (_, sp) = fit_two_stage(&e, &opts).unwrap();
        let ind = fit_ind(&ContrastSet::from_ensemble(&e).unwrap(), &opts).unwrap();
        let delta = sp.normalized_loglik - ind.normalized_loglik;
        pass &= sp.loglik > ind.loglik;
        details.push(format!("xi={xi}: delta loglik/NMT(R-1) = {delta:.4}"));
    }
    outcome(pass, details.join("; "))
}

fn format_round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let geom = random_grid(&mut rng, 5, 12);
    let mut vals: Vec<f64> = (0..3 * 4 * 60).map(|_| rng.sample::<f64, _>(StandardNormal) * 1e3).collect();
    vals[0] = -0.0;
    vals[1] = f64::MIN_POSITIVE / 8.0;
    vals[2] = f64::MAX;
    let t = EnsembleTensor::new(geom, 3, 4, vals).unwrap().with_co2(vec![280.0, 281.5, 283.25, 284.125]).unwrap();
    let bytes = encode_tensor(&t).unwrap();
    let back = decode_tensor(&bytes).unwrap();
    let tensor_exact = back.values().iter().zip(t.values()).all(|(a, b)| a.to_bits() == b.to_bits())
        && back.dims() == t.dims()
        && back.geometry() == t.geometry();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    let mut params_exact = true;
    for _ in 0..20 {
        let p = random_params(&mut rng, 4);
        write_params(&p, &path).unwrap();
        let q = read_params(&path).unwrap();
        let bits = |p: &CovarianceParams<f64>| -> Vec<u64> {
            let mut v: Vec<u64> = p.bands.iter().flat_map(|b| [b.phi, b.alpha, b.nu]).map(f64::to_bits).collect();
            v.extend([p.coherence.xi, p.coherence.tau, p.ar.phi_ocean, p.ar.phi_land].map(f64::to_bits));
            v
        };
        params_exact &= bits(&p) == bits(&q);
    }

    let mut bad_magic = bytes.clone();
    bad_magic[0] ^= 0xff;
    let mut truncated = bytes.clone();
    truncated.truncate(bytes.len() - 8);
    let rejections = [decode_tensor(&bad_magic), decode_tensor(&truncated), decode_tensor(&bytes[..6])];
    let rejected = rejections.iter().all(|r| matches!(r, Err(e) if e.class() == ErrorClass::Data));
    outcome(
        tensor_exact && params_exact && rejected,
        format!("tensor bit-exact {tensor_exact}; parameters bit-exact {params_exact}; corrupted inputs rejected as data errors (exit 2) {rejected}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("oracle equivalence", oracle_equivalence),
        ("covariance synthesis", covariance_synthesis),
        ("sampler consistency", sampler_consistency),
        ("parameter recovery", parameter_recovery),
        ("mean-model recovery", mean_model_recovery),
        ("whitening exactness", whitening_exactness),
        ("complexity", complexity),
        ("model ordering", model_ordering),
        ("format round-trips", format_round_trips),
    ];
    let only: Option<usize> = std::env::var("AXSYM_CRITERION").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        let o = run();
        println!("criterion {} ({name}): {} - {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += !o.pass as usize;
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
