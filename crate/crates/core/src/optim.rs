//! Derivative-free optimization helpers: Nelder-Mead simplex, golden-section
//! search, and central finite-difference Hessians.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplexOptions {
    /// Function-value spread across vertices required for convergence.
    pub ftol: f64,
    /// Largest vertex distance from the best vertex required for convergence.
    pub xtol: f64,
    pub max_evals: usize,
    /// Initial step along each coordinate.
    pub step: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self { ftol: 1e-6, xtol: 1e-5, max_evals: 2000, step: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    /// Objective at the starting point.
    pub f_start: f64,
    pub evals: usize,
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Minimizes `f` from `x0`. Non-finite objective values are treated as `+inf`.
pub fn nelder_mead<F>(f: F, x0: &[f64], opts: &SimplexOptions) -> Minimum
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let dim = x0.len();
    let eval = |x: &[f64]| sanitize(f(x));
    let mut pts: Vec<Vec<f64>> = std::iter::once(x0.to_vec())
        .chain((0..dim).map(|i| {
            let mut p = x0.to_vec();
            p[i] += opts.step;
            p
        }))
        .collect();
    let mut vals: Vec<f64> = pts.par_iter().map(|p| eval(p)).collect();
    let f_start = vals[0];
    let mut evals = dim + 1;
    let mut converged = false;

    let combine = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
    };

    loop {
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let spread = vals[dim] - vals[0];
        let diameter = pts[1..]
            .iter()
            .map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread.abs() < opts.ftol && diameter < opts.xtol {
            converged = true;
            break;
        }
        if evals >= opts.max_evals {
            break;
        }

        let centroid: Vec<f64> =
            (0..dim).map(|k| pts[..dim].iter().map(|p| p[k]).sum::<f64>() / dim as f64).collect();
        let worst = pts[dim].clone();
        // x_r = c + REFLECT (c - worst)
        let xr = combine(&centroid, &worst, -REFLECT);
        let fr = eval(&xr);
        evals += 1;
        if fr < vals[0] {
            let xe = combine(&centroid, &worst, -EXPAND);
            let fe = eval(&xe);
            evals += 1;
            if fe < fr {
                pts[dim] = xe;
                vals[dim] = fe;
            } else {
                pts[dim] = xr;
                vals[dim] = fr;
            }
            continue;
        }
        if fr < vals[dim - 1] {
            pts[dim] = xr;
            vals[dim] = fr;
            continue;
        }
        let xc = if fr < vals[dim] {
            combine(&centroid, &xr, CONTRACT)
        } else {
            combine(&centroid, &worst, CONTRACT)
        };
        let fc = eval(&xc);
        evals += 1;
        if fc < fr.min(vals[dim]) {
            pts[dim] = xc;
            vals[dim] = fc;
            continue;
        }
        let best = pts[0].clone();
        let shrunk: Vec<Vec<f64>> = pts[1..].iter().map(|p| combine(&best, p, SHRINK)).collect();
        let fs: Vec<f64> = shrunk.par_iter().map(|p| eval(p)).collect();
        evals += dim;
        for (i, (p, v)) in shrunk.into_iter().zip(fs).enumerate() {
            pts[i + 1] = p;
            vals[i + 1] = v;
        }
    }
    let best = (0..=dim).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
    Minimum { x: pts[best].clone(), f: vals[best], f_start, evals, converged }
}

/// Maximizes a unimodal `f` on `[lo, hi]` until the bracket is narrower than `tol`.
/// Returns `(argmax, max, evaluations)`.
pub fn golden_section_max<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> (f64, f64, usize) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut evals = 2;
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
        evals += 1;
    }
    if fc > fd {
        (c, fc, evals)
    } else {
        (d, fd, evals)
    }
}

/// Central finite-difference Hessian of `f` at `x` with per-coordinate steps.
pub fn hessian<F>(f: F, x: &[f64], steps: &[f64]) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = x.len();
    let shifted = |moves: &[(usize, f64)]| -> f64 {
        let mut y = x.to_vec();
        for &(i, s) in moves {
            y[i] += s;
        }
        f(&y)
    };
    let f0 = f(x);
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| (0..=i).map(move |j| (i, j))).collect();
    let entries: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (hi, hj) = (steps[i], steps[j]);
            if i == j {
                (shifted(&[(i, hi)]) - 2.0 * f0 + shifted(&[(i, -hi)])) / (hi * hi)
            } else {
                (shifted(&[(i, hi), (j, hj)]) - shifted(&[(i, hi), (j, -hj)]) - shifted(&[(i, -hi), (j, hj)])
                    + shifted(&[(i, -hi), (j, -hj)]))
                    / (4.0 * hi * hj)
            }
        })
        .collect();
    let mut h = vec![0.0; d * d];
    for (&(i, j), v) in pairs.iter().zip(entries) {
        h[i * d + j] = v;
        h[j * d + i] = v;
    }
    h
}
