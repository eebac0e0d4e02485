//! Land/ocean AR(1) layer: `eps_t = Phi eps_{t-1} + eta_t` with `eps_1 = eta_1`.
//!
//! Series are `T x P` blocks (time slowest, `P = N * M` pixels latitude
//! fastest), i.e. one realization of an ensemble tensor.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Real;

fn check_dims(len: usize, n_time: usize, n_pix: usize) -> Result<()> {
    if n_pix == 0 || len != n_time * n_pix {
        return Err(Error::Dimension(format!(
            "series of length {len} is not T x P = {n_time} x {n_pix}"
        )));
    }
    Ok(())
}

/// Innovations `H_1 = D_1`, `H_t = D_t - Phi D_{t-1}`.
pub fn whiten<T: Real>(d: &[T], n_time: usize, phi: &[T]) -> Result<Vec<T>> {
    let p = phi.len();
    check_dims(d.len(), n_time, p)?;
    let mut h = d.to_vec();
    for t in (1..n_time).rev() {
        let (prev, cur) = h.split_at_mut(t * p);
        let prev = &prev[(t - 1) * p..];
        for ((x, &y), &f) in cur[..p].iter_mut().zip(prev.iter()).zip(phi) {
            *x = *x - f * y;
        }
    }
    Ok(h)
}

/// Exact inverse of [`whiten`].
pub fn color<T: Real>(h: &[T], n_time: usize, phi: &[T]) -> Result<Vec<T>> {
    let p = phi.len();
    check_dims(h.len(), n_time, p)?;
    let mut d = h.to_vec();
    color_in_place(&mut d, n_time, phi);
    Ok(d)
}

pub(crate) fn color_in_place<T: Real>(d: &mut [T], n_time: usize, phi: &[T]) {
    let p = phi.len();
    for t in 1..n_time {
        let (prev, cur) = d.split_at_mut(t * p);
        let prev = &prev[(t - 1) * p..];
        for ((x, &y), &f) in cur[..p].iter_mut().zip(prev.iter()).zip(phi) {
            *x = *x + f * y;
        }
    }
}

/// [`whiten`] applied to every realization of an `R x T x P` buffer.
pub fn whiten_all<T: Real>(values: &[T], n_real: usize, n_time: usize, phi: &[T]) -> Result<Vec<T>> {
    let block = n_time * phi.len();
    check_dims(values.len(), n_real * n_time, phi.len())?;
    let parts: Vec<Vec<T>> = values
        .par_chunks(block)
        .map(|chunk| whiten(chunk, n_time, phi))
        .collect::<Result<_>>()?;
    Ok(parts.concat())
}
