//! Longitude-direction DFTs of latitude-fastest fields.
//!
//! Forward transform is `X_c = sum_n x_n exp(-2 pi i c n / N)` without
//! normalization; the inverse carries the `1/N`.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::scalar::Real;

#[derive(Clone)]
pub struct Fourier<T: Real> {
    n: usize,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

impl<T: Real> std::fmt::Debug for Fourier<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fourier").field("n", &self.n).finish()
    }
}

impl<T: Real> Fourier<T> {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { n, forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place forward DFT of one sequence.
    pub fn forward(&self, buf: &mut [Complex<T>]) {
        self.forward.process(buf);
    }

    /// In-place inverse DFT of one sequence, including the `1/N` factor.
    pub fn inverse(&self, buf: &mut [Complex<T>]) {
        self.inverse.process(buf);
        let scale = T::one() / T::of_usize(self.n);
        for v in buf.iter_mut() {
            *v = *v * scale;
        }
    }

    /// Forward transform of every latitude of an `N x M` field (latitude fastest).
    /// Output is wavenumber-major: entry `c * M + m`.
    pub fn forward_field(&self, field: &[T], n_lat: usize, out: &mut [Complex<T>], buf: &mut Vec<Complex<T>>) {
        let n = self.n;
        debug_assert_eq!(field.len(), n * n_lat);
        buf.resize(n, Complex::default());
        for m in 0..n_lat {
            for j in 0..n {
                buf[j] = Complex::new(field[j * n_lat + m], T::zero());
            }
            self.forward.process(buf);
            for c in 0..n {
                out[c * n_lat + m] = buf[c];
            }
        }
    }

    /// Inverse of [`Fourier::forward_field`]. Returns the real parts and the
    /// largest absolute imaginary residue.
    pub fn inverse_field(&self, spec: &[Complex<T>], n_lat: usize, out: &mut [T], buf: &mut Vec<Complex<T>>) -> T {
        let n = self.n;
        buf.resize(n, Complex::default());
        let mut worst = T::zero();
        for m in 0..n_lat {
            for c in 0..n {
                buf[c] = spec[c * n_lat + m];
            }
            self.inverse(buf);
            for j in 0..n {
                out[j * n_lat + m] = buf[j].re;
                worst = worst.max(buf[j].im.abs());
            }
        }
        worst
    }
}

/// Distinct wavenumbers of a real sequence, `0..=N/2`, with their multiplicity
/// in the full spectrum (1 for `0` and `N/2`, 2 otherwise).
pub fn half_spectrum(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..=n / 2).map(move |c| (c, if c == 0 || 2 * c == n { 1 } else { 2 }))
}
