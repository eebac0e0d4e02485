//! Small dense symmetric positive definite linear algebra.

use rayon::prelude::*;

use crate::scalar::Real;

const PAR_THRESHOLD: usize = 192;

/// Lower Cholesky factor `A = L L'` of a symmetric positive definite matrix,
/// stored row-major in an `n x n` buffer (upper triangle zero).
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    n: usize,
    l: Vec<T>,
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s0 = T::zero();
    let mut s1 = T::zero();
    let mut s2 = T::zero();
    let mut s3 = T::zero();
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        s0 = s0 + a[i] * b[i];
        s1 = s1 + a[i + 1] * b[i + 1];
        s2 = s2 + a[i + 2] * b[i + 2];
        s3 = s3 + a[i + 3] * b[i + 3];
    }
    for i in 4 * chunks..a.len() {
        s0 = s0 + a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3)
}

impl<T: Real> Cholesky<T> {
    /// Factors the lower triangle of row-major `a`. Returns `None` when a pivot
    /// is not strictly positive.
    pub fn factor(a: &[T], n: usize) -> Option<Self> {
        assert_eq!(a.len(), n * n, "matrix buffer has wrong length");
        let mut l = vec![T::zero(); n * n];
        for i in 0..n {
            l[i * n..i * n + i + 1].copy_from_slice(&a[i * n..i * n + i + 1]);
        }
        for j in 0..n {
            let (head, tail) = l.split_at_mut((j + 1) * n);
            let row_j = &mut head[j * n..(j + 1) * n];
            let d = row_j[j] - dot(&row_j[..j], &row_j[..j]);
            if !(d > T::zero()) || !d.is_finite() {
                return None;
            }
            let pivot = d.sqrt();
            row_j[j] = pivot;
            let row_j = &row_j[..j];
            let update = |row_i: &mut [T]| {
                row_i[j] = (row_i[j] - dot(&row_i[..j], row_j)) / pivot;
            };
            if n - j > PAR_THRESHOLD {
                tail.par_chunks_mut(n).for_each(update);
            } else {
                tail.chunks_mut(n).for_each(update);
            }
        }
        Some(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> T {
        self.l[i * self.n + j]
    }

    pub fn logdet(&self) -> T {
        let two = T::of(2.0);
        (0..self.n).map(|i| self.l[i * self.n + i].ln()).sum::<T>() * two
    }

    /// Overwrites `x` with `L^{-1} x`.
    pub fn forward_in_place(&self, x: &mut [T]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            x[i] = (x[i] - dot(row, &x[..i])) / self.l[i * n + i];
        }
    }

    /// Overwrites `x` with `L'^{-1} x`.
    pub fn backward_in_place(&self, x: &mut [T]) {
        let n = self.n;
        for i in (0..n).rev() {
            x[i] = x[i] / self.l[i * n + i];
            let xi = x[i];
            for k in 0..i {
                x[k] = x[k] - self.l[i * n + k] * xi;
            }
        }
    }

    /// Overwrites `x` with `A^{-1} x`.
    pub fn solve_in_place(&self, x: &mut [T]) {
        self.forward_in_place(x);
        self.backward_in_place(x);
    }

    /// `x' A^{-1} x`.
    pub fn quad_form(&self, x: &[T]) -> T {
        let mut y = x.to_vec();
        self.forward_in_place(&mut y);
        dot(&y, &y)
    }

    /// `L z`.
    pub fn mul_lower(&self, z: &[T]) -> Vec<T> {
        let n = self.n;
        (0..n).map(|i| dot(&self.l[i * n..i * n + i + 1], &z[..i + 1])).collect()
    }

    /// Dense `A^{-1}`, row-major.
    pub fn inverse(&self) -> Vec<T> {
        let n = self.n;
        let mut inv = vec![T::zero(); n * n];
        let mut col = vec![T::zero(); n];
        for j in 0..n {
            col.iter_mut().for_each(|v| *v = T::zero());
            col[j] = T::one();
            self.solve_in_place(&mut col);
            for i in 0..n {
                inv[i * n + j] = col[i];
            }
        }
        inv
    }
}

/// `tr(A^{-1} S)` for row-major `n x n` `S`.
pub fn trace_inv_product<T: Real>(chol: &Cholesky<T>, s: &[T]) -> T {
    let n = chol.dim();
    let mut col = vec![T::zero(); n];
    let mut total = T::zero();
    for j in 0..n {
        for i in 0..n {
            col[i] = s[i * n + j];
        }
        chol.solve_in_place(&mut col);
        total = total + col[j];
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spd(n: usize) -> Vec<f64> {
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = 1.0 / (1.0 + (i as f64 - j as f64).abs()) + if i == j { n as f64 } else { 0.0 };
            }
        }
        a
    }

    #[test]
    fn factor_reconstructs() {
        for n in [1, 3, 7, 300] {
            let a = spd(n);
            let c = Cholesky::factor(&a, n).unwrap();
            for i in 0..n.min(20) {
                for j in 0..=i {
                    let v: f64 = (0..=j).map(|k| c.at(i, k) * c.at(j, k)).sum();
                    assert_relative_eq!(v, a[i * n + j], epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn solve_and_logdet_match_nalgebra() {
        let n = 6;
        let a = spd(n);
        let c = Cholesky::factor(&a, n).unwrap();
        let m = nalgebra::DMatrix::from_row_slice(n, n, &a);
        assert_relative_eq!(c.logdet(), m.determinant().ln(), epsilon = 1e-12);
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut x = b.clone();
        c.solve_in_place(&mut x);
        let expect = m.clone().lu().solve(&nalgebra::DVector::from_vec(b.clone())).unwrap();
        for i in 0..n {
            assert_relative_eq!(x[i], expect[i], epsilon = 1e-12);
        }
        let q: f64 = b.iter().zip(&x).map(|(u, v)| u * v).sum();
        assert_relative_eq!(c.quad_form(&b), q, epsilon = 1e-12);
        let s: Vec<f64> = (0..n * n).map(|k| if k % (n + 1) == 0 { 1.0 } else { 0.0 }).collect();
        let inv = c.inverse();
        let tr: f64 = (0..n).map(|i| inv[i * n + i]).sum();
        assert_relative_eq!(trace_inv_product(&c, &s), tr, epsilon = 1e-12);
    }

    #[test]
    fn rejects_indefinite() {
        assert!(Cholesky::factor(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
    }
}
