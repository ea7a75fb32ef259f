//! Dense complex linear algebra on top of nalgebra.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// All eigenvalues of a square complex matrix (complex Schur form).
///
/// The QR sweep can stall on matrices with many repeated eigenvalues
/// (rotation-invariant grids give circulant blocks); the deflation
/// threshold is then relaxed step by step down to 1e-11.
pub fn eigenvalues(m: &CMat) -> Result<Vec<Complex64>> {
    for eps in [4.0 * f64::EPSILON, 1e-14, 1e-13, 1e-12, 1e-11] {
        if let Some(schur) = nalgebra::Schur::try_new(m.clone(), eps, 20_000) {
            let (_, t) = schur.unpack();
            return Ok((0..t.nrows()).map(|i| t[(i, i)]).collect());
        }
    }
    Err(Error::NoConvergence { iterations: 20_000, best: f64::NAN })
}

pub fn spectral_radius_dense(m: &CMat) -> Result<f64> {
    Ok(eigenvalues(m)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// LU factorization with a cheap singularity guard.
pub struct Lu {
    lu: nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl Lu {
    pub fn new(m: CMat) -> Result<Self> {
        let lu = m.lu();
        let u = lu.u();
        let max = (0..u.nrows()).map(|i| u[(i, i)].norm()).fold(0.0, f64::max);
        let min = (0..u.nrows()).map(|i| u[(i, i)].norm()).fold(f64::INFINITY, f64::min);
        if !(min > 1e-300) || min < 1e-15 * max {
            return Err(Error::Singular(format!("pivot ratio {:e}", min / max)));
        }
        Ok(Lu { lu })
    }

    pub fn solve(&self, b: &CVec) -> CVec {
        self.lu.solve(b).expect("factorization checked nonsingular")
    }

    pub fn solve_transpose(&self, b: &CVec) -> CVec {
        // (PLU)^T y = b
        let n = b.len();
        let l = self.lu.l();
        let u = self.lu.u();
        // U^T z = b
        let mut z = b.clone();
        for i in 0..n {
            let mut s = z[i];
            for k in 0..i {
                s -= u[(k, i)] * z[k];
            }
            z[i] = s / u[(i, i)];
        }
        // L^T w = z
        let mut w = z;
        for i in (0..n).rev() {
            let mut s = w[i];
            for k in i + 1..n {
                s -= l[(k, i)] * w[k];
            }
            w[i] = s;
        }
        // P^T
        let p = self.lu.p();
        let mut out = w.clone();
        p.inv_permute_rows(&mut out);
        out
    }
}

/// Right and left eigenvectors for an eigenvalue estimate `mu` by inverse iteration.
pub fn eigvecs_near(m: &CMat, mu: Complex64) -> Result<(Complex64, CVec, CVec)> {
    let n = m.nrows();
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    let shift = mu + Complex64::new(1e-10 * scale, 1e-10 * scale);
    let a = m - CMat::identity(n, n) * shift;
    let lu = Lu::new(a)?;
    let mut x = CVec::from_element(n, c(1.0));
    let mut y = CVec::from_element(n, c(1.0));
    for _ in 0..6 {
        x = lu.solve(&x);
        let nx = x.norm();
        x /= c(nx);
        y = lu.solve_transpose(&y);
        let ny = y.norm();
        y /= c(ny);
    }
    // Rayleigh quotient refinement of the eigenvalue
    let mx = m * &x;
    let nu = x.dotc(&mx) / x.dotc(&x);
    Ok((nu, x, y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one() {
        let m = CMat::from_element(1, 1, c(0.5));
        assert!((spectral_radius_dense(&m).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn transpose_solve() {
        let m = CMat::from_fn(4, 4, |i, j| Complex64::new((i * 3 + j) as f64 % 5.0 + if i == j { 4.0 } else { 0.0 }, 0.1 * j as f64));
        let lu = Lu::new(m.clone()).unwrap();
        let b = CVec::from_fn(4, |i, _| Complex64::new(i as f64, 1.0));
        let y = lu.solve_transpose(&b);
        let r = m.transpose() * y - b;
        assert!(r.norm() < 1e-12);
    }

    #[test]
    fn eigvecs_of_triangular() {
        let m = CMat::from_row_slice(2, 2, &[c(2.0), c(1.0), c(0.0), c(0.5)]);
        let (nu, x, y) = eigvecs_near(&m, c(2.0)).unwrap();
        assert!((nu - c(2.0)).norm() < 1e-12);
        assert!((&m * &x - &x * nu).norm() < 1e-9);
        assert!((m.transpose() * &y - &y * nu).norm() < 1e-9);
    }
}
