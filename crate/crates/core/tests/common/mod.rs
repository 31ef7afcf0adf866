#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;
use sideband_steer::operators::StateVector;

/// Dense `exp(A)` by Taylor series with scaling and squaring.
pub fn expm(a: &DMatrix<C64>) -> DMatrix<C64> {
    let n = a.nrows();
    let norm = a.iter().map(|z| z.norm()).sum::<f64>().max(1e-300);
    let squarings = (norm / 0.25).log2().ceil().max(0.0) as i32;
    let scaled = a / C64::new(2f64.powi(squarings), 0.0);
    let mut term = DMatrix::<C64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..=24 {
        term = &term * &scaled / C64::new(k as f64, 0.0);
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Eigenvalues of a Hermitian `H`, via its real symmetric embedding
/// `[[Re H, −Im H], [Im H, Re H]]` (each eigenvalue appears twice).
pub fn hermitian_eigenvalues(h: &DMatrix<C64>) -> Vec<f64> {
    let n = h.nrows();
    let mut r = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = h[(i, j)];
            r[(i, j)] = z.re;
            r[(i + n, j + n)] = z.re;
            r[(i, j + n)] = -z.im;
            r[(i + n, j)] = z.im;
        }
    }
    let mut ev: Vec<f64> = r.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev.into_iter().step_by(2).collect()
}

/// Moduli of the eigenvalues of a skew-Hermitian `A`.
pub fn skew_spectrum_moduli(a: &DMatrix<C64>) -> Vec<f64> {
    let h = a * C64::new(0.0, 1.0);
    hermitian_eigenvalues(&h).into_iter().map(f64::abs).collect()
}

pub fn haar_state<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> StateVector {
    let v: Vec<C64> = (0..dim)
        .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    StateVector::new(v).normalized()
}

pub fn random_skew<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DMatrix<C64> {
    let g = DMatrix::<C64>::from_fn(dim, dim, |_, _| {
        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    (&g - g.adjoint()) * C64::new(0.5, 0.0)
}

pub fn random_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DMatrix<C64> {
    expm(&random_skew(dim, rng))
}

pub fn spectral_norm(a: &DMatrix<C64>) -> f64 {
    a.clone().singular_values().max()
}

pub fn apply(a: &DMatrix<C64>, x: &StateVector) -> StateVector {
    let v: DVector<C64> = a * x.to_dvector();
    StateVector::new(v.iter().copied().collect())
}

/// Whether `√a/√b` is rational, by searching `p/q` with `q ≤ 1000`.
pub fn brute_resonant(a: u64, b: u64) -> bool {
    if a == 0 || b == 0 {
        return a == b;
    }
    let r = (a as f64 / b as f64).sqrt();
    (1..=1000u64).any(|q| {
        let p = (r * q as f64).round() as u64;
        p > 0 && a * q * q == b * p * p
    })
}

/// Resonance classes of `√0, …, √(m−2)` by brute force, as radicand lists
/// in order of first appearance.
pub fn brute_partition(m: usize) -> Vec<Vec<u64>> {
    let mut classes: Vec<Vec<u64>> = Vec::new();
    for r in 0..(m as u64 - 1) {
        match classes.iter_mut().find(|c| brute_resonant(c[0], r)) {
            Some(c) => c.push(r),
            None => classes.push(vec![r]),
        }
    }
    classes
}
