//! Seeded random matrices and states.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg::{c64, CMat, ZERO};

pub fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Complex Hermitian matrix with E|A_ij|² = scale² off the diagonal and
/// real diagonal entries of variance scale².
pub fn random_hermitian<R: Rng + ?Sized>(n: usize, scale: f64, rng: &mut R) -> CMat {
    let mut a = CMat::zeros(n, n);
    let s = scale / std::f64::consts::SQRT_2;
    for j in 0..n {
        a[(j, j)] = c64::new(scale * gaussian(rng), 0.0);
        for i in 0..j {
            let z = c64::new(s * gaussian(rng), s * gaussian(rng));
            a[(i, j)] = z;
            a[(j, i)] = z.conj();
        }
    }
    a
}

/// Real symmetric matrix in the GOE convention: off-diagonal variance
/// `variance`, diagonal variance `2 * variance`.
pub fn goe_matrix<R: Rng + ?Sized>(n: usize, variance: f64, rng: &mut R) -> CMat {
    let s = variance.sqrt();
    let mut a = CMat::zeros(n, n);
    for j in 0..n {
        a[(j, j)] = c64::new(std::f64::consts::SQRT_2 * s * gaussian(rng), 0.0);
        for i in 0..j {
            let x = c64::new(s * gaussian(rng), 0.0);
            a[(i, j)] = x;
            a[(j, i)] = x;
        }
    }
    a
}

/// Normalized state with i.i.d. complex Gaussian amplitudes.
pub fn random_state<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<c64> {
    let mut v: Vec<c64> = (0..n).map(|_| c64::new(gaussian(rng), gaussian(rng))).collect();
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    for z in &mut v {
        *z /= norm;
    }
    v
}

pub fn random_phase<R: Rng + ?Sized>(rng: &mut R) -> c64 {
    let th: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    c64::new(th.cos(), th.sin())
}

/// Random density matrix of full rank, built as W W† / tr.
pub fn random_density_matrix<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMat {
    let w = CMat::from_fn(n, n, |_, _| c64::new(gaussian(rng), gaussian(rng)));
    let mut rho = &w * w.adjoint();
    let tr: f64 = (0..n).map(|i| rho[(i, i)].re).sum();
    for j in 0..n {
        for i in 0..n {
            rho[(i, j)] /= tr;
        }
    }
    crate::linalg::symmetrize(&mut rho);
    rho
}

pub fn zero_vec(n: usize) -> Vec<c64> {
    vec![ZERO; n]
}
