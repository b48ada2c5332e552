//! Shared helpers for unit tests.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian_rows<R: Rng + ?Sized>(rng: &mut R, n: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..d)
                .map(|_| {
                    let v: f64 = StandardNormal.sample(&mut *rng);
                    scale * v
                })
                .collect()
        })
        .collect()
}

pub fn uniform_rows<R: Rng + ?Sized>(rng: &mut R, n: usize, d: usize, bound: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-bound..=bound)).collect())
        .collect()
}

/// `βI + Σ xxᵀ`, built densely.
pub fn direct_design(rows: &[Vec<f64>], d: usize, beta: f64) -> DMatrix<f64> {
    let mut v = DMatrix::from_diagonal_element(d, d, beta);
    for r in rows {
        let x = DVector::from_column_slice(r);
        v += &x * x.transpose();
    }
    v
}

pub fn rel_frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}
