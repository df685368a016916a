#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use regntk::rng;
use regntk::PointSet;

pub fn sphere_points(m: usize, n0: usize, seed: u64) -> PointSet {
    let mut r = rng::stream(seed, 99);
    let pts = (0..m).map(|_| rng::normal_vec(&mut r, n0)).collect();
    PointSet::new(pts).unwrap().sphere_normalised().unwrap()
}

/// Random PSD matrix `A Aᵀ / k` with `k` columns, scaled to spectral radius ~1.
pub fn random_psd(m: usize, k: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng::stream(seed, 7);
    let a = DMatrix::from_fn(m, k, |_, _| rng::normal(&mut r));
    let g = &a * a.transpose() / k as f64;
    let top = g.clone().symmetric_eigenvalues().amax();
    g / top
}

pub fn random_vec(m: usize, seed: u64, stream: u64) -> DVector<f64> {
    let mut r = rng::stream(seed, stream);
    DVector::from_fn(m, |_, _| rng::normal(&mut r))
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

pub fn max_rel_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1e-300)
}
